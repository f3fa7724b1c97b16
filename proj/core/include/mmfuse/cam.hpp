#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmfuse/image.hpp"
#include "mmfuse/models.hpp"
#include "mmfuse/types.hpp"

namespace mmfuse {

/// Class- and modality-specific activation grid. Cells sum to source_logit.
struct CamMap {
  int class_id = 0;
  Modality modality = Modality::Cfp;
  std::size_t side = 0;
  std::vector<double> grid;  // row-major side x side, raw (signed) values
  double source_logit = 0.0;

  double sum() const;
  double at(std::size_t x, std::size_t y) const { return grid[y * side + x]; }
  double min() const;
  double max() const;
};

/// grid(x,y) = (1/m^2) sum_i w_c[i] F[i,x,y]. features is [C,m,m] or [1,C,m,m];
/// source_logit is the GAP + linear score recomputed from the same inputs.
template <typename T>
CamMap compute_cam_single(const Tensor<T>& features, std::span<const T> w_c, int class_id,
                          Modality modality = Modality::Cfp);

/// Column `class_id` of rows [begin, end) of a [d,k] head weight.
template <typename T>
std::vector<T> head_column(const Tensor<T>& weight, int class_id, std::size_t begin, std::size_t end);

/// Splits the [2C,4] head into CFP rows [0,C) and OCT rows [C,2C).
template <typename T>
std::pair<CamMap, CamMap> compute_cam_mm(const Tensor<T>& cfp_features, const Tensor<T>& oct_features,
                                         const Tensor<T>& head_weight, int class_id);

/// Slice sample `index` of a batched [n,C,m,m] feature tensor.
template <typename T>
Tensor<T> sample_features(const Tensor<T>& batch, std::size_t index);

/// CAMs for sample `index` of a single-modal forward pass. The source logit is
/// the model's own output.
template <typename T>
CamMap cam_from_single(const SingleCnn<T>& model, const SingleOutput<T>& out, std::size_t index, int class_id,
                       Modality modality);

/// Multi-modal CAMs for sample `index`; source logits are s_f and s_o.
template <typename T>
std::pair<CamMap, CamMap> cam_from_mm(const MmCnn<T>& model, const MmOutput<T>& out, std::size_t index, int class_id);

/// Blue-to-red colormap, t in [0,1].
std::array<double, 3> jet(double t);

/// Min-max normalized, upsampled CAM blended (alpha 0.5) over the grayscale
/// image. Output [3,h,w] in [0,1]. A constant CAM renders as the mid color.
Tensor<float> render_overlay_unit(const RawImage& image, const CamMap& cam, double alpha = 0.5);
RawImage render_overlay(const RawImage& image, const CamMap& cam, double alpha = 0.5);

/// Raw grid as CSV, one row per line.
std::string cam_to_csv(const CamMap& cam);

/// Raw grid bilinearly upsampled to side x side.
std::vector<double> upsample_cam(const CamMap& cam, std::size_t side);

}  // namespace mmfuse
