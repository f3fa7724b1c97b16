#include "mmfuse/cam.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "mmfuse/error.hpp"
#include "mmfuse/ops.hpp"

namespace mmfuse {

double CamMap::sum() const {
  double s = 0.0;
  for (double v : grid) s += v;
  return s;
}

double CamMap::min() const { return grid.empty() ? 0.0 : *std::min_element(grid.begin(), grid.end()); }
double CamMap::max() const { return grid.empty() ? 0.0 : *std::max_element(grid.begin(), grid.end()); }

template <typename T>
CamMap compute_cam_single(const Tensor<T>& features, std::span<const T> w_c, int class_id, Modality modality) {
  const auto& s = features.shape();
  expects((s.size() == 3 || (s.size() == 4 && s[0] == 1)) && s[s.size() - 1] == s[s.size() - 2],
          "cam: expected [C,m,m] features, got " + shape_str(s));
  const std::size_t c = s[s.size() - 3], m = s[s.size() - 1], mm = m * m;
  expects(w_c.size() == c, "cam: weight length " + std::to_string(w_c.size()) + " does not match " +
                               std::to_string(c) + " feature maps");
  CamMap cam;
  cam.class_id = class_id;
  cam.modality = modality;
  cam.side = m;
  cam.grid.assign(mm, 0.0);
  auto f = features.data();
  const double inv = 1.0 / static_cast<double>(mm);
  double logit = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    const double w = static_cast<double>(w_c[i]) * inv;
    double gap = 0.0;
    for (std::size_t p = 0; p < mm; ++p) {
      const double v = static_cast<double>(f[i * mm + p]);
      cam.grid[p] += w * v;
      gap += v;
    }
    logit += static_cast<double>(w_c[i]) * gap * inv;
  }
  cam.source_logit = logit;
  return cam;
}

template <typename T>
std::vector<T> head_column(const Tensor<T>& weight, int class_id, std::size_t begin, std::size_t end) {
  expects(weight.rank() == 2 && end <= weight.dim(0) && begin <= end, "head_column: bad row range");
  expects(class_id >= 0 && static_cast<std::size_t>(class_id) < weight.dim(1), "head_column: class out of range");
  const std::size_t k = weight.dim(1);
  std::vector<T> col(end - begin);
  auto w = weight.data();
  for (std::size_t r = begin; r < end; ++r) col[r - begin] = w[r * k + static_cast<std::size_t>(class_id)];
  return col;
}

template <typename T>
std::pair<CamMap, CamMap> compute_cam_mm(const Tensor<T>& cfp_features, const Tensor<T>& oct_features,
                                         const Tensor<T>& head_weight, int class_id) {
  const std::size_t c = cfp_features.dim(cfp_features.rank() - 3);
  expects(head_weight.rank() == 2 && head_weight.dim(0) == 2 * c,
          "cam: head weight must have 2C rows, got " + shape_str(head_weight.shape()));
  const auto w_f = head_column(head_weight, class_id, 0, c);
  const auto w_o = head_column(head_weight, class_id, c, 2 * c);
  return {compute_cam_single<T>(cfp_features, w_f, class_id, Modality::Cfp),
          compute_cam_single<T>(oct_features, w_o, class_id, Modality::Oct)};
}

template <typename T>
Tensor<T> sample_features(const Tensor<T>& batch, std::size_t index) {
  expects(batch.rank() == 4 && index < batch.dim(0), "sample_features: index out of range");
  const std::size_t per = batch.numel() / batch.dim(0);
  auto d = batch.data();
  return Tensor<T>({batch.dim(1), batch.dim(2), batch.dim(3)},
                   std::vector<T>(d.begin() + static_cast<long>(index * per), d.begin() + static_cast<long>((index + 1) * per)));
}

template <typename T>
CamMap cam_from_single(const SingleCnn<T>& model, const SingleOutput<T>& out, std::size_t index, int class_id,
                       Modality modality) {
  const std::size_t c = model.head.weight.dim(0);
  auto cam = compute_cam_single<T>(sample_features(out.features, index), head_column(model.head.weight, class_id, 0, c),
                                   class_id, modality);
  cam.source_logit = out.logits.data()[index * kNumClasses + static_cast<std::size_t>(class_id)];
  return cam;
}

template <typename T>
std::pair<CamMap, CamMap> cam_from_mm(const MmCnn<T>& model, const MmOutput<T>& out, std::size_t index, int class_id) {
  auto cams = compute_cam_mm(sample_features(out.cfp_features, index), sample_features(out.oct_features, index),
                             model.head.weight, class_id);
  const std::size_t at = index * kNumClasses + static_cast<std::size_t>(class_id);
  cams.first.source_logit = out.cfp_scores.data()[at];
  cams.second.source_logit = out.oct_scores.data()[at];
  return cams;
}

std::array<double, 3> jet(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto ramp = [t](double center) { return std::clamp(1.5 - std::abs(4.0 * t - center), 0.0, 1.0); };
  return {ramp(3.0), ramp(2.0), ramp(1.0)};
}

std::vector<double> upsample_cam(const CamMap& cam, std::size_t side) {
  expects(cam.side > 0 && cam.grid.size() == cam.side * cam.side, "upsample_cam: malformed grid");
  NoGradGuard no_grad;
  Tensor<double> g({1, cam.side, cam.side}, cam.grid);
  auto up = ops::bilinear_resize(g, side, side).data();
  return {up.begin(), up.end()};
}

Tensor<float> render_overlay_unit(const RawImage& image, const CamMap& cam, double alpha) {
  expects(!image.empty(), "render_overlay: empty image");
  expects(alpha >= 0.0 && alpha <= 1.0, "render_overlay: alpha must be in [0,1]");
  const std::size_t w = image.width, h = image.height, hw = w * h;
  NoGradGuard no_grad;
  const double lo = cam.min(), hi = cam.max();
  std::vector<double> unit(cam.grid.size(), 0.5);
  if (hi > lo && std::isfinite(hi - lo)) {
    for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = (cam.grid[i] - lo) / (hi - lo);
  }
  Tensor<double> g({1, cam.side, cam.side}, std::move(unit));
  auto up = ops::bilinear_resize(g, h, w);
  auto u = up.data();
  const auto gray = to_grayscale(image);
  std::vector<float> out(3 * hw);
  for (std::size_t p = 0; p < hw; ++p) {
    const auto color = jet(u[p]);
    const double base = gray.pixels[p] / 255.0;
    for (std::size_t c = 0; c < 3; ++c) {
      out[c * hw + p] = static_cast<float>(std::clamp((1.0 - alpha) * base + alpha * color[c], 0.0, 1.0));
    }
  }
  return Tensor<float>({3, h, w}, std::move(out));
}

RawImage render_overlay(const RawImage& image, const CamMap& cam, double alpha) {
  return unit_to_image(render_overlay_unit(image, cam, alpha));
}

std::string cam_to_csv(const CamMap& cam) {
  std::ostringstream os;
  os << std::setprecision(9);
  for (std::size_t y = 0; y < cam.side; ++y) {
    for (std::size_t x = 0; x < cam.side; ++x) {
      if (x) os << ',';
      os << cam.at(x, y);
    }
    os << '\n';
  }
  return os.str();
}

#define MMFUSE_INSTANTIATE_CAM(T)                                                                                   \
  template CamMap compute_cam_single<T>(const Tensor<T>&, std::span<const T>, int, Modality);                       \
  template std::vector<T> head_column<T>(const Tensor<T>&, int, std::size_t, std::size_t);                          \
  template std::pair<CamMap, CamMap> compute_cam_mm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);  \
  template Tensor<T> sample_features<T>(const Tensor<T>&, std::size_t);                                             \
  template CamMap cam_from_single<T>(const SingleCnn<T>&, const SingleOutput<T>&, std::size_t, int, Modality);      \
  template std::pair<CamMap, CamMap> cam_from_mm<T>(const MmCnn<T>&, const MmOutput<T>&, std::size_t, int);

MMFUSE_INSTANTIATE_CAM(float)
MMFUSE_INSTANTIATE_CAM(double)

}  // namespace mmfuse
