#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmfuse/checkpoint.hpp"
#include "mmfuse/config.hpp"
#include "mmfuse/gan.hpp"
#include "mmfuse/synth_bench.hpp"
#include "mmfuse/trainer.hpp"

// Wiring shared by the command-line tool and the end-to-end checks.
namespace mmfuse {

using Logger = std::function<void(const std::string&)>;

SynthSpec synth_spec(const CliConfig& config);
SplitSpec split_spec(const CliConfig& config, std::uint64_t seed);
BackboneConfig backbone_config(const CliConfig& config);
InputBuilder::Options input_options(const CliConfig& config, std::uint64_t seed);
RunConfig single_run_config(const CliConfig& config, Modality modality, std::uint64_t seed);
RunConfig mm_run_config(const CliConfig& config, Stage stage, std::uint64_t seed);
GanConfig gan_config(const CliConfig& config, Modality modality);
GanSchedule gan_schedule(const CliConfig& config);

/// Model description stored next to checkpoint tensors.
CheckpointMeta classifier_meta(const BackboneConfig& backbone, ModelKind kind);
BackboneConfig backbone_from_meta(const CheckpointMeta& meta);
ModelKind kind_from_meta(const CheckpointMeta& meta);
CheckpointMeta gan_meta(const GanConfig& config, const GanSchedule& schedule, Modality modality, CamRange range);
GanConfig gan_config_from_meta(const CheckpointMeta& meta);
CamRange cam_range_from_meta(const CheckpointMeta& meta);
Modality modality_from_meta(const CheckpointMeta& meta);

/// Ground-truth-class CAM of one eval-mode classifier pass.
CamMap classifier_cam(SingleCnn<float>& classifier, const Tensor<float>& input, AmdClass label, Modality modality);

/// Conditions and targets for every real training image of `modality`, plus
/// the CAM value range they were scaled with.
struct GanData {
  std::vector<GanExample> examples;
  CamRange range;
};
GanData build_gan_data(SingleCnn<float>& classifier, InputBuilder& inputs, const Manifest& train, Modality modality,
                       std::size_t full_side);

/// Target image as the GAN sees it: stored pixels resized to `side` and mapped
/// to [-1,1], [c,side,side], one channel for OCT. No CLAHE or median filter.
Tensor<float> gan_target(InputBuilder& inputs, const ImageRecord& record, std::size_t side);

/// `per_source` synthetic images per abnormal real training record. Variant k
/// conditions on the CAM of the source augmented with (seed, epoch = k + 1,
/// sample_id = source position). Images are registered with `store`; records
/// get provenance synthetic and paths under `path_prefix`.
Manifest generate_synthetic(const GanPair& gan, SingleCnn<float>& classifier, InputBuilder& inputs,
                            const Manifest& train, Modality modality, CamRange range, std::size_t full_side,
                            std::size_t per_source, std::uint64_t seed, ImageStore& store,
                            const std::string& path_prefix = "synthetic/");

/// Everything one in-memory experiment needs.
struct Workspace {
  CliConfig config;
  std::uint64_t seed = 0;
  SynthCorpus corpus;
  DatasetSplit split;
  ImageStore store;
};

Workspace make_workspace(const CliConfig& config, std::uint64_t seed);

struct FusionRun {
  MetricsReport cfp;
  MetricsReport oct;
  MetricsReport mm;
};

/// Trains the two single-modal CNNs and a fine-tune-only MM-CNN on the real
/// data of one workspace and evaluates all three on its test split.
FusionRun run_fusion(Workspace& ws, const Logger& log = {});

struct TwoStageRun {
  MetricsReport finetune_only;
  MetricsReport two_stage;
  std::size_t synthetic_records = 0;
  std::size_t pretrain_batches = 0;
  std::size_t finetune_batches = 0;
  std::vector<GanEpochLog> gan_log_cfp;
  std::vector<GanEpochLog> gan_log_oct;
};

/// Single-modal classifiers -> CAM-conditioned GANs -> synthetic records ->
/// two-stage MM-CNN, compared against fine-tune-only training from the same seed.
TwoStageRun run_two_stage(Workspace& ws, const Logger& log = {});

}  // namespace mmfuse
