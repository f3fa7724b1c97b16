#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmfuse/error.hpp"
#include "mmfuse/preprocess.hpp"

namespace mmfuse {

/// Malformed or unknown configuration; maps to the usage exit code.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct DatasetSection {
  std::size_t eyes_per_class = 56;
  std::size_t side = 64;
  std::size_t oct_per_eye = 2;
  std::size_t test_eyes_per_class = 8;
  std::size_t val_eyes_per_class = 8;
  double clahe_clip_limit = 2.0;
  std::size_t clahe_tiles = 8;
};

struct ModelSection {
  std::size_t input_side = 64;
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::vector<std::size_t> blocks{2, 2, 2, 2};
  std::size_t stem_kernel = 7;
};

struct TrainSection {
  std::size_t epochs = 30;           // single-modal runs and fine-tuning
  std::size_t pretrain_epochs = 30;  // stage 1 of two-stage training
  double learning_rate = 0.01;
  std::vector<double> lr_decay_at{0.6, 0.85};
  double lr_decay_factor = 0.1;
  std::size_t batch_size = 8;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t validate_every = 1;
  bool augment = true;
  AugmentParams augmentation{};
  bool ablation = false;
};

struct GanSection {
  std::size_t p = 100;
  std::size_t q = 50;
  std::size_t coarse_side = 32;
  std::size_t full_side = 64;
  std::size_t ngf = 8;
  std::size_t ndf = 8;
  std::size_t coarse_res_blocks = 4;
  std::size_t main_res_blocks = 2;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double feature_matching_weight = 10.0;
  double flip_probability = 0.5;
  double crop_fraction = 0.9;
  std::size_t per_source = 3;
};

struct EvalSection {
  std::size_t runs = 3;
};

struct SeedsSection {
  std::uint64_t global = 0;
};

/// Every section and key is optional; unknown keys are rejected.
struct CliConfig {
  DatasetSection dataset;
  ModelSection model;
  TrainSection train;
  GanSection gan;
  EvalSection eval;
  SeedsSection seeds;
};

CliConfig parse_config(const std::string& json_text, const std::string& source = "config");
CliConfig load_config(const std::filesystem::path& path);
/// Full configuration with every default spelled out.
std::string config_to_json(const CliConfig& config);

}  // namespace mmfuse
