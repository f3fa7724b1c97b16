#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/models.hpp"
#include "mmfuse/optim.hpp"
#include "mmfuse/preprocess.hpp"

namespace mmfuse {

/// Turns records into network inputs: modality-specific preprocessing (CLAHE
/// for CFP, median filter for OCT), resize to the model side, grayscale to
/// RGB, optional augmentation, then [-1,1] normalization.
class InputBuilder {
 public:
  struct Options {
    std::size_t side = 64;
    ClaheParams clahe{};
    AugmentParams augment{};
    bool augment_enabled = true;
    std::uint64_t seed = 0;
  };

  InputBuilder(ImageStore& store, Options options);

  /// Preprocessed 8-bit image at model side, 3 channels.
  const RawImage& prepared(const ImageRecord& record);

  /// [3,s,s]. With `draw` = (epoch, sample_id) the image is augmented.
  Tensor<float> image(const ImageRecord& record, std::optional<std::pair<std::uint64_t, std::uint64_t>> draw = {});

  /// Stacks image() results into [n,3,s,s]. Augmented when `epoch` is set,
  /// with sample_id = first_sample_id + position.
  Tensor<float> batch(const std::vector<const ImageRecord*>& records, std::optional<std::uint64_t> epoch = {},
                      std::uint64_t first_sample_id = 0);

  const Options& options() const { return options_; }
  ImageStore& store() { return store_; }

 private:
  ImageStore& store_;
  Options options_;
  std::map<std::string, RawImage> prepared_;
};

enum class ModelKind { Cfp, Oct, Mm };
enum class Stage { Single, Pretrain, Finetune };

struct RunConfig {
  ModelKind kind = ModelKind::Mm;
  Stage stage = Stage::Single;
  std::size_t epochs = 30;
  double learning_rate = 0.01;
  std::vector<double> lr_decay_at{0.6, 0.85};  // fractions of the epoch budget
  double lr_decay_factor = 0.1;
  std::size_t batch_size = 8;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  std::size_t validate_every = 1;
  /// Finetune from a fresh model instead of a pretrained one.
  bool ablation = false;

  void validate() const;
  /// Learning rate for a 1-based epoch.
  double learning_rate_at(std::size_t epoch) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string stage;
  double train_loss = 0.0;
  std::optional<MetricsReport> validation;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double best_validation_f1 = -1.0;
  std::size_t best_epoch = 0;  // 0: initial weights
};

/// epoch,stage,split,loss,accuracy,macro_f1 then per-class sensitivity, specificity, f1.
std::string history_to_csv(const std::vector<EpochRecord>& history);

/// Observes every training batch; records are indices into the manifest being trained on.
struct BatchObserver {
  std::function<void(Stage, const Manifest&, const std::vector<LoosePair>&)> on_mm_batch;
  std::function<void(const std::string&)> on_warning;
};

/// Single-modal training with class-balanced batches over the real records of
/// `config.kind`'s modality. Keeps the weights with the best validation macro-F1.
TrainResult train_single(SingleCnn<float>& model, InputBuilder& inputs, const Manifest& train, const Manifest& val,
                         const RunConfig& config);

/// One stage of fused training over balanced batches of loose pairs. An epoch
/// is as many draws as there are real training records. Asserts the stage's
/// provenance contract for every pair.
TrainResult train_mm_stage(MmCnn<float>& model, InputBuilder& inputs, const Manifest& train, const Manifest& val,
                           const RunConfig& config, const BatchObserver& observer = {});

struct TwoStageResult {
  TrainResult pretrain;
  TrainResult finetune;
  bool pretrain_skipped = false;
};

/// Pretraining on pairs with a synthetic endpoint, then fine-tuning on
/// real-real pairs with a fresh optimizer state. Without synthetic records
/// this throws unless `config.ablation` is set, in which case stage 1 is skipped
/// with a warning.
TwoStageResult train_two_stage(MmCnn<float>& model, InputBuilder& inputs, const Manifest& train, const Manifest& val,
                               const RunConfig& pretrain, const RunConfig& finetune,
                               const BatchObserver& observer = {});

/// Throws ContractViolation if any pair breaks the stage's provenance rule.
void check_provenance(Stage stage, const Manifest& records, const std::vector<LoosePair>& pairs);

MetricsReport evaluate_single(SingleCnn<float>& model, InputBuilder& inputs, const Manifest& test, Modality modality);

/// Evaluates on true same-eye pairs only.
MetricsReport evaluate_mm(MmCnn<float>& model, InputBuilder& inputs, const Manifest& test);

std::vector<int> predict_single(SingleCnn<float>& model, InputBuilder& inputs,
                                const std::vector<const ImageRecord*>& records);

}  // namespace mmfuse
