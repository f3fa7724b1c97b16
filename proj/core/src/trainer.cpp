#include "mmfuse/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "mmfuse/error.hpp"
#include "mmfuse/ops.hpp"

namespace mmfuse {

namespace {

constexpr std::size_t kEvalBatch = 16;

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Single:
      return "single";
    case Stage::Pretrain:
      return "pretrain";
    default:
      return "finetune";
  }
}

std::vector<int> labels_of(const std::vector<const ImageRecord*>& records) {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto* r : records) out.push_back(class_index(r->label));
  return out;
}

SgdState<float> make_sgd(const RunConfig& c) {
  SgdState<float> s;
  s.learning_rate = static_cast<float>(c.learning_rate);
  s.momentum = static_cast<float>(c.momentum);
  s.weight_decay = static_cast<float>(c.weight_decay);
  return s;
}

std::size_t count_real(const Manifest& m, std::optional<Modality> modality = {}) {
  std::size_t n = 0;
  for (const auto& r : m) {
    if (r.provenance == Provenance::Real && (!modality || r.modality == *modality)) ++n;
  }
  return n;
}

/// Runs the epoch loop shared by both model kinds. `step` performs one update
/// and returns the batch loss; `validate` scores the current weights.
template <typename Model>
TrainResult run_epochs(Model& model, const RunConfig& config, std::size_t steps_per_epoch, bool has_val,
                       const std::function<double(std::size_t, std::size_t, SgdState<float>&)>& step,
                       const std::function<MetricsReport()>& validate) {
  config.validate();
  TrainResult result;
  if (config.epochs == 0) return result;
  auto sgd = make_sgd(config);
  auto params = model.parameters();
  nn::Snapshot<float> best;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    sgd.learning_rate = static_cast<float>(config.learning_rate_at(epoch));
    model.set_training(true);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      model.zero_grad();
      const double loss = step(epoch, s, sgd);
      if (!std::isfinite(loss)) {
        throw Error(std::string(stage_name(config.stage)) + " training: non-finite loss at epoch " +
                    std::to_string(epoch) + ", step " + std::to_string(s));
      }
      sgd_step(std::span<Tensor<float>>(params), sgd);
      loss_sum += loss;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage_name(config.stage);
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, steps_per_epoch));
    const bool validate_now = epoch % config.validate_every == 0 || epoch == config.epochs;
    model.set_training(false);
    if (has_val && validate_now) {
      rec.validation = validate();
      if (rec.validation->macro_f1 > result.best_validation_f1) {
        result.best_validation_f1 = rec.validation->macro_f1;
        result.best_epoch = epoch;
        best = nn::snapshot(model);
      }
    } else if (!has_val) {
      result.best_epoch = epoch;
    }
    result.history.push_back(std::move(rec));
  }
  if (has_val && !best.empty()) nn::restore(model, best);
  model.set_training(false);
  return result;
}

}  // namespace

InputBuilder::InputBuilder(ImageStore& store, Options options) : store_(store), options_(std::move(options)) {
  expects(options_.side > 0, "input side must be positive");
  options_.augment.validate();
}

const RawImage& InputBuilder::prepared(const ImageRecord& record) {
  auto it = prepared_.find(record.image_id);
  if (it != prepared_.end()) return it->second;
  const RawImage& raw = store_.get(record);
  RawImage img = record.modality == Modality::Cfp ? preprocess_cfp(gray_to_rgb(raw), options_.clahe)
                                                  : gray_to_rgb(preprocess_oct(to_grayscale(raw)));
  img = resize_bilinear(img, options_.side, options_.side);
  return prepared_.emplace(record.image_id, std::move(img)).first->second;
}

Tensor<float> InputBuilder::image(const ImageRecord& record,
                                  std::optional<std::pair<std::uint64_t, std::uint64_t>> draw) {
  const RawImage& base = prepared(record);
  if (draw && options_.augment_enabled) {
    return normalize_pm1(augment(base, options_.augment, options_.seed, draw->first, draw->second));
  }
  return normalize_pm1(base);
}

Tensor<float> InputBuilder::batch(const std::vector<const ImageRecord*>& records, std::optional<std::uint64_t> epoch,
                                  std::uint64_t first_sample_id) {
  expects(!records.empty(), "cannot build an empty batch");
  const std::size_t s = options_.side, per = 3 * s * s;
  std::vector<float> out(records.size() * per);
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::optional<std::pair<std::uint64_t, std::uint64_t>> draw;
    if (epoch) draw = std::pair{*epoch, first_sample_id + i};
    auto t = image(*records[i], draw);
    std::copy(t.data().begin(), t.data().end(), out.begin() + static_cast<long>(i * per));
  }
  return Tensor<float>({records.size(), 3, s, s}, std::move(out));
}

void RunConfig::validate() const {
  expects(learning_rate > 0, "learning rate must be positive");
  expects(momentum >= 0 && momentum < 1, "momentum must be in [0,1)");
  expects(weight_decay >= 0, "weight decay must be non-negative");
  expects(batch_size > 0 && batch_size % kNumClasses == 0, "batch size must be a positive multiple of 4");
  expects(validate_every > 0, "validation cadence must be positive");
  expects(lr_decay_factor > 0, "learning-rate decay factor must be positive");
  for (double f : lr_decay_at) expects(f > 0 && f < 1, "learning-rate decay points must lie in (0,1)");
}

double RunConfig::learning_rate_at(std::size_t epoch) const {
  double lr = learning_rate;
  for (double f : lr_decay_at) {
    if (static_cast<double>(epoch) > f * static_cast<double>(epochs)) lr *= lr_decay_factor;
  }
  return lr;
}

std::string history_to_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "epoch,stage,split,loss,accuracy,macro_f1";
  for (auto c : kAllClasses) {
    const std::string n(class_name(c));
    os << ',' << n << "_sensitivity," << n << "_specificity," << n << "_f1";
  }
  os << '\n';
  for (const auto& r : history) {
    os << r.epoch << ',' << r.stage << ",train," << r.train_loss << ",,";
    for (std::size_t i = 0; i < 3 * kNumClasses; ++i) os << ',';
    os << '\n';
    if (r.validation) {
      const auto& v = *r.validation;
      os << r.epoch << ',' << r.stage << ",val,," << v.accuracy << ',' << v.macro_f1;
      for (const auto& m : v.per_class) os << ',' << m.sensitivity << ',' << m.specificity << ',' << m.f1;
      os << '\n';
    }
  }
  return os.str();
}

std::vector<int> predict_single(SingleCnn<float>& model, InputBuilder& inputs,
                                const std::vector<const ImageRecord*>& records) {
  NoGradGuard no_grad;
  model.set_training(false);
  std::vector<int> out;
  for (std::size_t i = 0; i < records.size(); i += kEvalBatch) {
    std::vector<const ImageRecord*> chunk(records.begin() + static_cast<long>(i),
                                          records.begin() + static_cast<long>(std::min(records.size(), i + kEvalBatch)));
    auto pred = predict(model.forward(inputs.batch(chunk)).logits);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

MetricsReport evaluate_single(SingleCnn<float>& model, InputBuilder& inputs, const Manifest& test, Modality modality) {
  std::vector<const ImageRecord*> items;
  for (const auto& r : test) {
    if (r.modality == modality) items.push_back(&r);
  }
  if (items.empty()) throw Error("evaluation on an empty test set");
  const auto pred = predict_single(model, inputs, items);
  const auto truth = labels_of(items);
  return evaluate_predictions(truth, pred);
}

MetricsReport evaluate_mm(MmCnn<float>& model, InputBuilder& inputs, const Manifest& test) {
  const auto pairs = same_eye_pairs(test);
  if (pairs.empty()) throw Error("evaluation on an empty test set");
  NoGradGuard no_grad;
  model.set_training(false);
  std::vector<int> truth, pred;
  for (std::size_t i = 0; i < pairs.size(); i += kEvalBatch) {
    std::vector<const ImageRecord*> cfp, oct;
    for (std::size_t k = i; k < std::min(pairs.size(), i + kEvalBatch); ++k) {
      const auto& a = test[pairs[k].cfp];
      const auto& b = test[pairs[k].oct];
      expects(a.eye_id == b.eye_id, "evaluation pair mixes eyes " + a.eye_id + " and " + b.eye_id);
      cfp.push_back(&a);
      oct.push_back(&b);
      truth.push_back(class_index(pairs[k].label));
    }
    auto p = predict(model.forward(inputs.batch(cfp), inputs.batch(oct)).scores);
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return evaluate_predictions(truth, pred);
}

TrainResult train_single(SingleCnn<float>& model, InputBuilder& inputs, const Manifest& train, const Manifest& val,
                         const RunConfig& config) {
  expects(config.kind != ModelKind::Mm, "train_single needs a cfp or oct run");
  const Modality modality = config.kind == ModelKind::Cfp ? Modality::Cfp : Modality::Oct;
  const auto candidates = select(train, modality, Provenance::Real);
  if (candidates.empty()) throw Error("no real " + std::string(modality_name(modality)) + " training records");
  BalancedRecordBatcher batcher(train, candidates, config.batch_size, derive_seed({config.seed, 0x51u}));
  const std::size_t steps = (candidates.size() + config.batch_size - 1) / config.batch_size;
  const bool has_val = std::any_of(val.begin(), val.end(), [&](const ImageRecord& r) { return r.modality == modality; });
  return run_epochs(
      model, config, steps, has_val,
      [&](std::size_t epoch, std::size_t step, SgdState<float>&) {
        std::vector<const ImageRecord*> recs;
        for (auto i : batcher.next()) recs.push_back(&train[i]);
        auto x = inputs.batch(recs, epoch, step * config.batch_size);
        const auto labels = labels_of(recs);
        auto loss = ops::softmax_cross_entropy(model.forward(x).logits, std::span<const int>(labels));
        backward(loss);
        return static_cast<double>(loss.item());
      },
      [&] { return evaluate_single(model, inputs, val, modality); });
}

void check_provenance(Stage stage, const Manifest& records, const std::vector<LoosePair>& pairs) {
  for (const auto& p : pairs) {
    const auto& a = records.at(p.cfp);
    const auto& b = records.at(p.oct);
    expects(a.label == p.label && b.label == p.label, "loose pair crosses classes");
    expects(a.modality == Modality::Cfp && b.modality == Modality::Oct, "loose pair has the wrong modalities");
    const bool synthetic = a.provenance == Provenance::Synthetic || b.provenance == Provenance::Synthetic;
    if (stage == Stage::Pretrain) {
      expects(synthetic, "pretrain batch contains a real-real pair (" + a.image_id + ", " + b.image_id + ")");
    } else {
      expects(!synthetic, "finetune batch contains a synthetic image (" + a.image_id + ", " + b.image_id + ")");
    }
  }
}

TrainResult train_mm_stage(MmCnn<float>& model, InputBuilder& inputs, const Manifest& train, const Manifest& val,
                           const RunConfig& config, const BatchObserver& observer) {
  expects(config.kind == ModelKind::Mm, "train_mm_stage needs an mm run");
  expects(config.stage == Stage::Pretrain || config.stage == Stage::Finetune, "mm stage must be pretrain or finetune");
  const PairMode mode = config.stage == Stage::Pretrain ? PairMode::Pretrain : PairMode::Finetune;
  LoosePairSampler sampler(train, mode, derive_seed({config.seed, 0x33u}));
  Rng slot_rng(derive_seed({config.seed, 0x34u}));
  const std::size_t real = count_real(train);
  expects(real > 0, "mm training needs real records");
  const std::size_t steps = (real + config.batch_size - 1) / config.batch_size;
  const bool has_val = !same_eye_pairs(val).empty();
  return run_epochs(
      model, config, steps, has_val,
      [&](std::size_t epoch, std::size_t step, SgdState<float>&) {
        auto pairs = balanced_pair_batch(sampler, config.batch_size, slot_rng);
        check_provenance(config.stage, train, pairs);
        if (observer.on_mm_batch) observer.on_mm_batch(config.stage, train, pairs);
        std::vector<const ImageRecord*> cfp, oct;
        std::vector<int> labels;
        for (const auto& p : pairs) {
          cfp.push_back(&train[p.cfp]);
          oct.push_back(&train[p.oct]);
          labels.push_back(class_index(p.label));
        }
        // Two modalities of one draw get distinct sample ids.
        const std::uint64_t base = 2 * step * config.batch_size;
        auto out = model.forward(inputs.batch(cfp, epoch, base), inputs.batch(oct, epoch, base + config.batch_size));
        auto loss = ops::softmax_cross_entropy(out.scores, std::span<const int>(labels));
        backward(loss);
        return static_cast<double>(loss.item());
      },
      [&] { return evaluate_mm(model, inputs, val); });
}

TwoStageResult train_two_stage(MmCnn<float>& model, InputBuilder& inputs, const Manifest& train, const Manifest& val,
                               const RunConfig& pretrain, const RunConfig& finetune, const BatchObserver& observer) {
  expects(pretrain.stage == Stage::Pretrain && finetune.stage == Stage::Finetune,
          "two-stage training needs a pretrain and a finetune config");
  TwoStageResult result;
  const bool has_synthetic =
      std::any_of(train.begin(), train.end(), [](const ImageRecord& r) { return r.provenance == Provenance::Synthetic; });
  if (!has_synthetic) {
    if (!pretrain.ablation) throw Error("pretraining needs synthetic records; none are present");
    result.pretrain_skipped = true;
    if (observer.on_warning) observer.on_warning("no synthetic records: skipping the pretraining stage");
  } else {
    result.pretrain = train_mm_stage(model, inputs, train, val, pretrain, observer);
  }
  // Fresh optimizer state: run_epochs builds a new SgdState per stage.
  result.finetune = train_mm_stage(model, inputs, train, val, finetune, observer);
  return result;
}

}  // namespace mmfuse
