#include "mmfuse/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>
#include <sstream>

#include "mmfuse/error.hpp"
#include "mmfuse/ops.hpp"

namespace mmfuse {

namespace {

// Seed streams for the independent pieces of one experiment.
enum SeedStream : std::uint64_t {
  kCfpInit = 11,
  kOctInit = 12,
  kMmInit = 13,
  kCfpTrain = 21,
  kOctTrain = 22,
  kMmPretrain = 23,
  kMmFinetune = 24,
  kCfpGan = 31,
  kOctGan = 32,
  kCfpGenerate = 41,
  kOctGenerate = 42,
  kInputs = 51,
};

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  return out;
}

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::string& need(const CheckpointMeta& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw Error("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

std::size_t need_size(const CheckpointMeta& meta, const std::string& key) { return std::stoull(need(meta, key)); }

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

}  // namespace

SynthSpec synth_spec(const CliConfig& c) {
  return {c.dataset.eyes_per_class, c.dataset.side, c.dataset.oct_per_eye};
}

SplitSpec split_spec(const CliConfig& c, std::uint64_t seed) {
  return {c.dataset.test_eyes_per_class, c.dataset.val_eyes_per_class, seed};
}

BackboneConfig backbone_config(const CliConfig& c) {
  BackboneConfig b;
  b.input_side = c.model.input_side;
  b.widths = c.model.widths;
  b.blocks = c.model.blocks;
  b.stem_kernel = c.model.stem_kernel;
  try {
    b.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return b;
}

InputBuilder::Options input_options(const CliConfig& c, std::uint64_t seed) {
  InputBuilder::Options o;
  o.side = c.model.input_side;
  o.clahe = {c.dataset.clahe_clip_limit, c.dataset.clahe_tiles, c.dataset.clahe_tiles};
  o.augment = c.train.augmentation;
  o.augment_enabled = c.train.augment;
  o.seed = derive_seed({seed, kInputs});
  return o;
}

namespace {
RunConfig base_run(const CliConfig& c) {
  RunConfig r;
  r.learning_rate = c.train.learning_rate;
  r.lr_decay_at = c.train.lr_decay_at;
  r.lr_decay_factor = c.train.lr_decay_factor;
  r.batch_size = c.train.batch_size;
  r.momentum = c.train.momentum;
  r.weight_decay = c.train.weight_decay;
  r.validate_every = c.train.validate_every;
  r.ablation = c.train.ablation;
  return r;
}
}  // namespace

RunConfig single_run_config(const CliConfig& c, Modality modality, std::uint64_t seed) {
  auto r = base_run(c);
  r.kind = modality == Modality::Cfp ? ModelKind::Cfp : ModelKind::Oct;
  r.stage = Stage::Single;
  r.epochs = c.train.epochs;
  r.seed = derive_seed({seed, modality == Modality::Cfp ? kCfpTrain : kOctTrain});
  return r;
}

RunConfig mm_run_config(const CliConfig& c, Stage stage, std::uint64_t seed) {
  auto r = base_run(c);
  r.kind = ModelKind::Mm;
  r.stage = stage;
  r.epochs = stage == Stage::Pretrain ? c.train.pretrain_epochs : c.train.epochs;
  r.seed = derive_seed({seed, stage == Stage::Pretrain ? kMmPretrain : kMmFinetune});
  return r;
}

GanConfig gan_config(const CliConfig& c, Modality modality) {
  GanConfig g;
  g.image_channels = modality == Modality::Cfp ? 3 : 1;
  g.ngf = c.gan.ngf;
  g.ndf = c.gan.ndf;
  g.coarse_res_blocks = c.gan.coarse_res_blocks;
  g.main_res_blocks = c.gan.main_res_blocks;
  g.learning_rate = c.gan.learning_rate;
  g.beta1 = c.gan.beta1;
  g.feature_matching_weight = c.gan.feature_matching_weight;
  g.flip_probability = c.gan.flip_probability;
  g.crop_fraction = c.gan.crop_fraction;
  return g;
}

GanSchedule gan_schedule(const CliConfig& c) { return {c.gan.p, c.gan.q, c.gan.coarse_side, c.gan.full_side}; }

CheckpointMeta classifier_meta(const BackboneConfig& b, ModelKind kind) {
  return {{"model", kind == ModelKind::Mm ? "mm-cnn" : kind == ModelKind::Cfp ? "cfp-cnn" : "oct-cnn"},
          {"input_side", std::to_string(b.input_side)},
          {"widths", join_sizes(b.widths)},
          {"blocks", join_sizes(b.blocks)},
          {"stem_kernel", std::to_string(b.stem_kernel)}};
}

BackboneConfig backbone_from_meta(const CheckpointMeta& meta) {
  BackboneConfig b;
  b.input_side = need_size(meta, "input_side");
  b.widths = parse_sizes(need(meta, "widths"));
  b.blocks = parse_sizes(need(meta, "blocks"));
  b.stem_kernel = need_size(meta, "stem_kernel");
  b.validate();
  return b;
}

ModelKind kind_from_meta(const CheckpointMeta& meta) {
  const auto& m = need(meta, "model");
  if (m == "mm-cnn") return ModelKind::Mm;
  if (m == "cfp-cnn") return ModelKind::Cfp;
  if (m == "oct-cnn") return ModelKind::Oct;
  throw Error("checkpoint holds '" + m + "', not a classifier");
}

CheckpointMeta gan_meta(const GanConfig& g, const GanSchedule& s, Modality modality, CamRange range) {
  return {{"model", "gan"},
          {"modality", std::string(modality_name(modality))},
          {"image_channels", std::to_string(g.image_channels)},
          {"ngf", std::to_string(g.ngf)},
          {"ndf", std::to_string(g.ndf)},
          {"coarse_res_blocks", std::to_string(g.coarse_res_blocks)},
          {"main_res_blocks", std::to_string(g.main_res_blocks)},
          {"coarse_side", std::to_string(s.coarse_side)},
          {"full_side", std::to_string(s.full_side)},
          {"cam_lo", exact(range.lo)},
          {"cam_hi", exact(range.hi)}};
}

GanConfig gan_config_from_meta(const CheckpointMeta& meta) {
  if (need(meta, "model") != "gan") throw Error("checkpoint does not hold a GAN");
  GanConfig g;
  g.image_channels = need_size(meta, "image_channels");
  g.ngf = need_size(meta, "ngf");
  g.ndf = need_size(meta, "ndf");
  g.coarse_res_blocks = need_size(meta, "coarse_res_blocks");
  g.main_res_blocks = need_size(meta, "main_res_blocks");
  return g;
}

CamRange cam_range_from_meta(const CheckpointMeta& meta) {
  return {std::stod(need(meta, "cam_lo")), std::stod(need(meta, "cam_hi"))};
}

Modality modality_from_meta(const CheckpointMeta& meta) {
  const auto m = parse_modality(need(meta, "modality"));
  if (!m) throw Error("checkpoint has an unknown modality");
  return *m;
}

CamMap classifier_cam(SingleCnn<float>& classifier, const Tensor<float>& input, AmdClass label, Modality modality) {
  NoGradGuard no_grad;
  classifier.set_training(false);
  auto x = ops::reshape(input, {1, input.dim(0), input.dim(1), input.dim(2)});
  auto out = classifier.forward(x);
  return cam_from_single(classifier, out, 0, class_index(label), modality);
}

Tensor<float> gan_target(InputBuilder& inputs, const ImageRecord& record, std::size_t side) {
  RawImage raw = inputs.store().get(record);
  raw = record.modality == Modality::Cfp ? gray_to_rgb(raw) : to_grayscale(raw);
  return normalize_pm1(resize_bilinear(raw, side, side));
}

GanData build_gan_data(SingleCnn<float>& classifier, InputBuilder& inputs, const Manifest& train, Modality modality,
                       std::size_t full_side) {
  std::vector<CamMap> cams;
  std::vector<const ImageRecord*> sources;
  for (const auto& r : train) {
    if (r.modality != modality || r.provenance != Provenance::Real) continue;
    cams.push_back(classifier_cam(classifier, inputs.image(r), r.label, modality));
    sources.push_back(&r);
  }
  if (sources.empty()) throw Error("no real " + std::string(modality_name(modality)) + " images to train a GAN on");
  GanData data;
  data.range = {cams.front().min(), cams.front().max()};
  for (const auto& c : cams) {
    data.range.lo = std::min(data.range.lo, c.min());
    data.range.hi = std::max(data.range.hi, c.max());
  }
  for (std::size_t i = 0; i < sources.size(); ++i) {
    data.examples.push_back({make_condition(cams[i], class_index(sources[i]->label), full_side, data.range),
                             gan_target(inputs, *sources[i], full_side)});
  }
  return data;
}

Manifest generate_synthetic(const GanPair& gan, SingleCnn<float>& classifier, InputBuilder& inputs,
                            const Manifest& train, Modality modality, CamRange range, std::size_t full_side,
                            std::size_t per_source, std::uint64_t seed, ImageStore& store,
                            const std::string& path_prefix) {
  Manifest out;
  NoGradGuard no_grad;
  std::size_t position = 0;
  const auto& aug = inputs.options().augment;
  const std::size_t side = full_side;
  for (const auto& r : train) {
    if (r.modality != modality || r.provenance != Provenance::Real || r.label == AmdClass::Normal) continue;
    for (std::size_t k = 0; k < per_source; ++k) {
      auto input = normalize_pm1(augment(inputs.prepared(r), aug, seed, k + 1, position));
      auto cam = classifier_cam(classifier, input, r.label, modality);
      auto cond = make_condition(cam, class_index(r.label), side, range);
      auto fake = gan.generate(ops::reshape(cond, {1, kConditionChannels, side, side}));
      ImageRecord rec;
      rec.image_id = "syn-" + std::string(modality_name(modality)) + "-" + r.image_id + "-" + std::to_string(k);
      rec.eye_id = "syn-" + r.image_id + "-" + std::to_string(k);
      rec.subject_id = r.subject_id;
      rec.modality = modality;
      rec.label = r.label;
      rec.provenance = Provenance::Synthetic;
      rec.path = path_prefix + rec.image_id + ".png";
      store.put(rec.image_id, denormalize_pm1(fake));
      out.push_back(std::move(rec));
    }
    ++position;
  }
  return out;
}

Workspace make_workspace(const CliConfig& config, std::uint64_t seed) {
  Workspace ws;
  ws.config = config;
  ws.seed = seed;
  ws.corpus = synth_benchmark(synth_spec(config), seed);
  fill_store(ws.store, ws.corpus);
  ws.split = split_by_eye(ws.corpus.records, split_spec(config, seed));
  return ws;
}

namespace {

struct SingleModels {
  std::unique_ptr<SingleCnn<float>> cfp, oct;
  MetricsReport cfp_report, oct_report;
};

SingleModels train_singles(Workspace& ws, InputBuilder& inputs, const Logger& log) {
  const auto backbone = backbone_config(ws.config);
  SingleModels m;
  for (auto modality : {Modality::Cfp, Modality::Oct}) {
    const bool cfp = modality == Modality::Cfp;
    auto model = std::make_unique<SingleCnn<float>>(backbone, derive_seed({ws.seed, cfp ? kCfpInit : kOctInit}));
    auto result = train_single(*model, inputs, ws.split.train, ws.split.val, single_run_config(ws.config, modality, ws.seed));
    auto report = evaluate_single(*model, inputs, ws.split.test, modality);
    say(log, std::string(modality_name(modality)) + "-cnn: best val f1 " + std::to_string(result.best_validation_f1) +
                 " at epoch " + std::to_string(result.best_epoch) + ", test accuracy " + std::to_string(report.accuracy));
    (cfp ? m.cfp : m.oct) = std::move(model);
    (cfp ? m.cfp_report : m.oct_report) = report;
  }
  return m;
}

}  // namespace

FusionRun run_fusion(Workspace& ws, const Logger& log) {
  InputBuilder inputs(ws.store, input_options(ws.config, ws.seed));
  auto singles = train_singles(ws, inputs, log);
  MmCnn<float> mm(backbone_config(ws.config), derive_seed({ws.seed, kMmInit}));
  train_mm_stage(mm, inputs, ws.split.train, ws.split.val, mm_run_config(ws.config, Stage::Finetune, ws.seed));
  FusionRun run{singles.cfp_report, singles.oct_report, evaluate_mm(mm, inputs, ws.split.test)};
  say(log, "mm-cnn: test accuracy " + std::to_string(run.mm.accuracy));
  return run;
}

TwoStageRun run_two_stage(Workspace& ws, const Logger& log) {
  InputBuilder inputs(ws.store, input_options(ws.config, ws.seed));
  auto singles = train_singles(ws, inputs, log);
  TwoStageRun run;
  Manifest augmented = ws.split.train;
  const auto schedule = gan_schedule(ws.config);
  for (auto modality : {Modality::Cfp, Modality::Oct}) {
    const bool cfp = modality == Modality::Cfp;
    auto& classifier = cfp ? *singles.cfp : *singles.oct;
    GanPair gan(gan_config(ws.config, modality), derive_seed({ws.seed, cfp ? kCfpGan : kOctGan}));
    auto data = build_gan_data(classifier, inputs, ws.split.train, modality, schedule.full_side);
    GanTrainOptions opts;
    opts.schedule = schedule;
    opts.seed = derive_seed({ws.seed, cfp ? kCfpGan : kOctGan});
    (cfp ? run.gan_log_cfp : run.gan_log_oct) = train_gan(gan, data.examples, opts);
    const auto gen_seed = derive_seed({ws.seed, cfp ? kCfpGenerate : kOctGenerate});
    auto synthetic = generate_synthetic(gan, classifier, inputs, ws.split.train, modality, data.range,
                                        schedule.full_side, ws.config.gan.per_source, gen_seed, ws.store);
    run.synthetic_records += synthetic.size();
    augmented.insert(augmented.end(), synthetic.begin(), synthetic.end());
    say(log, std::string(modality_name(modality)) + " gan: " + std::to_string(synthetic.size()) + " synthetic images");
  }
  {
    MmCnn<float> mm(backbone_config(ws.config), derive_seed({ws.seed, kMmInit}));
    train_mm_stage(mm, inputs, ws.split.train, ws.split.val, mm_run_config(ws.config, Stage::Finetune, ws.seed));
    run.finetune_only = evaluate_mm(mm, inputs, ws.split.test);
  }
  {
    MmCnn<float> mm(backbone_config(ws.config), derive_seed({ws.seed, kMmInit}));
    BatchObserver observer;
    observer.on_mm_batch = [&](Stage stage, const Manifest&, const std::vector<LoosePair>&) {
      ++(stage == Stage::Pretrain ? run.pretrain_batches : run.finetune_batches);
    };
    train_two_stage(mm, inputs, augmented, ws.split.val, mm_run_config(ws.config, Stage::Pretrain, ws.seed),
                    mm_run_config(ws.config, Stage::Finetune, ws.seed), observer);
    run.two_stage = evaluate_mm(mm, inputs, ws.split.test);
  }
  say(log, "finetune-only macro-f1 " + std::to_string(run.finetune_only.macro_f1) + ", two-stage macro-f1 " +
               std::to_string(run.two_stage.macro_f1));
  return run;
}

}  // namespace mmfuse
