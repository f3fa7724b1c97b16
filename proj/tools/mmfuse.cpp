// mmfuse: synthetic benchmark, training, synthesis, evaluation and CAM export.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "mmfuse/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mmfuse;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";

  CliConfig config() const { return config_path.empty() ? CliConfig{} : load_config(config_path); }
  std::uint64_t seed_or(const CliConfig& c) const { return seed.value_or(c.seeds.global); }
};

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_path, "JSON configuration file (strict keys)")->check(CLI::ExistingFile);
  app->add_option("--seed", common.seed, "Global seed; overrides seeds.global");
  app->add_option("--out", common.out, "Output directory");
}

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::uint64_t run_seed(std::uint64_t seed, std::size_t run, std::size_t runs) {
  return runs == 1 ? seed : derive_seed({seed, 0x52u, run});
}

std::string run_suffix(std::size_t run, std::size_t runs) {
  return runs == 1 ? "" : "-run" + std::to_string(run);
}

Modality modality_arg(const std::string& s) {
  auto m = parse_modality(s);
  if (!m) throw ConfigError("--modality must be cfp or oct");
  return *m;
}

struct Loaded {
  Manifest records;
  DatasetSplit split;
  ImageStore store;
};

Loaded load_data(const std::string& manifest, const CliConfig& c, std::uint64_t seed) {
  Loaded d;
  d.records = read_manifest(manifest);
  d.store = ImageStore(fs::path(manifest).parent_path());
  d.split = split_by_eye(d.records, split_spec(c, seed));
  return d;
}

int cmd_synth_bench(const Common& common) {
  const auto c = common.config();
  const auto corpus = synth_benchmark(synth_spec(c), common.seed_or(c));
  write_corpus(common.out, corpus);
  log_line("wrote " + std::to_string(corpus.records.size()) + " images to " + common.out);
  return 0;
}

int cmd_preprocess(const Common& common, const std::string& manifest, std::size_t limit) {
  const auto c = common.config();
  auto d = load_data(manifest, c, common.seed_or(c));
  InputBuilder inputs(d.store, input_options(c, common.seed_or(c)));
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  fs::create_directories(common.out);
  for (std::size_t i = 0; i < std::min(limit, d.records.size()); ++i) {
    const auto& r = d.records[i];
    const auto& pre = inputs.prepared(r);
    write_image(fs::path(common.out) / (r.image_id + "-pre.png"), pre);
    const auto t = inputs.image(r);
    double lo = t.data()[0], hi = lo, sum = 0.0;
    for (float v : t.data()) {
      lo = std::min<double>(lo, v);
      hi = std::max<double>(hi, v);
      sum += v;
    }
    summary.push_back({{"image_id", r.image_id},
                       {"filter", r.modality == Modality::Cfp ? "clahe" : "median3x3"},
                       {"min", lo},
                       {"max", hi},
                       {"mean", sum / static_cast<double>(t.numel())}});
  }
  write_text(fs::path(common.out) / "preprocess.json", summary.dump(2) + "\n");
  return 0;
}

int cmd_train_single(const Common& common, const std::string& manifest, const std::string& modality_s,
                     std::size_t runs) {
  const auto c = common.config();
  const auto seed = common.seed_or(c);
  const auto modality = modality_arg(modality_s);
  auto d = load_data(manifest, c, seed);
  const auto backbone = backbone_config(c);
  const std::string name = std::string(modality_name(modality)) + "-cnn";
  for (std::size_t r = 0; r < runs; ++r) {
    const auto s = run_seed(seed, r, runs);
    InputBuilder inputs(d.store, input_options(c, s));
    SingleCnn<float> model(backbone, derive_seed({s, modality == Modality::Cfp ? 11u : 12u}));
    auto result = train_single(model, inputs, d.split.train, d.split.val, single_run_config(c, modality, s));
    const auto stem = fs::path(common.out) / (name + run_suffix(r, runs));
    save_checkpoint(stem, model, classifier_meta(backbone, modality == Modality::Cfp ? ModelKind::Cfp : ModelKind::Oct));
    write_text(stem.string() + "-history.csv", history_to_csv(result.history));
    log_line(name + ": best validation macro-f1 " + std::to_string(result.best_validation_f1));
  }
  return 0;
}

std::unique_ptr<SingleCnn<float>> load_classifier(const std::string& path, Modality expected) {
  const auto meta = read_checkpoint_meta(path);
  const auto kind = kind_from_meta(meta);
  const auto want = expected == Modality::Cfp ? ModelKind::Cfp : ModelKind::Oct;
  if (kind != want) throw Error(path + " is not a " + std::string(modality_name(expected)) + " classifier");
  auto model = std::make_unique<SingleCnn<float>>(backbone_from_meta(meta), 0);
  load_checkpoint(path, *model);
  model->set_training(false);
  return model;
}

int cmd_train_gan(const Common& common, const std::string& manifest, const std::string& modality_s,
                  const std::string& classifier_path) {
  const auto c = common.config();
  const auto seed = common.seed_or(c);
  const auto modality = modality_arg(modality_s);
  auto d = load_data(manifest, c, seed);
  auto classifier = load_classifier(classifier_path, modality);
  InputBuilder inputs(d.store, input_options(c, seed));
  const auto schedule = gan_schedule(c);
  const auto gcfg = gan_config(c, modality);
  const std::uint64_t gan_seed = derive_seed({seed, modality == Modality::Cfp ? 31u : 32u});
  GanPair gan(gcfg, gan_seed);
  auto data = build_gan_data(*classifier, inputs, d.split.train, modality, schedule.full_side);
  GanTrainOptions opts;
  opts.schedule = schedule;
  opts.seed = gan_seed;
  const auto log = train_gan(gan, data.examples, opts);
  const auto stem = fs::path(common.out) / ("gan-" + std::string(modality_name(modality)));
  save_checkpoint(stem, gan, gan_meta(gcfg, schedule, modality, data.range));
  std::string csv = "epoch,phase,d_loss,g_adv_loss,feature_matching,d_aux_side,d_main_side\n";
  for (const auto& e : log) {
    csv += std::to_string(e.epoch) + (e.joint ? ",joint," : ",coarse,") + std::to_string(e.d_loss) + "," +
           std::to_string(e.g_adv_loss) + "," + std::to_string(e.feature_matching) + "," +
           std::to_string(e.d_aux_side) + "," + std::to_string(e.d_main_side) + "\n";
  }
  write_text(stem.string() + "-log.csv", csv);
  return 0;
}

int cmd_generate(const Common& common, const std::string& manifest, const std::vector<std::string>& gans,
                 const std::vector<std::string>& classifiers) {
  const auto c = common.config();
  const auto seed = common.seed_or(c);
  auto d = load_data(manifest, c, seed);
  InputBuilder inputs(d.store, input_options(c, seed));
  const fs::path out_dir = common.out;
  fs::create_directories(out_dir / "synthetic");
  const fs::path src_root = fs::absolute(fs::path(manifest)).parent_path();

  Manifest extended;
  for (auto r : d.records) {
    if (r.provenance == Provenance::Real || !r.path.empty()) {
      r.path = fs::relative(src_root / r.path, fs::absolute(out_dir)).generic_string();
    }
    extended.push_back(std::move(r));
  }
  ImageStore scratch;
  for (const auto& gan_path : gans) {
    const auto meta = read_checkpoint_meta(gan_path);
    const auto modality = modality_from_meta(meta);
    std::unique_ptr<SingleCnn<float>> classifier;
    for (const auto& cp : classifiers) {
      if (kind_from_meta(read_checkpoint_meta(cp)) == (modality == Modality::Cfp ? ModelKind::Cfp : ModelKind::Oct)) {
        classifier = load_classifier(cp, modality);
      }
    }
    if (!classifier) throw ConfigError("no --classifier given for the " + std::string(modality_name(modality)) + " GAN");
    GanPair gan(gan_config_from_meta(meta), 0);
    load_checkpoint(gan_path, gan);
    const auto synthetic = generate_synthetic(
        gan, *classifier, inputs, d.split.train, modality, cam_range_from_meta(meta), std::stoull(meta.at("full_side")),
        c.gan.per_source, derive_seed({seed, modality == Modality::Cfp ? 41u : 42u}), scratch);
    for (const auto& r : synthetic) {
      write_image(out_dir / r.path, scratch.get(r));
      extended.push_back(r);
    }
    log_line("generated " + std::to_string(synthetic.size()) + " synthetic " + std::string(modality_name(modality)) +
             " images");
  }
  write_manifest(out_dir / "manifest.csv", extended);
  return 0;
}

int cmd_train_mm(const Common& common, const std::string& manifest, const std::string& stage_s,
                 const std::string& init, std::size_t runs) {
  const auto c = common.config();
  const auto seed = common.seed_or(c);
  if (stage_s != "pretrain" && stage_s != "finetune" && stage_s != "both") {
    throw ConfigError("--stage must be pretrain, finetune or both");
  }
  auto d = load_data(manifest, c, seed);
  const auto backbone = backbone_config(c);
  for (std::size_t r = 0; r < runs; ++r) {
    const auto s = run_seed(seed, r, runs);
    InputBuilder inputs(d.store, input_options(c, s));
    MmCnn<float> model(backbone, derive_seed({s, 13u}));
    if (!init.empty()) {
      load_checkpoint(init, model);
    } else if (stage_s == "finetune" && !c.train.ablation) {
      throw ConfigError("--stage finetune needs --init unless train.ablation is set");
    }
    BatchObserver observer;
    observer.on_warning = log_line;
    std::vector<EpochRecord> history;
    if (stage_s == "both") {
      auto res = train_two_stage(model, inputs, d.split.train, d.split.val, mm_run_config(c, Stage::Pretrain, s),
                                 mm_run_config(c, Stage::Finetune, s), observer);
      history = res.pretrain.history;
      history.insert(history.end(), res.finetune.history.begin(), res.finetune.history.end());
    } else {
      const auto stage = stage_s == "pretrain" ? Stage::Pretrain : Stage::Finetune;
      history = train_mm_stage(model, inputs, d.split.train, d.split.val, mm_run_config(c, stage, s), observer).history;
    }
    const auto stem = fs::path(common.out) / ("mm-cnn" + run_suffix(r, runs));
    save_checkpoint(stem, model, classifier_meta(backbone, ModelKind::Mm));
    write_text(stem.string() + "-history.csv", history_to_csv(history));
  }
  return 0;
}

int cmd_eval(const Common& common, const std::string& manifest, const std::vector<std::string>& checkpoints) {
  const auto c = common.config();
  const auto seed = common.seed_or(c);
  auto d = load_data(manifest, c, seed);
  InputBuilder inputs(d.store, input_options(c, seed));
  std::vector<MetricsReport> reports;
  for (const auto& path : checkpoints) {
    const auto meta = read_checkpoint_meta(path);
    const auto kind = kind_from_meta(meta);
    const auto backbone = backbone_from_meta(meta);
    if (kind == ModelKind::Mm) {
      MmCnn<float> model(backbone, 0);
      load_checkpoint(path, model);
      reports.push_back(evaluate_mm(model, inputs, d.split.test));
    } else {
      SingleCnn<float> model(backbone, 0);
      load_checkpoint(path, model);
      reports.push_back(
          evaluate_single(model, inputs, d.split.test, kind == ModelKind::Cfp ? Modality::Cfp : Modality::Oct));
    }
  }
  const auto report = average_reports(reports);
  write_text(fs::path(common.out) / "metrics.json", report_to_json(report));
  std::cout << report_to_json(report);
  return 0;
}

int cmd_cam(const Common& common, const std::string& checkpoint, const std::string& cfp_path,
            const std::string& oct_path, const std::string& class_s) {
  const auto c = common.config();
  const auto meta = read_checkpoint_meta(checkpoint);
  if (kind_from_meta(meta) != ModelKind::Mm) throw ConfigError("cam needs an mm-cnn checkpoint");
  const auto backbone = backbone_from_meta(meta);
  MmCnn<float> model(backbone, 0);
  load_checkpoint(checkpoint, model);
  model.set_training(false);

  ImageStore store;
  ImageRecord cfp{"cam-cfp", "cam", "cam", Modality::Cfp, AmdClass::Normal, Provenance::Real, ""};
  ImageRecord oct{"cam-oct", "cam", "cam", Modality::Oct, AmdClass::Normal, Provenance::Real, ""};
  store.put(cfp.image_id, read_image(cfp_path));
  store.put(oct.image_id, read_image(oct_path));
  auto options = input_options(c, common.seed_or(c));
  options.side = backbone.input_side;
  InputBuilder inputs(store, options);

  NoGradGuard no_grad;
  auto out = model.forward(inputs.batch({&cfp}), inputs.batch({&oct}));
  int cls = predict(out.scores)[0];
  if (!class_s.empty()) {
    auto parsed = parse_class(class_s);
    if (!parsed) throw ConfigError("--class must be one of normal, dryAMD, PCV, wetAMD");
    cls = class_index(*parsed);
  }
  const auto [cam_f, cam_o] = cam_from_mm(model, out, 0, cls);
  const double s = out.scores.data()[static_cast<std::size_t>(cls)];
  const double residual = std::abs(s - (cam_f.sum() + cam_o.sum()));
  const double residual_f = std::abs(cam_f.source_logit - cam_f.sum());
  const double residual_o = std::abs(cam_o.source_logit - cam_o.sum());

  const fs::path dir = common.out;
  fs::create_directories(dir);
  write_image(dir / "cam-cfp.png", render_overlay(inputs.prepared(cfp), cam_f));
  write_image(dir / "cam-oct.png", render_overlay(inputs.prepared(oct), cam_o));
  write_text(dir / "cam-cfp.csv", cam_to_csv(cam_f));
  write_text(dir / "cam-oct.csv", cam_to_csv(cam_o));
  nlohmann::ordered_json j{{"class", std::string(class_name(class_from_index(cls)))},
                           {"score", s},
                           {"cfp_sum", cam_f.sum()},
                           {"oct_sum", cam_o.sum()},
                           {"residual", residual},
                           {"cfp_residual", residual_f},
                           {"oct_residual", residual_o}};
  std::cout << j.dump() << '\n';
  if (residual >= 1e-4 || residual_f >= 1e-4 || residual_o >= 1e-4) {
    throw Error("CAM decomposition residual " + std::to_string(residual) + " exceeds 1e-4");
  }
  return 0;
}

void error_line(const char* kind, const std::string& message) {
  nlohmann::json j{{"error", kind}, {"message", message}};
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmfuse: two-stream CFP/OCT classification toolkit"};
  app.require_subcommand(1);

  Common common;
  std::string manifest, modality, classifier_path, stage = "both", init, checkpoint, cfp_image, oct_image, class_name_arg;
  std::vector<std::string> gan_paths, classifier_paths, checkpoints;
  std::size_t runs = 1, limit = 8;

  auto* synth = app.add_subcommand("synth-bench", "Write the procedural benchmark corpus and manifest");
  add_common(synth, common);

  auto* pre = app.add_subcommand("preprocess", "Write CLAHE / median-filter previews and normalization stats");
  add_common(pre, common);
  pre->add_option("--manifest", manifest, "Dataset manifest CSV")->required()->check(CLI::ExistingFile);
  pre->add_option("--limit", limit, "Number of records to preview");

  auto* single = app.add_subcommand("train-single", "Train a single-modal CNN");
  add_common(single, common);
  single->add_option("--manifest", manifest, "Dataset manifest CSV")->required()->check(CLI::ExistingFile);
  single->add_option("--modality", modality, "cfp or oct")->required();
  single->add_option("--runs", runs, "Independent seeded runs")->check(CLI::PositiveNumber);

  auto* gan = app.add_subcommand("train-gan", "Train the CAM-conditioned coarse-to-fine GAN for one modality");
  add_common(gan, common);
  gan->add_option("--manifest", manifest, "Dataset manifest CSV")->required()->check(CLI::ExistingFile);
  gan->add_option("--modality", modality, "cfp or oct")->required();
  gan->add_option("--classifier", classifier_path, "Single-modal classifier checkpoint supplying CAMs")->required();

  auto* gen = app.add_subcommand("generate", "Synthesize images for abnormal training records and extend the manifest");
  add_common(gen, common);
  gen->add_option("--manifest", manifest, "Dataset manifest CSV")->required()->check(CLI::ExistingFile);
  gen->add_option("--gan", gan_paths, "GAN checkpoint (repeat per modality)")->required();
  gen->add_option("--classifier", classifier_paths, "Classifier checkpoint (repeat per modality)")->required();

  auto* mm = app.add_subcommand("train-mm", "Train the two-stream MM-CNN");
  add_common(mm, common);
  mm->add_option("--manifest", manifest, "Dataset manifest CSV")->required()->check(CLI::ExistingFile);
  mm->add_option("--stage", stage, "pretrain, finetune or both");
  mm->add_option("--init", init, "Checkpoint to start from (required for finetune)");
  mm->add_option("--runs", runs, "Independent seeded runs")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "Evaluate checkpoints on the test split; several are averaged");
  add_common(ev, common);
  ev->add_option("--manifest", manifest, "Dataset manifest CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", checkpoints, "Classifier checkpoint (repeat for multi-run averaging)")->required();

  auto* cam = app.add_subcommand("cam", "Render multi-modal CAM overlays and check the score decomposition");
  add_common(cam, common);
  cam->add_option("--checkpoint", checkpoint, "MM-CNN checkpoint")->required();
  cam->add_option("--cfp", cfp_image, "CFP image (png/ppm)")->required()->check(CLI::ExistingFile);
  cam->add_option("--oct", oct_image, "OCT image (png/pgm)")->required()->check(CLI::ExistingFile);
  cam->add_option("--class", class_name_arg, "Class to explain (default: predicted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_line("usage", e.what());
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth_bench(common);
    if (*pre) return cmd_preprocess(common, manifest, limit);
    if (*single) return cmd_train_single(common, manifest, modality, runs);
    if (*gan) return cmd_train_gan(common, manifest, modality, classifier_path);
    if (*gen) return cmd_generate(common, manifest, gan_paths, classifier_paths);
    if (*mm) return cmd_train_mm(common, manifest, stage, init, runs);
    if (*ev) return cmd_eval(common, manifest, checkpoints);
    if (*cam) return cmd_cam(common, checkpoint, cfp_image, oct_image, class_name_arg);
  } catch (const ConfigError& e) {
    error_line("config", e.what());
    return kExitUsage;
  } catch (const ContractViolation& e) {
    error_line("contract", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    error_line("runtime", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
