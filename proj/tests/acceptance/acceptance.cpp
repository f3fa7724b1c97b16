// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any selected criterion fails.
//
//   mmfuse_acceptance [--criterion N]... [--full] [--cli PATH] [--work DIR]

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "mmfuse/grad_check.hpp"
#include "mmfuse/pipeline.hpp"
#include "oracles.hpp"

using namespace mmfuse;
namespace fs = std::filesystem;
namespace oracle = mmfuse::oracle;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  bool full = false;
  std::string cli;
  std::string grad_case;  // restricts criterion 2 to one case
  fs::path work = fs::temp_directory_path() / "mmfuse_acceptance";
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

// Configuration shared by the behavioral checks (criteria 8 and 9).
CliConfig bench_config() {
  CliConfig c;
  c.dataset.eyes_per_class = 56;
  c.dataset.side = 64;
  c.dataset.test_eyes_per_class = 8;
  c.dataset.val_eyes_per_class = 8;
  c.model.input_side = 64;
  c.train.epochs = 20;
  c.train.pretrain_epochs = 10;
  return c;
}

// 1: CAM identity at 224- and 448-side inputs.
Outcome cam_identity(const Options&) {
  const auto t0 = Clock::now();
  double worst_fused = 0, worst_branch = 0;
  std::size_t draws = 0;
  for (std::size_t d = 0; d < 100; ++d) {
    BackboneConfig cfg;
    cfg.input_side = d % 2 ? 448 : 224;
    cfg.widths = {4, 8, 8, 16};
    cfg.blocks = {1, 1, 1, 1};
    MmCnn<float> model(cfg, derive_seed({0xca11u, d}));
    model.set_training(false);
    std::mt19937_64 rng(d);
    NoGradGuard no_grad;
    auto out = model.forward(oracle::random_tensor<float>({1, 3, cfg.input_side, cfg.input_side}, rng),
                             oracle::random_tensor<float>({1, 3, cfg.input_side, cfg.input_side}, rng));
    for (int c = 0; c < 4; ++c) {
      auto [f, o] = compute_cam_mm(out.cfp_features, out.oct_features, model.head.weight, c);
      if (f.side != cfg.feature_side()) return {false, "CAM grid side " + std::to_string(f.side)};
      worst_fused = std::max(worst_fused, std::abs(out.scores.data()[c] - (f.sum() + o.sum())));
      worst_branch = std::max(worst_branch, std::abs(out.cfp_scores.data()[c] - f.sum()));
      worst_branch = std::max(worst_branch, std::abs(out.oct_scores.data()[c] - o.sum()));
    }
    ++draws;
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_fused < 1e-4 && worst_branch < 1e-4 && secs < 60;
  return {pass, std::to_string(draws) + " draws, max |s-(sum f + sum o)| " + fmt("%.3g", worst_fused) +
                    ", max |s_b - sum b| " + fmt("%.3g", worst_branch) + ", " + fmt("%.1f", secs) + " s"};
}

// 2: finite-difference checks in 64-bit for every primitive and the MM-CNN.
using GradFn = std::function<Tensor<double>(const Tensor<double>&)>;

struct GradCase {
  std::string name;
  // Builds inputs from the rng and returns (tensor to perturb, scalar function) pairs.
  std::function<std::vector<std::pair<Tensor<double>, GradFn>>(std::mt19937_64&)> build;
};

// Reduces any output to a scalar with a fixed random projection.
Tensor<double> project(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto r = oracle::random_tensor<double>(y.shape(), rng);
  return ops::sum(ops::mul(y, r));
}

Tensor<double> rand_leaf(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  auto t = oracle::random_tensor<double>(std::move(s), rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

std::vector<GradCase> grad_cases() {
  using P = std::vector<std::pair<Tensor<double>, GradFn>>;
  std::vector<GradCase> cases;
  auto binary = [&](std::string name, std::function<Tensor<double>(const Tensor<double>&, const Tensor<double>&)> op) {
    cases.push_back({name, [op](std::mt19937_64& rng) {
                       auto a = rand_leaf({2, 3, 4}, rng), b = rand_leaf({2, 3, 4}, rng);
                       const auto s = rng();
                       return P{{a, [=](const Tensor<double>& x) { return project(op(x, b), s); }},
                                {b, [=](const Tensor<double>& x) { return project(op(a, x), s); }}};
                     }});
  };
  auto unary = [&](std::string name, Shape shape, std::function<Tensor<double>(const Tensor<double>&)> op) {
    cases.push_back({name, [op, shape](std::mt19937_64& rng) {
                       auto a = rand_leaf(shape, rng);
                       const auto s = rng();
                       return P{{a, [=](const Tensor<double>& x) { return project(op(x), s); }}};
                     }});
  };
  binary("add", [](auto& a, auto& b) { return ops::add(a, b); });
  binary("sub", [](auto& a, auto& b) { return ops::sub(a, b); });
  binary("mul", [](auto& a, auto& b) { return ops::mul(a, b); });
  binary("l1_distance", [](auto& a, auto& b) { return ops::l1_distance(a, b); });
  unary("scale", {3, 4}, [](auto& a) { return ops::scale(a, 1.7); });
  unary("reshape", {3, 4}, [](auto& a) { return ops::reshape(a, {4, 3}); });
  unary("sum", {3, 4}, [](auto& a) { return ops::sum(a); });
  unary("mean", {3, 4}, [](auto& a) { return ops::mean(a); });
  unary("relu", {3, 4}, [](auto& a) { return ops::relu(a); });
  unary("leaky_relu", {3, 4}, [](auto& a) { return ops::leaky_relu(a, 0.2); });
  unary("tanh", {3, 4}, [](auto& a) { return ops::tanh(a); });
  unary("slice_rows", {5, 3}, [](auto& a) { return ops::slice_rows(a, 1, 4); });
  unary("max_pool2d", {2, 2, 6, 6}, [](auto& a) { return ops::max_pool2d(a, 3, 2, 1); });
  unary("avg_pool2d", {2, 2, 6, 6}, [](auto& a) { return ops::avg_pool2d(a, 2); });
  unary("global_avg_pool", {2, 3, 4, 4}, [](auto& a) { return ops::global_avg_pool(a); });
  unary("bilinear_resize", {1, 2, 3, 4}, [](auto& a) { return ops::bilinear_resize(a, 7, 5); });
  unary("mse_to_constant", {2, 5}, [](auto& a) { return ops::mse_to_constant(a, 1.0); });
  cases.push_back({"matmul", [](std::mt19937_64& rng) {
                     auto a = rand_leaf({3, 4}, rng), b = rand_leaf({4, 2}, rng);
                     const auto s = rng();
                     return P{{a, [=](const Tensor<double>& x) { return project(ops::matmul(x, b), s); }},
                              {b, [=](const Tensor<double>& x) { return project(ops::matmul(a, x), s); }}};
                   }});
  cases.push_back({"concat_channels", [](std::mt19937_64& rng) {
                     auto a = rand_leaf({2, 2, 3, 3}, rng), b = rand_leaf({2, 1, 3, 3}, rng);
                     const auto s = rng();
                     return P{{a, [=](const Tensor<double>& x) { return project(ops::concat_channels<double>({x, b}), s); }},
                              {b, [=](const Tensor<double>& x) { return project(ops::concat_channels<double>({a, x}), s); }}};
                   }});
  cases.push_back({"conv2d", [](std::mt19937_64& rng) {
                     auto x = rand_leaf({2, 3, 6, 6}, rng), w = rand_leaf({4, 3, 3, 3}, rng), b = rand_leaf({4}, rng);
                     const auto s = rng();
                     const ops::Conv2dGeometry g{2, 1};
                     return P{{x, [=](const Tensor<double>& t) { return project(ops::conv2d(t, w, b, g), s); }},
                              {w, [=](const Tensor<double>& t) { return project(ops::conv2d(x, t, b, g), s); }},
                              {b, [=](const Tensor<double>& t) { return project(ops::conv2d(x, w, t, g), s); }}};
                   }});
  cases.push_back({"conv_transpose2d", [](std::mt19937_64& rng) {
                     auto x = rand_leaf({2, 3, 3, 3}, rng), w = rand_leaf({3, 2, 3, 3}, rng), b = rand_leaf({2}, rng);
                     const auto s = rng();
                     const ops::Conv2dGeometry g{2, 1};
                     return P{{x, [=](const Tensor<double>& t) { return project(ops::conv_transpose2d(t, w, b, g, 1), s); }},
                              {w, [=](const Tensor<double>& t) { return project(ops::conv_transpose2d(x, t, b, g, 1), s); }},
                              {b, [=](const Tensor<double>& t) { return project(ops::conv_transpose2d(x, w, t, g, 1), s); }}};
                   }});
  cases.push_back({"batch_norm", [](std::mt19937_64& rng) {
                     auto x = rand_leaf({3, 2, 3, 3}, rng), g = rand_leaf({2}, rng, 0.5, 1.5), b = rand_leaf({2}, rng);
                     const auto s = rng();
                     auto bn = [=](const Tensor<double>& xx, const Tensor<double>& gg, const Tensor<double>& bb) {
                       auto rm = Tensor<double>::full({2}, 0.0), rv = Tensor<double>::full({2}, 1.0);
                       return project(ops::batch_norm(xx, gg, bb, rm, rv, true, 0.9, 1e-5), s);
                     };
                     return P{{x, [=](const Tensor<double>& t) { return bn(t, g, b); }},
                              {g, [=](const Tensor<double>& t) { return bn(x, t, b); }},
                              {b, [=](const Tensor<double>& t) { return bn(x, g, t); }}};
                   }});
  cases.push_back({"instance_norm", [](std::mt19937_64& rng) {
                     auto x = rand_leaf({2, 2, 3, 3}, rng), g = rand_leaf({2}, rng, 0.5, 1.5), b = rand_leaf({2}, rng);
                     const auto s = rng();
                     return P{{x, [=](const Tensor<double>& t) { return project(ops::instance_norm(t, g, b, 1e-5), s); }},
                              {g, [=](const Tensor<double>& t) { return project(ops::instance_norm(x, t, b, 1e-5), s); }},
                              {b, [=](const Tensor<double>& t) { return project(ops::instance_norm(x, g, t, 1e-5), s); }}};
                   }});
  cases.push_back({"softmax_cross_entropy", [](std::mt19937_64& rng) {
                     auto x = rand_leaf({3, 4}, rng, -3, 3);
                     std::vector<int> labels{static_cast<int>(rng() % 4), static_cast<int>(rng() % 4),
                                             static_cast<int>(rng() % 4)};
                     return P{{x, [=](const Tensor<double>& t) { return ops::softmax_cross_entropy<double>(t, labels); }}};
                   }});
  cases.push_back({"mm_cnn", [](std::mt19937_64& rng) {
                     // Every trainable tensor of both branches and the head.
                     BackboneConfig cfg;
                     cfg.input_side = 16;
                     cfg.widths = {3, 4};
                     cfg.blocks = {1, 1};
                     cfg.stem_kernel = 3;
                     auto model = std::make_shared<MmCnn<double>>(cfg, rng());
                     auto a = rand_leaf({3, 3, 16, 16}, rng), b = rand_leaf({3, 3, 16, 16}, rng);
                     std::vector<int> labels{0, 2, 3};
                     auto loss = [model, labels](const Tensor<double>& x, const Tensor<double>& y) {
                       return ops::softmax_cross_entropy<double>(model->forward(x, y).scores, labels);
                     };
                     P out;
                     for (auto& nt : model->named_tensors()) {
                       if (!nt.trainable) continue;
                       out.push_back({nt.tensor, [=](const Tensor<double>&) { return loss(a, b); }});
                     }
                     return out;
                   }});
  return cases;
}

Outcome gradient_suite(const Options& opt) {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  std::size_t checks = 0;
  constexpr std::size_t kSeeds = 50;
  for (const auto& c : grad_cases()) {
    if (!opt.grad_case.empty() && c.name != opt.grad_case) continue;
    double case_worst = 0;
    std::string at_worst;
    for (std::size_t seed = 0; seed < kSeeds; ++seed) {
      std::mt19937_64 rng(derive_seed({0x67u, seed}));
      for (auto& [x, f] : c.build(rng)) {
        const auto r = grad_check<double>(f, x, 1e-5);
        if (r.max_relative_error > case_worst) {
          case_worst = r.max_relative_error;
          at_worst = "analytic " + fmt("%.6g", r.analytic_at_worst) + " numeric " + fmt("%.6g", r.numeric_at_worst);
        }
        ++checks;
      }
    }
    progress(c.name + ": max relative error " + fmt("%.3g", case_worst) + " (" + at_worst + ")");
    if (case_worst >= worst) {
      worst = case_worst;
      worst_name = c.name;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 300, std::to_string(checks) + " checks over " + std::to_string(kSeeds) +
                                          " seeds, worst " + fmt("%.3g", worst) + " (" + worst_name + "), " +
                                          fmt("%.1f", secs) + " s"};
}

// 3: backbone shape law.
Outcome shape_law(const Options&) {
  NoGradGuard no_grad;
  std::mt19937_64 rng(3);
  std::string detail;
  bool pass = true;
  for (std::size_t side : {224u, 448u}) {
    const auto cfg = BackboneConfig::full_scale(side);
    SingleCnn<float> single(cfg, 1);
    single.set_training(false);
    auto out = single.forward(oracle::random_tensor<float>({1, 3, side, side}, rng));
    const std::size_t m = side / 32;
    const Shape want{1, 512, m, m};
    pass = pass && out.features.shape() == want && cfg.feature_side() == m &&
           ops::global_avg_pool(out.features).shape() == Shape({1, 512});
    detail += std::to_string(side) + "->" + shape_str(out.features.shape()) + " ";
  }
  MmCnn<float> mm(BackboneConfig::full_scale(224), 2);
  mm.set_training(false);
  auto out = mm.forward(oracle::random_tensor<float>({1, 3, 224, 224}, rng),
                        oracle::random_tensor<float>({1, 3, 224, 224}, rng));
  const auto fused = ops::concat_channels<float>({ops::global_avg_pool(out.cfp_features), ops::global_avg_pool(out.oct_features)});
  pass = pass && mm.fused_width() == 1024 && fused.shape() == Shape({1, 1024}) && mm.head.weight.dim(0) == 1024;
  detail += "fused " + shape_str(fused.shape());
  return {pass, detail};
}

// 4: pair counts and sampler provenance.
Outcome pairing_suite(const Options&) {
  std::mt19937_64 rng(4);
  std::size_t count_ok = 0, sampled_manifests = 0, violations = 0, draws = 0;
  for (int t = 0; t < 50; ++t) {
    auto m = oracle::random_manifest(rng, {.max_records = 1 + rng() % 100, .synthetic_fraction = 0.4});
    count_ok += loose_pair_count(m) == oracle::enumerate_pairs(m);
    std::optional<LoosePairSampler> pre, fine;
    try {
      pre.emplace(m, PairMode::Pretrain, rng());
      fine.emplace(m, PairMode::Finetune, rng());
    } catch (const Error&) {
      continue;  // no admissible pairs in one of the modes
    }
    ++sampled_manifests;
    for (int i = 0; i < 10000; ++i) {
      auto p = pre->draw();
      const auto &a = m[p.cfp], &b = m[p.oct];
      violations += a.label != b.label || a.label != p.label || a.modality != Modality::Cfp ||
                    b.modality != Modality::Oct ||
                    (a.provenance == Provenance::Real && b.provenance == Provenance::Real);
      auto q = fine->draw();
      violations += m[q.cfp].label != m[q.oct].label || m[q.cfp].provenance != Provenance::Real ||
                    m[q.oct].provenance != Provenance::Real;
      draws += 2;
    }
  }
  const bool pass = count_ok == 50 && sampled_manifests > 0 && violations == 0;
  return {pass, std::to_string(count_ok) + "/50 counts match enumeration; " + std::to_string(draws) + " draws over " +
                    std::to_string(sampled_manifests) + " manifests, " + std::to_string(violations) + " violations"};
}

// 5: eye-level split invariants.
Outcome split_suite(const Options&) {
  std::mt19937_64 rng(5);
  std::size_t ok = 0, infeasible = 0;
  for (int t = 0; t < 50; ++t) {
    auto m = oracle::random_manifest(rng, {.max_records = 40 + rng() % 61, .synthetic_fraction = 0.2,
                                           .all_eyes_bimodal = t % 2 == 0});
    const SplitSpec spec{1 + rng() % 2, rng() % 2, rng()};
    std::map<AmdClass, std::set<std::string>> eligible;
    std::map<std::string, std::pair<bool, bool>> modalities;
    for (const auto& r : m) {
      if (r.provenance != Provenance::Real) continue;
      (r.modality == Modality::Cfp ? modalities[r.eye_id].first : modalities[r.eye_id].second) = true;
    }
    for (const auto& r : m)
      if (r.provenance == Provenance::Real && modalities[r.eye_id].first && modalities[r.eye_id].second)
        eligible[r.label].insert(r.eye_id);
    bool feasible = true;
    for (auto c : kAllClasses) feasible = feasible && eligible[c].size() >= spec.per_class_test_eyes + spec.per_class_val_eyes;
    if (!feasible) {
      try {
        split_by_eye(m, spec);
      } catch (const Error&) {
        ++ok;
        ++infeasible;
      }
      continue;
    }
    auto s = split_by_eye(m, spec);
    std::map<std::string, std::set<int>> where;
    std::map<AmdClass, std::set<std::string>> test_eyes, val_eyes;
    for (int k = 0; k < 3; ++k)
      for (const auto& r : k == 0 ? s.train : k == 1 ? s.val : s.test) {
        where[r.eye_id].insert(k);
        if (k == 1) val_eyes[r.label].insert(r.eye_id);
        if (k == 2) test_eyes[r.label].insert(r.eye_id);
      }
    bool good = s.train.size() + s.val.size() + s.test.size() == m.size();
    for (const auto& [eye, splits] : where) good = good && splits.size() == 1;
    for (auto c : kAllClasses)
      good = good && test_eyes[c].size() == spec.per_class_test_eyes && val_eyes[c].size() == spec.per_class_val_eyes;
    ok += good;
  }
  return {ok == 50, std::to_string(ok) + "/50 manifests hold disjointness and exact quotas (" +
                        std::to_string(infeasible) + " correctly rejected as infeasible)"};
}

// 6: preprocessing oracles.
Outcome preprocessing_suite(const Options&) {
  std::mt19937_64 rng(6);
  std::size_t median_ok = 0, clahe_ok = 0;
  for (int t = 0; t < 100; ++t) {
    auto img = oracle::random_image(4 + rng() % 30, 4 + rng() % 30, t % 4 == 0 ? 3 : 1, rng);
    median_ok += median3x3(img) == oracle::sort_median(img);
    clahe_ok += clahe(img, {1e12, 1, 1}) == oracle::plain_equalize(img);
  }
  RawImage probe(4, 1, 1);
  probe.pixels = {0, 127, 128, 255};
  auto t = normalize_pm1(probe);
  const double tol = 1.0 / 255.0;
  const bool norm_ok = std::abs(t.data()[0] + 1) <= tol && std::abs((t.data()[1] + t.data()[2]) / 2) <= tol &&
                       std::abs(t.data()[3] - 1) <= tol;
  return {median_ok == 100 && clahe_ok == 100 && norm_ok,
          "median " + std::to_string(median_ok) + "/100, single-tile CLAHE " + std::to_string(clahe_ok) +
              "/100, normalize {0,127,128,255} (midpoint = mean of 127 and 128) -> {" + fmt("%.4f", t.data()[0]) + "," + fmt("%.4f", t.data()[1]) + "," +
              fmt("%.4f", t.data()[2]) + "," + fmt("%.4f", t.data()[3]) + "}"};
}

// 7: metrics vs direct counting.
Outcome metric_suite(const Options&) {
  std::mt19937_64 rng(7);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng() % 200;
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % 4);
      pred[i] = rng() % 3 == 0 ? truth[i] : static_cast<int>(rng() % 4);
    }
    const auto r = metrics_from_confusion(confusion(truth, pred));
    const auto o = oracle::count_metrics(truth, pred);
    worst = std::max(worst, std::abs(r.accuracy - o.accuracy));
    for (int c = 0; c < 4; ++c) {
      worst = std::max({worst, std::abs(r.per_class[c].sensitivity - o.se[c]),
                        std::abs(r.per_class[c].specificity - o.sp[c]), std::abs(r.per_class[c].f1 - o.f1[c])});
    }
  }
  const std::vector<int> truth{0, 0, 1, 2}, pred{0, 1, 1, 2};
  const auto ex = evaluate_predictions(truth, pred).per_class[0];
  const bool example = ex.sensitivity == 0.5 && ex.specificity == 1.0 && std::abs(ex.f1 - 0.6667) < 5e-5;
  return {worst < 1e-9 && example, "1000 matrices, max deviation " + fmt("%.3g", worst) + "; worked example f1 " +
                                       fmt("%.4f", ex.f1)};
}

// 8: fusion beats either single modality.
Outcome fusion_benefit(const Options&) {
  const auto t0 = Clock::now();
  const auto config = bench_config();
  double cfp = 0, oct = 0, mm = 0;
  bool ordered = true;
  std::string runs;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto ws = make_workspace(config, seed);
    auto r = run_fusion(ws, progress);
    cfp += r.cfp.accuracy / 3;
    oct += r.oct.accuracy / 3;
    mm += r.mm.accuracy / 3;
    ordered = ordered && r.mm.accuracy > std::max(r.cfp.accuracy, r.oct.accuracy);
    runs += " [" + fmt("%.3f", r.cfp.accuracy) + "/" + fmt("%.3f", r.oct.accuracy) + "/" + fmt("%.3f", r.mm.accuracy) + "]";
  }
  const double secs = seconds_since(t0);
  const bool pass = mm >= 0.90 && cfp <= 0.80 && oct <= 0.80 && ordered && secs < 600;
  return {pass, "mean accuracy cfp " + fmt("%.3f", cfp) + ", oct " + fmt("%.3f", oct) + ", mm " + fmt("%.3f", mm) +
                    "; per run cfp/oct/mm" + runs + "; " + fmt("%.0f", secs) + " s"};
}

// 9: two-stage training with synthesized records.
Outcome two_stage(const Options& opt) {
  const auto t0 = Clock::now();
  auto config = bench_config();
  config.gan.p = opt.full ? 20 : 2;
  config.gan.q = opt.full ? 10 : 1;
  config.gan.coarse_side = 32;
  config.gan.full_side = 64;
  int wins = 0;
  bool contracts = true;
  std::string runs;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto ws = make_workspace(config, seed);
    try {
      auto r = run_two_stage(ws, progress);
      wins += r.two_stage.macro_f1 >= r.finetune_only.macro_f1;
      contracts = contracts && r.pretrain_batches > 0 && r.finetune_batches > 0 && r.synthetic_records > 0;
      runs += " [" + fmt("%.3f", r.finetune_only.macro_f1) + " vs " + fmt("%.3f", r.two_stage.macro_f1) + "]";
    } catch (const ContractViolation& e) {
      contracts = false;
      runs += std::string(" [contract: ") + e.what() + "]";
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = wins >= 2 && contracts && secs < 1800;
  return {pass, std::string(opt.full ? "p=20/q=10" : "p=2/q=1") + ", two-stage >= finetune-only in " +
                    std::to_string(wins) + "/3 runs (macro-f1 finetune vs two-stage" + runs + "), contracts " +
                    (contracts ? "clean" : "violated") + "; " + fmt("%.0f", secs) + " s"};
}

// 10: GAN schedule contract on the smoke schedule.
Outcome gan_schedule(const Options&) {
  auto config = bench_config();
  config.dataset.eyes_per_class = 20;
  auto ws = make_workspace(config, 10);
  InputBuilder inputs(ws.store, input_options(config, 10));
  SingleCnn<float> classifier(backbone_config(config), 1);
  auto data = build_gan_data(classifier, inputs, ws.split.train, Modality::Cfp, 64);
  GanPair gan(gan_config(config, Modality::Cfp), 2);
  GanTrainOptions opts;
  opts.schedule = {2, 1, 32, 64};
  opts.seed = 3;
  const auto initial = nn::parameter_hash(gan, "g_main");
  std::vector<std::uint64_t> hashes;
  opts.on_epoch_end = [&](std::size_t, GanPair& g) { hashes.push_back(nn::parameter_hash(g, "g_main")); };
  std::vector<GanEpochLog> log;
  bool finite = true;
  try {
    log = train_gan(gan, data.examples, opts);
  } catch (const Error& e) {
    finite = false;
  }
  for (const auto& e : log)
    finite = finite && std::isfinite(e.d_loss) && std::isfinite(e.g_adv_loss) && std::isfinite(e.feature_matching);
  const bool frozen = hashes.size() == 3 && hashes[0] == initial && hashes[1] == initial;
  const bool moved = hashes.size() == 3 && hashes[2] != initial;
  float lo = 1, hi = -1;
  {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < std::min<std::size_t>(8, data.examples.size()); ++i) {
      const auto& c = data.examples[i].condition;
      auto img = gan.generate(ops::reshape(c, {1, c.dim(0), c.dim(1), c.dim(2)}));
      for (float v : img.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  const bool bounded = lo >= -1.f && hi <= 1.f;
  return {frozen && moved && finite && bounded,
          std::string("g_main hash ") + (frozen ? "unchanged" : "CHANGED") + " through epoch 2, " +
              (moved ? "changed" : "UNCHANGED") + " at epoch 3; losses " + (finite ? "finite" : "NOT finite") +
              "; outputs in [" + fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "]"};
}

// 11: CLI pipeline reproducibility.
int run(const std::string& cmd) {
  progress(cmd);
  return std::system((cmd + " >/dev/null").c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reproducibility(const Options& opt) {
  if (opt.cli.empty()) return {false, "no --cli binary given"};
  const auto t0 = Clock::now();
  fs::remove_all(opt.work / "c11");
  fs::create_directories(opt.work / "c11");
  const auto cfg = opt.work / "c11" / "config.json";
  {
    std::ofstream out(cfg);
    out << R"({"dataset": {"eyes_per_class": 12, "side": 32, "test_eyes_per_class": 2, "val_eyes_per_class": 2},
 "model": {"input_side": 32, "widths": [8, 16, 32], "blocks": [1, 1, 1]},
 "train": {"epochs": 3, "pretrain_epochs": 2},
 "gan": {"p": 2, "q": 1, "coarse_side": 16, "full_side": 32, "ngf": 4, "ndf": 4,
         "coarse_res_blocks": 1, "main_res_blocks": 1, "per_source": 2}})";
  }
  std::vector<std::string> reports;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto dir = opt.work / "c11" / ("run" + std::to_string(attempt));
    const std::string base = opt.cli + " ";
    const std::string common = " --config " + cfg.string() + " --seed 7";
    const std::string data = (dir / "data").string(), ck = (dir / "ck").string(), aug = (dir / "aug").string();
    const std::vector<std::string> steps{
        "synth-bench" + common + " --out " + data,
        "train-single" + common + " --manifest " + data + "/manifest.csv --modality cfp --out " + ck,
        "train-single" + common + " --manifest " + data + "/manifest.csv --modality oct --out " + ck,
        "train-gan" + common + " --manifest " + data + "/manifest.csv --modality cfp --classifier " + ck + "/cfp-cnn --out " + ck,
        "train-gan" + common + " --manifest " + data + "/manifest.csv --modality oct --classifier " + ck + "/oct-cnn --out " + ck,
        "generate" + common + " --manifest " + data + "/manifest.csv --gan " + ck + "/gan-cfp --gan " + ck +
            "/gan-oct --classifier " + ck + "/cfp-cnn --classifier " + ck + "/oct-cnn --out " + aug,
        "train-mm" + common + " --manifest " + aug + "/manifest.csv --stage both --out " + ck,
        "eval" + common + " --manifest " + aug + "/manifest.csv --checkpoint " + ck + "/mm-cnn --out " + (dir / "eval").string()};
    for (const auto& s : steps) {
      if (run(base + s) != 0) return {false, "step failed: " + s};
    }
    reports.push_back(slurp(dir / "eval" / "metrics.json"));
  }
  const double secs = seconds_since(t0);
  const bool same = !reports[0].empty() && reports[0] == reports[1];
  return {same, std::string("metrics.json ") + (same ? "byte-identical" : "DIFFERS") + " across two runs (" +
                    std::to_string(reports[0].size()) + " bytes); " + fmt("%.0f", secs) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmfuse acceptance checks"};
  std::vector<int> selected;
  Options opt;
  std::string work;
  app.add_option("--criterion", selected, "Criterion number (repeatable); default all")->check(CLI::Range(1, 11));
  app.add_flag("--full", opt.full, "Use the long GAN schedule for criterion 9");
  app.add_option("--cli", opt.cli, "Path to the mmfuse binary (criterion 11)");
  app.add_option("--grad-case", opt.grad_case, "Run only this criterion 2 case");
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  if (!work.empty()) opt.work = work;
  if (selected.empty())
    for (int i = 1; i <= 11; ++i) selected.push_back(i);

  using Check = Outcome (*)(const Options&);
  const std::map<int, std::pair<std::string, Check>> criteria{
      {1, {"CAM identity", cam_identity}},         {2, {"gradient suite", gradient_suite}},
      {3, {"shape law", shape_law}},               {4, {"pairing/count suite", pairing_suite}},
      {5, {"split suite", split_suite}},           {6, {"preprocessing oracles", preprocessing_suite}},
      {7, {"metric suite", metric_suite}},         {8, {"fusion benefit", fusion_benefit}},
      {9, {"two-stage training", two_stage}},      {10, {"GAN schedule contract", gan_schedule}},
      {11, {"CLI reproducibility", reproducibility}}};

  int failures = 0;
  for (int id : selected) {
    const auto& [name, fn] = criteria.at(id);
    Outcome o;
    try {
      o = fn(opt);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << id << " [" << name << "]: " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
