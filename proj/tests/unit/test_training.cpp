#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mmfuse/checkpoint.hpp"
#include "mmfuse/config.hpp"
#include "mmfuse/pipeline.hpp"
#include "oracles.hpp"

using namespace mmfuse;
namespace fs = std::filesystem;

namespace {

BackboneConfig tiny() {
  BackboneConfig c;
  c.input_side = 32;
  c.widths = {4, 8};
  c.blocks = {1, 1};
  return c;
}

struct ToyData {
  SynthCorpus corpus;
  DatasetSplit split;
  ImageStore store;
};

ToyData toy_data(std::size_t eyes = 6) {
  ToyData d;
  d.corpus = synth_benchmark({eyes, 32, 1}, 3);
  d.split = split_by_eye(d.corpus.records, {1, 1, 3});
  fill_store(d.store, d.corpus);
  return d;
}

RunConfig toy_run(ModelKind kind, Stage stage, std::size_t epochs) {
  RunConfig c;
  c.kind = kind;
  c.stage = stage;
  c.epochs = epochs;
  c.batch_size = 4;
  c.seed = 4;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(RunConfig, LearningRateDecay) {
  RunConfig c;
  c.epochs = 20;
  EXPECT_DOUBLE_EQ(c.learning_rate_at(1), 0.01);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(12), 0.01);
  EXPECT_NEAR(c.learning_rate_at(13), 0.001, 1e-15);
  EXPECT_NEAR(c.learning_rate_at(20), 0.0001, 1e-15);
}

TEST(TrainSingle, ZeroEpochsLeavesModelUnchanged) {
  auto d = toy_data();
  InputBuilder inputs(d.store, {.side = 32});
  SingleCnn<float> m(tiny(), 1);
  const auto before = nn::parameter_hash(m);
  auto r = train_single(m, inputs, d.split.train, d.split.val, toy_run(ModelKind::Cfp, Stage::Single, 0));
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(nn::parameter_hash(m), before);
}

TEST(TrainSingle, LossDropsAndBestCheckpointIsArgmax) {
  auto d = toy_data();
  InputBuilder inputs(d.store, {.side = 32, .augment_enabled = false});
  SingleCnn<float> m(tiny(), 2);
  auto r = train_single(m, inputs, d.split.train, d.split.val, toy_run(ModelKind::Oct, Stage::Single, 10));
  ASSERT_EQ(r.history.size(), 10u);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  for (const auto& e : r.history) {
    ASSERT_TRUE(e.validation.has_value());
    EXPECT_GE(r.best_validation_f1, e.validation->macro_f1);
  }
  EXPECT_NE(history_to_csv(r.history).find("epoch,stage"), std::string::npos);
}

TEST(Provenance, ContractsAreEnforced) {
  Manifest m{{"c", "e", "s", Modality::Cfp, AmdClass::Pcv, Provenance::Real, ""},
             {"o", "e", "s", Modality::Oct, AmdClass::Pcv, Provenance::Real, ""},
             {"x", "f", "s", Modality::Oct, AmdClass::Pcv, Provenance::Synthetic, ""}};
  std::vector<LoosePair> real{{0, 1, AmdClass::Pcv}}, synth{{0, 2, AmdClass::Pcv}};
  EXPECT_NO_THROW(check_provenance(Stage::Finetune, m, real));
  EXPECT_THROW(check_provenance(Stage::Pretrain, m, real), ContractViolation);
  EXPECT_NO_THROW(check_provenance(Stage::Pretrain, m, synth));
  EXPECT_THROW(check_provenance(Stage::Finetune, m, synth), ContractViolation);
}

TEST(TwoStage, AliasedSyntheticSetKeepsBothContracts) {
  auto d = toy_data(4);
  Manifest train = d.split.train;
  for (const auto& r : d.split.train) {
    auto s = r;
    s.image_id = "syn-" + r.image_id;
    s.eye_id = "syn-" + r.eye_id;
    s.provenance = Provenance::Synthetic;
    d.store.put(s.image_id, d.store.get(r));
    train.push_back(s);
  }
  InputBuilder inputs(d.store, {.side = 32});
  MmCnn<float> m(tiny(), 3);
  std::size_t pre = 0, fine = 0;
  BatchObserver obs;
  obs.on_mm_batch = [&](Stage s, const Manifest& records, const std::vector<LoosePair>& pairs) {
    for (const auto& p : pairs) {
      const bool synthetic =
          records[p.cfp].provenance == Provenance::Synthetic || records[p.oct].provenance == Provenance::Synthetic;
      EXPECT_EQ(synthetic, s == Stage::Pretrain);
    }
    ++(s == Stage::Pretrain ? pre : fine);
  };
  auto r = train_two_stage(m, inputs, train, d.split.val, toy_run(ModelKind::Mm, Stage::Pretrain, 1),
                           toy_run(ModelKind::Mm, Stage::Finetune, 1), obs);
  EXPECT_FALSE(r.pretrain_skipped);
  EXPECT_GT(pre, 0u);
  EXPECT_GT(fine, 0u);
}

TEST(TwoStage, MissingSyntheticDataNeedsAblation) {
  auto d = toy_data(4);
  InputBuilder inputs(d.store, {.side = 32});
  MmCnn<float> m(tiny(), 3);
  auto pre = toy_run(ModelKind::Mm, Stage::Pretrain, 1);
  auto fine = toy_run(ModelKind::Mm, Stage::Finetune, 1);
  EXPECT_THROW(train_two_stage(m, inputs, d.split.train, d.split.val, pre, fine), Error);
  pre.ablation = fine.ablation = true;
  std::string warning;
  BatchObserver obs;
  obs.on_warning = [&](const std::string& w) { warning = w; };
  auto r = train_two_stage(m, inputs, d.split.train, d.split.val, pre, fine, obs);
  EXPECT_TRUE(r.pretrain_skipped);
  EXPECT_FALSE(warning.empty());
}

TEST(Evaluate, MmUsesSameEyePairs) {
  auto d = toy_data(4);
  InputBuilder inputs(d.store, {.side = 32});
  MmCnn<float> m(tiny(), 5);
  auto r = evaluate_mm(m, inputs, d.split.test);
  EXPECT_EQ(r.instances, same_eye_pairs(d.split.test).size());
}

TEST(Checkpoint, RoundTripIsByteIdenticalAndPreservesOutputs) {
  const auto dir = temp_dir("mmfuse_ckpt_test");
  MmCnn<float> a(tiny(), 6);
  a.set_training(false);
  std::mt19937_64 rng(6);
  auto x = mmfuse::oracle::random_tensor<float>({1, 3, 32, 32}, rng);
  auto y = mmfuse::oracle::random_tensor<float>({1, 3, 32, 32}, rng);
  const auto before = a.forward(x, y).scores;
  save_checkpoint(dir / "a", a, {{"model", "mm-cnn"}});
  MmCnn<float> b(tiny(), 99);
  auto meta = load_checkpoint(dir / "a.json", b);
  EXPECT_EQ(meta.at("model"), "mm-cnn");
  b.set_training(false);
  const auto after = b.forward(x, y).scores;
  for (std::size_t i = 0; i < before.numel(); ++i) EXPECT_EQ(before.data()[i], after.data()[i]);
  save_checkpoint(dir / "b", b, {{"model", "mm-cnn"}});
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  EXPECT_EQ(slurp(dir / "a.json").size(), slurp(dir / "b.json").size());
  fs::remove_all(dir);
}

TEST(Checkpoint, WrongArchitectureNamesParameter) {
  const auto dir = temp_dir("mmfuse_ckpt_test2");
  SingleCnn<float> a(tiny(), 1);
  save_checkpoint(dir / "a", a);
  auto other = tiny();
  other.widths = {4, 16};
  SingleCnn<float> b(other, 1);
  const auto hash = nn::parameter_hash(b);
  try {
    load_checkpoint(dir / "a", b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("backbone."), std::string::npos) << e.what();
  }
  EXPECT_EQ(nn::parameter_hash(b), hash);
  fs::remove_all(dir);
}

TEST(Config, DefaultsAndStrictKeys) {
  auto c = parse_config("{}");
  EXPECT_EQ(c.train.batch_size, 8u);
  EXPECT_EQ(c.gan.p, 100u);
  EXPECT_EQ(c.gan.q, 50u);
  EXPECT_THROW(parse_config(R"({"train":{"batchsize":8}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"train":{"batch_size":"8"}})"), ConfigError);
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  auto round = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(round), config_to_json(c));
}

TEST(Pipeline, ClassifierMetaRoundTrip) {
  auto meta = classifier_meta(tiny(), ModelKind::Oct);
  EXPECT_EQ(kind_from_meta(meta), ModelKind::Oct);
  const auto b = backbone_from_meta(meta);
  EXPECT_EQ(b.widths, tiny().widths);
  EXPECT_EQ(b.input_side, 32u);
}

TEST(Generate, PerSourceCountsAndAbnormalLabelsOnly) {
  auto d = toy_data(4);
  InputBuilder inputs(d.store, {.side = 32});
  SingleCnn<float> classifier(tiny(), 7);
  GanConfig gc;
  gc.image_channels = 1;
  gc.ngf = 2;
  gc.ndf = 2;
  gc.coarse_res_blocks = 1;
  gc.main_res_blocks = 1;
  GanPair gan(gc, 1);
  std::size_t abnormal = 0;
  for (const auto& r : d.split.train) abnormal += r.modality == Modality::Oct && r.label != AmdClass::Normal;
  for (std::size_t per : {0u, 3u}) {
    ImageStore store;
    auto out = generate_synthetic(gan, classifier, inputs, d.split.train, Modality::Oct, {-1, 1}, 32, per, 5, store);
    EXPECT_EQ(out.size(), per * abnormal);
    for (const auto& r : out) {
      EXPECT_NE(r.label, AmdClass::Normal);
      EXPECT_EQ(r.provenance, Provenance::Synthetic);
      EXPECT_EQ(r.modality, Modality::Oct);
      EXPECT_TRUE(store.contains(r.image_id));
    }
  }
}
