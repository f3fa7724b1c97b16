#include "mmfuse/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace mmfuse {

namespace {

using Json = nlohmann::ordered_json;

class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  void get(const char* key, std::size_t& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(path_ + "." + key + " must be a non-negative integer");
    }
    out = v.get<std::size_t>();
  }

  void get(const char* key, double& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_number()) throw ConfigError(path_ + "." + key + " must be a number");
    out = j_.at(key).get<double>();
  }

  void get(const char* key, Range& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw ConfigError(path_ + "." + key + " must be a [lo, hi] pair");
    }
    out = {v[0].get<double>(), v[1].get<double>()};
  }

  Reader section(const char* key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key " + path_ + "." + k);
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

CliConfig parse_config(const std::string& json_text, const std::string& source) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  CliConfig c;
  Reader root(j, source);
  {
    auto r = root.section("dataset");
    auto& d = c.dataset;
    r.get("eyes_per_class", d.eyes_per_class);
    r.get("side", d.side);
    r.get("oct_per_eye", d.oct_per_eye);
    r.get("test_eyes_per_class", d.test_eyes_per_class);
    r.get("val_eyes_per_class", d.val_eyes_per_class);
    r.get("clahe_clip_limit", d.clahe_clip_limit);
    r.get("clahe_tiles", d.clahe_tiles);
    r.finish();
  }
  {
    auto r = root.section("model");
    auto& m = c.model;
    r.get("input_side", m.input_side);
    r.get("widths", m.widths);
    r.get("blocks", m.blocks);
    r.get("stem_kernel", m.stem_kernel);
    r.finish();
  }
  {
    auto r = root.section("train");
    auto& t = c.train;
    r.get("epochs", t.epochs);
    r.get("pretrain_epochs", t.pretrain_epochs);
    r.get("learning_rate", t.learning_rate);
    r.get("lr_decay_at", t.lr_decay_at);
    r.get("lr_decay_factor", t.lr_decay_factor);
    r.get("batch_size", t.batch_size);
    r.get("momentum", t.momentum);
    r.get("weight_decay", t.weight_decay);
    r.get("validate_every", t.validate_every);
    r.get("augment", t.augment);
    r.get("ablation", t.ablation);
    auto a = r.section("augmentation");
    a.get("crop_fraction", t.augmentation.crop_fraction);
    a.get("flip_probability", t.augmentation.flip_probability);
    a.get("rotation_degrees", t.augmentation.rotation_degrees);
    a.get("brightness", t.augmentation.brightness);
    a.get("contrast", t.augmentation.contrast);
    a.get("saturation", t.augmentation.saturation);
    a.finish();
    r.finish();
  }
  {
    auto r = root.section("gan");
    auto& g = c.gan;
    r.get("p", g.p);
    r.get("q", g.q);
    r.get("coarse_side", g.coarse_side);
    r.get("full_side", g.full_side);
    r.get("ngf", g.ngf);
    r.get("ndf", g.ndf);
    r.get("coarse_res_blocks", g.coarse_res_blocks);
    r.get("main_res_blocks", g.main_res_blocks);
    r.get("learning_rate", g.learning_rate);
    r.get("beta1", g.beta1);
    r.get("feature_matching_weight", g.feature_matching_weight);
    r.get("flip_probability", g.flip_probability);
    r.get("crop_fraction", g.crop_fraction);
    r.get("per_source", g.per_source);
    r.finish();
  }
  {
    auto r = root.section("eval");
    r.get("runs", c.eval.runs);
    r.finish();
  }
  {
    auto r = root.section("seeds");
    std::size_t global = c.seeds.global;
    r.get("global", global);
    c.seeds.global = global;
    r.finish();
  }
  root.finish();
  try {
    c.train.augmentation.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

CliConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string config_to_json(const CliConfig& c) {
  auto range = [](Range r) { return Json::array({r.lo, r.hi}); };
  Json j;
  j["dataset"] = {{"eyes_per_class", c.dataset.eyes_per_class},
                  {"side", c.dataset.side},
                  {"oct_per_eye", c.dataset.oct_per_eye},
                  {"test_eyes_per_class", c.dataset.test_eyes_per_class},
                  {"val_eyes_per_class", c.dataset.val_eyes_per_class},
                  {"clahe_clip_limit", c.dataset.clahe_clip_limit},
                  {"clahe_tiles", c.dataset.clahe_tiles}};
  j["model"] = {{"input_side", c.model.input_side},
                {"widths", c.model.widths},
                {"blocks", c.model.blocks},
                {"stem_kernel", c.model.stem_kernel}};
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},
                {"pretrain_epochs", t.pretrain_epochs},
                {"learning_rate", t.learning_rate},
                {"lr_decay_at", t.lr_decay_at},
                {"lr_decay_factor", t.lr_decay_factor},
                {"batch_size", t.batch_size},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"validate_every", t.validate_every},
                {"augment", t.augment},
                {"ablation", t.ablation},
                {"augmentation",
                 {{"crop_fraction", range(t.augmentation.crop_fraction)},
                  {"flip_probability", t.augmentation.flip_probability},
                  {"rotation_degrees", range(t.augmentation.rotation_degrees)},
                  {"brightness", range(t.augmentation.brightness)},
                  {"contrast", range(t.augmentation.contrast)},
                  {"saturation", range(t.augmentation.saturation)}}}};
  const auto& g = c.gan;
  j["gan"] = {{"p", g.p},
              {"q", g.q},
              {"coarse_side", g.coarse_side},
              {"full_side", g.full_side},
              {"ngf", g.ngf},
              {"ndf", g.ndf},
              {"coarse_res_blocks", g.coarse_res_blocks},
              {"main_res_blocks", g.main_res_blocks},
              {"learning_rate", g.learning_rate},
              {"beta1", g.beta1},
              {"feature_matching_weight", g.feature_matching_weight},
              {"flip_probability", g.flip_probability},
              {"crop_fraction", g.crop_fraction},
              {"per_source", g.per_source}};
  j["eval"] = {{"runs", c.eval.runs}};
  j["seeds"] = {{"global", c.seeds.global}};
  return j.dump(2) + "\n";
}

}  // namespace mmfuse
