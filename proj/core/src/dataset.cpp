#include "mmfuse/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::size_t class_slot(AmdClass c) { return static_cast<std::size_t>(c); }

}  // namespace

Manifest parse_manifest(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw Error(source + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) throw Error(source + ": unexpected header '" + line + "'");
  Manifest out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (f.size() != 7) throw Error(where + ": expected 7 fields, got " + std::to_string(f.size()));
    ImageRecord r;
    r.image_id = f[0];
    r.eye_id = f[1];
    r.subject_id = f[2];
    const auto m = parse_modality(f[3]);
    const auto c = parse_class(f[4]);
    const auto p = parse_provenance(f[5]);
    if (!m) throw Error(where + ": unknown modality '" + f[3] + "'");
    if (!c) throw Error(where + ": unknown label '" + f[4] + "'");
    if (!p) throw Error(where + ": unknown provenance '" + f[5] + "'");
    if (r.image_id.empty() || r.eye_id.empty()) throw Error(where + ": image_id and eye_id must be non-empty");
    r.modality = *m;
    r.label = *c;
    r.provenance = *p;
    r.path = f[6];
    out.push_back(std::move(r));
  }
  return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  auto records = parse_manifest(in, path.string());
  validate_manifest(records);
  return records;
}

std::string format_manifest(const Manifest& records) {
  std::ostringstream os;
  os << kManifestHeader << '\n';
  for (const auto& r : records) {
    os << r.image_id << ',' << r.eye_id << ',' << r.subject_id << ',' << modality_name(r.modality) << ','
       << class_name(r.label) << ',' << provenance_name(r.provenance) << ',' << r.path << '\n';
  }
  return os.str();
}

void write_manifest(const std::filesystem::path& path, const Manifest& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << format_manifest(records);
  if (!out) throw Error("failed writing " + path.string());
}

void validate_manifest(const Manifest& records) {
  std::unordered_set<std::string> ids;
  std::unordered_map<std::string, AmdClass> eye_label;
  for (const auto& r : records) {
    if (!ids.insert(r.image_id).second) throw Error("duplicate image_id '" + r.image_id + "'");
    auto [it, inserted] = eye_label.emplace(r.eye_id, r.label);
    if (!inserted && it->second != r.label) {
      throw Error("eye '" + r.eye_id + "' carries both " + std::string(class_name(it->second)) + " and " +
                  std::string(class_name(r.label)));
    }
  }
}

DatasetSplit split_by_eye(const Manifest& records, const SplitSpec& spec) {
  validate_manifest(records);
  // eye -> (has real cfp, has real oct, label)
  std::map<std::string, std::pair<int, AmdClass>> eyes;
  for (const auto& r : records) {
    if (r.provenance != Provenance::Real) continue;
    auto& e = eyes.emplace(r.eye_id, std::pair<int, AmdClass>{0, r.label}).first->second;
    e.first |= r.modality == Modality::Cfp ? 1 : 2;
  }
  std::array<std::vector<std::string>, kNumClasses> eligible;
  for (const auto& [eye, info] : eyes) {
    if (info.first == 3) eligible[class_slot(info.second)].push_back(eye);
  }
  std::unordered_map<std::string, int> destination;  // 1 = val, 2 = test
  for (auto c : kAllClasses) {
    auto& pool = eligible[class_slot(c)];
    const std::size_t need = spec.per_class_test_eyes + spec.per_class_val_eyes;
    if (pool.size() < need) {
      throw Error("class " + std::string(class_name(c)) + " has " + std::to_string(pool.size()) +
                  " eligible eyes, needs " + std::to_string(need));
    }
    Rng rng(derive_seed({spec.seed, 0x5b17u, class_slot(c)}));
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; i < need; ++i) destination[pool[i]] = i < spec.per_class_test_eyes ? 2 : 1;
  }
  DatasetSplit split;
  for (const auto& r : records) {
    auto it = r.provenance == Provenance::Real ? destination.find(r.eye_id) : destination.end();
    const int d = it == destination.end() ? 0 : it->second;
    (d == 2 ? split.test : d == 1 ? split.val : split.train).push_back(r);
  }
  return split;
}

std::size_t loose_pair_count(const Manifest& records) {
  std::array<std::size_t, kNumClasses> cfp{}, oct{};
  for (const auto& r : records) ++(r.modality == Modality::Cfp ? cfp : oct)[class_slot(r.label)];
  std::size_t total = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) total += cfp[c] * oct[c];
  return total;
}

LoosePairSampler::LoosePairSampler(const Manifest& records, PairMode mode, std::uint64_t seed)
    : mode_(mode), rng_(derive_seed({seed, 0x9a12u})) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto& p = pools_[class_slot(r.label)];
    const bool real = r.provenance == Provenance::Real;
    if (r.modality == Modality::Cfp) {
      (real ? p.cfp_real : p.cfp_synth).push_back(i);
    } else {
      (real ? p.oct_real : p.oct_synth).push_back(i);
      p.oct_all.push_back(i);
    }
  }
  for (auto c : kAllClasses) {
    if (admissible_count(c) > 0) classes_.push_back(c);
  }
  if (classes_.empty()) {
    throw Error(std::string(mode == PairMode::Pretrain ? "pretrain" : "finetune") +
                " pairing has no admissible pairs");
  }
}

std::size_t LoosePairSampler::admissible_count(AmdClass label) const {
  const auto& p = pools_[class_slot(label)];
  if (mode_ == PairMode::Finetune) return p.cfp_real.size() * p.oct_real.size();
  return p.cfp_synth.size() * p.oct_all.size() + p.cfp_real.size() * p.oct_synth.size();
}

LoosePair LoosePairSampler::draw(AmdClass label) {
  if (admissible_count(label) == 0) {
    throw Error(std::string(mode_ == PairMode::Pretrain ? "pretrain" : "finetune") +
                " pairing has no admissible pairs for class " + std::string(class_name(label)));
  }
  const auto& p = pools_[class_slot(label)];
  auto pick = [this](const std::vector<std::size_t>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng_)];
  };
  if (mode_ == PairMode::Finetune) return {pick(p.cfp_real), pick(p.oct_real), label};
  // Partition: (synthetic cfp, any oct) and (real cfp, synthetic oct).
  const std::size_t a = p.cfp_synth.size() * p.oct_all.size();
  const std::size_t total = a + p.cfp_real.size() * p.oct_synth.size();
  const std::size_t u = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng_);
  if (u < a) return {pick(p.cfp_synth), pick(p.oct_all), label};
  return {pick(p.cfp_real), pick(p.oct_synth), label};
}

LoosePair LoosePairSampler::draw() {
  std::size_t total = 0;
  for (auto c : kAllClasses) total += admissible_count(c);
  std::size_t u = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng_);
  for (auto c : kAllClasses) {
    const auto n = admissible_count(c);
    if (u < n) return draw(c);
    u -= n;
  }
  return draw(AmdClass::WetAmd);
}

std::vector<AmdClass> balanced_slots(std::size_t batch_size, Rng& rng) {
  expects(batch_size > 0 && batch_size % kNumClasses == 0,
          "batch size " + std::to_string(batch_size) + " must be a positive multiple of 4");
  return balanced_slots(batch_size, {kAllClasses.begin(), kAllClasses.end()}, rng);
}

std::vector<AmdClass> balanced_slots(std::size_t batch_size, const std::vector<AmdClass>& classes, Rng& rng) {
  expects(!classes.empty(), "balanced_slots needs at least one class");
  std::vector<AmdClass> order = classes;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<AmdClass> slots;
  slots.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) slots.push_back(order[i % order.size()]);
  std::shuffle(slots.begin(), slots.end(), rng);
  return slots;
}

BalancedRecordBatcher::BalancedRecordBatcher(const Manifest& records, const std::vector<std::size_t>& candidates,
                                             std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), rng_(derive_seed({seed, 0xba7c4u})) {
  expects(batch_size > 0 && batch_size % kNumClasses == 0,
          "batch size " + std::to_string(batch_size) + " must be a positive multiple of 4");
  for (auto i : candidates) pools_[class_slot(records.at(i).label)].push_back(i);
  for (auto c : kAllClasses) {
    auto& pool = pools_[class_slot(c)];
    if (pool.empty()) throw Error("no training records for class " + std::string(class_name(c)));
    std::shuffle(pool.begin(), pool.end(), rng_);
  }
}

std::vector<std::size_t> BalancedRecordBatcher::next() {
  std::vector<std::size_t> batch;
  batch.reserve(batch_size_);
  for (auto c : balanced_slots(batch_size_, rng_)) {
    auto& pool = pools_[class_slot(c)];
    auto& cur = cursor_[class_slot(c)];
    if (cur == pool.size()) {
      std::shuffle(pool.begin(), pool.end(), rng_);
      cur = 0;
    }
    batch.push_back(pool[cur++]);
  }
  return batch;
}

std::vector<LoosePair> balanced_pair_batch(LoosePairSampler& sampler, std::size_t batch_size, Rng& rng) {
  std::vector<LoosePair> batch;
  batch.reserve(batch_size);
  for (auto c : balanced_slots(batch_size, sampler.classes(), rng)) batch.push_back(sampler.draw(c));
  return batch;
}

std::vector<EyePair> same_eye_pairs(const Manifest& records) {
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> eyes;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, inserted] = eyes.try_emplace(records[i].eye_id);
    if (inserted) order.push_back(records[i].eye_id);
    (records[i].modality == Modality::Cfp ? it->second.first : it->second.second).push_back(i);
  }
  std::vector<EyePair> out;
  for (const auto& eye : order) {
    const auto& [cfp, oct] = eyes[eye];
    for (auto f : cfp) {
      for (auto o : oct) out.push_back({f, o, records[f].label});
    }
  }
  return out;
}

std::vector<std::size_t> select(const Manifest& records, Modality modality) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].modality == modality) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> select(const Manifest& records, Modality modality, Provenance provenance) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].modality == modality && records[i].provenance == provenance) out.push_back(i);
  }
  return out;
}

void ImageStore::put(const std::string& image_id, RawImage image) { images_[image_id] = std::move(image); }

const RawImage& ImageStore::get(const ImageRecord& record) {
  auto it = images_.find(record.image_id);
  if (it != images_.end()) return it->second;
  if (record.path.empty()) throw Error("image '" + record.image_id + "' has no pixel data or path");
  return images_.emplace(record.image_id, read_image(root_ / record.path)).first->second;
}

}  // namespace mmfuse
