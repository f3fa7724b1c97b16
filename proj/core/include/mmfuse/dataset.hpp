#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mmfuse/image.hpp"
#include "mmfuse/parallel.hpp"
#include "mmfuse/types.hpp"

namespace mmfuse {

struct ImageRecord {
  std::string image_id;
  std::string eye_id;
  std::string subject_id;
  Modality modality = Modality::Cfp;
  AmdClass label = AmdClass::Normal;
  Provenance provenance = Provenance::Real;
  std::string path;

  bool operator==(const ImageRecord&) const = default;
};

using Manifest = std::vector<ImageRecord>;

inline constexpr const char* kManifestHeader = "image_id,eye_id,subject_id,modality,label,provenance,path";

Manifest parse_manifest(std::istream& in, const std::string& source = "manifest");
Manifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const Manifest& records);
void write_manifest(const std::filesystem::path& path, const Manifest& records);

/// Unique image ids and one label per eye; throws Error otherwise.
void validate_manifest(const Manifest& records);

struct SplitSpec {
  std::size_t per_class_test_eyes = 20;
  std::size_t per_class_val_eyes = 0;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  Manifest train;
  Manifest val;
  Manifest test;
};

/// Validation and test eyes are drawn per class from real eyes that have both
/// modalities. Every record of an eye lands in exactly one split; synthetic
/// records always stay in train.
DatasetSplit split_by_eye(const Manifest& records, const SplitSpec& spec);

/// Sum over classes of N_cfp(c) * N_oct(c).
std::size_t loose_pair_count(const Manifest& records);

/// Indices into the manifest the sampler was built from.
struct LoosePair {
  std::size_t cfp = 0;
  std::size_t oct = 0;
  AmdClass label = AmdClass::Normal;
};

enum class PairMode { Pretrain, Finetune };

/// Exact uniform sampling, with replacement, over the admissible same-class
/// pairs. Classes without admissible pairs are skipped by balanced batches. Pretrain admits pairs with at least one synthetic endpoint; finetune
/// admits only real-real pairs. Pairs are never materialized.
class LoosePairSampler {
 public:
  LoosePairSampler(const Manifest& records, PairMode mode, std::uint64_t seed);

  LoosePair draw(AmdClass label);
  /// Uniform over the whole admissible set (class chosen by its pair count).
  LoosePair draw();

  std::size_t admissible_count(AmdClass label) const;
  PairMode mode() const { return mode_; }
  /// Classes with at least one admissible pair, in class order.
  const std::vector<AmdClass>& classes() const { return classes_; }

 private:
  struct Pools {
    std::vector<std::size_t> cfp_real, cfp_synth, oct_real, oct_synth, oct_all;
  };
  PairMode mode_;
  std::array<Pools, kNumClasses> pools_;
  std::vector<AmdClass> classes_;
  Rng rng_;
};

/// Shuffled class slots for one batch, batch_size / 4 of each class.
std::vector<AmdClass> balanced_slots(std::size_t batch_size, Rng& rng);
/// Slots spread as evenly as possible over `classes`; the classes that get the
/// extra slots rotate with the rng.
std::vector<AmdClass> balanced_slots(std::size_t batch_size, const std::vector<AmdClass>& classes, Rng& rng);

/// Cycles through per-class shuffled index pools so every record is visited
/// before any repeats.
class BalancedRecordBatcher {
 public:
  BalancedRecordBatcher(const Manifest& records, const std::vector<std::size_t>& candidates, std::size_t batch_size,
                        std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t batch_size_;
  std::array<std::vector<std::size_t>, kNumClasses> pools_;
  std::array<std::size_t, kNumClasses> cursor_{};
  Rng rng_;
};

/// One batch of loose pairs, class-balanced over sampler.classes().
std::vector<LoosePair> balanced_pair_batch(LoosePairSampler& sampler, std::size_t batch_size, Rng& rng);

/// Evaluation instance for the fused model: both images come from one eye.
struct EyePair {
  std::size_t cfp = 0;
  std::size_t oct = 0;
  AmdClass label = AmdClass::Normal;
};

/// Every (CFP, OCT) combination within each eye, in manifest order.
std::vector<EyePair> same_eye_pairs(const Manifest& records);

/// Indices of records with the given modality (and optionally provenance).
std::vector<std::size_t> select(const Manifest& records, Modality modality);
std::vector<std::size_t> select(const Manifest& records, Modality modality, Provenance provenance);

/// Image pixels keyed by image id; falls back to disk under `root`.
class ImageStore {
 public:
  ImageStore() = default;
  explicit ImageStore(std::filesystem::path root) : root_(std::move(root)) {}

  void put(const std::string& image_id, RawImage image);
  const RawImage& get(const ImageRecord& record);
  bool contains(const std::string& image_id) const { return images_.count(image_id) > 0; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::map<std::string, RawImage> images_;
};

}  // namespace mmfuse
