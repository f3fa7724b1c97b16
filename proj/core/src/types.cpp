#include "mmfuse/types.hpp"

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {
constexpr std::array<std::string_view, kNumClasses> kClassNames{"normal", "dryAMD", "PCV", "wetAMD"};
}

std::string_view class_name(AmdClass c) { return kClassNames.at(static_cast<std::size_t>(c)); }

std::optional<AmdClass> parse_class(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kClassNames[i] == name) return static_cast<AmdClass>(i);
  }
  return std::nullopt;
}

AmdClass class_from_index(int index) {
  expects(index >= 0 && index < static_cast<int>(kNumClasses), "class index " + std::to_string(index) + " out of range");
  return static_cast<AmdClass>(index);
}

std::string_view modality_name(Modality m) { return m == Modality::Cfp ? "cfp" : "oct"; }

std::optional<Modality> parse_modality(std::string_view name) {
  if (name == "cfp") return Modality::Cfp;
  if (name == "oct") return Modality::Oct;
  return std::nullopt;
}

std::string_view provenance_name(Provenance p) { return p == Provenance::Real ? "real" : "synthetic"; }

std::optional<Provenance> parse_provenance(std::string_view name) {
  if (name == "real") return Provenance::Real;
  if (name == "synthetic") return Provenance::Synthetic;
  return std::nullopt;
}

}  // namespace mmfuse
