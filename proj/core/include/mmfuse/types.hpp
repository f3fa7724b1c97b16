#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace mmfuse {

enum class AmdClass : int { Normal = 0, DryAmd = 1, Pcv = 2, WetAmd = 3 };
inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::array<AmdClass, kNumClasses> kAllClasses{AmdClass::Normal, AmdClass::DryAmd, AmdClass::Pcv,
                                                               AmdClass::WetAmd};

enum class Modality { Cfp, Oct };
enum class Provenance { Real, Synthetic };

std::string_view class_name(AmdClass c);
std::optional<AmdClass> parse_class(std::string_view name);
std::string_view modality_name(Modality m);
std::optional<Modality> parse_modality(std::string_view name);
std::string_view provenance_name(Provenance p);
std::optional<Provenance> parse_provenance(std::string_view name);

inline int class_index(AmdClass c) { return static_cast<int>(c); }
AmdClass class_from_index(int index);

}  // namespace mmfuse
