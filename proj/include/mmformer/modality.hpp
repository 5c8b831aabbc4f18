#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace mmf {

/// MRI contrasts in canonical order. The order fixes token concatenation,
/// skip-feature stacking and report columns.
enum class ModalityId : int { flair = 0, t1c = 1, t1 = 2, t2 = 3 };

inline constexpr int kNumModalities = 4;
inline constexpr std::array<ModalityId, kNumModalities> kModalities = {
    ModalityId::flair, ModalityId::t1c, ModalityId::t1, ModalityId::t2};

std::string_view modality_name(ModalityId m);
// Lower-case identifier used in parameter names ("flair", "t1c", ...).
std::string_view modality_key(ModalityId m);
ModalityId parse_modality(std::string_view name);  // case-insensitive

/// Availability indicators for the four modalities.
class ModalityMask {
 public:
  constexpr ModalityMask() = default;
  constexpr explicit ModalityMask(std::array<bool, kNumModalities> delta) : delta_(delta) {}

  static ModalityMask all() { return ModalityMask({true, true, true, true}); }
  static ModalityMask only(ModalityId m);
  // Bit i set <=> modality i present.
  static ModalityMask from_bits(std::uint8_t bits);
  // Comma-separated modality names, e.g. "FLAIR,T2".
  static ModalityMask parse(std::string_view csv);

  bool operator[](ModalityId m) const { return delta_[static_cast<std::size_t>(m)]; }
  bool operator[](int i) const { return delta_[static_cast<std::size_t>(i)]; }
  void set(ModalityId m, bool present) { delta_[static_cast<std::size_t>(m)] = present; }

  std::uint8_t bits() const;
  int count() const;
  bool any() const { return count() > 0; }
  std::string to_string() const;  // "FLAIR,T1c"

  bool operator==(const ModalityMask&) const = default;

 private:
  std::array<bool, kNumModalities> delta_{};
};

}  // namespace mmf
