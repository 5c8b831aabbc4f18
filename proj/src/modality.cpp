#include "mmformer/modality.hpp"

#include <algorithm>
#include <cctype>

#include "mmformer/tensor.hpp"

namespace mmf {

std::string_view modality_name(ModalityId m) {
  switch (m) {
    case ModalityId::flair: return "FLAIR";
    case ModalityId::t1c: return "T1c";
    case ModalityId::t1: return "T1";
    case ModalityId::t2: return "T2";
  }
  return "?";
}

std::string_view modality_key(ModalityId m) {
  switch (m) {
    case ModalityId::flair: return "flair";
    case ModalityId::t1c: return "t1c";
    case ModalityId::t1: return "t1";
    case ModalityId::t2: return "t2";
  }
  return "?";
}

ModalityId parse_modality(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (auto m : kModalities)
    if (lower == modality_key(m)) return m;
  throw ConfigError("unknown modality '" + std::string(name) + "' (expected FLAIR, T1c, T1, T2)");
}

ModalityMask ModalityMask::only(ModalityId m) {
  ModalityMask mask;
  mask.set(m, true);
  return mask;
}

ModalityMask ModalityMask::from_bits(std::uint8_t bits) {
  ModalityMask mask;
  for (int i = 0; i < kNumModalities; ++i) mask.delta_[i] = (bits >> i) & 1u;
  return mask;
}

ModalityMask ModalityMask::parse(std::string_view csv) {
  ModalityMask mask;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto end = std::min(csv.find(',', start), csv.size());
    auto token = csv.substr(start, end - start);
    while (!token.empty() && std::isspace(static_cast<unsigned char>(token.front()))) token.remove_prefix(1);
    while (!token.empty() && std::isspace(static_cast<unsigned char>(token.back()))) token.remove_suffix(1);
    if (!token.empty()) {
      const auto m = parse_modality(token);
      if (mask[m]) throw ConfigError("modality listed twice in mask '" + std::string(csv) + "'");
      mask.set(m, true);
    }
    start = end + 1;
  }
  if (!mask.any()) throw ConfigError("mask '" + std::string(csv) + "' selects no modality");
  return mask;
}

std::uint8_t ModalityMask::bits() const {
  std::uint8_t b = 0;
  for (int i = 0; i < kNumModalities; ++i)
    if (delta_[i]) b = static_cast<std::uint8_t>(b | (1u << i));
  return b;
}

int ModalityMask::count() const {
  return static_cast<int>(std::count(delta_.begin(), delta_.end(), true));
}

std::string ModalityMask::to_string() const {
  std::string out;
  for (auto m : kModalities)
    if ((*this)[m]) {
      if (!out.empty()) out += ',';
      out += modality_name(m);
    }
  return out;
}

}  // namespace mmf
