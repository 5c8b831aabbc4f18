#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mmformer/model.hpp"
#include "mmformer/tensor.hpp"

namespace mmf {

inline constexpr double kDiceSmooth = 1e-5;

/// 1 - (2 sum g*p + s) / (sum g^2 + sum p^2 + s), pooled over every class
/// channel and voxel. Differentiable in both arguments.
template <typename T>
BasicTensor<T> dice_loss(const BasicTensor<T>& probs, const BasicTensor<T>& target,
                         double smooth = kDiceSmooth);

/// Binary nested-region masks. Channel order in tensors is WT, TC, ET.
struct RegionTargets {
  std::array<std::int64_t, 3> extents{};
  std::vector<std::uint8_t> wt, tc, et;

  // [1,3,D,H,W] float tensor (WT, TC, ET).
  Tensor as_tensor() const;
};

inline constexpr int kRegionWt = 0, kRegionTc = 1, kRegionEt = 2;

/// Label codes 0 background, 1 edema, 2 non-enhancing core, 3 enhancing.
RegionTargets labels_to_nested_regions(std::span<const std::uint8_t> labels,
                                       std::array<std::int64_t, 3> extents);

struct LossReport {
  double total = 0;
  std::array<std::optional<double>, kNumModalities> encoder_terms;
  std::vector<double> decoder_terms;
  double output_term = 0;

  int term_count() const;
};

template <typename T>
struct BasicLossResult {
  BasicTensor<T> total;
  LossReport report;
};

/// Unweighted sum of the Dice losses of every head against `target`
/// ([1,C,D,H,W]). Encoder heads of masked modalities carry no term.
template <typename T>
BasicLossResult<T> total_loss(const BasicModelOutput<T>& output, const BasicTensor<T>& target,
                              const ModalityMask& mask, bool use_aux);

/// 100 * 2|P & G| / (|P| + |G|); 100 when both are empty.
double dsc_metric(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target);

/// sigmoid(logit) > 0.5 for one channel of [1,C,D,H,W] logits.
std::vector<std::uint8_t> binarize_channel(const Tensor& logits, int channel);

struct RegionDsc {
  double et = 0, tc = 0, wt = 0;
};

RegionDsc region_dsc(const Tensor& logits, const RegionTargets& target);

}  // namespace mmf
