#include "mmformer/losses.hpp"

#include "mmformer/ops.hpp"

namespace mmf {

template <typename T>
BasicTensor<T> dice_loss(const BasicTensor<T>& probs, const BasicTensor<T>& target, double smooth) {
  if (probs.shape() != target.shape())
    throw ShapeError("dice_loss: shape mismatch " + to_string(probs.shape()) + " vs " +
                     to_string(target.shape()));
  if (smooth < 0) throw ShapeError("dice_loss: smooth must be non-negative");
  const auto p = probs.data();
  const auto g = target.data();
  double gp = 0, gg = 0, pp = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i], gi = g[i];
    gp += gi * pi;
    gg += gi * gi;
    pp += pi * pi;
  }
  const double num = 2 * gp + smooth;
  const double den = gg + pp + smooth;
  if (den == 0) throw NumericError("dice_loss: zero denominator (empty inputs and smooth = 0)");
  const double loss = 1.0 - num / den;
  return make_op_result<T>(
      "dice_loss", {1}, {static_cast<T>(loss)}, {probs, target},
      [probs, target, num, den](const BasicTensor<T>& r) {
        // dL/dp_i = -2 (g_i den - num p_i) / den^2, and symmetrically for g.
        const double go = r.grad()[0];
        const double k = -2.0 * go / (den * den);
        const auto p = probs.data();
        const auto g = target.data();
        if (probs.requires_grad()) {
          auto gp = probs.grad_accumulator();
          for (std::size_t i = 0; i < gp.size(); ++i)
            gp[i] += static_cast<T>(k * (double(g[i]) * den - num * double(p[i])));
        }
        if (target.requires_grad()) {
          auto gg = target.grad_accumulator();
          for (std::size_t i = 0; i < gg.size(); ++i)
            gg[i] += static_cast<T>(k * (double(p[i]) * den - num * double(g[i])));
        }
      });
}

Tensor RegionTargets::as_tensor() const {
  const auto n = static_cast<std::size_t>(extents[0] * extents[1] * extents[2]);
  std::vector<float> data(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = wt[i];
    data[n + i] = tc[i];
    data[2 * n + i] = et[i];
  }
  return Tensor::from_data({1, 3, extents[0], extents[1], extents[2]}, std::move(data));
}

RegionTargets labels_to_nested_regions(std::span<const std::uint8_t> labels,
                                       std::array<std::int64_t, 3> extents) {
  const auto n = static_cast<std::size_t>(extents[0] * extents[1] * extents[2]);
  if (labels.size() != n) throw ShapeError("labels_to_nested_regions: label count does not match extents");
  RegionTargets r;
  r.extents = extents;
  r.wt.resize(n);
  r.tc.resize(n);
  r.et.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto code = labels[i];
    if (code > 3) throw FormatError("unknown label code " + std::to_string(code));
    r.wt[i] = code >= 1;
    r.tc[i] = code >= 2;
    r.et[i] = code == 3;
  }
  return r;
}

int LossReport::term_count() const {
  int n = 1 + static_cast<int>(decoder_terms.size());
  for (const auto& t : encoder_terms) n += t.has_value();
  return n;
}

template <typename T>
BasicLossResult<T> total_loss(const BasicModelOutput<T>& output, const BasicTensor<T>& target,
                              const ModalityMask& mask, bool use_aux) {
  BasicLossResult<T> r;
  auto term = [&](const BasicTensor<T>& logits) { return dice_loss(sigmoid(logits), target); };
  auto total = term(output.main_logits);
  r.report.output_term = total.item();
  if (use_aux) {
    if (output.decoder_aux_logits.empty()) throw ShapeError("total_loss: deep-supervision heads missing");
    for (int i = 0; i < kNumModalities; ++i) {
      if (!mask[i]) continue;
      const auto& head = output.encoder_aux_logits[static_cast<std::size_t>(i)];
      if (!head.defined())
        throw ShapeError("total_loss: auxiliary head missing for " +
                         std::string(modality_name(kModalities[static_cast<std::size_t>(i)])));
      auto l = term(head);
      r.report.encoder_terms[static_cast<std::size_t>(i)] = l.item();
      total = add(total, l);
    }
    for (const auto& head : output.decoder_aux_logits) {
      auto l = term(head);
      r.report.decoder_terms.push_back(l.item());
      total = add(total, l);
    }
  }
  r.report.total = total.item();
  r.total = total;
  return r;
}

double dsc_metric(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target) {
  if (pred.size() != target.size()) throw ShapeError("dsc_metric: size mismatch");
  std::int64_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = target[i] != 0;
    inter += p && g;
    np += p;
    ng += g;
  }
  if (np + ng == 0) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

std::vector<std::uint8_t> binarize_channel(const Tensor& logits, int channel) {
  const auto& s = logits.shape();
  if (s.size() != 5 || s[0] != 1 || channel < 0 || channel >= s[1])
    throw ShapeError("binarize_channel: expected [1,C,D,H,W] logits");
  const auto n = static_cast<std::size_t>(s[2] * s[3] * s[4]);
  const auto d = logits.data().subspan(static_cast<std::size_t>(channel) * n, n);
  std::vector<std::uint8_t> out(n);
  // sigmoid(x) > 0.5 exactly when x > 0
  for (std::size_t i = 0; i < n; ++i) out[i] = d[i] > 0.0f;
  return out;
}

RegionDsc region_dsc(const Tensor& logits, const RegionTargets& target) {
  if (logits.shape().size() != 5 || logits.shape()[1] < 3) throw ShapeError("region_dsc: need 3 region channels");
  RegionDsc r;
  r.wt = dsc_metric(binarize_channel(logits, kRegionWt), target.wt);
  r.tc = dsc_metric(binarize_channel(logits, kRegionTc), target.tc);
  r.et = dsc_metric(binarize_channel(logits, kRegionEt), target.et);
  return r;
}

template BasicTensor<float> dice_loss(const BasicTensor<float>&, const BasicTensor<float>&, double);
template BasicTensor<double> dice_loss(const BasicTensor<double>&, const BasicTensor<double>&, double);
template BasicLossResult<float> total_loss(const BasicModelOutput<float>&, const BasicTensor<float>&,
                                           const ModalityMask&, bool);
template BasicLossResult<double> total_loss(const BasicModelOutput<double>&, const BasicTensor<double>&,
                                            const ModalityMask&, bool);

}  // namespace mmf
