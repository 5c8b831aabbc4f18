#include "mmformer/gradcheck_suite.hpp"

#include <random>

#include "mmformer/gradcheck.hpp"
#include "mmformer/losses.hpp"
#include "mmformer/model.hpp"
#include "mmformer/ops.hpp"

namespace mmf {
namespace {

constexpr double kOpTolerance = 1e-3;
constexpr double kNetworkTolerance = 1e-2;

Tensor uniform(Shape shape, std::uint64_t seed, float lo = -1.f, float hi = 1.f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v));
}

Tensor away_from_zero(Shape shape, std::uint64_t seed) {
  Tensor t = uniform(std::move(shape), seed);
  for (auto& x : t.mutable_data())
    if (std::abs(x) < 0.05f) x = x < 0 ? -0.05f - std::abs(x) : 0.05f + x;
  return t;
}

Tensor binary(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(0.3);
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = on(rng) ? 1.f : 0.f;
  return Tensor::from_data(std::move(shape), std::move(v));
}

template <typename T>
BasicTensor<T> as(const Tensor& t) {
  return cast<T>(t);
}

// sum(w * y) with fixed random weights in [0.5, 1.5].
template <typename T>
BasicTensor<T> probe(const BasicTensor<T>& y, std::uint64_t seed) {
  return sum(mul(y, as<T>(uniform(y.shape(), seed, 0.5f, 1.5f))));
}

#define MMF_VT using T = typename std::decay_t<decltype(t)>::value_type

class Suite {
 public:
  explicit Suite(const std::function<void(const GradCheckEntry&)>& cb) : cb_(cb) {}

  template <typename F>
  void check(std::string name, F&& f, const Tensor& x, double tol = kOpTolerance, double h = 1e-3,
             std::vector<std::size_t> coords = {}) {
    GradCheckEntry e{std::move(name), finite_difference_check(std::forward<F>(f), x, h, coords), tol, false};
    e.passed = e.max_rel_error < tol;
    if (cb_) cb_(e);
    out_.push_back(std::move(e));
  }

  std::vector<GradCheckEntry> take() { return std::move(out_); }

 private:
  const std::function<void(const GradCheckEntry&)>& cb_;
  std::vector<GradCheckEntry> out_;
};

void op_checks(Suite& s) {
  const Tensor x5 = uniform({1, 2, 3, 4, 3}, 30), w3 = uniform({2, 2, 3, 3, 3}, 31), b2 = uniform({2}, 32);
  s.check("conv3d/input", [&](const auto& t) { MMF_VT; return probe(conv3d(t, as<T>(w3), as<T>(b2), 1, 1), 1); }, x5);
  s.check("conv3d/weight", [&](const auto& t) { MMF_VT; return probe(conv3d(as<T>(x5), t, as<T>(b2), 2, 1), 2); }, w3);
  s.check("conv3d/bias", [&](const auto& t) { MMF_VT; return probe(conv3d(as<T>(x5), as<T>(w3), t, 1, 1), 3); }, b2);

  const Tensor wt = uniform({2, 3, 2, 2, 2}, 33), bt = uniform({3}, 34);
  s.check("conv_transpose3d/input",
          [&](const auto& t) { MMF_VT; return probe(conv_transpose3d(t, as<T>(wt), as<T>(bt)), 4); }, x5);
  s.check("conv_transpose3d/weight",
          [&](const auto& t) { MMF_VT; return probe(conv_transpose3d(as<T>(x5), t, as<T>(bt)), 5); }, wt);
  s.check("conv_transpose3d/bias",
          [&](const auto& t) { MMF_VT; return probe(conv_transpose3d(as<T>(x5), as<T>(wt), t), 6); }, bt);

  const Tensor g2 = uniform({2}, 35), be2 = uniform({2}, 36);
  s.check("group_norm/input",
          [&](const auto& t) { MMF_VT; return probe(group_norm(t, 1, as<T>(g2), as<T>(be2)), 7); }, x5);
  s.check("group_norm/gamma",
          [&](const auto& t) { MMF_VT; return probe(group_norm(as<T>(x5), 2, t, as<T>(be2)), 8); }, g2);
  s.check("group_norm/beta",
          [&](const auto& t) { MMF_VT; return probe(group_norm(as<T>(x5), 2, as<T>(g2), t), 9); }, be2);

  const Tensor x3 = uniform({2, 3, 5}, 37), g5 = uniform({5}, 38), b5 = uniform({5}, 39);
  s.check("layer_norm/input", [&](const auto& t) { MMF_VT; return probe(layer_norm(t, as<T>(g5), as<T>(b5)), 10); }, x3);
  s.check("layer_norm/gamma", [&](const auto& t) { MMF_VT; return probe(layer_norm(as<T>(x3), t, as<T>(b5)), 11); }, g5);
  s.check("layer_norm/beta", [&](const auto& t) { MMF_VT; return probe(layer_norm(as<T>(x3), as<T>(g5), t), 12); }, b5);

  const Tensor xa = away_from_zero({2, 5}, 40);
  s.check("relu", [](const auto& t) { return probe(relu(t), 13); }, xa);
  s.check("gelu", [](const auto& t) { return probe(gelu(t), 14); }, xa);
  s.check("sigmoid", [](const auto& t) { return probe(sigmoid(t), 15); }, xa);
  s.check("scale", [](const auto& t) { return probe(scale(t, -1.7), 16); }, xa);

  const Tensor xl = uniform({2, 3, 4}, 41), wl = uniform({4, 5}, 42), bl = uniform({5}, 43);
  s.check("linear/input", [&](const auto& t) { MMF_VT; return probe(linear(t, as<T>(wl), as<T>(bl)), 17); }, xl);
  s.check("linear/weight", [&](const auto& t) { MMF_VT; return probe(linear(as<T>(xl), t, as<T>(bl)), 18); }, wl);
  s.check("linear/bias", [&](const auto& t) { MMF_VT; return probe(linear(as<T>(xl), as<T>(wl), t), 19); }, bl);
  const Tensor r = uniform({2, 4, 3}, 44), rt = uniform({2, 5, 4}, 45);
  s.check("matmul/lhs", [&](const auto& t) { MMF_VT; return probe(matmul(t, as<T>(r)), 20); }, xl);
  s.check("matmul/rhs_transposed", [&](const auto& t) { MMF_VT; return probe(matmul(as<T>(xl), t, true), 21); }, rt);
  s.check("softmax/axis1", [](const auto& t) { return probe(softmax(t, 1), 22); }, xl);
  s.check("softmax/axis2", [](const auto& t) { return probe(softmax(t, 2), 23); }, xl);

  const Tensor y5 = uniform({1, 2, 3, 4, 3}, 46);
  s.check("add_mul", [&](const auto& t) { MMF_VT; return probe(add(t, mul(t, as<T>(y5))), 24); }, x5);
  s.check("concat", [&](const auto& t) { MMF_VT; return probe(concat<T>({t, as<T>(y5), t}, 1), 25); }, x5);
  s.check("reshape", [](const auto& t) { return probe(reshape(t, {6, 12}), 26); }, x5);
  s.check("transpose", [](const auto& t) { return probe(transpose(t, 0, 3), 27); }, x5);
  s.check("flatten_spatial", [](const auto& t) { return probe(flatten_spatial(t), 28); }, x5);
  s.check("unflatten_spatial",
          [](const auto& t) { return probe(unflatten_spatial(t, {3, 4, 3}), 29); }, uniform({1, 36, 2}, 47));
  s.check("trilinear_interpolate", [](const auto& t) { return probe(trilinear_interpolate(t, {5, 5, 4}), 30); }, x5);

  const Tensor gt = binary({1, 3, 3, 3, 3}, 8);
  s.check("dice_loss", [&](const auto& t) { MMF_VT; return dice_loss(t, as<T>(gt)); },
          uniform({1, 3, 3, 3, 3}, 7, 0.05f, 0.95f));
  s.check("dice_loss/sigmoid", [&](const auto& t) { MMF_VT; return dice_loss(sigmoid(t), as<T>(gt)); },
          uniform({1, 3, 3, 3, 3}, 9, -2.f, 2.f));
}

void network_checks(Suite& s) {
  ModelConfig c;
  c.channels = {2, 4, 8, 16, 32};
  c.token_dim = 8;
  c.heads = 2;
  c.groups = 2;
  c.extent = 16;
  const auto p = init_params(c, 2);
  const auto p64 = cast_params<double>(p);
  std::array<Tensor, kNumModalities> vols;
  for (std::size_t i = 0; i < 4; ++i) vols[i] = uniform({1, 1, 16, 16, 16}, 20u + i);
  const Tensor target = binary({1, 3, 16, 16, 16}, 5);
  const auto mask = ModalityMask::all();
  // Kinks of the ReLUs sit within 1e-5 of typical points in this deep graph;
  // a small step on the f64 side keeps the secant on one linear piece.
  const double h = 1e-6;
  std::mt19937_64 rng(6);

  auto input_loss = [&](const auto& flair) {
    using T = typename std::decay_t<decltype(flair)>::value_type;
    std::array<BasicTensor<T>, kNumModalities> v = {flair, as<T>(vols[1]), as<T>(vols[2]), as<T>(vols[3])};
    if constexpr (std::is_same_v<T, float>)
      return total_loss(mmformer_forward(v, mask, p, c), target, mask, true).total;
    else
      return total_loss(mmformer_forward(v, mask, p64, c), as<double>(target), mask, true).total;
  };
  std::vector<std::size_t> coords;
  for (int i = 0; i < 48; ++i) coords.push_back(static_cast<std::size_t>(rng() % 4096));
  s.check("network/input", input_loss, vols[0], kNetworkTolerance, h, coords);

  for (const char* name : {"enc.t1c.s2.down.conv.w", "intra.t2.block0.attn.v.w", "inter.proj.w",
                           "inter.block0.ffn.fc1.w", "dec.l0.merge.conv.w", "aux.l1.refine.conv.w",
                           "dec.ds3.conv.w"}) {
    auto param_loss = [&](const auto& t) {
      MMF_VT;
      BasicModelParams<T> q;
      for (const auto& [n, v] : p.entries()) q.add(n, n == name ? t : as<T>(v));
      std::array<BasicTensor<T>, kNumModalities> v;
      for (std::size_t i = 0; i < 4; ++i) v[i] = as<T>(vols[i]);
      return total_loss(mmformer_forward(v, mask, q, c), as<T>(target), mask, true).total;
    };
    const auto& w = p[name];
    std::vector<std::size_t> pc;
    for (int i = 0; i < 6; ++i) pc.push_back(static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(w.numel())));
    s.check(std::string("network/") + name, param_loss, w, kNetworkTolerance, h, pc);
  }
}

#undef MMF_VT

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(const std::function<void(const GradCheckEntry&)>& on_entry) {
  Suite s(on_entry);
  op_checks(s);
  network_checks(s);
  return s.take();
}

}  // namespace mmf
