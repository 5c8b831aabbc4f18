// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. `--only 1,5` runs a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "mmformer/eval.hpp"
#include "mmformer/gradcheck_suite.hpp"
#include "mmformer/ops.hpp"

using namespace mmf;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances and budgets ----------------------------------------
constexpr double kGradSuiteBudgetSec = 120;
constexpr double kOracleAbsTol = 1e-4;
constexpr double kOracleBudgetSec = 60;
constexpr int kInertTrials = 100;
constexpr double kOverfitWtTarget = 90.0;
constexpr int kOverfitMaxSteps = 500;
constexpr double kOverfitBudgetSec = 15 * 60;
constexpr double kOverfitLr = 1e-3;
constexpr int kOverfitEvalEvery = 25;
constexpr double kTrendTolerance = 3.0;
constexpr double kAblationTolerance = 2.0;
constexpr int kRobustnessSamples = 20;  // 16 train + 4 validation
constexpr int kRobustnessEpochs = 40;
constexpr double kRobustnessLr = 1e-3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor uniform(Shape shape, std::uint64_t seed, float lo = -1.f, float hi = 1.f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v));
}

double max_abs_diff(std::span<const float> got, const std::vector<double>& want) {
  if (got.size() != want.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < got.size(); ++i) m = std::max(m, std::abs(got[i] - want[i]));
  return m;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = {2, 4, 8, 16, 32};
  c.token_dim = 8;
  c.heads = 2;
  c.groups = 2;
  c.extent = 16;
  return c;
}

// The overfit configuration named by the criterion.
ModelConfig overfit_config() {
  ModelConfig c;
  c.channels = {8, 16, 32, 64, 128};
  c.token_dim = 128;
  c.heads = 8;
  c.groups = 8;
  c.extent = 32;
  return c;
}

// Smaller model for the dropout-training criteria, which train five models.
ModelConfig robustness_config() {
  ModelConfig c;
  c.channels = {4, 8, 16, 32, 64};
  c.token_dim = 32;
  c.heads = 4;
  c.groups = 4;
  c.extent = 32;
  return c;
}

// ---- 1: gradient suite ----------------------------------------------------

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = run_gradcheck_suite();
  const double secs = seconds_since(t0);
  double worst_op = 0, worst_net = 0;
  std::string failed;
  for (const auto& e : entries) {
    (e.name.starts_with("network/") ? worst_net : worst_op) =
        std::max(e.name.starts_with("network/") ? worst_net : worst_op, e.max_rel_error);
    if (!e.passed) failed += " " + e.name;
  }
  Outcome o;
  o.pass = failed.empty() && secs < kGradSuiteBudgetSec;
  o.detail = fmt("%zu checks, worst per-op %.2e (<1e-3), worst end-to-end %.2e (<1e-2), %.1fs (<%.0fs)",
                 entries.size(), worst_op, worst_net, secs, kGradSuiteBudgetSec);
  if (!failed.empty()) o.detail += "; failed:" + failed;
  return o;
}

// ---- 2: brute-force oracles -----------------------------------------------

double oracle_conv3d(int stride, int pad, std::uint64_t seed) {
  const std::int64_t ci = 2, co = 3, n = 5, k = 3;
  const Tensor x = uniform({1, ci, n, n, n}, seed), w = uniform({co, ci, k, k, k}, seed + 1),
               b = uniform({co}, seed + 2);
  const auto y = conv3d(x, w, b, stride, pad);
  const std::int64_t on = (n + 2 * pad - k) / stride + 1;
  std::vector<double> want;
  for (std::int64_t o = 0; o < co; ++o)
    for (std::int64_t z = 0; z < on; ++z)
      for (std::int64_t r = 0; r < on; ++r)
        for (std::int64_t c = 0; c < on; ++c) {
          double acc = b.data()[o];
          for (std::int64_t i = 0; i < ci; ++i)
            for (std::int64_t a = 0; a < k; ++a)
              for (std::int64_t bb = 0; bb < k; ++bb)
                for (std::int64_t d = 0; d < k; ++d) {
                  const auto zz = z * stride - pad + a, rr = r * stride - pad + bb, cc = c * stride - pad + d;
                  if (zz < 0 || zz >= n || rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
                  acc += double(x.at({0, i, zz, rr, cc})) * w.at({o, i, a, bb, d});
                }
          want.push_back(acc);
        }
  return max_abs_diff(y.data(), want);
}

double oracle_conv_transpose() {
  const std::int64_t ci = 3, co = 2, n = 2;
  const Tensor x = uniform({1, ci, n, n, n}, 11), w = uniform({ci, co, 2, 2, 2}, 12), b = uniform({co}, 13);
  const auto y = conv_transpose3d(x, w, b);
  const std::int64_t m = 2 * n;
  std::vector<double> want(static_cast<std::size_t>(co * m * m * m));
  for (std::int64_t o = 0; o < co; ++o)
    for (std::int64_t i = 0; i < m * m * m; ++i) want[static_cast<std::size_t>(o * m * m * m + i)] = b.data()[o];
  // Scatter each input voxel through the kernel.
  for (std::int64_t c = 0; c < ci; ++c)
    for (std::int64_t z = 0; z < n; ++z)
      for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t q = 0; q < n; ++q)
          for (std::int64_t o = 0; o < co; ++o)
            for (std::int64_t a = 0; a < 2; ++a)
              for (std::int64_t bb = 0; bb < 2; ++bb)
                for (std::int64_t d = 0; d < 2; ++d) {
                  const auto idx = ((o * m + 2 * z + a) * m + 2 * r + bb) * m + 2 * q + d;
                  want[static_cast<std::size_t>(idx)] += double(x.at({0, c, z, r, q})) * w.at({c, o, a, bb, d});
                }
  return max_abs_diff(y.data(), want);
}

double oracle_group_norm() {
  const std::int64_t C = 4, G = 2, n = 3, vox = n * n * n;
  const Tensor x = uniform({1, C, n, n, n}, 21, -2.f, 3.f), g = uniform({C}, 22), b = uniform({C}, 23);
  const auto y = group_norm(x, static_cast<int>(G), g, b);
  std::vector<double> want(static_cast<std::size_t>(C * vox));
  const auto xs = x.data();
  for (std::int64_t grp = 0; grp < G; ++grp) {
    const auto lo = grp * (C / G) * vox, hi = lo + (C / G) * vox;
    double mean = 0, var = 0;
    for (auto i = lo; i < hi; ++i) mean += xs[static_cast<std::size_t>(i)];
    mean /= double(hi - lo);
    for (auto i = lo; i < hi; ++i) var += std::pow(xs[static_cast<std::size_t>(i)] - mean, 2);
    var /= double(hi - lo);
    for (auto i = lo; i < hi; ++i) {
      const auto c = i / vox;
      want[static_cast<std::size_t>(i)] =
          (xs[static_cast<std::size_t>(i)] - mean) / std::sqrt(var + 1e-5) * g.data()[c] + b.data()[c];
    }
  }
  return max_abs_diff(y.data(), want);
}

double oracle_layer_norm() {
  const std::int64_t rows = 4, C = 5;
  const Tensor x = uniform({1, rows, C}, 31, -2.f, 2.f), g = uniform({C}, 32), b = uniform({C}, 33);
  const auto y = layer_norm(x, g, b);
  std::vector<double> want;
  for (std::int64_t r = 0; r < rows; ++r) {
    double mean = 0, var = 0;
    for (std::int64_t c = 0; c < C; ++c) mean += x.at({0, r, c});
    mean /= C;
    for (std::int64_t c = 0; c < C; ++c) var += std::pow(x.at({0, r, c}) - mean, 2);
    var /= C;
    for (std::int64_t c = 0; c < C; ++c)
      want.push_back((x.at({0, r, c}) - mean) / std::sqrt(var + 1e-5) * g.data()[c] + b.data()[c]);
  }
  return max_abs_diff(y.data(), want);
}

double oracle_softmax() {
  const Tensor x = uniform({2, 3, 5}, 41, -4.f, 4.f);
  const auto y = softmax(x, 2);
  std::vector<double> want;
  for (std::int64_t a = 0; a < 2; ++a)
    for (std::int64_t b = 0; b < 3; ++b) {
      double z = 0;
      for (std::int64_t c = 0; c < 5; ++c) z += std::exp(double(x.at({a, b, c})));
      for (std::int64_t c = 0; c < 5; ++c) want.push_back(std::exp(double(x.at({a, b, c}))) / z);
    }
  return max_abs_diff(y.data(), want);
}

double oracle_attention() {
  const std::int64_t S = 5, C = 4, H = 2, dk = C / H;
  ModelParams p;
  for (const char* n : {"q", "k", "v", "o"}) {
    p.add(std::string("a.") + n + ".w", uniform({C, C}, 50u + static_cast<std::uint64_t>(n[0])));
    p.add(std::string("a.") + n + ".b", uniform({C}, 60u + static_cast<std::uint64_t>(n[0])));
  }
  const Tensor x = uniform({1, S, C}, 51);
  const auto y = multi_head_self_attention(x, p, "a", static_cast<int>(H));
  auto proj = [&](const char* n) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(C)));
    const auto& w = p[std::string("a.") + n + ".w"];
    const auto& b = p[std::string("a.") + n + ".b"];
    for (std::int64_t s = 0; s < S; ++s)
      for (std::int64_t j = 0; j < C; ++j) {
        double acc = b.data()[j];
        for (std::int64_t i = 0; i < C; ++i) acc += double(x.at({0, s, i})) * w.at({i, j});
        out[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)] = acc;
      }
    return out;
  };
  const auto q = proj("q"), k = proj("k"), v = proj("v");
  std::vector<std::vector<double>> merged(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(C), 0));
  for (std::int64_t h = 0; h < H; ++h)
    for (std::int64_t i = 0; i < S; ++i) {
      std::vector<double> score(static_cast<std::size_t>(S));
      double mx = -INFINITY, z = 0;
      for (std::int64_t j = 0; j < S; ++j) {
        double d = 0;
        for (std::int64_t c = 0; c < dk; ++c)
          d += q[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * dk + c)] *
               k[static_cast<std::size_t>(j)][static_cast<std::size_t>(h * dk + c)];
        score[static_cast<std::size_t>(j)] = d / std::sqrt(double(dk));
        mx = std::max(mx, score[static_cast<std::size_t>(j)]);
      }
      for (auto& s : score) z += (s = std::exp(s - mx));
      for (std::int64_t j = 0; j < S; ++j)
        for (std::int64_t c = 0; c < dk; ++c)
          merged[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * dk + c)] +=
              score[static_cast<std::size_t>(j)] / z * v[static_cast<std::size_t>(j)][static_cast<std::size_t>(h * dk + c)];
    }
  const auto& wo = p["a.o.w"];
  const auto& bo = p["a.o.b"];
  std::vector<double> want;
  for (std::int64_t s = 0; s < S; ++s)
    for (std::int64_t j = 0; j < C; ++j) {
      double acc = bo.data()[j];
      for (std::int64_t i = 0; i < C; ++i) acc += merged[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] * wo.at({i, j});
      want.push_back(acc);
    }
  return max_abs_diff(y.data(), want);
}

double oracle_adam() {
  TrainConfig c;
  c.lr = 5e-3;
  ModelParams p;
  p.add("w", uniform({5}, 71));
  auto st = AdamState::zeros_like(p);
  std::vector<double> theta(p["w"].data().begin(), p["w"].data().end()), m(5, 0), v(5, 0);
  std::mt19937_64 rng(72);
  std::normal_distribution<float> gd(0.f, 1.f);
  for (int t = 1; t <= 20; ++t) {
    std::vector<float> g(5);
    for (auto& x : g) x = gd(rng);
    for (std::size_t i = 0; i < 5; ++i) {
      m[i] = c.beta1 * m[i] + (1 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1 - c.beta2) * double(g[i]) * g[i];
      theta[i] -= c.lr * (m[i] / (1 - std::pow(c.beta1, t))) / (std::sqrt(v[i] / (1 - std::pow(c.beta2, t))) + c.eps);
    }
    adam_step(p, {g}, st, c, c.lr);
  }
  return max_abs_diff(p["w"].data(), theta);
}

Outcome criterion_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::pair<const char*, double>> errs = {
      {"conv3d", oracle_conv3d(1, 1, 1)},   {"conv3d/s2", oracle_conv3d(2, 1, 4)},
      {"conv_transpose3d", oracle_conv_transpose()}, {"group_norm", oracle_group_norm()},
      {"layer_norm", oracle_layer_norm()},  {"softmax", oracle_softmax()},
      {"attention", oracle_attention()},    {"adam", oracle_adam()}};
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = secs < kOracleBudgetSec;
  double worst = 0;
  std::string failed;
  for (const auto& [name, e] : errs) {
    worst = std::max(worst, e);
    if (!(e < kOracleAbsTol)) {
      o.pass = false;
      failed += fmt(" %s=%.2e", name, e);
    }
  }
  o.detail = fmt("%zu oracles, worst abs err %.2e (<%.0e), %.2fs (<%.0fs)", errs.size(), worst, kOracleAbsTol, secs,
                 kOracleBudgetSec);
  if (!failed.empty()) o.detail += "; failed:" + failed;
  return o;
}

// ---- 3: structure -------------------------------------------------------

Outcome criterion_structure() {
  std::vector<std::string> problems;
  const auto c = tiny_config();
  std::array<Tensor, kNumModalities> vols;
  for (std::size_t i = 0; i < vols.size(); ++i) vols[i] = uniform({1, 1, 16, 16, 16}, 100 + i);

  ModelConfig big = ModelConfig::paper_scale();
  big.extent = 128;
  if (big.tokens_per_modality() != 512) problems.push_back(fmt("128^3 tokens %d != 512", big.tokens_per_modality()));

  const auto subsets = enumerate_subsets();
  std::set<int> uniq;
  for (const auto& m : subsets) uniq.insert(m.bits());
  if (subsets.size() != 15 || uniq.size() != 15 || uniq.count(0))
    problems.push_back("subset enumeration is not 15 unique non-empty masks");

  const Tensor target = Tensor::zeros({1, 3, 16, 16, 16});
  int cases = 0, full_heads = 0;
  for (auto v : kVariants) {
    const auto vc = apply_variant(c, v);
    const auto vp = init_params(vc, 2);
    for (const auto& m : subsets) {
      const auto o = mmformer_forward(vols, m, vp, vc);
      const auto loss = total_loss(o, target, m, vc.use_aux);
      const int expect_terms = 1 + (vc.use_aux ? 4 + m.count() : 0);
      const int expect_heads = expect_terms;  // encoder heads exist only for present modalities
      if (v == Variant::full && m == ModalityMask::all()) full_heads = o.head_count();
      if (loss.report.term_count() != expect_terms || o.head_count() != expect_heads)
        problems.push_back(fmt("%s mask %s: %d terms (want %d), %d heads (want %d)",
                               std::string(variant_key(v)).c_str(), m.to_string().c_str(),
                               loss.report.term_count(), expect_terms, o.head_count(), expect_heads));
      ++cases;
    }
  }
  Outcome o;
  o.pass = problems.empty() && full_heads == 9;
  o.detail = fmt("heads=%d (9), tokens(128^3)=%d (512), subsets=%zu (15), %d term-count cases", full_heads,
                 big.tokens_per_modality(), subsets.size(), cases);
  for (const auto& s : problems) o.detail += "; " + s;
  return o;
}

// ---- 4: missing-modality inertness ---------------------------------------

bool same_bits(const Tensor& a, const Tensor& b) {
  if (a.defined() != b.defined()) return false;
  if (!a.defined()) return true;
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

bool same_output(const ModelOutput& a, const ModelOutput& b) {
  if (!same_bits(a.main_logits, b.main_logits)) return false;
  for (std::size_t i = 0; i < a.encoder_aux_logits.size(); ++i)
    if (!same_bits(a.encoder_aux_logits[i], b.encoder_aux_logits[i])) return false;
  if (a.decoder_aux_logits.size() != b.decoder_aux_logits.size()) return false;
  for (std::size_t i = 0; i < a.decoder_aux_logits.size(); ++i)
    if (!same_bits(a.decoder_aux_logits[i], b.decoder_aux_logits[i])) return false;
  return true;
}

Outcome criterion_inertness() {
  const auto c = tiny_config();
  std::mt19937_64 rng(404);
  int failures = 0, nan_trials = 0;
  std::string first;
  ModelParams params;
  for (int trial = 0; trial < kInertTrials; ++trial) {
    if (trial % 10 == 0) params = init_params(c, 1000 + static_cast<std::uint64_t>(trial));
    const auto mask = ModalityMask::from_bits(static_cast<std::uint8_t>(1 + rng() % 14));  // 1..14: something missing
    std::array<Tensor, kNumModalities> a, b;
    for (int m = 0; m < kNumModalities; ++m) {
      a[static_cast<std::size_t>(m)] = uniform({1, 1, 16, 16, 16}, rng(), -3.f, 3.f);
      b[static_cast<std::size_t>(m)] = a[static_cast<std::size_t>(m)];
      if (mask[m]) continue;
      if (trial % 2) {
        b[static_cast<std::size_t>(m)] = Tensor::full({1, 1, 16, 16, 16}, NAN);
        ++nan_trials;
      } else {
        b[static_cast<std::size_t>(m)] = uniform({1, 1, 16, 16, 16}, rng(), -100.f, 100.f);
      }
    }
    bool ok = false;
    try {
      ok = same_output(mmformer_forward(a, mask, params, c), mmformer_forward(b, mask, params, c));
    } catch (const std::exception& e) {
      if (first.empty()) first = e.what();
    }
    if (!ok) {
      ++failures;
      if (first.empty()) first = "trial " + std::to_string(trial) + " mask " + mask.to_string();
    }
  }
  Outcome o;
  o.pass = failures == 0;
  o.detail = fmt("%d/%d trials bit-identical after perturbing masked volumes", kInertTrials - failures, kInertTrials);
  if (!first.empty()) o.detail += "; first failure: " + first;
  return o;
}

// ---- 5: overfit two phantoms ---------------------------------------------

Outcome criterion_overfit() {
  const auto model = overfit_config();
  TrainConfig train;
  train.lr = kOverfitLr;
  train.seed = 5;
  train.mask_policy = MaskPolicy::full;
  train.augment = false;
  PhantomConfig phantom;
  phantom.extent = model.extent;
  std::vector<Sample> data;
  for (std::uint64_t i = 0; i < 2; ++i) {
    data.push_back(generate_phantom(sample_seed(55, i), phantom));
    normalize_sample(data.back());
  }
  auto state = init_train_state(model, train);
  const auto t0 = std::chrono::steady_clock::now();
  double wt = 0;
  int steps = 0;
  std::string trace;
  while (steps < kOverfitMaxSteps && seconds_since(t0) < kOverfitBudgetSec) {
    const auto& s = data[static_cast<std::size_t>(steps % 2)];
    train_step(state.params, state.adam, model, train, s, ModalityMask::all(), train.lr);
    ++steps;
    if (steps % kOverfitEvalEvery != 0 && steps != kOverfitMaxSteps) continue;
    wt = 0;
    for (const auto& d : data)
      wt += region_dsc(mmformer_forward(d.volume_tensors(), ModalityMask::all(), state.params, model).main_logits,
                       d.regions()).wt / double(data.size());
    trace += fmt(" %d:%.1f", steps, wt);
    std::fprintf(stderr, "  [5] step %d  train WT DSC %.2f  (%.0fs)\n", steps, wt, seconds_since(t0));
    if (wt > kOverfitWtTarget) break;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = wt > kOverfitWtTarget && steps <= kOverfitMaxSteps && secs < kOverfitBudgetSec;
  o.detail = fmt("%lld params, WT DSC %.2f (>%.0f) after %d steps (<=%d), %.0fs (<%.0fs), lr %.0e",
                 static_cast<long long>(state.params.element_count()), wt, kOverfitWtTarget, steps,
                 kOverfitMaxSteps, secs, kOverfitBudgetSec, kOverfitLr);
  return o;
}

// ---- 6 and 7: dropout training, shared run -------------------------------

struct RobustnessRun {
  std::vector<AblationResult> results;
  double seconds = 0;
};

const RobustnessRun& robustness_run() {
  static const RobustnessRun run = [] {
    RobustnessRun r;
    const auto model = robustness_config();
    PhantomConfig phantom;
    phantom.extent = model.extent;
    const auto data = make_dataset(kRobustnessSamples, 66, phantom);
    TrainConfig train;
    train.seed = 6;
    train.epochs = kRobustnessEpochs;
    train.lr = kRobustnessLr;
    train.mask_policy = MaskPolicy::uniform_subsets;
    const auto t0 = std::chrono::steady_clock::now();
    r.results = run_ablation(data, model, train, {kVariants.begin(), kVariants.end()},
                             [&](Variant v, const EpochLog& log) {
                               if ((log.epoch + 1) % 10 == 0)
                                 std::fprintf(stderr, "  [6/7] %-15s epoch %3d  loss %.4f  (%.0fs)\n",
                                              std::string(variant_label(v)).c_str(), log.epoch + 1, log.mean_loss,
                                              seconds_since(t0));
                             });
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

Outcome criterion_missing_trend() {
  const auto& run = robustness_run();
  const auto summary = aggregate_by_missing_count(run.results.front().table);
  Outcome o;
  o.pass = true;
  std::string trend;
  for (int k = 0; k < 4; ++k) {
    trend += fmt(" %d:%.2f", k, summary.mean[static_cast<std::size_t>(k)].wt);
    if (k > 0 && summary.mean[static_cast<std::size_t>(k)].wt >
                     summary.mean[static_cast<std::size_t>(k - 1)].wt + kTrendTolerance)
      o.pass = false;
  }
  o.detail = "WT by missing count" + trend + fmt(" (non-increasing within %.0f per step)", kTrendTolerance);
  return o;
}

Outcome criterion_ablation() {
  const auto& run = robustness_run();
  Outcome o;
  o.pass = run.results.size() == kVariants.size();
  const double full_wt = run.results.front().table.average().wt;
  std::string parts;
  for (const auto& r : run.results) {
    const double wt = r.table.average().wt;
    parts += fmt(" %s=%.2f", std::string(variant_key(r.variant)).c_str(), wt);
    if (!std::isfinite(r.final_loss)) o.pass = false;
    if (r.table.rows.size() != 15 || !r.table.is_full_sweep()) o.pass = false;
    // The report must survive a CSV round trip.
    const auto parsed = parse_report_csv(format_report(r.table, ReportFormat::csv));
    if (parsed.rows.size() != 15) o.pass = false;
    if (r.variant != Variant::full && full_wt < wt - kAblationTolerance) o.pass = false;
  }
  o.detail = "avg WT" + parts + fmt(" (full >= others - %.0f), finite losses, %.0fs", kAblationTolerance, run.seconds);
  return o;
}

// ---- 8: determinism -------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion_determinism() {
  const auto model = tiny_config();
  PhantomConfig phantom;
  phantom.extent = model.extent;
  TrainConfig train;
  train.seed = 8;
  train.epochs = 2;
  train.checkpoint_every = 1;
  const auto dir = fs::temp_directory_path() / "mmf_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string ckpt[2], csv[2], md[2];
  for (int run = 0; run < 2; ++run) {
    const auto data = make_dataset(4, 88, phantom);
    auto state = init_train_state(model, train);
    const auto path = dir / ("run" + std::to_string(run) + ".mmf");
    train_loop(state, data.train, model, train, path);
    ckpt[run] = slurp(path);
    const auto loaded = load_checkpoint(path, &model);
    const auto table = evaluate_subsets(loaded.state.params, data.val, model);
    csv[run] = format_report(table, ReportFormat::csv);
    md[run] = format_report(table, ReportFormat::markdown);
  }
  fs::remove_all(dir);
  Outcome o;
  o.pass = !ckpt[0].empty() && ckpt[0] == ckpt[1] && csv[0] == csv[1] && md[0] == md[1];
  o.detail = fmt("checkpoints %zu bytes %s, reports %s", ckpt[0].size(), ckpt[0] == ckpt[1] ? "identical" : "DIFFER",
                 csv[0] == csv[1] && md[0] == md[1] ? "identical" : "DIFFER");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::fprintf(stderr, "usage: %s [--only N[,N...]]\n", argv[0]);
      return 2;
    }
  }
  const std::vector<std::tuple<int, const char*, std::function<Outcome()>>> criteria = {
      {1, "gradient checks", criterion_gradients},
      {2, "brute-force oracles", criterion_oracles},
      {3, "architecture structure", criterion_structure},
      {4, "missing-modality inertness", criterion_inertness},
      {5, "overfit two phantoms", criterion_overfit},
      {6, "missing-count trend", criterion_missing_trend},
      {7, "ablation sanity", criterion_ablation},
      {8, "determinism", criterion_determinism},
  };
  int failed = 0;
  for (const auto& [id, name, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
