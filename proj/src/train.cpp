#include "mmformer/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mmformer/ops.hpp"

namespace mmf {
namespace {

constexpr char kCheckpointMagic[8] = {'M', 'M', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

class ByteWriter {
 public:
  template <typename V>
  void pod(const V& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(V));
  }
  template <typename V>
  void array(const V* data, std::size_t n) {
    const auto* p = reinterpret_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n * sizeof(V));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    array(s.data(), s.size());
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  template <typename V>
  V pod() {
    V v;
    need(sizeof(V));
    std::memcpy(&v, buf_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  template <typename V>
  std::vector<V> array(std::size_t n) {
    if (n > buf_.size()) throw FormatError("checkpoint truncated");
    need(n * sizeof(V));
    std::vector<V> out(n);
    std::memcpy(out.data(), buf_.data() + pos_, n * sizeof(V));
    pos_ += n * sizeof(V);
    return out;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// Prepared copy used by the loop: normalised per modality.
std::vector<Sample> normalised(const std::vector<Sample>& data) {
  std::vector<Sample> out = data;
  for (auto& s : out) normalize_sample(s);
  return out;
}

void check_sample(const Sample& s, const ModelConfig& model) {
  for (auto e : s.extents)
    if (e != model.extent)
      throw ShapeError("sample extent " + std::to_string(e) + " does not match model extent " +
                       std::to_string(model.extent));
}

// Forward + backward of one sample, scaled by `weight`; gradients accumulate
// into the parameters.
LossReport accumulate(const ModelParams& params, const ModelConfig& model, const Sample& sample,
                      const ModalityMask& mask, double weight) {
  check_sample(sample, model);
  const auto volumes = sample.volume_tensors();
  const auto target = sample.regions().as_tensor();
  Tape tape;
  TapeScope scope(tape);
  auto out = mmformer_forward(volumes, mask, params, model);
  auto loss = total_loss(out, target, mask, model.use_aux);
  if (!std::isfinite(loss.report.total))
    throw NumericError("non-finite training loss for sample seed " + std::to_string(sample.seed));
  tape.backward(weight == 1.0 ? loss.total : scale(loss.total, weight));
  return loss.report;
}

void clip_gradients(ModelParams& params, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  for (const auto& [name, t] : params.entries())
    if (t.has_grad())
      for (float g : t.grad()) sq += double(g) * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double f = max_norm / norm;
  for (const auto& [name, t] : params.entries())
    if (t.has_grad())
      for (float& g : t.grad_accumulator()) g = static_cast<float>(g * f);
}

double epoch_lr(const TrainConfig& c, int epoch) {
  if (!c.poly_decay) return c.lr;
  return c.lr * std::pow(1.0 - static_cast<double>(epoch) / c.epochs, 0.9);
}

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

// ---- config ---------------------------------------------------------------

std::string_view mask_policy_name(MaskPolicy p) {
  switch (p) {
    case MaskPolicy::uniform_subsets: return "uniform";
    case MaskPolicy::independent_bernoulli: return "bernoulli";
    case MaskPolicy::full: return "full";
  }
  return "?";
}

MaskPolicy parse_mask_policy(std::string_view name) {
  for (auto p : {MaskPolicy::uniform_subsets, MaskPolicy::independent_bernoulli, MaskPolicy::full})
    if (name == mask_policy_name(p)) return p;
  throw ConfigError("unknown mask policy '" + std::string(name) + "' (uniform, bernoulli, full)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(lr > 0)) fail("lr must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) fail("betas must lie in [0, 1)");
  if (!(eps > 0)) fail("eps must be positive");
  if (epochs < 0) fail("epochs must be non-negative");
  if (steps_per_epoch < 0) fail("steps_per_epoch must be non-negative");
  if (batch_size < 1) fail("batch_size must be positive");
  if (drop_probability < 0 || drop_probability >= 1) fail("drop_probability must lie in [0, 1)");
  if (checkpoint_every < 0) fail("checkpoint_every must be non-negative");
  if (clip_norm < 0) fail("clip_norm must be non-negative");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "lr=" << format_double(lr) << '\n'
     << "beta1=" << format_double(beta1) << '\n'
     << "beta2=" << format_double(beta2) << '\n'
     << "eps=" << format_double(eps) << '\n'
     << "epochs=" << epochs << '\n'
     << "steps_per_epoch=" << steps_per_epoch << '\n'
     << "batch_size=" << batch_size << '\n'
     << "mask_policy=" << mask_policy_name(mask_policy) << '\n'
     << "drop_probability=" << format_double(drop_probability) << '\n'
     << "seed=" << seed << '\n'
     << "checkpoint_every=" << checkpoint_every << '\n'
     << "augment=" << (augment ? 1 : 0) << '\n'
     << "poly_decay=" << (poly_decay ? 1 : 0) << '\n'
     << "clip_norm=" << format_double(clip_norm) << '\n';
  return os.str();
}

TrainConfig TrainConfig::from_key_values(KeyValues& kv) {
  TrainConfig c;
  c.lr = kv.take_double("lr", c.lr);
  c.beta1 = kv.take_double("beta1", c.beta1);
  c.beta2 = kv.take_double("beta2", c.beta2);
  c.eps = kv.take_double("eps", c.eps);
  c.epochs = static_cast<int>(kv.take_int("epochs", c.epochs));
  c.steps_per_epoch = static_cast<int>(kv.take_int("steps_per_epoch", c.steps_per_epoch));
  c.batch_size = static_cast<int>(kv.take_int("batch_size", c.batch_size));
  c.mask_policy = parse_mask_policy(kv.take_string("mask_policy", std::string(mask_policy_name(c.mask_policy))));
  c.drop_probability = kv.take_double("drop_probability", c.drop_probability);
  c.seed = kv.take_u64("seed", c.seed);
  c.checkpoint_every = static_cast<int>(kv.take_int("checkpoint_every", c.checkpoint_every));
  c.augment = kv.take_bool("augment", c.augment);
  c.poly_decay = kv.take_bool("poly_decay", c.poly_decay);
  c.clip_norm = kv.take_double("clip_norm", c.clip_norm);
  return c;
}

// ---- Adam -----------------------------------------------------------------

AdamState AdamState::zeros_like(const ModelParams& params) {
  AdamState s;
  for (const auto& [name, t] : params.entries()) {
    s.m.emplace_back(static_cast<std::size_t>(t.numel()), 0.0f);
    s.v.emplace_back(static_cast<std::size_t>(t.numel()), 0.0f);
    s.steps.push_back(0);
  }
  return s;
}

namespace {

void adam_update(Tensor param, std::span<const float> g, std::vector<float>& m, std::vector<float>& v,
                 std::int64_t& step, const TrainConfig& c, double lr) {
  if (g.size() != m.size() || m.size() != v.size() || static_cast<std::int64_t>(g.size()) != param.numel())
    throw ShapeError("adam_step: state does not match parameter shape");
  ++step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  auto theta = param.mutable_data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double gi = g[i];
    const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
    const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    theta[i] = static_cast<float>(theta[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps));
  }
}

}  // namespace

void adam_step(ModelParams& params, AdamState& state, const TrainConfig& config, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size() || state.steps.size() != params.size())
    throw ShapeError("adam_step: optimizer state has " + std::to_string(state.m.size()) + " entries for " +
                     std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.entries()[i].second;
    if (!t.has_grad()) continue;
    adam_update(t, t.grad(), state.m[i], state.v[i], state.steps[i], config, lr);
  }
}

void adam_step(ModelParams& params, const std::vector<std::vector<float>>& grads, AdamState& state,
               const TrainConfig& config, double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ShapeError("adam_step: gradient list does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    adam_update(params.entries()[i].second, grads[i], state.m[i], state.v[i], state.steps[i], config, lr);
}

ModalityMask sample_modality_mask(std::mt19937_64& rng, MaskPolicy policy, double drop_probability) {
  switch (policy) {
    case MaskPolicy::full: return ModalityMask::all();
    case MaskPolicy::uniform_subsets: {
      std::uniform_int_distribution<int> pick(1, 15);
      return ModalityMask::from_bits(static_cast<std::uint8_t>(pick(rng)));
    }
    case MaskPolicy::independent_bernoulli: {
      std::bernoulli_distribution keep(1.0 - drop_probability);
      for (;;) {
        ModalityMask m;
        for (auto id : kModalities) m.set(id, keep(rng));
        if (m.any()) return m;
      }
    }
  }
  throw ConfigError("unknown mask policy");
}

// ---- training -------------------------------------------------------------

TrainState init_train_state(const ModelConfig& model, const TrainConfig& train) {
  model.validate();
  train.validate();
  TrainState s;
  s.params = init_params(model, train.seed);
  s.params.set_requires_grad(true);
  s.adam = AdamState::zeros_like(s.params);
  s.rng.seed(train.seed ^ 0xA5A5A5A5DEADBEEFull);
  return s;
}

LossReport train_step(ModelParams& params, AdamState& adam, const ModelConfig& model, const TrainConfig& train,
                      const Sample& sample, const ModalityMask& mask, double lr) {
  params.zero_grad();
  auto report = accumulate(params, model, sample, mask, 1.0);
  clip_gradients(params, train.clip_norm);
  adam_step(params, adam, train, lr);
  return report;
}

void train_loop(TrainState& state, const std::vector<Sample>& data, const ModelConfig& model,
                const TrainConfig& train, const std::filesystem::path& checkpoint_path,
                const std::function<void(const EpochLog&)>& on_epoch) {
  if (data.empty()) throw ConfigError("training set is empty");
  model.validate();
  train.validate();
  const auto prepared = normalised(data);
  const int steps = train.steps_per_epoch > 0 ? train.steps_per_epoch
                                              : static_cast<int>((prepared.size() + static_cast<std::size_t>(train.batch_size) - 1) /
                                                                 static_cast<std::size_t>(train.batch_size));
  std::vector<std::size_t> order(prepared.size());
  for (; state.epoch < train.epochs;) {
    const double lr = epoch_lr(train, state.epoch);
    double loss_sum = 0;
    int loss_count = 0;
    std::size_t cursor = order.size();
    for (int step = 0; step < steps; ++step) {
      state.params.zero_grad();
      for (int b = 0; b < train.batch_size; ++b) {
        if (cursor == order.size()) {
          std::iota(order.begin(), order.end(), std::size_t{0});
          std::shuffle(order.begin(), order.end(), state.rng);
          cursor = 0;
        }
        const Sample& base = prepared[order[cursor++]];
        const auto mask = sample_modality_mask(state.rng, train.mask_policy, train.drop_probability);
        const std::uint64_t aug_seed = state.rng();
        const Sample sample = train.augment ? augment(base, aug_seed, model.extent) : base;
        const auto report = accumulate(state.params, model, sample, mask, 1.0 / train.batch_size);
        loss_sum += report.total;
        ++loss_count;
      }
      clip_gradients(state.params, train.clip_norm);
      adam_step(state.params, state.adam, train, lr);
    }
    const double mean = loss_count ? loss_sum / loss_count : 0.0;
    state.loss_history.push_back(mean);
    ++state.epoch;
    if (on_epoch) on_epoch({state.epoch, mean, lr});
    if (!checkpoint_path.empty() && train.checkpoint_every > 0 &&
        (state.epoch % train.checkpoint_every == 0 || state.epoch == train.epochs))
      save_checkpoint(checkpoint_path, model, train, state);
  }
  state.params.zero_grad();
}

// ---- checkpoints ----------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& model, const TrainConfig& train,
                     const TrainState& state) {
  if (state.adam.m.size() != state.params.size()) throw ShapeError("checkpoint: optimizer state misaligned");
  ByteWriter w;
  w.array(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod(kCheckpointVersion);
  const auto model_text = model.to_text();
  w.str(model_text);
  w.pod(fnv1a64(model_text));
  w.str(train.to_text());
  w.pod(static_cast<std::uint32_t>(state.params.size()));
  for (std::size_t i = 0; i < state.params.size(); ++i) {
    const auto& [name, t] = state.params.entries()[i];
    w.str(name);
    w.pod(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) w.pod(static_cast<std::int64_t>(e));
    w.array(t.data().data(), t.data().size());
    w.array(state.adam.m[i].data(), state.adam.m[i].size());
    w.array(state.adam.v[i].data(), state.adam.v[i].size());
    w.pod(state.adam.steps[i]);
  }
  w.str(rng_text(state.rng));
  w.pod(static_cast<std::int32_t>(state.epoch));
  w.pod(static_cast<std::uint32_t>(state.loss_history.size()));
  w.array(state.loss_history.data(), state.loss_history.size());

  // Write-then-rename so a crash never leaves a half-written checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  ByteReader r(std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));

  const auto magic = r.array<char>(sizeof kCheckpointMagic);
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw FormatError("not a checkpoint (bad magic): " + path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  const auto model_text = r.str();
  const auto stored_hash = r.pod<std::uint64_t>();
  if (fnv1a64(model_text) != stored_hash) throw FormatError("checkpoint config block is corrupt (hash mismatch)");
  auto mkv = KeyValues::parse(model_text);
  ck.model = ModelConfig::from_key_values(mkv);
  mkv.require_all_consumed();
  ck.model.validate();
  if (expected && expected->hash() != stored_hash)
    throw ConfigError("checkpoint was written for a different model config (hash " + std::to_string(stored_hash) +
                      ", expected " + std::to_string(expected->hash()) + ")");
  auto tkv = KeyValues::parse(r.str());
  ck.train = TrainConfig::from_key_values(tkv);
  tkv.require_all_consumed();

  const auto specs = param_specs(ck.model);
  const auto count = r.pod<std::uint32_t>();
  if (count != specs.size()) throw FormatError("checkpoint parameter count does not match its config");
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto rank = r.pod<std::uint8_t>();
    Shape shape;
    for (int a = 0; a < rank; ++a) shape.push_back(r.pod<std::int64_t>());
    if (name != specs[i].name || shape != specs[i].shape)
      throw FormatError("checkpoint record " + std::to_string(i) + " (" + name + ") does not match the config");
    const auto n = static_cast<std::size_t>(numel(shape));
    auto data = r.array<float>(n);
    ck.state.adam.m.push_back(r.array<float>(n));
    ck.state.adam.v.push_back(r.array<float>(n));
    ck.state.adam.steps.push_back(r.pod<std::int64_t>());
    ck.state.params.add(std::move(name), Tensor::from_data(std::move(shape), std::move(data), true));
  }
  std::istringstream rng_in(r.str());
  rng_in >> ck.state.rng;
  if (!rng_in) throw FormatError("checkpoint rng state is corrupt");
  ck.state.epoch = r.pod<std::int32_t>();
  const auto hist = r.pod<std::uint32_t>();
  ck.state.loss_history = r.array<double>(hist);
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return ck;
}

}  // namespace mmf
