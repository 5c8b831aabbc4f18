#include "mmformer/model.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "mmformer/ops.hpp"

namespace mmf {
namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string enc_prefix(ModalityId m) { return "enc." + std::string(modality_key(m)); }
std::string intra_prefix(ModalityId m) { return "intra." + std::string(modality_key(m)); }

Shape conv_shape(int cout, int cin, int k) { return {cout, cin, k, k, k}; }

// Parameter list builder shared by param_specs and the cost model.
struct SpecBuilder {
  std::vector<ParamSpec> specs;

  void add(std::string name, Shape shape, InitKind init) {
    specs.push_back({std::move(name), std::move(shape), init});
  }
  void norm(const std::string& p, int c) {
    add(p + ".gamma", {c}, InitKind::ones);
    add(p + ".beta", {c}, InitKind::zeros);
  }
  void conv(const std::string& p, int cout, int cin, int k) {
    add(p + ".w", conv_shape(cout, cin, k), InitKind::conv_fan_in);
    add(p + ".b", {cout}, InitKind::zeros);
  }
  // GN -> ReLU -> conv
  void unit(const std::string& p, int cout, int cin, int k) {
    norm(p + ".gn", cin);
    conv(p + ".conv", cout, cin, k);
  }
  void lin(const std::string& p, int din, int dout) {
    add(p + ".w", {din, dout}, InitKind::trunc_normal);
    add(p + ".b", {dout}, InitKind::zeros);
  }
  void block(const std::string& p, int dim, int hidden) {
    norm(p + ".ln1", dim);
    for (const char* n : {"q", "k", "v", "o"}) lin(p + ".attn." + n, dim, dim);
    norm(p + ".ln2", dim);
    lin(p + ".ffn.fc1", dim, hidden);
    lin(p + ".ffn.fc2", hidden, dim);
  }
  void decoder(const std::string& p, const ModelConfig& c, int bottleneck_in, int skip_count) {
    const auto& ch = c.channels;
    const int L = c.stages;
    unit(p + ".bottleneck", ch[L - 1], bottleneck_in, 3);
    for (int lvl = L - 2; lvl >= 0; --lvl) {
      const std::string lp = p + ".l" + std::to_string(lvl);
      add(lp + ".up.w", {ch[lvl + 1], ch[lvl], 2, 2, 2}, InitKind::conv_fan_in);
      add(lp + ".up.b", {ch[lvl]}, InitKind::zeros);
      unit(lp + ".merge", ch[lvl], ch[lvl] * (1 + skip_count), 1);
      unit(lp + ".refine", ch[lvl], ch[lvl], 3);
    }
    unit(p + ".head", c.classes, ch[0], 1);
  }
};

std::vector<ParamSpec> build_specs(const ModelConfig& c) {
  c.validate();
  SpecBuilder b;
  const auto& ch = c.channels;
  const int L = c.stages;
  const int dim = c.token_dim;
  const int hidden = dim * c.ffn_multiplier;
  const int S = c.tokens_per_modality();
  for (auto m : kModalities) {
    const auto ep = enc_prefix(m);
    b.conv(ep + ".s0.conv0", ch[0], 1, 3);
    b.unit(ep + ".s0.block1", ch[0], ch[0], 3);
    for (int s = 1; s < L; ++s) {
      const auto sp = ep + ".s" + std::to_string(s);
      b.unit(sp + ".down", ch[s], ch[s - 1], 3);
      b.unit(sp + ".block1", ch[s], ch[s], 3);
    }
  }
  for (auto m : kModalities) {
    const auto ip = intra_prefix(m);
    b.add(ip + ".proj.w", {ch[L - 1], dim}, InitKind::trunc_normal);
    b.add(ip + ".pos", {S, dim}, InitKind::zeros);
    if (c.use_intra)
      for (int j = 0; j < c.intra_depth; ++j) b.block(ip + ".block" + std::to_string(j), dim, hidden);
  }
  b.add("inter.proj.w", {dim, dim}, InitKind::trunc_normal);
  b.add("inter.pos", {kNumModalities * S, dim}, InitKind::zeros);
  if (c.use_inter)
    for (int j = 0; j < c.inter_depth; ++j) b.block("inter.block" + std::to_string(j), dim, hidden);
  b.decoder("dec", c, kNumModalities * dim, kNumModalities);
  if (c.use_aux) {
    for (int lvl = L - 1; lvl >= 1; --lvl) b.unit("dec.ds" + std::to_string(lvl), c.classes, ch[lvl], 1);
    b.decoder("aux", c, ch[L - 1], 1);
  }
  return b.specs;
}

template <typename T>
BasicTensor<T> gn_relu_conv(const BasicTensor<T>& x, const BasicModelParams<T>& p,
                            const std::string& prefix, int groups, int stride) {
  const auto& w = p[prefix + ".conv.w"];
  const int k = static_cast<int>(w.shape()[2]);
  auto h = relu(group_norm(x, groups, p[prefix + ".gn.gamma"], p[prefix + ".gn.beta"]));
  return conv3d(h, w, p[prefix + ".conv.b"], stride, k / 2);
}

template <typename T>
BasicTensor<T> lin(const BasicTensor<T>& x, const BasicModelParams<T>& p, const std::string& prefix) {
  return linear(x, p[prefix + ".w"], p[prefix + ".b"]);
}

template <typename T>
BasicTensor<T> add_position(const BasicTensor<T>& tokens, const BasicTensor<T>& position) {
  const auto& ts = tokens.shape();
  if (position.rank() != 2 || position.shape()[0] != ts[1] || position.shape()[1] != ts[2])
    throw ShapeError("position embedding " + to_string(position.shape()) + " does not match tokens " +
                     to_string(ts));
  return add(tokens, reshape(position, {1, ts[1], ts[2]}));
}

template <typename T>
BasicTensor<T> split_heads(const BasicTensor<T>& x, int heads) {
  const auto S = x.shape()[1], C = x.shape()[2];
  auto h = transpose(reshape(x, {1, S, heads, C / heads}), 1, 2);
  return reshape(h, {heads, S, C / heads});
}

// Decoder shared by the main path (skip_sets = all modalities) and the
// auxiliary path (skip_sets = one modality). Returns per-level outputs,
// index lvl holding the output at resolution extent >> lvl.
template <typename T>
std::vector<BasicTensor<T>> decode_levels(const BasicTensor<T>& bottleneck_in,
                                          const std::vector<const std::vector<BasicTensor<T>>*>& skip_sets,
                                          const BasicModelParams<T>& p, const std::string& prefix,
                                          const ModelConfig& c) {
  const int L = c.stages;
  std::vector<BasicTensor<T>> levels(static_cast<std::size_t>(L));
  auto x = gn_relu_conv(bottleneck_in, p, prefix + ".bottleneck", c.groups, 1);
  levels[static_cast<std::size_t>(L - 1)] = x;
  for (int lvl = L - 2; lvl >= 0; --lvl) {
    const std::string lp = prefix + ".l" + std::to_string(lvl);
    std::vector<BasicTensor<T>> parts{conv_transpose3d(x, p[lp + ".up.w"], p[lp + ".up.b"], 2)};
    for (const auto* skips : skip_sets) parts.push_back((*skips)[static_cast<std::size_t>(lvl)]);
    auto merged = gn_relu_conv(concat(parts, 1), p, lp + ".merge", c.groups, 1);
    x = gn_relu_conv(merged, p, lp + ".refine", c.groups, 1);
    levels[static_cast<std::size_t>(lvl)] = x;
  }
  return levels;
}

void check_mask(const ModalityMask& mask) {
  if (!mask.any()) throw ConfigError("modality mask selects no modality");
}

}  // namespace

// ---- ModelConfig ----------------------------------------------------------

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.extent = 128;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (stages < 2) fail("stages must be >= 2");
  if (static_cast<int>(channels.size()) != stages)
    fail("expected " + std::to_string(stages) + " channel widths, got " + std::to_string(channels.size()));
  if (groups < 1) fail("groups must be positive");
  for (int c : channels) {
    if (c < 1) fail("channel widths must be positive");
    if (c % groups) fail("channel width " + std::to_string(c) + " not divisible by groups " + std::to_string(groups));
  }
  if (token_dim < 1 || heads < 1) fail("token_dim and heads must be positive");
  if (token_dim % heads) fail("token_dim must be divisible by heads");
  if (token_dim % groups) fail("token_dim must be divisible by groups");
  if (ffn_multiplier < 1) fail("ffn_multiplier must be positive");
  if (intra_depth < 0 || inter_depth < 0) fail("transformer depth must be non-negative");
  if (classes < 1) fail("classes must be positive");
  const int factor = 1 << (stages - 1);
  if (extent < factor || extent % factor)
    fail("extent " + std::to_string(extent) + " not divisible by " + std::to_string(factor));
}

int ModelConfig::tokens_per_modality() const {
  const int b = bottleneck_extent();
  return b * b * b;
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "stages=" << stages << '\n'
     << "channels=" << join_ints(channels) << '\n'
     << "token_dim=" << token_dim << '\n'
     << "heads=" << heads << '\n'
     << "ffn_multiplier=" << ffn_multiplier << '\n'
     << "intra_depth=" << intra_depth << '\n'
     << "inter_depth=" << inter_depth << '\n'
     << "groups=" << groups << '\n'
     << "classes=" << classes << '\n'
     << "extent=" << extent << '\n'
     << "use_intra=" << (use_intra ? 1 : 0) << '\n'
     << "use_inter=" << (use_inter ? 1 : 0) << '\n'
     << "use_aux=" << (use_aux ? 1 : 0) << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_key_values(KeyValues& kv) {
  ModelConfig c;
  c.stages = static_cast<int>(kv.take_int("stages", c.stages));
  c.channels = kv.take_int_list("channels", c.channels);
  c.token_dim = static_cast<int>(kv.take_int("token_dim", c.token_dim));
  c.heads = static_cast<int>(kv.take_int("heads", c.heads));
  c.ffn_multiplier = static_cast<int>(kv.take_int("ffn_multiplier", c.ffn_multiplier));
  c.intra_depth = static_cast<int>(kv.take_int("intra_depth", c.intra_depth));
  c.inter_depth = static_cast<int>(kv.take_int("inter_depth", c.inter_depth));
  c.groups = static_cast<int>(kv.take_int("groups", c.groups));
  c.classes = static_cast<int>(kv.take_int("classes", c.classes));
  c.extent = static_cast<int>(kv.take_int("extent", c.extent));
  c.use_intra = kv.take_bool("use_intra", c.use_intra);
  c.use_inter = kv.take_bool("use_inter", c.use_inter);
  c.use_aux = kv.take_bool("use_aux", c.use_aux);
  return c;
}

std::uint64_t ModelConfig::hash() const { return fnv1a64(to_text()); }

// ---- parameters -----------------------------------------------------------

template <typename T>
void BasicModelParams<T>::add(std::string name, BasicTensor<T> tensor) {
  if (index_.count(name)) throw Error("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

template <typename T>
const BasicTensor<T>& BasicModelParams<T>::operator[](std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw Error("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].second;
}

template <typename T>
bool BasicModelParams<T>::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename T>
std::int64_t BasicModelParams<T>::element_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

template <typename T>
void BasicModelParams<T>::set_requires_grad(bool on) {
  for (auto& [name, t] : entries_) t.set_requires_grad(on);
}

template <typename T>
void BasicModelParams<T>::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

template <typename T>
BasicModelParams<T> BasicModelParams<T>::deep_copy() const {
  BasicModelParams out;
  for (const auto& [name, t] : entries_) out.add(name, t.detach_copy());
  return out;
}

template <typename T>
std::uint64_t BasicModelParams<T>::fingerprint() const {
  std::string bytes;
  for (const auto& [name, t] : entries_) {
    bytes += name;
    bytes += to_string(t.shape());
    const auto d = t.data();
    bytes.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(T));
  }
  return fnv1a64(bytes);
}

std::vector<ParamSpec> param_specs(const ModelConfig& config) { return build_specs(config); }

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params;
  for (const auto& spec : build_specs(config)) {
    std::mt19937_64 rng(fnv1a64(spec.name) ^ seed);
    std::vector<float> data(static_cast<std::size_t>(numel(spec.shape)));
    switch (spec.init) {
      case InitKind::zeros: break;
      case InitKind::ones: std::fill(data.begin(), data.end(), 1.0f); break;
      case InitKind::trunc_normal: {
        std::normal_distribution<double> nd(0.0, 0.02);
        for (auto& v : data) {
          double x;
          do x = nd(rng);
          while (std::abs(x) > 0.04);
          v = static_cast<float>(x);
        }
        break;
      }
      case InitKind::conv_fan_in: {
        // weight [Cout,Cin,k,k,k] or, for transposed convs, [Cin,Cout,2,2,2]
        const bool transposed = spec.name.ends_with(".up.w");
        const auto k3 = spec.shape[2] * spec.shape[3] * spec.shape[4];
        const auto fan_in = transposed ? spec.shape[0] : spec.shape[1] * k3;
        std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (auto& v : data) v = static_cast<float>(nd(rng));
        break;
      }
    }
    params.add(spec.name, Tensor::from_data(spec.shape, std::move(data)));
  }
  return params;
}

ModelParams zero_params(const ModelConfig& config) {
  ModelParams params;
  for (const auto& spec : build_specs(config)) params.add(spec.name, Tensor::zeros(spec.shape));
  return params;
}

template <typename To, typename From>
BasicModelParams<To> cast_params(const BasicModelParams<From>& params) {
  BasicModelParams<To> out;
  for (const auto& [name, t] : params.entries()) out.add(name, cast<To>(t));
  return out;
}

template <typename T>
int BasicModelOutput<T>::head_count() const {
  int n = main_logits.defined() ? 1 : 0;
  for (const auto& t : encoder_aux_logits) n += t.defined() ? 1 : 0;
  return n + static_cast<int>(decoder_aux_logits.size());
}

// ---- forward pieces -------------------------------------------------------

template <typename T>
EncoderResult<T> conv_encoder_forward(const BasicTensor<T>& volume, const BasicModelParams<T>& p,
                                      const ModelConfig& c, ModalityId m) {
  const auto& s = volume.shape();
  if (s.size() != 5 || s[0] != 1 || s[1] != 1)
    throw ShapeError("encoder input must be [1,1,D,H,W], got " + to_string(s));
  const int factor = 1 << (c.stages - 1);
  for (int a = 2; a < 5; ++a)
    if (s[static_cast<std::size_t>(a)] % factor)
      throw ShapeError("encoder input extents " + to_string(s) + " not divisible by " + std::to_string(factor));
  const auto ep = enc_prefix(m);
  EncoderResult<T> r;
  auto x = conv3d(volume, p[ep + ".s0.conv0.w"], p[ep + ".s0.conv0.b"], 1, 1);
  x = gn_relu_conv(x, p, ep + ".s0.block1", c.groups, 1);
  r.stages.push_back(x);
  for (int st = 1; st < c.stages; ++st) {
    const auto sp = ep + ".s" + std::to_string(st);
    x = gn_relu_conv(x, p, sp + ".down", c.groups, 2);
    x = gn_relu_conv(x, p, sp + ".block1", c.groups, 1);
    r.stages.push_back(x);
  }
  r.local = x;
  return r;
}

template <typename T>
BasicTensor<T> tokenize(const BasicTensor<T>& local, const BasicTensor<T>& projection,
                        const BasicTensor<T>& position) {
  return add_position(linear(flatten_spatial(local), projection, BasicTensor<T>()), position);
}

template <typename T>
BasicTensor<T> attention_probabilities(const BasicTensor<T>& normed, const BasicModelParams<T>& p,
                                       const std::string& prefix, int heads) {
  const auto C = normed.shape()[2];
  if (C % heads) throw ShapeError("token dim " + std::to_string(C) + " not divisible by heads");
  auto q = split_heads(lin(normed, p, prefix + ".q"), heads);
  auto k = split_heads(lin(normed, p, prefix + ".k"), heads);
  const double dk = static_cast<double>(C / heads);
  return softmax(scale(matmul(q, k, true), 1.0 / std::sqrt(dk)), 2);
}

template <typename T>
BasicTensor<T> multi_head_self_attention(const BasicTensor<T>& normed, const BasicModelParams<T>& p,
                                         const std::string& prefix, int heads) {
  const auto S = normed.shape()[1], C = normed.shape()[2];
  auto probs = attention_probabilities(normed, p, prefix, heads);
  auto v = split_heads(lin(normed, p, prefix + ".v"), heads);
  auto h = matmul(probs, v);  // [N,S,dk]
  auto merged = reshape(transpose(reshape(h, {1, heads, S, C / heads}), 1, 2), {1, S, C});
  return lin(merged, p, prefix + ".o");
}

template <typename T>
BasicTensor<T> transformer_block(const BasicTensor<T>& tokens, const BasicModelParams<T>& p,
                                 const std::string& prefix, const ModelConfig& c) {
  auto n1 = layer_norm(tokens, p[prefix + ".ln1.gamma"], p[prefix + ".ln1.beta"]);
  auto z = add(multi_head_self_attention(n1, p, prefix + ".attn", c.heads), tokens);
  auto n2 = layer_norm(z, p[prefix + ".ln2.gamma"], p[prefix + ".ln2.beta"]);
  auto f = lin(gelu(lin(n2, p, prefix + ".ffn.fc1")), p, prefix + ".ffn.fc2");
  return add(f, z);
}

template <typename T>
BasicTensor<T> intra_modal_transformer(const BasicTensor<T>& local, const BasicModelParams<T>& p,
                                       const ModelConfig& c, ModalityId m) {
  const auto ip = intra_prefix(m);
  auto t = tokenize(local, p[ip + ".proj.w"], p[ip + ".pos"]);
  if (c.use_intra)
    for (int j = 0; j < c.intra_depth; ++j) t = transformer_block(t, p, ip + ".block" + std::to_string(j), c);
  return t;
}

template <typename T>
BasicTensor<T> build_multimodal_token(const std::array<BasicTensor<T>, kNumModalities>& globals,
                                      const ModalityMask& mask, const BasicTensor<T>& projection,
                                      const BasicTensor<T>& position) {
  check_mask(mask);
  Shape block_shape;
  for (int i = 0; i < kNumModalities; ++i)
    if (mask[i] && globals[static_cast<std::size_t>(i)].defined()) {
      block_shape = globals[static_cast<std::size_t>(i)].shape();
      break;
    }
  if (block_shape.empty()) throw ShapeError("multimodal token: no features for the present modalities");
  std::vector<BasicTensor<T>> parts;
  for (int i = 0; i < kNumModalities; ++i) {
    const auto& g = globals[static_cast<std::size_t>(i)];
    if (mask[i] && g.defined()) {
      if (g.shape() != block_shape)
        throw ShapeError("multimodal token: mismatched modality features " + to_string(g.shape()));
      parts.push_back(g);
    } else {
      parts.push_back(BasicTensor<T>::zeros(block_shape));
    }
  }
  return add_position(linear(concat(parts, 1), projection, BasicTensor<T>()), position);
}

template <typename T>
BasicTensor<T> inter_modal_transformer(const BasicTensor<T>& token, const BasicModelParams<T>& p,
                                       const ModelConfig& c) {
  auto t = token;
  if (c.use_inter)
    for (int j = 0; j < c.inter_depth; ++j) t = transformer_block(t, p, "inter.block" + std::to_string(j), c);
  return t;
}

template <typename T>
DecoderResult<T> conv_decoder_forward(
    const BasicTensor<T>& global, const std::array<std::vector<BasicTensor<T>>, kNumModalities>& skips,
    const BasicModelParams<T>& p, const ModelConfig& c) {
  const int b = c.bottleneck_extent();
  const std::int64_t S = static_cast<std::int64_t>(b) * b * b;
  const auto C = static_cast<std::int64_t>(c.token_dim);
  if (global.shape() != Shape{1, kNumModalities * S, C})
    throw ShapeError("decoder expects global tokens [1," + std::to_string(kNumModalities * S) + "," +
                     std::to_string(C) + "], got " + to_string(global.shape()));
  // Fold the modality axis into channels: channel m*C'+c at token position s.
  auto fmap = reshape(transpose(reshape(global, {1, kNumModalities, S, C}), 2, 3),
                      {1, kNumModalities * C, b, b, b});
  std::vector<const std::vector<BasicTensor<T>>*> sets;
  for (const auto& s : skips) {
    if (static_cast<int>(s.size()) != c.stages) throw ShapeError("decoder: wrong number of skip features");
    sets.push_back(&s);
  }
  auto levels = decode_levels(fmap, sets, p, "dec", c);
  DecoderResult<T> r;
  r.main_logits = gn_relu_conv(levels[0], p, "dec.head", c.groups, 1);
  if (c.use_aux) {
    const std::array<std::int64_t, 3> full{c.extent, c.extent, c.extent};
    for (int lvl = c.stages - 1; lvl >= 1; --lvl) {
      auto logits = gn_relu_conv(levels[static_cast<std::size_t>(lvl)], p, "dec.ds" + std::to_string(lvl),
                                 c.groups, 1);
      r.aux_logits.push_back(trilinear_interpolate(logits, full));
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> aux_decode_modality(const BasicTensor<T>& local, const std::vector<BasicTensor<T>>& stages,
                                   const BasicModelParams<T>& p, const ModelConfig& c) {
  auto levels = decode_levels(local, {&stages}, p, "aux", c);
  return gn_relu_conv(levels[0], p, "aux.head", c.groups, 1);
}

template <typename T>
std::array<BasicTensor<T>, kNumModalities> aux_shared_decoder_forward(
    const std::array<ModalityFeatures<T>, kNumModalities>& features, const ModalityMask& mask,
    const BasicModelParams<T>& p, const ModelConfig& c) {
  std::array<BasicTensor<T>, kNumModalities> out;
  for (int i = 0; i < kNumModalities; ++i)
    if (mask[i]) {
      const auto& f = features[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(i)] = aux_decode_modality(f.local, f.stages, p, c);
    }
  return out;
}

template <typename T>
ModalityFeatures<T> encode_modality(const BasicTensor<T>& volume, const BasicModelParams<T>& p,
                                    const ModelConfig& c, ModalityId m) {
  auto enc = conv_encoder_forward(volume, p, c, m);
  ModalityFeatures<T> f;
  f.global = intra_modal_transformer(enc.local, p, c, m);
  f.stages = std::move(enc.stages);
  f.local = std::move(enc.local);
  return f;
}

template <typename T>
ModalityFeatures<T> zero_features(const ModelConfig& c) {
  ModalityFeatures<T> f;
  for (int s = 0; s < c.stages; ++s) {
    const std::int64_t e = c.extent >> s;
    f.stages.push_back(BasicTensor<T>::zeros({1, c.channels[static_cast<std::size_t>(s)], e, e, e}));
  }
  f.local = f.stages.back();
  f.global = BasicTensor<T>::zeros({1, c.tokens_per_modality(), c.token_dim});
  return f;
}

template <typename T>
BasicModelOutput<T> forward_from_features(std::array<ModalityFeatures<T>, kNumModalities> features,
                                          const ModalityMask& mask, const BasicModelParams<T>& p,
                                          const ModelConfig& c) {
  check_mask(mask);
  for (int i = 0; i < kNumModalities; ++i)
    if (!mask[i]) features[static_cast<std::size_t>(i)] = zero_features<T>(c);
  std::array<BasicTensor<T>, kNumModalities> globals;
  std::array<std::vector<BasicTensor<T>>, kNumModalities> skips;
  for (std::size_t i = 0; i < kNumModalities; ++i) {
    globals[i] = features[i].global;
    skips[i] = features[i].stages;
  }
  auto token = build_multimodal_token(globals, mask, p["inter.proj.w"], p["inter.pos"]);
  auto global = inter_modal_transformer(token, p, c);
  auto dec = conv_decoder_forward(global, skips, p, c);
  BasicModelOutput<T> out;
  out.main_logits = dec.main_logits;
  out.decoder_aux_logits = std::move(dec.aux_logits);
  if (c.use_aux) {
    const auto& full = out.main_logits.shape();
    out.encoder_aux_logits = aux_shared_decoder_forward(features, mask, p, c);
    for (int i = 0; i < kNumModalities; ++i) {
      auto& h = out.encoder_aux_logits[static_cast<std::size_t>(i)];
      if (h.defined() && h.shape() != full) throw ShapeError("auxiliary head shape mismatch");
    }
  }
  return out;
}

template <typename T>
BasicModelOutput<T> mmformer_forward(const std::array<BasicTensor<T>, kNumModalities>& volumes,
                                     const ModalityMask& mask, const BasicModelParams<T>& p,
                                     const ModelConfig& c) {
  check_mask(mask);
  const Shape expected{1, 1, c.extent, c.extent, c.extent};
  std::array<ModalityFeatures<T>, kNumModalities> features;
  for (int i = 0; i < kNumModalities; ++i) {
    if (!mask[i]) continue;
    const auto& v = volumes[static_cast<std::size_t>(i)];
    if (!v.defined() || v.shape() != expected)
      throw ShapeError("volume for " + std::string(modality_name(kModalities[static_cast<std::size_t>(i)])) +
                       " must be " + to_string(expected));
    features[static_cast<std::size_t>(i)] = encode_modality(v, p, c, kModalities[static_cast<std::size_t>(i)]);
  }
  return forward_from_features(std::move(features), mask, p, c);
}

// ---- cost model -----------------------------------------------------------

ModelCost count_params_flops(const ModelConfig& c) {
  ModelCost cost;
  for (const auto& s : build_specs(c)) cost.parameters += numel(s.shape);

  const auto& ch = c.channels;
  const int L = c.stages;
  auto vox = [&](int lvl) {
    const double e = c.extent >> lvl;
    return e * e * e;
  };
  auto conv = [&](int cout, int cin, int k, int out_lvl) {
    return 2.0 * cout * cin * k * k * k * vox(out_lvl);
  };
  const double S = c.tokens_per_modality();
  const double dim = c.token_dim;
  const double hidden = dim * c.ffn_multiplier;
  auto block = [&](double seq) {
    return 2.0 * seq * dim * dim * 4 + 2.0 * seq * seq * dim * 2 + 2.0 * seq * dim * hidden * 2;
  };
  auto decoder = [&](int in_ch, int skip_count) {
    double f = conv(ch[L - 1], in_ch, 3, L - 1);
    for (int lvl = L - 2; lvl >= 0; --lvl) {
      f += 2.0 * ch[lvl + 1] * ch[lvl] * 8 * vox(lvl + 1);
      f += conv(ch[lvl], ch[lvl] * (1 + skip_count), 1, lvl);
      f += conv(ch[lvl], ch[lvl], 3, lvl);
    }
    return f + conv(c.classes, ch[0], 1, 0);
  };

  double per_modality = conv(ch[0], 1, 3, 0) + conv(ch[0], ch[0], 3, 0);
  for (int s = 1; s < L; ++s) per_modality += conv(ch[s], ch[s - 1], 3, s) + conv(ch[s], ch[s], 3, s);
  per_modality += 2.0 * S * ch[L - 1] * dim;
  if (c.use_intra) per_modality += c.intra_depth * block(S);

  double f = kNumModalities * per_modality;
  f += 2.0 * kNumModalities * S * dim * dim;
  if (c.use_inter) f += c.inter_depth * block(kNumModalities * S);
  f += decoder(kNumModalities * c.token_dim, kNumModalities);
  if (c.use_aux) {
    for (int lvl = 1; lvl < L; ++lvl) f += conv(c.classes, ch[lvl], 1, lvl);
    f += kNumModalities * decoder(ch[L - 1], 1);
  }
  cost.forward_flops = f;
  return cost;
}

// ---- instantiation --------------------------------------------------------

#define MMF_INSTANTIATE(T)                                                                              \
  template class BasicModelParams<T>;                                                                   \
  template struct BasicModelOutput<T>;                                                                  \
  template EncoderResult<T> conv_encoder_forward(const BasicTensor<T>&, const BasicModelParams<T>&,     \
                                                 const ModelConfig&, ModalityId);                       \
  template BasicTensor<T> tokenize(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> attention_probabilities(const BasicTensor<T>&, const BasicModelParams<T>&,    \
                                                  const std::string&, int);                             \
  template BasicTensor<T> multi_head_self_attention(const BasicTensor<T>&, const BasicModelParams<T>&,  \
                                                    const std::string&, int);                           \
  template BasicTensor<T> transformer_block(const BasicTensor<T>&, const BasicModelParams<T>&,          \
                                            const std::string&, const ModelConfig&);                    \
  template BasicTensor<T> intra_modal_transformer(const BasicTensor<T>&, const BasicModelParams<T>&,    \
                                                  const ModelConfig&, ModalityId);                      \
  template BasicTensor<T> build_multimodal_token(const std::array<BasicTensor<T>, kNumModalities>&,     \
                                                 const ModalityMask&, const BasicTensor<T>&,            \
                                                 const BasicTensor<T>&);                                \
  template BasicTensor<T> inter_modal_transformer(const BasicTensor<T>&, const BasicModelParams<T>&,    \
                                                  const ModelConfig&);                                  \
  template DecoderResult<T> conv_decoder_forward(                                                       \
      const BasicTensor<T>&, const std::array<std::vector<BasicTensor<T>>, kNumModalities>&,            \
      const BasicModelParams<T>&, const ModelConfig&);                                                  \
  template BasicTensor<T> aux_decode_modality(const BasicTensor<T>&, const std::vector<BasicTensor<T>>&, \
                                              const BasicModelParams<T>&, const ModelConfig&);          \
  template std::array<BasicTensor<T>, kNumModalities> aux_shared_decoder_forward(                       \
      const std::array<ModalityFeatures<T>, kNumModalities>&, const ModalityMask&,                      \
      const BasicModelParams<T>&, const ModelConfig&);                                                  \
  template ModalityFeatures<T> encode_modality(const BasicTensor<T>&, const BasicModelParams<T>&,       \
                                               const ModelConfig&, ModalityId);                         \
  template ModalityFeatures<T> zero_features(const ModelConfig&);                                       \
  template BasicModelOutput<T> forward_from_features(std::array<ModalityFeatures<T>, kNumModalities>,   \
                                                     const ModalityMask&, const BasicModelParams<T>&,   \
                                                     const ModelConfig&);                               \
  template BasicModelOutput<T> mmformer_forward(const std::array<BasicTensor<T>, kNumModalities>&,      \
                                                const ModalityMask&, const BasicModelParams<T>&,        \
                                                const ModelConfig&);

MMF_INSTANTIATE(float)
MMF_INSTANTIATE(double)
#undef MMF_INSTANTIATE

template BasicModelParams<double> cast_params<double, float>(const BasicModelParams<float>&);
template BasicModelParams<float> cast_params<float, double>(const BasicModelParams<double>&);

}  // namespace mmf
