#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmformer/config.hpp"
#include "mmformer/modality.hpp"
#include "mmformer/tensor.hpp"

namespace mmf {

/// Architecture hyperparameters.
struct ModelConfig {
  int stages = 5;
  std::vector<int> channels = {16, 32, 64, 128, 256};
  int token_dim = 256;
  int heads = 8;
  int ffn_multiplier = 4;
  int intra_depth = 1;
  int inter_depth = 1;
  int groups = 8;
  int classes = 3;
  int extent = 32;
  bool use_intra = true;
  bool use_inter = true;
  bool use_aux = true;

  static ModelConfig paper_scale();

  void validate() const;  // throws ConfigError
  int bottleneck_extent() const { return extent >> (stages - 1); }
  int tokens_per_modality() const;  // S = D*H*W / 2^(3(l-1))

  // Canonical `key=value` rendering; also the input of `hash()`.
  std::string to_text() const;
  static ModelConfig from_key_values(KeyValues& kv);
  std::uint64_t hash() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class InitKind { conv_fan_in, trunc_normal, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init;
};

/// Named parameter set. Iteration order is insertion order and is a pure
/// function of the config.
template <typename T>
class BasicModelParams {
 public:
  using Entry = std::pair<std::string, BasicTensor<T>>;

  void add(std::string name, BasicTensor<T> tensor);
  const BasicTensor<T>& operator[](std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::int64_t element_count() const;

  void set_requires_grad(bool on);
  void zero_grad();
  BasicModelParams deep_copy() const;
  // FNV-1a over names, shapes and raw bytes.
  std::uint64_t fingerprint() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ModelParams = BasicModelParams<float>;

std::vector<ParamSpec> param_specs(const ModelConfig& config);
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);
// Same names and shapes, every value zero.
ModelParams zero_params(const ModelConfig& config);

template <typename To, typename From>
BasicModelParams<To> cast_params(const BasicModelParams<From>& params);

template <typename T>
struct BasicModelOutput {
  BasicTensor<T> main_logits;
  // Per-modality logits of the shared auxiliary decoder; undefined when the
  // modality is masked or the auxiliary heads are disabled.
  std::array<BasicTensor<T>, kNumModalities> encoder_aux_logits;
  // Deep-supervision logits, deepest stage first, upsampled to full size.
  std::vector<BasicTensor<T>> decoder_aux_logits;

  int head_count() const;
};

using ModelOutput = BasicModelOutput<float>;

/// Per-modality encoder products.
template <typename T>
struct ModalityFeatures {
  std::vector<BasicTensor<T>> stages;  // stage outputs, full resolution first
  BasicTensor<T> local;                // last stage, [1,C_l,D/2^(l-1),...]
  BasicTensor<T> global;               // [1,S,C']
};

template <typename T>
struct EncoderResult {
  std::vector<BasicTensor<T>> stages;
  BasicTensor<T> local;
};

template <typename T>
EncoderResult<T> conv_encoder_forward(const BasicTensor<T>& volume,
                                      const BasicModelParams<T>& params,
                                      const ModelConfig& config, ModalityId m);

/// flatten(F_local) * W + P.
template <typename T>
BasicTensor<T> tokenize(const BasicTensor<T>& local, const BasicTensor<T>& projection,
                        const BasicTensor<T>& position);

/// Softmax(QK^T / sqrt(d_k)) per head, shape [heads, S, S]. `normed` are
/// layer-normalised tokens [1,S,C'].
template <typename T>
BasicTensor<T> attention_probabilities(const BasicTensor<T>& normed,
                                       const BasicModelParams<T>& params,
                                       const std::string& prefix, int heads);

template <typename T>
BasicTensor<T> multi_head_self_attention(const BasicTensor<T>& normed,
                                         const BasicModelParams<T>& params,
                                         const std::string& prefix, int heads);

/// z = MSA(LN(t)) + t; out = FFN(LN(z)) + z.
template <typename T>
BasicTensor<T> transformer_block(const BasicTensor<T>& tokens, const BasicModelParams<T>& params,
                                 const std::string& prefix, const ModelConfig& config);

template <typename T>
BasicTensor<T> intra_modal_transformer(const BasicTensor<T>& local,
                                       const BasicModelParams<T>& params,
                                       const ModelConfig& config, ModalityId m);

/// Concatenates delta_m * F_global_m in canonical order, then projects and adds
/// the shared position embedding. Undefined entries stand for zero blocks.
template <typename T>
BasicTensor<T> build_multimodal_token(const std::array<BasicTensor<T>, kNumModalities>& globals,
                                      const ModalityMask& mask, const BasicTensor<T>& projection,
                                      const BasicTensor<T>& position);

template <typename T>
BasicTensor<T> inter_modal_transformer(const BasicTensor<T>& token,
                                       const BasicModelParams<T>& params,
                                       const ModelConfig& config);

template <typename T>
struct DecoderResult {
  BasicTensor<T> main_logits;
  std::vector<BasicTensor<T>> aux_logits;
};

/// `skips[m]` holds modality m's stage features; masked modalities must be
/// zero tensors of the right shape.
template <typename T>
DecoderResult<T> conv_decoder_forward(
    const BasicTensor<T>& global, const std::array<std::vector<BasicTensor<T>>, kNumModalities>& skips,
    const BasicModelParams<T>& params, const ModelConfig& config);

/// Shared-weight decoder applied to one modality's encoder output.
template <typename T>
BasicTensor<T> aux_decode_modality(const BasicTensor<T>& local,
                                   const std::vector<BasicTensor<T>>& stages,
                                   const BasicModelParams<T>& params, const ModelConfig& config);

template <typename T>
std::array<BasicTensor<T>, kNumModalities> aux_shared_decoder_forward(
    const std::array<ModalityFeatures<T>, kNumModalities>& features, const ModalityMask& mask,
    const BasicModelParams<T>& params, const ModelConfig& config);

/// Encoder + intra-modal Transformer for one modality.
template <typename T>
ModalityFeatures<T> encode_modality(const BasicTensor<T>& volume, const BasicModelParams<T>& params,
                                    const ModelConfig& config, ModalityId m);

/// Zero features with the shapes an encoder would produce.
template <typename T>
ModalityFeatures<T> zero_features(const ModelConfig& config);

/// Fusion and decoding from precomputed per-modality features. Entries of
/// masked modalities are ignored and replaced by zeros.
template <typename T>
BasicModelOutput<T> forward_from_features(std::array<ModalityFeatures<T>, kNumModalities> features,
                                          const ModalityMask& mask,
                                          const BasicModelParams<T>& params,
                                          const ModelConfig& config);

/// Full network. Volumes are [1,1,D,H,W]; masked volumes are never read.
template <typename T>
BasicModelOutput<T> mmformer_forward(const std::array<BasicTensor<T>, kNumModalities>& volumes,
                                     const ModalityMask& mask, const BasicModelParams<T>& params,
                                     const ModelConfig& config);

struct ModelCost {
  std::int64_t parameters = 0;
  double forward_flops = 0;  // multiply-adds counted as 2 FLOPs, all modalities present
};

ModelCost count_params_flops(const ModelConfig& config);

}  // namespace mmf
