#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mmformer/config.hpp"
#include "mmformer/losses.hpp"
#include "mmformer/model.hpp"
#include "mmformer/synth.hpp"

namespace mmf {

enum class MaskPolicy { uniform_subsets, independent_bernoulli, full };

std::string_view mask_policy_name(MaskPolicy p);
MaskPolicy parse_mask_policy(std::string_view name);

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 1;
  int steps_per_epoch = 0;  // 0: one pass over the training set
  int batch_size = 1;
  MaskPolicy mask_policy = MaskPolicy::uniform_subsets;
  double drop_probability = 0.5;  // per modality, independent_bernoulli only
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 disables
  bool augment = true;
  bool poly_decay = false;  // lr * (1 - epoch/epochs)^0.9
  double clip_norm = 0;     // global gradient norm; 0 disables

  void validate() const;  // throws ConfigError
  std::string to_text() const;
  static TrainConfig from_key_values(KeyValues& kv);
  bool operator==(const TrainConfig&) const = default;
};

/// Adam moments and per-parameter step counts, aligned with the parameter
/// order of a ModelParams.
struct AdamState {
  std::vector<std::vector<float>> m, v;
  std::vector<std::int64_t> steps;

  static AdamState zeros_like(const ModelParams& params);
  bool operator==(const AdamState&) const = default;
};

/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps), using the gradients held by
/// the parameters. Parameters without a gradient buffer are left untouched and
/// keep their step count.
void adam_step(ModelParams& params, AdamState& state, const TrainConfig& config, double lr);

/// Explicit-gradient form; `grads[i]` pairs with parameter i.
void adam_step(ModelParams& params, const std::vector<std::vector<float>>& grads, AdamState& state,
               const TrainConfig& config, double lr);

ModalityMask sample_modality_mask(std::mt19937_64& rng, MaskPolicy policy = MaskPolicy::uniform_subsets,
                                  double drop_probability = 0.5);

/// Trainer state captured by checkpoints.
struct TrainState {
  ModelParams params;
  AdamState adam;
  std::mt19937_64 rng;
  int epoch = 0;  // completed epochs
  std::vector<double> loss_history;  // mean total loss per epoch
};

TrainState init_train_state(const ModelConfig& model, const TrainConfig& train);

/// Forward with `mask`, Dice losses, backward and one Adam update. The sample
/// is used as given (already normalised/augmented, extents equal to the model's).
LossReport train_step(ModelParams& params, AdamState& adam, const ModelConfig& model,
                      const TrainConfig& train, const Sample& sample, const ModalityMask& mask, double lr);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0;
  double lr = 0;
};

/// Runs epochs state.epoch .. train.epochs-1. Samples are normalised per
/// modality before use. With a checkpoint path and cadence, writes a
/// checkpoint after every `checkpoint_every` completed epochs.
void train_loop(TrainState& state, const std::vector<Sample>& data, const ModelConfig& model,
                const TrainConfig& train, const std::filesystem::path& checkpoint_path = {},
                const std::function<void(const EpochLog&)>& on_epoch = {});

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  TrainState state;
};

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& model, const TrainConfig& train,
                     const TrainState& state);

/// Throws FormatError on bad magic/version/truncation and ConfigError when the
/// stored model config differs from `expected` (if given). Nothing is returned
/// unless the whole file parsed.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace mmf
