#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mmformer/losses.hpp"
#include "mmformer/model.hpp"
#include "mmformer/synth.hpp"
#include "mmformer/train.hpp"

namespace mmf {

inline constexpr int kNumSubsets = 15;

/// All non-empty modality subsets: singletons, pairs, triples, then the full
/// set. Within a size, subsets are ordered lexicographically with FLAIR first.
std::array<ModalityMask, kNumSubsets> enumerate_subsets();

struct DscRow {
  ModalityMask mask;
  RegionDsc dsc;  // percents
};

struct DscTable {
  std::string label;
  std::vector<DscRow> rows;

  RegionDsc average() const;  // column means; zeros for an empty table
  bool is_full_sweep() const; // the 15 subsets in canonical order
};

/// Forwards every sample once per mask (default: all 15) and averages the
/// per-region DSC over samples. Samples are normalised copies; the parameters
/// are only read.
DscTable evaluate_subsets(const ModelParams& params, const std::vector<Sample>& samples, const ModelConfig& model,
                          const std::vector<ModalityMask>& masks = {});

struct MissingCountSummary {
  std::array<RegionDsc, 4> mean;    // index k = number of missing modalities
  std::array<int, 4> group_size{};  // 1, 4, 6, 4
};

/// Throws ConfigError unless the table is a full sweep.
MissingCountSummary aggregate_by_missing_count(const DscTable& table);

enum class Variant { full, no_intra, no_inter, no_aux };
inline constexpr std::array<Variant, 4> kVariants = {Variant::full, Variant::no_intra, Variant::no_inter,
                                                     Variant::no_aux};

std::string_view variant_label(Variant v);  // "mmFormer", "w/o IntraTrans", ...
std::string_view variant_key(Variant v);    // "full", "no-intra", ...
Variant parse_variant(std::string_view key);
ModelConfig apply_variant(ModelConfig base, Variant v);

struct AblationResult {
  Variant variant = Variant::full;
  std::int64_t parameters = 0;
  double final_loss = 0;
  DscTable table;
};

/// Trains each variant from the same seed on `data.train` and sweeps the
/// subsets on `data.val`.
std::vector<AblationResult> run_ablation(const Dataset& data, const ModelConfig& base, const TrainConfig& train,
                                         const std::vector<Variant>& variants = {kVariants.begin(), kVariants.end()},
                                         const std::function<void(Variant, const EpochLog&)>& on_epoch = {});

enum class ReportFormat { csv, markdown };
ReportFormat parse_report_format(std::string_view name);

/// Percentages with two decimals; an Average row is always appended.
std::string format_report(const DscTable& table, ReportFormat format);
std::string format_summary(const MissingCountSummary& summary, ReportFormat format);
std::string format_ablation(const std::vector<AblationResult>& results, ReportFormat format);

/// Inverse of format_report for CSV (the Average row is dropped). Throws FormatError.
DscTable parse_report_csv(std::string_view text);

/// Everything a CLI run needs, read from one key=value file.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  PhantomConfig phantom;
  int samples = 20;
  std::uint64_t data_seed = 1;

  void validate() const;
  std::string to_text() const;
  static ExperimentConfig from_text(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

}  // namespace mmf
