#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "mmformer/losses.hpp"
#include "mmformer/modality.hpp"
#include "mmformer/tensor.hpp"

namespace mmf {

using Extents3 = std::array<std::int64_t, 3>;

/// Label codes.
enum LabelCode : std::uint8_t { kBackground = 0, kEdema = 1, kCore = 2, kEnhancing = 3 };

struct RadiusRange {
  double min = 0, max = 0;  // fractions of the volume extent
};

struct PhantomConfig {
  int extent = 32;
  int min_tumors = 1;
  int max_tumors = 2;
  RadiusRange wt_radius{0.16, 0.26};
  RadiusRange tc_radius{0.09, 0.14};
  RadiusRange et_radius{0.04, 0.08};
  // Intensity offset of each labelled region over healthy tissue, indexed
  // [modality][code - 1] (edema, non-enhancing core, enhancing).
  std::array<std::array<float, 3>, kNumModalities> contrast{{
      {1.0f, 0.8f, 0.8f},    // FLAIR
      {0.0f, 0.3f, 1.2f},    // T1c
      {-0.2f, -0.3f, -0.2f}, // T1
      {0.8f, 1.0f, 0.9f},    // T2
  }};
  double texture_amplitude = 0.2;
  double noise_std = 0.1;

  void validate() const;  // throws ConfigError
};

struct Sample {
  Extents3 extents{};
  std::array<std::vector<float>, kNumModalities> volumes;
  std::vector<std::uint8_t> labels;
  std::uint64_t seed = 0;

  std::size_t voxel_count() const { return static_cast<std::size_t>(extents[0] * extents[1] * extents[2]); }
  Tensor volume_tensor(ModalityId m) const;  // [1,1,D,H,W]
  std::array<Tensor, kNumModalities> volume_tensors() const;
  RegionTargets regions() const;
};

Sample generate_phantom(std::uint64_t seed, const PhantomConfig& config);

/// Zero mean, unit variance per modality.
void normalize_sample(Sample& sample);

/// Reverses the selected axes of a row-major volume.
template <typename V>
std::vector<V> flip_volume(const std::vector<V>& volume, const Extents3& extents, std::array<bool, 3> axes);

/// Random flip, crop to `crop_extent` cubed, and per-modality intensity shift
/// in [-0.1, 0.1]. Geometry is shared by all volumes and the labels.
Sample augment(const Sample& sample, std::uint64_t seed, int crop_extent);

struct VolumeFile {
  std::vector<std::uint32_t> extents;
  std::variant<std::vector<float>, std::vector<std::uint8_t>> data;
};

void save_volume(const std::filesystem::path& path, const std::vector<float>& data,
                 const std::vector<std::uint32_t>& extents);
void save_volume(const std::filesystem::path& path, const std::vector<std::uint8_t>& data,
                 const std::vector<std::uint32_t>& extents);
VolumeFile load_volume(const std::filesystem::path& path);

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

/// Deterministic per-index seed derived from a dataset seed.
std::uint64_t sample_seed(std::uint64_t dataset_seed, std::uint64_t index);

/// n phantoms split 80/20 (at least one on each side).
Dataset make_dataset(int n, std::uint64_t seed, const PhantomConfig& config);

}  // namespace mmf
