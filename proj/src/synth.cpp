#include "mmformer/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

namespace mmf {
namespace {

constexpr char kVolumeMagic[16] = {'M', 'M', 'F', 'V', 'O', 'L', '0', '1'};
constexpr std::uint8_t kTagF32 = 0, kTagU8 = 1;

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

std::size_t idx(const Extents3& e, std::int64_t z, std::int64_t y, std::int64_t x) {
  return static_cast<std::size_t>((z * e[1] + y) * e[2] + x);
}

struct Ellipsoid {
  std::array<double, 3> centre, radii;
  bool contains(double z, double y, double x) const {
    const double a = (z - centre[0]) / radii[0], b = (y - centre[1]) / radii[1], c = (x - centre[2]) / radii[2];
    return a * a + b * b + c * c <= 1.0;
  }
};

Ellipsoid random_child(const Ellipsoid& parent, double radius, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> aniso(0.85, 1.15), unit(-1.0, 1.0);
  Ellipsoid e;
  for (int a = 0; a < 3; ++a) {
    e.radii[a] = std::min(radius * aniso(rng), parent.radii[a] * 0.9);
    // keep the child centre well inside the parent
    e.centre[a] = parent.centre[a] + 0.4 * (parent.radii[a] - e.radii[a]) * unit(rng);
  }
  return e;
}

template <typename V>
void write_volume(const std::filesystem::path& path, const std::vector<V>& data,
                  const std::vector<std::uint32_t>& extents, std::uint8_t tag) {
  std::uint64_t count = 1;
  for (auto e : extents) count *= e;
  if (count != data.size()) throw ShapeError("save_volume: extents do not match data length");
  if (extents.size() > 255) throw ShapeError("save_volume: rank too large");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kVolumeMagic, sizeof kVolumeMagic);
  const std::uint8_t rank = static_cast<std::uint8_t>(extents.size());
  out.put(static_cast<char>(tag));
  out.put(static_cast<char>(rank));
  out.write(reinterpret_cast<const char*>(extents.data()), static_cast<std::streamsize>(extents.size() * 4));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(V)));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void PhantomConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("phantom config: " + m); };
  if (extent < 16 || extent % 16) fail("extent must be a positive multiple of 16");
  if (min_tumors < 1 || max_tumors < min_tumors) fail("tumour count range invalid");
  for (const auto* r : {&wt_radius, &tc_radius, &et_radius})
    if (r->min <= 0 || r->max < r->min) fail("radius range invalid");
  if (!(et_radius.max < tc_radius.min && tc_radius.max < wt_radius.min))
    fail("radius ordering violated: need et < tc < wt");
  if (wt_radius.max >= 0.5) fail("whole-tumour radius must stay below half the extent");
  if (noise_std < 0 || texture_amplitude < 0) fail("noise and texture must be non-negative");
}

Tensor Sample::volume_tensor(ModalityId m) const {
  return Tensor::from_data({1, 1, extents[0], extents[1], extents[2]}, volumes[static_cast<std::size_t>(m)]);
}

std::array<Tensor, kNumModalities> Sample::volume_tensors() const {
  std::array<Tensor, kNumModalities> out;
  for (auto m : kModalities) out[static_cast<std::size_t>(m)] = volume_tensor(m);
  return out;
}

RegionTargets Sample::regions() const { return labels_to_nested_regions(labels, extents); }

Sample generate_phantom(std::uint64_t seed, const PhantomConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::int64_t E = config.extent;
  Sample s;
  s.seed = seed;
  s.extents = {E, E, E};
  const auto n = s.voxel_count();
  s.labels.assign(n, kBackground);

  std::uniform_int_distribution<int> count(config.min_tumors, config.max_tumors);
  auto radius = [&](const RadiusRange& r) { return std::uniform_real_distribution<double>(r.min, r.max)(rng) * E; };
  const int tumours = count(rng);
  for (int t = 0; t < tumours; ++t) {
    Ellipsoid wt;
    const double r = radius(config.wt_radius);
    std::uniform_real_distribution<double> aniso(0.85, 1.15);
    for (int a = 0; a < 3; ++a) {
      wt.radii[a] = std::min(r * aniso(rng), 0.45 * static_cast<double>(E));
      std::uniform_real_distribution<double> c(wt.radii[a], static_cast<double>(E) - wt.radii[a]);
      wt.centre[a] = c(rng);
    }
    const Ellipsoid tc = random_child(wt, radius(config.tc_radius), rng);
    const Ellipsoid et = random_child(tc, radius(config.et_radius), rng);
    for (std::int64_t z = 0; z < E; ++z)
      for (std::int64_t y = 0; y < E; ++y)
        for (std::int64_t x = 0; x < E; ++x) {
          const double pz = z + 0.5, py = y + 0.5, px = x + 0.5;
          std::uint8_t code = kBackground;
          if (et.contains(pz, py, px)) code = kEnhancing;
          else if (tc.contains(pz, py, px)) code = kCore;
          else if (wt.contains(pz, py, px)) code = kEdema;
          auto& l = s.labels[idx(s.extents, z, y, x)];
          l = std::max(l, code);
        }
  }

  // Low-frequency texture per modality: a few random plane waves.
  std::uniform_real_distribution<double> freq(0.5, 2.0), phase(0.0, 2 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto m : kModalities) {
    struct Wave {
      double fz, fy, fx, ph;
    };
    std::array<Wave, 3> waves;
    for (auto& w : waves) w = {freq(rng), freq(rng), freq(rng), phase(rng)};
    const auto& contrast = config.contrast[static_cast<std::size_t>(m)];
    auto& vol = s.volumes[static_cast<std::size_t>(m)];
    vol.resize(n);
    for (std::int64_t z = 0; z < E; ++z)
      for (std::int64_t y = 0; y < E; ++y)
        for (std::int64_t x = 0; x < E; ++x) {
          double v = 0;
          for (const auto& w : waves)
            v += std::cos(2 * std::numbers::pi * (w.fz * z + w.fy * y + w.fx * x) / static_cast<double>(E) + w.ph);
          v *= config.texture_amplitude / static_cast<double>(waves.size());
          const auto i = idx(s.extents, z, y, x);
          if (s.labels[i] != kBackground) v += contrast[s.labels[i] - 1];
          if (config.noise_std > 0) v += config.noise_std * noise(rng);
          vol[i] = static_cast<float>(v);
        }
  }
  return s;
}

void normalize_sample(Sample& sample) {
  for (auto& vol : sample.volumes) {
    double sum = 0, sq = 0;
    for (float v : vol) sum += v;
    const double mean = sum / static_cast<double>(vol.size());
    for (float v : vol) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(vol.size()));
    const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
    for (float& v : vol) v = static_cast<float>((v - mean) * inv);
  }
}

template <typename V>
std::vector<V> flip_volume(const std::vector<V>& volume, const Extents3& e, std::array<bool, 3> axes) {
  std::vector<V> out(volume.size());
  for (std::int64_t z = 0; z < e[0]; ++z)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t x = 0; x < e[2]; ++x) {
        const auto sz = axes[0] ? e[0] - 1 - z : z;
        const auto sy = axes[1] ? e[1] - 1 - y : y;
        const auto sx = axes[2] ? e[2] - 1 - x : x;
        out[idx(e, z, y, x)] = volume[idx(e, sz, sy, sx)];
      }
  return out;
}

template std::vector<float> flip_volume(const std::vector<float>&, const Extents3&, std::array<bool, 3>);
template std::vector<std::uint8_t> flip_volume(const std::vector<std::uint8_t>&, const Extents3&, std::array<bool, 3>);

Sample augment(const Sample& sample, std::uint64_t seed, int crop_extent) {
  const auto& e = sample.extents;
  if (crop_extent < 16 || crop_extent % 16)
    throw ConfigError("crop extent must be a positive multiple of 16");
  for (auto x : e)
    if (crop_extent > x) throw ConfigError("crop extent " + std::to_string(crop_extent) + " exceeds volume");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::array<bool, 3> flips{coin(rng), coin(rng), coin(rng)};
  std::array<std::int64_t, 3> offset{};
  for (int a = 0; a < 3; ++a)
    offset[static_cast<std::size_t>(a)] =
        std::uniform_int_distribution<std::int64_t>(0, e[static_cast<std::size_t>(a)] - crop_extent)(rng);
  std::uniform_real_distribution<float> shift(-0.1f, 0.1f);
  std::array<float, kNumModalities> shifts;
  for (auto& s : shifts) s = shift(rng);

  const Extents3 ce{crop_extent, crop_extent, crop_extent};
  auto crop = [&](const auto& vol) {
    std::remove_cvref_t<decltype(vol)> out(static_cast<std::size_t>(ce[0] * ce[1] * ce[2]));
    for (std::int64_t z = 0; z < ce[0]; ++z)
      for (std::int64_t y = 0; y < ce[1]; ++y)
        for (std::int64_t x = 0; x < ce[2]; ++x)
          out[idx(ce, z, y, x)] = vol[idx(e, z + offset[0], y + offset[1], x + offset[2])];
    return flip_volume(out, ce, flips);
  };

  Sample out;
  out.extents = ce;
  out.seed = sample.seed;
  out.labels = crop(sample.labels);
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    out.volumes[m] = crop(sample.volumes[m]);
    for (float& v : out.volumes[m]) v += shifts[m];
  }
  return out;
}

void save_volume(const std::filesystem::path& path, const std::vector<float>& data,
                 const std::vector<std::uint32_t>& extents) {
  write_volume(path, data, extents, kTagF32);
}

void save_volume(const std::filesystem::path& path, const std::vector<std::uint8_t>& data,
                 const std::vector<std::uint32_t>& extents) {
  write_volume(path, data, extents, kTagU8);
}

VolumeFile load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (bytes.size() < 18 || std::memcmp(bytes.data(), kVolumeMagic, sizeof kVolumeMagic) != 0)
    throw FormatError("bad volume magic" + where);
  const auto tag = static_cast<std::uint8_t>(bytes[16]);
  const auto rank = static_cast<std::uint8_t>(bytes[17]);
  if (tag != kTagF32 && tag != kTagU8) throw FormatError("unknown dtype tag " + std::to_string(tag) + where);
  std::size_t pos = 18;
  if (bytes.size() < pos + 4u * rank) throw FormatError("truncated volume header" + where);
  VolumeFile vf;
  vf.extents.resize(rank);
  std::memcpy(vf.extents.data(), bytes.data() + pos, 4u * rank);
  pos += 4u * rank;
  std::uint64_t count = 1;
  for (auto e : vf.extents) {
    if (e == 0) throw FormatError("zero extent" + where);
    if (count > std::numeric_limits<std::uint64_t>::max() / e) throw FormatError("extent overflow" + where);
    count *= e;
  }
  const std::uint64_t elem = tag == kTagF32 ? 4 : 1;
  if (count > (std::numeric_limits<std::uint64_t>::max() / elem)) throw FormatError("extent overflow" + where);
  const std::uint64_t payload = bytes.size() - pos;
  if (payload != count * elem)
    throw FormatError("payload has " + std::to_string(payload) + " bytes, header implies " +
                      std::to_string(count * elem) + where);
  if (tag == kTagF32) {
    std::vector<float> d(count);
    std::memcpy(d.data(), bytes.data() + pos, payload);
    vf.data = std::move(d);
  } else {
    vf.data = std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  }
  return vf;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::uint64_t index) {
  // splitmix64 finaliser over (seed, index)
  std::uint64_t z = dataset_seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Dataset make_dataset(int n, std::uint64_t seed, const PhantomConfig& config) {
  if (n < 2) throw ConfigError("dataset needs at least 2 samples");
  const int n_train = std::clamp((n * 8 + 5) / 10, 1, n - 1);
  Dataset ds;
  for (int i = 0; i < n; ++i) {
    auto s = generate_phantom(sample_seed(seed, static_cast<std::uint64_t>(i)), config);
    (i < n_train ? ds.train : ds.val).push_back(std::move(s));
  }
  return ds;
}

}  // namespace mmf
