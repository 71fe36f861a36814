// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "moec/nn/matrix.hpp"

namespace moec {

class Rng;

/// Intensities are trained in [0, kNormalizedPeak].
inline constexpr double kNormalizedPeak = 100.0;

/// Voxel extents. Flat index = (x·W + y)·D + z, so z varies fastest.
struct Dims {
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t d = 1;

  std::size_t total() const noexcept { return h * w * d; }
  std::array<std::size_t, 3> as_array() const noexcept { return {h, w, d}; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

enum class Endianness { little, big };

/// Dense scalar grid, stored normalized to [0, 100]. `lo`/`hi` are the
/// original intensities that map to 0 and 100.
struct Volume {
  Dims dims;
  int voxel_bits = 8;
  std::vector<double> data;
  double lo = 0.0;
  double hi = 1.0;

  std::size_t voxel_count() const noexcept { return dims.total(); }
  std::size_t source_bytes() const noexcept {
    return dims.total() * static_cast<std::size_t>(voxel_bits / 8);
  }
  double range() const noexcept { return hi - lo; }

  double original(std::size_t i) const noexcept { return lo + data[i] / kNormalizedPeak * (hi - lo); }
  std::vector<double> original_values() const;

  /// Original-scale values rounded and clamped to the source integer type,
  /// which is exactly what `save_raw` writes.
  std::vector<std::uint32_t> source_values() const;
};

/// Normalizes original-scale values with (lo, hi) = (min, max). A constant
/// input gets hi = lo + 1 and a warning on stderr.
Volume make_volume(Dims dims, int voxel_bits, std::span<const double> original);

/// Like `make_volume` but with a fixed (lo, hi), e.g. the range recorded in
/// an artifact header.
Volume make_volume(Dims dims, int voxel_bits, std::span<const double> original, double lo,
                   double hi);

struct RawSidecar {
  Dims dims;
  int voxel_bits = 8;
  Endianness endianness = Endianness::little;
};

Volume load_raw(const std::filesystem::path& path, Dims dims, int voxel_bits,
                Endianness endianness = Endianness::little);
/// Reads `<stem>.raw` using the dims recorded in `<stem>.json`.
Volume load_raw(const std::filesystem::path& path);

/// Writes `<stem>.raw` and its `<stem>.json` sidecar.
void save_raw(const Volume& volume, const std::filesystem::path& path,
              Endianness endianness = Endianness::little);

RawSidecar read_sidecar(const std::filesystem::path& json_path);
void write_sidecar(const RawSidecar& sidecar, const std::filesystem::path& json_path);
std::filesystem::path sidecar_path(const std::filesystem::path& raw_path);

/// Maps axis index k of extent N to −1 + 2k/(N−1); N = 1 maps to 0.
std::array<double, 3> grid_coord(std::size_t flat_index, Dims dims);

/// Grid coordinates of flat indices [begin, begin + count) as a count×3 matrix.
nn::Matrix grid_coords(Dims dims, std::size_t begin, std::size_t count);

struct CoordBatch {
  nn::Matrix coords;
  std::vector<double> targets;
  std::vector<std::size_t> flat_indices;
};

/// B voxels drawn uniformly with replacement over the whole grid.
CoordBatch sample_batch(const Volume& volume, std::size_t batch_size, Rng& rng);

enum class SyntheticKind { two_material_sphere, smooth_gradient, band_limited };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::two_material_sphere;
  /// Cosine mode count for band_limited.
  std::size_t modes = 1;
  /// 0 picks the kind's default: 16 for band_limited, 8 otherwise.
  int voxel_bits = 0;
};

/// Deterministic test volumes with integer-valued intensities.
Volume make_synthetic(const SyntheticSpec& spec, Dims dims, std::uint64_t seed);

SyntheticKind parse_synthetic_kind(const std::string& name);
std::string to_string(SyntheticKind kind);

}  // namespace moec
