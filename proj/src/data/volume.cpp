// SPDX-License-Identifier: Apache-2.0
#include "moec/volume.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numbers>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>

#include "moec/error.hpp"
#include "moec/rng.hpp"

namespace moec {

namespace {

using nlohmann::json;

void check_bits(int voxel_bits) {
  if (voxel_bits != 8 && voxel_bits != 16) {
    throw FormatError("voxel_bits must be 8 or 16, got " + std::to_string(voxel_bits));
  }
}

void check_dims(Dims dims) {
  if (dims.h == 0 || dims.w == 0 || dims.d == 0) throw FormatError("volume dims must be >= 1");
}

double max_source_value(int voxel_bits) { return voxel_bits == 8 ? 255.0 : 65535.0; }

}  // namespace

std::vector<double> Volume::original_values() const {
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = original(i);
  return out;
}

std::vector<std::uint32_t> Volume::source_values() const {
  const double top = max_source_value(voxel_bits);
  std::vector<std::uint32_t> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double v = std::clamp(std::round(original(i)), 0.0, top);
    out[i] = static_cast<std::uint32_t>(v);
  }
  return out;
}

Volume make_volume(Dims dims, int voxel_bits, std::span<const double> original, double lo,
                   double hi) {
  check_dims(dims);
  check_bits(voxel_bits);
  if (original.size() != dims.total()) {
    throw DimensionError("volume has " + std::to_string(original.size()) + " voxels, dims need " +
                         std::to_string(dims.total()));
  }
  if (!(hi > lo)) throw FormatError("normalization range must satisfy hi > lo");
  Volume v;
  v.dims = dims;
  v.voxel_bits = voxel_bits;
  v.lo = lo;
  v.hi = hi;
  v.data.resize(original.size());
  const double scale = kNormalizedPeak / (hi - lo);
  for (std::size_t i = 0; i < original.size(); ++i) v.data[i] = (original[i] - lo) * scale;
  return v;
}

Volume make_volume(Dims dims, int voxel_bits, std::span<const double> original) {
  if (original.empty()) throw DimensionError("empty volume");
  const auto [mn, mx] = std::minmax_element(original.begin(), original.end());
  double lo = *mn;
  double hi = *mx;
  if (!(hi > lo)) {
    std::cerr << "warning: constant volume (value " << lo << "); normalization range forced to ["
              << lo << ", " << lo + 1.0 << "]\n";
    hi = lo + 1.0;
  }
  return make_volume(dims, voxel_bits, original, lo, hi);
}

Volume load_raw(const std::filesystem::path& path, Dims dims, int voxel_bits,
                Endianness endianness) {
  check_dims(dims);
  check_bits(voxel_bits);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::size_t width = static_cast<std::size_t>(voxel_bits / 8);
  if (bytes.size() != dims.total() * width) {
    throw FormatError(path.string() + ": " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(dims.total() * width));
  }
  std::vector<double> values(dims.total());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (width == 1) {
      values[i] = bytes[i];
    } else {
      const unsigned b0 = bytes[2 * i];
      const unsigned b1 = bytes[2 * i + 1];
      values[i] = endianness == Endianness::little ? (b0 | (b1 << 8)) : ((b0 << 8) | b1);
    }
  }
  return make_volume(dims, voxel_bits, values);
}

std::filesystem::path sidecar_path(const std::filesystem::path& raw_path) {
  auto p = raw_path;
  p.replace_extension(".json");
  return p;
}

RawSidecar read_sidecar(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw FormatError("cannot open sidecar " + json_path.string());
  RawSidecar s;
  try {
    const json j = json::parse(in);
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw FormatError("sidecar dims must have three entries");
    s.dims = {dims[0], dims[1], dims[2]};
    s.voxel_bits = j.at("voxel_bits").get<int>();
    const std::string endian = j.value("endianness", std::string("little"));
    if (endian == "little") {
      s.endianness = Endianness::little;
    } else if (endian == "big") {
      s.endianness = Endianness::big;
    } else {
      throw FormatError("unknown endianness '" + endian + "'");
    }
  } catch (const json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
  check_dims(s.dims);
  check_bits(s.voxel_bits);
  return s;
}

void write_sidecar(const RawSidecar& sidecar, const std::filesystem::path& json_path) {
  json j;
  j["dims"] = {sidecar.dims.h, sidecar.dims.w, sidecar.dims.d};
  j["voxel_bits"] = sidecar.voxel_bits;
  j["endianness"] = sidecar.endianness == Endianness::little ? "little" : "big";
  std::ofstream out(json_path);
  if (!out) throw FormatError("cannot write " + json_path.string());
  out << j.dump() << '\n';
}

Volume load_raw(const std::filesystem::path& path) {
  const RawSidecar s = read_sidecar(sidecar_path(path));
  return load_raw(path, s.dims, s.voxel_bits, s.endianness);
}

void save_raw(const Volume& volume, const std::filesystem::path& path, Endianness endianness) {
  const auto values = volume.source_values();
  std::vector<unsigned char> bytes;
  bytes.reserve(volume.source_bytes());
  for (const std::uint32_t v : values) {
    if (volume.voxel_bits == 8) {
      bytes.push_back(static_cast<unsigned char>(v));
    } else if (endianness == Endianness::little) {
      bytes.push_back(static_cast<unsigned char>(v & 0xff));
      bytes.push_back(static_cast<unsigned char>(v >> 8));
    } else {
      bytes.push_back(static_cast<unsigned char>(v >> 8));
      bytes.push_back(static_cast<unsigned char>(v & 0xff));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  write_sidecar({volume.dims, volume.voxel_bits, endianness}, sidecar_path(path));
}

std::array<double, 3> grid_coord(std::size_t flat_index, Dims dims) {
  if (flat_index >= dims.total()) {
    throw DimensionError("grid_coord: index " + std::to_string(flat_index) + " outside volume");
  }
  const std::size_t z = flat_index % dims.d;
  const std::size_t y = (flat_index / dims.d) % dims.w;
  const std::size_t x = flat_index / (dims.d * dims.w);
  auto axis = [](std::size_t k, std::size_t n) {
    return n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(n - 1);
  };
  return {axis(x, dims.h), axis(y, dims.w), axis(z, dims.d)};
}

nn::Matrix grid_coords(Dims dims, std::size_t begin, std::size_t count) {
  nn::Matrix m(count, 3);
  for (std::size_t r = 0; r < count; ++r) {
    const auto c = grid_coord(begin + r, dims);
    m(r, 0) = c[0];
    m(r, 1) = c[1];
    m(r, 2) = c[2];
  }
  return m;
}

CoordBatch sample_batch(const Volume& volume, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw std::invalid_argument("sample_batch: batch size must be >= 1");
  CoordBatch b;
  b.coords = nn::Matrix(batch_size, 3);
  b.targets.resize(batch_size);
  b.flat_indices.resize(batch_size);
  const std::size_t total = volume.voxel_count();
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t idx = rng.index(total);
    b.flat_indices[i] = idx;
    b.targets[i] = volume.data[idx];
    const auto c = grid_coord(idx, volume.dims);
    b.coords(i, 0) = c[0];
    b.coords(i, 1) = c[1];
    b.coords(i, 2) = c[2];
  }
  return b;
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "two_material_sphere" || name == "sphere") return SyntheticKind::two_material_sphere;
  if (name == "smooth_gradient" || name == "gradient") return SyntheticKind::smooth_gradient;
  if (name == "band_limited") return SyntheticKind::band_limited;
  throw std::invalid_argument("unknown synthetic kind '" + name + "'");
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::two_material_sphere: return "two_material_sphere";
    case SyntheticKind::smooth_gradient: return "smooth_gradient";
    case SyntheticKind::band_limited: return "band_limited";
  }
  return "unknown";
}

namespace {

double axis_fraction(std::size_t k, std::size_t n) {
  return n == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(n - 1);
}

// Background and material plateaus joined by a smoothstep shell.
std::vector<double> sphere_values(Dims dims, double top) {
  constexpr double radius = 0.5;
  constexpr double shell = 0.3;
  const double background = std::round(0.15 * top);
  const double material = std::round(0.8 * top);
  std::vector<double> out(dims.total());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto c = grid_coord(i, dims);
    const double r = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
    double t = std::clamp((radius + shell / 2 - r) / shell, 0.0, 1.0);
    t = t * t * (3.0 - 2.0 * t);
    out[i] = std::round(background + (material - background) * t);
  }
  return out;
}

std::vector<double> gradient_values(Dims dims, double top) {
  std::vector<double> out(dims.total());
  std::size_t i = 0;
  for (std::size_t x = 0; x < dims.h; ++x)
    for (std::size_t y = 0; y < dims.w; ++y)
      for (std::size_t z = 0; z < dims.d; ++z) {
        const double u = 0.6 * axis_fraction(x, dims.h) + 0.25 * axis_fraction(y, dims.w) +
                         0.15 * axis_fraction(z, dims.d);
        out[i++] = std::round(top * (0.05 + 0.9 * u));
      }
  return out;
}

// Sum of `modes` grid-periodic cosines with integer wave vectors drawn from
// [-K, K]³ \ {0}, K = ceil(cbrt(modes)), riding on a bright constant level.
std::vector<double> band_limited_values(Dims dims, std::size_t modes, double top,
                                        std::uint64_t seed) {
  using cd = std::complex<double>;
  if (modes == 0) throw std::invalid_argument("band_limited needs at least one mode");
  Rng rng(seed);
  const auto k_max = static_cast<long>(std::ceil(std::cbrt(static_cast<double>(modes))));
  const long span = 2 * k_max + 1;
  const std::size_t distinct = static_cast<std::size_t>(span * span * span - 1);
  std::set<std::tuple<long, long, long>> used;
  std::vector<cd> field(dims.total(), cd(0.0, 0.0));
  std::vector<cd> ex(dims.h), ey(dims.w), ez(dims.d);
  auto axis_phase = [](std::vector<cd>& e, long k, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k) * static_cast<double>(i) /
                       static_cast<double>(n);
      e[i] = std::polar(1.0, a);
    }
  };
  for (std::size_t m = 0; m < modes; ++m) {
    long kx, ky, kz;
    do {
      kx = static_cast<long>(rng.index(static_cast<std::uint64_t>(span))) - k_max;
      ky = static_cast<long>(rng.index(static_cast<std::uint64_t>(span))) - k_max;
      kz = static_cast<long>(rng.index(static_cast<std::uint64_t>(span))) - k_max;
    } while ((kx == 0 && ky == 0 && kz == 0) ||
             (used.size() < distinct && used.count({kx, ky, kz}) != 0));
    used.insert({kx, ky, kz});
    const cd phase = std::polar(1.0, rng.uniform(0.0, 2.0 * std::numbers::pi));
    axis_phase(ex, kx, dims.h);
    axis_phase(ey, ky, dims.w);
    axis_phase(ez, kz, dims.d);
    std::size_t i = 0;
    for (std::size_t x = 0; x < dims.h; ++x)
      for (std::size_t y = 0; y < dims.w; ++y) {
        const cd xy = phase * ex[x] * ey[y];
        for (std::size_t z = 0; z < dims.d; ++z) field[i++] += xy * ez[z];
      }
  }
  double peak = 0.0;
  for (const cd& v : field) peak = std::max(peak, std::abs(v.real()));
  if (peak == 0.0) peak = 1.0;
  const double level = std::round(0.75 * top);
  const double amplitude = 0.05 * top;
  std::vector<double> out(field.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::round(level + amplitude * field[i].real() / peak);
  }
  return out;
}

}  // namespace

Volume make_synthetic(const SyntheticSpec& spec, Dims dims, std::uint64_t seed) {
  if (dims.h < 4 || dims.w < 4 || dims.d < 4) {
    throw std::invalid_argument("synthetic volumes need every dim >= 4");
  }
  int bits = spec.voxel_bits;
  if (bits == 0) bits = spec.kind == SyntheticKind::band_limited ? 16 : 8;
  check_bits(bits);
  const double top = max_source_value(bits);
  std::vector<double> values;
  switch (spec.kind) {
    case SyntheticKind::two_material_sphere: values = sphere_values(dims, top); break;
    case SyntheticKind::smooth_gradient: values = gradient_values(dims, top); break;
    case SyntheticKind::band_limited: values = band_limited_values(dims, spec.modes, top, seed); break;
  }
  return make_volume(dims, bits, values);
}

}  // namespace moec
