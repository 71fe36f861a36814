// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moec/model.hpp"
#include "moec/volume.hpp"

namespace moec::analysis {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10·log10(peak²/MSE); identical inputs give +∞.
double psnr(std::span<const double> a, std::span<const double> b, double peak);
/// On original intensities with peak = the reference's original range.
double psnr(const Volume& reference, const Volume& test);

struct SsimSettings {
  std::size_t window = 7;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over every fully contained window×window×window cube, with
/// uniform weights and population statistics.
double ssim3d(std::span<const double> a, std::span<const double> b, Dims dims, double peak,
              const SsimSettings& settings = {});
double ssim3d(const Volume& reference, const Volume& test, const SsimSettings& settings = {});

struct Spectrum {
  Dims dims;
  /// Unnormalized forward DFT in the same flat order as the input.
  std::vector<std::complex<double>> values;
  /// |X| sorted in descending order.
  std::vector<double> sorted_magnitudes;
};

Spectrum fft3(std::span<const double> values, Dims dims);

/// Sum of the M largest magnitudes over the sum of all magnitudes.
double spectrum_concentration(const Spectrum& spectrum, std::size_t m);
/// Computed on original intensities.
double spectrum_concentration(const Volume& volume, std::size_t m);
/// 1% of the component count, at least 1.
std::size_t default_concentration_m(std::size_t components);

struct ExpertReport {
  std::size_t experts = 0;
  std::vector<std::size_t> counts;
  std::vector<double> shares;
  /// Top-1 expert id of every voxel in flat order.
  std::vector<std::uint8_t> assignment;
  Dims dims;
};

/// Evaluates the router over the whole grid in inference mode.
ExpertReport expert_report(const ModelParams& params, const ModelConfig& config,
                           std::size_t chunk_size = 65536);

/// One binary PGM per slice along the first axis, expert ids spread over
/// 0..255. Returns the written paths.
std::vector<std::filesystem::path> write_assignment_maps(const ExpertReport& report,
                                                         const std::filesystem::path& dir);

/// Mutual information in nats between two label sequences.
double mutual_information(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct RateDistortionRow {
  double ratio = 0.0;
  std::size_t bytes = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double seconds = 0.0;
  friend bool operator==(const RateDistortionRow&, const RateDistortionRow&) = default;
};

/// Rows sorted by ratio; equal ratios keep their input order.
std::vector<RateDistortionRow> sort_rows(std::vector<RateDistortionRow> rows);
void write_rate_distortion_csv(std::vector<RateDistortionRow> rows, std::ostream& out);
void write_rate_distortion_markdown(std::vector<RateDistortionRow> rows, std::ostream& out);
std::vector<RateDistortionRow> read_rate_distortion_csv(std::istream& in);

struct MetricsReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double ratio = 0.0;
  std::size_t artifact_bytes = 0;
  double drop_fraction = 0.0;
  std::vector<double> per_expert_share;
  std::map<std::size_t, double> concentration;
  double compress_seconds = 0.0;
  double decompress_seconds = 0.0;

  /// An infinite PSNR is written as null with "psnr_infinite": true.
  nlohmann::json to_json() const;
};

}  // namespace moec::analysis
