// SPDX-License-Identifier: Apache-2.0
#include "moec/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <fftw3.h>

#include "moec/error.hpp"

namespace moec::analysis {

double psnr(std::span<const double> a, std::span<const double> b, double peak) {
  if (a.size() != b.size()) throw DimensionError("psnr: inputs differ in length");
  if (a.empty()) throw DimensionError("psnr: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  if (sum == 0.0) return kInfinitePsnr;
  const double mse = sum / static_cast<double>(a.size());
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Volume& reference, const Volume& test) {
  if (!(reference.dims == test.dims)) throw DimensionError("psnr: volume dims differ");
  return psnr(reference.original_values(), test.original_values(), reference.range());
}

namespace {

/// FFTW plan creation and destruction are not thread-safe.
std::mutex fftw_planner;

/// Box sums of one x-plane over every window×window square of (y, z).
void plane_box_sums(std::span<const double> plane, std::size_t w, std::size_t d, std::size_t win,
                    std::vector<double>& prefix, std::span<double> out) {
  prefix.assign((w + 1) * (d + 1), 0.0);
  for (std::size_t y = 0; y < w; ++y) {
    double row = 0.0;
    for (std::size_t z = 0; z < d; ++z) {
      row += plane[y * d + z];
      prefix[(y + 1) * (d + 1) + z + 1] = prefix[y * (d + 1) + z + 1] + row;
    }
  }
  const std::size_t ow = w - win + 1;
  const std::size_t od = d - win + 1;
  for (std::size_t y = 0; y < ow; ++y)
    for (std::size_t z = 0; z < od; ++z) {
      out[y * od + z] = prefix[(y + win) * (d + 1) + z + win] - prefix[y * (d + 1) + z + win] -
                        prefix[(y + win) * (d + 1) + z] + prefix[y * (d + 1) + z];
    }
}

}  // namespace

double ssim3d(std::span<const double> a, std::span<const double> b, Dims dims, double peak,
              const SsimSettings& s) {
  if (a.size() != dims.total() || b.size() != dims.total()) {
    throw DimensionError("ssim3d: inputs do not match the dims");
  }
  const std::size_t win = s.window;
  if (win == 0 || dims.h < win || dims.w < win || dims.d < win) {
    throw DimensionError("ssim3d: every extent must be at least the window size");
  }
  if (!(peak > 0.0)) throw std::invalid_argument("ssim3d: peak must be positive");

  // Work on values divided by the peak so the running sums stay small.
  const double c1 = s.k1 * s.k1;
  const double c2 = s.k2 * s.k2;
  const std::size_t plane = dims.w * dims.d;
  const std::size_t ow = dims.w - win + 1;
  const std::size_t od = dims.d - win + 1;
  const std::size_t out_plane = ow * od;

  // channels: a, b, a², b², ab
  std::vector<std::vector<double>> boxed(dims.h, std::vector<double>(5 * out_plane));
  std::vector<double> channel(plane);
  std::vector<double> prefix;
  for (std::size_t x = 0; x < dims.h; ++x) {
    const auto pa = a.subspan(x * plane, plane);
    const auto pb = b.subspan(x * plane, plane);
    const std::array<std::function<double(std::size_t)>, 5> f{
        [&](std::size_t i) { return pa[i] / peak; },
        [&](std::size_t i) { return pb[i] / peak; },
        [&](std::size_t i) { return (pa[i] / peak) * (pa[i] / peak); },
        [&](std::size_t i) { return (pb[i] / peak) * (pb[i] / peak); },
        [&](std::size_t i) { return (pa[i] / peak) * (pb[i] / peak); }};
    for (std::size_t c = 0; c < 5; ++c) {
      for (std::size_t i = 0; i < plane; ++i) channel[i] = f[c](i);
      plane_box_sums(channel, dims.w, dims.d, win,
                     prefix, std::span(boxed[x]).subspan(c * out_plane, out_plane));
    }
  }

  const double n = static_cast<double>(win * win * win);
  double total = 0.0;
  std::vector<double> acc(5 * out_plane);
  for (std::size_t x0 = 0; x0 + win <= dims.h; ++x0) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t x = x0; x < x0 + win; ++x)
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += boxed[x][i];
    for (std::size_t i = 0; i < out_plane; ++i) {
      const double ma = acc[i] / n;
      const double mb = acc[out_plane + i] / n;
      const double va = acc[2 * out_plane + i] / n - ma * ma;
      const double vb = acc[3 * out_plane + i] / n - mb * mb;
      const double cab = acc[4 * out_plane + i] / n - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  }
  return total / static_cast<double>((dims.h - win + 1) * out_plane);
}

double ssim3d(const Volume& reference, const Volume& test, const SsimSettings& settings) {
  if (!(reference.dims == test.dims)) throw DimensionError("ssim3d: volume dims differ");
  return ssim3d(reference.original_values(), test.original_values(), reference.dims,
                reference.range(), settings);
}

Spectrum fft3(std::span<const double> values, Dims dims) {
  if (values.size() != dims.total() || values.empty()) {
    throw DimensionError("fft3: input does not match the dims");
  }
  const std::size_t n = values.size();
  Spectrum s;
  s.dims = dims;
  s.values.resize(n);
  auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  if (buf == nullptr) throw std::bad_alloc();
  fftw_plan plan = nullptr;
  {
    std::lock_guard lock(fftw_planner);
    plan = fftw_plan_dft_3d(static_cast<int>(dims.h), static_cast<int>(dims.w),
                            static_cast<int>(dims.d), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < n; ++i) {
    buf[i][0] = values[i];
    buf[i][1] = 0.0;
  }
  fftw_execute(plan);
  for (std::size_t i = 0; i < n; ++i) s.values[i] = {buf[i][0], buf[i][1]};
  {
    std::lock_guard lock(fftw_planner);
    fftw_destroy_plan(plan);
  }
  fftw_free(buf);

  s.sorted_magnitudes.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.sorted_magnitudes[i] = std::abs(s.values[i]);
  std::sort(s.sorted_magnitudes.begin(), s.sorted_magnitudes.end(), std::greater<>());
  return s;
}

double spectrum_concentration(const Spectrum& spectrum, std::size_t m) {
  const auto& mag = spectrum.sorted_magnitudes;
  if (m < 1 || m > mag.size()) {
    throw std::invalid_argument("spectrum_concentration: M must lie in [1, " +
                                std::to_string(mag.size()) + "]");
  }
  // ascending summation keeps small components from being swamped
  double all = 0.0;
  for (std::size_t i = mag.size(); i-- > 0;) all += mag[i];
  if (all == 0.0) return 1.0;
  double top = 0.0;
  for (std::size_t i = m; i-- > 0;) top += mag[i];
  return m == mag.size() ? 1.0 : std::min(top / all, 1.0);
}

double spectrum_concentration(const Volume& volume, std::size_t m) {
  return spectrum_concentration(fft3(volume.original_values(), volume.dims), m);
}

std::size_t default_concentration_m(std::size_t components) {
  return std::max<std::size_t>(1, components / 100);
}

ExpertReport expert_report(const ModelParams& params, const ModelConfig& config,
                           std::size_t chunk_size) {
  if (chunk_size == 0) throw std::invalid_argument("expert_report: chunk size must be >= 1");
  if (config.n_experts > 256) throw std::invalid_argument("expert_report: more than 256 experts");
  ExpertReport r;
  r.experts = config.n_experts;
  r.dims = config.dims;
  r.counts.assign(config.n_experts, 0);
  const std::size_t total = config.dims.total();
  r.assignment.resize(total);
  for (std::size_t begin = 0; begin < total; begin += chunk_size) {
    const std::size_t count = std::min(chunk_size, total - begin);
    const auto fr = forward(grid_coords(config.dims, begin, count), params, config, false);
    for (std::size_t i = 0; i < count; ++i) {
      const auto e = fr.tape.selection.expert(i, 0);
      r.assignment[begin + i] = static_cast<std::uint8_t>(e);
      ++r.counts[e];
    }
  }
  r.shares.resize(config.n_experts);
  for (std::size_t e = 0; e < config.n_experts; ++e) {
    r.shares[e] = static_cast<double>(r.counts[e]) / static_cast<double>(total);
  }
  return r;
}

std::vector<std::filesystem::path> write_assignment_maps(const ExpertReport& report,
                                                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Dims d = report.dims;
  const std::size_t plane = d.w * d.d;
  const std::size_t levels = std::max<std::size_t>(report.experts, 2) - 1;
  std::vector<std::filesystem::path> out;
  for (std::size_t x = 0; x < d.h; ++x) {
    std::ostringstream name;
    name << "experts_x" << std::setw(4) << std::setfill('0') << x << ".pgm";
    const auto path = dir / name.str();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write " + path.string());
    // rows run along y, columns along z
    f << "P5\n" << d.d << ' ' << d.w << "\n255\n";
    std::vector<char> pixels(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      pixels[i] = static_cast<char>(report.assignment[x * plane + i] * 255 / levels);
    }
    f.write(pixels.data(), static_cast<std::streamsize>(plane));
    out.push_back(path);
  }
  return out;
}

double mutual_information(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  if (a.size() != b.size()) throw DimensionError("mutual_information: length mismatch");
  if (a.empty()) return 0.0;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> joint;
  std::map<std::uint32_t, std::size_t> ma;
  std::map<std::uint32_t, std::size_t> mb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[{a[i], b[i]}];
    ++ma[a[i]];
    ++mb[b[i]];
  }
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (const auto& [key, count] : joint) {
    const double pxy = static_cast<double>(count) / n;
    const double px = static_cast<double>(ma[key.first]) / n;
    const double py = static_cast<double>(mb[key.second]) / n;
    mi += pxy * std::log(pxy / (px * py));
  }
  return std::max(mi, 0.0);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("spearman: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: need at least two samples");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mean = (static_cast<double>(x.size()) + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<RateDistortionRow> sort_rows(std::vector<RateDistortionRow> rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.ratio < b.ratio; });
  return rows;
}

void write_rate_distortion_csv(std::vector<RateDistortionRow> rows, std::ostream& out) {
  out << "ratio,bytes,psnr_db,ssim,seconds\n";
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : sort_rows(std::move(rows))) {
    out << r.ratio << ',' << r.bytes << ',' << r.psnr << ',' << r.ssim << ',' << r.seconds << '\n';
  }
  out.precision(old);
}

void write_rate_distortion_markdown(std::vector<RateDistortionRow> rows, std::ostream& out) {
  out << "| ratio | bytes | PSNR (dB) | SSIM | time (s) |\n";
  out << "|---:|---:|---:|---:|---:|\n";
  for (const auto& r : sort_rows(std::move(rows))) {
    std::ostringstream line;
    line << "| " << r.ratio << " | " << r.bytes << " | " << std::fixed << std::setprecision(2)
         << r.psnr << " | " << std::setprecision(4) << r.ssim << " | " << std::setprecision(1)
         << r.seconds << " |\n";
    out << line.str();
  }
}

std::vector<RateDistortionRow> read_rate_distortion_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "ratio,bytes,psnr_db,ssim,seconds") {
    throw FormatError("rate-distortion CSV: unexpected header");
  }
  std::vector<RateDistortionRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 5) throw FormatError("rate-distortion CSV: expected 5 columns: " + line);
    try {
      rows.push_back({std::stod(cells[0]), static_cast<std::size_t>(std::stoull(cells[1])),
                      std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4])});
    } catch (const std::logic_error&) {
      throw FormatError("rate-distortion CSV: bad number in: " + line);
    }
  }
  return rows;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  const bool infinite = std::isinf(psnr_db);
  j["psnr_db"] = infinite ? nlohmann::json(nullptr) : nlohmann::json(psnr_db);
  j["psnr_infinite"] = infinite;
  j["ssim"] = ssim;
  j["ratio"] = ratio;
  j["artifact_bytes"] = artifact_bytes;
  j["drop_fraction"] = drop_fraction;
  j["per_expert_share"] = per_expert_share;
  nlohmann::json d = nlohmann::json::object();
  for (const auto& [m, value] : concentration) d[std::to_string(m)] = value;
  j["D"] = d;
  j["compress_seconds"] = compress_seconds;
  j["decompress_seconds"] = decompress_seconds;
  return j;
}

}  // namespace moec::analysis
