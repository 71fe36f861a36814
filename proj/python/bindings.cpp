// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "moec/analysis.hpp"
#include "moec/checks.hpp"
#include "moec/error.hpp"
#include "moec/pipeline.hpp"

namespace py = pybind11;
using namespace moec;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Dims dims_of(const Array& a) {
  if (a.ndim() != 3) throw DimensionError("expected a 3D array");
  return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
          static_cast<std::size_t>(a.shape(2))};
}

std::span<const double> values_of(const Array& a) {
  return {a.data(), static_cast<std::size_t>(a.size())};
}

Array to_array(const Volume& v) {
  Array out({v.dims.h, v.dims.w, v.dims.d});
  const auto values = v.original_values();
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

Volume to_volume(const Array& a, int bits) {
  return make_volume(dims_of(a), bits, values_of(a));
}

}  // namespace

PYBIND11_MODULE(_moec, m) {
  m.doc() = "Mixture-of-experts neural compression for 3D volumes";
  m.attr("__version__") = kVersion;

  // later registrations are tried first, so the base class goes first
  py::register_exception<Error>(m, "Error", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<BudgetError>(m, "BudgetError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<CorruptArtifactError>(m, "CorruptArtifactError", PyExc_ValueError);

  m.def(
      "synthetic",
      [](const std::string& kind, std::size_t side, std::uint64_t seed, std::size_t modes,
         int bits) {
        SyntheticSpec spec;
        spec.kind = parse_synthetic_kind(kind);
        spec.modes = modes;
        spec.voxel_bits = bits;
        return to_array(make_synthetic(spec, Dims{side, side, side}, seed));
      },
      py::arg("kind"), py::arg("side"), py::arg("seed") = 0, py::arg("modes") = 1,
      py::arg("bits") = 0, "Synthetic test volume of shape (side, side, side).");

  m.def(
      "compress",
      [](const Array& volume, double ratio, std::size_t experts, std::size_t top_k,
         std::size_t steps, std::size_t batch, std::uint64_t seed, const std::string& mode,
         int bits) {
        const Volume v = to_volume(volume, bits);
        CompressOptions o;
        o.ratio = ratio;
        o.model.n_experts = experts;
        o.model.top_k = top_k;
        o.train.steps = steps;
        o.train.batch_size = batch;
        o.train.seed = seed;
        o.mode = codec::parse_codec_mode(mode);
        std::vector<std::uint8_t> bytes;
        {
          py::gil_scoped_release release;
          bytes = compress(v, o).artifact.bytes;
        }
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("volume"), py::arg("ratio") = 64.0, py::arg("experts") = 2, py::arg("top_k") = 1,
      py::arg("steps") = 20000, py::arg("batch") = 8192, py::arg("seed") = 0,
      py::arg("mode") = "quant+huffman", py::arg("bits") = 8,
      "Fit a network to `volume` and return the artifact bytes.");

  m.def(
      "decompress",
      [](py::bytes artifact) {
        const std::string s = artifact;
        const std::vector<std::uint8_t> bytes(s.begin(), s.end());
        Volume v;
        {
          py::gil_scoped_release release;
          v = decompress(bytes).volume;
        }
        return to_array(v);
      },
      py::arg("artifact"), "Reconstruct the volume stored in an artifact.");

  m.def(
      "psnr",
      [](const Array& a, const Array& b, double peak) {
        if (!(dims_of(a) == dims_of(b))) throw DimensionError("shapes differ");
        return analysis::psnr(values_of(a), values_of(b), peak);
      },
      py::arg("reference"), py::arg("test"), py::arg("peak"));

  m.def(
      "ssim",
      [](const Array& a, const Array& b, double peak, std::size_t window) {
        if (!(dims_of(a) == dims_of(b))) throw DimensionError("shapes differ");
        return analysis::ssim3d(values_of(a), values_of(b), dims_of(a), peak, {window});
      },
      py::arg("reference"), py::arg("test"), py::arg("peak"), py::arg("window") = 7);

  m.def(
      "spectrum_concentration",
      [](const Array& a, std::size_t top_m) {
        return analysis::spectrum_concentration(analysis::fft3(values_of(a), dims_of(a)), top_m);
      },
      py::arg("volume"), py::arg("top_m"));

  m.def(
      "selftest",
      [](bool inject_fault) {
        std::vector<py::tuple> out;
        for (const auto& r : checks::selftest({0, inject_fault})) {
          out.push_back(py::make_tuple(r.name, r.passed, r.detail));
        }
        return out;
      },
      py::arg("inject_fault") = false, "(name, passed, detail) for every built-in check.");
}
