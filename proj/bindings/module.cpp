// Python bindings for the main pipeline operations: quantisation codebooks,
// URA encoding, the AWGN channel, the unrolled decoder, aggregation rules,
// and checkpoint loading.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "airsum/aggregate.hpp"
#include "airsum/channel.hpp"
#include "airsum/error.hpp"
#include "airsum/decoder.hpp"
#include "airsum/feel.hpp"
#include "airsum/trainer.hpp"
#include "airsum/ura.hpp"
#include "airsum/vq.hpp"

namespace py = pybind11;
using namespace airsum;

namespace {

num::Tensor tensor_from_array(py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
  num::Shape shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arr.shape(i));
  }
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return num::Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const num::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> arr(shape);
  std::copy(t.data().begin(), t.data().end(), arr.mutable_data());
  return arr;
}

vq::QuantCodebook codebook_from_arrays(py::array_t<double> centroids,
                                       std::vector<double> popularity) {
  vq::QuantCodebook cb;
  cb.centroids = tensor_from_array(centroids);
  if (popularity.empty()) {
    popularity.assign(cb.size(), 1.0 / static_cast<double>(cb.size()));
  }
  cb.popularity = std::move(popularity);
  return cb;
}

ura::ActivityVector counts_from_list(const std::vector<std::int64_t>& counts) {
  ura::ActivityVector x;
  x.counts = counts;
  return x;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "learned digital over-the-air aggregation: core operations";

  py::register_exception<Error>(m, "AirsumError");

  // --- channel ---
  m.def(
      "noise_variance",
      [](double snr_db, std::int64_t ka, std::size_t l) {
        return channel::noise_variance({snr_db, ka}, l);
      },
      py::arg("snr_db"), py::arg("ka"), py::arg("l"));
  m.def(
      "apply_channel",
      [](py::array_t<double> signal, double snr_db, std::int64_t ka, std::uint64_t seed,
         const std::string& label) {
        num::RngStream rng(seed, label);
        return array_from_tensor(channel::apply(tensor_from_array(signal), {snr_db, ka}, rng));
      },
      py::arg("signal"), py::arg("snr_db"), py::arg("ka"), py::arg("seed") = 1,
      py::arg("label") = "channel");

  // --- vector quantisation ---
  py::class_<vq::QuantCodebook>(m, "QuantCodebook")
      .def_property_readonly("centroids",
                             [](const vq::QuantCodebook& cb) {
                               return array_from_tensor(cb.centroids);
                             })
      .def_readonly("popularity", &vq::QuantCodebook::popularity)
      .def_property_readonly("dim", &vq::QuantCodebook::dim)
      .def("__len__", &vq::QuantCodebook::size);
  m.def(
      "build_codebook",
      [](py::array_t<double> fragments, std::size_t n, bool popularity_ordering,
         bool curvature_aware, std::uint64_t seed) {
        num::Tensor all = tensor_from_array(fragments);
        if (all.rank() != 2) throw InvalidArgument("fragments must be (count, d)");
        std::vector<vq::Fragment> frags;
        for (std::size_t i = 0; i < all.extent(0); ++i) {
          num::Tensor f = num::Tensor::zeros({all.extent(1)});
          for (std::size_t j = 0; j < all.extent(1); ++j) f[j] = all.at(i, j);
          frags.push_back(std::move(f));
        }
        vq::BuildOptions options;
        options.order_by_popularity = popularity_ordering;
        if (curvature_aware) options.curvature = vq::CurvatureProxy::from_fragments(frags);
        num::RngStream rng(seed, "codebook");
        return vq::build_codebook(frags, n, options, rng);
      },
      py::arg("fragments"), py::arg("n"), py::arg("popularity_ordering") = true,
      py::arg("curvature_aware") = false, py::arg("seed") = 1);
  m.def(
      "quantise",
      [](py::array_t<double> fragment, const vq::QuantCodebook& cb) {
        return vq::quantise(tensor_from_array(fragment), cb);
      },
      py::arg("fragment"), py::arg("codebook"));
  m.def("make_codebook", &codebook_from_arrays, py::arg("centroids"),
        py::arg("popularity") = std::vector<double>{});

  // --- URA codebook ---
  py::class_<ura::UraCodebook>(m, "UraCodebook")
      .def_property_readonly("sensing",
                             [](const ura::UraCodebook& cb) {
                               return array_from_tensor(cb.sensing());
                             })
      .def_property_readonly("codeword_count", &ura::UraCodebook::codeword_count)
      .def_property_readonly("codeword_length", &ura::UraCodebook::codeword_length);
  m.def(
      "init_codebook",
      [](std::size_t n, std::size_t l, const std::string& mode, std::uint64_t seed) {
        num::RngStream rng(seed, "ura");
        return ura::init_codebook(n, l, ura::mode_from_name(mode), rng);
      },
      py::arg("n"), py::arg("l"), py::arg("mode") = "fixed_gaussian", py::arg("seed") = 1);
  m.def(
      "encode_slot",
      [](const std::vector<std::size_t>& indices, std::size_t n) {
        return ura::encode_slot(indices, n).counts;
      },
      py::arg("indices"), py::arg("n"));
  m.def(
      "transmit",
      [](const std::vector<std::int64_t>& counts, py::array_t<double> sensing) {
        return array_from_tensor(
            ura::transmit(counts_from_list(counts), tensor_from_array(sensing)));
      },
      py::arg("counts"), py::arg("sensing"));

  // --- decoder ---
  m.def(
      "posterior_moments",
      [](double r, double v, double alpha, double lam, double tau, int x_max) {
        decoder::PosteriorMoments pm =
            decoder::posterior_moments(r, v, alpha, lam, tau, x_max);
        return py::make_tuple(pm.m, pm.v, pm.p_active, pm.underflow);
      },
      py::arg("r"), py::arg("v"), py::arg("alpha"), py::arg("lam"), py::arg("tau") = 1.0,
      py::arg("x_max") = 40);
  m.def(
      "project_counts",
      [](py::array_t<double> x_hat, double ka_hat) {
        return decoder::project_counts(tensor_from_array(x_hat), ka_hat).counts;
      },
      py::arg("x_hat"), py::arg("ka_hat"));
  m.def(
      "decode",
      [](py::array_t<double> y, py::array_t<double> sensing, const std::string& mode,
         int layers, double prior_ka_mean) {
        decoder::DecoderParams params = decoder::DecoderParams::fixed_defaults(layers);
        decoder::DecodeOptions options;
        options.mode = decoder::mode_from_name(mode);
        if (options.mode == decoder::Mode::learned) {
          throw InvalidArgument("learned decode requires a checkpoint; use Decoder");
        }
        options.prior_ka_mean = prior_ka_mean;
        decoder::DecodeResult res =
            decoder::decode(tensor_from_array(y), tensor_from_array(sensing), params, options);
        return py::make_tuple(array_from_tensor(res.x_hat), res.ka_hat);
      },
      py::arg("y"), py::arg("sensing"), py::arg("mode") = "fixed", py::arg("layers") = 8,
      py::arg("prior_ka_mean") = 1.0);

  // trained decoder bound to its checkpoint
  py::class_<trainer::Checkpoint>(m, "Decoder")
      .def_static("load",
                  [](const std::string& path) { return trainer::load_checkpoint(path); })
      .def_property_readonly("epoch",
                             [](const trainer::Checkpoint& ck) { return ck.epoch; })
      .def_property_readonly("val_loss",
                             [](const trainer::Checkpoint& ck) { return ck.val_loss; })
      .def_property_readonly("sensing",
                             [](const trainer::Checkpoint& ck) {
                               return array_from_tensor(ck.codebook.sensing());
                             })
      .def(
          "decode",
          [](const trainer::Checkpoint& ck, py::array_t<double> y) {
            decoder::DecodeOptions options;
            options.prior_ka_mean = ck.prior_ka_mean;
            decoder::DecodeResult res = decoder::decode(
                tensor_from_array(y), ck.codebook.sensing(), ck.params, options);
            return py::make_tuple(array_from_tensor(res.x_hat), res.ka_hat);
          },
          py::arg("y"));

  // --- aggregation ---
  m.def(
      "mean_fragment",
      [](const std::vector<std::int64_t>& counts, const vq::QuantCodebook& cb, double k_hat) {
        return array_from_tensor(aggregate::mean_fragment(counts_from_list(counts), cb, k_hat));
      },
      py::arg("counts"), py::arg("codebook"), py::arg("k_hat"));
  m.def(
      "majority_fragment",
      [](const std::vector<std::int64_t>& counts, const vq::QuantCodebook& cb) {
        return array_from_tensor(aggregate::majority_fragment(counts_from_list(counts), cb));
      },
      py::arg("counts"), py::arg("codebook"));
  m.def(
      "trimmed_fragment",
      [](const std::vector<std::int64_t>& counts, const vq::QuantCodebook& cb, double k_hat,
         double tau) {
        return array_from_tensor(
            aggregate::trimmed_fragment(counts_from_list(counts), cb, k_hat, tau));
      },
      py::arg("counts"), py::arg("codebook"), py::arg("k_hat"), py::arg("tau") = 0.8);

  // --- metrics ---
  m.def(
      "recovery_accuracy",
      [](const std::vector<std::int64_t>& truth, const std::vector<std::int64_t>& estimate) {
        return feel::recovery_accuracy(counts_from_list(truth), counts_from_list(estimate));
      },
      py::arg("truth"), py::arg("estimate"));
}
