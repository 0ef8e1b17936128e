#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "aub/alignment.hpp"
#include "aub/checkpoint.hpp"
#include "aub/data.hpp"
#include "aub/density.hpp"
#include "aub/evaluate.hpp"
#include "aub/flow.hpp"
#include "aub/numeric.hpp"
#include "aub/quadrature.hpp"

namespace py = pybind11;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

aub::Matrix to_matrix(const DoubleArray& arr) {
    if (arr.ndim() == 1) {
        aub::Matrix m(static_cast<std::size_t>(arr.shape(0)), 1);
        std::copy(arr.data(), arr.data() + arr.shape(0), m.data());
        return m;
    }
    if (arr.ndim() != 2) throw py::value_error("expected a 1-D or 2-D float array");
    aub::Matrix m(static_cast<std::size_t>(arr.shape(0)),
                  static_cast<std::size_t>(arr.shape(1)));
    std::copy(arr.data(), arr.data() + arr.size(), m.data());
    return m;
}

py::array_t<double> to_numpy(const aub::Matrix& m) {
    py::array_t<double> arr({m.rows(), m.cols()});
    std::copy(m.data(), m.data() + m.size(), arr.mutable_data());
    return arr;
}

py::array_t<double> to_numpy(const std::vector<double>& v) {
    py::array_t<double> arr(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), arr.mutable_data());
    return arr;
}

std::vector<aub::Matrix> to_matrices(const std::vector<DoubleArray>& arrays) {
    std::vector<aub::Matrix> out;
    out.reserve(arrays.size());
    for (const auto& a : arrays) out.push_back(to_matrix(a));
    return out;
}

aub::TrainConfig make_train_config(const std::string& mode, std::size_t max_epochs,
                                   std::size_t batch_size, double lr_q, double lr_t,
                                   const std::string& optimizer, std::size_t patience,
                                   std::uint64_t seed) {
    aub::TrainConfig tc;
    if (mode == "aub") {
        tc.mode = aub::TrainMode::Aub;
    } else if (mode == "alignflow_mle") {
        tc.mode = aub::TrainMode::AlignFlowMle;
    } else if (mode == "lrmf") {
        tc.mode = aub::TrainMode::Lrmf;
    } else {
        throw py::value_error("mode must be aub, alignflow_mle, or lrmf");
    }
    tc.max_epochs = max_epochs;
    tc.batch_size = batch_size;
    tc.patience = patience;
    tc.seed = seed;
    aub::OptimizerKind kind;
    if (optimizer == "adam") {
        kind = aub::OptimizerKind::Adam;
    } else if (optimizer == "sgd") {
        kind = aub::OptimizerKind::Sgd;
    } else {
        throw py::value_error("optimizer must be adam or sgd");
    }
    tc.q_optimizer = {kind, lr_q};
    tc.t_optimizer = {kind, lr_t};
    return tc;
}

}  // namespace

PYBIND11_MODULE(_aub, m) {
    m.doc() = "Cooperative flow-based alignment of multiple distributions";

    py::class_<aub::SeededRng>(m, "SeededRng")
        .def(py::init<std::uint64_t>(), py::arg("seed"))
        .def_property_readonly("seed", &aub::SeededRng::seed)
        .def_property_readonly("algorithm",
                               [](const aub::SeededRng& r) { return std::string(r.algorithm()); })
        .def("uniform", &aub::SeededRng::uniform)
        .def("normal", &aub::SeededRng::normal)
        .def("derive", &aub::SeededRng::derive, py::arg("tag"));

    m.def("log_sum_exp", [](const std::vector<double>& values) {
        return aub::log_sum_exp(values);
    });

    py::class_<aub::Flow, std::shared_ptr<aub::Flow>>(m, "Flow")
        .def_property_readonly("dim", &aub::Flow::dim)
        .def_property_readonly("param_count", &aub::Flow::param_count)
        .def("forward",
             [](const aub::Flow& f, const DoubleArray& x) {
                 aub::Matrix z;
                 std::vector<double> logdet;
                 f.forward(to_matrix(x), z, logdet);
                 return py::make_tuple(to_numpy(z), to_numpy(logdet));
             },
             py::arg("x"))
        .def("inverse",
             [](const aub::Flow& f, const DoubleArray& z) {
                 aub::Matrix x;
                 f.inverse(to_matrix(z), x);
                 return to_numpy(x);
             },
             py::arg("z"))
        .def("get_params",
             [](const aub::Flow& f) {
                 return to_numpy(std::vector<double>(f.params().values().begin(),
                                                     f.params().values().end()));
             })
        .def("set_params", [](aub::Flow& f, const DoubleArray& v) {
            if (static_cast<std::size_t>(v.size()) != f.param_count()) {
                throw py::value_error("parameter length mismatch");
            }
            std::copy(v.data(), v.data() + v.size(), f.params().values().begin());
        });

    m.def("make_identity_flow",
          [](std::size_t dim) -> std::shared_ptr<aub::Flow> {
              return std::make_shared<aub::IdentityFlow>(dim);
          },
          py::arg("dim"));
    m.def("make_affine_flow",
          [](std::vector<double> scale, std::vector<double> shift) -> std::shared_ptr<aub::Flow> {
              return std::make_shared<aub::AffineFlow>(std::move(scale), std::move(shift));
          },
          py::arg("scale"), py::arg("shift"));
    m.def("make_realnvp",
          [](std::size_t dim, std::size_t n_layers, std::size_t hidden_dim,
             std::size_t n_hidden, std::uint64_t seed,
             double scale_clamp) -> std::shared_ptr<aub::Flow> {
              return aub::make_realnvp(dim, n_layers, hidden_dim, n_hidden, seed, scale_clamp);
          },
          py::arg("dim"), py::arg("n_layers"), py::arg("hidden_dim"),
          py::arg("n_hidden") = 1, py::arg("seed") = 0, py::arg("scale_clamp") = 5.0);

    py::class_<aub::Density, std::shared_ptr<aub::Density>>(m, "Density")
        .def_property_readonly("dim", &aub::Density::dim)
        .def_property_readonly("param_count", &aub::Density::param_count)
        .def("log_prob",
             [](const aub::Density& d, const DoubleArray& z) {
                 return to_numpy(d.log_prob(to_matrix(z)));
             },
             py::arg("z"))
        .def("sample",
             [](const aub::Density& d, std::size_t n, aub::SeededRng& rng) {
                 return to_numpy(d.sample(n, rng));
             },
             py::arg("n"), py::arg("rng"));

    m.def("make_standard_normal",
          [](std::size_t dim) -> std::shared_ptr<aub::Density> {
              return std::make_shared<aub::FixedStandardNormal>(dim);
          },
          py::arg("dim"));
    m.def("make_diagonal_gaussian",
          [](std::vector<double> mean, std::vector<double> log_var) -> std::shared_ptr<aub::Density> {
              return std::make_shared<aub::DiagonalGaussian>(std::move(mean), std::move(log_var));
          },
          py::arg("mean"), py::arg("log_var"));
    m.def("make_gaussian_mixture",
          [](std::size_t dim, std::size_t components, std::uint64_t seed) -> std::shared_ptr<aub::Density> {
              aub::SeededRng rng(seed);
              return std::make_shared<aub::GaussianMixture>(dim, components, rng);
          },
          py::arg("dim"), py::arg("components"), py::arg("seed") = 0);
    m.def("make_flow_density",
          [](std::size_t dim, std::size_t n_layers, std::size_t hidden_dim,
             std::size_t n_hidden, std::uint64_t seed,
             double scale_clamp) -> std::shared_ptr<aub::Density> {
              auto flow = aub::make_realnvp(dim, n_layers, hidden_dim, n_hidden, seed,
                                            scale_clamp);
              return std::make_shared<aub::FlowDensity>(std::move(flow));
          },
          py::arg("dim"), py::arg("n_layers"), py::arg("hidden_dim"),
          py::arg("n_hidden") = 1, py::arg("seed") = 0, py::arg("scale_clamp") = 5.0);

    py::class_<aub::AlignmentModel>(m, "AlignmentModel")
        .def_property_readonly("k", &aub::AlignmentModel::k)
        .def_property_readonly("dim", &aub::AlignmentModel::dim)
        .def_property_readonly("weights",
                               [](const aub::AlignmentModel& mm) { return mm.weights; })
        .def_property_readonly("flows",
                               [](const aub::AlignmentModel& mm) { return mm.flows; })
        .def_property_readonly("density",
                               [](const aub::AlignmentModel& mm) { return mm.density; });

    m.def("make_alignment_model", &aub::make_alignment_model, py::arg("flows"),
          py::arg("density"), py::arg("weights") = std::vector<double>{});

    m.def("aub_loss",
          [](const aub::AlignmentModel& model, const std::vector<DoubleArray>& batches) {
              return aub::aub_loss(model, to_matrices(batches));
          },
          py::arg("model"), py::arg("batches"));
    m.def("aub_metric",
          [](const aub::AlignmentModel& model, const std::vector<DoubleArray>& batches) {
              return aub::aub_metric(model, to_matrices(batches));
          },
          py::arg("model"), py::arg("batches"));

    py::class_<aub::DomainDataset>(m, "DomainDataset")
        .def_readonly("name", &aub::DomainDataset::name)
        .def_readonly("dim", &aub::DomainDataset::dim)
        .def_readonly("provenance", &aub::DomainDataset::provenance)
        .def_property_readonly("train",
                               [](const aub::DomainDataset& d) { return to_numpy(d.train); })
        .def_property_readonly("val",
                               [](const aub::DomainDataset& d) { return to_numpy(d.val); })
        .def_property_readonly("test",
                               [](const aub::DomainDataset& d) { return to_numpy(d.test); });

    m.def("two_moons", &aub::gen_two_moons, py::arg("n"), py::arg("noise_sd"),
          py::arg("seed"));
    m.def("blobs", &aub::gen_blobs, py::arg("n"), py::arg("n_components"), py::arg("box"),
          py::arg("sd"), py::arg("seed"));
    m.def("gaussians_1d", &aub::gen_gaussians_1d, py::arg("n"), py::arg("means"),
          py::arg("sds"), py::arg("seed"));
    m.def("median_split",
          [](const DoubleArray& data, std::vector<std::size_t> feature_indices,
             bool standardize, std::uint64_t seed) {
              aub::SplitSpec spec;
              spec.feature_indices = std::move(feature_indices);
              spec.standardize = standardize;
              spec.seed = seed;
              return aub::median_split(to_matrix(data), spec);
          },
          py::arg("data"), py::arg("feature_indices"), py::arg("standardize") = true,
          py::arg("seed") = 0);

    m.def("train",
          [](aub::AlignmentModel& model, const std::vector<aub::DomainDataset>& datasets,
             const std::string& mode, std::size_t max_epochs, std::size_t batch_size,
             double lr_q, double lr_t, const std::string& optimizer, std::size_t patience,
             std::uint64_t seed) {
              const auto tc = make_train_config(mode, max_epochs, batch_size, lr_q, lr_t,
                                                optimizer, patience, seed);
              aub::TrainTrace trace;
              {
                  py::gil_scoped_release release;
                  trace = aub::train(model, datasets, tc);
              }
              py::list epochs;
              for (const auto& e : trace.epochs) {
                  py::dict row;
                  row["epoch"] = e.epoch;
                  row["train_aub"] = e.train_aub;
                  row["val_aub"] = e.val_aub;
                  row["q_loglik"] = e.q_loglik;
                  row["wall_time_s"] = e.wall_time_s;
                  epochs.append(row);
              }
              py::dict out;
              out["epochs"] = epochs;
              out["best_epoch"] = trace.best_epoch;
              out["best_val_aub"] = trace.best_val_aub;
              return out;
          },
          py::arg("model"), py::arg("datasets"), py::arg("mode") = "aub",
          py::arg("max_epochs") = 100, py::arg("batch_size") = 256,
          py::arg("lr_q") = 1e-3, py::arg("lr_t") = 1e-3, py::arg("optimizer") = "adam",
          py::arg("patience") = 0, py::arg("seed") = 0);

    m.def("translate",
          [](const aub::AlignmentModel& model, const DoubleArray& x, std::size_t from_j,
             std::size_t to_j) {
              return to_numpy(aub::translate(model, to_matrix(x), from_j, to_j));
          },
          py::arg("model"), py::arg("x"), py::arg("from_j"), py::arg("to_j"));
    m.def("energy_distance",
          [](const DoubleArray& a, const DoubleArray& b) {
              return aub::energy_distance(to_matrix(a), to_matrix(b));
          },
          py::arg("a"), py::arg("b"));
    m.def("parameter_count", [](const aub::AlignmentModel& model) {
        const auto counts = aub::parameter_count(model);
        py::dict out;
        out["per_flow"] = counts.per_flow;
        out["density"] = counts.density;
        out["total"] = counts.total;
        return out;
    });

    m.def("gjsd_gaussians_1d",
          [](std::vector<double> means, std::vector<double> sds, std::vector<double> weights) {
              if (means.size() != sds.size() || means.size() != weights.size()) {
                  throw py::value_error("means, sds, and weights must have equal length");
              }
              std::vector<std::shared_ptr<const aub::AnalyticDensity>> comps;
              for (std::size_t j = 0; j < means.size(); ++j) {
                  comps.push_back(std::make_shared<aub::Gaussian1D>(means[j], sds[j]));
              }
              return aub::gjsd_quadrature(comps, weights).value;
          },
          py::arg("means"), py::arg("sds"), py::arg("weights"));

    m.def("save_checkpoint",
          [](const std::filesystem::path& path, const aub::AlignmentModel& model,
             std::uint64_t seed, const std::string& fingerprint) {
              aub::save_checkpoint(path, model, {seed, fingerprint, 0});
          },
          py::arg("path"), py::arg("model"), py::arg("seed") = 0,
          py::arg("fingerprint") = "");
    m.def("load_checkpoint", [](const std::filesystem::path& path) {
        auto loaded = aub::load_checkpoint(path);
        return loaded.model;
    });

    py::register_exception<aub::Error>(m, "AubError");
}
