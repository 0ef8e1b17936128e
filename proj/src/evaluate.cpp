#include "aub/evaluate.hpp"

#include <cmath>

namespace aub {

Matrix translate(const AlignmentModel& model, const Matrix& x, std::size_t from_j,
                 std::size_t to_j) {
    require(from_j < model.k(), "translate source index ", from_j, " out of range");
    require(to_j < model.k(), "translate target index ", to_j, " out of range");
    Matrix z, out;
    std::vector<double> logdet;
    model.flows[from_j]->forward(x, z, logdet);
    model.flows[to_j]->inverse(z, out);
    return out;
}

double energy_distance(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "energy distance width mismatch: ", a.cols(), " vs ",
            b.cols());
    require(a.rows() >= 2 && b.rows() >= 2, "energy distance needs at least 2 rows per side");
    const std::size_t d = a.cols();
    auto mean_pair_dist = [d](const Matrix& u, const Matrix& v) {
        double acc = 0.0;
        for (std::size_t i = 0; i < u.rows(); ++i) {
            const double* ui = u.row(i).data();
            for (std::size_t j = 0; j < v.rows(); ++j) {
                const double* vj = v.row(j).data();
                double sq = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double diff = ui[c] - vj[c];
                    sq += diff * diff;
                }
                acc += std::sqrt(sq);
            }
        }
        return acc / (static_cast<double>(u.rows()) * static_cast<double>(v.rows()));
    };
    return 2.0 * mean_pair_dist(a, b) - mean_pair_dist(a, a) - mean_pair_dist(b, b);
}

ParameterCounts parameter_count(const AlignmentModel& model) {
    ParameterCounts out;
    for (const auto& f : model.flows) {
        out.per_flow.push_back(f->param_count());
        out.total += f->param_count();
    }
    out.density = model.density->param_count();
    out.total += out.density;
    return out;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json energy = nlohmann::json::array();
    for (std::size_t r = 0; r < pairwise_energy_distance.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < pairwise_energy_distance.cols(); ++c) {
            row.push_back(pairwise_energy_distance(r, c));
        }
        energy.push_back(row);
    }
    return {{"test_aub", test_aub},
            {"pairwise_energy_distance", energy},
            {"parameter_counts",
             {{"per_flow", params.per_flow}, {"density", params.density}, {"total", params.total}}},
            {"roundtrip_max_err", roundtrip_max_err},
            {"config_fingerprint", config_fingerprint}};
}

EvalReport evaluate_model(const AlignmentModel& model,
                          const std::vector<DomainDataset>& datasets,
                          const std::string& fingerprint, const EvalOptions& options) {
    model.validate();
    require(datasets.size() == model.k(), "expected ", model.k(), " datasets");
    EvalReport report;
    report.config_fingerprint = fingerprint;
    report.params = parameter_count(model);

    std::vector<Matrix> test;
    for (const auto& d : datasets) test.push_back(d.test);
    report.test_aub = aub_metric(model, test);

    const std::size_t k = model.k();
    report.pairwise_energy_distance.resize(k, k);
    if (options.energy && k > 1) {
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t jp = j + 1; jp < k; ++jp) {
                const double fwd = energy_distance(translate(model, test[j], j, jp), test[jp]);
                const double bwd = energy_distance(translate(model, test[jp], jp, j), test[j]);
                const double v = 0.5 * (fwd + bwd);
                report.pairwise_energy_distance(j, jp) = v;
                report.pairwise_energy_distance(jp, j) = v;
            }
        }
    }

    if (options.roundtrip) {
        double worst = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t jp = 0; jp < k; ++jp) {
                const Matrix there = translate(model, test[j], j, jp);
                const Matrix back = translate(model, there, jp, j);
                for (std::size_t r = 0; r < back.rows(); ++r) {
                    for (std::size_t c = 0; c < back.cols(); ++c) {
                        worst = std::max(worst, std::abs(back(r, c) - test[j](r, c)));
                    }
                }
            }
        }
        report.roundtrip_max_err = worst;
    }
    return report;
}

}  // namespace aub
