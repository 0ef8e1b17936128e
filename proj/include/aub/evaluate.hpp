#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "aub/alignment.hpp"
#include "aub/matrix.hpp"

namespace aub {

/// Cross-domain translation through the shared latent space:
/// flows[to].inverse(flows[from].forward(x)).
Matrix translate(const AlignmentModel& model, const Matrix& x, std::size_t from_j,
                 std::size_t to_j);

/// Energy distance E-statistic with the biased all-pairs estimator:
/// 2 E||a-b|| - E||a-a'|| - E||b-b'||. Identical inputs give exactly 0.
double energy_distance(const Matrix& a, const Matrix& b);

struct ParameterCounts {
    std::vector<std::size_t> per_flow;
    std::size_t density = 0;
    std::size_t total = 0;
};

ParameterCounts parameter_count(const AlignmentModel& model);

struct EvalReport {
    double test_aub = 0.0;
    Matrix pairwise_energy_distance;  // k x k, symmetric, zero diagonal
    ParameterCounts params;
    double roundtrip_max_err = 0.0;
    std::string config_fingerprint;

    nlohmann::json to_json() const;
};

struct EvalOptions {
    bool energy = true;
    bool roundtrip = true;
};

/// Builds the standard post-training report on the test splits. The pairwise
/// energy entry (j, j') averages the two translation directions
/// (translate(test_j, j->j') vs test_j' and vice versa) so the matrix is
/// symmetric.
EvalReport evaluate_model(const AlignmentModel& model,
                          const std::vector<DomainDataset>& datasets,
                          const std::string& fingerprint,
                          const EvalOptions& options = {});

}  // namespace aub
