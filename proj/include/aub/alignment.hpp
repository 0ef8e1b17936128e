#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "aub/data.hpp"
#include "aub/density.hpp"
#include "aub/flow.hpp"
#include "aub/optimizer.hpp"
#include "aub/quadrature.hpp"

namespace aub {

/// k invertible maps into one shared latent space, a shared density model, and
/// a probability weight vector over the domains.
struct AlignmentModel {
    std::vector<std::shared_ptr<Flow>> flows;
    std::shared_ptr<Density> density;
    std::vector<double> weights;

    std::size_t k() const { return flows.size(); }
    std::size_t dim() const { return density->dim(); }
    void validate() const;
};

/// Uniform weights unless given explicitly.
AlignmentModel make_alignment_model(std::vector<std::shared_ptr<Flow>> flows,
                                    std::shared_ptr<Density> density,
                                    std::vector<double> weights = {});

enum class TrainMode { Aub, AlignFlowMle, Lrmf };

struct TrainConfig {
    std::size_t max_epochs = 100;
    std::size_t batch_size = 128;
    OptimizerConfig q_optimizer;
    OptimizerConfig t_optimizer;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::Aub;
    std::size_t patience = 0;  // 0 disables early stopping

    /// Mode rules: AlignFlowMle freezes the density and requires it to be the
    /// fixed standard normal; Lrmf requires exactly two domains with the
    /// second flow frozen at the identity.
    void validate_with(const AlignmentModel& model) const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_aub = 0.0;
    double val_aub = 0.0;
    double q_loglik = 0.0;
    double wall_time_s = 0.0;
};

struct TrainTrace {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_aub = 0.0;
    /// Parameter values at the last completed epoch (one snapshot per flow,
    /// then the density); the model itself ends at the best-validation epoch.
    std::vector<std::vector<double>> final_params;
};

void write_trace_jsonl(const std::filesystem::path& path, const TrainTrace& trace);

/// The alignment upper-bound loss: sum_j w_j * mean_i [ -logdet_j(x_i)
/// - log q(T_j(x_i)) ]. Batch means approximate the per-domain expectations.
double aub_loss(const AlignmentModel& model, const std::vector<Matrix>& batches);

/// Same formula on held-out data, promising no mutation.
double aub_metric(const AlignmentModel& model, const std::vector<Matrix>& test_batches);

/// Density-update gradient for one batch tuple: accumulates the gradient of
/// -(1/k) sum_j mean_i log q(T_j(x_i)) into the density store and returns the
/// mean log-likelihood (1/k) sum_j mean_i log q(T_j(x_i)).
double q_step_gradient(AlignmentModel& model, const std::vector<Matrix>& batches);

/// Flow-update gradient for domain j: accumulates the gradient of
/// -mean_i [ logdet_j + log q(T_j(x_i)) ] into flow j's store (the density
/// store picks up incidental gradients; callers that keep q frozen just never
/// step it). Returns the domain objective mean_i [ -logdet - log q ].
double t_step_gradient(AlignmentModel& model, std::size_t j, const Matrix& batch);

bool q_trainable(const AlignmentModel& model, TrainMode mode);
bool t_trainable(const AlignmentModel& model, TrainMode mode, std::size_t j);

/// One density update over a batch tuple (no-op when the mode freezes q).
/// Returns the mean log-likelihood seen by the update.
double q_step(AlignmentModel& model, const std::vector<Matrix>& batches,
              Optimizer& q_optimizer, TrainMode mode);

/// One flow update per trainable domain. Returns sum_j w_j * objective_j.
double t_step(AlignmentModel& model, const std::vector<Matrix>& batches,
              std::vector<Optimizer>& t_optimizers, TrainMode mode);

/// Alternating trainer: per epoch, a full pass of density updates over every
/// batch tuple, then a full pass of flow updates. Keeps the parameters from
/// the epoch with the best validation AUB. Throws on divergence (non-finite
/// train AUB), reporting the epoch.
TrainTrace train(AlignmentModel& model, const std::vector<DomainDataset>& datasets,
                 const TrainConfig& config);

// ---------------------------------------------------------------------------
// theory-check oracles (analytic cases only)

struct BoundCheckResult {
    double upper_bound = 0.0;  // Hc(P_zmix, q) - sum_j w_j H(P_zj)
    double gjsd = 0.0;         // GJSD of the latent distributions
    double gap = 0.0;          // KL(P_zmix, q)
};

/// Verifies the variational upper bound on analytic 1-D cases: sources must be
/// Gaussian1D/Uniform1D and flows identity or affine so every latent density
/// is closed-form. Asserts upper_bound >= gjsd - 1e-6 and
/// |upper_bound - gjsd - gap| <= 1e-6.
BoundCheckResult bound_check(
    const std::vector<std::shared_ptr<const AnalyticDensity>>& sources,
    const std::vector<std::shared_ptr<const Flow>>& flows,
    std::span<const double> weights, const Density& q,
    const QuadratureOptions& opt = {});

struct EntropyCovResult {
    double lhs = 0.0;  // quadrature entropy of the pushforward
    double rhs = 0.0;  // H(P_x) + MC mean of logdet
    double abs_err = 0.0;
};

/// Entropy change-of-variables check: pushforward entropy by quadrature (dims
/// 1 and 2) against the closed-form base entropy plus the Monte-Carlo mean of
/// log|J|.
EntropyCovResult entropy_cov_check(const Flow& flow,
                                   const DiagonalGaussianAnalytic& base,
                                   std::size_t n_samples, SeededRng& rng,
                                   const QuadratureOptions& opt = {});

}  // namespace aub
