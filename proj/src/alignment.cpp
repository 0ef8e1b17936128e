#include "aub/alignment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace aub {

void AlignmentModel::validate() const {
    require(!flows.empty(), "alignment model needs at least one flow");
    require(density != nullptr, "alignment model needs a density");
    require(weights.size() == flows.size(), "weights length must equal the number of flows");
    double sum = 0.0;
    for (double w : weights) {
        require(w > 0.0, "domain weights must be positive");
        sum += w;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "domain weights must sum to 1, got ", sum);
    for (const auto& f : flows) {
        require(f->dim() == density->dim(), "flow dim ", f->dim(),
                " does not match density dim ", density->dim());
    }
}

AlignmentModel make_alignment_model(std::vector<std::shared_ptr<Flow>> flows,
                                    std::shared_ptr<Density> density,
                                    std::vector<double> weights) {
    AlignmentModel model;
    model.flows = std::move(flows);
    model.density = std::move(density);
    if (weights.empty()) {
        weights.assign(model.flows.size(), 1.0 / static_cast<double>(model.flows.size()));
    }
    model.weights = std::move(weights);
    model.validate();
    return model;
}

void TrainConfig::validate_with(const AlignmentModel& model) const {
    require(max_epochs >= 1, "max_epochs must be at least 1");
    require(batch_size >= 1, "batch_size must be at least 1");
    if (mode == TrainMode::AlignFlowMle) {
        require(dynamic_cast<const FixedStandardNormal*>(model.density.get()) != nullptr,
                "alignflow_mle mode requires the fixed standard normal density");
    }
    if (mode == TrainMode::Lrmf) {
        require(model.k() == 2, "lrmf mode requires exactly 2 domains, got ", model.k());
        require(dynamic_cast<const IdentityFlow*>(model.flows[1].get()) != nullptr,
                "lrmf mode requires the second flow to be the identity");
    }
}

// ---------------------------------------------------------------------------
// loss and metric

double aub_loss(const AlignmentModel& model, const std::vector<Matrix>& batches) {
    model.validate();
    require(batches.size() == model.k(), "expected ", model.k(), " batches, got ",
            batches.size());
    double total = 0.0;
    Matrix z;
    std::vector<double> logdet, lp;
    for (std::size_t j = 0; j < model.k(); ++j) {
        const Matrix& x = batches[j];
        require(x.rows() > 0, "batch for domain ", j, " is empty");
        require(x.cols() == model.dim(), "batch for domain ", j, " has width ", x.cols(),
                " but the model dimension is ", model.dim());
        model.flows[j]->forward(x, z, logdet);
        model.density->log_prob(z, lp);
        double mean = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const double term = -logdet[r] - lp[r];
            if (!std::isfinite(term)) {
                fail("non-finite aub term for domain ", j, ", sample ", r);
            }
            mean += term;
        }
        total += model.weights[j] * mean / static_cast<double>(x.rows());
    }
    return total;
}

double aub_metric(const AlignmentModel& model, const std::vector<Matrix>& test_batches) {
    return aub_loss(model, test_batches);
}

// ---------------------------------------------------------------------------
// alternating updates

bool q_trainable(const AlignmentModel& model, TrainMode mode) {
    return mode != TrainMode::AlignFlowMle && model.density->param_count() > 0;
}

bool t_trainable(const AlignmentModel& model, TrainMode mode, std::size_t j) {
    if (mode == TrainMode::Lrmf && j == 1) return false;
    return model.flows[j]->param_count() > 0;
}

double q_step_gradient(AlignmentModel& model, const std::vector<Matrix>& batches) {
    require(batches.size() == model.k(), "expected ", model.k(), " batches");
    const double k_inv = 1.0 / static_cast<double>(model.k());
    double loglik = 0.0;
    Matrix z, grad_z;
    std::vector<double> logdet, lp, upstream;
    for (std::size_t j = 0; j < model.k(); ++j) {
        const Matrix& x = batches[j];
        require(x.rows() > 0, "batch for domain ", j, " is empty");
        model.flows[j]->forward(x, z, logdet);
        model.density->log_prob(z, lp);
        const double n_inv = 1.0 / static_cast<double>(x.rows());
        for (double v : lp) loglik += k_inv * n_inv * v;
        // descent on the negative mean log-likelihood
        upstream.assign(x.rows(), -k_inv * n_inv);
        model.density->backward(z, upstream, grad_z);
    }
    return loglik;
}

double t_step_gradient(AlignmentModel& model, std::size_t j, const Matrix& batch) {
    require(j < model.k(), "domain index out of range");
    require(batch.rows() > 0, "batch for domain ", j, " is empty");
    Matrix z, grad_z, grad_x;
    std::vector<double> logdet, lp;
    auto cache = model.flows[j]->forward_cached(batch, z, logdet);
    model.density->log_prob(z, lp);
    const double n_inv = 1.0 / static_cast<double>(batch.rows());
    double objective = 0.0;
    for (std::size_t r = 0; r < batch.rows(); ++r) objective += -logdet[r] - lp[r];
    objective *= n_inv;

    std::vector<double> upstream(batch.rows(), -n_inv);
    model.density->backward(z, upstream, grad_z);  // also yields dL/dz
    std::vector<double> grad_logdet(batch.rows(), -n_inv);
    model.flows[j]->backward(*cache, grad_z, grad_logdet, grad_x);
    return objective;
}

double q_step(AlignmentModel& model, const std::vector<Matrix>& batches,
              Optimizer& q_optimizer, TrainMode mode) {
    if (!q_trainable(model, mode)) {
        // still report the mean log-likelihood for the trace
        double loglik = 0.0;
        Matrix z;
        std::vector<double> logdet, lp;
        const double k_inv = 1.0 / static_cast<double>(model.k());
        for (std::size_t j = 0; j < model.k(); ++j) {
            model.flows[j]->forward(batches[j], z, logdet);
            model.density->log_prob(z, lp);
            double mean = 0.0;
            for (double v : lp) mean += v;
            loglik += k_inv * mean / static_cast<double>(batches[j].rows());
        }
        return loglik;
    }
    model.density->params().zero_grads();
    const double loglik = q_step_gradient(model, batches);
    q_optimizer.step(model.density->params());
    return loglik;
}

double t_step(AlignmentModel& model, const std::vector<Matrix>& batches,
              std::vector<Optimizer>& t_optimizers, TrainMode mode) {
    require(t_optimizers.size() == model.k(), "one flow optimizer per domain required");
    double weighted = 0.0;
    for (std::size_t j = 0; j < model.k(); ++j) {
        if (!t_trainable(model, mode, j)) {
            // frozen flows still contribute their objective value
            Matrix z;
            std::vector<double> logdet, lp;
            model.flows[j]->forward(batches[j], z, logdet);
            model.density->log_prob(z, lp);
            double mean = 0.0;
            for (std::size_t r = 0; r < batches[j].rows(); ++r) mean += -logdet[r] - lp[r];
            weighted += model.weights[j] * mean / static_cast<double>(batches[j].rows());
            continue;
        }
        model.flows[j]->params().zero_grads();
        const double objective = t_step_gradient(model, j, batches[j]);
        t_optimizers[j].step(model.flows[j]->params());
        weighted += model.weights[j] * objective;
    }
    // discard incidental density gradients accumulated while chaining
    model.density->params().zero_grads();
    return weighted;
}

// ---------------------------------------------------------------------------
// trainer

namespace {
std::vector<Matrix> make_batches(const Matrix& data, std::size_t batch_size,
                                 SeededRng& rng) {
    std::vector<std::size_t> idx(data.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    std::vector<Matrix> out;
    if (data.rows() <= batch_size) {
        out.push_back(data.take_rows(idx));  // one full-dataset batch
        return out;
    }
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t len = std::min(batch_size, idx.size() - start);
        out.push_back(data.take_rows(std::span<const std::size_t>(idx).subspan(start, len)));
    }
    return out;
}

std::vector<Matrix> collect(const std::vector<DomainDataset>& ds,
                            Matrix DomainDataset::*split) {
    std::vector<Matrix> out;
    out.reserve(ds.size());
    for (const auto& d : ds) out.push_back(d.*split);
    return out;
}
}  // namespace

TrainTrace train(AlignmentModel& model, const std::vector<DomainDataset>& datasets,
                 const TrainConfig& config) {
    model.validate();
    config.validate_with(model);
    require(datasets.size() == model.k(), "expected ", model.k(), " datasets, got ",
            datasets.size());
    for (std::size_t j = 0; j < datasets.size(); ++j) {
        require(datasets[j].train.rows() > 0, "domain '", datasets[j].name,
                "' has an empty train split");
        require(datasets[j].dim == model.dim(), "domain '", datasets[j].name,
                "' width ", datasets[j].dim, " does not match model dim ", model.dim());
    }

    SeededRng rng = SeededRng(config.seed).derive(0x7261696eull);  // trainer stream
    Optimizer q_opt(config.q_optimizer, model.density->param_count());
    std::vector<Optimizer> t_opts;
    for (const auto& f : model.flows) {
        t_opts.emplace_back(config.t_optimizer, f->param_count());
    }

    const auto val_batches = collect(datasets, &DomainDataset::val);
    bool have_val = true;
    for (const auto& v : val_batches) have_val = have_val && v.rows() > 0;

    TrainTrace trace;
    trace.best_val_aub = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_params;
    auto snapshot_model = [&] {
        best_params.clear();
        for (const auto& f : model.flows) best_params.push_back(f->params().snapshot());
        best_params.push_back(model.density->params().snapshot());
    };
    snapshot_model();
    std::size_t since_best = 0;

    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::vector<std::vector<Matrix>> batches(model.k());
        std::size_t n_tuples = 0;
        for (std::size_t j = 0; j < model.k(); ++j) {
            batches[j] = make_batches(datasets[j].train, config.batch_size, rng);
            n_tuples = std::max(n_tuples, batches[j].size());
        }
        auto tuple_at = [&](std::size_t t) {
            std::vector<Matrix> tup;
            tup.reserve(model.k());
            for (std::size_t j = 0; j < model.k(); ++j) {
                tup.push_back(batches[j][t % batches[j].size()]);
            }
            return tup;
        };

        double q_loglik = 0.0;
        for (std::size_t t = 0; t < n_tuples; ++t) {
            q_loglik += q_step(model, tuple_at(t), q_opt, config.mode);
        }
        q_loglik /= static_cast<double>(n_tuples);

        double train_aub = 0.0;
        for (std::size_t t = 0; t < n_tuples; ++t) {
            train_aub += t_step(model, tuple_at(t), t_opts, config.mode);
        }
        train_aub /= static_cast<double>(n_tuples);

        if (!std::isfinite(train_aub)) {
            fail("training diverged at epoch ", epoch, ": train aub is not finite");
        }

        const double val_aub =
            have_val ? aub_metric(model, val_batches) : train_aub;
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        trace.epochs.push_back({epoch, train_aub, val_aub, q_loglik, wall});

        if (val_aub < trace.best_val_aub) {
            trace.best_val_aub = val_aub;
            trace.best_epoch = epoch;
            snapshot_model();
            since_best = 0;
        } else {
            ++since_best;
            if (config.patience > 0 && since_best >= config.patience) break;
        }
    }

    for (const auto& f : model.flows) trace.final_params.push_back(f->params().snapshot());
    trace.final_params.push_back(model.density->params().snapshot());
    for (std::size_t j = 0; j < model.k(); ++j) {
        model.flows[j]->params().restore(best_params[j]);
    }
    model.density->params().restore(best_params.back());
    return trace;
}

void write_trace_jsonl(const std::filesystem::path& path, const TrainTrace& trace) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write trace file '", path.string(), "'");
    for (const auto& e : trace.epochs) {
        nlohmann::json row = {{"epoch", e.epoch},
                              {"train_aub", e.train_aub},
                              {"val_aub", e.val_aub},
                              {"q_loglik", e.q_loglik},
                              {"wall_time_s", e.wall_time_s}};
        out << row.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// theory checks

BoundCheckResult bound_check(
    const std::vector<std::shared_ptr<const AnalyticDensity>>& sources,
    const std::vector<std::shared_ptr<const Flow>>& flows,
    std::span<const double> weights, const Density& q, const QuadratureOptions& opt) {
    require(!sources.empty() && sources.size() == flows.size() &&
                sources.size() == weights.size(),
            "bound_check needs matching sources, flows, and weights");
    require(q.dim() == 1, "bound_check works on 1-D analytic cases");

    // Latent densities in closed form; only identity/affine flows qualify.
    std::vector<std::shared_ptr<const AnalyticDensity>> latents;
    for (std::size_t j = 0; j < sources.size(); ++j) {
        require(sources[j]->dim() == 1, "bound_check sources must be 1-D");
        const bool analytic_source =
            dynamic_cast<const Gaussian1D*>(sources[j].get()) != nullptr ||
            dynamic_cast<const Uniform1D*>(sources[j].get()) != nullptr;
        require(analytic_source, "bound_check sources must be Gaussian or uniform");
        if (dynamic_cast<const IdentityFlow*>(flows[j].get()) != nullptr) {
            latents.push_back(sources[j]);
        } else if (const auto* aff = dynamic_cast<const AffineFlow*>(flows[j].get())) {
            latents.push_back(affine_image_1d(sources[j], aff->scale()[0], aff->shift()[0]));
        } else {
            fail("bound_check requires identity or affine flows");
        }
    }

    AnalyticMixture mix(latents, std::vector<double>(weights.begin(), weights.end()));
    std::vector<double> lo(1), hi(1);
    mix.bounding_box(opt.nsigma, lo, hi);
    QuadratureOptions boxed = opt;
    boxed.box_lo = lo;
    boxed.box_hi = hi;

    auto log_q = [&](std::span<const double> x) {
        Matrix z(1, 1);
        z(0, 0) = x[0];
        std::vector<double> lp;
        q.log_prob(z, lp);
        return lp[0];
    };

    BoundCheckResult out;
    const double hc = cross_entropy_quadrature(mix, log_q, boxed);
    double h_sum = 0.0;
    for (std::size_t j = 0; j < latents.size(); ++j) {
        h_sum += weights[j] * entropy_quadrature(*latents[j], boxed);
    }
    out.upper_bound = hc - h_sum;
    out.gjsd = gjsd_quadrature(latents, weights, boxed).value;
    out.gap = kl_quadrature(mix, log_q, boxed);

    require(out.upper_bound >= out.gjsd - 1e-6,
            "upper bound violated: bound=", out.upper_bound, " gjsd=", out.gjsd);
    require(std::abs(out.upper_bound - out.gjsd - out.gap) <= 1e-6,
            "bound gap identity violated: bound=", out.upper_bound,
            " gjsd=", out.gjsd, " gap=", out.gap);
    return out;
}

namespace {
/// log density of the pushforward of `base` under `flow`, evaluated on a batch
/// of latent points: log p_z(z) = log p_x(T^{-1}(z)) - log|J_T(T^{-1}(z))|.
void pushforward_log_density(const Flow& flow, const DiagonalGaussianAnalytic& base,
                             const Matrix& z, std::vector<double>& out) {
    Matrix x, z_check;
    std::vector<double> logdet;
    flow.inverse(z, x);
    flow.forward(x, z_check, logdet);
    out.assign(z.rows(), 0.0);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        out[r] = base.log_density(x.row(r)) - logdet[r];
    }
}
}  // namespace

EntropyCovResult entropy_cov_check(const Flow& flow, const DiagonalGaussianAnalytic& base,
                                   std::size_t n_samples, SeededRng& rng,
                                   const QuadratureOptions& opt) {
    require(flow.dim() == base.dim(), "flow/base dim mismatch");
    require(base.dim() <= 2, "pushforward entropy quadrature supports dims 1 and 2");
    require(n_samples >= 1, "entropy_cov_check needs samples");

    // rhs: H(P_x) + E[log|J|], the expectation by Monte Carlo over base samples.
    Matrix xs = base.sample(n_samples, rng);
    Matrix zs;
    std::vector<double> logdet;
    flow.forward(xs, zs, logdet);
    double mean_logdet = 0.0;
    for (double v : logdet) mean_logdet += v;
    mean_logdet /= static_cast<double>(n_samples);
    EntropyCovResult out;
    out.rhs = base.entropy() + mean_logdet;

    // lhs: quadrature entropy of the pushforward over a box derived from the
    // transformed samples (covers the mass seen by the flow).
    const std::size_t d = base.dim();
    std::vector<double> lo(d), hi(d);
    if (opt.box_lo && opt.box_hi) {
        lo = *opt.box_lo;
        hi = *opt.box_hi;
    } else {
        base.bounding_box(opt.nsigma, lo, hi);
        // expand by the sample image in case the flow moves mass around
        for (std::size_t c = 0; c < d; ++c) {
            double zmin = lo[c], zmax = hi[c];
            for (std::size_t r = 0; r < zs.rows(); ++r) {
                zmin = std::min(zmin, zs(r, c));
                zmax = std::max(zmax, zs(r, c));
            }
            const double pad = 0.25 * (zmax - zmin) + 1.0;
            lo[c] = zmin - pad;
            hi[c] = zmax + pad;
        }
    }

    const std::size_t n = opt.points_per_dim;
    auto entropy_on_grid = [&](std::size_t points) {
        std::vector<double> lp;
        if (d == 1) {
            const double h = (hi[0] - lo[0]) / static_cast<double>(points - 1);
            Matrix grid(points, 1);
            for (std::size_t i = 0; i < points; ++i) {
                grid(i, 0) = lo[0] + static_cast<double>(i) * h;
            }
            pushforward_log_density(flow, base, grid, lp);
            double acc = 0.0;
            for (std::size_t i = 0; i < points; ++i) {
                const double w = (i == 0 || i + 1 == points) ? 0.5 : 1.0;
                if (lp[i] > -745.0) acc += -w * std::exp(lp[i]) * lp[i];
            }
            return acc * h;
        }
        const double hx = (hi[0] - lo[0]) / static_cast<double>(points - 1);
        const double hy = (hi[1] - lo[1]) / static_cast<double>(points - 1);
        double acc = 0.0;
        Matrix strip(points, 2);
        for (std::size_t i = 0; i < points; ++i) {
            const double x0 = lo[0] + static_cast<double>(i) * hx;
            for (std::size_t jj = 0; jj < points; ++jj) {
                strip(jj, 0) = x0;
                strip(jj, 1) = lo[1] + static_cast<double>(jj) * hy;
            }
            pushforward_log_density(flow, base, strip, lp);
            const double wx = (i == 0 || i + 1 == points) ? 0.5 : 1.0;
            double row = 0.0;
            for (std::size_t jj = 0; jj < points; ++jj) {
                const double wy = (jj == 0 || jj + 1 == points) ? 0.5 : 1.0;
                if (lp[jj] > -745.0) row += -wy * std::exp(lp[jj]) * lp[jj];
            }
            acc += wx * row;
        }
        return acc * hx * hy;
    };

    const double coarse = entropy_on_grid(n);
    const double refined = entropy_on_grid(2 * n - 1);
    if (std::abs(coarse - refined) > opt.refine_tol) {
        fail("quadrature grid too coarse for pushforward entropy: coarse=", coarse,
             " refined=", refined);
    }
    out.lhs = refined;
    out.abs_err = std::abs(out.lhs - out.rhs);
    return out;
}

}  // namespace aub
