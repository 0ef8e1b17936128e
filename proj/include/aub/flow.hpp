#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "aub/matrix.hpp"
#include "aub/param_store.hpp"
#include "aub/rng.hpp"

namespace aub {

/// Opaque forward-pass cache. backward() requires the cache produced by
/// forward_cached() on the same input; anything else is rejected.
struct FlowCache {
    virtual ~FlowCache() = default;
};

/// Invertible map with an exact per-row log|det J| and analytic parameter
/// gradients. Forward maps data to the shared latent space; inverse maps back.
class Flow {
public:
    virtual ~Flow() = default;

    virtual std::size_t dim() const = 0;

    /// z gets the transformed batch, logdet one entry per row.
    virtual void forward(const Matrix& x, Matrix& z, std::vector<double>& logdet) const = 0;

    virtual void inverse(const Matrix& z, Matrix& x) const = 0;

    virtual std::unique_ptr<FlowCache> forward_cached(const Matrix& x, Matrix& z,
                                                      std::vector<double>& logdet) const = 0;

    /// Accumulates dLoss/dtheta into the store given upstream gradients with
    /// respect to (z, logdet); writes dLoss/dx into grad_x.
    virtual void backward(const FlowCache& cache, const Matrix& grad_z,
                          const std::vector<double>& grad_logdet, Matrix& grad_x) = 0;

    /// Convenience wrapper: run forward_cached on x, then backward.
    void backward_at(const Matrix& x, const Matrix& grad_z,
                     const std::vector<double>& grad_logdet, Matrix& grad_x);

    virtual ParameterStore& params() = 0;
    virtual const ParameterStore& params() const = 0;
    std::size_t param_count() const { return params().size(); }

    /// Architecture description for checkpoints (no parameter values).
    virtual nlohmann::json spec() const = 0;
};

class IdentityFlow final : public Flow {
public:
    explicit IdentityFlow(std::size_t dim) : dim_(dim) {}

    std::size_t dim() const override { return dim_; }
    void forward(const Matrix& x, Matrix& z, std::vector<double>& logdet) const override;
    void inverse(const Matrix& z, Matrix& x) const override;
    std::unique_ptr<FlowCache> forward_cached(const Matrix& x, Matrix& z,
                                              std::vector<double>& logdet) const override;
    void backward(const FlowCache& cache, const Matrix& grad_z,
                  const std::vector<double>& grad_logdet, Matrix& grad_x) override;
    ParameterStore& params() override { return store_; }
    const ParameterStore& params() const override { return store_; }
    nlohmann::json spec() const override;

private:
    std::size_t dim_;
    ParameterStore store_;
};

/// Elementwise map z = a * x + b with learnable a, b. log|det| is sum(log|a|),
/// independent of x. Initialized to the identity (a = 1, b = 0).
class AffineFlow final : public Flow {
public:
    explicit AffineFlow(std::size_t dim);
    AffineFlow(std::vector<double> scale, std::vector<double> shift);

    std::size_t dim() const override { return dim_; }
    void forward(const Matrix& x, Matrix& z, std::vector<double>& logdet) const override;
    void inverse(const Matrix& z, Matrix& x) const override;
    std::unique_ptr<FlowCache> forward_cached(const Matrix& x, Matrix& z,
                                              std::vector<double>& logdet) const override;
    void backward(const FlowCache& cache, const Matrix& grad_z,
                  const std::vector<double>& grad_logdet, Matrix& grad_x) override;
    ParameterStore& params() override { return store_; }
    const ParameterStore& params() const override { return store_; }
    nlohmann::json spec() const override;

    std::span<const double> scale() const { return store_.values(a_off_, dim_); }
    std::span<const double> shift() const { return store_.values(b_off_, dim_); }

private:
    std::size_t dim_;
    ParameterStore store_;
    std::size_t a_off_ = 0;
    std::size_t b_off_ = 0;
};

enum class Activation { Tanh, Relu };

/// Fully connected net dim -> hidden x(1 + n_hidden) -> dim with a learnable
/// per-output gain. The final linear layer is zero-initialized so a fresh net
/// outputs exactly zero.
class DenseNet {
public:
    DenseNet(ParameterStore& store, const std::string& prefix, std::size_t in_dim,
             std::size_t out_dim, std::size_t hidden_dim, std::size_t n_hidden,
             Activation activation, SeededRng& rng);

    struct Cache {
        std::vector<Matrix> acts;  // post-activation per hidden layer
        Matrix raw;                // final linear output, before the gain
    };

    void forward(const Matrix& x, Matrix& out, Cache* cache = nullptr) const;

    /// grad_out is dLoss/d(gain * raw). Accumulates parameter gradients and
    /// adds dLoss/dx into grad_x (which must be pre-sized and may hold other
    /// contributions already).
    void backward(const Matrix& x, const Cache& cache, const Matrix& grad_out,
                  Matrix& grad_x);

    std::size_t param_count() const;

private:
    struct Linear {
        std::size_t w = 0;  // offset of (rows x cols) weight block
        std::size_t b = 0;  // offset of bias
        std::size_t rows = 0;
        std::size_t cols = 0;
    };

    void linear_forward(const Linear& l, const Matrix& in, Matrix& out) const;

    ParameterStore* store_;
    std::size_t in_, out_, hidden_, n_hidden_;
    Activation activation_;
    std::vector<Linear> linears_;  // n_hidden + 2 entries
    std::size_t gain_ = 0;
};

/// RealNVP-style affine coupling layer. Coordinates with pass_mask set are
/// carried through unchanged and feed two nets producing log-scale and shift
/// for the remaining coordinates. The log-scale is squashed to
/// (-scale_clamp, scale_clamp) before exponentiation.
class CouplingLayer {
public:
    CouplingLayer(ParameterStore& store, const std::string& prefix, std::size_t dim,
                  std::vector<std::uint8_t> pass_mask, std::size_t hidden_dim,
                  std::size_t n_hidden, double scale_clamp, SeededRng& rng);

    struct Cache {
        Matrix masked_in;
        Matrix scale;      // squashed log-scale, zero on pass-through coords
        Matrix exp_scale;  // exp(scale)
        DenseNet::Cache s_cache, t_cache;
    };

    void forward(const Matrix& x, Matrix& y, std::vector<double>* logdet,
                 Cache* cache) const;
    void inverse(const Matrix& y, Matrix& x) const;
    void backward(const Matrix& x, const Cache& cache, const Matrix& grad_y,
                  const std::vector<double>& grad_logdet, Matrix& grad_x);

    std::size_t dim() const { return dim_; }
    const std::vector<std::uint8_t>& pass_mask() const { return mask_; }
    double scale_clamp() const { return scale_clamp_; }

private:
    void masked_input(const Matrix& x, Matrix& out) const;

    std::size_t dim_;
    double scale_clamp_;
    std::vector<std::uint8_t> mask_;  // 1 = pass-through
    DenseNet s_net_;
    DenseNet t_net_;
};

/// Stack of coupling layers applied in order; inverse runs in reverse and the
/// composed log|det| is the sum of the layer terms.
class FlowSequence final : public Flow {
public:
    explicit FlowSequence(std::size_t dim);

    void add_coupling_layer(std::vector<std::uint8_t> pass_mask, std::size_t hidden_dim,
                            std::size_t n_hidden, double scale_clamp, SeededRng& rng);

    std::size_t dim() const override { return dim_; }
    std::size_t n_layers() const { return layers_.size(); }
    const CouplingLayer& layer(std::size_t i) const { return layers_[i]; }

    void forward(const Matrix& x, Matrix& z, std::vector<double>& logdet) const override;
    void inverse(const Matrix& z, Matrix& x) const override;
    std::unique_ptr<FlowCache> forward_cached(const Matrix& x, Matrix& z,
                                              std::vector<double>& logdet) const override;
    void backward(const FlowCache& cache, const Matrix& grad_z,
                  const std::vector<double>& grad_logdet, Matrix& grad_x) override;
    ParameterStore& params() override { return store_; }
    const ParameterStore& params() const override { return store_; }
    nlohmann::json spec() const override;

private:
    struct LayerArch {
        std::size_t hidden_dim, n_hidden;
        double scale_clamp;
    };

    std::size_t dim_;
    ParameterStore store_;
    std::vector<CouplingLayer> layers_;
    std::vector<LayerArch> archs_;
};

/// Alternating-mask coupling stack. Layer 2i keeps even coordinates, layer
/// 2i+1 keeps odd ones. Each coupling layer holds two nets shaped
/// dim -> hidden -> (hidden)^n_hidden -> dim plus a per-output gain, which is
/// what the published per-flow parameter counts correspond to.
std::unique_ptr<FlowSequence> make_realnvp(std::size_t dim, std::size_t n_layers,
                                           std::size_t hidden_dim, std::size_t n_hidden,
                                           std::uint64_t seed, double scale_clamp = 5.0);

/// Rebuilds a flow from its spec() JSON (parameters zero/identity-initialized;
/// callers overwrite them, e.g. when loading a checkpoint).
std::shared_ptr<Flow> flow_from_spec(const nlohmann::json& spec);

}  // namespace aub
