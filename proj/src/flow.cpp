#include "aub/flow.hpp"

#include <cmath>

namespace aub {

void Flow::backward_at(const Matrix& x, const Matrix& grad_z,
                       const std::vector<double>& grad_logdet, Matrix& grad_x) {
    Matrix z;
    std::vector<double> logdet;
    auto cache = forward_cached(x, z, logdet);
    backward(*cache, grad_z, grad_logdet, grad_x);
}

// ---------------------------------------------------------------------------
// IdentityFlow

namespace {
struct IdentityCache final : FlowCache {
    std::size_t rows = 0;
    std::size_t cols = 0;
};
}  // namespace

void IdentityFlow::forward(const Matrix& x, Matrix& z, std::vector<double>& logdet) const {
    require(x.cols() == dim_, "identity flow dim mismatch: ", x.cols(), " vs ", dim_);
    z = x;
    logdet.assign(x.rows(), 0.0);
}

void IdentityFlow::inverse(const Matrix& z, Matrix& x) const {
    require(z.cols() == dim_, "identity flow dim mismatch: ", z.cols(), " vs ", dim_);
    x = z;
}

std::unique_ptr<FlowCache> IdentityFlow::forward_cached(const Matrix& x, Matrix& z,
                                                        std::vector<double>& logdet) const {
    forward(x, z, logdet);
    auto cache = std::make_unique<IdentityCache>();
    cache->rows = x.rows();
    cache->cols = x.cols();
    return cache;
}

void IdentityFlow::backward(const FlowCache& cache, const Matrix& grad_z,
                            const std::vector<double>& grad_logdet, Matrix& grad_x) {
    const auto* c = dynamic_cast<const IdentityCache*>(&cache);
    require(c != nullptr && c->rows == grad_z.rows() && c->cols == grad_z.cols(),
            "missing or mismatched forward cache for identity flow");
    (void)grad_logdet;
    grad_x = grad_z;
}

nlohmann::json IdentityFlow::spec() const {
    return {{"type", "identity"}, {"dim", dim_}};
}

// ---------------------------------------------------------------------------
// AffineFlow

namespace {
struct AffineCache final : FlowCache {
    Matrix x;
};
}  // namespace

AffineFlow::AffineFlow(std::size_t dim) : dim_(dim) {
    require(dim > 0, "affine flow needs a positive dimension");
    a_off_ = store_.add_segment("a", dim);
    b_off_ = store_.add_segment("b", dim);
    auto a = store_.values(a_off_, dim_);
    std::fill(a.begin(), a.end(), 1.0);
}

AffineFlow::AffineFlow(std::vector<double> scale, std::vector<double> shift)
    : AffineFlow(scale.size()) {
    require(scale.size() == shift.size(), "affine scale/shift length mismatch");
    for (double a : scale) require(a != 0.0, "affine scale must be nonzero");
    std::copy(scale.begin(), scale.end(), store_.values(a_off_, dim_).begin());
    std::copy(shift.begin(), shift.end(), store_.values(b_off_, dim_).begin());
}

void AffineFlow::forward(const Matrix& x, Matrix& z, std::vector<double>& logdet) const {
    require(x.cols() == dim_, "affine flow dim mismatch: ", x.cols(), " vs ", dim_);
    auto a = store_.values(a_off_, dim_);
    auto b = store_.values(b_off_, dim_);
    double ld = 0.0;
    for (double ai : a) {
        require(ai != 0.0, "affine flow has a zero scale coordinate");
        ld += std::log(std::abs(ai));
    }
    z.resize(x.rows(), dim_);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < dim_; ++c) z(r, c) = a[c] * x(r, c) + b[c];
    }
    logdet.assign(x.rows(), ld);
}

void AffineFlow::inverse(const Matrix& z, Matrix& x) const {
    require(z.cols() == dim_, "affine flow dim mismatch: ", z.cols(), " vs ", dim_);
    auto a = store_.values(a_off_, dim_);
    auto b = store_.values(b_off_, dim_);
    x.resize(z.rows(), dim_);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        for (std::size_t c = 0; c < dim_; ++c) x(r, c) = (z(r, c) - b[c]) / a[c];
    }
}

std::unique_ptr<FlowCache> AffineFlow::forward_cached(const Matrix& x, Matrix& z,
                                                      std::vector<double>& logdet) const {
    forward(x, z, logdet);
    auto cache = std::make_unique<AffineCache>();
    cache->x = x;
    return cache;
}

void AffineFlow::backward(const FlowCache& cache, const Matrix& grad_z,
                          const std::vector<double>& grad_logdet, Matrix& grad_x) {
    const auto* c = dynamic_cast<const AffineCache*>(&cache);
    require(c != nullptr && c->x.rows() == grad_z.rows() && grad_z.cols() == dim_,
            "missing or mismatched forward cache for affine flow");
    auto a = store_.values(a_off_, dim_);
    auto da = store_.grads(a_off_, dim_);
    auto db = store_.grads(b_off_, dim_);
    double logdet_upstream = 0.0;
    for (double g : grad_logdet) logdet_upstream += g;
    grad_x.resize(grad_z.rows(), dim_);
    for (std::size_t r = 0; r < grad_z.rows(); ++r) {
        for (std::size_t cc = 0; cc < dim_; ++cc) {
            da[cc] += grad_z(r, cc) * c->x(r, cc);
            db[cc] += grad_z(r, cc);
            grad_x(r, cc) = grad_z(r, cc) * a[cc];
        }
    }
    // d log|a_c| / d a_c = 1 / a_c
    for (std::size_t cc = 0; cc < dim_; ++cc) da[cc] += logdet_upstream / a[cc];
}

nlohmann::json AffineFlow::spec() const {
    return {{"type", "affine"}, {"dim", dim_}};
}

// ---------------------------------------------------------------------------
// DenseNet

DenseNet::DenseNet(ParameterStore& store, const std::string& prefix, std::size_t in_dim,
                   std::size_t out_dim, std::size_t hidden_dim, std::size_t n_hidden,
                   Activation activation, SeededRng& rng)
    : store_(&store), in_(in_dim), out_(out_dim), hidden_(hidden_dim),
      n_hidden_(n_hidden), activation_(activation) {
    require(in_dim > 0 && out_dim > 0 && hidden_dim > 0, "dense net sizes must be positive");
    auto add_linear = [&](const std::string& tag, std::size_t rows, std::size_t cols) {
        Linear l;
        l.rows = rows;
        l.cols = cols;
        l.w = store.add_segment(prefix + ".w" + tag, rows * cols);
        l.b = store.add_segment(prefix + ".b" + tag, rows);
        return l;
    };
    linears_.push_back(add_linear("0", hidden_dim, in_dim));
    for (std::size_t i = 0; i < n_hidden; ++i) {
        linears_.push_back(add_linear(std::to_string(i + 1), hidden_dim, hidden_dim));
    }
    linears_.push_back(add_linear("out", out_dim, hidden_dim));
    gain_ = store.add_segment(prefix + ".gain", out_dim);

    // Hidden layers get small random weights; the output layer stays at zero so
    // the net starts as the constant zero function and the flow as the identity.
    for (std::size_t li = 0; li + 1 < linears_.size(); ++li) {
        auto w = store.values(linears_[li].w, linears_[li].rows * linears_[li].cols);
        const double scale = std::sqrt(1.0 / static_cast<double>(linears_[li].cols));
        for (double& v : w) v = rng.normal() * scale;
    }
    auto gain = store.values(gain_, out_dim);
    std::fill(gain.begin(), gain.end(), 1.0);
}

std::size_t DenseNet::param_count() const {
    std::size_t n = out_;  // gain
    for (const auto& l : linears_) n += l.rows * l.cols + l.rows;
    return n;
}

void DenseNet::linear_forward(const Linear& l, const Matrix& in, Matrix& out) const {
    out.resize(in.rows(), l.rows);
    auto w = store_->values(l.w, l.rows * l.cols);
    auto b = store_->values(l.b, l.rows);
    for (std::size_t r = 0; r < in.rows(); ++r) {
        const double* xr = in.row(r).data();
        double* yr = out.row(r).data();
        for (std::size_t o = 0; o < l.rows; ++o) {
            const double* wo = w.data() + o * l.cols;
            double acc = b[o];
            for (std::size_t i = 0; i < l.cols; ++i) acc += xr[i] * wo[i];
            yr[o] = acc;
        }
    }
}

namespace {
void apply_activation(Matrix& m, Activation act) {
    double* p = m.data();
    const std::size_t n = m.size();
    if (act == Activation::Tanh) {
        for (std::size_t i = 0; i < n; ++i) p[i] = std::tanh(p[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) p[i] = p[i] > 0.0 ? p[i] : 0.0;
    }
}
}  // namespace

void DenseNet::forward(const Matrix& x, Matrix& out, Cache* cache) const {
    require(x.cols() == in_, "dense net input width mismatch: ", x.cols(), " vs ", in_);
    Matrix buf_a, buf_b;
    const Matrix* cur = &x;
    if (cache) {
        cache->acts.clear();
        cache->acts.reserve(linears_.size() - 1);
    }
    for (std::size_t li = 0; li + 1 < linears_.size(); ++li) {
        Matrix* dst;
        if (cache) {
            cache->acts.emplace_back();
            dst = &cache->acts.back();
        } else {
            dst = (cur == &buf_a) ? &buf_b : &buf_a;
        }
        linear_forward(linears_[li], *cur, *dst);
        apply_activation(*dst, activation_);
        cur = dst;
    }
    Matrix local_raw;
    Matrix* raw = cache ? &cache->raw : &local_raw;
    linear_forward(linears_.back(), *cur, *raw);

    auto gain = store_->values(gain_, out_);
    out.resize(x.rows(), out_);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double* yr = out.row(r).data();
        const double* rr = raw->row(r).data();
        for (std::size_t c = 0; c < out_; ++c) yr[c] = rr[c] * gain[c];
    }
}

void DenseNet::backward(const Matrix& x, const Cache& cache, const Matrix& grad_out,
                        Matrix& grad_x) {
    const std::size_t n = x.rows();
    require(cache.acts.size() == linears_.size() - 1 && cache.raw.rows() == n,
            "missing or mismatched dense net cache");
    require(grad_out.rows() == n && grad_out.cols() == out_, "dense net upstream shape mismatch");
    require(grad_x.rows() == n && grad_x.cols() == in_, "dense net grad_x must be pre-sized");

    auto gain = store_->values(gain_, out_);
    auto gain_grad = store_->grads(gain_, out_);
    Matrix grad_cur(n, out_);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < out_; ++c) {
            const double g = grad_out(r, c);
            gain_grad[c] += g * cache.raw(r, c);
            grad_cur(r, c) = g * gain[c];
        }
    }

    auto linear_backward = [&](const Linear& l, const Matrix& in, const Matrix& g_out,
                               Matrix& g_in) {
        auto w = store_->values(l.w, l.rows * l.cols);
        auto dw = store_->grads(l.w, l.rows * l.cols);
        auto db = store_->grads(l.b, l.rows);
        g_in.resize(in.rows(), l.cols);
        for (std::size_t r = 0; r < in.rows(); ++r) {
            const double* go = g_out.row(r).data();
            const double* xi = in.row(r).data();
            double* gi = g_in.row(r).data();
            for (std::size_t o = 0; o < l.rows; ++o) {
                const double g = go[o];
                if (g == 0.0) continue;
                db[o] += g;
                double* dwo = dw.data() + o * l.cols;
                const double* wo = w.data() + o * l.cols;
                for (std::size_t i = 0; i < l.cols; ++i) {
                    dwo[i] += g * xi[i];
                    gi[i] += g * wo[i];
                }
            }
        }
    };

    Matrix grad_below;
    linear_backward(linears_.back(), cache.acts.back(), grad_cur, grad_below);
    for (std::size_t li = linears_.size() - 1; li-- > 0;) {
        const Matrix& act = cache.acts[li];
        if (activation_ == Activation::Tanh) {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < act.cols(); ++c) {
                    grad_below(r, c) *= 1.0 - act(r, c) * act(r, c);
                }
            }
        } else {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < act.cols(); ++c) {
                    if (act(r, c) <= 0.0) grad_below(r, c) = 0.0;
                }
            }
        }
        const Matrix& in = (li == 0) ? x : cache.acts[li - 1];
        Matrix next;
        linear_backward(linears_[li], in, grad_below, next);
        grad_below = std::move(next);
    }
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < in_; ++c) grad_x(r, c) += grad_below(r, c);
    }
}

// ---------------------------------------------------------------------------
// CouplingLayer

CouplingLayer::CouplingLayer(ParameterStore& store, const std::string& prefix,
                             std::size_t dim, std::vector<std::uint8_t> pass_mask,
                             std::size_t hidden_dim, std::size_t n_hidden,
                             double scale_clamp, SeededRng& rng)
    : dim_(dim), scale_clamp_(scale_clamp), mask_(std::move(pass_mask)),
      s_net_(store, prefix + ".s", dim, dim, hidden_dim, n_hidden, Activation::Tanh, rng),
      t_net_(store, prefix + ".t", dim, dim, hidden_dim, n_hidden, Activation::Relu, rng) {
    require(mask_.size() == dim_, "coupling mask length mismatch");
    require(scale_clamp_ > 0.0, "scale clamp must be positive");
    std::size_t kept = 0;
    for (auto m : mask_) kept += m ? 1 : 0;
    require(kept > 0 && kept < dim_, "coupling mask needs at least one kept and one transformed coordinate");
}

void CouplingLayer::masked_input(const Matrix& x, Matrix& out) const {
    out.resize(x.rows(), dim_);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < dim_; ++c) out(r, c) = mask_[c] ? x(r, c) : 0.0;
    }
}

void CouplingLayer::forward(const Matrix& x, Matrix& y, std::vector<double>* logdet,
                            Cache* cache) const {
    require(x.cols() == dim_, "coupling layer dim mismatch: ", x.cols(), " vs ", dim_);
    const std::size_t n = x.rows();
    Matrix local_masked, local_scale, local_exp;
    Matrix& masked = cache ? cache->masked_in : local_masked;
    Matrix& scale = cache ? cache->scale : local_scale;
    Matrix& exp_scale = cache ? cache->exp_scale : local_exp;
    masked_input(x, masked);

    Matrix s_out, t_out;
    s_net_.forward(masked, s_out, cache ? &cache->s_cache : nullptr);
    t_net_.forward(masked, t_out, cache ? &cache->t_cache : nullptr);

    y.resize(n, dim_);
    scale.resize(n, dim_);
    exp_scale.resize(n, dim_);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < dim_; ++c) {
            if (mask_[c]) {
                y(r, c) = x(r, c);
            } else {
                const double s = scale_clamp_ * std::tanh(s_out(r, c) / scale_clamp_);
                const double e = std::exp(s);
                scale(r, c) = s;
                exp_scale(r, c) = e;
                y(r, c) = x(r, c) * e + t_out(r, c);
                if (logdet) (*logdet)[r] += s;
            }
        }
    }
}

void CouplingLayer::inverse(const Matrix& y, Matrix& x) const {
    require(y.cols() == dim_, "coupling layer dim mismatch: ", y.cols(), " vs ", dim_);
    const std::size_t n = y.rows();
    Matrix masked;
    masked_input(y, masked);  // kept coordinates agree between x and y
    Matrix s_out, t_out;
    s_net_.forward(masked, s_out, nullptr);
    t_net_.forward(masked, t_out, nullptr);
    x.resize(n, dim_);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < dim_; ++c) {
            if (mask_[c]) {
                x(r, c) = y(r, c);
            } else {
                const double s = scale_clamp_ * std::tanh(s_out(r, c) / scale_clamp_);
                x(r, c) = (y(r, c) - t_out(r, c)) * std::exp(-s);
            }
        }
    }
}

void CouplingLayer::backward(const Matrix& x, const Cache& cache, const Matrix& grad_y,
                             const std::vector<double>& grad_logdet, Matrix& grad_x) {
    const std::size_t n = x.rows();
    require(cache.masked_in.rows() == n && cache.scale.rows() == n,
            "missing or mismatched forward cache for coupling layer");
    require(grad_y.rows() == n && grad_logdet.size() == n, "coupling upstream shape mismatch");

    Matrix grad_s_out(n, dim_);
    Matrix grad_t_out(n, dim_);
    grad_x.resize(n, dim_);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < dim_; ++c) {
            if (mask_[c]) {
                grad_x(r, c) = grad_y(r, c);
            } else {
                const double s = cache.scale(r, c);
                const double e = cache.exp_scale(r, c);
                const double d_s = grad_y(r, c) * x(r, c) * e + grad_logdet[r];
                const double u = s / scale_clamp_;
                grad_s_out(r, c) = d_s * (1.0 - u * u);  // d/do of clamp*tanh(o/clamp)
                grad_t_out(r, c) = grad_y(r, c);
                grad_x(r, c) = grad_y(r, c) * e;
            }
        }
    }

    Matrix grad_masked(n, dim_);
    s_net_.backward(cache.masked_in, cache.s_cache, grad_s_out, grad_masked);
    t_net_.backward(cache.masked_in, cache.t_cache, grad_t_out, grad_masked);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < dim_; ++c) {
            if (mask_[c]) grad_x(r, c) += grad_masked(r, c);
        }
    }
}

// ---------------------------------------------------------------------------
// FlowSequence

namespace {
struct SequenceCache final : FlowCache {
    std::vector<Matrix> inputs;
    std::vector<CouplingLayer::Cache> layer_caches;
    std::size_t rows = 0;
};
}  // namespace

FlowSequence::FlowSequence(std::size_t dim) : dim_(dim) {
    require(dim > 0, "flow sequence needs a positive dimension");
}

void FlowSequence::add_coupling_layer(std::vector<std::uint8_t> pass_mask,
                                      std::size_t hidden_dim, std::size_t n_hidden,
                                      double scale_clamp, SeededRng& rng) {
    const std::string prefix = "layer" + std::to_string(layers_.size());
    layers_.emplace_back(store_, prefix, dim_, std::move(pass_mask), hidden_dim,
                         n_hidden, scale_clamp, rng);
    archs_.push_back({hidden_dim, n_hidden, scale_clamp});
}

void FlowSequence::forward(const Matrix& x, Matrix& z, std::vector<double>& logdet) const {
    require(x.cols() == dim_, "flow sequence dim mismatch: ", x.cols(), " vs ", dim_);
    logdet.assign(x.rows(), 0.0);
    Matrix cur = x;
    Matrix next;
    for (const auto& layer : layers_) {
        layer.forward(cur, next, &logdet, nullptr);
        std::swap(cur, next);
    }
    z = std::move(cur);
}

void FlowSequence::inverse(const Matrix& z, Matrix& x) const {
    require(z.cols() == dim_, "flow sequence dim mismatch: ", z.cols(), " vs ", dim_);
    Matrix cur = z;
    Matrix next;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        layers_[l].inverse(cur, next);
        std::swap(cur, next);
    }
    x = std::move(cur);
}

std::unique_ptr<FlowCache> FlowSequence::forward_cached(const Matrix& x, Matrix& z,
                                                        std::vector<double>& logdet) const {
    require(x.cols() == dim_, "flow sequence dim mismatch: ", x.cols(), " vs ", dim_);
    auto cache = std::make_unique<SequenceCache>();
    cache->rows = x.rows();
    cache->inputs.reserve(layers_.size());
    cache->layer_caches.resize(layers_.size());
    logdet.assign(x.rows(), 0.0);
    Matrix cur = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Matrix next;
        layers_[l].forward(cur, next, &logdet, &cache->layer_caches[l]);
        cache->inputs.push_back(std::move(cur));
        cur = std::move(next);
    }
    z = std::move(cur);
    return cache;
}

void FlowSequence::backward(const FlowCache& cache, const Matrix& grad_z,
                            const std::vector<double>& grad_logdet, Matrix& grad_x) {
    const auto* c = dynamic_cast<const SequenceCache*>(&cache);
    require(c != nullptr && c->inputs.size() == layers_.size() && c->rows == grad_z.rows(),
            "missing or mismatched forward cache for flow sequence");
    Matrix cur = grad_z;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        Matrix next;
        layers_[l].backward(c->inputs[l], c->layer_caches[l], cur, grad_logdet, next);
        cur = std::move(next);
    }
    grad_x = std::move(cur);
}

nlohmann::json FlowSequence::spec() const {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        nlohmann::json mask = nlohmann::json::array();
        for (auto m : layers_[l].pass_mask()) mask.push_back(static_cast<int>(m));
        layers.push_back({{"hidden_dim", archs_[l].hidden_dim},
                          {"n_hidden", archs_[l].n_hidden},
                          {"scale_clamp", archs_[l].scale_clamp},
                          {"pass_mask", mask}});
    }
    return {{"type", "coupling_stack"}, {"dim", dim_}, {"layers", layers}};
}

// ---------------------------------------------------------------------------

std::unique_ptr<FlowSequence> make_realnvp(std::size_t dim, std::size_t n_layers,
                                           std::size_t hidden_dim, std::size_t n_hidden,
                                           std::uint64_t seed, double scale_clamp) {
    require(dim >= 2, "coupling layers need dim >= 2 to split, got ", dim);
    require(n_layers >= 1 && hidden_dim >= 1, "realnvp sizes must be positive");
    SeededRng rng(seed);
    auto flow = std::make_unique<FlowSequence>(dim);
    for (std::size_t l = 0; l < n_layers; ++l) {
        std::vector<std::uint8_t> mask(dim);
        for (std::size_t c = 0; c < dim; ++c) {
            mask[c] = static_cast<std::uint8_t>((c % 2 == l % 2) ? 1 : 0);
        }
        flow->add_coupling_layer(std::move(mask), hidden_dim, n_hidden, scale_clamp, rng);
    }
    return flow;
}

std::shared_ptr<Flow> flow_from_spec(const nlohmann::json& spec) {
    const std::string type = spec.at("type").get<std::string>();
    const std::size_t dim = spec.at("dim").get<std::size_t>();
    if (type == "identity") return std::make_shared<IdentityFlow>(dim);
    if (type == "affine") return std::make_shared<AffineFlow>(dim);
    if (type == "coupling_stack") {
        SeededRng rng(0);
        auto flow = std::make_shared<FlowSequence>(dim);
        for (const auto& layer : spec.at("layers")) {
            std::vector<std::uint8_t> mask;
            for (const auto& m : layer.at("pass_mask")) {
                mask.push_back(static_cast<std::uint8_t>(m.get<int>()));
            }
            flow->add_coupling_layer(std::move(mask), layer.at("hidden_dim").get<std::size_t>(),
                                     layer.at("n_hidden").get<std::size_t>(),
                                     layer.at("scale_clamp").get<double>(), rng);
        }
        return flow;
    }
    fail("unknown flow spec type '", type, "'");
}

}  // namespace aub
