#include <doctest.h>

#include <cmath>

#include "aub/flow.hpp"
#include "aub/numeric.hpp"
#include "support/test_oracles.hpp"

using namespace aub;
using aub::testing::jitter_params;
using aub::testing::numeric_logdet;
using aub::testing::random_matrix;

TEST_SUITE_BEGIN("flows");

TEST_CASE("identity flow passes data and gradients through") {
    IdentityFlow flow(3);
    Matrix x = Matrix::from_rows({{1.0, -2.0, 0.5}, {0.0, 3.0, 4.0}});
    Matrix z;
    std::vector<double> logdet;
    flow.forward(x, z, logdet);
    CHECK(z == x);
    for (double ld : logdet) CHECK(ld == 0.0);

    Matrix back;
    flow.inverse(z, back);
    CHECK(back == x);

    Matrix grad_z = Matrix::from_rows({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}});
    Matrix grad_x;
    flow.backward_at(x, grad_z, std::vector<double>(2, 1.0), grad_x);
    CHECK(grad_x == grad_z);
    CHECK(flow.param_count() == 0);
}

TEST_CASE("affine flow values match hand arithmetic") {
    AffineFlow flow({2.0}, {0.0});
    Matrix x = Matrix::from_rows({{3.0}});
    Matrix z;
    std::vector<double> logdet;
    flow.forward(x, z, logdet);
    CHECK(z(0, 0) == doctest::Approx(6.0));
    CHECK(logdet[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    AffineFlow f2({2.0}, {1.0});
    Matrix back;
    f2.inverse(Matrix::from_rows({{7.0}}), back);
    CHECK(back(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("affine flow logdet gradient is 1/a") {
    AffineFlow flow({2.0}, {0.0});
    Matrix x = Matrix::from_rows({{0.7}});
    Matrix grad_z(1, 1);  // no pressure on z, only on logdet
    Matrix grad_x;
    flow.backward_at(x, grad_z, {1.0}, grad_x);
    CHECK(flow.params().grads()[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("affine flow gradients agree with finite differences") {
    SeededRng rng(31);
    AffineFlow flow({1.3, -0.8}, {0.2, 0.4});
    Matrix x = random_matrix(5, 2, rng);
    // generic scalar head: sum_r ( < w_r, z_r > + v_r * logdet_r )
    Matrix w = random_matrix(5, 2, rng);
    std::vector<double> v(5);
    for (double& vi : v) vi = rng.normal();

    auto loss = [&](ParameterStore&) {
        Matrix z;
        std::vector<double> logdet;
        flow.forward(x, z, logdet);
        double s = 0.0;
        for (std::size_t r = 0; r < 5; ++r) {
            for (std::size_t c = 0; c < 2; ++c) s += w(r, c) * z(r, c);
            s += v[r] * logdet[r];
        }
        return s;
    };
    auto numeric = finite_difference_gradient(loss, flow.params());

    flow.params().zero_grads();
    Matrix grad_x;
    flow.backward_at(x, w, v, grad_x);
    CHECK(gradients_close(flow.params().grads(), numeric));
}

TEST_CASE("fresh coupling stacks are exactly the identity") {
    auto flow = make_realnvp(4, 3, 8, 1, /*seed=*/5);
    SeededRng rng(1);
    Matrix x = random_matrix(6, 4, rng);
    Matrix z;
    std::vector<double> logdet;
    flow->forward(x, z, logdet);
    CHECK(z == x);  // bitwise: zero-initialized output layers
    for (double ld : logdet) CHECK(ld == 0.0);
}

TEST_CASE("coupling layer masks need both sides") {
    ParameterStore store;
    SeededRng rng(3);
    CHECK_THROWS_AS(CouplingLayer(store, "l", 2, {1, 1}, 4, 1, 5.0, rng), Error);
    CHECK_THROWS_AS(make_realnvp(1, 2, 8, 1, 0), Error);
}

TEST_CASE("coupling logdet matches the numeric jacobian") {
    SeededRng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t dim = 2 + rng.index(3);  // 2..4
        auto flow = make_realnvp(dim, 1 + rng.index(2), 6, 1, rng.next_u64());
        jitter_params(flow->params(), rng, 0.4);
        Matrix x = random_matrix(1, dim, rng);
        Matrix z;
        std::vector<double> logdet;
        flow->forward(x, z, logdet);
        const double oracle = numeric_logdet(*flow, x.row(0));
        CHECK(logdet[0] == doctest::Approx(oracle).epsilon(1e-5));
    }
}

TEST_CASE("deep coupling stacks round-trip to 1e-8") {
    SeededRng rng(123);
    auto flow = make_realnvp(3, 10, 16, 1, 42);
    jitter_params(flow->params(), rng, 0.05);
    Matrix x = random_matrix(64, 3, rng);
    Matrix z, back;
    std::vector<double> logdet;
    flow->forward(x, z, logdet);
    flow->inverse(z, back);
    double worst = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            worst = std::max(worst, std::abs(back(r, c) - x(r, c)));
        }
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("round-trip holds across the whole flow zoo") {
    SeededRng rng(9);
    std::vector<std::shared_ptr<Flow>> zoo;
    zoo.push_back(std::make_shared<IdentityFlow>(2));
    zoo.push_back(std::make_shared<AffineFlow>(std::vector<double>{2.0, -0.5},
                                               std::vector<double>{1.0, 3.0}));
    auto coupled = make_realnvp(2, 4, 12, 2, 8);
    jitter_params(coupled->params(), rng, 0.2);
    zoo.push_back(std::move(coupled));
    for (const auto& flow : zoo) {
        Matrix x = random_matrix(32, flow->dim(), rng, 2.0);
        Matrix z, back;
        std::vector<double> logdet;
        flow->forward(x, z, logdet);
        flow->inverse(z, back);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            for (std::size_t c = 0; c < x.cols(); ++c) {
                CHECK(std::abs(back(r, c) - x(r, c)) < 1e-8);
            }
        }
    }
}

TEST_CASE("sequence forward equals manually chained layers") {
    SeededRng rng(55);
    auto flow = make_realnvp(3, 3, 8, 1, 21);
    jitter_params(flow->params(), rng, 0.3);
    Matrix x = random_matrix(5, 3, rng);

    Matrix z_seq;
    std::vector<double> ld_seq;
    flow->forward(x, z_seq, ld_seq);

    Matrix cur = x, next;
    std::vector<double> ld_manual(x.rows(), 0.0);
    for (std::size_t l = 0; l < flow->n_layers(); ++l) {
        flow->layer(l).forward(cur, next, &ld_manual, nullptr);
        std::swap(cur, next);
    }
    CHECK(z_seq == cur);
    for (std::size_t r = 0; r < x.rows(); ++r) CHECK(ld_seq[r] == ld_manual[r]);
}

TEST_CASE("coupling gradients agree with finite differences") {
    SeededRng rng(2024);
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t dim = 2 + trial % 2;
        auto flow = make_realnvp(dim, 2, 5, 1, rng.next_u64());
        jitter_params(flow->params(), rng, 0.3);
        const std::size_t n = 3;
        Matrix x = random_matrix(n, dim, rng);
        Matrix w = random_matrix(n, dim, rng);
        std::vector<double> v(n);
        for (double& vi : v) vi = rng.normal();

        auto loss = [&](ParameterStore&) {
            Matrix z;
            std::vector<double> logdet;
            flow->forward(x, z, logdet);
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < dim; ++c) s += w(r, c) * z(r, c);
                s += v[r] * logdet[r];
            }
            return s;
        };
        auto numeric = finite_difference_gradient(loss, flow->params());

        flow->params().zero_grads();
        Matrix grad_x;
        flow->backward_at(x, w, v, grad_x);
        CHECK(gradients_close(flow->params().grads(), numeric));

        // input gradient against finite differences over x
        Matrix numeric_gx(n, dim);
        const double eps = 1e-6;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < dim; ++c) {
                Matrix xp = x, xm = x;
                xp(r, c) += eps;
                xm(r, c) -= eps;
                Matrix zp, zm;
                std::vector<double> lp, lm;
                flow->forward(xp, zp, lp);
                flow->forward(xm, zm, lm);
                double sp = 0.0, sm = 0.0;
                for (std::size_t rr = 0; rr < n; ++rr) {
                    for (std::size_t cc = 0; cc < dim; ++cc) {
                        sp += w(rr, cc) * zp(rr, cc);
                        sm += w(rr, cc) * zm(rr, cc);
                    }
                    sp += v[rr] * lp[rr];
                    sm += v[rr] * lm[rr];
                }
                numeric_gx(r, c) = (sp - sm) / (2 * eps);
            }
        }
        std::vector<double> flat_a(grad_x.data(), grad_x.data() + grad_x.size());
        std::vector<double> flat_n(numeric_gx.data(), numeric_gx.data() + numeric_gx.size());
        CHECK(gradients_close(flat_a, flat_n, 1e-3, 1e-5));
    }
}

TEST_CASE("backward rejects a foreign cache") {
    auto f1 = make_realnvp(2, 2, 4, 1, 1);
    auto f2 = make_realnvp(2, 2, 4, 1, 2);
    SeededRng rng(0);
    Matrix x = random_matrix(3, 2, rng), z, gx;
    std::vector<double> ld;
    auto cache = f1->forward_cached(x, z, ld);
    IdentityFlow ident(2);
    Matrix grad_z = random_matrix(3, 2, rng);
    CHECK_THROWS_AS(ident.backward(*cache, grad_z, std::vector<double>(3, 0.0), gx), Error);
}

TEST_CASE("published realnvp parameter counts are reproduced") {
    // tabular architectures at dim 40 (43 features minus 3 split features)
    CHECK(make_realnvp(40, 5, 100, 1, 0)->param_count() == 182800);
    CHECK(8 * make_realnvp(40, 5, 100, 1, 0)->param_count() == 1462400);
    CHECK(make_realnvp(40, 10, 100, 2, 0)->param_count() == 567600);
    CHECK(8 * make_realnvp(40, 10, 100, 2, 0)->param_count() == 4540800);
    // 8 flows + shared coupling-stack density
    CHECK(8 * 182800 + 567600 == 2030000);

    // hand count for the 2-D toy architecture (2 layers, 8 hidden, 1 inner):
    // per net 2*8+8 + (8*8+8) + (8*2+2) + 2 = 116; two nets, two layers.
    CHECK(make_realnvp(2, 2, 8, 1, 0)->param_count() == 464);
}

TEST_CASE("flow specs rebuild the same architecture") {
    auto flow = make_realnvp(3, 4, 10, 2, 77, 4.0);
    auto clone = flow_from_spec(flow->spec());
    CHECK(clone->param_count() == flow->param_count());
    CHECK(clone->spec() == flow->spec());
}

TEST_SUITE_END();
