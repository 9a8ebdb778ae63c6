#include <catch2/catch_amalgamated.hpp>

#include "melodist/autograd.hpp"
#include "melodist/nn.hpp"

using namespace melodist;
using ag::Mat;
using ag::Var;

namespace {

// Central finite differences of a scalar-valued graph builder w.r.t. one
// parameter, compared against the analytic gradient.
double max_rel_error(const std::vector<Var>& params, const std::function<Var()>& build,
                     double h = 1e-6) {
    Var loss = build();
    for (auto& p : params) { p->ensure_grad(); p->grad.setZero(); }
    ag::backward(loss);
    double worst = 0.0;
    for (auto& p : params) {
        for (Eigen::Index j = 0; j < p->value.cols(); ++j)
            for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
                double orig = p->value(i, j);
                p->value(i, j) = orig + h;
                double up = build()->value(0, 0);
                p->value(i, j) = orig - h;
                double dn = build()->value(0, 0);
                p->value(i, j) = orig;
                double fd = (up - dn) / (2.0 * h);
                double an = p->grad(i, j);
                if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
                double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
                worst = std::max(worst, std::abs(fd - an) / denom);
            }
    }
    return worst;
}

}  // namespace

TEST_CASE("elementwise and matmul gradients match finite differences") {
    auto rng = make_rng(1);
    Var a = ag::param(ag::randn(3, 4, rng, 1.0));
    Var b = ag::param(ag::randn(4, 5, rng, 1.0));
    Var c = ag::param(ag::randn(3, 5, rng, 1.0));
    auto build = [&] {
        Var y = ag::add(ag::matmul(a, b), c);
        y = ag::cmul(y, y);
        return ag::mean_all(ag::gelu(y));
    };
    REQUIRE(max_rel_error({a, b, c}, build) < 1e-5);
}

TEST_CASE("softmax, layernorm, cross entropy gradients") {
    auto rng = make_rng(2);
    Var x = ag::param(ag::randn(4, 6, rng, 1.0));
    Var g = ag::param(Mat::Ones(1, 6) + 0.1 * ag::randn(1, 6, rng, 1.0));
    Var bi = ag::param(ag::randn(1, 6, rng, 0.2));
    std::vector<int> targets = {1, 3, 0, 5};
    std::vector<double> weights = {1, 0, 1, 1};
    auto build = [&] {
        Var h = ag::layernorm_rows(x, g, bi);
        Var p = ag::softmax_rows(h);
        Var ce = ag::cross_entropy_rows(h, targets, weights);
        return ag::add(ce, ag::mean_all(ag::cmul(p, p)));
    };
    REQUIRE(max_rel_error({x, g, bi}, build) < 1e-5);
}

TEST_CASE("shape op gradients: gather, group, repeat, concat, slice") {
    auto rng = make_rng(3);
    Var table = ag::param(ag::randn(7, 4, rng, 1.0));
    Var w = ag::param(ag::randn(12, 2, rng, 1.0)); // top grouped by 3 gives 12 cols
    std::vector<int> ids = {0, 3, 3, 6, 1, 2};
    auto build = [&] {
        Var e = ag::gather_rows(table, ids);      // 6 x 4
        Var gr = ag::group_rows(e, 2);            // 3 x 8
        Var rr = ag::repeat_rows(gr, 2);          // 6 x 8
        Var left = ag::cols(rr, 0, 4);
        Var right = ag::cols(rr, 4, 4);
        Var cat = ag::concat_rows({left, right}); // 12 x 4
        Var top = ag::rows(cat, 2, 6);
        return ag::mean_all(ag::abs_op(ag::matmul(ag::group_rows(top, 3), w)));
    };
    REQUIRE(max_rel_error({table, w}, build) < 1e-5);
}

TEST_CASE("conv op gradients: im2col and upsample") {
    auto rng = make_rng(4);
    Var x = ag::param(ag::randn(10, 3, rng, 1.0));
    Var w = ag::param(ag::randn(4 * 3, 2, rng, 1.0));
    auto build = [&] {
        Var up = ag::upsample_zeros(x, 2);              // 19 x 3
        Var col = ag::im2col(up, 4, 1, 2, 20);          // 20 x 12
        Var y = ag::matmul(col, w);
        Var mag = ag::spectral_magnitude(y, ag::scale(y, 0.5));
        return ag::mean_all(ag::log_eps(mag));
    };
    REQUIRE(max_rel_error({x, w}, build) < 1e-5);
}

TEST_CASE("transformer block gradients") {
    auto rng = make_rng(5);
    nn::ParamStore ps;
    nn::TransformerBlock block(ps, "b", 8, 2, 16, rng);
    Var x = ps.create("x", ag::randn(5, 8, rng, 1.0));
    Mat mask = nn::causal_mask(5);
    std::vector<int> targets = {1, 2, 3, 4, 5};
    std::vector<double> weights = {1, 1, 1, 1, 1};
    auto rng2 = make_rng(6);
    Var head = ps.create("head", ag::randn(8, 9, rng2, 0.5));
    auto build = [&] {
        Var h = block(x, mask);
        return ag::cross_entropy_rows(ag::matmul(h, head), targets, weights);
    };
    REQUIRE(max_rel_error(ps.all(), build) < 1e-4);
}

TEST_CASE("adam reduces a quadratic") {
    auto rng = make_rng(7);
    Var p = ag::param(ag::randn(3, 3, rng, 2.0));
    ag::Adam opt({p}, 0.1);
    auto loss_val = [&] { return ag::mean_all(ag::square(p))->value(0, 0); };
    double first = loss_val();
    for (int i = 0; i < 200; ++i) {
        opt.zero_grad();
        Var loss = ag::mean_all(ag::square(p));
        ag::backward(loss);
        opt.step();
    }
    REQUIRE(loss_val() < 0.01 * first);
}

TEST_CASE("gradient clipping bounds the applied update norm") {
    Var p = ag::param(Mat::Constant(1, 1, 0.0));
    ag::Adam opt({p}, 1.0);
    opt.clip_norm = 1.0;
    Var loss = ag::scale(ag::sum_all(p), 100.0);
    opt.zero_grad();
    ag::backward(loss);
    opt.step();
    REQUIRE(std::abs(p->grad(0, 0)) <= 1.0 + 1e-12);
}
