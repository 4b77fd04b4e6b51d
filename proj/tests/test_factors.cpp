#include "farm/error.hpp"
#include "farm/factors.hpp"
#include "farm/simulation.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace farm;
using namespace farm::testing;

namespace {

// Cyclic Jacobi rotations on a dense symmetric matrix; eigenvalues descending.
VectorXd jacobi_eigenvalues(MatrixXd A) {
    const Index n = A.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Index p = 0; p < n; ++p)
            for (Index q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
        if (off < 1e-30 * std::max(1.0, A.squaredNorm())) break;
        for (Index p = 0; p < n; ++p)
            for (Index q = p + 1; q < n; ++q) {
                if (A(p, q) == 0.0) continue;
                const double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (Index k = 0; k < n; ++k) {
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (Index k = 0; k < n; ++k) {
                    const double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
            }
    }
    VectorXd ev = A.diagonal();
    std::sort(ev.data(), ev.data() + n, std::greater<>());
    return ev;
}

double frob2(const MatrixXd& m) { return m.squaredNorm(); }

}  // namespace

TEST_SUITE("factors") {

TEST_CASE("rank-one panel is recovered exactly") {
    const VectorXd lambda = (VectorXd(4) << 1.0, -2.0, 0.5, 3.0).finished();
    const VectorXd f = (VectorXd(6) << 0.3, -1.0, 2.0, 0.7, -0.4, 1.1).finished();
    const MatrixXd R = lambda * f.transpose();
    const FactorEstimate fe = pca_factors(R, 1);
    CHECK(max_abs(fe.loadings * fe.factors.transpose() - R) < 1e-12);
    CHECK(max_abs(fe.residuals) < 1e-12);
}

TEST_CASE("full-rank reconstruction") {
    const MatrixXd R = randn(10, 50, 2);
    const FactorEstimate fe = pca_factors(R, 10);
    CHECK(max_abs(fe.residuals) < 1e-10);
}

TEST_CASE("eigenvalues match an independent Jacobi eigensolver") {
    const MatrixXd R = randn(6, 8, 3);
    const FactorEstimate fe = pca_factors(R, 2);
    const VectorXd ref = jacobi_eigenvalues(R.transpose() * R / 8.0);
    CHECK(std::abs(fe.eigenvalues(0) - ref(0)) < 1e-9);
    CHECK(std::abs(fe.eigenvalues(1) - ref(1)) < 1e-9);
    for (auto [n, T] : {std::pair<Index, Index>{5, 30}, {30, 5}, {12, 12}}) {
        const MatrixXd P = randn(n, T, std::uint64_t(n * 100 + T));
        const VectorXd got = gram_eigenvalues(P);
        const VectorXd want = jacobi_eigenvalues(P.transpose() * P / double(T));
        REQUIRE(got.size() == std::min(n, T));
        CHECK((got - want.head(got.size())).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("normalisation, projection and sign invariants") {
    for (auto [n, T] : {std::pair<Index, Index>{8, 40}, {40, 8}, {15, 15}}) {
        const MatrixXd R = randn(n, T, std::uint64_t(n + 7 * T));
        const int r = 3;
        const FactorEstimate fe = pca_factors(R, r);
        const MatrixXd I = fe.factors.transpose() * fe.factors / double(T);
        CHECK(max_abs(I - MatrixXd::Identity(r, r)) <= 1e-8);
        CHECK(max_abs(fe.residuals - (R - fe.loadings * fe.factors.transpose())) == 0.0);
        CHECK(max_abs(fe.residuals * fe.factors) <= 1e-8 * std::max(1.0, max_abs(R)) * double(T));
        CHECK(max_abs(fe.loadings - R * fe.factors / double(T)) < 1e-10);
        for (Index k = 0; k + 1 < r; ++k) CHECK(fe.eigenvalues(k) > fe.eigenvalues(k + 1));
        for (Index j = 0; j < r; ++j) {
            Index arg = 0;
            fe.loadings.col(j).cwiseAbs().maxCoeff(&arg);
            CHECK(fe.loadings(arg, j) > 0.0);
        }
        // Flipping any sign pattern leaves the common component unchanged.
        const MatrixXd common = fe.loadings * fe.factors.transpose();
        VectorXd signs = VectorXd::Ones(r);
        signs(1) = -1.0;
        const MatrixXd flipped = (fe.loadings * signs.asDiagonal()) * (fe.factors * signs.asDiagonal()).transpose();
        CHECK(max_abs(flipped - common) < 1e-8);
        // The n x n and T x T eigen-routes agree.
        const VectorXd ref = jacobi_eigenvalues(R.transpose() * R / double(T));
        CHECK((fe.eigenvalues - ref.head(r)).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("pca argument checks") {
    const MatrixXd R = randn(4, 6, 1);
    CHECK_THROWS_AS(pca_factors(R, 0), InvalidInput);
    CHECK_THROWS_AS(pca_factors(R, 5), InvalidInput);
    const FactorEstimate none = no_factors(R);
    CHECK(none.r == 0);
    CHECK(none.residuals == R);
}

TEST_CASE("reconstruction error is non-increasing and matches direct residual norms") {
    const MatrixXd R = randn(9, 30, 5);
    const std::vector<double> S = reconstruction_errors(R, 9);
    REQUIRE(S.size() == 10);
    CHECK(S[0] == doctest::Approx(frob2(R) / (9.0 * 30.0)).epsilon(1e-12));
    for (int r = 1; r <= 9; ++r) {
        CHECK(S[std::size_t(r)] <= S[std::size_t(r - 1)] + 1e-15);
        const double direct = frob2(pca_factors(R, r).residuals) / (9.0 * 30.0);
        CHECK(std::abs(S[std::size_t(r)] - direct) < 1e-10);
    }
}

TEST_CASE("eigenvalue ratio selection") {
    const VectorXd ev = (VectorXd(6) << 100, 90, 80, 1, 0.9, 0.8).finished();
    CHECK(eigenvalue_ratio_select(ev, 5) == 3);
    VectorXd geo(8);
    for (Index k = 0; k < 8; ++k) geo(k) = std::pow(2.0, -double(k + 1));
    CHECK(eigenvalue_ratio_select(geo, 6) == 1);
    CHECK_THROWS_AS(eigenvalue_ratio_select(VectorXd(), 1), InvalidInput);
    CHECK_THROWS_AS(eigenvalue_ratio_select(ev, 6), InvalidInput);
    VectorXd bad = ev;
    bad(2) = 0.0;
    CHECK_THROWS_AS(eigenvalue_ratio_select(bad, 5), InvalidInput);
}

TEST_CASE("information criteria on an exact low-rank panel") {
    const MatrixXd R = randn(12, 3, 7) * randn(3, 40, 8);
    for (auto c : {FactorMethod::IC1, FactorMethod::IC2, FactorMethod::IC3, FactorMethod::IC4}) {
        const FactorSelection sel = ic_select(R, 6, c);
        CHECK(sel.chosen_r == 3);
        CHECK(sel.kmax == 6);
    }
}

TEST_CASE("information criteria follow their closed forms") {
    const Index n = 14, T = 37;
    const MatrixXd R = randn(n, T, 9);
    const double nT = double(n * T), C2 = double(std::min(n, T));
    const int kmax = 7;
    for (auto c : {FactorMethod::IC1, FactorMethod::IC2, FactorMethod::IC3, FactorMethod::IC4}) {
        const FactorSelection sel = ic_select(R, kmax, c);
        REQUIRE(sel.criterion_values.size() == std::size_t(kmax));
        int best = 1;
        for (int r = 1; r <= kmax; ++r) {
            const double S = frob2(pca_factors(R, r).residuals) / nT;
            double pen = 0.0;
            switch (c) {
                case FactorMethod::IC1: pen = r * double(n + T) / nT * std::log(nT / double(n + T)); break;
                case FactorMethod::IC2: pen = r * double(n + T) / nT * std::log(C2); break;
                case FactorMethod::IC3: pen = r * std::log(C2) / C2; break;
                default: pen = r * double(n + T - r) * std::log(nT) / nT; break;
            }
            CHECK(sel.criterion_values[std::size_t(r - 1)] == doctest::Approx(std::log(S) + pen).epsilon(1e-10));
            if (sel.criterion_values[std::size_t(r - 1)] < sel.criterion_values[std::size_t(best - 1)]) best = r;
        }
        CHECK(sel.chosen_r == best);
    }
    CHECK_THROWS_AS(ic_select(R, 0, FactorMethod::IC1), InvalidInput);
    CHECK_THROWS_AS(ic_select(R, 15, FactorMethod::IC1), InvalidInput);
}

TEST_CASE("factor rules parse and resolve") {
    CHECK(parse_factor_rule("ER").method == FactorMethod::EigenvalueRatio);
    CHECK(parse_factor_rule("ic3").method == FactorMethod::IC3);
    const FactorRule fixed = parse_factor_rule("fixed:4");
    CHECK(fixed.method == FactorMethod::Fixed);
    CHECK(fixed.fixed_r == 4);
    CHECK(to_string(fixed) == "fixed:4");
    CHECK_THROWS_AS(parse_factor_rule("pca"), InvalidInput);
    CHECK(default_kmax(50, 100) == 20);
    CHECK(default_kmax(10, 100) == 5);
    CHECK(default_kmax(1, 2) == 1);
    const MatrixXd R = randn(10, 30, 1);
    CHECK(select_factor_count(R, FactorRule::fixed(2)).chosen_r == 2);
    const FactorSelection er = select_factor_count(R, parse_factor_rule("er"));
    CHECK(er.chosen_r >= 1);
    CHECK(er.chosen_r <= er.kmax);
}

TEST_CASE("rotation is the identity when true factors are the estimates and loadings match V") {
    const Index n = 9, T = 25;
    const int r = 3;
    const FactorEstimate fe = pca_factors(randn(n, T, 31), r);
    Eigen::HouseholderQR<MatrixXd> qr(randn(n, r, 32));
    const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(n, r);
    const MatrixXd Lambda = Q * fe.eigenvalues.cwiseSqrt().asDiagonal();
    const MatrixXd H = rotation_matrix(fe.factors, fe.factors, Lambda, fe.eigenvalues);
    CHECK(max_abs(H - MatrixXd::Identity(r, r)) < 1e-10);
}

TEST_CASE("one-factor rotation is a scalar") {
    const Index n = 7, T = 20;
    const MatrixXd F = randn(T, 1, 41);
    const VectorXd lambda = randn(n, 42);
    const MatrixXd R = lambda * F.transpose() + 0.1 * randn(n, T, 43);
    const FactorEstimate fe = pca_factors(R, 1);
    const MatrixXd H = rotation_matrix(fe.factors, F, lambda, fe.eigenvalues);
    double fhat_f = 0.0, ll = 0.0;
    for (Index t = 0; t < T; ++t) fhat_f += fe.factors(t, 0) * F(t, 0);
    for (Index i = 0; i < n; ++i) ll += lambda(i) * lambda(i);
    CHECK(H(0, 0) == doctest::Approx(fhat_f * ll / (double(T) * fe.eigenvalues(0))).epsilon(1e-12));
    CHECK_THROWS_AS(rotation_matrix(fe.factors, F, lambda, VectorXd::Zero(1)), NumericalError);
}

TEST_CASE("rotation error shrinks as the panel grows") {
    auto mean_error = [](Index T, Index n) {
        SimulationConfig c;
        c.T = T;
        c.n = n;
        c.seed = 99;
        double acc = 0.0;
        for (int b = 0; b < 10; ++b) acc += factor_rotation_error(simulate_dgp(c, std::uint64_t(b)));
        return acc / 10.0;
    };
    CHECK(mean_error(400, 200) < mean_error(200, 100));
}

}
