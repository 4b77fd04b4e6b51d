#include "farm/factors.hpp"

#include "farm/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace farm {

namespace {

struct TopEigen {
    VectorXd values;   // descending
    MatrixXd vectors;  // matching columns
};

TopEigen top_eigen(const MatrixXd& gram, Index count) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolver did not converge");
    TopEigen out;
    out.values = solver.eigenvalues().reverse().head(count);
    out.vectors = solver.eigenvectors().rowwise().reverse().leftCols(count);
    return out;
}

// T x r eigenvectors of R'R for the top r eigenvalues, and the eigenvalues of R'R.
TopEigen time_eigenvectors(const MatrixXd& R, int r) {
    const Index n = R.rows(), T = R.cols();
    if (T <= n) return top_eigen(R.transpose() * R, r);

    TopEigen cross = top_eigen(R * R.transpose(), r);
    // R'u / sqrt(mu) is a unit eigenvector of R'R when mu > 0; near-zero
    // eigenvalues make the map unstable, so fall back to the T x T problem.
    if (cross.values(r - 1) <= 1e-10 * std::max(cross.values(0), 0.0))
        return top_eigen(R.transpose() * R, r);
    TopEigen out;
    out.values = cross.values;
    out.vectors = R.transpose() * cross.vectors;
    for (int k = 0; k < r; ++k) out.vectors.col(k) /= std::sqrt(cross.values(k));
    return out;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace

VectorXd gram_eigenvalues(const MatrixXd& R) {
    const Index n = R.rows(), T = R.cols();
    const MatrixXd gram = T <= n ? MatrixXd(R.transpose() * R) : MatrixXd(R * R.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolver did not converge");
    return solver.eigenvalues().reverse() / double(T);
}

FactorEstimate pca_factors(const MatrixXd& R, int r) {
    const Index n = R.rows(), T = R.cols();
    if (r < 1 || r > std::min(n, T))
        throw InvalidInput("pca_factors: r = " + std::to_string(r) + " outside [1, min(n, T)]");
    if (!R.allFinite()) throw InvalidInput("pca_factors: residual panel has non-finite entries");

    TopEigen eig = time_eigenvectors(R, r);
    FactorEstimate est;
    est.r = r;
    est.eigenvalues = eig.values / double(T);
    est.factors = std::sqrt(double(T)) * eig.vectors;
    est.loadings = R * est.factors / double(T);
    for (int k = 0; k < r; ++k) {
        Index where = 0;
        est.loadings.col(k).cwiseAbs().maxCoeff(&where);
        if (est.loadings(where, k) < 0) {
            est.loadings.col(k) *= -1.0;
            est.factors.col(k) *= -1.0;
        }
    }
    est.residuals = R - est.loadings * est.factors.transpose();
    return est;
}

FactorEstimate no_factors(const MatrixXd& R) {
    FactorEstimate est;
    est.r = 0;
    est.factors.resize(R.cols(), 0);
    est.loadings.resize(R.rows(), 0);
    est.eigenvalues.resize(0);
    est.residuals = R;
    return est;
}

FactorRule parse_factor_rule(const std::string& text) {
    const std::string t = lower(text);
    if (t == "er") return {FactorMethod::EigenvalueRatio, 0, 0};
    if (t == "ic1") return {FactorMethod::IC1, 0, 0};
    if (t == "ic2") return {FactorMethod::IC2, 0, 0};
    if (t == "ic3") return {FactorMethod::IC3, 0, 0};
    if (t == "ic4") return {FactorMethod::IC4, 0, 0};
    if (t.rfind("fixed:", 0) == 0) {
        try {
            std::size_t used = 0;
            const int r = std::stoi(t.substr(6), &used);
            if (used == t.size() - 6 && r >= 0) return FactorRule::fixed(r);
        } catch (const std::exception&) {
        }
    }
    throw InvalidInput("unknown factor rule '" + text + "' (expected er, ic1..ic4 or fixed:<r>)");
}

std::string to_string(FactorMethod method) {
    switch (method) {
        case FactorMethod::Fixed: return "fixed";
        case FactorMethod::EigenvalueRatio: return "er";
        case FactorMethod::IC1: return "ic1";
        case FactorMethod::IC2: return "ic2";
        case FactorMethod::IC3: return "ic3";
        case FactorMethod::IC4: return "ic4";
    }
    return "unknown";
}

std::string to_string(const FactorRule& rule) {
    if (rule.method == FactorMethod::Fixed) return "fixed:" + std::to_string(rule.fixed_r);
    return to_string(rule.method);
}

int default_kmax(Index n, Index T) {
    return std::max(1, static_cast<int>(std::min<Index>(20, std::min(n, T) / 2)));
}

int eigenvalue_ratio_select(const VectorXd& eigenvalues, int kmax) {
    if (eigenvalues.size() == 0) throw InvalidInput("eigenvalue_ratio_select: empty eigenvalue sequence");
    if (kmax < 1 || kmax + 1 > eigenvalues.size())
        throw InvalidInput("eigenvalue_ratio_select: kmax = " + std::to_string(kmax) + " needs " +
                           std::to_string(kmax + 1) + " eigenvalues, have " + std::to_string(eigenvalues.size()));
    for (Index k = 0; k <= kmax; ++k)
        if (!(eigenvalues(k) > 0.0)) throw InvalidInput("eigenvalue_ratio_select: nonpositive eigenvalue");
    int best = 1;
    double best_ratio = eigenvalues(0) / eigenvalues(1);
    for (int k = 2; k <= kmax; ++k) {
        const double ratio = eigenvalues(k - 1) / eigenvalues(k);
        if (ratio > best_ratio) {
            best_ratio = ratio;
            best = k;
        }
    }
    return best;
}

std::vector<double> reconstruction_errors(const MatrixXd& R, int rmax) {
    const double n = double(R.rows()), T = double(R.cols());
    const VectorXd ev = gram_eigenvalues(R);
    if (rmax > ev.size()) throw InvalidInput("reconstruction_errors: rmax exceeds min(n, T)");
    std::vector<double> s(static_cast<std::size_t>(rmax) + 1);
    const double total = R.squaredNorm();
    double explained = 0.0;
    s[0] = total / (n * T);
    for (int r = 1; r <= rmax; ++r) {
        explained += T * ev(r - 1);
        s[std::size_t(r)] = std::max(total - explained, 0.0) / (n * T);
    }
    return s;
}

FactorSelection ic_select(const MatrixXd& R, int kmax, FactorMethod criterion) {
    const Index n = R.rows(), T = R.cols();
    if (kmax < 1 || kmax > std::min(n, T))
        throw InvalidInput("ic_select: kmax = " + std::to_string(kmax) + " outside [1, min(n, T)]");
    if (criterion == FactorMethod::Fixed || criterion == FactorMethod::EigenvalueRatio)
        throw InvalidInput("ic_select: criterion must be one of IC1..IC4");

    const auto s = reconstruction_errors(R, kmax);
    // Exact low-rank panels leave S(r) at rounding level; flooring it makes
    // those r tie on the fit term so the penalty decides.
    const double floor = std::max(s[0] * 1e-12, std::numeric_limits<double>::min());
    const double nd = double(n), td = double(T);
    const double nt = nd * td;
    const double c2 = double(std::min(n, T));

    FactorSelection sel;
    sel.method = criterion;
    sel.kmax = kmax;
    double best = std::numeric_limits<double>::infinity();
    for (int r = 1; r <= kmax; ++r) {
        double penalty = 0.0;
        switch (criterion) {
            case FactorMethod::IC1: penalty = r * (nd + td) / nt * std::log(nt / (nd + td)); break;
            case FactorMethod::IC2: penalty = r * (nd + td) / nt * std::log(c2); break;
            case FactorMethod::IC3: penalty = r * std::log(c2) / c2; break;
            case FactorMethod::IC4: penalty = r * (nd + td - r) * std::log(nt) / nt; break;
            default: break;
        }
        const double value = std::log(std::max(s[std::size_t(r)], floor)) + penalty;
        sel.criterion_values.push_back(value);
        if (value < best) {
            best = value;
            sel.chosen_r = r;
        }
    }
    return sel;
}

FactorSelection select_factor_count(const MatrixXd& R, const FactorRule& rule) {
    const int kmax = rule.kmax > 0 ? rule.kmax : default_kmax(R.rows(), R.cols());
    switch (rule.method) {
        case FactorMethod::Fixed: {
            if (rule.fixed_r < 0 || rule.fixed_r > std::min(R.rows(), R.cols()))
                throw InvalidInput("fixed factor count out of range");
            FactorSelection sel;
            sel.method = FactorMethod::Fixed;
            sel.kmax = rule.fixed_r;
            sel.chosen_r = rule.fixed_r;
            return sel;
        }
        case FactorMethod::EigenvalueRatio: {
            FactorSelection sel;
            sel.method = rule.method;
            sel.kmax = kmax;
            const VectorXd ev = gram_eigenvalues(R);
            sel.chosen_r = eigenvalue_ratio_select(ev, kmax);
            for (int k = 1; k <= kmax; ++k) sel.criterion_values.push_back(ev(k - 1) / ev(k));
            return sel;
        }
        default: return ic_select(R, kmax, rule.method);
    }
}

MatrixXd rotation_matrix(const MatrixXd& Fhat, const MatrixXd& F, const MatrixXd& Lambda,
                         const VectorXd& eigenvalues) {
    const Index r = Fhat.cols();
    if (F.rows() != Fhat.rows() || F.cols() != Lambda.cols() || eigenvalues.size() != r)
        throw InvalidInput("rotation_matrix: shape mismatch");
    if ((eigenvalues.array() <= 0.0).any()) throw NumericalError("rotation_matrix: singular eigenvalue matrix");
    const double T = double(Fhat.rows());
    return eigenvalues.cwiseInverse().asDiagonal() * (Fhat.transpose() * F) * (Lambda.transpose() * Lambda) / T;
}

}  // namespace farm
