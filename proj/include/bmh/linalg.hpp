#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "bmh/math.hpp"

namespace bmh {

// Small dense square matrix, row-major. Dimensions here are tiny (parameter
// blocks), so no attempt is made at being clever.
struct Matrix {
    int n = 0;
    std::vector<double> v;

    Matrix() = default;
    explicit Matrix(int n_, double diag = 0.0) : n(n_), v(static_cast<std::size_t>(n_) * n_, 0.0) {
        for (int i = 0; i < n; ++i) (*this)(i, i) = diag;
    }

    static Matrix identity(int n_) { return Matrix(n_, 1.0); }

    double& operator()(int i, int j) { return v[static_cast<std::size_t>(i) * n + j]; }
    double operator()(int i, int j) const { return v[static_cast<std::size_t>(i) * n + j]; }
};

// Lower Cholesky factor of an SPD matrix; returns false when not positive
// definite.
inline bool cholesky(const Matrix& a, Matrix& lower) {
    const int n = a.n;
    lower = Matrix(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (int m = 0; m < j; ++m) s -= lower(i, m) * lower(j, m);
            if (i == j) {
                if (!(s > 0.0)) return false;
                lower(i, i) = std::sqrt(s);
            } else {
                lower(i, j) = s / lower(j, j);
            }
        }
    }
    return true;
}

// Solves L x = b in place.
inline void solve_lower_inplace(const Matrix& lower, std::span<double> b) {
    const int n = lower.n;
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int j = 0; j < i; ++j) s -= lower(i, j) * b[j];
        b[i] = s / lower(i, i);
    }
}

// Solves L^T x = b in place.
inline void solve_lower_transpose_inplace(const Matrix& lower, std::span<double> b) {
    const int n = lower.n;
    for (int i = n; i-- > 0;) {
        double s = b[i];
        for (int j = i + 1; j < n; ++j) s -= lower(j, i) * b[j];
        b[i] = s / lower(i, i);
    }
}

// Inverse of the SPD matrix whose Cholesky factor is `lower`.
inline Matrix inverse_from_cholesky(const Matrix& lower) {
    const int n = lower.n;
    Matrix inv(n);
    std::vector<double> col(n);
    for (int c = 0; c < n; ++c) {
        for (int i = 0; i < n; ++i) col[i] = (i == c) ? 1.0 : 0.0;
        solve_lower_inplace(lower, col);
        solve_lower_transpose_inplace(lower, col);
        for (int i = 0; i < n; ++i) inv(i, c) = col[i];
    }
    return inv;
}

inline double half_logdet_from_cholesky(const Matrix& lower) {
    double s = 0.0;
    for (int i = 0; i < lower.n; ++i) s += std::log(lower(i, i));
    return s;
}

// y = L x for lower-triangular L
inline void lower_matvec(const Matrix& lower, std::span<const double> x, std::span<double> y) {
    const int n = lower.n;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j <= i; ++j) s += lower(i, j) * x[j];
        y[i] = s;
    }
}

// y = L^T x for lower-triangular L
inline void lower_transpose_matvec(const Matrix& lower, std::span<const double> x,
                                   std::span<double> y) {
    const int n = lower.n;
    for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int i = j; i < n; ++i) s += lower(i, j) * x[i];
        y[j] = s;
    }
}

inline int strict_lower_count(int n) { return n * (n - 1) / 2; }

// Cholesky factor of a correlation matrix parameterized by unconstrained
// canonical partial correlations: t_ij = tanh(w_ij), rows built so each has
// unit norm. Any real w maps to a valid correlation matrix.
struct CorrCholesky {
    int n = 0;
    Matrix lower;
    std::vector<double> t;      // tanh of each w entry, strict-lower row-major order
    std::vector<double> rem_in; // squared remainder before consuming each entry
};

inline CorrCholesky corr_cholesky_forward(int n, std::span<const double> w) {
    if (static_cast<int>(w.size()) != strict_lower_count(n)) {
        throw std::invalid_argument("corr_cholesky_forward: wrong number of parameters");
    }
    CorrCholesky f;
    f.n = n;
    f.lower = Matrix(n);
    f.t.resize(w.size());
    f.rem_in.resize(w.size());
    if (n == 0) return f;
    f.lower(0, 0) = 1.0;
    std::size_t idx = 0;
    for (int i = 1; i < n; ++i) {
        double rem = 1.0;
        for (int j = 0; j < i; ++j, ++idx) {
            const double t = std::tanh(w[idx]);
            f.t[idx] = t;
            f.rem_in[idx] = rem;
            f.lower(i, j) = t * std::sqrt(rem);
            rem *= (1.0 - t * t);
        }
        f.lower(i, i) = std::sqrt(rem);
    }
    return f;
}

// Accumulates d(objective)/dw given adjoints of the lower factor entries.
inline void corr_cholesky_backward(const CorrCholesky& f, const Matrix& lower_adj,
                                   std::span<double> w_adj) {
    const int n = f.n;
    std::size_t row_end = f.t.size();
    for (int i = n - 1; i >= 1; --i) {
        const std::size_t row_start = row_end - static_cast<std::size_t>(i);
        const double rem_final = f.lower(i, i) * f.lower(i, i);
        double radj = lower_adj(i, i) * 0.5 / std::sqrt(rem_final);
        for (int j = i - 1; j >= 0; --j) {
            const std::size_t idx = row_start + static_cast<std::size_t>(j);
            const double t = f.t[idx];
            const double rem = f.rem_in[idx];
            const double sq = std::sqrt(rem);
            double tadj = radj * rem * (-2.0 * t);
            double radj_in = radj * (1.0 - t * t);
            tadj += lower_adj(i, j) * sq;
            radj_in += lower_adj(i, j) * t * 0.5 / sq;
            radj = radj_in;
            w_adj[idx] += tadj * (1.0 - t * t);
        }
        row_end = row_start;
    }
}

// Inverse map: recovers w from a valid correlation matrix.
inline std::vector<double> corr_cholesky_inverse(const Matrix& omega) {
    Matrix lower;
    if (!cholesky(omega, lower)) {
        throw std::invalid_argument("corr_cholesky_inverse: matrix not positive definite");
    }
    const int n = omega.n;
    std::vector<double> w(static_cast<std::size_t>(strict_lower_count(n)));
    std::size_t idx = 0;
    for (int i = 1; i < n; ++i) {
        double rem = 1.0;
        for (int j = 0; j < i; ++j, ++idx) {
            const double t = lower(i, j) / std::sqrt(rem);
            if (!(t > -1.0 && t < 1.0)) {
                throw std::invalid_argument("corr_cholesky_inverse: not a correlation matrix");
            }
            w[idx] = std::atanh(t);
            rem *= (1.0 - t * t);
        }
    }
    return w;
}

// Shared machinery for the hierarchical MVN blocks: covariance D*Omega*D with
// D = diag(sigma). Prepared once per evaluation, then applied item by item.
class MvnBlock {
  public:
    MvnBlock() = default;

    // Throws when omega is not positive definite or sigma not positive.
    static MvnBlock prepare(std::span<const double> sigma, const Matrix& omega) {
        MvnBlock b;
        b.n_ = omega.n;
        b.sigma_.assign(sigma.begin(), sigma.end());
        b.omega_ = omega;
        for (double s : sigma) {
            if (!(s > 0.0)) throw std::invalid_argument("MvnBlock: sigma must be positive");
        }
        if (!cholesky(omega, b.chol_)) {
            throw std::invalid_argument("MvnBlock: correlation matrix not positive definite");
        }
        b.omega_inv_ = inverse_from_cholesky(b.chol_);
        b.half_logdet_sigma_ = half_logdet_from_cholesky(b.chol_);
        for (double s : sigma) b.half_logdet_sigma_ += std::log(s);
        return b;
    }

    int dim() const { return n_; }
    const Matrix& omega_inv() const { return omega_inv_; }
    double half_logdet() const { return half_logdet_sigma_; }

    // log MVN(x | mean, Sigma). When grads are requested, accumulates
    // d/dx into gx, d/dmean into gmean and u*u^T into uut (used later by
    // finalize_scale_grads).
    double logpdf(std::span<const double> x, std::span<const double> mean,
                  std::span<double> gx, std::span<double> gmean, Matrix* uut) const {
        std::vector<double> r(static_cast<std::size_t>(n_));
        for (int i = 0; i < n_; ++i) r[i] = (x[i] - mean[i]) / sigma_[i];
        std::vector<double> wv = r;
        solve_lower_inplace(chol_, wv);
        double quad = 0.0;
        for (double q : wv) quad += q * q;
        const double value = -0.5 * quad - half_logdet_sigma_ - 0.5 * n_ * std::log(2.0 * kPi);
        if (!gx.empty() || !gmean.empty() || uut != nullptr) {
            // u = Sigma^{-1} (x - mean)
            solve_lower_transpose_inplace(chol_, wv);
            for (int i = 0; i < n_; ++i) wv[i] /= sigma_[i];
            for (int i = 0; i < n_; ++i) {
                if (!gx.empty()) gx[i] -= wv[i];
                if (!gmean.empty()) gmean[i] += wv[i];
            }
            if (uut != nullptr) {
                for (int i = 0; i < n_; ++i) {
                    for (int j = 0; j < n_; ++j) (*uut)(i, j) += wv[i] * wv[j];
                }
            }
        }
        return value;
    }

    // Folds the accumulated u*u^T sum over `count` items into gradients with
    // respect to sigma and omega (omega gradient as a full matrix).
    void finalize_scale_grads(const Matrix& uut_sum, int count, std::span<double> gsigma,
                              Matrix& gomega) const {
        // G = 0.5 * (sum u u^T - count * Sigma^{-1})
        Matrix g(n_);
        for (int i = 0; i < n_; ++i) {
            for (int j = 0; j < n_; ++j) {
                const double sig_inv = omega_inv_(i, j) / (sigma_[i] * sigma_[j]);
                g(i, j) = 0.5 * (uut_sum(i, j) - count * sig_inv);
            }
        }
        // d/dsigma_i = 2 (G D Omega)_ii
        for (int i = 0; i < n_; ++i) {
            double s = 0.0;
            for (int j = 0; j < n_; ++j) s += g(i, j) * sigma_[j] * omega_(j, i);
            gsigma[i] += 2.0 * s;
        }
        // d/dOmega = D G D
        for (int i = 0; i < n_; ++i) {
            for (int j = 0; j < n_; ++j) {
                gomega(i, j) += sigma_[i] * g(i, j) * sigma_[j];
            }
        }
    }

  private:
    int n_ = 0;
    std::vector<double> sigma_;
    Matrix omega_;
    Matrix chol_;
    Matrix omega_inv_;
    double half_logdet_sigma_ = 0.0;
};

} // namespace bmh
