#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cnf/errors.hpp"
#include "cnf/rng.hpp"

namespace cnf {

enum class KernelKind { se_ard, matern52 };

/// Stationary ARD covariances over points sharing the length-scaled
/// distance r^2 = sum_d (x_d - x'_d)^2 / l_d^2:
///   SE:         theta0 * exp(-r^2 / 2)
///   Matern-5/2: theta0 * (1 + sqrt(5) r + (5/3) r^2) * exp(-sqrt(5) r)
inline double kernel_eval(KernelKind kind, const std::vector<double>& a,
                          const std::vector<double>& b, double theta0,
                          const std::vector<double>& lengthscales) {
    if (a.size() != b.size())
        throw shape_error("kernel_eval: point dimensions differ (" +
                          std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    if (a.size() != lengthscales.size())
        throw shape_error("kernel_eval: " + std::to_string(lengthscales.size()) +
                          " length scales for " + std::to_string(a.size()) + " dimensions");
    if (theta0 <= 0.0) throw config_error("kernel amplitude theta0 must be positive");
    double r2 = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) {
        if (lengthscales[d] <= 0.0)
            throw config_error("kernel length scales must be positive");
        const double z = (a[d] - b[d]) / lengthscales[d];
        r2 += z * z;
    }
    if (kind == KernelKind::se_ard) return theta0 * std::exp(-0.5 * r2);
    const double r = std::sqrt(r2);
    const double sqrt5r = std::sqrt(5.0) * r;
    return theta0 * (1.0 + sqrt5r + (5.0 / 3.0) * r2) * std::exp(-sqrt5r);
}

/// Fitted GP surrogate: observations, kernel hyperparameters and the
/// cached Cholesky factor of K + noise*I. Targets are standardized
/// internally; the posterior destandardizes on the way out.
struct GpModel {
    KernelKind kind = KernelKind::matern52;
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    double theta0 = 1.0;
    std::vector<double> lengthscales;
    double noise_var = 0.0;
    double y_mean = 0.0;
    double y_std = 1.0;

    std::vector<double> chol;  // lower triangular, row-major n*n
    std::vector<double> alpha; // (K + noise I)^-1 y_standardized
    double jitter = 0.0;

    std::size_t n() const { return X.size(); }
    std::size_t dim() const { return X.empty() ? 0 : X[0].size(); }
};

namespace detail {

/// In-place Cholesky of a dense SPD matrix (row-major). Returns false if
/// a pivot is not strictly positive.
inline bool cholesky(std::vector<double>& m, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = m[i * n + j];
            for (std::size_t k = 0; k < j; ++k) sum -= m[i * n + k] * m[j * n + k];
            if (i == j) {
                if (sum <= 0.0) return false;
                m[i * n + i] = std::sqrt(sum);
            } else {
                m[i * n + j] = sum / m[j * n + j];
            }
        }
        for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = 0.0;
    }
    return true;
}

inline void forward_subst(const std::vector<double>& L, std::size_t n,
                          std::vector<double>& b) {
    for (std::size_t i = 0; i < n; ++i) {
        double sum = b[i];
        for (std::size_t k = 0; k < i; ++k) sum -= L[i * n + k] * b[k];
        b[i] = sum / L[i * n + i];
    }
}

inline void backward_subst(const std::vector<double>& L, std::size_t n,
                           std::vector<double>& b) {
    for (std::size_t i = n; i-- > 0;) {
        double sum = b[i];
        for (std::size_t k = i + 1; k < n; ++k) sum -= L[k * n + i] * b[k];
        b[i] = sum / L[i * n + i];
    }
}

inline std::vector<double> build_gram(KernelKind kind,
                                      const std::vector<std::vector<double>>& X,
                                      double theta0, const std::vector<double>& ls,
                                      double noise_var) {
    const std::size_t n = X.size();
    std::vector<double> K(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double v = kernel_eval(kind, X[i], X[j], theta0, ls);
            K[i * n + j] = v;
            K[j * n + i] = v;
        }
        K[i * n + i] += noise_var;
    }
    return K;
}

} // namespace detail

/// Builds the model with explicit hyperparameters and factorizes the
/// covariance, escalating diagonal jitter 1e-10 -> 1e-6 if the bare matrix
/// is not numerically positive definite.
inline GpModel gp_make(std::vector<std::vector<double>> X, std::vector<double> y,
                       KernelKind kind, double theta0, std::vector<double> lengthscales,
                       double noise_var, bool standardize = false) {
    if (X.size() != y.size())
        throw shape_error("gp_make: " + std::to_string(X.size()) + " points vs " +
                          std::to_string(y.size()) + " observations");
    if (X.empty()) throw data_error("gp_make: no observations");
    if (noise_var < 0.0) throw config_error("gp_make: noise variance must be >= 0");

    GpModel m;
    m.kind = kind;
    m.X = std::move(X);
    m.y = std::move(y);
    m.theta0 = theta0;
    m.lengthscales = std::move(lengthscales);
    m.noise_var = noise_var;

    if (standardize) {
        double mean = 0.0;
        for (double v : m.y) mean += v;
        mean /= static_cast<double>(m.y.size());
        double var = 0.0;
        for (double v : m.y) var += (v - mean) * (v - mean);
        var /= static_cast<double>(m.y.size());
        m.y_mean = mean;
        m.y_std = std::max(std::sqrt(var), 1e-12);
    }

    const std::size_t n = m.n();
    const double jitters[] = {0.0, 1e-10, 1e-8, 1e-6};
    bool ok = false;
    for (double j : jitters) {
        std::vector<double> K =
            detail::build_gram(m.kind, m.X, m.theta0, m.lengthscales, m.noise_var + j);
        if (detail::cholesky(K, n)) {
            m.chol = std::move(K);
            m.jitter = j;
            ok = true;
            break;
        }
    }
    if (!ok)
        throw numerical_error(
            "gp_make: covariance is not positive definite even with jitter 1e-6 "
            "(n=" + std::to_string(n) + ", theta0=" + std::to_string(m.theta0) + ")");

    m.alpha.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.alpha[i] = (m.y[i] - m.y_mean) / m.y_std;
    detail::forward_subst(m.chol, n, m.alpha);
    detail::backward_subst(m.chol, n, m.alpha);
    return m;
}

/// Log marginal likelihood of the standardized observations under the
/// model's hyperparameters.
inline double gp_log_marginal(const GpModel& m) {
    const std::size_t n = m.n();
    double fit = 0.0;
    for (std::size_t i = 0; i < n; ++i) fit += (m.y[i] - m.y_mean) / m.y_std * m.alpha[i];
    double logdet = 0.0;
    for (std::size_t i = 0; i < n; ++i) logdet += std::log(m.chol[i * n + i]);
    return -0.5 * fit - logdet -
           0.5 * static_cast<double>(n) * std::log(2.0 * 3.14159265358979323846);
}

struct Posterior {
    double mean = 0.0;
    double variance = 0.0;
};

/// Standard GP conditioning through the cached factorization:
///   mean = k*^T (K + noise I)^-1 y
///   var  = k(x*,x*) - k*^T (K + noise I)^-1 k*   (clamped at 0)
inline Posterior gp_posterior(const GpModel& m, const std::vector<double>& x) {
    if (x.size() != m.dim())
        throw shape_error("gp_posterior: query has " + std::to_string(x.size()) +
                          " dimensions, model has " + std::to_string(m.dim()));
    const std::size_t n = m.n();
    std::vector<double> kstar(n);
    for (std::size_t i = 0; i < n; ++i)
        kstar[i] = kernel_eval(m.kind, m.X[i], x, m.theta0, m.lengthscales);

    double mean_std = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean_std += kstar[i] * m.alpha[i];

    std::vector<double> v = kstar;
    detail::forward_subst(m.chol, n, v);
    double quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) quad += v[i] * v[i];
    const double prior_var = kernel_eval(m.kind, x, x, m.theta0, m.lengthscales);
    const double var_std = std::max(prior_var - quad, 0.0);

    return Posterior{m.y_mean + m.y_std * mean_std, m.y_std * m.y_std * var_std};
}

/// Fits kernel hyperparameters (amplitude, per-dimension length scales,
/// noise variance) by maximizing the log marginal likelihood with
/// multi-start coordinate descent on log-scale parameters: 16 starts, up
/// to 50 sweeps each. Targets are standardized before fitting.
inline GpModel gp_fit(const std::vector<std::vector<double>>& X,
                      const std::vector<double>& y, KernelKind kind,
                      double noise_floor = 1e-8) {
    if (X.size() != y.size())
        throw shape_error("gp_fit: " + std::to_string(X.size()) + " points vs " +
                          std::to_string(y.size()) + " observations");
    if (X.size() < 2) throw data_error("gp_fit: need at least 2 observations");
    if (noise_floor < 0.0) throw config_error("gp_fit: noise floor must be >= 0");
    const std::size_t d = X[0].size();

    // log-space bounds: amplitude, d length scales, noise variance
    const std::size_t np = d + 2;
    std::vector<double> lo(np), hi(np);
    lo[0] = std::log(0.05);
    hi[0] = std::log(20.0);
    for (std::size_t i = 0; i < d; ++i) {
        lo[1 + i] = std::log(0.03);
        hi[1 + i] = std::log(30.0);
    }
    const double noise_lo = std::max(noise_floor, 1e-10);
    lo[np - 1] = std::log(noise_lo);
    hi[np - 1] = std::log(1.0);

    auto try_lml = [&](const std::vector<double>& p) -> std::optional<double> {
        const double theta0 = std::exp(p[0]);
        std::vector<double> ls(d);
        for (std::size_t i = 0; i < d; ++i) ls[i] = std::exp(p[1 + i]);
        const double noise = std::exp(p[np - 1]);
        try {
            const GpModel m = gp_make(X, y, kind, theta0, ls, noise, true);
            const double v = gp_log_marginal(m);
            if (!std::isfinite(v)) return std::nullopt;
            return v;
        } catch (const numerical_error&) {
            return std::nullopt;
        }
    };

    // deterministic start set: one centered heuristic plus scrambled
    // low-discrepancy points over the bounds box
    std::vector<std::vector<double>> starts;
    {
        std::vector<double> center(np);
        center[0] = std::log(1.0);
        for (std::size_t i = 0; i < d; ++i) center[1 + i] = std::log(0.5);
        center[np - 1] = std::log(std::max(noise_lo, 1e-6));
        starts.push_back(center);
        Rng rng(0x9e3779b97f4a7c15ULL);
        std::vector<double> shift(np);
        for (double& s : shift) s = rng.next_double();
        for (std::size_t k = 1; k < 16; ++k) {
            const std::vector<double> u = halton_point(k, shift);
            std::vector<double> p(np);
            for (std::size_t i = 0; i < np; ++i) p[i] = lo[i] + u[i] * (hi[i] - lo[i]);
            starts.push_back(p);
        }
    }

    std::vector<double> best_p;
    double best_lml = -std::numeric_limits<double>::infinity();
    for (const auto& start : starts) {
        std::vector<double> p = start;
        auto cur = try_lml(p);
        if (!cur) continue;
        double step = 0.8;
        for (int sweep = 0; sweep < 50; ++sweep) {
            bool improved = false;
            for (std::size_t i = 0; i < np; ++i) {
                for (double dir : {1.0, -1.0}) {
                    std::vector<double> cand = p;
                    cand[i] = std::clamp(cand[i] + dir * step, lo[i], hi[i]);
                    if (cand[i] == p[i]) continue;
                    const auto v = try_lml(cand);
                    if (v && *v > *cur + 1e-12) {
                        p = cand;
                        cur = v;
                        improved = true;
                        break;
                    }
                }
            }
            if (!improved) {
                step *= 0.5;
                if (step < 1e-3) break;
            }
        }
        if (*cur > best_lml) {
            best_lml = *cur;
            best_p = p;
        }
    }
    if (best_p.empty())
        throw numerical_error("gp_fit: no hyperparameter start produced a usable "
                              "factorization");

    const double theta0 = std::exp(best_p[0]);
    std::vector<double> ls(d);
    for (std::size_t i = 0; i < d; ++i) ls[i] = std::exp(best_p[1 + i]);
    const double noise = std::exp(best_p[np - 1]);
    return gp_make(X, y, kind, theta0, ls, noise, true);
}

} // namespace cnf
