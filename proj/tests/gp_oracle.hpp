#pragma once

#include <cmath>
#include <vector>

#include "cnf/gp.hpp"

namespace testutil {

/// Independent posterior oracle: the same conditioning algebra computed by
/// Gauss-Jordan inversion of the dense covariance matrix — no Cholesky, no
/// cached factorization. Checks gp_posterior without sharing its code path.
inline cnf::Posterior dense_solve_posterior(const std::vector<std::vector<double>>& X,
                                            const std::vector<double>& y,
                                            cnf::KernelKind kind, double theta0,
                                            const std::vector<double>& ls, double noise,
                                            const std::vector<double>& xstar) {
    using cnf::kernel_eval;
    const std::size_t n = X.size();
    std::vector<std::vector<double>> a(n, std::vector<double>(2 * n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j)
            a[i][j] = kernel_eval(kind, X[i], X[j], theta0, ls) + (i == j ? noise : 0.0);
        a[i][n + i] = 1.0;
    }
    for (std::size_t col = 0; col < n; ++col) { // Gauss-Jordan with partial pivoting
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        const double d = a[col][col];
        for (double& v : a[col]) v /= d;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            for (std::size_t c = 0; c < 2 * n; ++c) a[r][c] -= f * a[col][c];
        }
    }
    std::vector<double> kstar(n);
    for (std::size_t i = 0; i < n; ++i)
        kstar[i] = kernel_eval(kind, X[i], xstar, theta0, ls);

    cnf::Posterior p;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) p.mean += kstar[i] * a[i][n + j] * y[j];
    double quad = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) quad += kstar[i] * a[i][n + j] * kstar[j];
    p.variance = kernel_eval(kind, xstar, xstar, theta0, ls) - quad;
    return p;
}

} // namespace testutil
