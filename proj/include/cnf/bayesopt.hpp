#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "cnf/errors.hpp"
#include "cnf/gp.hpp"
#include "cnf/rng.hpp"

namespace cnf {

// ---------------------------------------------------------------------------
// search space
// ---------------------------------------------------------------------------

/// One tunable hyperparameter. Discrete dimensions (integer ranges and
/// choices) map to equal-width cells of [0,1]; continuous dimensions map
/// affinely, optionally on a log scale.
struct Dimension {
    enum class Type { int_range, choice, continuous };

    std::string name;
    Type type = Type::continuous;

    // int_range
    long long lo_i = 0, hi_i = 0, step_i = 1;
    // choice
    std::vector<std::string> choices;
    // continuous
    double lo = 0.0, hi = 1.0;
    bool log_scale = false;

    std::size_t cells() const {
        if (type == Type::int_range)
            return static_cast<std::size_t>((hi_i - lo_i) / step_i) + 1;
        if (type == Type::choice) return choices.size();
        return 0;
    }

    void validate() const {
        switch (type) {
        case Type::int_range:
            if (step_i <= 0) throw config_error("dimension '" + name + "': step must be > 0");
            if (lo_i >= hi_i) throw config_error("dimension '" + name + "': lo must be < hi");
            break;
        case Type::choice:
            if (choices.empty())
                throw config_error("dimension '" + name + "': choice list is empty");
            break;
        case Type::continuous:
            if (!(lo < hi)) throw config_error("dimension '" + name + "': lo must be < hi");
            if (log_scale && lo <= 0.0)
                throw config_error("dimension '" + name + "': log scale requires lo > 0");
            break;
        }
    }

    static Dimension int_range(std::string name, long long lo, long long hi,
                               long long step) {
        Dimension d;
        d.name = std::move(name);
        d.type = Type::int_range;
        d.lo_i = lo;
        d.hi_i = hi;
        d.step_i = step;
        d.validate();
        return d;
    }

    static Dimension choice(std::string name, std::vector<std::string> values) {
        Dimension d;
        d.name = std::move(name);
        d.type = Type::choice;
        d.choices = std::move(values);
        d.validate();
        return d;
    }

    static Dimension continuous(std::string name, double lo, double hi, bool log_scale) {
        Dimension d;
        d.name = std::move(name);
        d.type = Type::continuous;
        d.lo = lo;
        d.hi = hi;
        d.log_scale = log_scale;
        d.validate();
        return d;
    }
};

struct SearchSpace {
    std::vector<Dimension> dims;
    std::vector<std::pair<std::string, std::string>> fixed; // passed through verbatim

    void validate() const {
        for (const Dimension& d : dims) d.validate();
    }
};

/// A decoded hyperparameter value: integer, real or verbatim text.
struct ParamValue {
    enum class Kind { integer, real, text };
    Kind kind = Kind::real;
    long long i = 0;
    double d = 0.0;
    std::string s;

    static ParamValue integer(long long v) {
        ParamValue p;
        p.kind = Kind::integer;
        p.i = v;
        return p;
    }
    static ParamValue real(double v) {
        ParamValue p;
        p.kind = Kind::real;
        p.d = v;
        return p;
    }
    static ParamValue text(std::string v) {
        ParamValue p;
        p.kind = Kind::text;
        p.s = std::move(v);
        return p;
    }

    double as_double() const {
        switch (kind) {
        case Kind::integer: return static_cast<double>(i);
        case Kind::real: return d;
        case Kind::text: {
            double v = 0;
            auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
                throw config_error("parameter value '" + s + "' is not numeric");
            return v;
        }
        }
        throw contract_error("ParamValue: bad kind");
    }

    std::string str() const {
        switch (kind) {
        case Kind::integer: return std::to_string(i);
        case Kind::real: {
            char buf[64];
            auto res = std::to_chars(buf, buf + sizeof(buf), d);
            return std::string(buf, res.ptr);
        }
        case Kind::text: return s;
        }
        throw contract_error("ParamValue: bad kind");
    }
};

using ParamMap = std::map<std::string, ParamValue>;

/// Maps a configuration into the unit hypercube. Discrete values land on
/// their cell midpoint; continuous values map affinely (in log space for
/// log-scaled dimensions). Fixed parameters are absent from the point.
inline std::vector<double> encode_config(const ParamMap& config, const SearchSpace& space) {
    std::vector<double> x(space.dims.size());
    for (std::size_t di = 0; di < space.dims.size(); ++di) {
        const Dimension& dim = space.dims[di];
        const auto it = config.find(dim.name);
        if (it == config.end())
            throw config_error("encode_config: missing value for dimension '" + dim.name + "'");
        switch (dim.type) {
        case Dimension::Type::int_range: {
            const double vd = it->second.as_double();
            const long long v = static_cast<long long>(std::llround(vd));
            if (static_cast<double>(v) != vd || v < dim.lo_i || v > dim.hi_i ||
                (v - dim.lo_i) % dim.step_i != 0)
                throw config_error("encode_config: value " + it->second.str() +
                                   " outside dimension '" + dim.name + "'");
            const auto idx = static_cast<std::size_t>((v - dim.lo_i) / dim.step_i);
            x[di] = (static_cast<double>(idx) + 0.5) / static_cast<double>(dim.cells());
            break;
        }
        case Dimension::Type::choice: {
            const std::string v = it->second.str();
            const auto pos = std::find(dim.choices.begin(), dim.choices.end(), v);
            if (pos == dim.choices.end())
                throw config_error("encode_config: value '" + v +
                                   "' is not a choice of dimension '" + dim.name + "'");
            const auto idx = static_cast<std::size_t>(pos - dim.choices.begin());
            x[di] = (static_cast<double>(idx) + 0.5) / static_cast<double>(dim.cells());
            break;
        }
        case Dimension::Type::continuous: {
            const double v = it->second.as_double();
            if (v < dim.lo || v > dim.hi)
                throw config_error("encode_config: value " + it->second.str() +
                                   " outside dimension '" + dim.name + "' [" +
                                   std::to_string(dim.lo) + "," + std::to_string(dim.hi) + "]");
            x[di] = dim.log_scale
                        ? (std::log(v) - std::log(dim.lo)) /
                              (std::log(dim.hi) - std::log(dim.lo))
                        : (v - dim.lo) / (dim.hi - dim.lo);
            break;
        }
        }
    }
    return x;
}

/// Inverse of encode_config; fixed parameters are reinserted verbatim.
inline ParamMap decode_config(const std::vector<double>& x, const SearchSpace& space) {
    if (x.size() != space.dims.size())
        throw shape_error("decode_config: point has " + std::to_string(x.size()) +
                          " coordinates, space has " + std::to_string(space.dims.size()));
    ParamMap config;
    for (std::size_t di = 0; di < space.dims.size(); ++di) {
        const Dimension& dim = space.dims[di];
        const double u = std::clamp(x[di], 0.0, 1.0);
        switch (dim.type) {
        case Dimension::Type::int_range: {
            const std::size_t m = dim.cells();
            const auto idx = std::min<std::size_t>(
                static_cast<std::size_t>(u * static_cast<double>(m)), m - 1);
            config[dim.name] =
                ParamValue::integer(dim.lo_i + static_cast<long long>(idx) * dim.step_i);
            break;
        }
        case Dimension::Type::choice: {
            const std::size_t m = dim.cells();
            const auto idx = std::min<std::size_t>(
                static_cast<std::size_t>(u * static_cast<double>(m)), m - 1);
            config[dim.name] = ParamValue::text(dim.choices[idx]);
            break;
        }
        case Dimension::Type::continuous: {
            const double v = dim.log_scale
                                 ? std::exp(std::log(dim.lo) +
                                            u * (std::log(dim.hi) - std::log(dim.lo)))
                                 : dim.lo + u * (dim.hi - dim.lo);
            config[dim.name] = ParamValue::real(v);
            break;
        }
        }
    }
    for (const auto& [name, value] : space.fixed) config[name] = ParamValue::text(value);
    return config;
}

// ---------------------------------------------------------------------------
// expected improvement
// ---------------------------------------------------------------------------

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double norm_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Closed-form EI for minimization: with gamma = (f_best - mean)/sigma,
/// EI = sigma * (gamma * Phi(gamma) + phi(gamma)); zero when sigma
/// vanishes. Negative variances from roundoff are clamped, not errors.
inline double expected_improvement(double mean, double variance, double f_best) {
    const double sigma = std::sqrt(std::max(variance, 0.0));
    if (sigma < 1e-12) return 0.0;
    const double gamma = (f_best - mean) / sigma;
    return sigma * (gamma * norm_cdf(gamma) + norm_pdf(gamma));
}

// ---------------------------------------------------------------------------
// acquisition maximization
// ---------------------------------------------------------------------------

namespace detail {

inline bool duplicates_observed(const std::vector<double>& x, const GpModel& model) {
    for (const auto& obs : model.X) {
        bool same = true;
        for (std::size_t d = 0; d < x.size(); ++d) {
            if (std::abs(x[d] - obs[d]) > 1e-9) {
                same = false;
                break;
            }
        }
        if (same) return true;
    }
    return false;
}

} // namespace detail

/// Derivative-free EI maximization: 2048 random candidates plus 16
/// coordinate-refinement passes from the 8 best, deterministic given the
/// rng state. If the winner coincides with an observed point (1e-9 per
/// coordinate) the best non-duplicate candidate is returned instead.
inline std::vector<double> propose_next(const GpModel& model, const SearchSpace& space,
                                        Rng& rng) {
    const std::size_t d = space.dims.size();
    if (model.dim() != d)
        throw shape_error("propose_next: model dimensionality " +
                          std::to_string(model.dim()) + " vs space " + std::to_string(d));
    double f_best = model.y[0];
    for (double v : model.y) f_best = std::min(f_best, v);

    auto ei_at = [&](const std::vector<double>& x) {
        const Posterior p = gp_posterior(model, x);
        return expected_improvement(p.mean, p.variance, f_best);
    };

    struct Cand {
        std::vector<double> x;
        double ei;
    };
    std::vector<Cand> cands;
    cands.reserve(2048 + 8);
    for (std::size_t i = 0; i < 2048; ++i) {
        std::vector<double> x(d);
        for (double& v : x) v = rng.next_double();
        cands.push_back({std::move(x), 0.0});
        cands.back().ei = ei_at(cands.back().x);
    }

    std::partial_sort(cands.begin(), cands.begin() + std::min<std::size_t>(8, cands.size()),
                      cands.end(), [](const Cand& a, const Cand& b) { return a.ei > b.ei; });

    const std::size_t elite = std::min<std::size_t>(8, cands.size());
    for (std::size_t e = 0; e < elite; ++e) {
        Cand cur = cands[e];
        double step = 0.1;
        for (int pass = 0; pass < 16; ++pass) {
            bool improved = false;
            for (std::size_t di = 0; di < d; ++di) {
                for (double dir : {1.0, -1.0}) {
                    Cand cand = cur;
                    cand.x[di] = std::clamp(cand.x[di] + dir * step, 0.0, 1.0);
                    if (cand.x[di] == cur.x[di]) continue;
                    cand.ei = ei_at(cand.x);
                    if (cand.ei > cur.ei) {
                        cur = std::move(cand);
                        improved = true;
                    }
                }
            }
            if (!improved) step *= 0.5;
        }
        cands.push_back(std::move(cur));
    }

    std::sort(cands.begin(), cands.end(),
              [](const Cand& a, const Cand& b) { return a.ei > b.ei; });
    for (const Cand& c : cands) {
        if (!detail::duplicates_observed(c.x, model)) return c.x;
    }
    return cands.front().x; // everything duplicates; return the argmax anyway
}

// ---------------------------------------------------------------------------
// sequential tuning loop
// ---------------------------------------------------------------------------

struct TrialRecord {
    std::size_t index = 0;
    std::vector<double> point; // encoded, unit hypercube
    ParamMap config;           // decoded, fixed parameters included
    double objective = 0.0;    // penalty value when !ok
    double seconds = 0.0;
    bool ok = true;
};

struct TuneResult {
    TrialRecord best;
    std::vector<TrialRecord> trials;
};

struct TuneOptions {
    std::size_t budget = 20;
    std::size_t init = 5;
    KernelKind kernel = KernelKind::matern52;
    double noise_floor = 1e-8;
    std::function<void(const TrialRecord&)> on_trial; // called as each trial lands
};

/// Sequential model-based minimization: `init` scrambled low-discrepancy
/// trials, then fit-propose-evaluate until the budget is spent. Failed
/// evaluations are recorded with penalty worst-so-far + 1 so the surrogate
/// stays finite. Trials stream to `on_trial` as they complete.
inline TuneResult tune(const std::function<double(const ParamMap&)>& objective,
                       const SearchSpace& space, const TuneOptions& opts, Rng& rng) {
    space.validate();
    if (space.dims.empty()) throw config_error("tune: search space has no dimensions");
    if (opts.init < 2 || opts.budget < opts.init)
        throw config_error("tune: need budget >= init >= 2");

    TuneResult result;
    double worst_ok = -std::numeric_limits<double>::infinity();
    bool any_ok = false;

    auto run_trial = [&](std::vector<double> x) {
        TrialRecord rec;
        rec.index = result.trials.size();
        rec.point = std::move(x);
        rec.config = decode_config(rec.point, space);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            rec.objective = objective(rec.config);
            if (!std::isfinite(rec.objective))
                throw numerical_error("objective returned a non-finite value");
            rec.ok = true;
            any_ok = true;
            worst_ok = std::max(worst_ok, rec.objective);
        } catch (const std::exception&) {
            rec.ok = false;
            rec.objective = any_ok ? worst_ok + 1.0 : 1.0;
        }
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.trials.push_back(rec);
        if (opts.on_trial) opts.on_trial(result.trials.back());
    };

    // scrambled Halton initialization
    std::vector<double> shift(space.dims.size());
    for (double& s : shift) s = rng.next_double();
    for (std::size_t i = 0; i < opts.init; ++i) run_trial(halton_point(i, shift));

    if (!any_ok)
        throw numerical_error("tune: every initialization trial failed");

    while (result.trials.size() < opts.budget) {
        std::vector<std::vector<double>> X;
        std::vector<double> y;
        X.reserve(result.trials.size());
        for (const TrialRecord& t : result.trials) {
            X.push_back(t.point);
            y.push_back(t.objective);
        }
        const GpModel model = gp_fit(X, y, opts.kernel, opts.noise_floor);
        run_trial(propose_next(model, space, rng));
    }

    const TrialRecord* best = nullptr;
    for (const TrialRecord& t : result.trials)
        if (t.ok && (best == nullptr || t.objective < best->objective)) best = &t;
    result.best = *best; // any_ok guarantees at least one
    return result;
}

} // namespace cnf
