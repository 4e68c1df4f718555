#pragma once

// Histogram equalization through a fitted transfer map, its inverse, and
// masked quantile matching of a noise region onto its signal region.

#include <grl/seisdata.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace grl {

struct DegenerateInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Monotone piecewise-linear map from amplitude to quantile in [0, 1].
/// `x` is strictly increasing, `y` non-decreasing.
struct TransferMap {
    std::vector<double> x;
    std::vector<double> y;

    static constexpr std::size_t kDefaultBreakpoints = 4096;

    bool empty() const noexcept { return x.empty(); }

    double operator()(double v) const {
        if (x.size() == 1) return y.front();
        if (v <= x.front()) return y.front();
        if (v >= x.back()) return y.back();
        const auto it = std::upper_bound(x.begin(), x.end(), v);
        const std::size_t i = static_cast<std::size_t>(it - x.begin());
        const double w = (v - x[i - 1]) / (x[i] - x[i - 1]);
        return y[i - 1] + w * (y[i] - y[i - 1]);
    }

    /// Amplitude for quantile q by interpolating (y, x); clamps outside [y0, yB].
    double inverse(double q) const {
        if (q <= y.front()) return x.front();
        if (q >= y.back()) return x.back();
        const auto it = std::upper_bound(y.begin(), y.end(), q);
        const std::size_t i = static_cast<std::size_t>(it - y.begin());
        if (y[i] == y[i - 1]) return x[i];
        const double w = (q - y[i - 1]) / (y[i] - y[i - 1]);
        return x[i - 1] + w * (x[i] - x[i - 1]);
    }

    friend bool operator==(const TransferMap&, const TransferMap&) = default;
};

inline void to_json(nlohmann::json& j, const TransferMap& m) { j = nlohmann::json{{"x", m.x}, {"y", m.y}}; }

inline void from_json(const nlohmann::json& j, TransferMap& m) {
    j.at("x").get_to(m.x);
    j.at("y").get_to(m.y);
    if (m.x.empty() || m.x.size() != m.y.size()) throw FormatError("transfer map: malformed breakpoints");
    for (std::size_t i = 1; i < m.x.size(); ++i)
        if (!(m.x[i] > m.x[i - 1]) || m.y[i] < m.y[i - 1]) throw FormatError("transfer map: breakpoints not monotone");
}

/// Empirical CDF sampled at B evenly spaced ranks of the pooled sorted values.
inline TransferMap fit_equalization(std::span<const double> values, std::size_t breakpoints = TransferMap::kDefaultBreakpoints) {
    if (values.empty()) throw DegenerateInput("fit_equalization: no samples");
    if (breakpoints < 2) throw std::invalid_argument("fit_equalization: need at least two breakpoints");
    std::vector<double> v(values.begin(), values.end());
    for (double a : v)
        if (!std::isfinite(a)) throw DegenerateInput("fit_equalization: non-finite sample");
    std::sort(v.begin(), v.end());
    if (v.front() == v.back()) throw DegenerateInput("fit_equalization: constant input");

    const std::size_t n = v.size();
    TransferMap m;
    m.x.reserve(breakpoints);
    m.y.reserve(breakpoints);
    for (std::size_t i = 0; i < breakpoints; ++i) {
        const auto r = static_cast<std::size_t>(
            std::llround(static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(breakpoints - 1)));
        const double xv = v[r];
        if (!m.x.empty() && xv == m.x.back()) continue;
        const auto le = static_cast<std::size_t>(std::upper_bound(v.begin(), v.end(), xv) - v.begin());
        m.x.push_back(xv);
        m.y.push_back(static_cast<double>(le) / static_cast<double>(n));
    }
    return m;
}

inline TransferMap fit_equalization(const std::vector<ShotGather>& gathers,
                                    std::size_t breakpoints = TransferMap::kDefaultBreakpoints) {
    if (gathers.empty()) throw DegenerateInput("fit_equalization: no gathers");
    std::vector<double> pooled;
    for (const auto& g : gathers) pooled.insert(pooled.end(), g.data.flat().begin(), g.data.flat().end());
    return fit_equalization(pooled, breakpoints);
}

inline ShotGather apply_equalization(const ShotGather& g, const TransferMap& map) {
    if (map.empty()) throw std::invalid_argument("apply_equalization: map not fitted");
    ShotGather out = g;
    for (double& v : out.data.flat()) v = map(v);
    return out;
}

inline ShotGather invert_equalization(const ShotGather& g, const TransferMap& map) {
    if (map.empty()) throw std::invalid_argument("invert_equalization: map not fitted");
    ShotGather out = g;
    for (double& v : out.data.flat()) v = map.inverse(v);
    return out;
}

/// Zero-based ranks; tied values share their mean rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t k = i;
        while (k + 1 < order.size() && v[order[k + 1]] == v[order[i]]) ++k;
        const double r = 0.5 * static_cast<double>(i + k);
        for (std::size_t t = i; t <= k; ++t) ranks[order[t]] = r;
        i = k + 1;
    }
    return ranks;
}

inline constexpr std::size_t kMinSignalSamples = 1000;

/// Quantile matching of the mask = 0 region onto the mask = 1 region of the
/// same gather. Signal samples are copied untouched.
inline ShotGather masked_equalize(const ShotGather& g, const GroundRollMask& mask) {
    if (!same_shape(g, mask)) throw InvariantError("masked_equalize: shape mismatch");
    std::vector<double> sig, noi;
    std::vector<std::size_t> noi_idx;
    const auto d = g.data.flat();
    const auto m = mask.mask.flat();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (m[i] == 0) {
            noi.push_back(d[i]);
            noi_idx.push_back(i);
        } else {
            sig.push_back(d[i]);
        }
    }
    if (noi.empty()) return g;
    if (sig.size() < kMinSignalSamples) throw DegenerateInput("masked_equalize: signal region too small");
    std::sort(sig.begin(), sig.end());
    if (sig.front() == sig.back()) throw DegenerateInput("masked_equalize: constant signal region");

    ShotGather out = g;
    auto o = out.data.flat();
    const auto ranks = average_ranks(noi);
    const double nn = static_cast<double>(noi.size() - 1);
    const double ns = static_cast<double>(sig.size() - 1);
    for (std::size_t k = 0; k < noi.size(); ++k) {
        const double q = noi.size() == 1 ? 0.5 : ranks[k] / nn;
        const double pos = q * ns;
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, sig.size() - 1);
        const double w = pos - static_cast<double>(lo);
        o[noi_idx[k]] = sig[lo] + w * (sig[hi] - sig[lo]);
    }
    return out;
}

}  // namespace grl
