#pragma once

// Synthetic shot gathers: hyperbolic Ricker reflections, band-limited
// background noise and a dispersive ground-roll cone with an exact
// affected-region mask.

#include <grl/fft.hpp>
#include <grl/rng.hpp>
#include <grl/seisdata.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace grl {

struct Reflection {
    double t0_s = 0.0;
    double v_nmo_mps = 2000.0;
    double amplitude = 1.0;
    double ricker_f_hz = 30.0;
    friend bool operator==(const Reflection&, const Reflection&) = default;
};

struct GroundRollConfig {
    double f_lo_hz = 5.0, f_hi_hz = 20.0;
    double v_lo_mps = 250.0, v_hi_mps = 1000.0;
    double amplitude_ratio = 20.0;  // peak |ground roll| / peak |reflections|; 0 disables
    double max_offset_m = 2500.0;   // taper reaches zero here
    double taper_m = 500.0;
    int components = 12;
    double cycles = 3.0;            // component duration in periods of its frequency
    double ramp_cycles = 1.0;       // cosine taper length at each end, capped at half the duration
    friend bool operator==(const GroundRollConfig&, const GroundRollConfig&) = default;
};

struct GeologyConfig {
    std::string name = "A";
    int n_traces = 110;
    double offset_min_m = 50.0;
    double offset_spacing_m = 50.0;
    double trace_len_s = 6.0;
    double dt_s = 0.002;
    std::vector<Reflection> reflections;
    GroundRollConfig groundroll;
    double noise_rms = 0.03;       // relative to the reflection peak
    double noise_band_hz = 125.0;
    double theta = 2.0;            // mask threshold over the clean-gather RMS
    double t0_jitter = 0.05;       // relative, per gather
    std::uint64_t seed = 1;

    std::size_t n_samples() const { return static_cast<std::size_t>(std::llround(trace_len_s / dt_s)); }
    friend bool operator==(const GeologyConfig&, const GeologyConfig&) = default;
};

// Missing keys keep the default-constructed value.
#define GRL_JSON_FROM_OPT(v1) \
    if (grl_j.contains(#v1)) grl_j.at(#v1).get_to(grl_t.v1);
#define GRL_JSON_DEFAULTED(Type, ...)                                                                              \
    inline void to_json(nlohmann::json& nlohmann_json_j, const Type& nlohmann_json_t) {                            \
        NLOHMANN_JSON_EXPAND(NLOHMANN_JSON_PASTE(NLOHMANN_JSON_TO, __VA_ARGS__))                                   \
    }                                                                                                              \
    inline void from_json(const nlohmann::json& grl_j, Type& grl_t) {                                              \
        grl_t = Type{};                                                                                            \
        NLOHMANN_JSON_EXPAND(NLOHMANN_JSON_PASTE(GRL_JSON_FROM_OPT, __VA_ARGS__))                                  \
    }

GRL_JSON_DEFAULTED(Reflection, t0_s, v_nmo_mps, amplitude, ricker_f_hz)
GRL_JSON_DEFAULTED(GroundRollConfig, f_lo_hz, f_hi_hz, v_lo_mps, v_hi_mps, amplitude_ratio,
                                                max_offset_m, taper_m, components, cycles, ramp_cycles)
GRL_JSON_DEFAULTED(GeologyConfig, name, n_traces, offset_min_m, offset_spacing_m,
                                                trace_len_s, dt_s, reflections, groundroll, noise_rms, noise_band_hz,
                                                theta, t0_jitter, seed)

inline void validate(const GeologyConfig& c) {
    auto fail = [&](const std::string& what) { throw InvariantError("geology '" + c.name + "': " + what); };
    if (c.n_traces < 1) fail("n_traces must be positive");
    if (!(c.offset_min_m > 0.0) || !(c.offset_spacing_m > 0.0)) fail("offsets must be positive");
    if (!(c.dt_s > 0.0) || !(c.trace_len_s >= c.dt_s)) fail("bad sampling");
    if (c.reflections.empty()) fail("at least one reflection is required");
    for (const auto& r : c.reflections)
        if (!(r.t0_s > 0.0) || !(r.v_nmo_mps > 0.0) || !(r.ricker_f_hz > 0.0)) fail("bad reflection parameters");
    const auto& g = c.groundroll;
    if (!(g.f_lo_hz < g.f_hi_hz) || g.f_lo_hz < 3.0 || g.f_hi_hz > 30.0) fail("ground-roll band must satisfy 3 <= f_lo < f_hi <= 30");
    if (!(g.v_lo_mps > 0.0) || !(g.v_lo_mps < g.v_hi_mps)) fail("ground-roll velocities must satisfy 0 < v_lo < v_hi");
    if (!(g.amplitude_ratio == 0.0 || g.amplitude_ratio > 1.0)) fail("amplitude_ratio must be 0 or > 1");
    if (!(g.max_offset_m > 0.0) || g.taper_m < 0.0 || g.taper_m > g.max_offset_m) fail("bad ground-roll taper");
    if (g.components < 1 || !(g.cycles > 0.0) || !(g.ramp_cycles > 0.0)) fail("bad ground-roll components");
    if (c.noise_rms < 0.0 || !(c.noise_band_hz > 0.0)) fail("bad noise parameters");
    if (!(c.theta > 0.0)) fail("theta must be positive");
    if (c.t0_jitter < 0.0 || c.t0_jitter >= 1.0) fail("t0_jitter must be in [0, 1)");
}

inline GeologyConfig load_geology(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    GeologyConfig c = nlohmann::json::parse(is).get<GeologyConfig>();
    validate(c);
    return c;
}

namespace geology {

/// 110 traces at 50 m, ground roll 5-20 Hz dying out by 2500 m. Long wave
/// trains over a wide velocity band so the noise fills the cone.
inline GeologyConfig A() {
    GeologyConfig c;
    c.name = "A";
    c.groundroll.v_lo_mps = 100.0;
    c.groundroll.v_hi_mps = 1500.0;
    c.groundroll.cycles = 40.0;
    c.reflections = {{0.40, 1900, 1.0, 32}, {0.75, 2000, -0.8, 30}, {1.10, 2150, 0.9, 33}, {1.50, 2300, -0.7, 31},
                     {1.90, 2450, 0.8, 30}, {2.40, 2600, -0.9, 34}, {2.90, 2750, 0.7, 31}, {3.40, 2900, -0.8, 30},
                     {3.90, 3050, 0.9, 32}, {4.50, 3200, -0.7, 30}, {5.10, 3400, 0.8, 31}};
    c.seed = 1;
    return c;
}

/// Same ground roll as A over a different reflection sequence.
inline GeologyConfig A_variant() {
    GeologyConfig c = A();
    c.name = "A-variant";
    c.reflections = {{0.50, 1850, -0.9, 30}, {0.90, 2050, 0.8, 32}, {1.30, 2200, -0.8, 29}, {1.70, 2350, 0.9, 33},
                     {2.20, 2500, -0.7, 31}, {2.70, 2700, 0.8, 30}, {3.20, 2850, -0.9, 32}, {3.70, 3000, 0.7, 29},
                     {4.20, 3150, -0.8, 31}, {4.80, 3300, 0.9, 30}, {5.40, 3450, -0.7, 32}};
    c.seed = 2;
    return c;
}

/// Ground roll 6-24 Hz present out to the farthest offset, slower surface
/// layer and a shallower, lower-frequency reflection sequence.
inline GeologyConfig B() {
    GeologyConfig c;
    c.name = "B";
    c.reflections = {{0.30, 1700, 1.0, 24}, {0.60, 1800, -0.9, 22}, {0.95, 1950, 0.8, 25}, {1.30, 2100, -0.8, 23},
                     {1.70, 2250, 0.9, 22}, {2.10, 2400, -0.7, 24}, {2.60, 2550, 0.8, 21}, {3.10, 2700, -0.9, 23},
                     {3.70, 2900, 0.7, 22}, {4.30, 3050, -0.8, 24}, {5.00, 3250, 0.9, 22}};
    c.groundroll.f_lo_hz = 6.0;
    c.groundroll.f_hi_hz = 24.0;
    c.groundroll.v_lo_mps = 80.0;
    c.groundroll.v_hi_mps = 1200.0;
    c.groundroll.cycles = 40.0;
    c.groundroll.max_offset_m = 8000.0;
    c.groundroll.taper_m = 500.0;
    c.seed = 3;
    return c;
}

inline GeologyConfig by_name(const std::string& name) {
    if (name == "A") return A();
    if (name == "A-variant") return A_variant();
    if (name == "B") return B();
    throw std::invalid_argument("unknown stock geology '" + name + "'");
}

}  // namespace geology

inline double ricker(double tau, double f_hz) {
    const double a = std::numbers::pi * f_hz * tau;
    const double a2 = a * a;
    return (1.0 - 2.0 * a2) * std::exp(-a2);
}

/// Cosine offset taper: 1 up to max - width, 0 from max on.
inline double offset_taper(double x, double max_offset, double width) {
    if (x >= max_offset) return 0.0;
    if (x <= max_offset - width) return 1.0;
    return 0.5 * (1.0 + std::cos(std::numbers::pi * (x - (max_offset - width)) / width));
}

/// Adds one Hann-gated sinusoid arriving at x / v and lasting `duration_s`
/// to `field`, and its gate times `weight` to `envelope`.
inline void add_ground_roll_component(Matrix& field, Matrix& envelope, std::span<const double> offsets, double dt_s,
                                      double f_hz, double v_mps, double phase, double duration_s, double ramp_s,
                                      std::span<const double> weight) {
    const double ramp = std::min(ramp_s, 0.5 * duration_s);
    for (std::size_t j = 0; j < field.rows(); ++j) {
        if (weight[j] == 0.0) continue;
        const double arrival = offsets[j] / v_mps;
        const auto t_begin = static_cast<std::size_t>(std::max(0.0, std::floor(arrival / dt_s)));
        const auto t_end = std::min(field.cols(), static_cast<std::size_t>(std::ceil((arrival + duration_s) / dt_s)) + 1);
        for (std::size_t t = t_begin; t < t_end; ++t) {
            const double tau = static_cast<double>(t) * dt_s - arrival;
            if (tau < 0.0 || tau > duration_s) continue;
            const double edge = std::min(tau, duration_s - tau);
            const double s = edge < ramp ? std::sin(0.5 * std::numbers::pi * edge / ramp) : 1.0;
            const double gate = s * s * weight[j];
            field(j, t) += gate * std::sin(2.0 * std::numbers::pi * f_hz * tau + phase);
            envelope(j, t) += gate;
        }
    }
}

struct SyntheticGather {
    ShotGather clean;
    ShotGather noisy;
    /// Suffix form: noise from the first affected sample to the end of the trace.
    GroundRollMask truth;
    /// Per sample: 0 where the ground-roll envelope exceeds the threshold.
    Grid<std::uint8_t> affected;
};

inline std::vector<double> offsets_for(const GeologyConfig& c) {
    std::vector<double> x(static_cast<std::size_t>(c.n_traces));
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = c.offset_min_m + c.offset_spacing_m * static_cast<double>(j);
    return x;
}

/// White Gaussian noise with unit RMS after removing content above `band_hz`.
inline std::vector<double> band_limited_noise(std::size_t n, double dt_s, double band_hz, Rng& rng) {
    std::vector<double> w(n);
    for (double& v : w) v = rng.normal();
    auto X = fft::rfft(w);
    const double df = 1.0 / (static_cast<double>(n) * dt_s);
    for (std::size_t k = 0; k < X.size(); ++k)
        if (static_cast<double>(k) * df > band_hz) X[k] = 0.0;
    auto y = fft::irfft(X, n);
    double ss = 0.0;
    for (double v : y) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(n));
    if (rms > 0.0)
        for (double& v : y) v /= rms;
    return y;
}

inline SyntheticGather make_gather(const GeologyConfig& cfg, std::uint64_t gather_id) {
    validate(cfg);
    Rng rng(derive_seed(cfg.seed, gather_id));
    const std::size_t nt = static_cast<std::size_t>(cfg.n_traces);
    const std::size_t ns = cfg.n_samples();
    const auto x = offsets_for(cfg);

    Matrix refl(nt, ns);
    for (const auto& r : cfg.reflections) {
        const double t0 = r.t0_s * (1.0 + rng.uniform(-cfg.t0_jitter, cfg.t0_jitter));
        const double half_width = 3.0 / r.ricker_f_hz;
        for (std::size_t j = 0; j < nt; ++j) {
            const double tx = std::sqrt(t0 * t0 + (x[j] / r.v_nmo_mps) * (x[j] / r.v_nmo_mps));
            const double amp = r.amplitude / std::sqrt(std::max(tx, t0));
            const auto lo = static_cast<std::size_t>(std::max(0.0, std::floor((tx - half_width) / cfg.dt_s)));
            const auto hi = std::min(ns, static_cast<std::size_t>(std::ceil((tx + half_width) / cfg.dt_s)) + 1);
            for (std::size_t t = lo; t < hi; ++t) refl(j, t) += amp * ricker(static_cast<double>(t) * cfg.dt_s - tx, r.ricker_f_hz);
        }
    }
    double peak = 0.0;
    for (double v : refl.flat()) peak = std::max(peak, std::abs(v));

    SyntheticGather out;
    out.clean.gather_id = gather_id;
    out.clean.dt_s = cfg.dt_s;
    out.clean.offsets_m = x;
    out.clean.data = refl;
    for (std::size_t j = 0; j < nt; ++j) {
        const auto n = band_limited_noise(ns, cfg.dt_s, cfg.noise_band_hz, rng);
        auto row = out.clean.data.row(j);
        for (std::size_t t = 0; t < ns; ++t) row[t] += cfg.noise_rms * peak * n[t];
    }
    double ss = 0.0;
    for (double v : out.clean.data.flat()) ss += v * v;
    const double clean_rms = std::sqrt(ss / static_cast<double>(nt * ns));

    const auto& g = cfg.groundroll;
    Matrix gr(nt, ns), env(nt, ns);
    std::vector<double> weight(nt);
    for (std::size_t j = 0; j < nt; ++j) weight[j] = offset_taper(x[j], g.max_offset_m, g.taper_m);
    for (int k = 0; k < g.components; ++k) {
        const double f = rng.uniform(g.f_lo_hz, g.f_hi_hz);
        const double v = g.v_hi_mps + (f - g.f_lo_hz) / (g.f_hi_hz - g.f_lo_hz) * (g.v_lo_mps - g.v_hi_mps);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        add_ground_roll_component(gr, env, x, cfg.dt_s, f, v, phase, g.cycles / f, g.ramp_cycles / f, weight);
    }
    double gr_peak = 0.0;
    for (double v : gr.flat()) gr_peak = std::max(gr_peak, std::abs(v));
    const double scale = (g.amplitude_ratio > 0.0 && gr_peak > 0.0) ? g.amplitude_ratio * peak / gr_peak : 0.0;

    out.noisy = out.clean;
    std::vector<std::optional<std::size_t>> boundary(nt);
    out.affected = Grid<std::uint8_t>(nt, ns, 1);
    const double level = cfg.theta * clean_rms;
    for (std::size_t j = 0; j < nt; ++j) {
        auto nrow = out.noisy.data.row(j);
        const auto grow = gr.row(j);
        const auto erow = env.row(j);
        for (std::size_t t = 0; t < ns; ++t) {
            nrow[t] += scale * grow[t];
            if (scale * erow[t] > level) {
                out.affected(j, t) = 0;
                if (!boundary[j]) boundary[j] = t;
            }
        }
    }
    out.truth = mask_from_boundary(out.clean, boundary);
    return out;
}

struct Survey {
    GeologyConfig config;
    std::vector<SyntheticGather> gathers;
    std::vector<std::uint64_t> train_ids;
    std::vector<std::uint64_t> test_ids;
};

inline constexpr std::size_t kTrainGathers = 5;

/// Gathers get ids 1..n; the first five train, the rest test.
inline Survey make_survey(const GeologyConfig& cfg, std::size_t n_gathers, std::uint64_t seed) {
    if (n_gathers < kTrainGathers + 1) throw std::invalid_argument("make_survey: need at least 6 gathers");
    Survey s;
    s.config = cfg;
    s.config.seed = seed;
    for (std::size_t i = 0; i < n_gathers; ++i) {
        const std::uint64_t id = i + 1;
        s.gathers.push_back(make_gather(s.config, id));
        (i < kTrainGathers ? s.train_ids : s.test_ids).push_back(id);
    }
    return s;
}

}  // namespace grl
