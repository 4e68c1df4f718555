#pragma once

// Filtering quality metrics: power-spectrum and amplitude-histogram
// distances between a signal and a noise region, their normalized scores
// against a reference, mean trace correlation, window selection and
// survey aggregation.

#include <grl/fft.hpp>
#include <grl/seisdata.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace grl {

struct MetricError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Periodogram -----------------------------------------------------------------

struct Periodogram {
    std::vector<double> freqs_hz;
    std::vector<double> power;
};

struct FrequencyGrid {
    double f_max_hz = 60.0;
    double step_hz = 1.0;

    std::vector<double> points() const {
        std::vector<double> f;
        const auto n = static_cast<std::size_t>(std::llround(f_max_hz / step_hz)) + 1;
        for (std::size_t i = 0; i < n; ++i) f.push_back(static_cast<double>(i) * step_hz);
        return f;
    }
};

inline constexpr std::size_t kMinPeriodogramSamples = 64;

/// One-sided power spectral density of a single trace: density[k] at k*df,
/// scaled so that sum(density) * df equals the mean squared amplitude.
inline Periodogram trace_spectrum(std::span<const double> trace, double dt_s) {
    const std::size_t n = trace.size();
    const auto X = fft::rfft(trace);
    const double df = 1.0 / (static_cast<double>(n) * dt_s);
    Periodogram p;
    p.freqs_hz.resize(X.size());
    p.power.resize(X.size());
    for (std::size_t k = 0; k < X.size(); ++k) {
        const bool unpaired = k == 0 || (n % 2 == 0 && k == n / 2);
        p.freqs_hz[k] = static_cast<double>(k) * df;
        p.power[k] = (unpaired ? 1.0 : 2.0) * std::norm(X[k]) * dt_s / static_cast<double>(n);
    }
    return p;
}

/// Linear interpolation of (xs, ys) at x; xs ascending, clamped at the ends.
inline double interp(std::span<const double> xs, std::span<const double> ys, double x) {
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    const auto i = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
    const double w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    return ys[i - 1] + w * (ys[i] - ys[i - 1]);
}

/// Trace-averaged periodogram of a window, resampled onto `grid`.
inline Periodogram periodogram(const Matrix& window, double dt_s, const FrequencyGrid& grid = {}) {
    if (window.rows() == 0 || window.cols() < kMinPeriodogramSamples)
        throw MetricError("periodogram: window needs at least 64 samples per trace");
    std::vector<double> mean;
    std::vector<double> freqs;
    for (std::size_t j = 0; j < window.rows(); ++j) {
        auto s = trace_spectrum(window.row(j), dt_s);
        if (mean.empty()) {
            mean.assign(s.power.size(), 0.0);
            freqs = s.freqs_hz;
        }
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += s.power[k];
    }
    for (double& v : mean) v /= static_cast<double>(window.rows());
    Periodogram out;
    out.freqs_hz = grid.points();
    for (double f : out.freqs_hz) out.power.push_back(interp(freqs, mean, f));
    return out;
}

/// Mean absolute bin difference.
inline double power_distance(const Periodogram& sig, const Periodogram& noi) {
    if (sig.freqs_hz != noi.freqs_hz) throw MetricError("power_distance: frequency grids differ");
    double s = 0.0;
    for (std::size_t i = 0; i < sig.power.size(); ++i) s += std::abs(sig.power[i] - noi.power[i]);
    return s / static_cast<double>(sig.power.size());
}

/// Percentage of the original-to-reference distance gap closed by the result.
inline double relative_score(double d_original, double d_reference, double d_result) {
    const double den = d_original - d_reference;
    if (den == 0.0) throw MetricError("score: original and reference distances are equal");
    return (d_original - d_result) / den * 100.0;
}

inline double power_score(double pd_original, double pd_expert, double pd_result) {
    return relative_score(pd_original, pd_expert, pd_result);
}

// Amplitude histograms ----------------------------------------------------------

struct AmplitudeHistogram {
    std::vector<double> edges;
    std::vector<double> density;
};

inline constexpr std::size_t kAmplitudeBins = 64;

/// `bins` equal-width bins over [min, max] of both regions together.
inline std::vector<double> shared_edges(std::span<const double> a, std::span<const double> b,
                                        std::size_t bins = kAmplitudeBins) {
    if (a.empty() || b.empty()) throw MetricError("histogram: empty region");
    double lo = a[0], hi = a[0];
    for (auto r : {a, b})
        for (double v : r) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (hi == lo) hi = lo + 1.0;
    std::vector<double> e(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    e.back() = hi;
    return e;
}

/// Fraction of values per bin; bins are [e_i, e_{i+1}) with the last closed.
inline AmplitudeHistogram amp_histogram(std::span<const double> values, const std::vector<double>& edges) {
    if (values.empty()) throw MetricError("histogram: empty region");
    if (edges.size() < 2) throw MetricError("histogram: need at least one bin");
    const std::size_t bins = edges.size() - 1;
    AmplitudeHistogram h{edges, std::vector<double>(bins, 0.0)};
    for (double v : values) {
        if (v < edges.front() || v > edges.back()) throw MetricError("histogram: value outside edges");
        auto i = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
        i = std::min(i == 0 ? 0 : i - 1, bins - 1);
        h.density[i] += 1.0;
    }
    for (double& d : h.density) d /= static_cast<double>(values.size());
    return h;
}

inline double amp_distance(const AmplitudeHistogram& sig, const AmplitudeHistogram& noi) {
    if (sig.edges != noi.edges) throw MetricError("amp_distance: histogram edges differ");
    double s = 0.0;
    for (std::size_t i = 0; i < sig.density.size(); ++i) s += std::abs(sig.density[i] - noi.density[i]);
    return s / static_cast<double>(sig.density.size());
}

/// Histogram distance of two regions over shared edges.
inline double amp_distance(std::span<const double> sig, std::span<const double> noi, std::size_t bins = kAmplitudeBins) {
    const auto e = shared_edges(sig, noi, bins);
    return amp_distance(amp_histogram(sig, e), amp_histogram(noi, e));
}

inline double amp_score(double hd_original, double hd_expert, double hd_result) {
    return relative_score(hd_original, hd_expert, hd_result);
}

// Trace correlation ---------------------------------------------------------------

struct CorrelationResult {
    std::vector<std::optional<double>> per_trace;  // nullopt for constant traces
    std::size_t excluded = 0;
    double mean_cc = 0.0;
    double q_c = 0.0;
};

inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

inline CorrelationResult trace_correlation(const ShotGather& result, const ShotGather& reference) {
    if (!result.data.same_shape(reference.data)) throw MetricError("trace_correlation: shape mismatch");
    CorrelationResult r;
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t j = 0; j < result.n_traces(); ++j) {
        auto cc = pearson(result.data.row(j), reference.data.row(j));
        r.per_trace.push_back(cc);
        if (cc) {
            sum += *cc;
            ++used;
        } else {
            ++r.excluded;
        }
    }
    if (used == 0) throw MetricError("trace_correlation: every trace is constant");
    r.mean_cc = sum / static_cast<double>(used);
    r.q_c = 100.0 * r.mean_cc;
    return r;
}

// Windows -------------------------------------------------------------------------

struct AmplitudeBand {
    std::size_t trace = 0;
    std::size_t above_lo = 0, above_hi = 0;  // [lo, hi): before the boundary
    std::size_t below_lo = 0, below_hi = 0;  // [lo, hi): from the boundary on
};

struct EvaluationWindows {
    std::vector<AmplitudeBand> bands;
    TraceWindow power_noise;
    TraceWindow power_signal;
};

struct WindowConfig {
    std::size_t band_samples = 100;
    std::size_t min_trace_gap = 16;
};

/// Largest axis-aligned rectangle of true cells inside rows [r0, r1) of `cells`.
inline std::optional<TraceWindow> largest_rectangle(const Grid<std::uint8_t>& cells, std::size_t r0, std::size_t r1) {
    const std::size_t C = cells.cols();
    std::vector<std::size_t> h(C, 0);
    std::size_t best = 0;
    TraceWindow w;
    std::vector<std::pair<std::size_t, std::size_t>> stack;  // (start column, height)
    for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = 0; c < C; ++c) h[c] = cells(r, c) ? h[c] + 1 : 0;
        stack.clear();
        for (std::size_t c = 0; c <= C; ++c) {
            const std::size_t hc = c < C ? h[c] : 0;
            std::size_t start = c;
            while (!stack.empty() && stack.back().second >= hc) {
                const auto [s, hh] = stack.back();
                stack.pop_back();
                const std::size_t area = hh * (c - s);
                if (hh > 0 && area > best) {
                    best = area;
                    w = TraceWindow{r + 1 - hh, r, s, c - 1};
                }
                start = s;
            }
            stack.emplace_back(start, hc);
        }
    }
    if (best == 0) return std::nullopt;
    return w;
}

/// Amplitude bands of width W on both sides of every trace boundary, a
/// power window inside the noise region among the near-offset half and a
/// power window inside the clean region further out.
inline EvaluationWindows choose_windows(const GroundRollMask& mask, const WindowConfig& cfg = {}) {
    EvaluationWindows ew;
    const std::size_t nt = mask.n_traces(), ns = mask.n_samples();
    for (std::size_t j = 0; j < nt; ++j) {
        if (!mask.boundary[j] || *mask.boundary[j] == 0) continue;
        const std::size_t b = *mask.boundary[j];
        AmplitudeBand band;
        band.trace = j;
        band.above_lo = b >= cfg.band_samples ? b - cfg.band_samples : 0;
        band.above_hi = b;
        band.below_lo = b;
        band.below_hi = std::min(ns, b + cfg.band_samples);
        ew.bands.push_back(band);
    }
    if (ew.bands.empty()) throw MetricError("choose_windows: mask has no border");

    Grid<std::uint8_t> noise(nt, ns), clean(nt, ns);
    for (std::size_t i = 0; i < mask.mask.size(); ++i) {
        noise.flat()[i] = mask.mask.flat()[i] == 0;
        clean.flat()[i] = mask.mask.flat()[i] == 1;
    }
    const auto nw = largest_rectangle(noise, 0, nt / 2);
    if (!nw) throw MetricError("choose_windows: no noise region among near-offset traces");
    const std::size_t far_start = std::max(nt / 2, nw->trace_hi + 1 + cfg.min_trace_gap);
    if (far_start >= nt) throw MetricError("choose_windows: gather too small for separated windows");
    const auto sw = largest_rectangle(clean, far_start, nt);
    if (!sw) throw MetricError("choose_windows: no clean region among far-offset traces");
    ew.power_noise = *nw;
    ew.power_signal = *sw;
    return ew;
}

/// Values above and below the boundary across all bands.
inline std::pair<std::vector<double>, std::vector<double>> band_values(const ShotGather& g,
                                                                       const std::vector<AmplitudeBand>& bands) {
    std::vector<double> above, below;
    for (const auto& b : bands) {
        auto row = g.data.row(b.trace);
        above.insert(above.end(), row.begin() + static_cast<std::ptrdiff_t>(b.above_lo),
                     row.begin() + static_cast<std::ptrdiff_t>(b.above_hi));
        below.insert(below.end(), row.begin() + static_cast<std::ptrdiff_t>(b.below_lo),
                     row.begin() + static_cast<std::ptrdiff_t>(b.below_hi));
    }
    return {std::move(above), std::move(below)};
}

// Per-gather and survey scores ----------------------------------------------------

struct GatherScores {
    std::string dataset;
    std::uint64_t gather_id = 0;
    double q_p = 0.0, q_a = 0.0, q_c = 0.0;
    double pd_original = 0.0, pd_expert = 0.0, pd_result = 0.0;
    double hd_original = 0.0, hd_expert = 0.0, hd_result = 0.0;
    std::size_t excluded_traces = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GatherScores, dataset, gather_id, q_p, q_a, q_c, pd_original, pd_expert, pd_result,
                                   hd_original, hd_expert, hd_result, excluded_traces)

struct MetricConfig {
    WindowConfig windows;
    FrequencyGrid grid;
    std::size_t amplitude_bins = kAmplitudeBins;
};

inline double gather_power_distance(const ShotGather& g, const EvaluationWindows& w, const FrequencyGrid& grid) {
    return power_distance(periodogram(extract_window(g, w.power_signal), g.dt_s, grid),
                          periodogram(extract_window(g, w.power_noise), g.dt_s, grid));
}

inline double gather_amp_distance(const ShotGather& g, const EvaluationWindows& w, std::size_t bins) {
    const auto [above, below] = band_values(g, w.bands);
    return amp_distance(above, below, bins);
}

/// Scores `result` against the `expert` reference, with `original` as the
/// unfiltered baseline; windows come from `mask`.
inline GatherScores evaluate_gather(const ShotGather& original, const ShotGather& expert, const ShotGather& result,
                                    const GroundRollMask& mask, const MetricConfig& cfg = {}) {
    if (!original.data.same_shape(expert.data) || !original.data.same_shape(result.data) || !same_shape(original, mask))
        throw MetricError("evaluate_gather: shape mismatch");
    const auto w = choose_windows(mask, cfg.windows);
    GatherScores s;
    s.gather_id = result.gather_id;
    s.pd_original = gather_power_distance(original, w, cfg.grid);
    s.pd_expert = gather_power_distance(expert, w, cfg.grid);
    s.pd_result = gather_power_distance(result, w, cfg.grid);
    s.hd_original = gather_amp_distance(original, w, cfg.amplitude_bins);
    s.hd_expert = gather_amp_distance(expert, w, cfg.amplitude_bins);
    s.hd_result = gather_amp_distance(result, w, cfg.amplitude_bins);
    s.q_p = power_score(s.pd_original, s.pd_expert, s.pd_result);
    s.q_a = amp_score(s.hd_original, s.hd_expert, s.hd_result);
    const auto cc = trace_correlation(result, expert);
    s.q_c = cc.q_c;
    s.excluded_traces = cc.excluded;
    return s;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MeanStd, mean, std)

/// Population statistics.
inline MeanStd mean_std(std::span<const double> v) {
    if (v.empty()) throw MetricError("mean_std: empty");
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / n)};
}

/// "95.00% (5.00)"
inline std::string format_mean_std(const MeanStd& s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f%% (%.2f)", s.mean, s.std);
    return buf;
}

inline constexpr int kReportSchemaVersion = 1;

struct ScoreReport {
    std::string dataset;
    std::vector<GatherScores> gathers;
    MeanStd q_p, q_a, q_c;
};

inline ScoreReport survey_report(std::string dataset, std::vector<GatherScores> gathers) {
    if (gathers.empty()) throw MetricError("survey_report: no gathers");
    ScoreReport r;
    r.dataset = std::move(dataset);
    std::vector<double> p, a, c;
    for (auto& g : gathers) {
        g.dataset = r.dataset;
        p.push_back(g.q_p);
        a.push_back(g.q_a);
        c.push_back(g.q_c);
    }
    r.gathers = std::move(gathers);
    r.q_p = mean_std(p);
    r.q_a = mean_std(a);
    r.q_c = mean_std(c);
    return r;
}

inline void write_csv_header(std::ostream& os) { os << "dataset,gather_id,Q_p,Q_a,Q_c\n"; }

inline void write_csv_rows(std::ostream& os, const ScoreReport& r) {
    char buf[160];
    for (const auto& g : r.gathers) {
        std::snprintf(buf, sizeof buf, "%s,%llu,%.6f,%.6f,%.6f\n", r.dataset.c_str(),
                      static_cast<unsigned long long>(g.gather_id), g.q_p, g.q_a, g.q_c);
        os << buf;
    }
}

inline nlohmann::json to_json(const ScoreReport& r) {
    return nlohmann::json{{"schema_version", kReportSchemaVersion},
                          {"dataset", r.dataset},
                          {"n_gathers", r.gathers.size()},
                          {"Q_p", r.q_p},
                          {"Q_a", r.q_a},
                          {"Q_c", r.q_c},
                          {"summary",
                           {{"Q_p", format_mean_std(r.q_p)},
                            {"Q_a", format_mean_std(r.q_a)},
                            {"Q_c", format_mean_std(r.q_c)}}},
                          {"gathers", r.gathers}};
}

/// Two-column CSV dumps for plotting.
inline void write_periodogram_csv(std::ostream& os, const Periodogram& p) {
    os << "freq_hz,power\n";
    for (std::size_t i = 0; i < p.power.size(); ++i) os << p.freqs_hz[i] << ',' << p.power[i] << '\n';
}

inline void write_histogram_csv(std::ostream& os, const AmplitudeHistogram& h) {
    os << "bin_lo,bin_hi,density\n";
    for (std::size_t i = 0; i < h.density.size(); ++i) os << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.density[i] << '\n';
}

}  // namespace grl
