#include <grl/metrics.hpp>
#include <grl/rng.hpp>

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

using namespace grl;

namespace {

Matrix sine_window(std::size_t traces, std::size_t n, double f_hz, double dt, double phase = 0.0) {
    Matrix m(traces, n);
    for (std::size_t j = 0; j < traces; ++j)
        for (std::size_t t = 0; t < n; ++t)
            m(j, t) = std::sin(2.0 * std::numbers::pi * f_hz * static_cast<double>(t) * dt + phase);
    return m;
}

ShotGather gather_of(const Matrix& data) {
    ShotGather g;
    for (std::size_t j = 0; j < data.rows(); ++j) g.offsets_m.push_back(50.0 * static_cast<double>(j + 1));
    g.data = data;
    return g;
}

Periodogram random_periodogram(Rng& rng) {
    Periodogram p;
    p.freqs_hz = FrequencyGrid{}.points();
    for (std::size_t i = 0; i < p.freqs_hz.size(); ++i) p.power.push_back(rng.uniform(0.0, 5.0));
    return p;
}

}  // namespace

TEST(Periodogram, ZeroSignal) {
    const auto p = periodogram(Matrix(3, 128, 0.0), 0.002);
    ASSERT_EQ(p.power.size(), 61u);
    for (double v : p.power) EXPECT_EQ(v, 0.0);
}

TEST(Periodogram, TenHertzPeak) {
    const auto p = periodogram(sine_window(2, 512, 10.0, 0.002), 0.002);
    const auto it = std::max_element(p.power.begin(), p.power.end());
    EXPECT_EQ(p.freqs_hz[static_cast<std::size_t>(it - p.power.begin())], 10.0);
}

TEST(Periodogram, ParsevalAgainstTimeDomain) {
    Rng rng(1);
    for (std::size_t n : {64u, 255u, 512u, 1000u}) {
        std::vector<double> x(n);
        for (double& v : x) v = rng.normal() + 0.3;
        const auto s = trace_spectrum(x, 0.002);
        const double df = 1.0 / (static_cast<double>(n) * 0.002);
        double band = 0.0;
        for (double v : s.power) band += v * df;
        double ms = 0.0;
        for (double v : x) ms += v * v;
        ms /= static_cast<double>(n);
        EXPECT_NEAR(band, ms, 1e-6 * ms) << "n=" << n;
    }
}

TEST(Periodogram, DirectDftOracle) {
    Rng rng(2);
    std::vector<double> x(100);
    for (double& v : x) v = rng.normal();
    const auto s = trace_spectrum(x, 0.004);
    for (std::size_t k = 0; k < s.power.size(); ++k) {
        double re = 0.0, im = 0.0;
        for (std::size_t t = 0; t < x.size(); ++t) {
            const double a = -2.0 * std::numbers::pi * static_cast<double>(k * t) / 100.0;
            re += x[t] * std::cos(a);
            im += x[t] * std::sin(a);
        }
        const double scale = (k == 0 || k == 50) ? 1.0 : 2.0;
        EXPECT_NEAR(s.power[k], scale * (re * re + im * im) * 0.004 / 100.0, 1e-10);
    }
}

TEST(Periodogram, ShiftInvariantForStationarySine) {
    // 16 Hz completes whole cycles in 500 samples at 2 ms, so shifting the
    // phase leaves |DFT| unchanged.
    const auto a = periodogram(sine_window(1, 500, 16.0, 0.002), 0.002);
    const auto b = periodogram(sine_window(1, 500, 16.0, 0.002, 1.1), 0.002);
    for (std::size_t i = 0; i < a.power.size(); ++i) EXPECT_NEAR(a.power[i], b.power[i], 1e-6);
}

TEST(Periodogram, RejectsShortWindow) { EXPECT_THROW(periodogram(Matrix(2, 63, 1.0), 0.002), MetricError); }

TEST(PowerDistance, Arithmetic) {
    Periodogram s, n;
    s.freqs_hz = n.freqs_hz = FrequencyGrid{}.points();
    s.power.assign(61, 0.0);
    n.power.assign(61, 2.0);
    EXPECT_DOUBLE_EQ(power_distance(s, n), 2.0);
    EXPECT_EQ(power_distance(s, s), 0.0);
}

TEST(PowerDistance, MatchesLoopOracleExactly) {
    Rng rng(3);
    for (int r = 0; r < 50; ++r) {
        const auto a = random_periodogram(rng), b = random_periodogram(rng);
        double s = 0.0;
        for (std::size_t i = 0; i < 61; ++i) s += std::abs(a.power[i] - b.power[i]);
        EXPECT_EQ(power_distance(a, b), s / 61.0);
        EXPECT_EQ(power_distance(a, b), power_distance(b, a));
    }
}

TEST(PowerDistance, TriangleInequality) {
    Rng rng(4);
    for (int r = 0; r < 50; ++r) {
        const auto a = random_periodogram(rng), b = random_periodogram(rng), c = random_periodogram(rng);
        EXPECT_LE(power_distance(a, c), power_distance(a, b) + power_distance(b, c) + 1e-12);
    }
}

TEST(PowerDistance, GridMismatch) {
    Periodogram a, b;
    a.freqs_hz = FrequencyGrid{}.points();
    b.freqs_hz = FrequencyGrid{50.0, 1.0}.points();
    a.power.assign(a.freqs_hz.size(), 0.0);
    b.power.assign(b.freqs_hz.size(), 0.0);
    EXPECT_THROW(power_distance(a, b), MetricError);
}

TEST(Scores, HandArithmetic) {
    EXPECT_DOUBLE_EQ(power_score(10, 2, 1), 112.5);
    EXPECT_DOUBLE_EQ(power_score(10, 2, 2), 100.0);
    EXPECT_DOUBLE_EQ(power_score(10, 2, 10), 0.0);
    EXPECT_DOUBLE_EQ(amp_score(0.5, 0.1, 0.1), 100.0);
    EXPECT_THROW(power_score(3, 3, 1), MetricError);
    EXPECT_THROW(amp_score(3, 3, 1), MetricError);
}

TEST(Scores, RandomTriplesAndScaleInvariance) {
    Rng rng(5);
    for (int r = 0; r < 60; ++r) {
        const double o = rng.uniform(1.0, 10.0), e = rng.uniform(0.0, 0.9), x = rng.uniform(0.0, 12.0);
        const double expect = (o - x) / (o - e) * 100.0;
        EXPECT_NEAR(power_score(o, e, x), expect, 1e-12 * std::abs(expect) + 1e-12);
        EXPECT_NEAR(amp_score(o, e, x), expect, 1e-12 * std::abs(expect) + 1e-12);
        const double k = rng.uniform(0.1, 50.0);
        EXPECT_NEAR(power_score(k * o, k * e, k * x), expect, 1e-9 * (1.0 + std::abs(expect)));
    }
}

TEST(Histogram, IdenticalRegions) {
    Rng rng(6);
    std::vector<double> v(500);
    for (double& x : v) x = rng.normal();
    EXPECT_EQ(amp_distance(v, v), 0.0);
}

TEST(Histogram, DisjointSupport) {
    std::vector<double> a(100), b(100);
    for (int i = 0; i < 100; ++i) {
        a[static_cast<std::size_t>(i)] = -2.0 + 0.01 * i;
        b[static_cast<std::size_t>(i)] = 5.0 + 0.01 * i;
    }
    EXPECT_DOUBLE_EQ(amp_distance(a, b), 2.0 / 64.0);
}

TEST(Histogram, DensitiesSumToOneAndLoopOracle) {
    Rng rng(7);
    for (int r = 0; r < 30; ++r) {
        std::vector<double> a(200 + rng.below(300)), b(100 + rng.below(300));
        for (double& x : a) x = rng.normal();
        for (double& x : b) x = 3.0 * rng.normal() + 1.0;
        const auto edges = shared_edges(a, b);
        const auto ha = amp_histogram(a, edges), hb = amp_histogram(b, edges);
        EXPECT_NEAR(std::accumulate(ha.density.begin(), ha.density.end(), 0.0), 1.0, 1e-12);
        // Brute-force bin assignment.
        std::vector<double> ca(64, 0.0), cb(64, 0.0);
        for (double x : a)
            for (std::size_t i = 0; i < 64; ++i)
                if (x >= edges[i] && (x < edges[i + 1] || i == 63)) {
                    ca[i] += 1.0;
                    break;
                }
        for (double x : b)
            for (std::size_t i = 0; i < 64; ++i)
                if (x >= edges[i] && (x < edges[i + 1] || i == 63)) {
                    cb[i] += 1.0;
                    break;
                }
        double s = 0.0;
        for (std::size_t i = 0; i < 64; ++i)
            s += std::abs(ca[i] / static_cast<double>(a.size()) - cb[i] / static_cast<double>(b.size()));
        EXPECT_EQ(amp_distance(ha, hb), s / 64.0);
        EXPECT_EQ(amp_distance(a, b), amp_distance(b, a));
    }
}

TEST(Histogram, EmptyRegion) {
    std::vector<double> a{1.0}, none;
    EXPECT_THROW(amp_distance(a, none), MetricError);
}

TEST(Correlation, IdentityAndNegation) {
    Rng rng(8);
    Matrix m(5, 300);
    for (double& v : m.flat()) v = rng.normal();
    const auto g = gather_of(m);
    EXPECT_NEAR(trace_correlation(g, g).q_c, 100.0, 1e-12);
    auto neg = g;
    for (double& v : neg.data.flat()) v = -v;
    EXPECT_NEAR(trace_correlation(neg, g).q_c, -100.0, 1e-12);
}

TEST(Correlation, IndependentGathers) {
    Rng rng(9);
    Matrix a(20, 3000), b(20, 3000);
    for (double& v : a.flat()) v = rng.normal();
    for (double& v : b.flat()) v = rng.normal();
    EXPECT_LT(std::abs(trace_correlation(gather_of(a), gather_of(b)).q_c), 5.0);
}

TEST(Correlation, AffineInvariantAndConstantTracesExcluded) {
    Rng rng(10);
    Matrix a(4, 200), b(4, 200);
    for (double& v : a.flat()) v = rng.normal();
    for (double& v : b.flat()) v = rng.normal();
    auto ga = gather_of(a), gb = gather_of(b);
    const double base = trace_correlation(ga, gb).q_c;
    for (std::size_t j = 0; j < 4; ++j)
        for (double& v : ga.data.row(j)) v = (1.0 + static_cast<double>(j)) * v - 3.0;
    EXPECT_NEAR(trace_correlation(ga, gb).q_c, base, 1e-10);
    for (double& v : ga.data.row(2)) v = 7.0;
    const auto r = trace_correlation(ga, gb);
    EXPECT_EQ(r.excluded, 1u);
    EXPECT_FALSE(r.per_trace[2].has_value());
}

// Windows ---------------------------------------------------------------------

TEST(Windows, AllCleanMaskHasNoBorder) {
    const auto g = gather_of(Matrix(40, 500, 0.0));
    EXPECT_THROW(choose_windows(clean_mask_like(g)), MetricError);
}

TEST(Windows, ConstantBoundaryBands) {
    const auto g = gather_of(Matrix(60, 1000, 0.0));
    std::vector<std::optional<std::size_t>> b(60, std::nullopt);
    for (std::size_t j = 0; j < 20; ++j) b[j] = 400;
    const auto w = choose_windows(mask_from_boundary(g, b));
    ASSERT_EQ(w.bands.size(), 20u);
    for (const auto& band : w.bands) {
        EXPECT_EQ(band.above_lo, 300u);
        EXPECT_EQ(band.above_hi, 400u);
        EXPECT_EQ(band.below_lo, 400u);
        EXPECT_EQ(band.below_hi, 500u);
    }
}

TEST(Windows, PowerWindowsInsideRegions) {
    const auto g = gather_of(Matrix(110, 3000, 0.0));
    std::vector<std::optional<std::size_t>> b(110, std::nullopt);
    for (std::size_t j = 0; j < 50; ++j) b[j] = 100 + 30 * j;
    const auto m = mask_from_boundary(g, b);
    const auto w = choose_windows(m);
    for (std::size_t j = w.power_noise.trace_lo; j <= w.power_noise.trace_hi; ++j)
        for (std::size_t t = w.power_noise.sample_lo; t <= w.power_noise.sample_hi; ++t) ASSERT_EQ(m.mask(j, t), 0);
    for (std::size_t j = w.power_signal.trace_lo; j <= w.power_signal.trace_hi; ++j)
        for (std::size_t t = w.power_signal.sample_lo; t <= w.power_signal.sample_hi; ++t) ASSERT_EQ(m.mask(j, t), 1);
    EXPECT_LT(w.power_noise.trace_hi, 55u);
    EXPECT_GE(w.power_signal.trace_lo, w.power_noise.trace_hi + 17);
}

TEST(Windows, LargestRectangleBruteForce) {
    Rng rng(11);
    for (int r = 0; r < 20; ++r) {
        const std::size_t R = 3 + rng.below(6), C = 3 + rng.below(8);
        Grid<std::uint8_t> cells(R, C);
        for (auto& v : cells.flat()) v = rng.uniform01() < 0.7;
        std::size_t best = 0;
        for (std::size_t r0 = 0; r0 < R; ++r0)
            for (std::size_t r1 = r0; r1 < R; ++r1)
                for (std::size_t c0 = 0; c0 < C; ++c0)
                    for (std::size_t c1 = c0; c1 < C; ++c1) {
                        bool ok = true;
                        for (std::size_t i = r0; i <= r1 && ok; ++i)
                            for (std::size_t k = c0; k <= c1 && ok; ++k) ok = cells(i, k);
                        if (ok) best = std::max(best, (r1 - r0 + 1) * (c1 - c0 + 1));
                    }
        const auto w = largest_rectangle(cells, 0, R);
        EXPECT_EQ(w ? w->area() : 0u, best);
    }
}

// Survey -------------------------------------------------------------------------

TEST(Survey, SingleGatherHasZeroStd) {
    GatherScores s;
    s.q_c = 93.0;
    const auto r = survey_report("A", {s});
    EXPECT_EQ(r.q_c.std, 0.0);
    EXPECT_EQ(r.q_c.mean, 93.0);
}

TEST(Survey, MeanStdAndFormat) {
    GatherScores a, b;
    a.q_c = 90.0;
    b.q_c = 100.0;
    const auto r = survey_report("A", {a, b});
    EXPECT_DOUBLE_EQ(r.q_c.mean, 95.0);
    EXPECT_DOUBLE_EQ(r.q_c.std, 5.0);
    EXPECT_EQ(format_mean_std(r.q_c), "95.00% (5.00)");
    EXPECT_EQ(format_mean_std({94.86, 1.96}), "94.86% (1.96)");
    EXPECT_THROW(survey_report("A", {}), MetricError);
}

TEST(Survey, CsvAndJson) {
    GatherScores a;
    a.gather_id = 7;
    a.q_p = 1.5;
    a.q_a = 2.5;
    a.q_c = 3.5;
    const auto r = survey_report("geo", {a});
    std::ostringstream os;
    write_csv_header(os);
    write_csv_rows(os, r);
    EXPECT_EQ(os.str(), "dataset,gather_id,Q_p,Q_a,Q_c\ngeo,7,1.500000,2.500000,3.500000\n");
    const auto j = to_json(r);
    EXPECT_EQ(j["schema_version"], kReportSchemaVersion);
    EXPECT_EQ(j["summary"]["Q_c"], "3.50% (0.00)");
}

TEST(Evaluate, PerfectResultScoresFullMarks) {
    Rng rng(12);
    Matrix clean(40, 600);
    for (double& v : clean.flat()) v = rng.normal();
    auto noisy = clean;
    std::vector<std::optional<std::size_t>> b(40, std::nullopt);
    for (std::size_t j = 0; j < 15; ++j) {
        b[j] = 150 + 10 * j;
        for (std::size_t t = *b[j]; t < 600; ++t)
            noisy(j, t) += 20.0 * std::sin(2.0 * std::numbers::pi * 8.0 * static_cast<double>(t) * 0.002);
    }
    const auto gc = gather_of(clean), gn = gather_of(noisy);
    const auto m = mask_from_boundary(gc, b);
    const auto s = evaluate_gather(gn, gc, gc, m);
    EXPECT_DOUBLE_EQ(s.q_p, 100.0);
    EXPECT_DOUBLE_EQ(s.q_a, 100.0);
    EXPECT_NEAR(s.q_c, 100.0, 1e-12);
    const auto o = evaluate_gather(gn, gc, gn, m);
    EXPECT_NEAR(o.q_p, 0.0, 1e-12);
    EXPECT_NEAR(o.q_a, 0.0, 1e-12);
}
