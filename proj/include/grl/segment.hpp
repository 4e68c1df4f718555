#pragma once

// Per-trace ground-roll segmentation: a small 1D encoder-decoder trained on
// rough masks, plus the mask clean-up applied to its thresholded output.

#include <grl/layers.hpp>
#include <grl/rng.hpp>
#include <grl/seisdata.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

namespace grl {

struct SegmentConfig {
    int net_length = 2048;  // traces are resampled to this length for the network
    int kernel = 5;
    int traces_per_gather = 64;
    int epochs = 5;
    int batch = 8;
    double lr = 0.001;
    double beta1 = 0.9;
    double threshold = 0.5;
    int median_window = 5;
    int min_run = 25;

    friend bool operator==(const SegmentConfig&, const SegmentConfig&) = default;
};

inline void to_json(nlohmann::json& j, const SegmentConfig& c) {
    j = {{"net_length", c.net_length}, {"kernel", c.kernel},       {"traces_per_gather", c.traces_per_gather},
         {"epochs", c.epochs},         {"batch", c.batch},         {"lr", c.lr},
         {"beta1", c.beta1},           {"threshold", c.threshold}, {"median_window", c.median_window},
         {"min_run", c.min_run}};
}

inline void from_json(const nlohmann::json& j, SegmentConfig& c) {
    c = SegmentConfig{};
    auto opt = [&](const char* k, auto& v) {
        if (j.contains(k)) j.at(k).get_to(v);
    };
    opt("net_length", c.net_length);
    opt("kernel", c.kernel);
    opt("traces_per_gather", c.traces_per_gather);
    opt("epochs", c.epochs);
    opt("batch", c.batch);
    opt("lr", c.lr);
    opt("beta1", c.beta1);
    opt("threshold", c.threshold);
    opt("median_window", c.median_window);
    opt("min_run", c.min_run);
    if (c.net_length < 8 || c.net_length % 4 != 0) throw InvariantError("segment config: net_length must be a multiple of 4");
    if (c.kernel < 1 || c.kernel % 2 == 0) throw InvariantError("segment config: kernel must be odd");
    if (c.traces_per_gather < 1 || c.epochs < 1 || c.batch < 1 || c.median_window < 1 || c.min_run < 0)
        throw InvariantError("segment config: sizes must be positive");
}

// Resampling ------------------------------------------------------------------

/// Linear interpolation onto `n` points spanning the same interval.
inline std::vector<double> resample_linear(std::span<const double> v, std::size_t n) {
    if (v.empty() || n == 0) throw std::invalid_argument("resample_linear: empty input");
    std::vector<double> out(n);
    if (v.size() == 1 || n == 1) {
        std::fill(out.begin(), out.end(), v.front());
        return out;
    }
    const double step = static_cast<double>(v.size() - 1) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) * step;
        const auto k = std::min(static_cast<std::size_t>(x), v.size() - 2);
        const double w = x - static_cast<double>(k);
        out[i] = (1.0 - w) * v[k] + w * v[k + 1];
    }
    return out;
}

/// Nearest-neighbour resampling, same interval convention as resample_linear.
template <class T>
std::vector<T> resample_nearest(std::span<const T> v, std::size_t n) {
    if (v.empty() || n == 0) throw std::invalid_argument("resample_nearest: empty input");
    std::vector<T> out(n);
    const double step = n == 1 ? 0.0 : static_cast<double>(v.size() - 1) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = v[std::min(v.size() - 1, static_cast<std::size_t>(std::lround(static_cast<double>(i) * step)))];
    return out;
}

// Training set ----------------------------------------------------------------

struct TraceSample {
    std::size_t gather_index = 0;
    std::size_t trace_index = 0;
    double offset_m = 0.0;
    std::vector<double> trace;          // equalized amplitudes, native length
    std::vector<std::uint8_t> target;   // rough-mask row, 0 = noise
};

/// Draws traces uniformly without replacement (with replacement once a gather
/// runs out) and pairs each with its rough-mask row.
inline std::vector<TraceSample> make_trace_training_set(const std::vector<ShotGather>& gathers,
                                                        const std::vector<GroundRollMask>& rough_masks,
                                                        int n_traces_per_gather, std::uint64_t seed) {
    if (gathers.empty() || n_traces_per_gather < 1) throw InvariantError("make_trace_training_set: empty input");
    if (gathers.size() != rough_masks.size()) throw InvariantError("make_trace_training_set: one mask per gather required");
    Rng rng(seed);
    std::vector<TraceSample> out;
    for (std::size_t gi = 0; gi < gathers.size(); ++gi) {
        const auto& g = gathers[gi];
        const auto& m = rough_masks[gi];
        if (!same_shape(g, m)) throw InvariantError("make_trace_training_set: mask does not align with gather");
        if (g.n_traces() == 0) throw InvariantError("make_trace_training_set: gather has no traces");
        std::vector<std::size_t> order(g.n_traces());
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order.begin(), order.end());
        for (int k = 0; k < n_traces_per_gather; ++k) {
            const std::size_t j = static_cast<std::size_t>(k) < order.size() ? order[static_cast<std::size_t>(k)]
                                                                              : static_cast<std::size_t>(rng.below(g.n_traces()));
            TraceSample s;
            s.gather_index = gi;
            s.trace_index = j;
            s.offset_m = g.offsets_m[j];
            s.trace.assign(g.data.row(j).begin(), g.data.row(j).end());
            s.target.assign(m.mask.row(j).begin(), m.mask.row(j).end());
            out.push_back(std::move(s));
        }
    }
    return out;
}

// Network ----------------------------------------------------------------------

/// Three-level 1D encoder-decoder on [N, 1, 1, L] inputs with skip
/// concatenations; outputs p(clean) per sample.
struct TraceUNet {
    int net_length = 2048;
    nn::Conv2d e1, e2, e3, d2, d1, out;

    TraceUNet() = default;
    TraceUNet(int L, int k, Rng& rng)
        : net_length(L), e1(nn::Conv2d::along_width(1, 8, k, 1, rng)), e2(nn::Conv2d::along_width(8, 16, k, 1, rng)),
          e3(nn::Conv2d::along_width(16, 32, k, 1, rng)), d2(nn::Conv2d::along_width(32 + 16, 16, k, 1, rng)),
          d1(nn::Conv2d::along_width(16 + 8, 8, k, 1, rng)), out(nn::Conv2d::along_width(8, 1, 1, 1, rng)) {}

    nn::ParamList params() const {
        nn::ParamList p;
        e1.collect("e1", p);
        e2.collect("e2", p);
        e3.collect("e3", p);
        d2.collect("d2", p);
        d1.collect("d1", p);
        out.collect("out", p);
        return p;
    }

    Var forward(const Var& x) const {
        if (x.shape().c != 1 || x.shape().h != 1 || x.shape().w != net_length)
            throw ShapeError("TraceUNet: input must be [N, 1, 1, net_length]");
        const auto h1 = nn::leaky_relu(e1(x));
        const auto h2 = nn::leaky_relu(e2(nn::downsample2x(h1)));
        const auto h3 = nn::leaky_relu(e3(nn::downsample2x(h2)));
        const auto u2 = nn::leaky_relu(d2(nn::concat_channels(nn::upsample2x(h3), h2)));
        const auto u1 = nn::leaky_relu(d1(nn::concat_channels(nn::upsample2x(u2), h1)));
        return nn::sigmoid(out(u1));
    }
};

struct SegmentTrainLog {
    std::vector<double> epoch_loss;
};

namespace detail {

struct PreparedTrace {
    std::vector<double> x;
    std::vector<double> y;
};

inline PreparedTrace prepare(const TraceSample& s, std::size_t L) {
    if (s.trace.size() != s.target.size() || s.trace.empty()) throw InvariantError("segment: trace and target lengths differ");
    PreparedTrace p;
    p.x = resample_linear(s.trace, L);
    const auto t = resample_nearest<std::uint8_t>(s.target, L);
    p.y.assign(t.begin(), t.end());
    return p;
}

}  // namespace detail

/// Adam on per-sample BCE over shuffled mini-batches.
inline TraceUNet train_trace_unet(const std::vector<TraceSample>& samples, const SegmentConfig& cfg, std::uint64_t seed,
                                  SegmentTrainLog* log = nullptr) {
    if (samples.empty()) throw InvariantError("train_trace_unet: empty training set");
    bool any0 = false, any1 = false;
    for (const auto& s : samples)
        for (std::uint8_t v : s.target) (v == 0 ? any0 : any1) = true;
    if (!any0 || !any1) throw InvariantError("train_trace_unet: targets are all one class");

    const auto L = static_cast<std::size_t>(cfg.net_length);
    std::vector<detail::PreparedTrace> data;
    data.reserve(samples.size());
    for (const auto& s : samples) data.push_back(detail::prepare(s, L));

    Rng rng(seed);
    TraceUNet model(cfg.net_length, cfg.kernel, rng);
    nn::Adam opt(model.params(), {cfg.lr, cfg.beta1, 0.999, 1e-8});
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int e = 0; e < cfg.epochs; ++e) {
        rng.shuffle(order.begin(), order.end());
        double sum = 0.0;
        int batches = 0;
        for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t b = std::min(order.size() - i, static_cast<std::size_t>(cfg.batch));
            Tensor x(Shape{static_cast<int>(b), 1, 1, cfg.net_length}), y(x.shape());
            for (std::size_t k = 0; k < b; ++k) {
                const auto& d = data[order[i + k]];
                std::copy(d.x.begin(), d.x.end(), x.ptr() + k * L);
                std::copy(d.y.begin(), d.y.end(), y.ptr() + k * L);
            }
            opt.zero_grad();
            auto loss = nn::bce(model.forward(Var::constant(std::move(x))), y);
            backward(loss);
            opt.step();
            sum += loss.item();
            ++batches;
        }
        if (log) log->epoch_loss.push_back(sum / batches);
    }
    return model;
}

/// p(clean) per sample at the trace's native length.
inline std::vector<double> predict_trace(const TraceUNet& model, std::span<const double> trace) {
    const auto L = static_cast<std::size_t>(model.net_length);
    const auto x = resample_linear(trace, L);
    Tensor t(Shape{1, 1, 1, model.net_length});
    std::copy(x.begin(), x.end(), t.ptr());
    const auto p = model.forward(Var::constant(std::move(t)));
    return resample_nearest<double>(p.value().data(), trace.size());
}

// Post-processing ----------------------------------------------------------------

/// Keeps each trace's longest noise run, drops runs shorter than `min_run`,
/// median-filters the run starts across traces and rebuilds a suffix mask.
inline GroundRollMask mask_postprocess(const ShotGather& like, const Grid<std::uint8_t>& raw, int median_window = 5,
                                       int min_run = 25) {
    if (raw.rows() != like.n_traces() || raw.cols() != like.n_samples()) throw InvariantError("mask_postprocess: shape mismatch");
    const std::size_t nt = raw.rows(), ns = raw.cols();
    // ns stands for "no boundary" so clean traces take part in the median.
    std::vector<std::size_t> start(nt, ns);
    for (std::size_t j = 0; j < nt; ++j) {
        const auto row = raw.row(j);
        std::size_t best_len = 0, best_start = ns, run = 0;
        for (std::size_t t = 0; t <= ns; ++t) {
            if (t < ns && row[t] == 0) {
                ++run;
                continue;
            }
            if (run > best_len) {
                best_len = run;
                best_start = t - run;
            }
            run = 0;
        }
        if (best_len > 0 && best_len >= static_cast<std::size_t>(min_run)) start[j] = best_start;
    }
    const auto half = static_cast<std::ptrdiff_t>(median_window / 2);
    std::vector<std::optional<std::size_t>> boundary(nt);
    for (std::size_t j = 0; j < nt; ++j) {
        std::vector<std::size_t> win;
        for (std::ptrdiff_t d = -half; d <= half; ++d) {
            const auto k = static_cast<std::ptrdiff_t>(j) + d;
            if (k >= 0 && k < static_cast<std::ptrdiff_t>(nt)) win.push_back(start[static_cast<std::size_t>(k)]);
        }
        std::nth_element(win.begin(), win.begin() + static_cast<std::ptrdiff_t>(win.size() / 2), win.end());
        const std::size_t med = win[win.size() / 2];
        if (med < ns) boundary[j] = med;
    }
    return mask_from_boundary(like, boundary);
}

using TraceProbFn = std::function<std::vector<double>(std::span<const double>)>;

/// Thresholds p(clean) per trace and post-processes the raw mask.
inline GroundRollMask segment_gather_with(const ShotGather& g, const TraceProbFn& prob, const SegmentConfig& cfg = {}) {
    Grid<std::uint8_t> raw(g.n_traces(), g.n_samples(), 1);
    for (std::size_t j = 0; j < g.n_traces(); ++j) {
        const auto p = prob(g.data.row(j));
        if (p.size() != g.n_samples()) throw ShapeError("segment_gather: probability length differs from trace length");
        for (std::size_t t = 0; t < p.size(); ++t) raw(j, t) = p[t] > cfg.threshold ? 1 : 0;
    }
    return mask_postprocess(g, raw, cfg.median_window, cfg.min_run);
}

inline GroundRollMask segment_gather(const ShotGather& g, const TraceUNet& model, const SegmentConfig& cfg = {}) {
    return segment_gather_with(g, [&](std::span<const double> tr) { return predict_trace(model, tr); }, cfg);
}

// Scoring against a reference mask ------------------------------------------------

struct MaskAgreement {
    double median_boundary_error = 0.0;  // samples, over traces where either mask has a boundary
    double iou = 0.0;                    // of the noise regions
};

inline MaskAgreement compare_masks(const GroundRollMask& a, const GroundRollMask& ref) {
    if (a.n_traces() != ref.n_traces() || a.n_samples() != ref.n_samples()) throw InvariantError("compare_masks: shape mismatch");
    MaskAgreement r;
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.mask.size(); ++i) {
        const bool x = a.mask.flat()[i] == 0, y = ref.mask.flat()[i] == 0;
        inter += x && y;
        uni += x || y;
    }
    r.iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    std::vector<double> err;
    const auto ns = static_cast<double>(a.n_samples());
    for (std::size_t j = 0; j < a.n_traces(); ++j) {
        if (!a.boundary[j] && !ref.boundary[j]) continue;
        const double ba = a.boundary[j] ? static_cast<double>(*a.boundary[j]) : ns;
        const double br = ref.boundary[j] ? static_cast<double>(*ref.boundary[j]) : ns;
        err.push_back(std::abs(ba - br));
    }
    if (!err.empty()) {
        std::sort(err.begin(), err.end());
        const std::size_t n = err.size();
        r.median_boundary_error = n % 2 ? err[n / 2] : 0.5 * (err[n / 2 - 1] + err[n / 2]);
    }
    return r;
}

}  // namespace grl
