#pragma once

// Rough ground-roll detection: half-gather tile labels, a small conv tile
// classifier, the likelihood map over a stride grid and the logarithmic
// boundary fit that turns the map into a rough mask.

#include <grl/layers.hpp>
#include <grl/seisdata.hpp>

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>
#include <vector>

namespace grl {

struct TileSample {
    std::uint64_t gather_id = 0;
    std::size_t trace = 0;
    std::size_t sample = 0;
    Matrix data;  // tile_size x tile_size
    int label = 0;  // 1 noisy, 0 clean
};

struct DetectConfig {
    int tile_size = 16;
    int stride = 4;
    int tiles_per_class = 500;  // per training gather
    int epochs = 12;
    int samples_per_epoch = 5000;
    int batch = 16;
    double lr = 0.0002;
    double beta1 = 0.5;
    bool instance_norm = false;
    double p_thresh = 0.5;
    double min_run_s = 1.0;  // shorter runs of p > p_thresh give no boundary point

    friend bool operator==(const DetectConfig&, const DetectConfig&) = default;
};

inline void to_json(nlohmann::json& j, const DetectConfig& c) {
    j = {{"tile_size", c.tile_size},   {"stride", c.stride}, {"tiles_per_class", c.tiles_per_class},
         {"epochs", c.epochs},         {"samples_per_epoch", c.samples_per_epoch},
         {"batch", c.batch},           {"lr", c.lr},         {"beta1", c.beta1},
         {"instance_norm", c.instance_norm}, {"p_thresh", c.p_thresh},
         {"min_run_s", c.min_run_s}};
}

inline void from_json(const nlohmann::json& j, DetectConfig& c) {
    c = DetectConfig{};
    auto opt = [&](const char* k, auto& v) {
        if (j.contains(k)) j.at(k).get_to(v);
    };
    opt("tile_size", c.tile_size);
    opt("stride", c.stride);
    opt("tiles_per_class", c.tiles_per_class);
    opt("epochs", c.epochs);
    opt("samples_per_epoch", c.samples_per_epoch);
    opt("batch", c.batch);
    opt("lr", c.lr);
    opt("beta1", c.beta1);
    opt("instance_norm", c.instance_norm);
    opt("p_thresh", c.p_thresh);
    opt("min_run_s", c.min_run_s);
    if (c.tile_size < 8 || c.stride < 1 || c.tiles_per_class < 1 || c.epochs < 1 || c.batch < 1 || c.samples_per_epoch < 1)
        throw InvariantError("detect config: sizes must be positive (tile_size >= 8)");
}

// Tile sampling -----------------------------------------------------------

inline Matrix cut_tile(const ShotGather& g, std::size_t j, std::size_t t, std::size_t T) {
    return extract_window(g, {j, j + T - 1, t, t + T - 1});
}

/// Noisy-labelled tiles anchored in the near-offset half, clean-labelled in
/// the far half. Labels come from position only.
inline std::vector<TileSample> sample_heuristic_tiles(const ShotGather& g, int tile_size, int n_per_class, std::uint64_t seed) {
    const auto T = static_cast<std::size_t>(tile_size);
    const std::size_t nt = g.n_traces(), ns = g.n_samples();
    if (tile_size < 1 || 2 * T > std::min(nt, ns)) throw InvariantError("sample_heuristic_tiles: gather too small for tile size");
    Rng rng(seed);
    std::vector<TileSample> out;
    out.reserve(static_cast<std::size_t>(2 * n_per_class));
    const std::size_t half = nt / 2;
    for (int label : {1, 0}) {
        for (int i = 0; i < n_per_class; ++i) {
            TileSample s;
            s.gather_id = g.gather_id;
            s.label = label;
            s.trace = label ? rng.below(half) : half + rng.below(nt - T + 1 - half);
            s.sample = rng.below(ns - T + 1);
            s.data = cut_tile(g, s.trace, s.sample, T);
            out.push_back(std::move(s));
        }
    }
    return out;
}

// Classifier ------------------------------------------------------------------

struct TileClassifier {
    int tile_size = 16;
    bool instance_norm = false;
    nn::Conv2d c1, c2, c3;
    nn::Linear fc;

    TileClassifier() = default;
    TileClassifier(int T, bool in, Rng& rng)
        : tile_size(T), instance_norm(in), c1(nn::Conv2d::square(1, 8, 3, 2, rng)), c2(nn::Conv2d::square(8, 16, 3, 2, rng)),
          c3(nn::Conv2d::square(16, 32, 3, 2, rng)), fc(32, 1, rng) {}

    nn::ParamList params() const {
        nn::ParamList p;
        c1.collect("c1", p);
        c2.collect("c2", p);
        c3.collect("c3", p);
        fc.collect("fc", p);
        return p;
    }

    Var block(const nn::Conv2d& c, const Var& x) const {
        auto h = c(x);
        return nn::leaky_relu(instance_norm ? nn::instance_norm(h) : h);
    }

    /// [N, 1, T, T] -> [N, 1, 1, 1] probabilities.
    Var forward(const Var& x) const {
        auto h = block(c3, block(c2, block(c1, x)));
        return nn::sigmoid(fc(nn::global_avg_pool(h)));
    }
};

inline Tensor batch_tiles(const std::vector<const Matrix*>& tiles, int T) {
    Tensor x(Shape{static_cast<int>(tiles.size()), 1, T, T});
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        if (tiles[i]->rows() != static_cast<std::size_t>(T) || tiles[i]->cols() != static_cast<std::size_t>(T))
            throw ShapeError("tile size differs from classifier tile size");
        std::copy(tiles[i]->flat().begin(), tiles[i]->flat().end(), x.ptr() + i * tiles[i]->size());
    }
    return x;
}

struct TrainLog {
    std::vector<double> epoch_loss;
};

using EpochHook = std::function<void(int epoch, const TileClassifier&)>;

/// Mini-batch Adam on BCE. Each epoch draws `samples_per_epoch` tiles with
/// replacement from a seeded permutation stream.
inline TileClassifier train_tile_classifier(const std::vector<TileSample>& tiles, const DetectConfig& cfg, std::uint64_t seed,
                                            TrainLog* log = nullptr, const EpochHook& hook = {}) {
    if (tiles.empty()) throw InvariantError("train_tile_classifier: no tiles");
    const bool has1 = std::any_of(tiles.begin(), tiles.end(), [](const TileSample& s) { return s.label == 1; });
    const bool has0 = std::any_of(tiles.begin(), tiles.end(), [](const TileSample& s) { return s.label == 0; });
    if (!has0 || !has1) throw InvariantError("train_tile_classifier: both classes required");

    Rng rng(seed);
    TileClassifier model(cfg.tile_size, cfg.instance_norm, rng);
    nn::Adam opt(model.params(), {cfg.lr, cfg.beta1, 0.999, 1e-8});
    std::vector<std::size_t> order(tiles.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();
    auto next_index = [&] {
        if (cursor == order.size()) {
            rng.shuffle(order.begin(), order.end());
            cursor = 0;
        }
        return order[cursor++];
    };

    for (int e = 0; e < cfg.epochs; ++e) {
        double sum = 0.0;
        int batches = 0;
        for (int done = 0; done < cfg.samples_per_epoch; done += cfg.batch) {
            const int b = std::min(cfg.batch, cfg.samples_per_epoch - done);
            std::vector<const Matrix*> xs;
            Tensor y(Shape{b, 1, 1, 1});
            for (int i = 0; i < b; ++i) {
                const auto& s = tiles[next_index()];
                xs.push_back(&s.data);
                y[static_cast<std::size_t>(i)] = s.label;
            }
            opt.zero_grad();
            auto loss = nn::bce(model.forward(Var::constant(batch_tiles(xs, cfg.tile_size))), y);
            backward(loss);
            opt.step();
            sum += loss.item();
            ++batches;
        }
        if (log) log->epoch_loss.push_back(sum / batches);
        if (hook) hook(e, model);
    }
    return model;
}

/// p(noisy) for each tile.
inline std::vector<double> classify_tiles(const TileClassifier& model, const std::vector<const Matrix*>& tiles, std::size_t chunk = 64) {
    std::vector<double> p;
    p.reserve(tiles.size());
    for (std::size_t i = 0; i < tiles.size(); i += chunk) {
        std::vector<const Matrix*> part(tiles.begin() + static_cast<std::ptrdiff_t>(i),
                                        tiles.begin() + static_cast<std::ptrdiff_t>(std::min(tiles.size(), i + chunk)));
        const auto out = model.forward(Var::constant(batch_tiles(part, model.tile_size)));
        p.insert(p.end(), out.value().data().begin(), out.value().data().end());
    }
    return p;
}

// Likelihood map ---------------------------------------------------------------

struct LikelihoodMap {
    std::size_t tile_size = 0;
    std::size_t stride = 0;
    std::vector<std::size_t> trace_anchors;
    std::vector<std::size_t> sample_anchors;
    Matrix p;  // rows: trace anchors, cols: sample anchors
};

inline std::vector<std::size_t> grid_anchors(std::size_t n, std::size_t T, std::size_t stride) {
    std::vector<std::size_t> a;
    for (std::size_t i = 0; i + T <= n; i += stride) a.push_back(i);
    return a;
}

/// Evaluates `prob` on every anchor of the stride grid.
template <class ProbFn>
LikelihoodMap likelihood_map_with(const ShotGather& g, std::size_t T, std::size_t stride, ProbFn&& prob) {
    if (T == 0 || stride == 0 || T > g.n_traces() || T > g.n_samples()) throw InvariantError("likelihood_map: bad tile geometry");
    LikelihoodMap m;
    m.tile_size = T;
    m.stride = stride;
    m.trace_anchors = grid_anchors(g.n_traces(), T, stride);
    m.sample_anchors = grid_anchors(g.n_samples(), T, stride);
    m.p = Matrix(m.trace_anchors.size(), m.sample_anchors.size());
    for (std::size_t r = 0; r < m.trace_anchors.size(); ++r) {
        std::vector<Matrix> tiles;
        tiles.reserve(m.sample_anchors.size());
        for (std::size_t t : m.sample_anchors) tiles.push_back(cut_tile(g, m.trace_anchors[r], t, T));
        std::vector<const Matrix*> ptrs;
        for (const auto& t : tiles) ptrs.push_back(&t);
        const std::vector<double> row = prob(ptrs);
        for (std::size_t c = 0; c < row.size(); ++c) m.p(r, c) = std::clamp(row[c], 0.0, 1.0);
    }
    return m;
}

inline LikelihoodMap likelihood_map(const ShotGather& g, const TileClassifier& model, std::size_t stride) {
    return likelihood_map_with(g, static_cast<std::size_t>(model.tile_size), stride,
                               [&](const std::vector<const Matrix*>& t) { return classify_tiles(model, t); });
}

/// Binary PGM, rows = trace anchors, p scaled to 0..255.
inline void write_pgm(const Matrix& img, std::ostream& os) {
    os << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
    for (double v : img.flat()) os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
}

inline void save_pgm(const Matrix& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_pgm(img, os);
}

/// Majority-vote truth label per grid tile (1 when most samples are noise).
inline Matrix tile_truth_labels(const LikelihoodMap& m, const GroundRollMask& truth) {
    Matrix lab(m.p.rows(), m.p.cols());
    for (std::size_t r = 0; r < m.trace_anchors.size(); ++r)
        for (std::size_t c = 0; c < m.sample_anchors.size(); ++c) {
            std::size_t noise = 0;
            for (std::size_t j = 0; j < m.tile_size; ++j)
                for (std::size_t t = 0; t < m.tile_size; ++t) noise += truth.mask(m.trace_anchors[r] + j, m.sample_anchors[c] + t) == 0;
            lab(r, c) = 2 * noise > m.tile_size * m.tile_size ? 1.0 : 0.0;
        }
    return lab;
}

// Logarithmic boundary -----------------------------------------------------------

struct LogBoundary {
    double a = 0.0;
    double c = 0.0;
    double x_ref = 1.0;
    double x_max = 0.0;
    double residual_rms = 0.0;
    std::size_t n_points = 0;

    double t_at(double x) const { return a * std::log(x / x_ref) + c; }
    friend bool operator==(const LogBoundary&, const LogBoundary&) = default;
};

inline void to_json(nlohmann::json& j, const LogBoundary& b) {
    j = {{"a", b.a}, {"c", b.c}, {"x_ref", b.x_ref}, {"x_max", b.x_max}, {"residual_rms", b.residual_rms}, {"n_points", b.n_points}};
}

inline void from_json(const nlohmann::json& j, LogBoundary& b) {
    j.at("a").get_to(b.a);
    j.at("c").get_to(b.c);
    j.at("x_ref").get_to(b.x_ref);
    j.at("x_max").get_to(b.x_max);
    b.residual_rms = j.value("residual_rms", 0.0);
    b.n_points = j.value("n_points", std::size_t{0});
    if (!std::isfinite(b.a) || !std::isfinite(b.c) || !(b.x_ref > 0.0)) throw FormatError("log boundary: invalid parameters");
}

struct BoundaryPoint {
    double x_m = 0.0;
    double t_s = 0.0;
};

/// Least squares of t on ln(x / x_ref).
inline LogBoundary fit_log_curve(const std::vector<BoundaryPoint>& pts, double x_ref, double x_max) {
    if (pts.size() < 3) throw InvariantError("fit_log_boundary: fewer than 3 boundary points");
    double su = 0.0, st = 0.0;
    for (const auto& p : pts) {
        su += std::log(p.x_m / x_ref);
        st += p.t_s;
    }
    const double n = static_cast<double>(pts.size());
    const double mu = su / n, mt = st / n;
    double suu = 0.0, sut = 0.0;
    for (const auto& p : pts) {
        const double u = std::log(p.x_m / x_ref) - mu;
        suu += u * u;
        sut += u * (p.t_s - mt);
    }
    if (!(suu > 1e-12 * n)) throw InvariantError("fit_log_boundary: degenerate fit (all points at one offset)");
    LogBoundary b;
    b.a = sut / suu;
    b.c = mt - b.a * mu;
    b.x_ref = x_ref;
    b.x_max = x_max;
    b.n_points = pts.size();
    double ss = 0.0;
    for (const auto& p : pts) {
        const double r = p.t_s - b.t_at(p.x_m);
        ss += r * r;
    }
    b.residual_rms = std::sqrt(ss / n);
    return b;
}

/// Per trace-anchor row: start of the longest run of p > thresh (later run
/// wins a tie), located at the tile centre.
inline std::vector<BoundaryPoint> boundary_points(const LikelihoodMap& m, const ShotGather& g, double p_thresh,
                                                  double* x_max, double min_run_s = 0.0) {
    std::vector<BoundaryPoint> pts;
    const auto min_len = static_cast<std::size_t>(std::ceil(min_run_s / (static_cast<double>(m.stride) * g.dt_s)));
    const std::size_t half = m.tile_size / 2;
    if (x_max) *x_max = 0.0;
    for (std::size_t r = 0; r < m.trace_anchors.size(); ++r) {
        std::size_t best_len = 0, best_start = 0, run = 0;
        for (std::size_t c = 0; c <= m.sample_anchors.size(); ++c) {
            if (c < m.sample_anchors.size() && m.p(r, c) > p_thresh) {
                ++run;
                continue;
            }
            if (run > 0 && run >= best_len) {
                best_len = run;
                best_start = c - run;
            }
            run = 0;
        }
        if (best_len == 0 || best_len < min_len) continue;
        const double x = g.offsets_m[m.trace_anchors[r] + half];
        pts.push_back({x, static_cast<double>(m.sample_anchors[best_start] + half) * g.dt_s});
        if (x_max) *x_max = std::max(*x_max, x);
    }
    return pts;
}

inline LogBoundary fit_log_boundary(const LikelihoodMap& m, const ShotGather& g, double p_thresh = 0.5,
                                    double min_run_s = 0.0) {
    double x_max = 0.0;
    const auto pts = boundary_points(m, g, p_thresh, &x_max, min_run_s);
    return fit_log_curve(pts, g.offsets_m.front(), x_max);
}

/// Traces up to x_max are noise from t_b(offset) on; later traces are clean.
inline GroundRollMask rough_mask_from_boundary(const LogBoundary& b, const ShotGather& g) {
    std::vector<std::optional<std::size_t>> idx(g.n_traces());
    const double len = g.trace_length_s();
    for (std::size_t j = 0; j < g.n_traces(); ++j) {
        const double x = g.offsets_m[j];
        if (x > b.x_max) continue;
        const double tb = std::clamp(b.t_at(x), 0.0, len);
        const auto k = static_cast<std::size_t>(std::ceil(tb / g.dt_s - 1e-9));
        if (k < g.n_samples()) idx[j] = k;
    }
    return mask_from_boundary(g, idx);
}

}  // namespace grl
