#pragma once

// Conditional-GAN ground-roll filtering: paired tile sampling inside the
// noise region, alternating D/G training, Hann-blended tiled inference and
// the raw-domain filter pipeline.

#include <grl/layers.hpp>
#include <grl/preproc.hpp>
#include <grl/rng.hpp>
#include <grl/seisdata.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <ostream>
#include <vector>

namespace grl {

struct FilterConfig {
    int tile_size = 64;
    int stride = 32;
    int pairs_per_gather = 400;
    int epochs = 4;
    int samples_per_epoch = 1000;
    int batch = 4;
    double lr = 0.0002;
    double beta1 = 0.5;
    double lambda_gan = 1.0;
    double lambda_l1 = 100.0;

    friend bool operator==(const FilterConfig&, const FilterConfig&) = default;
};

inline void to_json(nlohmann::json& j, const FilterConfig& c) {
    j = {{"tile_size", c.tile_size},   {"stride", c.stride}, {"pairs_per_gather", c.pairs_per_gather},
         {"epochs", c.epochs},         {"samples_per_epoch", c.samples_per_epoch},
         {"batch", c.batch},           {"lr", c.lr},         {"beta1", c.beta1},
         {"lambda_gan", c.lambda_gan}, {"lambda_l1", c.lambda_l1}};
}

inline void from_json(const nlohmann::json& j, FilterConfig& c) {
    c = FilterConfig{};
    auto opt = [&](const char* k, auto& v) {
        if (j.contains(k)) j.at(k).get_to(v);
    };
    opt("tile_size", c.tile_size);
    opt("stride", c.stride);
    opt("pairs_per_gather", c.pairs_per_gather);
    opt("epochs", c.epochs);
    opt("samples_per_epoch", c.samples_per_epoch);
    opt("batch", c.batch);
    opt("lr", c.lr);
    opt("beta1", c.beta1);
    opt("lambda_gan", c.lambda_gan);
    opt("lambda_l1", c.lambda_l1);
    if (c.tile_size < 16 || c.tile_size % 16 != 0) throw InvariantError("filter config: tile_size must be a multiple of 16");
    if (c.stride < 1 || c.pairs_per_gather < 1 || c.epochs < 1 || c.samples_per_epoch < 1 || c.batch < 1)
        throw InvariantError("filter config: sizes must be positive");
}

// Paired tiles ------------------------------------------------------------------

struct PairedTile {
    std::uint64_t gather_id = 0;
    std::size_t trace = 0, sample = 0;  // top-left anchor
    Matrix x, y;
};

/// Anchors drawn uniformly over all in-bounds tiles whose centre sample is
/// inside the noise region.
inline std::vector<PairedTile> sample_paired_tiles(const ShotGather& noisy, const ShotGather& clean, const GroundRollMask& mask,
                                                   int tile_size, int n, std::uint64_t seed) {
    if (!noisy.data.same_shape(clean.data) || !same_shape(noisy, mask)) throw InvariantError("sample_paired_tiles: shape mismatch");
    const auto T = static_cast<std::size_t>(tile_size);
    if (tile_size < 1 || T > noisy.n_traces() || T > noisy.n_samples()) throw InvariantError("sample_paired_tiles: bad tile size");
    std::vector<std::pair<std::size_t, std::size_t>> eligible;
    for (std::size_t j = 0; j + T <= noisy.n_traces(); ++j)
        for (std::size_t t = 0; t + T <= noisy.n_samples(); ++t)
            if (mask.mask(j + T / 2, t + T / 2) == 0) eligible.emplace_back(j, t);
    if (eligible.empty()) throw InvariantError("sample_paired_tiles: noise region too small for one tile");
    Rng rng(seed);
    std::vector<PairedTile> out;
    out.reserve(static_cast<std::size_t>(std::max(n, 0)));
    for (int i = 0; i < n; ++i) {
        const auto [j, t] = eligible[rng.below(eligible.size())];
        const TraceWindow w{j, j + T - 1, t, t + T - 1};
        out.push_back({noisy.gather_id, j, t, extract_window(noisy, w), extract_window(clean, w)});
    }
    return out;
}

// Networks -------------------------------------------------------------------------

/// conv_transpose2d with a 4x4 kernel, stride 2, padding 1: doubles H and W.
struct UpConv {
    Var weight, bias;

    UpConv() = default;
    UpConv(int cin, int cout, Rng& rng)
        : weight(nn::init_uniform(Shape{cin, cout, 4, 4}, cin * 4, rng)), bias(nn::init_uniform(Shape{1, cout, 1, 1}, cin * 4, rng)) {}

    Var operator()(const Var& x) const { return nn::conv_transpose2d(x, weight, bias, 2, 2, 1, 1); }

    void collect(const std::string& prefix, nn::ParamList& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

inline nn::Conv2d down_conv(int cin, int cout, Rng& rng) { return nn::Conv2d(cin, cout, 4, 4, 2, 2, 1, 1, rng); }

/// Four stride-2 encoder levels (16/32/64/128) mirrored by four transposed
/// convolutions with skips; the input joins the last layer at full resolution.
struct Generator {
    nn::Conv2d e1, e2, e3, e4, final_conv;
    UpConv u4, u3, u2, u1;

    Generator() = default;
    explicit Generator(Rng& rng)
        : e1(down_conv(1, 16, rng)), e2(down_conv(16, 32, rng)), e3(down_conv(32, 64, rng)), e4(down_conv(64, 128, rng)),
          final_conv(nn::Conv2d::square(16 + 1, 1, 3, 1, rng)), u4(128, 64, rng), u3(64 + 64, 32, rng), u2(32 + 32, 16, rng),
          u1(16 + 16, 16, rng) {}

    void collect(const std::string& p, nn::ParamList& out) const {
        e1.collect(p + "e1", out);
        e2.collect(p + "e2", out);
        e3.collect(p + "e3", out);
        e4.collect(p + "e4", out);
        u4.collect(p + "u4", out);
        u3.collect(p + "u3", out);
        u2.collect(p + "u2", out);
        u1.collect(p + "u1", out);
        final_conv.collect(p + "final", out);
    }

    /// [N, 1, T, T] in [0, 1] -> [N, 1, T, T] in [0, 1].
    Var operator()(const Var& x) const {
        using namespace nn;
        const auto h1 = leaky_relu(e1(x));
        const auto h2 = leaky_relu(instance_norm(e2(h1)));
        const auto h3 = leaky_relu(instance_norm(e3(h2)));
        const auto h4 = relu(e4(h3));
        const auto d4 = relu(instance_norm(u4(h4)));
        const auto d3 = relu(instance_norm(u3(concat_channels(d4, h3))));
        const auto d2 = relu(instance_norm(u2(concat_channels(d3, h2))));
        const auto d1 = relu(u1(concat_channels(d2, h1)));
        return affine(tanh(final_conv(concat_channels(d1, x))), 0.5, 0.5);
    }
};

/// Three stride-2 blocks and a 1x1 convolution to a grid of patch
/// probabilities, conditioned on the noisy tile.
struct PatchDiscriminator {
    nn::Conv2d c1, c2, c3, head;

    PatchDiscriminator() = default;
    explicit PatchDiscriminator(Rng& rng)
        : c1(down_conv(2, 16, rng)), c2(down_conv(16, 32, rng)), c3(down_conv(32, 64, rng)), head(64, 1, 1, 1, 1, 1, 0, 0, rng) {}

    void collect(const std::string& p, nn::ParamList& out) const {
        c1.collect(p + "c1", out);
        c2.collect(p + "c2", out);
        c3.collect(p + "c3", out);
        head.collect(p + "head", out);
    }

    Var operator()(const Var& x, const Var& y) const {
        using namespace nn;
        const auto h1 = leaky_relu(c1(concat_channels(x, y)));
        const auto h2 = leaky_relu(instance_norm(c2(h1)));
        const auto h3 = leaky_relu(instance_norm(c3(h2)));
        return sigmoid(head(h3));
    }
};

struct CganModel {
    int tile_size = 64;
    Generator G;
    PatchDiscriminator D;

    CganModel() = default;
    CganModel(int T, Rng& rng) : tile_size(T), G(rng), D(rng) {}

    nn::ParamList g_params() const {
        nn::ParamList p;
        G.collect("G.", p);
        return p;
    }
    nn::ParamList d_params() const {
        nn::ParamList p;
        D.collect("D.", p);
        return p;
    }
    nn::ParamList params() const {
        auto p = g_params();
        auto d = d_params();
        p.insert(p.end(), d.begin(), d.end());
        return p;
    }
};

// Training -------------------------------------------------------------------------

struct CganEpoch {
    int epoch = 0;
    double d_loss = 0.0;
    double g_gan = 0.0;
    double g_l1 = 0.0;
    double d_real = 0.0;  // mean D output on real pairs
};

struct CganTrainLog {
    std::vector<CganEpoch> epochs;
    std::vector<double> step_d_real;  // per step, mean D output on real pairs
    double initial_l1 = 0.0;  // L1(G(x), y) over the probe pairs before the first step
    double final_l1 = 0.0;

    /// Fraction of steps with mean D(real) strictly inside (lo, hi).
    double non_collapse_fraction(double lo = 0.05, double hi = 0.95) const {
        if (step_d_real.empty()) return 0.0;
        const auto k = std::count_if(step_d_real.begin(), step_d_real.end(), [&](double p) { return p > lo && p < hi; });
        return static_cast<double>(k) / static_cast<double>(step_d_real.size());
    }
};

inline void write_telemetry_csv(const CganTrainLog& log, std::ostream& os) {
    os << "epoch,d_loss,g_gan,g_l1\n";
    os.precision(17);
    for (const auto& e : log.epochs) os << e.epoch << ',' << e.d_loss << ',' << e.g_gan << ',' << e.g_l1 << '\n';
}

inline Tensor stack_tiles(const std::vector<const Matrix*>& tiles, int T) {
    Tensor t(Shape{static_cast<int>(tiles.size()), 1, T, T});
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        if (tiles[i]->rows() != static_cast<std::size_t>(T) || tiles[i]->cols() != static_cast<std::size_t>(T))
            throw ShapeError("tile size differs from model tile size");
        std::copy(tiles[i]->flat().begin(), tiles[i]->flat().end(), t.ptr() + i * tiles[i]->size());
    }
    return t;
}

/// Mean L1(G(x), y) over all pairs.
inline double generator_l1(const CganModel& m, const std::vector<PairedTile>& pairs, std::size_t chunk = 16) {
    double sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); i += chunk) {
        std::vector<const Matrix*> xs, ys;
        for (std::size_t k = i; k < std::min(pairs.size(), i + chunk); ++k) {
            xs.push_back(&pairs[k].x);
            ys.push_back(&pairs[k].y);
        }
        const auto out = m.G(Var::constant(stack_tiles(xs, m.tile_size)));
        const auto y = stack_tiles(ys, m.tile_size);
        for (std::size_t k = 0; k < y.size(); ++k) sum += std::abs(out.value()[k] - y[k]);
    }
    return sum / static_cast<double>(pairs.size() * static_cast<std::size_t>(m.tile_size * m.tile_size));
}

/// Per batch: one D step on (x, y) vs (x, G(x)), then one G step against the
/// just-updated D.
inline CganModel train_cgan(const std::vector<PairedTile>& pairs, const FilterConfig& cfg, std::uint64_t seed,
                            CganTrainLog* log = nullptr) {
    if (pairs.empty()) throw InvariantError("train_cgan: no training pairs");
    const int T = cfg.tile_size;
    if (T % 16 != 0) throw ShapeError("train_cgan: tile size must be a multiple of 16");
    for (const auto& p : pairs)
        if (p.x.rows() != static_cast<std::size_t>(T) || p.x.cols() != static_cast<std::size_t>(T) || !p.x.same_shape(p.y))
            throw ShapeError("train_cgan: pair tile size differs from configured tile size");

    Rng rng(seed);
    CganModel m(T, rng);
    const auto gp = m.g_params(), dp = m.d_params();
    nn::Adam g_opt(gp, {cfg.lr, cfg.beta1, 0.999, 1e-8});
    nn::Adam d_opt(dp, {cfg.lr, cfg.beta1, 0.999, 1e-8});
    const nn::CganWeights w{cfg.lambda_gan, cfg.lambda_l1};
    // L1 probe: a fixed prefix of the training pairs keeps the bookkeeping cheap.
    const std::vector<PairedTile> probe(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(pairs.size(), 256)));
    if (log) log->initial_l1 = generator_l1(m, probe);

    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();
    auto next_index = [&] {
        if (cursor == order.size()) {
            rng.shuffle(order.begin(), order.end());
            cursor = 0;
        }
        return order[cursor++];
    };

    auto check = [](double v, const char* what) {
        if (!std::isfinite(v)) throw nn::NumericError(std::string("train_cgan: non-finite ") + what);
    };

    for (int e = 0; e < cfg.epochs; ++e) {
        CganEpoch ep;
        ep.epoch = e;
        int steps = 0;
        for (int done = 0; done < cfg.samples_per_epoch; done += cfg.batch) {
            const int b = std::min(cfg.batch, cfg.samples_per_epoch - done);
            std::vector<const Matrix*> xs, ys;
            for (int i = 0; i < b; ++i) {
                const auto& p = pairs[next_index()];
                xs.push_back(&p.x);
                ys.push_back(&p.y);
            }
            const auto x = Var::constant(stack_tiles(xs, T));
            const auto y = Var::constant(stack_tiles(ys, T));

            const auto fake_d = Var::constant(m.G(x).value());
            d_opt.zero_grad();
            const auto d_real = m.D(x, y);
            const auto d_loss = nn::cgan_discriminator_loss(d_real, m.D(x, fake_d));
            backward(d_loss);
            d_opt.step();

            g_opt.zero_grad();
            const auto fake = m.G(x);
            const auto d_on_fake = m.D(x, fake);
            const auto gan = nn::bce(d_on_fake, 1.0);
            const auto l1 = nn::l1(fake, y);
            backward(nn::cgan_generator_loss(d_on_fake, fake, y, w));
            g_opt.step();

            const double dl = d_loss.item(), gg = gan.item(), gl = l1.item();
            check(dl, "discriminator loss");
            check(gg, "generator adversarial loss");
            check(gl, "generator L1 loss");
            double pr = 0.0;
            for (double v : d_real.value().data()) pr += v;
            pr /= static_cast<double>(d_real.value().size());
            ep.d_loss += dl;
            ep.g_gan += gg;
            ep.g_l1 += gl;
            ep.d_real += pr;
            if (log) log->step_d_real.push_back(pr);
            ++steps;
        }
        ep.d_loss /= steps;
        ep.g_gan /= steps;
        ep.g_l1 /= steps;
        ep.d_real /= steps;
        if (log) log->epochs.push_back(ep);
    }
    if (log) log->final_l1 = generator_l1(m, probe);
    return m;
}

inline void save_model(const CganModel& m, const std::string& path) { nn::save_params(m.params(), path); }

inline CganModel load_model(const std::string& path, int tile_size) {
    Rng rng(0);
    CganModel m(tile_size, rng);
    auto p = m.params();
    nn::load_params(p, path);
    return m;
}

// Inference --------------------------------------------------------------------------

/// Strictly positive Hann taper, so edge samples keep nonzero weight.
inline std::vector<double> hann_weights(std::size_t T) {
    std::vector<double> w(T);
    for (std::size_t i = 0; i < T; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(T));
    return w;
}

/// Anchors at multiples of `stride` plus a final anchor flush with the edge.
inline std::vector<std::size_t> covering_anchors(std::size_t n, std::size_t T, std::size_t stride) {
    std::vector<std::size_t> a;
    if (T > n) return a;
    for (std::size_t i = 0; i + T <= n; i += stride) a.push_back(i);
    if (a.back() + T < n) a.push_back(n - T);
    return a;
}

/// Maps a batch of [N, 1, T, T] tiles to outputs of the same shape.
using TileFn = std::function<Tensor(const Tensor&)>;

/// Runs `fn` over overlapping tiles that touch the noise region, blends with
/// separable Hann weights and keeps the input wherever mask = 1.
inline ShotGather apply_tiles(const ShotGather& g, const GroundRollMask& mask, int tile_size, int stride, const TileFn& fn) {
    if (!same_shape(g, mask)) throw InvariantError("apply_generator: shape mismatch");
    if (mask.noise_count() == 0) return g;
    const auto T = static_cast<std::size_t>(tile_size);
    if (tile_size < 1 || stride < 1 || T > g.n_traces() || T > g.n_samples()) throw InvariantError("apply_generator: bad tile geometry");
    const auto ta = covering_anchors(g.n_traces(), T, static_cast<std::size_t>(stride));
    const auto sa = covering_anchors(g.n_samples(), T, static_cast<std::size_t>(stride));
    const auto w = hann_weights(T);

    // Prefix sums of noise counts so tile selection is O(1) per tile.
    Grid<std::size_t> cum(g.n_traces() + 1, g.n_samples() + 1, 0);
    for (std::size_t j = 0; j < g.n_traces(); ++j)
        for (std::size_t t = 0; t < g.n_samples(); ++t)
            cum(j + 1, t + 1) = cum(j, t + 1) + cum(j + 1, t) - cum(j, t) + (mask.mask(j, t) == 0 ? 1 : 0);
    auto touches_noise = [&](std::size_t j, std::size_t t) {
        return cum(j + T, t + T) - cum(j, t + T) - cum(j + T, t) + cum(j, t) > 0;
    };

    Matrix acc(g.n_traces(), g.n_samples(), 0.0), wsum(g.n_traces(), g.n_samples(), 0.0);
    std::vector<std::pair<std::size_t, std::size_t>> anchors;
    for (std::size_t j : ta)
        for (std::size_t t : sa)
            if (touches_noise(j, t)) anchors.emplace_back(j, t);

    constexpr std::size_t kChunk = 16;
    for (std::size_t i = 0; i < anchors.size(); i += kChunk) {
        const std::size_t n = std::min(kChunk, anchors.size() - i);
        std::vector<Matrix> tiles;
        std::vector<const Matrix*> ptrs;
        tiles.reserve(n);
        for (std::size_t k = 0; k < n; ++k) {
            const auto [j, t] = anchors[i + k];
            tiles.push_back(extract_window(g, {j, j + T - 1, t, t + T - 1}));
        }
        for (const auto& t : tiles) ptrs.push_back(&t);
        const Tensor out = fn(stack_tiles(ptrs, tile_size));
        if (out.size() != n * T * T) throw ShapeError("apply_generator: tile function changed the tile shape");
        for (std::size_t k = 0; k < n; ++k) {
            const auto [j0, t0] = anchors[i + k];
            const double* o = out.ptr() + k * T * T;
            for (std::size_t a = 0; a < T; ++a)
                for (std::size_t b = 0; b < T; ++b) {
                    const double wt = w[a] * w[b];
                    acc(j0 + a, t0 + b) += wt * o[a * T + b];
                    wsum(j0 + a, t0 + b) += wt;
                }
        }
    }

    ShotGather patch = g;
    for (std::size_t i = 0; i < patch.data.size(); ++i)
        if (wsum.flat()[i] > 0.0) patch.data.flat()[i] = acc.flat()[i] / wsum.flat()[i];
    return blend_region(g, patch, mask);
}

inline ShotGather apply_generator(const ShotGather& equalized, const GroundRollMask& mask, const CganModel& m, int stride) {
    return apply_tiles(equalized, mask, m.tile_size, stride, [&](const Tensor& x) { return m.G(Var::constant(x)).value(); });
}

/// Raw gather in, raw gather out: equalize, filter the noise region, match the
/// noise region's amplitude distribution to the signal region, return to raw
/// amplitudes and paste over the noise region only.
inline ShotGather filter_pipeline(const ShotGather& raw, const GroundRollMask& mask, const CganModel& m, const TransferMap& map,
                                  int stride) {
    if (!same_shape(raw, mask)) throw InvariantError("filter_pipeline: mask does not match gather");
    if (map.empty()) throw std::invalid_argument("filter_pipeline: transfer map missing");
    if (mask.noise_count() == 0) return raw;
    const auto eq = apply_equalization(raw, map);
    const auto filtered = apply_generator(eq, mask, m, stride);
    const auto matched = masked_equalize(filtered, mask);
    return blend_region(raw, invert_equalization(matched, map), mask);
}

}  // namespace grl
