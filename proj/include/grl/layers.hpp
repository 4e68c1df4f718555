#pragma once

// Parameter containers, layers, Adam, gradient checking and the NNW1
// parameter blob format.

#include <grl/ops.hpp>
#include <grl/rng.hpp>

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace grl::nn {

struct NamedParam {
    std::string name;
    Var var;
};

using ParamList = std::vector<NamedParam>;

/// Uniform in [-k, k] with k = 1/sqrt(fan_in).
inline Var init_uniform(Shape s, int fan_in, Rng& rng) {
    Tensor t(s);
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data()) v = rng.uniform(-k, k);
    return Var::parameter(std::move(t));
}

struct Conv2d {
    Var weight, bias;
    int stride_h = 1, stride_w = 1, pad_h = 0, pad_w = 0;

    Conv2d() = default;
    Conv2d(int cin, int cout, int kh, int kw, int sh, int sw, int ph, int pw, Rng& rng)
        : stride_h(sh), stride_w(sw), pad_h(ph), pad_w(pw) {
        const int fan_in = cin * kh * kw;
        weight = init_uniform(Shape{cout, cin, kh, kw}, fan_in, rng);
        bias = init_uniform(Shape{1, cout, 1, 1}, fan_in, rng);
    }

    /// Square kernel with "same"-style padding k/2.
    static Conv2d square(int cin, int cout, int k, int stride, Rng& rng) {
        return Conv2d(cin, cout, k, k, stride, stride, k / 2, k / 2, rng);
    }
    /// Kernel along the width axis only, for [N, C, 1, L] signals.
    static Conv2d along_width(int cin, int cout, int k, int stride, Rng& rng) {
        return Conv2d(cin, cout, 1, k, 1, stride, 0, k / 2, rng);
    }

    Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride_h, stride_w, pad_h, pad_w); }

    void collect(const std::string& prefix, ParamList& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

struct Linear {
    Var weight, bias;

    Linear() = default;
    Linear(int in, int out, Rng& rng)
        : weight(init_uniform(Shape{out, in, 1, 1}, in, rng)), bias(init_uniform(Shape{1, out, 1, 1}, in, rng)) {}

    Var operator()(const Var& x) const { return linear(x, weight, bias); }

    void collect(const std::string& prefix, ParamList& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

inline void zero_grads(const ParamList& params) {
    for (const auto& p : params) p.var.zero_grad();
}

inline std::size_t parameter_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.var.value().size();
    return n;
}

// Adam -------------------------------------------------------------------

struct AdamConfig {
    double lr = 0.0002;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<Tensor> m, v;
    std::int64_t step = 0;
};

/// In-place Adam update with bias correction.
inline void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& st) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
    if (st.m.empty()) {
        for (const auto& p : params) {
            st.m.emplace_back(p.shape());
            st.v.emplace_back(p.shape());
        }
    }
    if (st.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!(params[i].shape() == grads[i].shape()) || !(st.m[i].shape() == params[i].shape()))
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));

    const auto& c = st.config;
    ++st.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].data();
        auto g = grads[i].data();
        auto m = st.m[i].data();
        auto v = st.v[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
            const double mh = m[k] / bc1;
            const double vh = v[k] / bc2;
            p[k] -= c.lr * mh / (std::sqrt(vh) + c.epsilon);
        }
    }
}

/// Adam over graph parameters, reading their accumulated gradients.
class Adam {
public:
    explicit Adam(ParamList params, AdamConfig cfg = {}) : params_(std::move(params)) { state_.config = cfg; }

    void step() {
        std::vector<Tensor> values, grads;
        values.reserve(params_.size());
        grads.reserve(params_.size());
        for (auto& p : params_) {
            values.push_back(std::move(p.var.mutable_value()));
            grads.push_back(p.var.grad());
        }
        adam_step(values, grads, state_);
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i].var.mutable_value() = std::move(values[i]);
    }

    void zero_grad() { zero_grads(params_); }
    const AdamState& state() const noexcept { return state_; }
    const ParamList& params() const noexcept { return params_; }

private:
    ParamList params_;
    AdamState state_;
};

// Gradient check -------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    bool passed = false;
};

/// Compares analytic gradients of the scalar built by `loss_fn` against
/// central differences for every entry of every parameter. Relative error
/// is |a - n| / max(|a|, |n|, abs_floor).
inline GradCheckReport grad_check(const std::function<Var()>& loss_fn, const ParamList& params, double h = 1e-5,
                                  double tol = 1e-4, double abs_floor = 1e-6) {
    zero_grads(params);
    Var loss = loss_fn();
    backward(loss);
    std::vector<Tensor> analytic;
    for (const auto& p : params) analytic.push_back(p.var.grad());

    GradCheckReport r;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Var v = params[pi].var;
        auto vals = v.mutable_value().data();
        for (std::size_t k = 0; k < vals.size(); ++k) {
            const double orig = vals[k];
            vals[k] = orig + h;
            const double fp = loss_fn().item();
            vals[k] = orig - h;
            const double fm = loss_fn().item();
            vals[k] = orig;
            const double num = (fp - fm) / (2.0 * h);
            const double ana = analytic[pi][k];
            const double abs_err = std::abs(ana - num);
            const double rel = abs_err / std::max({std::abs(ana), std::abs(num), abs_floor});
            ++r.checked;
            r.max_abs_error = std::max(r.max_abs_error, abs_err);
            if (rel > r.max_rel_error) {
                r.max_rel_error = rel;
                r.worst_param = params[pi].name;
                r.worst_index = k;
            }
        }
    }
    r.passed = r.max_rel_error < tol;
    return r;
}

// NNW1 blob --------------------------------------------------------------------
//
// "NNW1" | version u32 | count u32 | per parameter: name_len u32, name bytes,
// n c h w as u32, f64 values. Little-endian.

inline constexpr std::uint32_t kBlobVersion = 1;

inline void write_params(const ParamList& params, std::ostream& os) {
    auto put32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    os.write("NNW1", 4);
    put32(kBlobVersion);
    put32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put32(static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        const Shape s = p.var.shape();
        for (int d : {s.n, s.c, s.h, s.w}) put32(static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(p.var.value().ptr()),
                 static_cast<std::streamsize>(p.var.value().size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("write_params: I/O failure");
}

/// Loads values into an existing parameter list; names and shapes must match.
inline void read_params(ParamList& params, std::istream& is) {
    auto get32 = [&]() {
        std::uint32_t v = 0;
        if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("read_params: truncated blob");
        return v;
    };
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "NNW1", 4) != 0) throw std::runtime_error("read_params: bad magic");
    if (get32() != kBlobVersion) throw std::runtime_error("read_params: unsupported version");
    if (get32() != params.size()) throw std::runtime_error("read_params: parameter count mismatch");
    for (auto& p : params) {
        std::string name(get32(), '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(name.size())))
            throw std::runtime_error("read_params: truncated blob");
        if (name != p.name) throw std::runtime_error("read_params: expected " + p.name + ", found " + name);
        Shape s;
        s.n = static_cast<int>(get32());
        s.c = static_cast<int>(get32());
        s.h = static_cast<int>(get32());
        s.w = static_cast<int>(get32());
        if (!(s == p.var.shape())) throw std::runtime_error("read_params: shape mismatch for " + name);
        Tensor& t = p.var.mutable_value();
        if (!is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double))))
            throw std::runtime_error("read_params: truncated blob");
    }
}

inline void save_params(const ParamList& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_params(params, os);
}

inline void load_params(ParamList& params, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    read_params(params, is);
}

}  // namespace grl::nn

namespace grl {
using nn::backward;
using nn::Shape;
using nn::ShapeError;
using nn::Tensor;
using nn::Var;
}  // namespace grl
