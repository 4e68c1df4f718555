#pragma once

// Shot-gather data model and the on-disk gather/mask formats.
//
// Gather file (little-endian):
//   "SGR1" | n_traces u32 | n_samples u32 | dt_us u32 | gather_id u64
//   | offsets_m f64 x n_traces | data f32 x (n_traces * n_samples), trace by trace
// Mask file: "SGM1", same header, then u8 x (n_traces * n_samples).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace grl {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvariantError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix; rows are traces, columns are time samples.
template <class T>
class Grid {
public:
    Grid() = default;
    Grid(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }

    T& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

    std::span<T> flat() noexcept { return values_; }
    std::span<const T> flat() const noexcept { return values_; }

    bool same_shape(const Grid& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> values_;
};

using Matrix = Grid<double>;

struct ShotGather {
    std::uint64_t gather_id = 0;
    double dt_s = 0.002;
    std::vector<double> offsets_m;
    Matrix data;  // n_traces x n_samples

    std::size_t n_traces() const noexcept { return data.rows(); }
    std::size_t n_samples() const noexcept { return data.cols(); }
    double trace_length_s() const noexcept { return static_cast<double>(n_samples()) * dt_s; }

    friend bool operator==(const ShotGather&, const ShotGather&) = default;
};

/// Throws InvariantError when offsets are not strictly ascending and positive,
/// the data shape disagrees with the offsets, or any amplitude is non-finite.
inline void validate(const ShotGather& g) {
    if (g.offsets_m.size() != g.n_traces())
        throw InvariantError("gather: offsets count differs from trace count");
    if (g.n_traces() == 0 || g.n_samples() == 0)
        throw InvariantError("gather: empty");
    if (!(g.dt_s > 0.0) || !std::isfinite(g.dt_s))
        throw InvariantError("gather: sample interval must be positive");
    for (std::size_t j = 0; j < g.offsets_m.size(); ++j) {
        if (!(g.offsets_m[j] > 0.0) || !std::isfinite(g.offsets_m[j]))
            throw InvariantError("gather: offsets must be positive and finite");
        if (j > 0 && !(g.offsets_m[j] > g.offsets_m[j - 1]))
            throw InvariantError("gather: offsets must be strictly increasing");
    }
    for (double v : g.data.flat())
        if (!std::isfinite(v)) throw InvariantError("gather: non-finite amplitude");
}

/// Binary ground-roll indicator: 0 = affected sample, 1 = clean sample.
struct GroundRollMask {
    std::uint64_t gather_id = 0;
    double dt_s = 0.002;
    std::vector<double> offsets_m;
    Grid<std::uint8_t> mask;
    /// Per-trace first noise sample for affected traces; nullopt for clean traces.
    std::vector<std::optional<std::size_t>> boundary;

    std::size_t n_traces() const noexcept { return mask.rows(); }
    std::size_t n_samples() const noexcept { return mask.cols(); }

    std::size_t noise_count() const {
        return static_cast<std::size_t>(std::count(mask.flat().begin(), mask.flat().end(), std::uint8_t{0}));
    }

    friend bool operator==(const GroundRollMask&, const GroundRollMask&) = default;
};

/// All-clean mask shaped like `g`.
inline GroundRollMask clean_mask_like(const ShotGather& g) {
    GroundRollMask m;
    m.gather_id = g.gather_id;
    m.dt_s = g.dt_s;
    m.offsets_m = g.offsets_m;
    m.mask = Grid<std::uint8_t>(g.n_traces(), g.n_samples(), 1);
    m.boundary.assign(g.n_traces(), std::nullopt);
    return m;
}

/// Mask from per-trace boundaries: trace j is noise from boundary[j] to the end.
inline GroundRollMask mask_from_boundary(const ShotGather& g, const std::vector<std::optional<std::size_t>>& boundary) {
    if (boundary.size() != g.n_traces()) throw InvariantError("mask: boundary count differs from trace count");
    GroundRollMask m = clean_mask_like(g);
    for (std::size_t j = 0; j < boundary.size(); ++j) {
        if (!boundary[j] || *boundary[j] >= g.n_samples()) continue;
        m.boundary[j] = boundary[j];
        auto row = m.mask.row(j);
        std::fill(row.begin() + static_cast<std::ptrdiff_t>(*boundary[j]), row.end(), std::uint8_t{0});
    }
    return m;
}

/// Recomputes `boundary` from the mask rows; a row gets a boundary iff it is
/// a clean prefix followed by a noise suffix.
inline void derive_boundary(GroundRollMask& m) {
    m.boundary.assign(m.n_traces(), std::nullopt);
    for (std::size_t j = 0; j < m.n_traces(); ++j) {
        auto row = m.mask.row(j);
        auto first = std::find(row.begin(), row.end(), std::uint8_t{0});
        if (first == row.end()) continue;
        if (std::all_of(first, row.end(), [](std::uint8_t v) { return v == 0; }))
            m.boundary[j] = static_cast<std::size_t>(first - row.begin());
    }
}

inline void validate(const GroundRollMask& m) {
    if (m.boundary.size() != m.n_traces()) throw InvariantError("mask: boundary count differs from trace count");
    for (std::uint8_t v : m.mask.flat())
        if (v > 1) throw InvariantError("mask: values must be 0 or 1");
    for (std::size_t j = 0; j < m.n_traces(); ++j) {
        if (!m.boundary[j]) continue;
        const std::size_t b = *m.boundary[j];
        for (std::size_t t = 0; t < m.n_samples(); ++t)
            if ((m.mask(j, t) == 0) != (t >= b)) throw InvariantError("mask: boundary disagrees with mask row");
    }
}

inline bool same_shape(const ShotGather& g, const GroundRollMask& m) {
    return g.n_traces() == m.n_traces() && g.n_samples() == m.n_samples();
}

struct TraceWindow {
    std::size_t trace_lo = 0, trace_hi = 0;    // inclusive
    std::size_t sample_lo = 0, sample_hi = 0;  // inclusive

    std::size_t n_traces() const noexcept { return trace_hi - trace_lo + 1; }
    std::size_t n_samples() const noexcept { return sample_hi - sample_lo + 1; }
    std::size_t area() const noexcept { return n_traces() * n_samples(); }
    friend bool operator==(const TraceWindow&, const TraceWindow&) = default;
};

inline bool fits(const TraceWindow& w, std::size_t n_traces, std::size_t n_samples) {
    return w.trace_lo <= w.trace_hi && w.trace_hi < n_traces && w.sample_lo <= w.sample_hi && w.sample_hi < n_samples;
}

/// Copies the window's sub-matrix.
inline Matrix extract_window(const ShotGather& g, const TraceWindow& w) {
    if (!fits(w, g.n_traces(), g.n_samples())) throw std::out_of_range("extract_window: window outside gather");
    Matrix out(w.n_traces(), w.n_samples());
    for (std::size_t j = 0; j < w.n_traces(); ++j) {
        auto src = g.data.row(w.trace_lo + j).subspan(w.sample_lo, w.n_samples());
        std::copy(src.begin(), src.end(), out.row(j).begin());
    }
    return out;
}

/// patch where mask == 0, base where mask == 1.
inline ShotGather blend_region(const ShotGather& base, const ShotGather& patch, const GroundRollMask& mask) {
    if (!base.data.same_shape(patch.data) || !same_shape(base, mask))
        throw InvariantError("blend_region: shape mismatch");
    ShotGather out = base;
    auto o = out.data.flat();
    auto p = patch.data.flat();
    auto m = mask.mask.flat();
    for (std::size_t i = 0; i < o.size(); ++i)
        if (m[i] == 0) o[i] = p[i];
    return out;
}

namespace io {

static_assert(std::endian::native == std::endian::little, "gather I/O assumes a little-endian host");

inline constexpr char kGatherMagic[4] = {'S', 'G', 'R', '1'};
inline constexpr char kMaskMagic[4] = {'S', 'G', 'M', '1'};

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated stream");
    return v;
}

struct Header {
    std::uint32_t n_traces = 0, n_samples = 0, dt_us = 0;
    std::uint64_t gather_id = 0;
    std::vector<double> offsets_m;
};

inline std::uint32_t dt_to_us(double dt_s) {
    const double us = std::round(dt_s * 1e6);
    if (us < 1.0 || us > 4294967295.0) throw InvariantError("sample interval not representable in microseconds");
    return static_cast<std::uint32_t>(us);
}

inline void write_header(std::ostream& os, const char (&magic)[4], std::size_t nt, std::size_t ns, double dt_s,
                         std::uint64_t id, const std::vector<double>& offsets) {
    os.write(magic, 4);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(nt));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ns));
    put<std::uint32_t>(os, dt_to_us(dt_s));
    put<std::uint64_t>(os, id);
    for (double x : offsets) put<double>(os, x);
}

inline Header read_header(std::istream& is, const char (&magic)[4]) {
    char m[4];
    if (!is.read(m, 4)) throw FormatError("truncated stream");
    if (std::memcmp(m, magic, 4) != 0) throw FormatError("bad magic");
    Header h;
    h.n_traces = get<std::uint32_t>(is);
    h.n_samples = get<std::uint32_t>(is);
    h.dt_us = get<std::uint32_t>(is);
    h.gather_id = get<std::uint64_t>(is);
    if (h.n_traces == 0 || h.n_samples == 0 || h.dt_us == 0) throw FormatError("empty dimensions in header");
    h.offsets_m.resize(h.n_traces);
    for (auto& x : h.offsets_m) x = get<double>(is);
    for (std::size_t j = 0; j < h.offsets_m.size(); ++j) {
        if (!(h.offsets_m[j] > 0.0) || (j > 0 && !(h.offsets_m[j] > h.offsets_m[j - 1])))
            throw FormatError("offsets not strictly ascending");
    }
    return h;
}

}  // namespace io

/// Amplitudes are narrowed to f32 on disk.
inline void write_gather(const ShotGather& g, std::ostream& os) {
    validate(g);
    for (double v : g.data.flat())
        if (std::abs(v) > static_cast<double>(std::numeric_limits<float>::max()))
            throw InvariantError("gather: amplitude overflows f32");
    io::write_header(os, io::kGatherMagic, g.n_traces(), g.n_samples(), g.dt_s, g.gather_id, g.offsets_m);
    std::vector<float> buf(g.n_samples());
    for (std::size_t j = 0; j < g.n_traces(); ++j) {
        auto r = g.data.row(j);
        std::transform(r.begin(), r.end(), buf.begin(), [](double v) { return static_cast<float>(v); });
        os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write_gather: I/O failure");
}

inline ShotGather read_gather(std::istream& is) {
    const io::Header h = io::read_header(is, io::kGatherMagic);
    ShotGather g;
    g.gather_id = h.gather_id;
    g.dt_s = h.dt_us * 1e-6;
    g.offsets_m = h.offsets_m;
    g.data = Matrix(h.n_traces, h.n_samples);
    std::vector<float> buf(h.n_samples);
    for (std::size_t j = 0; j < h.n_traces; ++j) {
        if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
            throw FormatError("truncated stream");
        std::copy(buf.begin(), buf.end(), g.data.row(j).begin());
    }
    for (double v : g.data.flat())
        if (!std::isfinite(v)) throw FormatError("non-finite amplitude in stream");
    return g;
}

inline void write_mask(const GroundRollMask& m, std::ostream& os) {
    validate(m);
    io::write_header(os, io::kMaskMagic, m.n_traces(), m.n_samples(), m.dt_s, m.gather_id, m.offsets_m);
    auto flat = m.mask.flat();
    os.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size()));
    if (!os) throw std::runtime_error("write_mask: I/O failure");
}

/// The boundary vector is re-derived from the mask rows.
inline GroundRollMask read_mask(std::istream& is) {
    const io::Header h = io::read_header(is, io::kMaskMagic);
    GroundRollMask m;
    m.gather_id = h.gather_id;
    m.dt_s = h.dt_us * 1e-6;
    m.offsets_m = h.offsets_m;
    m.mask = Grid<std::uint8_t>(h.n_traces, h.n_samples);
    auto flat = m.mask.flat();
    if (!is.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(flat.size())))
        throw FormatError("truncated stream");
    for (auto v : flat)
        if (v > 1) throw FormatError("mask value other than 0/1");
    derive_boundary(m);
    return m;
}

inline void save_gather(const ShotGather& g, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_gather(g, os);
}

inline ShotGather load_gather(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return read_gather(is);
}

inline void save_mask(const GroundRollMask& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_mask(m, os);
}

inline GroundRollMask load_mask(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return read_mask(is);
}

}  // namespace grl
