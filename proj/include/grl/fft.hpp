#pragma once

// Thin wrappers over FFTW's real-input transforms.

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

namespace grl::fft {

namespace detail {
// FFTW's planner is not reentrant.
inline std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace detail

/// Unnormalized forward transform; returns n/2 + 1 bins.
inline std::vector<std::complex<double>> rfft(std::span<const double> x) {
    const int n = static_cast<int>(x.size());
    if (n == 0) throw std::invalid_argument("rfft: empty input");
    std::vector<double> in(x.begin(), x.end());
    std::vector<std::complex<double>> out(static_cast<std::size_t>(n / 2 + 1));
    fftw_plan p;
    {
        std::lock_guard lock(detail::planner_mutex());
        p = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE);
    }
    fftw_execute(p);
    {
        std::lock_guard lock(detail::planner_mutex());
        fftw_destroy_plan(p);
    }
    return out;
}

/// Inverse of rfft for a length-n signal, scaled by 1/n.
inline std::vector<double> irfft(std::span<const std::complex<double>> X, std::size_t n) {
    if (X.size() != n / 2 + 1) throw std::invalid_argument("irfft: spectrum length does not match n");
    std::vector<std::complex<double>> in(X.begin(), X.end());
    std::vector<double> out(n);
    fftw_plan p;
    {
        std::lock_guard lock(detail::planner_mutex());
        p = fftw_plan_dft_c2r_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(in.data()), out.data(),
                                 FFTW_ESTIMATE);
    }
    fftw_execute(p);
    {
        std::lock_guard lock(detail::planner_mutex());
        fftw_destroy_plan(p);
    }
    for (double& v : out) v /= static_cast<double>(n);
    return out;
}

}  // namespace grl::fft
