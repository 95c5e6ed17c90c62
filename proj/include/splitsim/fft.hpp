#pragma once

#include <complex>
#include <cstring>
#include <mutex>
#include <new>

#include <fftw3.h>

#include "constants.hpp"
#include "errors.hpp"

namespace splitsim {

namespace detail {

// fftw's planner mutates global tables; executing a plan is thread-safe,
// creating or destroying one is not.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

} // namespace detail

// In-place complex transform of fixed size. forward() leaves the result
// unnormalized, backward() divides by n so the pair round-trips. Plans use
// FFTW_ESTIMATE so the transform is deterministic across runs.
class Fft1D {
public:
    explicit Fft1D(size_t n) : n_(n) {
        if (n_ < 2) throw ValidationError("fft size must be at least 2");
        buf_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n_));
        if (!buf_) throw std::bad_alloc();
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        fwd_ = fftw_plan_dft_1d(static_cast<int>(n_), buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd_ = fftw_plan_dft_1d(static_cast<int>(n_), buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
    }

    Fft1D(const Fft1D&) = delete;
    Fft1D& operator=(const Fft1D&) = delete;

    ~Fft1D() {
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
        fftw_free(buf_);
    }

    size_t size() const { return n_; }

    void forward(std::complex<double>* a) { run(fwd_, a, 1.0); }
    void backward(std::complex<double>* a) { run(bwd_, a, 1.0 / static_cast<double>(n_)); }

private:
    void run(fftw_plan plan, std::complex<double>* a, double scale) {
        // std::complex<double> is layout-compatible with fftw_complex
        std::memcpy(buf_, a, sizeof(fftw_complex) * n_);
        fftw_execute(plan);
        const double* out = reinterpret_cast<const double*>(buf_);
        for (size_t i = 0; i < n_; ++i)
            a[i] = {out[2 * i] * scale, out[2 * i + 1] * scale};
    }

    size_t n_;
    fftw_complex* buf_;
    fftw_plan fwd_;
    fftw_plan bwd_;
};

// signed angular wavenumber of fft bin j on an n-point grid of spacing dx
inline double fft_wavenumber(size_t j, size_t n, double dx) {
    const double f = (j < n / 2) ? static_cast<double>(j)
                                 : static_cast<double>(j) - static_cast<double>(n);
    return 2.0 * constants::pi * f / (static_cast<double>(n) * dx);
}

} // namespace splitsim
