#pragma once
// Minimal RAII wrapper over FFTW's 3D complex transforms.

#include <fftw3.h>

#include <complex>
#include <mutex>
#include <vector>

#include "brainunet/tensor.hpp"

namespace brainunet {

namespace fft_detail {
// FFTW planning is not thread-safe.
inline std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace fft_detail

/// In-place forward/inverse 3D DFT over a buffer of dims.count() complex values.
/// The inverse is normalized, so inverse(forward(x)) == x up to round-off.
class Fft3d {
public:
    explicit Fft3d(Dims3 dims) : dims_(dims), buffer_(static_cast<std::size_t>(dims.count())) {
        std::lock_guard lock(fft_detail::planner_mutex());
        auto* p = reinterpret_cast<fftw_complex*>(buffer_.data());
        const int nx = static_cast<int>(dims.x), ny = static_cast<int>(dims.y), nz = static_cast<int>(dims.z);
        forward_ = fftw_plan_dft_3d(nx, ny, nz, p, p, FFTW_FORWARD, FFTW_ESTIMATE);
        inverse_ = fftw_plan_dft_3d(nx, ny, nz, p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    ~Fft3d() {
        std::lock_guard lock(fft_detail::planner_mutex());
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(inverse_);
    }
    Fft3d(const Fft3d&) = delete;
    Fft3d& operator=(const Fft3d&) = delete;

    std::vector<std::complex<double>>& buffer() { return buffer_; }
    Dims3 dims() const { return dims_; }

    void forward() { fftw_execute(forward_); }
    void inverse() {
        fftw_execute(inverse_);
        const double scale = 1.0 / static_cast<double>(dims_.count());
        for (auto& v : buffer_) v *= scale;
    }

private:
    Dims3 dims_;
    std::vector<std::complex<double>> buffer_;
    fftw_plan forward_ = nullptr;
    fftw_plan inverse_ = nullptr;
};

}  // namespace brainunet
