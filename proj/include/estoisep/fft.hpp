#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace estoisep {

using cplx = std::complex<double>;

/// In-place complex FFT. Radix-2 for power-of-two sizes, Bluestein otherwise.
void fft(std::vector<cplx>& data, bool inverse = false);

/// Convenience: inverse FFT including the 1/N scaling.
void ifft(std::vector<cplx>& data);

/// Cross-correlation r(k) = sum_t a(t) * b(t - k) for k in [-max_lag, max_lag],
/// computed via FFT. Result index i corresponds to lag i - max_lag.
std::vector<double> cross_correlation(const std::vector<double>& a, const std::vector<double>& b,
                                      int max_lag);

}  // namespace estoisep
