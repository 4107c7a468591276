#include "estoisep/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace estoisep {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

void fft_radix2(std::vector<cplx>& d, bool inverse) {
    const std::size_t n = d.size();
    // bit reversal
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(d[i], d[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? kTwoPi : -kTwoPi) / static_cast<double>(len);
        const cplx wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cplx u = d[i + k];
                const cplx v = d[i + k + len / 2] * w;
                d[i + k] = u + v;
                d[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Bluestein's algorithm: arbitrary-size DFT as a convolution of power-of-two FFTs.
void fft_bluestein(std::vector<cplx>& d, bool inverse) {
    const std::size_t n = d.size();
    const std::size_t m = next_pow2(2 * n + 1);
    std::vector<cplx> a(m, cplx(0.0, 0.0));
    std::vector<cplx> b(m, cplx(0.0, 0.0));
    std::vector<cplx> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the phase argument small
        const std::size_t k2 = (k * k) % (2 * n);
        const double ang = kTwoPi * static_cast<double>(k2) / (2.0 * static_cast<double>(n));
        chirp[k] = cplx(std::cos(ang), inverse ? std::sin(ang) : -std::sin(ang));
    }
    for (std::size_t k = 0; k < n; ++k) a[k] = d[k] * chirp[k];
    b[0] = cplx(1.0, 0.0);
    for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);
    fft_radix2(a, false);
    fft_radix2(b, false);
    for (std::size_t k = 0; k < m; ++k) a[k] *= b[k];
    fft_radix2(a, true);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) d[k] = a[k] * inv_m * chirp[k];
}

}  // namespace

void fft(std::vector<cplx>& data, bool inverse) {
    const std::size_t n = data.size();
    if (n <= 1) return;
    if (is_pow2(n))
        fft_radix2(data, inverse);
    else
        fft_bluestein(data, inverse);
}

void ifft(std::vector<cplx>& data) {
    fft(data, true);
    const double inv_n = 1.0 / static_cast<double>(data.size());
    for (auto& v : data) v *= inv_n;
}

std::vector<double> cross_correlation(const std::vector<double>& a, const std::vector<double>& b,
                                      int max_lag) {
    if (a.empty() || b.empty()) throw std::invalid_argument("cross_correlation: empty input");
    const std::size_t n = std::max(a.size(), b.size());
    const std::size_t m = next_pow2(n + static_cast<std::size_t>(max_lag) + 1);
    std::vector<cplx> fa(m, cplx(0, 0)), fb(m, cplx(0, 0));
    for (std::size_t i = 0; i < a.size(); ++i) fa[i] = cplx(a[i], 0.0);
    for (std::size_t i = 0; i < b.size(); ++i) fb[i] = cplx(b[i], 0.0);
    fft(fa);
    fft(fb);
    for (std::size_t i = 0; i < m; ++i) fa[i] *= std::conj(fb[i]);
    ifft(fa);
    // r(k) = sum_t a(t) b(t-k): positive lags at index k, negative at m+k
    std::vector<double> out(2 * static_cast<std::size_t>(max_lag) + 1);
    for (int k = -max_lag; k <= max_lag; ++k) {
        const std::size_t idx = k >= 0 ? static_cast<std::size_t>(k)
                                       : m - static_cast<std::size_t>(-k);
        out[static_cast<std::size_t>(k + max_lag)] = fa[idx].real();
    }
    return out;
}

}  // namespace estoisep
