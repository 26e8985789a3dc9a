#pragma once

// Independent oracles for the test suites. Everything here is deliberately
// naive (direct DFT, nested-loop convolution, central finite differences) so
// it shares no code path with the library implementations it checks.

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include <kws/audio.hpp>
#include <kws/tensor.hpp>

namespace oracle {

// Direct O(N^2) DFT power spectrum of bins 0..N/2, normalized by N.
inline std::vector<double> dft_power(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<double> out(n / 2 + 1);
    for (std::size_t k = 0; k <= n / 2; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) *
                               static_cast<double>(t) / static_cast<double>(n);
            acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = std::norm(acc) / static_cast<double>(n);
    }
    return out;
}

// Frequency (Hz) of the dominant DFT bin of a clip.
inline double dominant_frequency(const kws::AudioClip& clip) {
    auto ps = dft_power(clip.samples);
    std::size_t best = 0;
    for (std::size_t k = 1; k < ps.size(); ++k)
        if (ps[k] > ps[best]) best = k;
    return static_cast<double>(best) * clip.sample_rate_hz /
           static_cast<double>(clip.samples.size());
}

// Nested-loop depthwise+pointwise convolution, same padding.
inline kws::Tensor separable_conv_naive(const kws::Tensor& x, const kws::Tensor& dw,
                                        const kws::Tensor& pw, int stride) {
    const int H = x.shape[0], W = x.shape[1], C = x.shape[2];
    const int k = dw.shape[0];
    const int Cout = pw.shape[1];
    const int pad = k / 2;
    const int Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
    kws::Tensor out({Ho, Wo, Cout});
    for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j)
            for (int co = 0; co < Cout; ++co) {
                double acc = 0.0;
                for (int c = 0; c < C; ++c) {
                    double m = 0.0;
                    for (int di = 0; di < k; ++di)
                        for (int dj = 0; dj < k; ++dj) {
                            const int si = i * stride + di - pad;
                            const int sj = j * stride + dj - pad;
                            if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                            m += x.data[(static_cast<std::size_t>(si) * W + sj) * C + c] *
                                 dw.data[(static_cast<std::size_t>(di) * k + dj) * C + c];
                        }
                    acc += m * pw.data[static_cast<std::size_t>(c) * Cout + co];
                }
                out.data[(static_cast<std::size_t>(i) * Wo + j) * Cout + co] = acc;
            }
    return out;
}

// Central finite difference of a scalar function at x[i].
inline double finite_diff(const std::function<double()>& f, double& x, double h = 1e-6) {
    const double orig = x;
    x = orig + h;
    const double fp = f();
    x = orig - h;
    const double fm = f();
    x = orig;
    return (fp - fm) / (2.0 * h);
}

inline double rel_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / denom;
}

}  // namespace oracle
