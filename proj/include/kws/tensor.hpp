#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "kws/common.hpp"

namespace kws {

// Dense row-major tensor. Training state is kept in doubles; checkpoints
// store float32.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel(shape), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        require(data.size() == numel(shape), "Tensor: data/shape mismatch");
    }

    static std::size_t numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            require(d > 0, "Tensor: nonpositive dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t size() const { return data.size(); }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// A value with a gradient slot. Parameters are long-lived nodes whose grads
// accumulate across backward passes; activations are created per forward.
struct NodeData {
    Tensor val;
    Tensor grad;

    explicit NodeData(Tensor v) : val(std::move(v)), grad(val.shape) {}
};

using Node = std::shared_ptr<NodeData>;

inline Node make_node(Tensor v) { return std::make_shared<NodeData>(std::move(v)); }

inline Node make_param(Tensor v) { return make_node(std::move(v)); }

// Reverse-mode tape: forward ops push their backward closures; backward()
// replays them in reverse exactly once.
class Tape {
public:
    void record(std::function<void()> back) {
        backs_.push_back(std::move(back));
        recorded_ = true;
    }

    // Seeds d(loss)/d(loss) = seed (1/batch for mean reduction) and runs the
    // recorded closures in reverse.
    void backward(const Node& loss, double seed = 1.0) {
        require(recorded_, "Tape: backward before forward");
        require(!consumed_, "Tape: backward called twice without re-forward");
        require(loss->val.size() == 1, "Tape: loss must be scalar");
        loss->grad.data[0] += seed;
        for (auto it = backs_.rbegin(); it != backs_.rend(); ++it) (*it)();
        consumed_ = true;
    }

    void reset() {
        backs_.clear();
        recorded_ = false;
        consumed_ = false;
    }

private:
    std::vector<std::function<void()>> backs_;
    bool recorded_ = false;
    bool consumed_ = false;
};

// ---- primitive ops -------------------------------------------------------

inline Node op_mul(Tape& tape, const Node& x, const Node& y) {
    require(x->val.size() == 1 && y->val.size() == 1, "op_mul: scalars only");
    Node out = make_node(Tensor({1}, {x->val.data[0] * y->val.data[0]}));
    tape.record([x, y, out] {
        x->grad.data[0] += out->grad.data[0] * y->val.data[0];
        y->grad.data[0] += out->grad.data[0] * x->val.data[0];
    });
    return out;
}

inline Node op_add(Tape& tape, const Node& x, const Node& y) {
    require(x->val.shape == y->val.shape, "op_add: shape mismatch");
    Node out = make_node(Tensor(x->val.shape));
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = x->val.data[i] + y->val.data[i];
    tape.record([x, y, out] {
        for (std::size_t i = 0; i < out->val.size(); ++i) {
            x->grad.data[i] += out->grad.data[i];
            y->grad.data[i] += out->grad.data[i];
        }
    });
    return out;
}

inline Node op_relu(Tape& tape, const Node& x) {
    Node out = make_node(Tensor(x->val.shape));
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = std::max(0.0, x->val.data[i]);
    tape.record([x, out] {
        for (std::size_t i = 0; i < out->val.size(); ++i)
            if (x->val.data[i] > 0.0) x->grad.data[i] += out->grad.data[i];
    });
    return out;
}

// Reshape to a flat vector; gradient passes through untouched.
inline Node op_flatten(Tape& tape, const Node& x) {
    Node out = make_node(Tensor({static_cast<int>(x->val.size())}, x->val.data));
    tape.record([x, out] {
        for (std::size_t i = 0; i < out->val.size(); ++i)
            x->grad.data[i] += out->grad.data[i];
    });
    return out;
}

// y = W x + b, W: [out, in], b: [out]
inline Node op_dense(Tape& tape, const Node& x, const Node& w, const Node& b) {
    const int in = static_cast<int>(x->val.size());
    require(w->val.shape.size() == 2 && w->val.shape[1] == in, "op_dense: weight shape mismatch");
    const int out_dim = w->val.shape[0];
    require(static_cast<int>(b->val.size()) == out_dim, "op_dense: bias shape mismatch");
    Node out = make_node(Tensor({out_dim}));
    for (int o = 0; o < out_dim; ++o) {
        double acc = b->val.data[o];
        const double* row = &w->val.data[static_cast<std::size_t>(o) * in];
        for (int i = 0; i < in; ++i) acc += row[i] * x->val.data[i];
        out->val.data[o] = acc;
    }
    tape.record([x, w, b, out, in, out_dim] {
        for (int o = 0; o < out_dim; ++o) {
            const double g = out->grad.data[o];
            if (g == 0.0) continue;
            b->grad.data[o] += g;
            const double* row = &w->val.data[static_cast<std::size_t>(o) * in];
            double* wg = &w->grad.data[static_cast<std::size_t>(o) * in];
            for (int i = 0; i < in; ++i) {
                wg[i] += g * x->val.data[i];
                x->grad.data[i] += g * row[i];
            }
        }
    });
    return out;
}

namespace detail {
inline int ceil_div(int a, int b) { return (a + b - 1) / b; }
}

// Depthwise conv per input channel followed by a 1x1 pointwise mix.
// x: [H, W, Cin], dw: [k, k, Cin], pw: [Cin, Cout]; same padding, given
// stride on both spatial axes.
inline Node op_separable_conv2d(Tape& tape, const Node& x, const Node& dw, const Node& pw,
                                int stride = 1) {
    require(x->val.shape.size() == 3, "sepconv: input must be [H,W,C]");
    const int H = x->val.shape[0], W = x->val.shape[1], C = x->val.shape[2];
    require(dw->val.shape.size() == 3 && dw->val.shape[0] == dw->val.shape[1] &&
                dw->val.shape[2] == C,
            "sepconv: depthwise shape mismatch");
    const int k = dw->val.shape[0];
    require(k % 2 == 1, "sepconv: kernel must be odd");
    require(pw->val.shape.size() == 2 && pw->val.shape[0] == C, "sepconv: pointwise shape mismatch");
    const int Cout = pw->val.shape[1];
    const int Ho = detail::ceil_div(H, stride), Wo = detail::ceil_div(W, stride);
    const int pad = k / 2;

    // Depthwise intermediate is kept for the backward pass.
    auto mid = std::make_shared<Tensor>(std::vector<int>{Ho, Wo, C});
    auto at3 = [](const Tensor& t, int i, int j, int c) -> std::size_t {
        return (static_cast<std::size_t>(i) * t.shape[1] + j) * t.shape[2] + c;
    };
    for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int di = 0; di < k; ++di) {
                    const int si = i * stride + di - pad;
                    if (si < 0 || si >= H) continue;
                    for (int dj = 0; dj < k; ++dj) {
                        const int sj = j * stride + dj - pad;
                        if (sj < 0 || sj >= W) continue;
                        acc += x->val.data[at3(x->val, si, sj, c)] *
                               dw->val.data[(static_cast<std::size_t>(di) * k + dj) * C + c];
                    }
                }
                mid->data[at3(*mid, i, j, c)] = acc;
            }

    Node out = make_node(Tensor({Ho, Wo, Cout}));
    for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
            const double* m = &mid->data[(static_cast<std::size_t>(i) * Wo + j) * C];
            double* o = &out->val.data[(static_cast<std::size_t>(i) * Wo + j) * Cout];
            for (int c = 0; c < C; ++c) {
                const double mv = m[c];
                if (mv == 0.0) continue;
                const double* prow = &pw->val.data[static_cast<std::size_t>(c) * Cout];
                for (int co = 0; co < Cout; ++co) o[co] += mv * prow[co];
            }
        }

    tape.record([x, dw, pw, out, mid, H, W, C, Cout, Ho, Wo, k, stride, pad, at3] {
        Tensor mid_grad(std::vector<int>{Ho, Wo, C});
        // pointwise backward
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                const std::size_t base_m = (static_cast<std::size_t>(i) * Wo + j) * C;
                const std::size_t base_o = (static_cast<std::size_t>(i) * Wo + j) * Cout;
                for (int c = 0; c < C; ++c) {
                    const double mv = mid->data[base_m + c];
                    const double* prow = &pw->val.data[static_cast<std::size_t>(c) * Cout];
                    double* pgrow = &pw->grad.data[static_cast<std::size_t>(c) * Cout];
                    double acc = 0.0;
                    for (int co = 0; co < Cout; ++co) {
                        const double g = out->grad.data[base_o + co];
                        acc += g * prow[co];
                        pgrow[co] += g * mv;
                    }
                    mid_grad.data[base_m + c] = acc;
                }
            }
        // depthwise backward
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j)
                for (int c = 0; c < C; ++c) {
                    const double g = mid_grad.data[at3(mid_grad, i, j, c)];
                    if (g == 0.0) continue;
                    for (int di = 0; di < k; ++di) {
                        const int si = i * stride + di - pad;
                        if (si < 0 || si >= H) continue;
                        for (int dj = 0; dj < k; ++dj) {
                            const int sj = j * stride + dj - pad;
                            if (sj < 0 || sj >= W) continue;
                            const std::size_t xi = at3(x->val, si, sj, c);
                            const std::size_t wi = (static_cast<std::size_t>(di) * k + dj) * C + c;
                            dw->grad.data[wi] += g * x->val.data[xi];
                            x->grad.data[xi] += g * dw->val.data[wi];
                        }
                    }
                }
    });
    return out;
}

// 1x1 projection with stride; used on residual skips when a pair changes
// shape. x: [H, W, Cin], w: [Cin, Cout].
inline Node op_pointwise_conv(Tape& tape, const Node& x, const Node& w, int stride = 1) {
    require(x->val.shape.size() == 3, "pointwise: input must be [H,W,C]");
    const int H = x->val.shape[0], W = x->val.shape[1], C = x->val.shape[2];
    require(w->val.shape.size() == 2 && w->val.shape[0] == C, "pointwise: weight shape mismatch");
    const int Cout = w->val.shape[1];
    const int Ho = detail::ceil_div(H, stride), Wo = detail::ceil_div(W, stride);
    Node out = make_node(Tensor({Ho, Wo, Cout}));
    for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
            const std::size_t base_x = (static_cast<std::size_t>(i) * stride * W + j * stride) * C;
            double* o = &out->val.data[(static_cast<std::size_t>(i) * Wo + j) * Cout];
            for (int c = 0; c < C; ++c) {
                const double xv = x->val.data[base_x + c];
                const double* row = &w->val.data[static_cast<std::size_t>(c) * Cout];
                for (int co = 0; co < Cout; ++co) o[co] += xv * row[co];
            }
        }
    tape.record([x, w, out, H, W, C, Cout, Ho, Wo, stride] {
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                const std::size_t base_x = (static_cast<std::size_t>(i) * stride * W + j * stride) * C;
                const std::size_t base_o = (static_cast<std::size_t>(i) * Wo + j) * Cout;
                for (int c = 0; c < C; ++c) {
                    const double xv = x->val.data[base_x + c];
                    const double* row = &w->val.data[static_cast<std::size_t>(c) * Cout];
                    double* wg = &w->grad.data[static_cast<std::size_t>(c) * Cout];
                    double acc = 0.0;
                    for (int co = 0; co < Cout; ++co) {
                        const double g = out->grad.data[base_o + co];
                        acc += g * row[co];
                        wg[co] += g * xv;
                    }
                    x->grad.data[base_x + c] += acc;
                }
            }
    });
    return out;
}

// Layer normalization over the trailing (channel) axis per spatial
// position. gain/bias: [C]. epsilon 1e-5.
inline Node op_layer_norm(Tape& tape, const Node& x, const Node& gain, const Node& bias) {
    require(!x->val.shape.empty(), "layer_norm: empty shape");
    const int C = x->val.shape.back();
    require(static_cast<int>(gain->val.size()) == C && static_cast<int>(bias->val.size()) == C,
            "layer_norm: gain/bias shape mismatch");
    const std::size_t rows = x->val.size() / C;
    constexpr double eps = 1e-5;

    Node out = make_node(Tensor(x->val.shape));
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    auto xhat = std::make_shared<std::vector<double>>(x->val.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = &x->val.data[r * C];
        double mean = 0.0;
        for (int c = 0; c < C; ++c) mean += xr[c];
        mean /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) var += (xr[c] - mean) * (xr[c] - mean);
        var /= C;
        const double istd = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = istd;
        for (int c = 0; c < C; ++c) {
            const double xh = (xr[c] - mean) * istd;
            (*xhat)[r * C + c] = xh;
            out->val.data[r * C + c] = gain->val.data[c] * xh + bias->val.data[c];
        }
    }
    tape.record([x, gain, bias, out, inv_std, xhat, rows, C] {
        for (std::size_t r = 0; r < rows; ++r) {
            const double istd = (*inv_std)[r];
            double sum_g = 0.0, sum_gx = 0.0;
            for (int c = 0; c < C; ++c) {
                const double go = out->grad.data[r * C + c];
                const double xh = (*xhat)[r * C + c];
                gain->grad.data[c] += go * xh;
                bias->grad.data[c] += go;
                const double gxh = go * gain->val.data[c];
                sum_g += gxh;
                sum_gx += gxh * xh;
            }
            for (int c = 0; c < C; ++c) {
                const double gxh = out->grad.data[r * C + c] * gain->val.data[c];
                const double xh = (*xhat)[r * C + c];
                x->grad.data[r * C + c] += istd * (gxh - sum_g / C - xh * sum_gx / C);
            }
        }
    });
    return out;
}

// D = exp(-sum_i |left_i - right_i|), the similarity head. Symmetric,
// D(a,a) = 1, strictly decreasing in every coordinate gap.
inline Node op_siamese_distance(Tape& tape, const Node& left, const Node& right) {
    require(left->val.shape == right->val.shape, "siamese_distance: shape mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < left->val.size(); ++i)
        sum += std::abs(left->val.data[i] - right->val.data[i]);
    const double d = std::exp(-sum);
    Node out = make_node(Tensor({1}, {d}));
    tape.record([left, right, out, d] {
        const double g = out->grad.data[0] * d;
        for (std::size_t i = 0; i < left->val.size(); ++i) {
            const double diff = left->val.data[i] - right->val.data[i];
            const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            left->grad.data[i] += -g * s;
            right->grad.data[i] += g * s;
        }
    });
    return out;
}

// Binary cross-entropy on a similarity score, clamped away from {0,1}.
inline Node op_bce(Tape& tape, const Node& d, double target) {
    require(d->val.size() == 1, "bce: scalar input expected");
    constexpr double eps = 1e-7;
    const double dc = std::clamp(d->val.data[0], eps, 1.0 - eps);
    const double loss = -(target * std::log(dc) + (1.0 - target) * std::log(1.0 - dc));
    Node out = make_node(Tensor({1}, {loss}));
    const bool clamped = d->val.data[0] < eps || d->val.data[0] > 1.0 - eps;
    tape.record([d, out, dc, target, clamped] {
        if (clamped) return;
        d->grad.data[0] += out->grad.data[0] * (-(target / dc) + (1.0 - target) / (1.0 - dc));
    });
    return out;
}

// Numerically stable softmax cross-entropy against a class index.
inline Node op_softmax_cross_entropy(Tape& tape, const Node& logits, int target) {
    const int C = static_cast<int>(logits->val.size());
    require(C >= 2, "softmax_ce: need at least two classes");
    require(target >= 0 && target < C, "softmax_ce: class index out of range");
    const double m = *std::max_element(logits->val.data.begin(), logits->val.data.end());
    double lse = 0.0;
    for (int c = 0; c < C; ++c) lse += std::exp(logits->val.data[c] - m);
    lse = m + std::log(lse);
    Node out = make_node(Tensor({1}, {lse - logits->val.data[target]}));
    auto probs = std::make_shared<std::vector<double>>(C);
    for (int c = 0; c < C; ++c) (*probs)[c] = std::exp(logits->val.data[c] - lse);
    tape.record([logits, out, probs, target, C] {
        const double g = out->grad.data[0];
        for (int c = 0; c < C; ++c)
            logits->grad.data[c] += g * ((*probs)[c] - (c == target ? 1.0 : 0.0));
    });
    return out;
}

inline int argmax(const Tensor& t) {
    return static_cast<int>(std::max_element(t.data.begin(), t.data.end()) - t.data.begin());
}

}  // namespace kws
