#pragma once

// Independent, deliberately naive forward pass: whole-sequence loops, no
// KV cache, no SIMD. Used as an oracle for the library's forward pass. The
// `edit` hook may rewrite the residual after any block.

#include <cmath>
#include <functional>
#include <vector>

#include "steerkit/model.hpp"

namespace steerkit::testing {

using Residual = std::vector<std::vector<double>>;  // [seq][d]
using ResidualEdit = std::function<void(int layer, Residual& residual)>;

struct ReferenceOutput {
    std::vector<Residual> residual;          // [layer][seq][d]
    std::vector<std::vector<double>> logits;  // [seq][vocab]
};

inline std::vector<double> ref_layer_norm(const std::vector<double>& x, const std::vector<double>& g,
                                          const std::vector<double>& b, double eps) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = g[i] * (x[i] - mean) / std::sqrt(var + eps) + b[i];
    return y;
}

inline std::vector<double> ref_apply(const Matrix& w, const std::vector<double>& x) {
    std::vector<double> y(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r)
        for (std::size_t c = 0; c < w.cols(); ++c) y[r] += w(r, c) * x[c];
    return y;
}

inline ReferenceOutput reference_forward(const Weights& w, const std::vector<Token>& tokens,
                                         const ResidualEdit& edit = {}) {
    const auto& cfg = w.config;
    const int T = static_cast<int>(tokens.size());
    const int d = cfg.d_model;
    const int dh = cfg.head_dim();
    Residual x(T, std::vector<double>(d));
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < d; ++i) x[t][i] = w.token_embedding(tokens[t], i) + w.position_embedding(t, i);

    ReferenceOutput out;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lw = w.layers[l];
        std::vector<std::vector<double>> q(T), k(T), v(T);
        for (int t = 0; t < T; ++t) {
            const auto h = ref_layer_norm(x[t], lw.ln1_gain, lw.ln1_bias, cfg.layernorm_epsilon);
            q[t] = ref_apply(lw.wq, h);
            k[t] = ref_apply(lw.wk, h);
            v[t] = ref_apply(lw.wv, h);
        }
        Residual mid = x;
        for (int t = 0; t < T; ++t) {
            std::vector<double> concat(d, 0.0);
            for (int hd = 0; hd < cfg.n_heads; ++hd) {
                std::vector<double> s(t + 1);
                double mx = -1e300;
                for (int j = 0; j <= t; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < dh; ++i) acc += q[t][hd * dh + i] * k[j][hd * dh + i];
                    s[j] = acc / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, s[j]);
                }
                double z = 0.0;
                for (auto& e : s) z += (e = std::exp(e - mx));
                for (int j = 0; j <= t; ++j)
                    for (int i = 0; i < dh; ++i) concat[hd * dh + i] += s[j] / z * v[j][hd * dh + i];
            }
            const auto o = ref_apply(lw.wo, concat);
            for (int i = 0; i < d; ++i) mid[t][i] += o[i];
        }
        for (int t = 0; t < T; ++t) {
            const auto h = ref_layer_norm(mid[t], lw.ln2_gain, lw.ln2_bias, cfg.layernorm_epsilon);
            auto pre = ref_apply(lw.w_up, h);
            for (int j = 0; j < cfg.d_ff; ++j) {
                const double u = pre[j] + lw.b_up[j];
                pre[j] = 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
            }
            const auto down = ref_apply(lw.w_down, pre);
            for (int i = 0; i < d; ++i) x[t][i] = mid[t][i] + down[i] + lw.b_down[i];
        }
        if (edit) edit(l, x);
        out.residual.push_back(x);
    }
    for (int t = 0; t < T; ++t) {
        const auto h = cfg.final_norm ? ref_layer_norm(x[t], w.final_gain, w.final_bias, cfg.layernorm_epsilon) : x[t];
        out.logits.push_back(ref_apply(w.unembedding, h));
    }
    return out;
}

}  // namespace steerkit::testing
