#include <algorithm>
#include <cmath>
#include <string>

#include "steerkit/errors.hpp"
#include "steerkit/model.hpp"
#include "steerkit/simd/kernels.hpp"
#include "transformer_internal.hpp"

namespace steerkit {

bool PositionFilter::admits(int position, int prompt_length) const {
    switch (kind) {
        case Kind::all: return true;
        case Kind::generated: return position >= prompt_length;
        case Kind::explicit_set: return std::find(positions.begin(), positions.end(), position) != positions.end();
    }
    return false;
}

namespace detail {

void check_tokens(const ModelConfig& config, std::span<const Token> tokens) {
    if (tokens.empty()) throw InvalidArgument("token sequence is empty");
    if (static_cast<int>(tokens.size()) > config.max_seq_len) {
        throw ContextOverflow("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len " +
                              std::to_string(config.max_seq_len));
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= config.vocab_size) {
            throw TokenOutOfVocabulary("token " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                                       " is outside vocabulary of size " + std::to_string(config.vocab_size));
        }
    }
}

void check_interventions(const ModelConfig& config, std::span<const Intervention> interventions) {
    for (const auto& iv : interventions) {
        if (iv.layer < 0 || iv.layer >= config.n_layers) {
            throw InvalidArgument("intervention layer " + std::to_string(iv.layer) + " out of range [0, " +
                                  std::to_string(config.n_layers) + ")");
        }
        if (static_cast<int>(iv.vector.size()) != config.d_model) {
            throw InvalidArgument("intervention vector has length " + std::to_string(iv.vector.size()) +
                                  ", expected d_model = " + std::to_string(config.d_model));
        }
        if (!all_finite(iv.vector)) throw NonFiniteValue("intervention vector contains non-finite entries");
        if (!std::isfinite(iv.coefficient)) throw NonFiniteValue("intervention coefficient is not finite");
    }
}

namespace {

// y = gain * (x - mean) * rstd + bias. Returns rstd; xhat receives the
// normalized input.
double layer_norm(std::span<const double> x, std::span<const double> gain, std::span<const double> bias, double eps,
                  std::span<double> xhat, std::span<double> y) {
    const auto n = static_cast<double>(x.size());
    const double mean = simd::sum(x) / n;
    double var = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - mean;
        xhat[i] = d;
        var += d * d;
    }
    var /= n;
    const double rstd = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
        xhat[i] *= rstd;
        y[i] = gain[i] * xhat[i] + bias[i];
    }
    return rstd;
}

// Accumulates d(loss)/dx into dx given dy; also gain/bias gradients.
void layer_norm_backward(std::span<const double> dy, std::span<const double> xhat, double rstd,
                         std::span<const double> gain, std::span<double> dx, std::span<double> dgain,
                         std::span<double> dbias, std::span<double> scratch) {
    const std::size_t n = dy.size();
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        scratch[i] = dy[i] * gain[i];
        mean_g += scratch[i];
        mean_gx += scratch[i] * xhat[i];
    }
    mean_g /= static_cast<double>(n);
    mean_gx /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) dx[i] += rstd * (scratch[i] - mean_g - xhat[i] * mean_gx);
    if (!dgain.empty()) {
        for (std::size_t i = 0; i < n; ++i) {
            dgain[i] += dy[i] * xhat[i];
            dbias[i] += dy[i];
        }
    }
}

void matvec(const Matrix& w, std::span<const double> x, std::span<double> y) {
    simd::active_kernels().matvec(w.data(), w.rows(), w.cols(), x.data(), y.data());
}

// y += W^T g
void matvec_transposed_acc(const Matrix& w, std::span<const double> g, std::span<double> y) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
        if (g[r] != 0.0) simd::axpy(g[r], w.row(r), y);
    }
}

// dW += g x^T
void outer_acc(Matrix& dw, std::span<const double> g, std::span<const double> x) {
    for (std::size_t r = 0; r < dw.rows(); ++r) {
        if (g[r] != 0.0) simd::axpy(g[r], x, dw.row(r));
    }
}

// Processes one position at a time so that full forward passes and
// incremental decoding share every floating-point operation.
class Stepper {
public:
    Stepper(const Weights& w, std::span<const Intervention> interventions, int capacity)
        : w_(w), cfg_(w.config), interventions_(interventions) {
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        keys_.assign(cfg_.n_layers, Matrix(capacity, d));
        values_.assign(cfg_.n_layers, Matrix(capacity, d));
        x_.resize(d);
        xhat_.resize(d);
        h_.resize(d);
        q_.resize(d);
        concat_.resize(d);
        tmp_.resize(d);
        pre_.resize(cfg_.d_ff);
        act_.resize(cfg_.d_ff);
        scores_.resize(capacity);
        logits_.resize(cfg_.vocab_size);
    }

    void step(Token token, int pos, int prompt_length, Tape* tape, ActivationCache* cache) {
        const int d = cfg_.d_model;
        const int dh = cfg_.head_dim();
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const auto e = w_.token_embedding.row(token);
        const auto p = w_.position_embedding.row(pos);
        for (int i = 0; i < d; ++i) x_[i] = e[i] + p[i];

        for (int l = 0; l < cfg_.n_layers; ++l) {
            const LayerWeights& lw = w_.layers[l];
            LayerTape* lt = tape ? &tape->layers[l] : nullptr;

            double rstd = layer_norm(x_, lw.ln1_gain, lw.ln1_bias, cfg_.layernorm_epsilon, xhat_, h_);
            if (lt) {
                copy_row(xhat_, lt->ln1_xhat, pos);
                copy_row(h_, lt->ln1_out, pos);
                lt->ln1_rstd[pos] = rstd;
            }
            matvec(lw.wq, h_, q_);
            matvec(lw.wk, h_, keys_[l].row(pos));
            matvec(lw.wv, h_, values_[l].row(pos));
            if (lt) {
                copy_row(q_, lt->q, pos);
                copy_row(keys_[l].row(pos), lt->k, pos);
                copy_row(values_[l].row(pos), lt->v, pos);
            }

            std::fill(concat_.begin(), concat_.end(), 0.0);
            for (int hd = 0; hd < cfg_.n_heads; ++hd) {
                const std::size_t off = static_cast<std::size_t>(hd) * dh;
                const std::span<const double> qh{q_.data() + off, static_cast<std::size_t>(dh)};
                double mx = -INFINITY;
                for (int s = 0; s <= pos; ++s) {
                    const std::span<const double> ks{keys_[l].row(s).data() + off, static_cast<std::size_t>(dh)};
                    scores_[s] = simd::dot(qh, ks) * scale;
                    mx = std::max(mx, scores_[s]);
                }
                double total = 0.0;
                for (int s = 0; s <= pos; ++s) {
                    scores_[s] = std::exp(scores_[s] - mx);
                    total += scores_[s];
                }
                const std::span<double> out{concat_.data() + off, static_cast<std::size_t>(dh)};
                for (int s = 0; s <= pos; ++s) {
                    scores_[s] /= total;
                    simd::axpy(scores_[s], std::span<const double>{values_[l].row(s).data() + off,
                                                                   static_cast<std::size_t>(dh)},
                               out);
                }
                if (lt) {
                    auto row = lt->probs[hd].row(pos);
                    std::copy(scores_.begin(), scores_.begin() + pos + 1, row.begin());
                }
            }
            if (lt) copy_row(concat_, lt->attn_concat, pos);
            matvec(lw.wo, concat_, tmp_);
            for (int i = 0; i < d; ++i) x_[i] += tmp_[i];

            rstd = layer_norm(x_, lw.ln2_gain, lw.ln2_bias, cfg_.layernorm_epsilon, xhat_, h_);
            if (lt) {
                copy_row(xhat_, lt->ln2_xhat, pos);
                copy_row(h_, lt->ln2_out, pos);
                lt->ln2_rstd[pos] = rstd;
            }
            matvec(lw.w_up, h_, pre_);
            for (int j = 0; j < cfg_.d_ff; ++j) {
                pre_[j] += lw.b_up[j];
                act_[j] = gelu(pre_[j]);
            }
            if (lt) {
                copy_row(pre_, lt->ff_pre, pos);
                copy_row(act_, lt->ff_act, pos);
            }
            matvec(lw.w_down, act_, tmp_);
            for (int i = 0; i < d; ++i) x_[i] += tmp_[i] + lw.b_down[i];

            for (const auto& iv : interventions_) {
                if (iv.layer == l && iv.filter.admits(pos, prompt_length)) simd::axpy(iv.coefficient, iv.vector, x_);
            }
            if (cache) std::copy(x_.begin(), x_.end(), cache->at(l, pos).begin());
        }

        if (cfg_.final_norm) {
            const double rstd = layer_norm(x_, w_.final_gain, w_.final_bias, cfg_.layernorm_epsilon, xhat_, h_);
            if (tape) {
                copy_row(xhat_, tape->final_xhat, pos);
                tape->final_rstd[pos] = rstd;
            }
        } else {
            std::copy(x_.begin(), x_.end(), h_.begin());
        }
        if (tape) copy_row(h_, tape->final_out, pos);
        matvec(w_.unembedding, h_, logits_);
        if (tape) copy_row(logits_, tape->logits, pos);
        if (cache) std::copy(logits_.begin(), logits_.end(), cache->logits.row(pos).begin());
    }

    std::span<const double> logits() const { return logits_; }

private:
    static void copy_row(std::span<const double> src, Matrix& dst, int pos) {
        std::copy(src.begin(), src.end(), dst.row(pos).begin());
    }

    const Weights& w_;
    const ModelConfig& cfg_;
    std::span<const Intervention> interventions_;
    std::vector<Matrix> keys_, values_;
    std::vector<double> x_, xhat_, h_, q_, concat_, tmp_, pre_, act_, scores_, logits_;
};

void init_tape(const ModelConfig& cfg, int seq_len, std::span<const Token> tokens, Tape& tape) {
    const auto T = static_cast<std::size_t>(seq_len);
    const auto d = static_cast<std::size_t>(cfg.d_model);
    tape.tokens.assign(tokens.begin(), tokens.end());
    tape.layers.assign(cfg.n_layers, LayerTape{});
    for (auto& lt : tape.layers) {
        lt.ln1_xhat = lt.ln1_out = Matrix(T, d);
        lt.ln1_rstd.assign(T, 0.0);
        lt.q = lt.k = lt.v = Matrix(T, d);
        lt.probs.assign(cfg.n_heads, Matrix(T, T));
        lt.attn_concat = Matrix(T, d);
        lt.ln2_xhat = lt.ln2_out = Matrix(T, d);
        lt.ln2_rstd.assign(T, 0.0);
        lt.ff_pre = lt.ff_act = Matrix(T, cfg.d_ff);
    }
    tape.final_xhat = tape.final_out = Matrix(T, d);
    tape.final_rstd.assign(T, 0.0);
    tape.logits = Matrix(T, cfg.vocab_size);
}

void init_cache(const ModelConfig& cfg, int seq_len, ActivationCache& cache) {
    cache.n_layers = cfg.n_layers;
    cache.seq_len = seq_len;
    cache.d_model = cfg.d_model;
    cache.residual.assign(static_cast<std::size_t>(cfg.n_layers) * seq_len * cfg.d_model, 0.0);
    cache.logits = Matrix(seq_len, cfg.vocab_size);
}

}  // namespace

void forward_with_tape(const Weights& weights, std::span<const Token> tokens,
                       std::span<const Intervention> interventions, int prompt_length, Tape& tape,
                       ActivationCache* cache) {
    const auto& cfg = weights.config;
    check_tokens(cfg, tokens);
    check_interventions(cfg, interventions);
    const int T = static_cast<int>(tokens.size());
    init_tape(cfg, T, tokens, tape);
    if (cache) init_cache(cfg, T, *cache);
    Stepper stepper(weights, interventions, T);
    for (int t = 0; t < T; ++t) stepper.step(tokens[t], t, prompt_length, &tape, cache);
}

void backward(const Weights& weights, const Tape& tape, const BackwardRequest& req) {
    const auto& cfg = weights.config;
    const int T = static_cast<int>(tape.tokens.size());
    const int A = std::min(req.active_len, T);
    const int d = cfg.d_model;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Weights* pg = req.param_grads;
    const int lowest = req.lowest_layer.value_or(cfg.n_layers);

    Matrix dx(T, d);  // gradient w.r.t. the current residual stream
    std::vector<double> scratch(std::max(d, cfg.d_ff));
    std::vector<double> dp(T);
    std::vector<double> dh_row(d);

    // Readout.
    for (int t = 0; t < A; ++t) {
        const auto g = req.dlogits->row(t);
        std::fill(dh_row.begin(), dh_row.end(), 0.0);
        matvec_transposed_acc(weights.unembedding, g, dh_row);
        if (pg) outer_acc(pg->unembedding, g, tape.final_out.row(t));
        if (cfg.final_norm) {
            layer_norm_backward(dh_row, tape.final_xhat.row(t), tape.final_rstd[t], weights.final_gain, dx.row(t),
                                pg ? std::span<double>(pg->final_gain) : std::span<double>{},
                                pg ? std::span<double>(pg->final_bias) : std::span<double>{}, scratch);
        } else {
            simd::axpy(1.0, dh_row, dx.row(t));
        }
    }

    auto record = [&](int layer) {
        if (!req.residual_out || layer < lowest) return;
        auto& out = *req.residual_out;
        for (int t = 0; t < A; ++t) {
            std::copy_n(dx.row(t).begin(), d,
                        out.grads.begin() + (static_cast<std::ptrdiff_t>(layer) * out.seq_len + t) * d);
        }
    };
    record(cfg.n_layers - 1);

    const bool need_below = pg != nullptr;
    std::vector<double> dpre(cfg.d_ff), dact(cfg.d_ff), dconcat(d), dh1(d);
    Matrix dq(T, d), dk(T, d), dv(T, d);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        if (!need_below && l <= lowest) break;
        const LayerWeights& lw = weights.layers[l];
        const LayerTape& lt = tape.layers[l];
        LayerWeights* lg = pg ? &pg->layers[l] : nullptr;

        // MLP: x_out = x_mid + W_down gelu(W_up LN2(x_mid) + b_up) + b_down
        for (int t = 0; t < A; ++t) {
            const auto df = dx.row(t);
            std::fill(dact.begin(), dact.end(), 0.0);
            matvec_transposed_acc(lw.w_down, df, dact);
            if (lg) {
                outer_acc(lg->w_down, df, lt.ff_act.row(t));
                simd::axpy(1.0, df, lg->b_down);
            }
            const auto pre = lt.ff_pre.row(t);
            for (int j = 0; j < cfg.d_ff; ++j) dpre[j] = dact[j] * gelu_grad(pre[j]);
            std::fill(dh_row.begin(), dh_row.end(), 0.0);
            matvec_transposed_acc(lw.w_up, dpre, dh_row);
            if (lg) {
                outer_acc(lg->w_up, dpre, lt.ln2_out.row(t));
                simd::axpy(1.0, dpre, lg->b_up);
            }
            layer_norm_backward(dh_row, lt.ln2_xhat.row(t), lt.ln2_rstd[t], lw.ln2_gain, dx.row(t),
                                lg ? std::span<double>(lg->ln2_gain) : std::span<double>{},
                                lg ? std::span<double>(lg->ln2_bias) : std::span<double>{}, scratch);
        }

        // Attention: x_mid = x_in + Wo concat_h(softmax(q k^T / sqrt(dh)) v)
        dq.fill(0.0);
        dk.fill(0.0);
        dv.fill(0.0);
        for (int t = 0; t < A; ++t) {
            const auto da = dx.row(t);
            std::fill(dconcat.begin(), dconcat.end(), 0.0);
            matvec_transposed_acc(lw.wo, da, dconcat);
            if (lg) outer_acc(lg->wo, da, lt.attn_concat.row(t));
            for (int hd = 0; hd < cfg.n_heads; ++hd) {
                const std::size_t off = static_cast<std::size_t>(hd) * dh;
                const std::span<const double> dout{dconcat.data() + off, static_cast<std::size_t>(dh)};
                const auto probs = lt.probs[hd].row(t);
                // dp_s = dout . v_s ; dscore_s = p_s (dp_s - sum_r p_r dp_r)
                double weighted = 0.0;
                for (int s = 0; s <= t; ++s) {
                    dp[s] = simd::dot(dout, std::span<const double>{lt.v.row(s).data() + off,
                                                                    static_cast<std::size_t>(dh)});
                    weighted += probs[s] * dp[s];
                }
                const std::span<const double> qt{lt.q.row(t).data() + off, static_cast<std::size_t>(dh)};
                const std::span<double> dqt{dq.row(t).data() + off, static_cast<std::size_t>(dh)};
                for (int s = 0; s <= t; ++s) {
                    simd::axpy(probs[s], dout, std::span<double>{dv.row(s).data() + off, static_cast<std::size_t>(dh)});
                    const double dscore = probs[s] * (dp[s] - weighted) * scale;
                    if (dscore == 0.0) continue;
                    simd::axpy(dscore, std::span<const double>{lt.k.row(s).data() + off, static_cast<std::size_t>(dh)},
                               dqt);
                    simd::axpy(dscore, qt, std::span<double>{dk.row(s).data() + off, static_cast<std::size_t>(dh)});
                }
            }
        }
        for (int t = 0; t < A; ++t) {
            std::fill(dh1.begin(), dh1.end(), 0.0);
            matvec_transposed_acc(lw.wq, dq.row(t), dh1);
            matvec_transposed_acc(lw.wk, dk.row(t), dh1);
            matvec_transposed_acc(lw.wv, dv.row(t), dh1);
            if (lg) {
                outer_acc(lg->wq, dq.row(t), lt.ln1_out.row(t));
                outer_acc(lg->wk, dk.row(t), lt.ln1_out.row(t));
                outer_acc(lg->wv, dv.row(t), lt.ln1_out.row(t));
            }
            layer_norm_backward(dh1, lt.ln1_xhat.row(t), lt.ln1_rstd[t], lw.ln1_gain, dx.row(t),
                                lg ? std::span<double>(lg->ln1_gain) : std::span<double>{},
                                lg ? std::span<double>(lg->ln1_bias) : std::span<double>{}, scratch);
        }
        if (l > 0) record(l - 1);
    }

    if (pg) {
        for (int t = 0; t < A; ++t) {
            simd::axpy(1.0, dx.row(t), pg->token_embedding.row(tape.tokens[t]));
            simd::axpy(1.0, dx.row(t), pg->position_embedding.row(t));
        }
    }
}

}  // namespace detail

ActivationCache forward(const Weights& weights, std::span<const Token> tokens,
                        std::span<const Intervention> interventions, std::optional<int> prompt_length) {
    const auto& cfg = weights.config;
    detail::check_tokens(cfg, tokens);
    detail::check_interventions(cfg, interventions);
    const int T = static_cast<int>(tokens.size());
    const int prompt = prompt_length.value_or(T);
    ActivationCache cache;
    detail::init_cache(cfg, T, cache);
    detail::Stepper stepper(weights, interventions, T);
    for (int t = 0; t < T; ++t) stepper.step(tokens[t], t, prompt, nullptr, &cache);
    return cache;
}

std::vector<Token> generate(const Weights& weights, std::span<const Token> prompt, const GenerateOptions& options,
                            std::span<const Intervention> interventions) {
    const auto& cfg = weights.config;
    detail::check_tokens(cfg, prompt);
    detail::check_interventions(cfg, interventions);
    if (options.max_new_tokens < 1) throw InvalidArgument("max_new_tokens must be >= 1");
    const int P = static_cast<int>(prompt.size());
    const int needed = P + options.max_new_tokens;
    if (needed > cfg.max_seq_len) {
        throw ContextOverflow("prompt of " + std::to_string(P) + " tokens plus " +
                              std::to_string(options.max_new_tokens) + " new tokens exceeds max_seq_len " +
                              std::to_string(cfg.max_seq_len));
    }
    detail::Stepper stepper(weights, interventions, needed);
    for (int t = 0; t < P; ++t) stepper.step(prompt[t], t, P, nullptr, nullptr);

    std::vector<Token> out;
    out.reserve(options.max_new_tokens);
    for (int i = 0; i < options.max_new_tokens; ++i) {
        const auto logits = stepper.logits();
        // max_element returns the first maximum, i.e. the lowest id on ties.
        const auto next = static_cast<Token>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        if (options.eos_token && next == *options.eos_token) break;
        out.push_back(next);
        if (i + 1 < options.max_new_tokens) stepper.step(next, P + i, P, nullptr, nullptr);
    }
    return out;
}

ResidualGradients residual_gradients(const Weights& weights, std::span<const Token> tokens, const LogitMetric& metric,
                                     std::span<const Intervention> interventions) {
    const auto& cfg = weights.config;
    detail::Tape tape;
    const int T = static_cast<int>(tokens.size());
    detail::forward_with_tape(weights, tokens, interventions, T, tape, nullptr);
    const int readout = metric.readout_position.value_or(T - 1);
    if (readout < 0 || readout >= T) {
        throw InvalidArgument("metric readout position " + std::to_string(readout) + " out of range [0, " +
                              std::to_string(T) + ")");
    }
    Matrix dlogits(T, cfg.vocab_size);
    ResidualGradients out;
    out.metric_value = metric.evaluate(tape.logits.row(readout), dlogits.row(readout));
    if (!std::isfinite(out.metric_value) || !all_finite(dlogits.row(readout))) {
        throw NonFiniteValue("metric evaluated to a non-finite value");
    }
    out.n_layers = cfg.n_layers;
    out.seq_len = T;
    out.d_model = cfg.d_model;
    out.grads.assign(static_cast<std::size_t>(cfg.n_layers) * T * cfg.d_model, 0.0);
    detail::BackwardRequest req;
    req.dlogits = &dlogits;
    req.active_len = readout + 1;
    req.lowest_layer = 0;
    req.residual_out = &out;
    detail::backward(weights, tape, req);
    return out;
}

std::vector<double> grad_wrt_activation(const Weights& weights, std::span<const Token> tokens, int layer, int position,
                                        const LogitMetric& metric, std::span<const Intervention> interventions) {
    const auto& cfg = weights.config;
    if (layer < 0 || layer >= cfg.n_layers) {
        throw InvalidArgument("layer " + std::to_string(layer) + " out of range [0, " +
                              std::to_string(cfg.n_layers) + ")");
    }
    if (position < 0 || position >= static_cast<int>(tokens.size())) {
        throw InvalidArgument("position " + std::to_string(position) + " out of range [0, " +
                              std::to_string(tokens.size()) + ")");
    }
    const auto grads = residual_gradients(weights, tokens, metric, interventions);
    const auto g = grads.at(layer, position);
    return {g.begin(), g.end()};
}

}  // namespace steerkit
