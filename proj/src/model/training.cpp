#include "steerkit/training.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "steerkit/errors.hpp"
#include "steerkit/metrics.hpp"
#include "transformer_internal.hpp"

namespace steerkit {
namespace {

void fill_normal(std::span<double> values, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : values) v = dist(rng);
}

Weights zero_like(const ModelConfig& config) {
    Weights w = Weights::zeros(config);
    for (auto& p : w.parameters()) std::fill(p.values.begin(), p.values.end(), 0.0);
    return w;
}

// Cross-entropy of tokens[t+1] under the logits at t, summed over t.
double sequence_loss(const Matrix& logits, std::span<const Token> tokens, Matrix* dlogits, double grad_scale) {
    double loss = 0.0;
    for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
        const auto lp = log_softmax(logits.row(t));
        loss -= lp[tokens[t + 1]];
        if (dlogits) {
            auto g = dlogits->row(t);
            for (std::size_t i = 0; i < lp.size(); ++i) g[i] = std::exp(lp[i]) * grad_scale;
            g[tokens[t + 1]] -= grad_scale;
        }
    }
    return loss;
}

std::size_t target_count(std::span<const std::vector<Token>> corpus) {
    std::size_t n = 0;
    for (const auto& s : corpus) n += s.size() > 1 ? s.size() - 1 : 0;
    return n;
}

}  // namespace

Weights initialize_weights(const ModelConfig& config, std::uint64_t seed) {
    Weights w = Weights::zeros(config);
    std::mt19937_64 rng(seed);
    const double d = config.d_model;
    const double resid_scale = 1.0 / std::sqrt(2.0 * config.n_layers);
    fill_normal(w.token_embedding.flat(), 0.5, rng);
    fill_normal(w.position_embedding.flat(), 0.1, rng);
    for (auto& l : w.layers) {
        fill_normal(l.wq.flat(), 1.0 / std::sqrt(d), rng);
        fill_normal(l.wk.flat(), 1.0 / std::sqrt(d), rng);
        fill_normal(l.wv.flat(), 1.0 / std::sqrt(d), rng);
        fill_normal(l.wo.flat(), resid_scale / std::sqrt(d), rng);
        fill_normal(l.w_up.flat(), 1.0 / std::sqrt(d), rng);
        fill_normal(l.w_down.flat(), resid_scale / std::sqrt(static_cast<double>(config.d_ff)), rng);
    }
    fill_normal(w.unembedding.flat(), 1.0 / std::sqrt(d), rng);
    w.round_to_storage_precision();
    return w;
}

double corpus_loss(const Weights& weights, std::span<const std::vector<Token>> corpus) {
    double total = 0.0;
    for (const auto& seq : corpus) {
        if (seq.size() < 2) continue;
        const auto cache = forward(weights, seq);
        total += sequence_loss(cache.logits, seq, nullptr, 0.0);
    }
    const auto n = target_count(corpus);
    return n ? total / static_cast<double>(n) : 0.0;
}

FitResult fit_toy_model(std::span<const std::vector<Token>> corpus, const ModelConfig& config, int steps,
                        std::uint64_t seed, const FitOptions& options) {
    if (corpus.empty()) throw InvalidArgument("fit_toy_model: corpus is empty");
    if (steps < 0) throw InvalidArgument("fit_toy_model: steps must be >= 0");
    if (options.checkpoint_interval < 10) throw InvalidArgument("fit_toy_model: checkpoint_interval must be >= 10");
    if (options.batch_size < 1) throw InvalidArgument("fit_toy_model: batch_size must be >= 1");
    if (!(options.learning_rate > 0.0) || !(options.grad_clip > 0.0)) {
        throw InvalidArgument("fit_toy_model: learning_rate and grad_clip must be positive");
    }
    config.validate();
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        detail::check_tokens(config, corpus[i]);
        if (corpus[i].size() >= 2) usable.push_back(i);
    }
    if (usable.empty()) throw InvalidArgument("fit_toy_model: no sequence has at least two tokens");

    FitResult result{initialize_weights(config, seed), {}};
    if (steps == 0) return result;

    Weights& w = result.weights;
    Weights grads = zero_like(config);
    Weights m = zero_like(config);
    Weights v = zero_like(config);
    auto wp = w.parameters();
    auto gp = grads.parameters();
    auto mp = m.parameters();
    auto vp = v.parameters();

    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

    auto checkpoint = [&](int step) {
        const double loss = corpus_loss(w, corpus);
        if (!std::isfinite(loss)) throw TrainingError("non-finite corpus loss at step " + std::to_string(step));
        auto& cps = result.report.checkpoints;
        if (!cps.empty() && loss > cps.back().loss) result.report.diverged = true;
        cps.push_back({step, loss});
    };
    checkpoint(0);

    detail::Tape tape;
    for (int step = 1; step <= steps; ++step) {
        for (auto& p : gp) std::fill(p.values.begin(), p.values.end(), 0.0);
        std::vector<std::size_t> batch(static_cast<std::size_t>(options.batch_size));
        std::size_t targets = 0;
        for (auto& b : batch) {
            b = usable[pick(rng)];
            targets += corpus[b].size() - 1;
        }
        const double scale = 1.0 / static_cast<double>(targets);
        double batch_loss = 0.0;
        for (auto b : batch) {
            const auto& seq = corpus[b];
            detail::forward_with_tape(w, seq, {}, static_cast<int>(seq.size()), tape, nullptr);
            Matrix dlogits(seq.size(), config.vocab_size);
            batch_loss += sequence_loss(tape.logits, seq, &dlogits, scale);
            detail::BackwardRequest req;
            req.dlogits = &dlogits;
            req.active_len = static_cast<int>(seq.size());
            req.param_grads = &grads;
            detail::backward(w, tape, req);
        }
        if (!std::isfinite(batch_loss)) throw TrainingError("non-finite training loss at step " + std::to_string(step));

        double sq = 0.0;
        for (const auto& p : gp)
            for (double g : p.values) sq += g * g;
        const double gnorm = std::sqrt(sq);
        const double clip = gnorm > options.grad_clip ? options.grad_clip / gnorm : 1.0;

        const double progress = static_cast<double>(step - 1) / std::max(1, steps - 1);
        const double decay = options.final_lr_fraction +
                             (1.0 - options.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
        const double lr = options.learning_rate * decay;
        const double bc1 = 1.0 - std::pow(kBeta1, step);
        const double bc2 = 1.0 - std::pow(kBeta2, step);
        for (std::size_t k = 0; k < wp.size(); ++k) {
            auto pw = wp[k].values;
            auto pg = gp[k].values;
            auto pm = mp[k].values;
            auto pv = vp[k].values;
            for (std::size_t i = 0; i < pw.size(); ++i) {
                const double g = pg[i] * clip;
                pm[i] = kBeta1 * pm[i] + (1.0 - kBeta1) * g;
                pv[i] = kBeta2 * pv[i] + (1.0 - kBeta2) * g * g;
                pw[i] -= lr * (pm[i] / bc1) / (std::sqrt(pv[i] / bc2) + kEps);
            }
        }
        if (step == steps) w.round_to_storage_precision();
        if (step % options.checkpoint_interval == 0 || step == steps) checkpoint(step);
    }
    return result;
}

}  // namespace steerkit
