#include "steerkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "steerkit/errors.hpp"

namespace steerkit {

std::vector<double> log_softmax(std::span<const double> logits) {
    if (logits.empty()) throw InvalidArgument("log_softmax of an empty vector");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double z : logits) total += std::exp(z - mx);
    const double lse = mx + std::log(total);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    auto out = log_softmax(logits);
    for (double& v : out) v = std::exp(v);
    return out;
}

double kl_next_token(std::span<const double> logits_clean, std::span<const double> logits_patched) {
    if (logits_clean.size() != logits_patched.size()) {
        throw InvalidArgument("kl_next_token: length mismatch (" + std::to_string(logits_clean.size()) + " vs " +
                              std::to_string(logits_patched.size()) + ")");
    }
    if (!all_finite(logits_clean) || !all_finite(logits_patched)) {
        throw NonFiniteValue("kl_next_token: non-finite logits");
    }
    const auto lp = log_softmax(logits_clean);
    const auto lq = log_softmax(logits_patched);
    double kl = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
    // Rounding can leave a tiny negative residue for near-identical inputs.
    return std::max(kl, 0.0);
}

double kl_from_reference(std::span<const double> reference, std::span<const double> logits) {
    if (reference.size() != logits.size()) throw InvalidArgument("kl_from_reference: length mismatch");
    if (!all_finite(logits)) throw NonFiniteValue("kl_from_reference: non-finite logits");
    const auto lq = log_softmax(logits);
    double kl = 0.0;
    for (std::size_t i = 0; i < lq.size(); ++i) {
        if (reference[i] > 0.0) kl += reference[i] * (std::log(reference[i]) - lq[i]);
    }
    return kl;
}

LogitMetric kl_metric(std::vector<double> reference, std::optional<int> readout_position) {
    LogitMetric m;
    m.readout_position = readout_position;
    m.evaluate = [reference = std::move(reference)](std::span<const double> logits, std::span<double> grad) {
        const double value = kl_from_reference(reference, logits);
        const auto q = softmax(logits);
        for (std::size_t i = 0; i < q.size(); ++i) grad[i] = q[i] - reference[i];
        return value;
    };
    return m;
}

LogitMetric token_logit_metric(Token token, std::optional<int> readout_position) {
    LogitMetric m;
    m.readout_position = readout_position;
    m.evaluate = [token](std::span<const double> logits, std::span<double> grad) {
        if (token < 0 || static_cast<std::size_t>(token) >= logits.size()) {
            throw InvalidArgument("token_logit_metric: token " + std::to_string(token) + " out of range");
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        grad[token] = 1.0;
        return logits[token];
    };
    return m;
}

}  // namespace steerkit
