#include "steerkit/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "../common/binary.hpp"
#include "json.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/fileio.hpp"
#include "steerkit/hash.hpp"
#include "steerkit/simd/kernels.hpp"
#include "steerkit/weights_io.hpp"

namespace steerkit {

ContrastiveSplit make_split(std::span<const AnnotatedPrompt> corpus, BehaviorLabel category) {
    ContrastiveSplit split{category, {}, {}};
    for (const auto& p : corpus) {
        split.d_minus.push_back(p.id);
        const bool has = std::any_of(p.chain.segments.begin(), p.chain.segments.end(),
                                     [&](const Segment& s) { return s.label == category; });
        if (has) split.d_plus.push_back(p.id);
    }
    return split;
}

std::vector<int> category_positions(const TokenSpanSet& spans, BehaviorLabel category) {
    std::vector<int> out;
    for (const auto& s : spans.spans) {
        if (s.label == category) out.insert(out.end(), s.positions.begin(), s.positions.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

void check_layer(const ActivationCache& cache, int layer) {
    if (layer < 0 || layer >= cache.n_layers) {
        throw InvalidArgument("layer " + std::to_string(layer) + " out of range [0, " +
                              std::to_string(cache.n_layers) + ")");
    }
}

std::vector<double> mean_over(const ActivationCache& cache, int layer, std::span<const int> positions) {
    std::vector<double> acc(static_cast<std::size_t>(cache.d_model), 0.0);
    for (int p : positions) {
        if (p < 0 || p >= cache.seq_len) {
            throw InvalidArgument("span position " + std::to_string(p) + " outside the cached sequence of length " +
                                  std::to_string(cache.seq_len));
        }
        simd::axpy(1.0, cache.at(layer, p), acc);
    }
    const double inv = 1.0 / static_cast<double>(positions.size());
    for (double& x : acc) x *= inv;
    return acc;
}

}  // namespace

std::vector<double> category_mean(const ActivationCache& cache, const TokenSpanSet& spans, BehaviorLabel category,
                                  int layer) {
    check_layer(cache, layer);
    const auto positions = category_positions(spans, category);
    if (positions.empty()) {
        throw InvalidArgument("no \"" + std::string(to_string(category)) + "\" span in this prompt");
    }
    return mean_over(cache, layer, positions);
}

std::vector<double> all_token_mean(const ActivationCache& cache, int layer) {
    check_layer(cache, layer);
    if (cache.seq_len == 0) throw InvalidArgument("empty activation cache");
    std::vector<int> positions(static_cast<std::size_t>(cache.seq_len));
    for (int i = 0; i < cache.seq_len; ++i) positions[static_cast<std::size_t>(i)] = i;
    return mean_over(cache, layer, positions);
}

std::vector<double> difference_of_means(std::span<const PromptActivations> corpus, const ContrastiveSplit& split,
                                        int layer) {
    if (split.d_plus.empty()) {
        throw InvalidArgument("empty D+ for \"" + std::string(to_string(split.category)) + "\"");
    }
    if (split.d_minus.empty()) throw InvalidArgument("empty D-");
    std::unordered_map<std::string_view, const PromptActivations*> by_id;
    for (const auto& p : corpus) by_id.emplace(p.id, &p);
    auto lookup = [&](const std::string& id) -> const PromptActivations& {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw InvalidArgument("no activations for prompt '" + id + "'");
        return *it->second;
    };

    const int d = lookup(split.d_minus.front()).cache.d_model;
    std::vector<double> plus(static_cast<std::size_t>(d), 0.0);
    std::vector<double> minus(static_cast<std::size_t>(d), 0.0);
    for (const auto& id : split.d_plus) {
        const auto& p = lookup(id);
        simd::axpy(1.0, category_mean(p.cache, p.spans, split.category, layer), plus);
    }
    for (const auto& id : split.d_minus) simd::axpy(1.0, all_token_mean(lookup(id).cache, layer), minus);
    std::vector<double> u(static_cast<std::size_t>(d));
    const double np = static_cast<double>(split.d_plus.size());
    const double nm = static_cast<double>(split.d_minus.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = plus[i] / np - minus[i] / nm;
    return u;
}

std::vector<double> normalize_vector(std::span<const double> raw, double target_norm) {
    const double n = norm(raw);
    if (!(n > 0.0)) throw InvalidArgument("cannot normalize a zero-norm steering vector");
    if (!(target_norm > 0.0) || !std::isfinite(target_norm)) {
        throw InvalidArgument("normalization target must be positive and finite");
    }
    const double scale = target_norm / n;
    std::vector<double> out(raw.begin(), raw.end());
    for (double& x : out) x *= scale;
    return out;
}

std::vector<double> normalize_vector(std::span<const double> raw, std::span<const double> overall_mean) {
    if (raw.size() != overall_mean.size()) throw InvalidArgument("raw vector and overall mean differ in length");
    return normalize_vector(raw, norm(overall_mean));
}

DiffMeansAccumulator::DiffMeansAccumulator(int n_layers, int d_model, std::vector<BehaviorLabel> categories)
    : n_layers_(n_layers), d_model_(d_model), categories_(std::move(categories)) {
    if (n_layers < 1 || d_model < 1) throw InvalidArgument("accumulator needs n_layers >= 1 and d_model >= 1");
    for (std::size_t i = 0; i < categories_.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (categories_[i] == categories_[j]) {
                throw InvalidArgument("duplicate category \"" + std::string(to_string(categories_[i])) + "\"");
            }
        }
    }
    const auto ld = static_cast<std::size_t>(n_layers) * static_cast<std::size_t>(d_model);
    d_plus_.assign(categories_.size(), 0);
    category_sum_.assign(categories_.size() * ld, 0.0);
    prompt_sum_.assign(ld, 0.0);
    token_sum_.assign(ld, 0.0);
}

std::size_t DiffMeansAccumulator::slot(BehaviorLabel category) const {
    const auto it = std::find(categories_.begin(), categories_.end(), category);
    if (it == categories_.end()) {
        throw InvalidArgument("category \"" + std::string(to_string(category)) + "\" is not accumulated");
    }
    return static_cast<std::size_t>(it - categories_.begin());
}

void DiffMeansAccumulator::add(const ActivationCache& cache, const TokenSpanSet& spans) {
    if (cache.n_layers != n_layers_ || cache.d_model != d_model_) {
        throw InvalidArgument("activation cache shape does not match the accumulator");
    }
    if (cache.seq_len == 0) throw InvalidArgument("empty activation cache");
    const auto d = static_cast<std::size_t>(d_model_);
    const auto ld = static_cast<std::size_t>(n_layers_) * d;
    for (std::size_t c = 0; c < categories_.size(); ++c) {
        const auto positions = category_positions(spans, categories_[c]);
        if (positions.empty()) continue;
        ++d_plus_[c];
        for (int l = 0; l < n_layers_; ++l) {
            const auto m = mean_over(cache, l, positions);
            simd::axpy(1.0, m, std::span<double>(category_sum_.data() + c * ld + static_cast<std::size_t>(l) * d, d));
        }
    }
    for (int l = 0; l < n_layers_; ++l) {
        std::span<double> tokens(token_sum_.data() + static_cast<std::size_t>(l) * d, d);
        std::vector<double> prompt(d, 0.0);
        for (int t = 0; t < cache.seq_len; ++t) simd::axpy(1.0, cache.at(l, t), prompt);
        simd::axpy(1.0, prompt, tokens);
        simd::axpy(1.0 / static_cast<double>(cache.seq_len), prompt,
                   std::span<double>(prompt_sum_.data() + static_cast<std::size_t>(l) * d, d));
    }
    ++prompts_;
    tokens_ += cache.seq_len;
}

int DiffMeansAccumulator::d_plus_count(BehaviorLabel category) const { return d_plus_[slot(category)]; }

std::optional<std::vector<double>> DiffMeansAccumulator::raw(BehaviorLabel category, int layer) const {
    if (layer < 0 || layer >= n_layers_) throw InvalidArgument("layer " + std::to_string(layer) + " out of range");
    const auto c = slot(category);
    if (d_plus_[c] == 0) return std::nullopt;
    const auto d = static_cast<std::size_t>(d_model_);
    const auto base = static_cast<std::size_t>(layer) * d;
    const auto cbase = c * static_cast<std::size_t>(n_layers_) * d + base;
    std::vector<double> u(d);
    for (std::size_t i = 0; i < d; ++i) {
        u[i] = category_sum_[cbase + i] / d_plus_[c] - prompt_sum_[base + i] / prompts_;
    }
    return u;
}

std::vector<double> DiffMeansAccumulator::overall_mean(int layer) const {
    if (layer < 0 || layer >= n_layers_) throw InvalidArgument("layer " + std::to_string(layer) + " out of range");
    if (tokens_ == 0) throw InvalidArgument("accumulator has seen no tokens");
    const auto d = static_cast<std::size_t>(d_model_);
    std::vector<double> m(token_sum_.begin() + static_cast<std::ptrdiff_t>(layer * d),
                          token_sum_.begin() + static_cast<std::ptrdiff_t>((layer + 1) * d));
    for (double& x : m) x /= static_cast<double>(tokens_);
    return m;
}

SteeringVectorBank::SteeringVectorBank(int d_model, int n_layers, std::uint64_t model_fingerprint,
                                       std::uint64_t corpus_hash)
    : d_model_(d_model), n_layers_(n_layers), model_fingerprint_(model_fingerprint), corpus_hash_(corpus_hash) {}

void SteeringVectorBank::insert(SteeringVector v) {
    if (static_cast<int>(v.raw.size()) != d_model_ || static_cast<int>(v.normalized.size()) != d_model_) {
        throw InvalidArgument("steering vector has dimension " + std::to_string(v.raw.size()) + ", bank expects " +
                              std::to_string(d_model_));
    }
    if (v.layer < 0 || v.layer >= n_layers_) {
        throw InvalidArgument("steering vector layer " + std::to_string(v.layer) + " out of range");
    }
    const Key key{v.category, v.layer};
    if (entries_.count(key)) {
        throw InvalidArgument("bank already holds \"" + std::string(to_string(v.category)) + "\" at layer " +
                              std::to_string(v.layer));
    }
    entries_.emplace(key, std::move(v));
}

const SteeringVector* SteeringVectorBank::find(BehaviorLabel category, int layer) const {
    const auto it = entries_.find({category, layer});
    return it == entries_.end() ? nullptr : &it->second;
}

const SteeringVector& SteeringVectorBank::at(BehaviorLabel category, int layer) const {
    if (const auto* v = find(category, layer)) return *v;
    throw InvalidArgument("bank has no \"" + std::string(to_string(category)) + "\" vector at layer " +
                          std::to_string(layer));
}

bool SteeringVectorBank::has_category(BehaviorLabel category) const {
    const auto it = entries_.lower_bound({category, 0});
    return it != entries_.end() && it->first.first == category;
}

std::vector<BehaviorLabel> SteeringVectorBank::categories() const {
    std::vector<BehaviorLabel> out;
    for (const auto& [key, _] : entries_) {
        if (out.empty() || out.back() != key.first) out.push_back(key.first);
    }
    return out;
}

SteeringVectorBank bank_from_accumulator(const DiffMeansAccumulator& acc, std::uint64_t model_fingerprint,
                                         std::uint64_t corpus_hash) {
    if (acc.prompt_count() == 0) throw InvalidArgument("cannot build a bank from an empty corpus");
    const int n_layers = acc.n_layers();
    const int d_model = acc.d_model();
    SteeringVectorBank bank(d_model, n_layers, model_fingerprint, corpus_hash);
    for (auto category : acc.categories()) {
        if (acc.d_plus_count(category) == 0) {
            bank.skipped.push_back({category, std::nullopt, "no prompt contains a segment of this category"});
            continue;
        }
        for (int l = 0; l < n_layers; ++l) {
            auto raw = *acc.raw(category, l);
            const auto overall = acc.overall_mean(l);
            const double target = norm(overall);
            if (!(norm(raw) > 0.0)) {
                bank.skipped.push_back({category, l, "difference of means has zero norm"});
                continue;
            }
            if (!(target > 0.0)) {
                bank.skipped.push_back({category, l, "mean overall activation has zero norm"});
                continue;
            }
            SteeringVector v{category, l, raw, normalize_vector(raw, target), target, corpus_hash,
                             acc.d_plus_count(category), acc.prompt_count()};
            bank.insert(std::move(v));
        }
    }
    return bank;
}

SteeringVectorBank build_bank(const Weights& weights, std::span<const AnnotatedPrompt> corpus,
                              std::span<const BehaviorLabel> categories) {
    if (corpus.empty()) throw InvalidArgument("cannot build a bank from an empty corpus");
    const auto& c = weights.config;
    DiffMeansAccumulator acc(c.n_layers, c.d_model, {categories.begin(), categories.end()});
    for (const auto& p : corpus) {
        const auto spans = spans_for(p);
        const auto cache = forward(weights, p.tokens, {}, p.prompt_length);
        acc.add(cache, spans);
    }
    return bank_from_accumulator(acc, weights_fingerprint(weights), corpus_hash(corpus));
}

namespace {

constexpr std::string_view kBankMagic = "STKBANK1";

BehaviorLabel label_from_json(const nlohmann::json& j) {
    const auto name = j.get<std::string>();
    const auto label = parse_label(name);
    if (!label) throw FormatError("bank file: unknown category \"" + name + "\"");
    return *label;
}

}  // namespace

std::vector<std::uint8_t> serialize_bank(const SteeringVectorBank& bank) {
    nlohmann::ordered_json header;
    header["d_model"] = bank.d_model();
    header["n_layers"] = bank.n_layers();
    header["model_fingerprint"] = hex64(bank.model_fingerprint());
    header["corpus_hash"] = hex64(bank.corpus_hash());
    auto entries = nlohmann::ordered_json::array();
    for (const auto& [key, v] : bank.entries()) {
        nlohmann::ordered_json e;
        e["category"] = to_string(v.category);
        e["layer"] = v.layer;
        e["overall_mean_norm"] = v.overall_mean_norm;
        e["corpus_hash"] = hex64(v.corpus_hash);
        e["d_plus"] = v.d_plus_count;
        e["d_minus"] = v.d_minus_count;
        entries.push_back(std::move(e));
    }
    header["entries"] = std::move(entries);
    auto skipped = nlohmann::ordered_json::array();
    for (const auto& s : bank.skipped) {
        nlohmann::ordered_json e;
        e["category"] = to_string(s.category);
        e["layer"] = s.layer ? nlohmann::ordered_json(*s.layer) : nlohmann::ordered_json(nullptr);
        e["reason"] = s.reason;
        skipped.push_back(std::move(e));
    }
    header["skipped"] = std::move(skipped);
    const std::string text = header.dump();

    detail::ByteWriter w;
    w.bytes(kBankMagic);
    w.u64(text.size());
    w.bytes(text);
    for (const auto& [key, v] : bank.entries()) {
        for (double x : v.raw) w.f64(x);
        for (double x : v.normalized) w.f64(x);
    }
    w.u64(Fnv1a64{}.update(w.data()).digest());
    return w.take();
}

SteeringVectorBank deserialize_bank(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kBankMagic.size() + 16) throw ChecksumMismatch("bank file too short to hold a checksum");
    const auto body = bytes.first(bytes.size() - 8);
    detail::ByteReader tail(bytes.last(8), "bank file");
    const auto stored = tail.u64("checksum");
    const auto actual = Fnv1a64{}.update(body).digest();
    if (stored != actual) {
        throw ChecksumMismatch("bank file checksum mismatch (stored " + hex64(stored) + ", computed " +
                               hex64(actual) + ")");
    }
    detail::ByteReader r(body, "bank file");
    if (r.bytes(kBankMagic.size(), "magic") != kBankMagic) throw FormatError("not a STKBANK1 file (bad magic)");
    const auto header_len = r.u64("header length");
    if (header_len > body.size()) throw FormatError("bank file header length exceeds the file size");
    const auto header_text = r.bytes(static_cast<std::size_t>(header_len), "header");
    try {
        const auto h = nlohmann::json::parse(header_text);
        const int d = h.at("d_model").get<int>();
        const int n_layers = h.at("n_layers").get<int>();
        if (d < 1 || n_layers < 1) throw FormatError("bank file header has invalid dimensions");
        SteeringVectorBank bank(d, n_layers, parse_hex64(h.at("model_fingerprint").get<std::string>()),
                                parse_hex64(h.at("corpus_hash").get<std::string>()));
        for (const auto& e : h.at("entries")) {
            SteeringVector v;
            v.category = label_from_json(e.at("category"));
            v.layer = e.at("layer").get<int>();
            v.overall_mean_norm = e.at("overall_mean_norm").get<double>();
            v.corpus_hash = parse_hex64(e.at("corpus_hash").get<std::string>());
            v.d_plus_count = e.at("d_plus").get<int>();
            v.d_minus_count = e.at("d_minus").get<int>();
            v.raw.resize(static_cast<std::size_t>(d));
            v.normalized.resize(static_cast<std::size_t>(d));
            for (double& x : v.raw) x = r.f64("vector payload");
            for (double& x : v.normalized) x = r.f64("vector payload");
            try {
                bank.insert(std::move(v));
            } catch (const InvalidArgument& ex) {
                throw FormatError(std::string("bank file: ") + ex.what());
            }
        }
        for (const auto& e : h.at("skipped")) {
            BankSkip s{label_from_json(e.at("category")), std::nullopt, e.at("reason").get<std::string>()};
            if (!e.at("layer").is_null()) s.layer = e.at("layer").get<int>();
            bank.skipped.push_back(std::move(s));
        }
        if (!r.done()) throw FormatError("trailing bytes after the bank payload");
        return bank;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bank file header: ") + e.what());
    }
}

void save_bank(const SteeringVectorBank& bank, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_bank(bank));
}

SteeringVectorBank load_bank(const std::filesystem::path& path) { return deserialize_bank(read_file_bytes(path)); }

}  // namespace steerkit
