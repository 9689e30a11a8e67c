#include "steerkit/weights_io.hpp"

#include <string>
#include <string_view>

#include "steerkit/errors.hpp"
#include "steerkit/fileio.hpp"
#include "steerkit/hash.hpp"
#include "../common/binary.hpp"

namespace steerkit {
namespace {

constexpr std::string_view kMagic = "STKW1";

using Writer = detail::ByteWriter;

class Reader : public detail::ByteReader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : ByteReader(data, "weight file") {}
};

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += " x ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const Weights& weights) {
    const auto& c = weights.config;
    Writer w;
    w.bytes(kMagic);
    w.u32(static_cast<std::uint32_t>(c.n_layers));
    w.u32(static_cast<std::uint32_t>(c.d_model));
    w.u32(static_cast<std::uint32_t>(c.n_heads));
    w.u32(static_cast<std::uint32_t>(c.d_ff));
    w.u32(static_cast<std::uint32_t>(c.vocab_size));
    w.u32(static_cast<std::uint32_t>(c.max_seq_len));
    w.f64(c.layernorm_epsilon);
    w.u8(c.final_norm ? 1 : 0);
    const auto params = weights.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.u16(static_cast<std::uint16_t>(p.name.size()));
        w.bytes(p.name);
        w.u8(static_cast<std::uint8_t>(p.shape.size()));
        for (auto dim : p.shape) w.u32(static_cast<std::uint32_t>(dim));
        for (double v : p.values) w.f32(static_cast<float>(v));
    }
    const auto checksum = Fnv1a64{}.update(w.data()).digest();
    w.u64(checksum);
    return w.take();
}

Weights deserialize_weights(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kMagic.size() + 8) throw ChecksumMismatch("weight file too short to hold a checksum");
    const auto body = bytes.first(bytes.size() - 8);
    Reader tail(bytes.last(8));
    const std::uint64_t stored = tail.u64("checksum");
    const std::uint64_t actual = Fnv1a64{}.update(body).digest();
    if (stored != actual) {
        throw ChecksumMismatch("weight file checksum mismatch (stored " + hex64(stored) + ", computed " +
                               hex64(actual) + ")");
    }

    Reader r(body);
    if (r.bytes(kMagic.size(), "magic") != kMagic) throw FormatError("not a STKW1 weight file (bad magic)");
    ModelConfig c;
    c.n_layers = static_cast<int>(r.u32("config"));
    c.d_model = static_cast<int>(r.u32("config"));
    c.n_heads = static_cast<int>(r.u32("config"));
    c.d_ff = static_cast<int>(r.u32("config"));
    c.vocab_size = static_cast<int>(r.u32("config"));
    c.max_seq_len = static_cast<int>(r.u32("config"));
    c.layernorm_epsilon = r.f64("config");
    c.final_norm = r.u8("config") != 0;
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("weight file config block: ") + e.what());
    }

    Weights w = Weights::zeros(c);
    auto params = w.parameters();
    const std::uint32_t count = r.u32("block count");
    if (count != params.size()) {
        throw ShapeMismatch("weight file has " + std::to_string(count) + " parameter blocks, config implies " +
                            std::to_string(params.size()));
    }
    for (auto& p : params) {
        const auto name_len = r.u16("block name length");
        const std::string name{r.bytes(name_len, "block name")};
        if (name != p.name) throw FormatError("expected parameter block '" + p.name + "', found '" + name + "'");
        const auto ndim = r.u8("block rank");
        std::vector<std::size_t> shape(ndim);
        for (auto& dim : shape) dim = r.u32("block shape");
        if (shape != p.shape) {
            throw ShapeMismatch("parameter block '" + name + "' has shape " + shape_string(shape) +
                                " but the config requires " + shape_string(p.shape));
        }
        for (double& v : p.values) v = static_cast<double>(r.f32("block values"));
    }
    if (!r.done()) throw FormatError("trailing bytes after the last parameter block");
    w.validate();
    return w;
}

void save_weights(const Weights& weights, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_weights(weights));
}

Weights load_weights(const std::filesystem::path& path) { return deserialize_weights(read_file_bytes(path)); }

std::uint64_t weights_fingerprint(const Weights& weights) {
    return Fnv1a64{}.update(serialize_weights(weights)).digest();
}

}  // namespace steerkit
