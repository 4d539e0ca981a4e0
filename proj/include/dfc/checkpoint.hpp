#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "dfc/archive.hpp"
#include "dfc/types.hpp"

namespace dfc {

inline constexpr std::string_view kCheckpointMagic = "DFCN";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume or run a trained model. Tensor names are
/// prefixed by owner: refiner., static_encoder., generator., projection.,
/// discriminator. for parameters and buffers; adam.g. / adam.d. for moments.
struct Checkpoint {
    std::string config_text;
    std::string fingerprint;
    std::int64_t iteration = 0;
    std::string rng_state;
    std::int64_t generator_steps = 0;
    std::int64_t critic_steps = 0;
    std::map<std::string, Tensor<float>> tensors;

    ModelConfig config() const { return parse_config(config_text); }

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::string encode_checkpoint(const Checkpoint& c) {
    ByteWriter w;
    w.str(c.config_text);
    w.str(c.fingerprint);
    w.i64(c.iteration);
    w.str(c.rng_state);
    w.i64(c.generator_steps);
    w.i64(c.critic_steps);
    w.u64(c.tensors.size());
    for (const auto& [name, t] : c.tensors) w.tensor(name, t);
    return seal(kCheckpointMagic, kCheckpointVersion, w.bytes());
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
    const std::string body = unseal(bytes, kCheckpointMagic, kCheckpointVersion, what);
    ByteReader r(body);
    Checkpoint c;
    c.config_text = r.str();
    c.fingerprint = r.str();
    c.iteration = r.i64();
    c.rng_state = r.str();
    c.generator_steps = r.i64();
    c.critic_steps = r.i64();
    const auto n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        auto [name, t] = r.tensor<float>();
        c.tensors.emplace(std::move(name), std::move(t));
    }
    if (!r.done()) throw CorruptionError(what + ": trailing bytes");
    return c;
}

/// Atomic: written to a temporary file, then renamed.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    write_file_atomic(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace dfc
