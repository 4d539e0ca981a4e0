#pragma once

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dfc/error.hpp"
#include "dfc/tensor.hpp"

namespace dfc {

static_assert(std::endian::native == std::endian::little, "archive encoding assumes a little-endian host");

using Digest = std::array<unsigned char, 32>;

inline Digest sha256(std::string_view bytes) {
    Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
        throw Error("SHA-256 computation failed");
    return out;
}

inline std::string hex(const Digest& d) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    for (unsigned char c : d) {
        s.push_back(digits[c >> 4]);
        s.push_back(digits[c & 15]);
    }
    return s;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

class ByteWriter {
public:
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void i64(std::int64_t v) { raw(&v, sizeof v); }
    void str(std::string_view s) {
        u64(s.size());
        buf_.append(s);
    }
    void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }

    template <class T>
    void tensor(const std::string& name, const Tensor<T>& t) {
        str(name);
        u32(sizeof(T));
        u32(static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) i64(d);
        raw(t.data(), t.numel() * sizeof(T));
    }

    const std::string& bytes() const noexcept { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::uint32_t u32() { return pod<std::uint32_t>(); }
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    std::int64_t i64() { return pod<std::int64_t>(); }
    std::string str() {
        const auto n = u64();
        return std::string(take(n));
    }
    std::string_view take(std::size_t n) {
        if (n > bytes_.size() - pos_) throw CorruptionError("archive truncated");
        auto out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    /// Reads a tensor stored as float32 or float64 and converts it to T.
    template <class T>
    std::pair<std::string, Tensor<T>> tensor() {
        std::string name = str();
        const auto width = u32();
        const auto rank = u32();
        if (rank > 8 || (width != 4 && width != 8)) throw CorruptionError("bad tensor header for " + name);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto d = i64();
            if (d < 0 || d > (1 << 30)) throw CorruptionError("bad tensor dimension for " + name);
            shape.push_back(static_cast<int>(d));
        }
        const std::size_t n = shape_numel(shape);
        auto raw = take(n * width);
        Tensor<T> t(shape);
        if (width == 4) {
            std::vector<float> tmp(n);
            std::memcpy(tmp.data(), raw.data(), raw.size());
            for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<T>(tmp[i]);
        } else {
            std::vector<double> tmp(n);
            std::memcpy(tmp.data(), raw.data(), raw.size());
            for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<T>(tmp[i]);
        }
        return {std::move(name), std::move(t)};
    }

    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    template <class P>
    P pod() {
        P v;
        auto s = take(sizeof v);
        std::memcpy(&v, s.data(), sizeof v);
        return v;
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

/// Sealed container: 4-byte magic, u32 version, u64 body length, body,
/// SHA-256 of everything before the digest.
inline std::string seal(std::string_view magic, std::uint32_t version, std::string_view body) {
    ByteWriter w;
    w.raw(magic.data(), magic.size());
    w.u32(version);
    w.u64(body.size());
    w.raw(body.data(), body.size());
    const Digest d = sha256(w.bytes());
    w.raw(d.data(), d.size());
    return w.bytes();
}

/// Verifies magic, version and digest; returns the body.
inline std::string unseal(std::string_view bytes, std::string_view magic, std::uint32_t version,
                          const std::string& what) {
    const std::size_t header = magic.size() + 4 + 8;
    if (bytes.size() < magic.size() || bytes.substr(0, magic.size()) != magic)
        throw CorruptionError(what + ": bad magic bytes");
    if (bytes.size() < header + 32) throw CorruptionError(what + ": file truncated");
    ByteReader r(bytes.substr(magic.size()));
    const auto found = r.u32();
    if (found != version)
        throw VersionError(what + ": format version " + std::to_string(found) + " is not supported (expected version " +
                           std::to_string(version) + ")");
    const auto len = r.u64();
    if (len != bytes.size() - header - 32) throw CorruptionError(what + ": file truncated or padded");
    const Digest expect = sha256(bytes.substr(0, header + len));
    if (std::memcmp(expect.data(), bytes.data() + header + len, 32) != 0)
        throw CorruptionError(what + ": content hash mismatch");
    return std::string(bytes.substr(header, len));
}

inline constexpr std::string_view kTensorFileMagic = "DFCT";
inline constexpr std::uint32_t kTensorFileVersion = 1;

/// Named tensors in a sealed file, used for frozen estimator and
/// feature-extractor weights.
template <class T>
void save_tensor_file(const std::filesystem::path& path, const std::map<std::string, Tensor<T>>& tensors) {
    ByteWriter body;
    body.u64(tensors.size());
    for (const auto& [name, t] : tensors) body.tensor(name, t);
    write_file_atomic(path, seal(kTensorFileMagic, kTensorFileVersion, body.bytes()));
}

template <class T>
std::map<std::string, Tensor<T>> load_tensor_file(const std::filesystem::path& path) {
    const std::string body = unseal(read_file_bytes(path), kTensorFileMagic, kTensorFileVersion, path.string());
    ByteReader r(body);
    std::map<std::string, Tensor<T>> out;
    const auto n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        auto [name, t] = r.tensor<T>();
        out.emplace(std::move(name), std::move(t));
    }
    if (!r.done()) throw CorruptionError(path.string() + ": trailing bytes");
    return out;
}

}  // namespace dfc
