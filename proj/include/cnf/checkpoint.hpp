#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cnf/errors.hpp"
#include "cnf/layers.hpp"
#include "cnf/tensor.hpp"

namespace cnf {

class bad_magic_error : public data_error {
public:
    using data_error::data_error;
};
class bad_version_error : public data_error {
public:
    using data_error::data_error;
};
class bad_checksum_error : public data_error {
public:
    using data_error::data_error;
};
class corrupt_checkpoint_error : public data_error {
public:
    using data_error::data_error;
};

/// Everything needed to resume or evaluate a training run: the model
/// text, parameter tensors, optimizer moments, input normalization stats
/// and the training rng state.
struct Checkpoint {
    static constexpr std::uint16_t kVersion = 1;

    std::uint32_t epoch = 0;
    std::uint64_t config_digest = 0;
    std::array<std::uint64_t, 4> rng_state{};
    double norm_mean = 0.0;
    double norm_std = 1.0;
    ModelSpec model;
    std::vector<Tensor> params;

    std::uint8_t opt_kind = 0; // 0 = sgd / none, 1 = adam
    std::uint64_t opt_step = 0;
    std::vector<Tensor> opt_m;
    std::vector<Tensor> opt_v;
};

namespace detail {

inline std::uint32_t crc32_update(std::uint32_t crc, const unsigned char* data,
                                  std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int b = 0; b < 8; ++b) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return ~crc;
}

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const unsigned char* c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    std::vector<unsigned char>& data() { return buf_; }

private:
    std::vector<unsigned char> buf_;
};

class ByteReader {
public:
    ByteReader(const std::vector<unsigned char>& buf, std::string name)
        : buf_(buf), name_(std::move(name)) {}

    std::uint8_t u8() { return take(1)[0]; }
    std::uint16_t u16() { return static_cast<std::uint16_t>(gather(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(gather(4)); }
    std::uint64_t u64() { return gather(8); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string str(std::size_t n) {
        const unsigned char* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    const unsigned char* take(std::size_t n) {
        if (buf_.size() - pos_ < n)
            throw corrupt_checkpoint_error("checkpoint " + name_ + " truncated at byte " +
                                           std::to_string(pos_));
        const unsigned char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::uint64_t gather(std::size_t n) {
        const unsigned char* p = take(n);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }

    const std::vector<unsigned char>& buf_;
    std::string name_;
    std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, const Tensor& t) {
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double v : t.values()) w.f64(v);
}

inline Tensor read_tensor(ByteReader& r) {
    const std::size_t rank = r.u8();
    std::vector<std::size_t> shape(rank);
    std::size_t vol = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        shape[i] = r.u32();
        vol *= shape[i];
    }
    std::vector<double> data(vol);
    for (double& v : data) v = r.f64();
    return Tensor(std::move(shape), std::move(data));
}

inline void write_tensor_list(ByteWriter& w, const std::vector<Tensor>& ts) {
    w.u32(static_cast<std::uint32_t>(ts.size()));
    for (const Tensor& t : ts) write_tensor(w, t);
}

inline std::vector<Tensor> read_tensor_list(ByteReader& r) {
    const std::size_t n = r.u32();
    std::vector<Tensor> ts;
    ts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) ts.push_back(read_tensor(r));
    return ts;
}

} // namespace detail

/// FNV-1a digest used to fingerprint run configurations.
inline std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// File layout (little-endian throughout): magic "CNF1", version u16,
/// epoch u32, config digest u64, rng state 4xu64, normalization mean/std
/// f64, length-prefixed canonical model text, parameter tensors (rank u8,
/// extents u32 each, payload f64), optimizer block, trailing CRC32 of all
/// preceding bytes.
inline void checkpoint_save(const Checkpoint& ckpt, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.bytes("CNF1", 4);
    w.u16(Checkpoint::kVersion);
    w.u32(ckpt.epoch);
    w.u64(ckpt.config_digest);
    for (std::uint64_t s : ckpt.rng_state) w.u64(s);
    w.f64(ckpt.norm_mean);
    w.f64(ckpt.norm_std);
    const std::string model_text = render_model_spec(ckpt.model);
    w.u32(static_cast<std::uint32_t>(model_text.size()));
    w.bytes(model_text.data(), model_text.size());
    detail::write_tensor_list(w, ckpt.params);
    w.u8(ckpt.opt_kind);
    if (ckpt.opt_kind == 1) {
        w.u64(ckpt.opt_step);
        detail::write_tensor_list(w, ckpt.opt_m);
        detail::write_tensor_list(w, ckpt.opt_v);
    }
    const std::uint32_t crc = detail::crc32_update(0, w.data().data(), w.data().size());
    w.u32(crc);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot write checkpoint " + path.string());
    f.write(reinterpret_cast<const char*>(w.data().data()),
            static_cast<std::streamsize>(w.data().size()));
    if (!f) throw io_error("short write to checkpoint " + path.string());
}

inline Checkpoint checkpoint_load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());

    if (bytes.size() < 4 || std::string(bytes.begin(), bytes.begin() + 4) != "CNF1")
        throw bad_magic_error("checkpoint " + path.string() +
                              ": bad magic (expected \"CNF1\")");

    detail::ByteReader r(bytes, path.string());
    r.str(4); // magic, already checked
    Checkpoint ckpt;
    const std::uint16_t version = r.u16();
    if (version != Checkpoint::kVersion)
        throw bad_version_error("checkpoint " + path.string() + ": unsupported version " +
                                std::to_string(version));
    ckpt.epoch = r.u32();
    ckpt.config_digest = r.u64();
    for (std::uint64_t& s : ckpt.rng_state) s = r.u64();
    ckpt.norm_mean = r.f64();
    ckpt.norm_std = r.f64();
    const std::size_t text_len = r.u32();
    ckpt.model = parse_model_spec(r.str(text_len));
    ckpt.params = detail::read_tensor_list(r);
    ckpt.opt_kind = r.u8();
    if (ckpt.opt_kind == 1) {
        ckpt.opt_step = r.u64();
        ckpt.opt_m = detail::read_tensor_list(r);
        ckpt.opt_v = detail::read_tensor_list(r);
    }
    if (r.remaining() != 4)
        throw corrupt_checkpoint_error("checkpoint " + path.string() +
                                       (r.remaining() < 4 ? " truncated before the checksum"
                                                          : ": trailing bytes after optimizer state"));
    const std::uint32_t stored_crc = r.u32();
    const std::uint32_t computed_crc =
        detail::crc32_update(0, bytes.data(), bytes.size() - 4);
    if (stored_crc != computed_crc)
        throw bad_checksum_error("checkpoint " + path.string() + ": CRC32 mismatch (stored " +
                                 std::to_string(stored_crc) + ", computed " +
                                 std::to_string(computed_crc) + ")");
    return ckpt;
}

} // namespace cnf
