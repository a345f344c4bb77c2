#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "attnconv/model.hpp"

namespace attnconv {

// ATW1 layout, little-endian:
//   "ATW1" | u32 tensor_count
//   per tensor: u16 name_len | name | u8 dtype (0 = f32) | u8 ndim | u32 dims[ndim] | f32 payload
//   u32 CRC32 of every preceding byte

inline constexpr char kAtw1Magic[4] = {'A', 'T', 'W', '1'};

struct RawTensor {
    std::string name;
    Shape dims;
    std::vector<float> values;
};

namespace detail {

class ByteWriter {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    template <class U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        le(bits);
    }
    std::vector<std::uint8_t>& buffer() { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& buf, std::size_t end, std::string what)
        : buf_(buf), end_(end), what_(std::move(what)) {}

    void need(std::size_t n, const std::string& field) const {
        if (pos_ + n > end_) {
            throw DataError(what_ + ": truncated payload while reading " + field + " at byte " + std::to_string(pos_));
        }
    }
    template <class U>
    U le(const std::string& field) {
        need(sizeof(U), field);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }
    float f32(const std::string& field) {
        const auto bits = le<std::uint32_t>(field);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(std::size_t n, const std::string& field) {
        need(n, field);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void skip(std::size_t n) { pos_ += n; }
    std::size_t pos() const { return pos_; }

private:
    const std::vector<std::uint8_t>& buf_;
    std::size_t end_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_atw1(const std::vector<RawTensor>& tensors) {
    detail::ByteWriter w;
    w.bytes(kAtw1Magic, 4);
    w.le(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xFFFF) throw DataError("ATW1: tensor name too long: " + t.name.substr(0, 64));
        if (t.dims.size() > 0xFF) throw DataError("ATW1: too many dims for " + t.name);
        w.le(static_cast<std::uint16_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.le(static_cast<std::uint8_t>(0));
        w.le(static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) w.le(static_cast<std::uint32_t>(d));
        for (float v : t.values) w.f32(v);
    }
    auto& buf = w.buffer();
    const std::uint32_t crc = detail::crc32_of(buf.data(), buf.size());
    w.le(crc);
    return std::move(buf);
}

inline std::vector<RawTensor> decode_atw1(const std::vector<std::uint8_t>& buf, const std::string& what = "ATW1") {
    if (buf.size() < 4 || std::memcmp(buf.data(), kAtw1Magic, 4) != 0) {
        throw DataError(what + ": bad magic (expected \"ATW1\")");
    }
    if (buf.size() < 12) throw DataError(what + ": truncated payload (file shorter than header + checksum)");
    const std::size_t body = buf.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(buf[body + i]) << (8 * i);

    detail::ByteReader r(buf, body, what);
    r.str(4, "magic");
    const auto count = r.le<std::uint32_t>("tensor_count");
    std::vector<RawTensor> out;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::string idx = "tensor " + std::to_string(t);
        RawTensor rt;
        const auto name_len = r.le<std::uint16_t>(idx + " name_len");
        rt.name = r.str(name_len, idx + " name");
        const auto dtype = r.le<std::uint8_t>(rt.name + " dtype");
        if (dtype != 0) throw DataError(what + ": unknown dtype " + std::to_string(dtype) + " for " + rt.name);
        const auto ndim = r.le<std::uint8_t>(rt.name + " ndim");
        std::uint64_t n = 1;
        for (int d = 0; d < ndim; ++d) {
            const auto v = r.le<std::uint32_t>(rt.name + " dims");
            rt.dims.push_back(v);
            n *= v;
        }
        r.need(n * 4, rt.name + " payload");
        rt.values.resize(n);
        for (auto& v : rt.values) v = r.f32(rt.name + " payload");
        out.push_back(std::move(rt));
    }
    if (r.pos() != body) {
        throw DataError(what + ": " + std::to_string(body - r.pos()) + " unexpected trailing bytes before checksum");
    }
    const std::uint32_t actual = detail::crc32_of(buf.data(), body);
    if (actual != stored) throw DataError(what + ": CRC32 mismatch (file corrupted)");
    return out;
}

inline std::vector<RawTensor> read_atw1(const std::filesystem::path& path) {
    return decode_atw1(detail::read_file(path), path.string());
}

template <class T>
std::vector<RawTensor> model_tensors(const Model<T>& model) {
    std::vector<RawTensor> out;
    for (const auto& nt : model.state()) {
        RawTensor rt{nt.name, nt.tensor.dims(), {}};
        rt.values.reserve(static_cast<std::size_t>(nt.tensor.numel()));
        for (T v : nt.tensor.data()) rt.values.push_back(static_cast<float>(v));
        out.push_back(std::move(rt));
    }
    return out;
}

template <class T>
void save_weights(const Model<T>& model, const std::filesystem::path& path) {
    detail::write_file(path, encode_atw1(model_tensors(model)));
}

struct LoadOptions {
    /// Leave the model's own classifier in place instead of loading fc.*.
    bool skip_classifier = false;
};

inline bool is_classifier_tensor(const std::string& name) { return name.rfind("fc.", 0) == 0; }

/// Copies tensors into the model. Every model tensor must be present with an
/// identical shape and every file tensor must be known to the model, except
/// classifier tensors when skip_classifier is set.
template <class T>
void load_tensors(Model<T>& model, const std::vector<RawTensor>& tensors, const LoadOptions& opts = {}) {
    std::map<std::string, const RawTensor*> by_name;
    for (const auto& t : tensors) {
        if (!by_name.emplace(t.name, &t).second) throw DataError("checkpoint: duplicate tensor " + t.name);
    }
    auto state = model.state();
    std::map<std::string, bool> known;
    for (const auto& nt : state) known[nt.name] = true;
    for (const auto& t : tensors) {
        if (opts.skip_classifier && is_classifier_tensor(t.name)) continue;
        if (!known.count(t.name)) {
            throw DataError("checkpoint: tensor " + t.name + " does not exist in the model" +
                            (t.name.ends_with(".attn") ? " (attach attention before loading)" : ""));
        }
    }
    for (auto& nt : state) {
        if (opts.skip_classifier && is_classifier_tensor(nt.name)) continue;
        auto it = by_name.find(nt.name);
        if (it == by_name.end()) throw DataError("checkpoint: missing tensor " + nt.name);
        if (it->second->dims != nt.tensor.dims()) {
            throw DataError("checkpoint: shape mismatch for " + nt.name + ": file " + shape_str(it->second->dims) +
                            " vs model " + shape_str(nt.tensor.dims()));
        }
    }
    for (auto& nt : state) {
        if (opts.skip_classifier && is_classifier_tensor(nt.name)) continue;
        const auto& src = by_name.at(nt.name)->values;
        auto dst = nt.tensor.mutable_data();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
    }
}

template <class T>
void load_weights(Model<T>& model, const std::filesystem::path& path, const LoadOptions& opts = {}) {
    load_tensors(model, read_atw1(path), opts);
}

/// Attention granularity stored in a checkpoint, if any attention tensors are present.
/// Decided from the stem's attention tensor: [C_out,1,1,1] means OutOnly unless C_in is 1.
inline std::optional<AttentionShape> stored_attention_shape(const std::vector<RawTensor>& tensors) {
    const RawTensor* attn = nullptr;
    const RawTensor* weight = nullptr;
    for (const auto& t : tensors) {
        if (t.name.ends_with(".attn") && attn == nullptr) attn = &t;
    }
    if (attn == nullptr) return std::nullopt;
    const std::string base = attn->name.substr(0, attn->name.size() - 5);
    for (const auto& t : tensors)
        if (t.name == base + ".weight") weight = &t;
    if (weight != nullptr && weight->dims.size() == 4 && weight->dims[1] > 1 && attn->dims.size() == 4) {
        return attn->dims[1] == 1 ? AttentionShape::OutOnly : AttentionShape::InTimesOut;
    }
    return AttentionShape::OutOnly;
}

}  // namespace attnconv
