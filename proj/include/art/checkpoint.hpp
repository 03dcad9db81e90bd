#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "art/model.hpp"

namespace art {

// Layout (all integers little-endian):
//   "ARTCKPT1"
//   u32 config length, config text (key=value lines)
//   repeated until EOF: u32 name length, name, u32 rank, u64 extents[rank],
//                       f32 data[numel]
inline constexpr char kCheckpointMagic[8] = {'A', 'R', 'T', 'C', 'K', 'P', 'T', '1'};

namespace detail {

class ByteWriter {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    const std::vector<char>& buffer() const { return buf_; }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + path + " for writing");
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("write failed: " + path);
    }

private:
    std::vector<char> buf_;
};

template <typename Err>
class ByteReader {
public:
    explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path);
        return ByteReader(std::vector<char>(std::istreambuf_iterator<char>(in), {}));
    }

    bool at_end() const { return pos_ == data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }

    void bytes(void* out, std::size_t n) {
        if (remaining() < n) throw Err("unexpected end of file (truncated)");
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }
    std::uint64_t u64() {
        unsigned char b[8];
        bytes(b, 8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t max_len = 1u << 24) {
        const std::uint32_t n = u32();
        if (n > max_len || n > remaining()) throw Err("string length out of range (truncated)");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

private:
    std::vector<char> data_;
    std::size_t pos_ = 0;
};

template <typename T>
void write_tensor_record(ByteWriter& w, const std::string& name, const Tensor<T>& t) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Index e : t.shape()) w.u64(static_cast<std::uint64_t>(e));
    for (T v : t.data()) w.f32(static_cast<float>(v));
}

} // namespace detail

template <typename T>
void save_checkpoint(const ArtModel<T>& model, const std::string& path) {
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.str(model.config().to_text());
    for (const auto& p : model.parameters()) detail::write_tensor_record(w, p.name, p.tensor);
    w.write_file(path);
}

namespace detail {

inline ByteReader<CheckpointError> open_checkpoint(const std::string& path, ModelConfig& cfg) {
    auto r = ByteReader<CheckpointError>::from_file(path);
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw CheckpointError(path + ": bad magic, not an ARTCKPT1 checkpoint");
    const std::string text = r.str();
    try {
        cfg = ModelConfig::from_kv(KeyValueText::parse(text, path));
    } catch (const ConfigError& e) {
        throw CheckpointError(path + ": invalid config header: " + e.what());
    }
    return r;
}

} // namespace detail

inline ModelConfig read_checkpoint_config(const std::string& path) {
    ModelConfig cfg;
    detail::open_checkpoint(path, cfg);
    return cfg;
}

template <typename T>
ArtModel<T> load_checkpoint(const std::string& path) {
    ModelConfig cfg;
    auto r = detail::open_checkpoint(path, cfg);
    auto model = ArtModel<T>::build(cfg, 0);
    std::vector<bool> seen(model.parameters().size(), false);
    while (!r.at_end()) {
        const std::string name = r.str(4096);
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw CheckpointError(path + ": record '" + name + "' has implausible rank");
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<Index>(r.u64());
        auto& params = model.parameters();
        std::size_t idx = 0;
        while (idx < params.size() && params[idx].name != name) ++idx;
        if (idx == params.size()) throw CheckpointError(path + ": unknown parameter '" + name + "'");
        if (params[idx].tensor.shape() != shape)
            throw CheckpointError(path + ": parameter '" + name + "' has shape " + shape_str(shape) +
                                  ", config expects " + shape_str(params[idx].tensor.shape()));
        if (seen[idx]) throw CheckpointError(path + ": duplicate parameter '" + name + "'");
        seen[idx] = true;
        for (auto& v : params[idx].tensor.data()) v = static_cast<T>(r.f32());
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i])
            throw CheckpointError(path + ": missing parameter '" + model.parameters()[i].name +
                                  "' (truncated)");
    return model;
}

// Loads and checks that the stored config equals `expected`.
template <typename T>
ArtModel<T> load_checkpoint(const std::string& path, const ModelConfig& expected) {
    const ModelConfig stored = read_checkpoint_config(path);
    if (auto field = stored.first_difference(expected); !field.empty())
        throw CheckpointError(path + ": config mismatch in field '" + field + "' (checkpoint " +
                              stored.to_kv().get(field) + ", expected " + expected.to_kv().get(field) + ")");
    return load_checkpoint<T>(path);
}

} // namespace art
