#include "relbal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "relbal/error.hpp"

namespace relbal {

namespace {

constexpr std::uint8_t kMagic[4] = {'R', 'B', 'C', 'K'};

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::uint8_t u8() {
        need(1);
        return in_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n)
            throw FormatError("checkpoint truncated at byte " + std::to_string(pos_) + " of " +
                              std::to_string(in_.size()));
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params) {
    Writer w;
    w.u8(kCheckpointVersion);
    w.bytes(kMagic, sizeof kMagic);
    w.u32(static_cast<std::uint32_t>(params.size()));
    std::uint64_t offset = 0;
    for (const auto& e : params) {
        w.u32(static_cast<std::uint32_t>(e.name.size()));
        w.bytes(e.name.data(), e.name.size());
        w.u8(e.tensor.requires_grad() ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
        for (auto d : e.tensor.shape()) w.u64(d);
        w.u64(offset);
        offset += e.tensor.size() * sizeof(double);
    }
    w.u64(offset);
    for (const auto& e : params)
        for (double v : e.tensor.values()) w.f64(v);
    return w.take();
}

ParameterSet decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    if (bytes.empty()) throw FormatError("checkpoint truncated: empty file");
    const auto version = r.u8();
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint version mismatch: file has " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
    for (auto m : kMagic)
        if (r.u8() != m) throw FormatError("checkpoint magic bytes do not match");

    struct Pending {
        std::string name;
        bool trainable;
        Shape shape;
        std::uint64_t offset;
    };
    const auto count = r.u32();
    std::vector<Pending> pending;
    pending.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Pending p;
        p.name = r.str(r.u32());
        p.trainable = r.u8() != 0;
        const auto rank = r.u32();
        if (rank == 0 || rank > 8) throw FormatError("checkpoint entry " + p.name + " has invalid rank");
        for (std::uint32_t k = 0; k < rank; ++k) {
            const auto d = r.u64();
            if (d == 0) throw FormatError("checkpoint entry " + p.name + " has a zero extent");
            p.shape.push_back(d);
        }
        p.offset = r.u64();
        pending.push_back(std::move(p));
    }
    const auto data_len = r.u64();
    if (r.remaining() < data_len)
        throw FormatError("checkpoint truncated: data section needs " + std::to_string(data_len) +
                          " bytes, " + std::to_string(r.remaining()) + " present");
    if (r.remaining() > data_len) throw FormatError("checkpoint has trailing bytes");

    const std::size_t base = r.pos();
    ParameterSet out;
    for (auto& p : pending) {
        const std::size_t n = shape_size(p.shape);
        if (p.offset % sizeof(double) != 0 || p.offset + n * sizeof(double) > data_len)
            throw FormatError("checkpoint entry " + p.name + " lies outside the data section");
        std::vector<double> values(n);
        const auto* src = bytes.data() + base + p.offset;
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t raw = 0;
            for (int b = 0; b < 8; ++b) raw |= static_cast<std::uint64_t>(src[i * 8 + b]) << (8 * b);
            values[i] = std::bit_cast<double>(raw);
        }
        out.add(p.name, Tensor(std::move(p.shape), std::move(values)), p.trainable);
    }
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
    write_file_atomic(path, encode_checkpoint(params));
}

ParameterSet load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace relbal
