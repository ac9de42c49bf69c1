#include "direal/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "direal/errors.hpp"

namespace direal {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'L', 'C', 'K', 'P', 'T', '1'};

std::uint8_t kind_tag(LayerSpec::Kind k) {
    switch (k) {
        case LayerSpec::Kind::dense: return 0;
        case LayerSpec::Kind::conv: return 1;
        case LayerSpec::Kind::tconv: return 2;
        case LayerSpec::Kind::activation: return 3;
        case LayerSpec::Kind::batchnorm: return 4;
    }
    throw UsageError("unknown layer kind");
}

std::uint8_t act_tag(ActKind a) {
    switch (a) {
        case ActKind::relu: return 0;
        case ActKind::leaky_relu: return 1;
        case ActKind::tanh: return 2;
        case ActKind::sigmoid: return 3;
    }
    throw UsageError("unknown activation kind");
}

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw FormatError("cannot open '" + path + "' for writing", 0);
        path_ = path;
    }

    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        offset_ += n;
    }

    void u8(std::uint8_t v) { bytes(&v, 1); }

    void u32(std::uint32_t v) {
        std::uint8_t b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        bytes(b, 4);
    }

    void f64(double v) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(bits >> (8 * i));
        bytes(b, 8);
    }

    void finish() {
        out_.flush();
        if (!out_) throw FormatError("write to '" + path_ + "' failed", offset_);
    }

private:
    std::ofstream out_;
    std::string path_;
    std::size_t offset_ = 0;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
        if (!in_) throw FormatError("cannot open '" + path + "' for reading", 0);
    }

    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw FormatError("checkpoint truncated", offset_);
        offset_ += n;
    }

    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }

    std::uint32_t u32() {
        std::uint8_t b[4];
        bytes(b, 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    double f64() {
        std::uint8_t b[8];
        bytes(b, 8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return std::bit_cast<double>(bits);
    }

    std::size_t offset() const { return offset_; }

    bool at_eof() {
        return in_.peek() == std::ifstream::traits_type::eof();
    }

private:
    std::ifstream in_;
    std::size_t offset_ = 0;
};

void write_spec(Writer& w, const LayerSpec& s) {
    w.u8(kind_tag(s.kind));
    switch (s.kind) {
        case LayerSpec::Kind::dense:
            w.u32(static_cast<std::uint32_t>(s.fan_in));
            w.u32(static_cast<std::uint32_t>(s.fan_out));
            break;
        case LayerSpec::Kind::conv:
        case LayerSpec::Kind::tconv:
            w.u32(static_cast<std::uint32_t>(s.in_channels));
            w.u32(static_cast<std::uint32_t>(s.out_channels));
            w.u32(static_cast<std::uint32_t>(s.kernel));
            w.u32(static_cast<std::uint32_t>(s.stride));
            w.u32(static_cast<std::uint32_t>(s.padding));
            w.u32(static_cast<std::uint32_t>(s.in_h));
            w.u32(static_cast<std::uint32_t>(s.in_w));
            break;
        case LayerSpec::Kind::activation:
            w.u8(act_tag(s.act));
            break;
        case LayerSpec::Kind::batchnorm:
            w.u32(static_cast<std::uint32_t>(s.channels));
            break;
    }
}

LayerSpec read_spec(Reader& r) {
    const std::size_t tag_at = r.offset();
    const std::uint8_t tag = r.u8();
    switch (tag) {
        case 0: {
            const std::uint32_t fi = r.u32(), fo = r.u32();
            return LayerSpec::Dense(fi, fo);
        }
        case 1:
        case 2: {
            const std::uint32_t ic = r.u32(), oc = r.u32(), k = r.u32(), st = r.u32(),
                                pad = r.u32(), ih = r.u32(), iw = r.u32();
            return tag == 1 ? LayerSpec::Conv(ic, oc, k, st, pad, ih, iw)
                            : LayerSpec::TConv(ic, oc, k, st, pad, ih, iw);
        }
        case 3: {
            const std::size_t act_at = r.offset();
            const std::uint8_t a = r.u8();
            switch (a) {
                case 0: return LayerSpec::Act(ActKind::relu);
                case 1: return LayerSpec::Act(ActKind::leaky_relu);
                case 2: return LayerSpec::Act(ActKind::tanh);
                case 3: return LayerSpec::Act(ActKind::sigmoid);
            }
            throw FormatError("unknown activation tag " + std::to_string(a), act_at);
        }
        case 4:
            return LayerSpec::BatchNorm(r.u32());
    }
    throw FormatError("unknown layer tag " + std::to_string(tag), tag_at);
}

}  // namespace

void save_network(const std::string& path, Network& net) {
    Writer w(path);
    w.bytes(kMagic, sizeof(kMagic));
    w.u32(static_cast<std::uint32_t>(net.size()));
    for (std::size_t i = 0; i < net.size(); ++i) write_spec(w, net.layer(i).spec());
    for (std::size_t i = 0; i < net.size(); ++i) {
        Layer& layer = net.layer(i);
        for (const ParamView& p : layer.params())
            for (std::size_t k = 0; k < p.value->size(); ++k) w.f64((*p.value)[k]);
        for (const Tensor* t : layer.state())
            for (std::size_t k = 0; k < t->size(); ++k) w.f64((*t)[k]);
    }
    w.finish();
}

Network load_network(const std::string& path) {
    Reader r(path);
    char magic[8];
    r.bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError("bad checkpoint magic", 0);
    const std::uint32_t count = r.u32();

    std::vector<LayerSpec> specs;
    specs.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) specs.push_back(read_spec(r));

    Network net;
    for (const auto& s : specs) net.add(make_layer(s));
    for (std::size_t i = 0; i < net.size(); ++i) {
        Layer& layer = net.layer(i);
        for (const ParamView& p : layer.params())
            for (std::size_t k = 0; k < p.value->size(); ++k) (*p.value)[k] = r.f64();
        for (Tensor* t : layer.state())
            for (std::size_t k = 0; k < t->size(); ++k) (*t)[k] = r.f64();
    }
    if (!r.at_eof()) throw FormatError("trailing bytes after checkpoint payload", r.offset());
    return net;
}

}  // namespace direal
