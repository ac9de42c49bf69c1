#include "direal/data.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "direal/errors.hpp"

namespace direal {

std::size_t Dataset::item_size() const {
    std::size_t n = 1;
    for (std::size_t d : item_shape) n *= d;
    return n;
}

std::size_t Dataset::size() const {
    const std::size_t per = item_size();
    return per == 0 ? 0 : values.size() / per;
}

Tensor Dataset::batch(const std::vector<std::size_t>& indices) const {
    if (indices.empty()) throw UsageError("empty batch requested");
    const std::size_t per = item_size();
    std::vector<std::size_t> shape;
    shape.push_back(indices.size());
    shape.insert(shape.end(), item_shape.begin(), item_shape.end());
    Tensor out(shape);
    const std::size_t n = size();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const std::size_t idx = indices[b];
        if (idx >= n) throw UsageError("batch index out of range");
        const double* src = values.data() + idx * per;
        double* dst = out.data() + b * per;
        for (std::size_t k = 0; k < per; ++k) dst[k] = src[k];
    }
    return out;
}

std::vector<std::array<double, 2>> Dataset::points() const {
    if (item_shape != std::vector<std::size_t>{2})
        throw UsageError("dataset items are not 2-D points");
    std::vector<std::array<double, 2>> pts(size());
    for (std::size_t i = 0; i < pts.size(); ++i)
        pts[i] = {values[2 * i], values[2 * i + 1]};
    return pts;
}

namespace {

Dataset sample_mixture(Dataset::Kind kind, std::vector<std::array<double, 2>> centers,
                       double sigma, std::size_t n, std::uint64_t seed) {
    if (!(sigma > 0.0)) throw ConfigError("mixture spread must be positive", "sigma");
    Dataset out;
    out.kind = kind;
    out.item_shape = {2};
    out.centers = std::move(centers);
    out.sigma = sigma;
    out.values.resize(2 * n);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, out.centers.size() - 1);
    std::normal_distribution<double> jitter(0.0, sigma);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& c = out.centers[pick(rng)];
        out.values[2 * i] = c[0] + jitter(rng);
        out.values[2 * i + 1] = c[1] + jitter(rng);
    }
    return out;
}

}  // namespace

Dataset gaussian_ring(std::size_t n_modes, double radius, double sigma, std::size_t n,
                      std::uint64_t seed) {
    if (n_modes < 2) throw ConfigError("need at least 2 mixture modes", "ring_modes");
    std::vector<std::array<double, 2>> centers(n_modes);
    for (std::size_t k = 0; k < n_modes; ++k) {
        const double angle = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n_modes);
        centers[k] = {radius * std::cos(angle), radius * std::sin(angle)};
    }
    return sample_mixture(Dataset::Kind::ring, std::move(centers), sigma, n, seed);
}

Dataset grid25(double spacing, double sigma, std::size_t n, std::uint64_t seed) {
    std::vector<std::array<double, 2>> centers;
    centers.reserve(25);
    for (int r = -2; r <= 2; ++r)
        for (int c = -2; c <= 2; ++c)
            centers.push_back({spacing * static_cast<double>(c),
                               spacing * static_cast<double>(r)});
    return sample_mixture(Dataset::Kind::grid, std::move(centers), sigma, n, seed);
}

namespace {

class IdxReader {
public:
    explicit IdxReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw FormatError("cannot open '" + path + "'", 0);
    }

    std::uint32_t u32_be() {
        std::uint8_t b[4];
        bytes(b, 4);
        return (static_cast<std::uint32_t>(b[0]) << 24) |
               (static_cast<std::uint32_t>(b[1]) << 16) |
               (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
    }

    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw FormatError("'" + path_ + "' truncated",
                              offset_ + static_cast<std::size_t>(in_.gcount()));
        offset_ += n;
    }

    std::size_t offset() const { return offset_; }

    bool at_eof() { return in_.peek() == std::ifstream::traits_type::eof(); }

private:
    std::ifstream in_;
    std::string path_;
    std::size_t offset_ = 0;
};

}  // namespace

Dataset load_idx(const std::string& images_path, const std::optional<std::string>& labels_path) {
    IdxReader img(images_path);
    const std::uint32_t magic = img.u32_be();
    if (magic != 0x00000803u)
        throw FormatError("'" + images_path + "' has bad image magic", 0);
    const std::uint32_t count = img.u32_be();
    const std::uint32_t height = img.u32_be();
    const std::uint32_t width = img.u32_be();
    if (count == 0 || height == 0 || width == 0)
        throw FormatError("'" + images_path + "' declares an empty dimension", 4);

    Dataset out;
    out.kind = Dataset::Kind::idx_images;
    out.item_shape = {1, height, width};
    const std::size_t total = static_cast<std::size_t>(count) * height * width;
    std::vector<std::uint8_t> raw(total);
    img.bytes(raw.data(), total);
    if (!img.at_eof())
        throw FormatError("'" + images_path + "' has trailing bytes", img.offset());
    out.values.resize(total);
    for (std::size_t i = 0; i < total; ++i)
        out.values[i] = static_cast<double>(raw[i]) / 127.5 - 1.0;

    if (labels_path) {
        IdxReader lab(*labels_path);
        const std::uint32_t lmagic = lab.u32_be();
        if (lmagic != 0x00000801u)
            throw FormatError("'" + *labels_path + "' has bad label magic", 0);
        const std::uint32_t lcount = lab.u32_be();
        if (lcount != count)
            throw FormatError("'" + *labels_path + "' label count " + std::to_string(lcount) +
                                  " does not match image count " + std::to_string(count),
                              4);
        out.labels.resize(lcount);
        lab.bytes(out.labels.data(), lcount);
        if (!lab.at_eof())
            throw FormatError("'" + *labels_path + "' has trailing bytes", lab.offset());
    }
    return out;
}

}  // namespace direal
