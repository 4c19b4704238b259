#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "advlab/random.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

/// One image (height, width, channels) with pixels in [0,1] and its class.
struct LabeledImage {
    Tensor pixels;
    std::size_t label = 0;

    friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

struct Dataset {
    std::vector<LabeledImage> items;
    std::size_t class_count = 0;
    std::optional<std::vector<std::string>> class_names;

    std::size_t size() const noexcept { return items.size(); }
    bool empty() const noexcept { return items.empty(); }
    const LabeledImage& operator[](std::size_t i) const { return items[i]; }

    const Shape& image_shape() const {
        if (items.empty()) {
            throw std::invalid_argument("Dataset: no items");
        }
        return items.front().pixels.shape();
    }

    /// Throws if images disagree on shape, a label is out of range or a pixel leaves [0,1].
    void validate() const {
        if (class_count < 2) {
            throw std::invalid_argument("Dataset: class_count must be >= 2");
        }
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto& it = items[i];
            if (it.pixels.shape() != items.front().pixels.shape()) {
                throw std::invalid_argument("Dataset: item " + std::to_string(i) + " has shape " +
                                            it.pixels.shape().str() + ", expected " +
                                            items.front().pixels.shape().str());
            }
            if (it.label >= class_count) {
                throw std::invalid_argument("Dataset: item " + std::to_string(i) + " label " +
                                            std::to_string(it.label) + " >= class_count");
            }
            for (double v : it.pixels) {
                if (!(v >= 0.0 && v <= 1.0)) {
                    throw std::invalid_argument("Dataset: item " + std::to_string(i) +
                                                " has a pixel outside [0,1]");
                }
            }
        }
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

class IdxError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, truncated, count_mismatch };

    IdxError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                               const std::filesystem::path& path) {
    if (buf.size() < offset + 4) {
        throw IdxError(IdxError::Kind::truncated, "truncated header in " + path.string());
    }
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                static_cast<char>(v >> 8), static_cast<char>(v)};
    out.write(b.data(), 4);
}

inline unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

/// Reads an IDX image/label file pair. Pixels are scaled by 1/255; class_count is
/// max(label)+1, at least 2.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);

    if (const auto m = detail::read_be32(img, 0, images_path); m != kIdxImagesMagic) {
        throw IdxError(IdxError::Kind::bad_magic, "bad magic in images file " + images_path.string());
    }
    if (const auto m = detail::read_be32(lab, 0, labels_path); m != kIdxLabelsMagic) {
        throw IdxError(IdxError::Kind::bad_magic, "bad magic in labels file " + labels_path.string());
    }
    const std::size_t count = detail::read_be32(img, 4, images_path);
    const std::size_t rows = detail::read_be32(img, 8, images_path);
    const std::size_t cols = detail::read_be32(img, 12, images_path);
    const std::size_t label_count = detail::read_be32(lab, 4, labels_path);
    if (count != label_count) {
        throw IdxError(IdxError::Kind::count_mismatch, "count mismatch: " + std::to_string(count) +
                                                           " images but " + std::to_string(label_count) +
                                                           " labels");
    }
    if (rows == 0 || cols == 0) {
        throw IdxError(IdxError::Kind::truncated, "zero image extent in " + images_path.string());
    }
    const std::size_t pixels = rows * cols;
    if (img.size() < 16 + count * pixels) {
        throw IdxError(IdxError::Kind::truncated, "truncated pixel data in " + images_path.string());
    }
    if (lab.size() < 8 + count) {
        throw IdxError(IdxError::Kind::truncated, "truncated label data in " + labels_path.string());
    }

    Dataset ds;
    ds.items.reserve(count);
    std::size_t max_label = 1;
    for (std::size_t i = 0; i < count; ++i) {
        Tensor t(Shape{rows, cols, 1});
        const unsigned char* src = img.data() + 16 + i * pixels;
        for (std::size_t p = 0; p < pixels; ++p) {
            t[p] = src[p] / 255.0;
        }
        const std::size_t label = lab[8 + i];
        max_label = std::max(max_label, label);
        ds.items.push_back({std::move(t), label});
    }
    ds.class_count = max_label + 1;
    return ds;
}

/// Writes single-channel images as IDX; pixel byte = round(255 v).
inline void save_idx(const Dataset& data, const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path) {
    if (data.empty()) {
        throw std::invalid_argument("save_idx: empty dataset");
    }
    const Shape& s = data.image_shape();
    if (s.rank() != 3 || s[2] != 1) {
        throw std::invalid_argument("save_idx: IDX holds single-channel images, got " + s.str());
    }
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) {
        throw IdxError(IdxError::Kind::io, "cannot write " + images_path.string() + " / " + labels_path.string());
    }
    detail::write_be32(img, kIdxImagesMagic);
    detail::write_be32(img, static_cast<std::uint32_t>(data.size()));
    detail::write_be32(img, static_cast<std::uint32_t>(s[0]));
    detail::write_be32(img, static_cast<std::uint32_t>(s[1]));
    detail::write_be32(lab, kIdxLabelsMagic);
    detail::write_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (const auto& it : data.items) {
        std::vector<char> bytes(it.pixels.size());
        std::transform(it.pixels.begin(), it.pixels.end(), bytes.begin(),
                       [](double v) { return static_cast<char>(detail::to_byte(v)); });
        img.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        lab.put(static_cast<char>(it.label));
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

/// Knobs of the procedural generator.
///
/// Each image carries two cues: a high-contrast shape that predicts the label except on
/// decoy images, and a faint class-keyed block texture that always does. A standard model
/// needs the texture to go past 1 - decoy_rate accuracy, which leaves it open to
/// perturbations of about texture_amplitude; a model trained on perturbations larger
/// than that can still fall back on the shape.
struct SyntheticStyle {
    double amplitude_lo = 0.30;
    double amplitude_hi = 0.40;
    double background_lo = 0.15;
    double background_hi = 0.35;
    double noise = 0.05;
    int jitter = 2;
    double texture_amplitude = 0.035;
    std::size_t texture_block = 4;
    /// Probability that an image shows another class's shape.
    double decoy_rate = 0.10;
};

namespace detail {

/// Stroke coverage of the base pattern `kind` at (r, c); coordinates are relative to
/// the pattern centre and scaled by the pattern radius.
inline double pattern_mask(std::size_t kind, double dy, double dx, double radius) {
    const double y = dy / radius;
    const double x = dx / radius;
    const double w = 0.28;  // half stroke width in radius units
    const bool in_box = std::abs(x) <= 1.0 && std::abs(y) <= 1.0;
    const double rr = std::sqrt(x * x + y * y);
    switch (kind % 10) {
        case 0: return in_box && std::abs(y) <= w;                        // horizontal bar
        case 1: return in_box && std::abs(x) <= w;                        // vertical bar
        case 2: return in_box && std::abs(x - y) <= w * 1.4;              // diagonal
        case 3: return in_box && std::abs(x + y) <= w * 1.4;              // anti-diagonal
        case 4: return in_box && (std::abs(x) <= w || std::abs(y) <= w);  // plus
        case 5: return in_box && (std::abs(x - y) <= w * 1.4 || std::abs(x + y) <= w * 1.4);
        case 6: return rr <= 0.75;                                        // disk
        case 7: return rr <= 1.0 && rr >= 0.6;                            // ring
        case 8: {                                                         // checker patch
            if (!in_box) return 0.0;
            const int qy = static_cast<int>(std::floor((y + 1.0) * 2.0));
            const int qx = static_cast<int>(std::floor((x + 1.0) * 2.0));
            return ((qy + qx) % 2) == 0;
        }
        default:  // square frame
            return in_box && (std::abs(x) >= 1.0 - w * 1.2 || std::abs(y) >= 1.0 - w * 1.2);
    }
}

/// Fixed +-1 per (class, cell); independent of the dataset seed so splits share it.
inline double texture_sign(std::size_t label, std::size_t cell) {
    return (mix_seed(0x7e47u + label, cell) >> 63) ? 1.0 : -1.0;
}

}  // namespace detail

/// Deterministic K-class corpus of single-channel `size`x`size` images. Class c draws
/// base pattern c mod 10, placed at a position that depends on c / 10, with seeded
/// jitter, contrast and noise. Labels cycle 0..K-1.
inline Dataset generate_synthetic(std::size_t n, std::size_t size, std::size_t class_count, std::uint64_t seed,
                                  const SyntheticStyle& style = {}) {
    if (class_count < 2) {
        throw std::invalid_argument("generate_synthetic: class_count must be >= 2");
    }
    if (n < class_count) {
        throw std::invalid_argument("generate_synthetic: n=" + std::to_string(n) + " < class_count=" +
                                    std::to_string(class_count));
    }
    if (size < 8) {
        throw std::invalid_argument("generate_synthetic: size must be >= 8");
    }
    Rng rng(mix_seed(seed, 0x5eed));
    Dataset ds;
    ds.class_count = class_count;
    ds.items.reserve(n);
    const double half = static_cast<double>(size) / 2.0;
    const double radius = static_cast<double>(size) * 0.32;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % class_count;
        const std::size_t group = label / 10;
        // Groups beyond the first ten classes shift the pattern centre around a small circle.
        const double angle = static_cast<double>(group) * 2.399963;
        const double shift = group == 0 ? 0.0 : static_cast<double>(size) * 0.12;
        const int span = 2 * style.jitter + 1;
        const double cy = half + shift * std::sin(angle) + static_cast<double>(static_cast<int>(rng.below(span)) - style.jitter);
        const double cx = half + shift * std::cos(angle) + static_cast<double>(static_cast<int>(rng.below(span)) - style.jitter);
        const double amp = rng.uniform(style.amplitude_lo, style.amplitude_hi);
        const double bg = rng.uniform(style.background_lo, style.background_hi);
        std::size_t shape_class = label % 10;
        if (style.decoy_rate > 0.0 && rng.uniform() < style.decoy_rate) {
            const std::size_t other = rng.below(std::min<std::size_t>(class_count, 10) - 1);
            shape_class = other >= shape_class ? other + 1 : other;
        }
        const std::size_t blocks = (size + style.texture_block - 1) / style.texture_block;
        Tensor t(Shape{size, size, 1});
        for (std::size_t r = 0; r < size; ++r) {
            for (std::size_t c = 0; c < size; ++c) {
                const double m = detail::pattern_mask(shape_class, static_cast<double>(r) + 0.5 - cy,
                                                      static_cast<double>(c) + 0.5 - cx, radius);
                const std::size_t cell = (r / style.texture_block) * blocks + c / style.texture_block;
                const double tex = style.texture_amplitude * detail::texture_sign(label, cell);
                const double v = bg + amp * m + tex + rng.uniform(-style.noise, style.noise);
                t.at(r, c, 0) = std::clamp(v, 0.0, 1.0);
            }
        }
        ds.items.push_back({std::move(t), label});
    }
    return ds;
}

/// n items drawn without replacement; order is a deterministic function of seed.
inline Dataset sample_subset(const Dataset& data, std::size_t n, std::uint64_t seed) {
    if (n > data.size()) {
        throw std::invalid_argument("sample_subset: n=" + std::to_string(n) + " exceeds dataset size " +
                                    std::to_string(data.size()));
    }
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(mix_seed(seed, 0x5ab5));
    // Partial Fisher-Yates: the first n slots are a uniform draw without replacement.
    for (std::size_t i = 0; i < n; ++i) {
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    }
    Dataset out;
    out.class_count = data.class_count;
    out.class_names = data.class_names;
    out.items.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.items.push_back(data.items[idx[i]]);
    }
    return out;
}

/// Splits into the first `n` items and the rest.
inline std::pair<Dataset, Dataset> split_at(const Dataset& data, std::size_t n) {
    n = std::min(n, data.size());
    Dataset a, b;
    a.class_count = b.class_count = data.class_count;
    a.class_names = b.class_names = data.class_names;
    a.items.assign(data.items.begin(), data.items.begin() + static_cast<std::ptrdiff_t>(n));
    b.items.assign(data.items.begin() + static_cast<std::ptrdiff_t>(n), data.items.end());
    return {std::move(a), std::move(b)};
}

}  // namespace advlab
