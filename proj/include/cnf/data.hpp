#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cnf/errors.hpp"
#include "cnf/rng.hpp"
#include "cnf/tensor.hpp"

namespace cnf {

/// One grayscale image with its class label. Pixel values are in [0,1]
/// straight after ingestion; normalization happens later and may leave
/// this range.
struct Sample {
    Tensor image; // [1, H, W]
    std::size_t label = 0;
    std::string source_id;
};

struct ManifestEntry {
    std::string path; // relative to the manifest's directory
    std::size_t label = 0;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names;

    std::size_t class_count() const { return class_names.size(); }
};

// ---------------------------------------------------------------------------
// PGM (P5) reader / writer
// ---------------------------------------------------------------------------

namespace detail {

struct PgmCursor {
    const std::vector<unsigned char>& bytes;
    std::size_t pos = 0;

    bool eof() const { return pos >= bytes.size(); }

    void skip_space_and_comments() {
        while (!eof()) {
            const unsigned char c = bytes[pos];
            if (c == '#') {
                while (!eof() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }

    std::size_t read_uint(const char* what) {
        skip_space_and_comments();
        if (eof() || bytes[pos] < '0' || bytes[pos] > '9')
            throw parse_error(std::string("PGM: expected ") + what + " at byte offset " +
                              std::to_string(pos));
        std::size_t v = 0;
        while (!eof() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            ++pos;
        }
        return v;
    }
};

} // namespace detail

/// Parses a binary PGM (P5) file into a [1,H,W] tensor scaled to [0,1].
/// maxval up to 65535 is supported (two-byte samples are big-endian per
/// the netpbm specification).
inline Tensor load_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open image file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());

    if (bytes.size() < 2 || bytes[0] != 'P') {
        throw parse_error("PGM: bad magic at byte offset 0 in " + path.string());
    }
    if (bytes[1] == '6' || bytes[1] == '3') {
        throw parse_error("PGM: color PPM input is unsupported; convert to grayscale P5 "
                          "first (" + path.string() + ")");
    }
    if (bytes[1] != '5') {
        throw parse_error("PGM: bad magic at byte offset 0 in " + path.string() +
                          " (expected P5)");
    }

    detail::PgmCursor cur{bytes, 2};
    const std::size_t width = cur.read_uint("width");
    const std::size_t height = cur.read_uint("height");
    const std::size_t maxval = cur.read_uint("maxval");
    if (width == 0 || height == 0)
        throw parse_error("PGM: zero image dimension in header of " + path.string());
    if (maxval == 0 || maxval > 65535)
        throw parse_error("PGM: maxval " + std::to_string(maxval) +
                          " out of range (1..65535) at byte offset " +
                          std::to_string(cur.pos) + " in " + path.string());
    // exactly one whitespace byte separates the header from the payload
    if (cur.eof() || !(bytes[cur.pos] == ' ' || bytes[cur.pos] == '\t' ||
                       bytes[cur.pos] == '\r' || bytes[cur.pos] == '\n'))
        throw parse_error("PGM: malformed header at byte offset " +
                          std::to_string(cur.pos) + " in " + path.string());
    ++cur.pos;

    const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
    const std::size_t need = width * height * sample_bytes;
    if (bytes.size() - cur.pos < need)
        throw parse_error("PGM: payload truncated at byte offset " +
                          std::to_string(bytes.size()) + " (need " +
                          std::to_string(cur.pos + need) + " bytes) in " + path.string());

    Tensor img({1, height, width});
    double* out = img.data();
    const double inv = 1.0 / static_cast<double>(maxval);
    const unsigned char* p = bytes.data() + cur.pos;
    for (std::size_t i = 0; i < width * height; ++i) {
        std::size_t v = sample_bytes == 1
                            ? p[i]
                            : (static_cast<std::size_t>(p[2 * i]) << 8) | p[2 * i + 1];
        out[i] = static_cast<double>(v) * inv;
    }
    return img;
}

inline void save_pgm(const std::filesystem::path& path, const Tensor& image,
                     std::size_t maxval = 255) {
    if (image.rank() != 3 || image.extent(0) != 1)
        throw shape_error("save_pgm: image must be 1xHxW, got " + image.shape_str());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot write image file " + path.string());
    const std::size_t h = image.extent(1), w = image.extent(2);
    f << "P5\n" << w << " " << h << "\n" << maxval << "\n";
    const double* p = image.data();
    for (std::size_t i = 0; i < h * w; ++i) {
        double v = std::clamp(p[i], 0.0, 1.0) * static_cast<double>(maxval);
        const std::size_t q = static_cast<std::size_t>(std::lround(v));
        if (maxval < 256) {
            f.put(static_cast<char>(q));
        } else {
            f.put(static_cast<char>(q >> 8));
            f.put(static_cast<char>(q & 0xff));
        }
    }
    if (!f) throw io_error("short write to " + path.string());
}

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

namespace detail {

inline double bilinear_at(const Tensor& img, double y, double x) {
    const std::size_t h = img.extent(1), w = img.extent(2);
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const std::size_t y0 = static_cast<std::size_t>(y);
    const std::size_t x0 = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    const double a = img(0, y0, x0), b = img(0, y0, x1);
    const double c = img(0, y1, x0), d = img(0, y1, x1);
    return (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy;
}

} // namespace detail

/// Bilinear resize with half-pixel-center coordinate mapping; output
/// values stay within the input's value range.
inline Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
    if (image.rank() != 3 || image.extent(0) != 1)
        throw shape_error("resize_bilinear: image must be 1xHxW, got " + image.shape_str());
    if (out_h == 0 || out_w == 0)
        throw config_error("resize_bilinear: target dimensions must be positive");
    const std::size_t h = image.extent(1), w = image.extent(2);
    if (h == out_h && w == out_w) return image;
    Tensor out({1, out_h, out_w});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        const double y = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const double x = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            out(0, oy, ox) = detail::bilinear_at(image, y, x);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

struct NormStats {
    double mean = 0.0;
    double stddev = 1.0;
};

inline NormStats compute_norm_stats(const std::vector<Sample>& samples) {
    if (samples.empty()) throw data_error("compute_norm_stats: empty training set");
    double sum = 0.0;
    std::size_t n = 0;
    for (const Sample& s : samples) {
        for (double v : s.image.values()) sum += v;
        n += s.image.size();
    }
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (const Sample& s : samples)
        for (double v : s.image.values()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    return NormStats{mean, std::max(std::sqrt(var), 1e-8)};
}

inline void apply_norm(std::vector<Sample>& samples, const NormStats& stats) {
    const double inv = 1.0 / stats.stddev;
    for (Sample& s : samples)
        for (double& v : s.image.values()) v = (v - stats.mean) * inv;
}

/// Standardizes in place using the set's own global pixel statistics and
/// returns them; validation/test sets must be normalized with the training
/// stats via apply_norm to avoid leakage.
inline NormStats normalize_dataset(std::vector<Sample>& samples) {
    const NormStats stats = compute_norm_stats(samples);
    apply_norm(samples, stats);
    return stats;
}

inline void save_norm_stats(const NormStats& stats, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot write stats file " + path.string());
    f.precision(17);
    f << "mean " << stats.mean << "\n";
    f << "std " << stats.stddev << "\n";
}

inline NormStats load_norm_stats(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open stats file " + path.string());
    NormStats stats;
    std::string key;
    bool have_mean = false, have_std = false;
    double value = 0.0;
    while (f >> key >> value) {
        if (key == "mean") {
            stats.mean = value;
            have_mean = true;
        } else if (key == "std") {
            stats.stddev = value;
            have_std = true;
        } else {
            throw parse_error("stats file " + path.string() + ": unknown field '" + key + "'");
        }
    }
    if (!have_mean || !have_std)
        throw parse_error("stats file " + path.string() + " must define mean and std");
    return stats;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    bool hflip = false;
    bool vflip = false;
    bool crop = false;
    double crop_lo = 0.8, crop_hi = 1.0; // crop fraction range, (0,1]
    bool stretch = false;
    double scale_lo = 0.9, scale_hi = 1.1; // per-axis scale range, [0.5,2]
    bool shear = false;
    double shear_max_deg = 10.0; // |angle| <= 45
    std::size_t multiplier = 1;  // augmented copies per original

    void validate() const {
        if (crop && !(crop_lo > 0.0 && crop_lo <= crop_hi && crop_hi <= 1.0))
            throw config_error("augment: crop fraction range must lie in (0,1]");
        if (stretch && !(scale_lo >= 0.5 && scale_lo <= scale_hi && scale_hi <= 2.0))
            throw config_error("augment: scale range must lie in [0.5,2]");
        if (shear && !(shear_max_deg >= 0.0 && shear_max_deg <= 45.0))
            throw config_error("augment: shear angle must lie in [0,45] degrees");
        if (multiplier < 1) throw config_error("augment: multiplier must be >= 1");
    }
};

inline Tensor hflip(const Tensor& image) {
    Tensor out(image.shape());
    const std::size_t h = image.extent(1), w = image.extent(2);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out(0, y, x) = image(0, y, w - 1 - x);
    return out;
}

inline Tensor vflip(const Tensor& image) {
    Tensor out(image.shape());
    const std::size_t h = image.extent(1), w = image.extent(2);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out(0, y, x) = image(0, h - 1 - y, x);
    return out;
}

/// Samples through the inverse of a center-anchored affine map
/// out = S(scale) * Shear(angle) applied to input coordinates; reads
/// outside the image clamp to the nearest edge pixel.
inline Tensor affine_sample(const Tensor& image, double scale_x, double scale_y,
                            double shear_deg) {
    const std::size_t h = image.extent(1), w = image.extent(2);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double t = std::tan(shear_deg * 3.14159265358979323846 / 180.0);
    // forward map: [x'; y'] = [sx, sx*t; 0, sy] [x; y]  (x sheared along y)
    // inverse:     x = x'/sx - t*y'/sy ; y = y'/sy
    Tensor out(image.shape());
    for (std::size_t oy = 0; oy < h; ++oy) {
        const double dy = static_cast<double>(oy) - cy;
        for (std::size_t ox = 0; ox < w; ++ox) {
            const double dx = static_cast<double>(ox) - cx;
            const double sx_in = dx / scale_x - t * dy / scale_y;
            const double sy_in = dy / scale_y;
            out(0, oy, ox) = detail::bilinear_at(image, sy_in + cy, sx_in + cx);
        }
    }
    return out;
}

/// Emits `multiplier` randomly transformed copies of one sample; labels
/// and shape are preserved and the result is a pure function of the rng
/// state.
inline std::vector<Sample> augment(const Sample& sample, const AugmentConfig& cfg,
                                   Rng& rng) {
    cfg.validate();
    std::vector<Sample> out;
    out.reserve(cfg.multiplier);
    const std::size_t h = sample.image.extent(1), w = sample.image.extent(2);
    for (std::size_t copy = 0; copy < cfg.multiplier; ++copy) {
        Tensor img = sample.image;
        if (cfg.hflip && rng.next_double() < 0.5) img = hflip(img);
        if (cfg.vflip && rng.next_double() < 0.5) img = vflip(img);
        if (cfg.crop) {
            const double f = rng.uniform(cfg.crop_lo, cfg.crop_hi);
            const std::size_t ch = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::lround(f * static_cast<double>(h))));
            const std::size_t cw = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::lround(f * static_cast<double>(w))));
            const std::size_t oy = static_cast<std::size_t>(rng.below(h - ch + 1));
            const std::size_t ox = static_cast<std::size_t>(rng.below(w - cw + 1));
            Tensor crop({1, ch, cw});
            for (std::size_t y = 0; y < ch; ++y)
                for (std::size_t x = 0; x < cw; ++x) crop(0, y, x) = img(0, oy + y, ox + x);
            img = resize_bilinear(crop, h, w);
        }
        if (cfg.stretch || cfg.shear) {
            const double sx = cfg.stretch ? rng.uniform(cfg.scale_lo, cfg.scale_hi) : 1.0;
            const double sy = cfg.stretch ? rng.uniform(cfg.scale_lo, cfg.scale_hi) : 1.0;
            const double ang =
                cfg.shear ? rng.uniform(-cfg.shear_max_deg, cfg.shear_max_deg) : 0.0;
            img = affine_sample(img, sx, sy, ang);
        }
        out.push_back(Sample{std::move(img), sample.label,
                             sample.source_id + "#aug" + std::to_string(copy)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// splitting
// ---------------------------------------------------------------------------

/// Seed-deterministic train/validation partition. Stratified mode keeps
/// per-class proportions, rounding each class toward the training side
/// while leaving at least one sample on each side.
inline std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset(
    const std::vector<Sample>& samples, double train_fraction, Rng& rng,
    bool stratified) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw config_error("split_dataset: train_fraction must lie in (0,1)");
    if (samples.size() < 2) throw data_error("split_dataset: need at least 2 samples");

    std::vector<Sample> train, val;
    auto take = [&](std::vector<std::size_t>& idx) {
        rng.shuffle(idx);
        const double want = train_fraction * static_cast<double>(idx.size());
        std::size_t n_train = static_cast<std::size_t>(std::ceil(want));
        n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_train ? train : val).push_back(samples[idx[i]]);
    };

    if (stratified) {
        std::map<std::size_t, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < samples.size(); ++i)
            by_class[samples[i].label].push_back(i);
        for (auto& [label, idx] : by_class) {
            if (idx.size() < 2)
                throw data_error("split_dataset: class " + std::to_string(label) +
                                 " has fewer than 2 samples; cannot stratify");
            take(idx);
        }
    } else {
        std::vector<std::size_t> idx(samples.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        take(idx);
    }
    return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// manifest I/O
// ---------------------------------------------------------------------------

inline void write_manifest(const DatasetManifest& manifest,
                           const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot write manifest " + path.string());
    f << "path,label\n";
    for (const ManifestEntry& e : manifest.entries) f << e.path << "," << e.label << "\n";
    if (!f) throw io_error("short write to " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open manifest " + path.string());
    DatasetManifest m;
    m.root = path.parent_path();
    std::string line;
    std::size_t line_no = 0;
    std::size_t max_label = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != "path,label")
                throw parse_error("manifest " + path.string() +
                                  ": expected header 'path,label', got '" + line + "'");
            continue;
        }
        const std::size_t comma = line.rfind(',');
        if (comma == std::string::npos || comma == 0)
            throw parse_error("manifest " + path.string() + " line " +
                              std::to_string(line_no) + ": expected 'path,label'");
        ManifestEntry e;
        e.path = line.substr(0, comma);
        const std::string label_str = line.substr(comma + 1);
        try {
            e.label = static_cast<std::size_t>(std::stoull(label_str));
        } catch (const std::exception&) {
            throw parse_error("manifest " + path.string() + " line " +
                              std::to_string(line_no) + ": bad label '" + label_str + "'");
        }
        max_label = std::max(max_label, e.label);
        m.entries.push_back(std::move(e));
    }
    if (m.entries.empty())
        throw data_error("manifest " + path.string() + " lists no samples");
    for (std::size_t i = 0; i <= max_label; ++i)
        m.class_names.push_back("class-" + std::to_string(i));
    return m;
}

/// Loads every manifest entry in manifest order, optionally resizing to a
/// square `side`.
inline std::vector<Sample> load_dataset(const DatasetManifest& manifest,
                                        std::size_t side = 0) {
    std::vector<Sample> samples;
    samples.reserve(manifest.entries.size());
    for (const ManifestEntry& e : manifest.entries) {
        Tensor img = load_pgm(manifest.root / e.path);
        if (side != 0 && (img.extent(1) != side || img.extent(2) != side))
            img = resize_bilinear(img, side, side);
        samples.push_back(Sample{std::move(img), e.label, e.path});
    }
    return samples;
}

// ---------------------------------------------------------------------------
// synthetic dataset
// ---------------------------------------------------------------------------

namespace detail {

// Soft-edged membership: 1 inside, 0 outside, linear ramp of ~1px width.
inline double coverage(double signed_dist) {
    return std::clamp(0.5 - signed_dist, 0.0, 1.0);
}

} // namespace detail

inline const std::vector<std::string>& synthetic_class_names() {
    static const std::vector<std::string> names = {"disk", "square", "cross", "stripes"};
    return names;
}

/// Draws one jittered instance of the four procedural classes: filled
/// disk, hollow square, diagonal cross, horizontal stripes. Jitter covers
/// position, scale, rotation and pixel noise.
inline Tensor draw_synthetic(std::size_t label, std::size_t side, Rng& rng) {
    const double s = static_cast<double>(side);
    const double cx = s / 2.0 + rng.uniform(-0.08, 0.08) * s;
    const double cy = s / 2.0 + rng.uniform(-0.08, 0.08) * s;
    const double r = s * rng.uniform(0.26, 0.36);
    const double theta = rng.uniform(-0.26, 0.26); // ~±15 degrees
    const double phase = rng.next_double();
    const double ct = std::cos(theta), st = std::sin(theta);
    const double bg = 0.12, fg = 0.88;

    Tensor img({1, side, side});
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            const double u = ct * dx + st * dy;
            const double v = -st * dx + ct * dy;
            double dist; // signed distance to the shape boundary, px
            switch (label) {
            case 0: { // filled disk
                dist = std::sqrt(u * u + v * v) - r;
                break;
            }
            case 1: { // hollow square ring
                const double box = std::max(std::abs(u), std::abs(v));
                dist = std::max(box - r, 0.62 * r - box);
                break;
            }
            case 2: { // diagonal cross
                const double arm = 0.22 * r;
                const double d1 = std::abs(u - v) / std::sqrt(2.0) - arm;
                const double d2 = std::abs(u + v) / std::sqrt(2.0) - arm;
                const double extent = std::max(std::abs(u), std::abs(v)) - 1.1 * r;
                dist = std::max(std::min(d1, d2), extent);
                break;
            }
            default: { // horizontal stripes clipped to a disk
                const double period = std::max(0.55 * r, 2.5);
                double m = v / period + phase;
                m -= std::floor(m);
                const double band = (std::abs(m - 0.5) - 0.25) * period;
                const double clip = std::sqrt(u * u + v * v) - 1.15 * r;
                dist = std::max(band, clip);
                break;
            }
            }
            const double a = detail::coverage(dist);
            img(0, y, x) = bg + (fg - bg) * a;
        }
    }
    // pixel noise, clamped back into [0,1]
    for (double& p : img.values())
        p = std::clamp(p + 0.05 * rng.normal(), 0.0, 1.0);
    return img;
}

/// In-memory synthetic set: n_per_class samples of each of the 4 classes,
/// class-major order, fully determined by the seed.
inline std::vector<Sample> gen_synthetic_samples(std::size_t n_per_class, std::size_t side,
                                                 std::uint64_t seed) {
    if (n_per_class < 1) throw config_error("gen_synthetic: n_per_class must be >= 1");
    if (side < 16) throw config_error("gen_synthetic: side must be >= 16");
    Rng rng(seed);
    std::vector<Sample> samples;
    samples.reserve(4 * n_per_class);
    for (std::size_t label = 0; label < 4; ++label) {
        for (std::size_t i = 0; i < n_per_class; ++i) {
            std::ostringstream name;
            name << synthetic_class_names()[label] << "_" << std::setw(5)
                 << std::setfill('0') << i << ".pgm";
            samples.push_back(Sample{draw_synthetic(label, side, rng), label, name.str()});
        }
    }
    return samples;
}

/// Writes the synthetic set as PGM files plus a manifest CSV under `dir`
/// and returns the manifest. Byte-identical for identical seeds.
inline DatasetManifest gen_synthetic(std::size_t n_per_class, std::size_t side,
                                     std::uint64_t seed,
                                     const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create dataset directory " + dir.string());

    const std::vector<Sample> samples = gen_synthetic_samples(n_per_class, side, seed);
    DatasetManifest manifest;
    manifest.root = dir;
    manifest.class_names = synthetic_class_names();
    for (const Sample& s : samples) {
        save_pgm(dir / s.source_id, s.image);
        manifest.entries.push_back(ManifestEntry{s.source_id, s.label});
    }
    write_manifest(manifest, dir / "manifest.csv");
    return manifest;
}

} // namespace cnf
