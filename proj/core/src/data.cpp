#include "transmat/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "transmat/image_io.hpp"

namespace transmat::data {

namespace fs = std::filesystem;

ImageRGB composite(const ImageRGB& fg, const ImageRGB& bg, const AlphaMatte& alpha) {
    if (!fg.same_shape(bg) || !fg.same_shape(alpha)) {
        throw ShapeError("composite: fg " + std::to_string(fg.height()) + "x" + std::to_string(fg.width()) +
                         ", bg " + std::to_string(bg.height()) + "x" + std::to_string(bg.width()) +
                         ", alpha " + std::to_string(alpha.height()) + "x" + std::to_string(alpha.width()));
    }
    ImageRGB out(fg.height(), fg.width());
    const auto f = fg.data();
    const auto b = bg.data();
    const auto a = alpha.data();
    auto o = out.data();
    for (size_t p = 0; p < a.size(); ++p) {
        const float av = a[p];
        for (size_t c = 0; c < 3; ++c) {
            const size_t k = p * 3 + c;
            o[k] = std::clamp(av * f[k] + (1.0f - av) * b[k], 0.0f, 1.0f);
        }
    }
    return out;
}

std::vector<uint8_t> erode_square(const std::vector<uint8_t>& mask, int64_t h, int64_t w, int radius) {
    if (radius <= 0) return mask;
    // Separable min filter; replicate border means clamped indices.
    std::vector<uint8_t> tmp(mask.size()), out(mask.size());
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            uint8_t v = 1;
            for (int64_t dx = -radius; dx <= radius && v; ++dx) {
                const int64_t xx = std::clamp<int64_t>(x + dx, 0, w - 1);
                v = mask[static_cast<size_t>(y * w + xx)];
            }
            tmp[static_cast<size_t>(y * w + x)] = v;
        }
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            uint8_t v = 1;
            for (int64_t dy = -radius; dy <= radius && v; ++dy) {
                const int64_t yy = std::clamp<int64_t>(y + dy, 0, h - 1);
                v = tmp[static_cast<size_t>(yy * w + x)];
            }
            out[static_cast<size_t>(y * w + x)] = v;
        }
    return out;
}

Trimap generate_trimap(const AlphaMatte& alpha, int erode_radius, int dilate_radius,
                       const TrimapThresholds& thresholds) {
    const int64_t h = alpha.height(), w = alpha.width();
    std::vector<uint8_t> fg(static_cast<size_t>(h * w)), bg(static_cast<size_t>(h * w));
    for (size_t i = 0; i < fg.size(); ++i) {
        const double a = alpha.data()[i];
        fg[i] = a >= thresholds.fg;
        bg[i] = a <= thresholds.bg;
    }
    fg = erode_square(fg, h, w, erode_radius);
    bg = erode_square(bg, h, w, dilate_radius);
    Trimap out(h, w, TrimapLabel::UNK);
    for (size_t i = 0; i < fg.size(); ++i) {
        if (fg[i]) {
            out.storage()[i] = TrimapLabel::FG;
        } else if (bg[i]) {
            out.storage()[i] = TrimapLabel::BG;
        }
    }
    return out;
}

void AugmentationConfig::validate(int downsampling_factor) const {
    if (trimap_kernel_min < 1 || trimap_kernel_min > trimap_kernel_max) {
        throw ConfigError("trimap kernel range must satisfy 1 <= min <= max (got " +
                          std::to_string(trimap_kernel_min) + ", " + std::to_string(trimap_kernel_max) + ")");
    }
    if (crop_size < 1 || crop_size % downsampling_factor != 0) {
        throw ConfigError("crop size " + std::to_string(crop_size) + " must be a positive multiple of " +
                          std::to_string(downsampling_factor));
    }
    if (flip_probability < 0.0 || flip_probability > 1.0) throw ConfigError("flip probability must be in [0, 1]");
    if (scale_min <= 0.0 || scale_min > scale_max) throw ConfigError("scale range must satisfy 0 < min <= max");
    if (rotation_range < 0.0) throw ConfigError("rotation range must be non-negative");
    if (shear_range < 0.0 || shear_range > 10.0) throw ConfigError("shear range must be within [0, 10] degrees");
}

AugmentParams draw_augment_params(const AugmentationConfig& cfg, Rng& rng) {
    AugmentParams p;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    p.flip = unit(rng) < cfg.flip_probability;
    p.angle_deg = cfg.rotation_range > 0 ? (2.0 * unit(rng) - 1.0) * cfg.rotation_range : 0.0;
    if (cfg.scale_max > cfg.scale_min) {
        // Log-uniform so that zoom in and zoom out are equally likely.
        p.scale = std::exp(std::log(cfg.scale_min) + unit(rng) * (std::log(cfg.scale_max) - std::log(cfg.scale_min)));
    } else {
        p.scale = cfg.scale_min;
    }
    p.shear_deg = cfg.shear_range > 0 ? (2.0 * unit(rng) - 1.0) * cfg.shear_range : 0.0;
    std::uniform_int_distribution<int> radius(cfg.trimap_kernel_min, cfg.trimap_kernel_max);
    p.erode_radius = radius(rng);
    p.dilate_radius = radius(rng);
    return p;
}

namespace {

int64_t reflect101(int64_t i, int64_t n) {
    if (n == 1) return 0;
    const int64_t period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

template <class P>
P flip_horizontal(const P& in) {
    P out(in.height(), in.width());
    for (int64_t y = 0; y < in.height(); ++y)
        for (int64_t x = 0; x < in.width(); ++x)
            for (int c = 0; c < P::kChannels; ++c) out(y, x, c) = in(y, in.width() - 1 - x, c);
    return out;
}

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-6 ? r : v;
}

// Inverse-maps every output pixel through the 2x2 matrix `inv` about the center.
template <class P>
P warp(const P& in, const double inv[2][2]) {
    const int64_t h = in.height(), w = in.width();
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    P out(h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double sx = snap(inv[0][0] * dx + inv[0][1] * dy + cx);
            const double sy = snap(inv[1][0] * dx + inv[1][1] * dy + cy);
            const double fx = std::floor(sx), fy = std::floor(sy);
            const double ax = sx - fx, ay = sy - fy;
            const int64_t x0 = reflect101(static_cast<int64_t>(fx), w), x1 = reflect101(static_cast<int64_t>(fx) + 1, w);
            const int64_t y0 = reflect101(static_cast<int64_t>(fy), h), y1 = reflect101(static_cast<int64_t>(fy) + 1, h);
            for (int c = 0; c < P::kChannels; ++c) {
                double v = (1 - ay) * ((1 - ax) * in(y0, x0, c) + ax * in(y0, x1, c));
                if (ay > 0) v += ay * ((1 - ax) * in(y1, x0, c) + ax * in(y1, x1, c));
                out(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    return out;
}

}  // namespace

MattingSample apply_augmentation(const MattingSample& sample, const AugmentParams& p,
                                 const TrimapThresholds& thresholds) {
    MattingSample out = sample;
    if (p.flip) {
        out.image = flip_horizontal(out.image);
        out.trimap = flip_horizontal(out.trimap);
        out.gt_alpha = flip_horizontal(out.gt_alpha);
        out.gt_foreground = flip_horizontal(out.gt_foreground);
        out.gt_background = flip_horizontal(out.gt_background);
    }
    if (p.geometric_identity()) return out;

    // Forward map A = R(angle) * Shear(shear) * S(scale); we sample with A^-1.
    const double th = p.angle_deg * std::numbers::pi / 180.0;
    const double sh = std::tan(p.shear_deg * std::numbers::pi / 180.0);
    const double c = std::cos(th), s = std::sin(th);
    const double a[2][2] = {{p.scale * c, p.scale * (c * sh - s)},
                            {p.scale * s, p.scale * (s * sh + c)}};
    const double det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    const double inv[2][2] = {{a[1][1] / det, -a[0][1] / det}, {-a[1][0] / det, a[0][0] / det}};

    out.gt_alpha = warp(out.gt_alpha, inv);
    out.gt_foreground = warp(out.gt_foreground, inv);
    out.gt_background = warp(out.gt_background, inv);
    out.image = composite(out.gt_foreground, out.gt_background, out.gt_alpha);
    out.trimap = generate_trimap(out.gt_alpha, p.erode_radius, p.dilate_radius, thresholds);
    out.synthesized = true;
    return out;
}

MattingSample augment(const MattingSample& sample, const AugmentationConfig& cfg, Rng& rng) {
    return apply_augmentation(sample, draw_augment_params(cfg, rng), cfg.thresholds);
}

namespace {

template <class P>
P pad_plane(const P& in, int64_t h, int64_t w) {
    P out(h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int c = 0; c < P::kChannels; ++c)
                out(y, x, c) = in(reflect101(y, in.height()), reflect101(x, in.width()), c);
    return out;
}

template <class P>
P crop_plane(const P& in, int64_t y0, int64_t x0, int64_t h, int64_t w) {
    P out(h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int c = 0; c < P::kChannels; ++c) out(y, x, c) = in(y0 + y, x0 + x, c);
    return out;
}

}  // namespace

MattingSample reflect_pad(const MattingSample& s, int64_t min_h, int64_t min_w) {
    const int64_t h = std::max(s.height(), min_h), w = std::max(s.width(), min_w);
    if (h == s.height() && w == s.width()) return s;
    MattingSample out;
    out.id = s.id;
    out.synthesized = s.synthesized;
    out.image = pad_plane(s.image, h, w);
    out.trimap = pad_plane(s.trimap, h, w);
    out.gt_alpha = pad_plane(s.gt_alpha, h, w);
    out.gt_foreground = pad_plane(s.gt_foreground, h, w);
    out.gt_background = pad_plane(s.gt_background, h, w);
    return out;
}

ImageRGB reflect_pad(const ImageRGB& image, int64_t height, int64_t width) {
    return pad_plane(image, std::max(height, image.height()), std::max(width, image.width()));
}

Trimap reflect_pad(const Trimap& trimap, int64_t height, int64_t width) {
    return pad_plane(trimap, std::max(height, trimap.height()), std::max(width, trimap.width()));
}

MattingSample crop(const MattingSample& s, int64_t y0, int64_t x0, int64_t h, int64_t w) {
    if (y0 < 0 || x0 < 0 || y0 + h > s.height() || x0 + w > s.width()) {
        throw ShapeError("crop window outside the sample bounds");
    }
    MattingSample out;
    out.id = s.id;
    out.synthesized = s.synthesized;
    out.image = crop_plane(s.image, y0, x0, h, w);
    out.trimap = crop_plane(s.trimap, y0, x0, h, w);
    out.gt_alpha = crop_plane(s.gt_alpha, y0, x0, h, w);
    out.gt_foreground = crop_plane(s.gt_foreground, y0, x0, h, w);
    out.gt_background = crop_plane(s.gt_background, y0, x0, h, w);
    return out;
}

MattingSample unknown_centered_crop(const MattingSample& sample, int crop_size, Rng& rng) {
    std::vector<int64_t> unknown;
    for (int64_t i = 0; i < sample.trimap.pixels(); ++i)
        if (sample.trimap.storage()[static_cast<size_t>(i)] == TrimapLabel::UNK) unknown.push_back(i);
    if (unknown.empty()) throw NoUnknownRegionError("sample '" + sample.id + "' has no unknown region to crop around");

    const MattingSample padded = reflect_pad(sample, crop_size, crop_size);
    std::uniform_int_distribution<size_t> pick(0, unknown.size() - 1);
    const int64_t center = unknown[pick(rng)];
    const int64_t cy = center / sample.width(), cx = center % sample.width();
    const int64_t y0 = std::clamp<int64_t>(cy - crop_size / 2, 0, padded.height() - crop_size);
    const int64_t x0 = std::clamp<int64_t>(cx - crop_size / 2, 0, padded.width() - crop_size);
    return crop(padded, y0, x0, crop_size, crop_size);
}

ImageRGB resize_bilinear(const ImageRGB& in, int64_t h, int64_t w) {
    if (in.height() == h && in.width() == w) return in;
    ImageRGB out(h, w);
    const double ry = static_cast<double>(in.height()) / h, rx = static_cast<double>(in.width()) / w;
    for (int64_t y = 0; y < h; ++y) {
        const double sy = std::max(0.0, (y + 0.5) * ry - 0.5);
        const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(sy), in.height() - 1);
        const int64_t y1 = std::min<int64_t>(y0 + 1, in.height() - 1);
        const double ay = sy - y0;
        for (int64_t x = 0; x < w; ++x) {
            const double sx = std::max(0.0, (x + 0.5) * rx - 0.5);
            const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(sx), in.width() - 1);
            const int64_t x1 = std::min<int64_t>(x0 + 1, in.width() - 1);
            const double ax = sx - x0;
            for (int c = 0; c < 3; ++c) {
                const double v = (1 - ay) * ((1 - ax) * in(y0, x0, c) + ax * in(y0, x1, c)) +
                                 ay * ((1 - ax) * in(y1, x0, c) + ax * in(y1, x1, c));
                out(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return out;
}

namespace {

std::map<std::string, fs::path> list_png(const fs::path& dir) {
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (ext == ".png") out.emplace(e.path().filename().string(), e.path());
    }
    return out;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root, bool require_backgrounds) {
    DatasetManifest m;
    m.root = root;
    for (const char* sub : {"fg", "alpha", "bg"}) {
        if (!fs::is_directory(root / sub)) throw DataError("dataset directory missing: " + (root / sub).string());
    }
    const auto fgs = list_png(root / "fg");
    const auto alphas = list_png(root / "alpha");
    const bool has_trimaps = fs::is_directory(root / "trimap");
    const auto trimaps = has_trimaps ? list_png(root / "trimap") : std::map<std::string, fs::path>{};

    for (const auto& [name, fg_path] : fgs) {
        const auto it = alphas.find(name);
        if (it == alphas.end()) {
            m.warnings.push_back("skipping " + name + ": no matching file in alpha/");
            continue;
        }
        try {
            const auto fs_shape = io::read_shape(fg_path);
            const auto as_shape = io::read_shape(it->second);
            if (fs_shape != as_shape) {
                m.warnings.push_back("skipping " + name + ": foreground and alpha shapes differ");
                continue;
            }
        } catch (const DataError& e) {
            m.warnings.push_back("skipping " + name + ": " + e.what());
            continue;
        }
        DatasetEntry entry{name, fg_path, it->second, std::nullopt};
        if (const auto t = trimaps.find(name); t != trimaps.end()) entry.trimap = t->second;
        m.entries.push_back(std::move(entry));
    }
    for (const auto& [name, path] : alphas)
        if (!fgs.contains(name)) m.warnings.push_back("alpha/" + name + " has no foreground counterpart");

    for (const auto& [name, path] : list_png(root / "bg")) m.backgrounds.push_back(path);

    if (m.entries.empty()) throw DataError("no valid foreground/alpha pairs under " + root.string());
    if (require_backgrounds && m.backgrounds.empty()) throw DataError("no background images under " + (root / "bg").string());
    return m;
}

void write_manifest_index(const DatasetManifest& m, const fs::path& file) {
    std::ofstream os(file);
    if (!os) throw DataError("cannot write manifest index: " + file.string());
    os << "# transmat manifest v1\n";
    os << "root\t" << m.root.string() << "\n";
    for (const auto& e : m.entries) {
        os << "entry\t" << e.name << "\t" << e.foreground.string() << "\t" << e.alpha.string() << "\t"
           << (e.trimap ? e.trimap->string() : std::string("-")) << "\n";
    }
    for (const auto& b : m.backgrounds) os << "background\t" << b.string() << "\n";
}

DatasetManifest read_manifest_index(const fs::path& file) {
    std::ifstream is(file);
    if (!is) throw DataError("cannot read manifest index: " + file.string());
    DatasetManifest m;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) fields.push_back(f);
        if (fields[0] == "root" && fields.size() == 2) {
            m.root = fields[1];
        } else if (fields[0] == "entry" && fields.size() == 5) {
            DatasetEntry e{fields[1], fields[2], fields[3], std::nullopt};
            if (fields[4] != "-") e.trimap = fields[4];
            m.entries.push_back(std::move(e));
        } else if (fields[0] == "background" && fields.size() == 2) {
            m.backgrounds.emplace_back(fields[1]);
        } else {
            throw DataError("malformed manifest index line " + std::to_string(lineno) + " in " + file.string());
        }
    }
    return m;
}

int eval_trimap_radius(const AugmentationConfig& cfg, int64_t index) {
    const auto span = static_cast<uint64_t>(cfg.trimap_kernel_max - cfg.trimap_kernel_min + 1);
    return cfg.trimap_kernel_min + static_cast<int>(splitmix64(static_cast<uint64_t>(index)) % span);
}

struct SampleStream::Cache {
    explicit Cache(DatasetManifest m)
        : manifest(std::move(m)),
          entry_once(manifest.entries.size()),
          bg_once(manifest.backgrounds.size()),
          fg(manifest.entries.size()),
          alpha(manifest.entries.size()),
          trimap(manifest.entries.size()),
          bg(manifest.backgrounds.size()) {}

    void load_entry(size_t i) {
        std::call_once(entry_once[i], [&] {
            const auto& e = manifest.entries[i];
            fg[i] = io::read_rgb(e.foreground);
            alpha[i] = io::read_alpha(e.alpha);
            if (!fg[i].same_shape(alpha[i])) throw DataError("foreground/alpha shape mismatch for " + e.name);
            if (e.trimap) {
                trimap[i] = io::read_trimap(*e.trimap);
                if (!trimap[i]->same_shape(alpha[i])) throw DataError("trimap shape mismatch for " + e.name);
            }
        });
    }
    const ImageRGB& background(size_t i) {
        std::call_once(bg_once[i], [&] { bg[i] = io::read_rgb(manifest.backgrounds[i]); });
        return bg[i];
    }

    DatasetManifest manifest;
    std::vector<std::once_flag> entry_once;
    std::vector<std::once_flag> bg_once;
    std::vector<ImageRGB> fg;
    std::vector<AlphaMatte> alpha;
    std::vector<std::optional<Trimap>> trimap;
    std::vector<ImageRGB> bg;
};

SampleStream::SampleStream(DatasetManifest manifest, AugmentationConfig cfg, Split split, int workers)
    : cfg_(std::move(cfg)), split_(split), workers_(std::max(1, workers)),
      cache_(std::make_unique<Cache>(std::move(manifest))) {
    if (cache_->manifest.entries.empty()) throw DataError("sample stream needs at least one dataset entry");
    if (cache_->manifest.backgrounds.empty()) throw DataError("sample stream needs at least one background");
}

SampleStream::~SampleStream() = default;
SampleStream::SampleStream(SampleStream&&) noexcept = default;
SampleStream& SampleStream::operator=(SampleStream&&) noexcept = default;

const DatasetManifest& SampleStream::manifest() const { return cache_->manifest; }

int64_t SampleStream::size() const {
    return split_ == Split::eval ? static_cast<int64_t>(cache_->manifest.entries.size()) : -1;
}

MattingSample SampleStream::at(int64_t index) const {
    return split_ == Split::eval ? eval_sample(index) : train_sample(index);
}

MattingSample SampleStream::eval_sample(int64_t index) const {
    const size_t n = cache_->manifest.entries.size();
    const size_t e = static_cast<size_t>(index) % n;
    cache_->load_entry(e);
    MattingSample s;
    s.id = cache_->manifest.entries[e].name;
    s.gt_foreground = cache_->fg[e];
    s.gt_alpha = cache_->alpha[e];
    const auto b = static_cast<size_t>(index) % cache_->manifest.backgrounds.size();
    s.gt_background = resize_bilinear(cache_->background(b), s.gt_alpha.height(), s.gt_alpha.width());
    s.image = composite(s.gt_foreground, s.gt_background, s.gt_alpha);
    if (cache_->trimap[e]) {
        s.trimap = *cache_->trimap[e];
    } else {
        const int r = eval_trimap_radius(cfg_, static_cast<int64_t>(e));
        s.trimap = generate_trimap(s.gt_alpha, r, r, cfg_.thresholds);
    }
    return s;
}

MattingSample SampleStream::train_sample(int64_t index) const {
    Rng rng = make_rng(cfg_.seed, static_cast<uint64_t>(index));
    const size_t n = cache_->manifest.entries.size();
    const size_t nb = cache_->manifest.backgrounds.size();
    constexpr int kAttempts = 16;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        const size_t e = std::uniform_int_distribution<size_t>(0, n - 1)(rng);
        const size_t b = std::uniform_int_distribution<size_t>(0, nb - 1)(rng);
        const AugmentParams params = draw_augment_params(cfg_, rng);
        cache_->load_entry(e);

        MattingSample s;
        s.id = "train-" + std::to_string(index) + "-" + cache_->manifest.entries[e].name;
        s.gt_foreground = cache_->fg[e];
        s.gt_alpha = cache_->alpha[e];
        s.gt_background = resize_bilinear(cache_->background(b), s.gt_alpha.height(), s.gt_alpha.width());
        s.image = composite(s.gt_foreground, s.gt_background, s.gt_alpha);
        s.trimap = generate_trimap(s.gt_alpha, params.erode_radius, params.dilate_radius, cfg_.thresholds);
        s = apply_augmentation(s, params, cfg_.thresholds);
        if (count_label(s.trimap, TrimapLabel::UNK) == 0) continue;
        return unknown_centered_crop(s, cfg_.crop_size, rng);
    }
    throw DataError("could not draw a training sample with an unknown region at index " + std::to_string(index));
}

std::vector<MattingSample> SampleStream::batch(int64_t first, int64_t count) const {
    std::vector<MattingSample> out(static_cast<size_t>(count));
    const int threads = static_cast<int>(std::min<int64_t>(workers_, count));
    if (threads <= 1) {
        for (int64_t i = 0; i < count; ++i) out[static_cast<size_t>(i)] = at(first + i);
        return out;
    }
    std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (int64_t i = t; i < count; i += threads) out[static_cast<size_t>(i)] = at(first + i);
            } catch (...) {
                errors[static_cast<size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

MattingSample SampleStream::next() { return at(cursor_++); }

}  // namespace transmat::data
