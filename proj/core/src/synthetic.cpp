#include "transmat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "transmat/errors.hpp"
#include "transmat/image_io.hpp"

namespace transmat::synthetic {

namespace fs = std::filesystem;

void SyntheticConfig::validate() const {
    if (count < 1) throw ConfigError("synthetic count must be at least 1");
    if (backgrounds < 1) throw ConfigError("synthetic background count must be at least 1");
    if (height < 16 || width < 16) throw ConfigError("synthetic images must be at least 16 x 16");
    if (!(edge_width > 0)) throw ConfigError("synthetic edge_width must be positive");
}

namespace {

enum : uint64_t { kAlphaStream = 0x616c, kFgStream = 0x6667, kBgStream = 0x6267 };

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3 - 2 * t);
}

// Sum of a few random plane waves, roughly in [0, 1].
struct Texture {
    struct Wave {
        double fy, fx, phase, amp;
    };
    double base[3];
    std::vector<Wave> waves[3];

    Texture(Rng& rng, int n, double max_freq) {
        for (int c = 0; c < 3; ++c) {
            base[c] = uniform(rng, 0.2, 0.8);
            for (int k = 0; k < n; ++k) {
                waves[c].push_back({uniform(rng, -max_freq, max_freq), uniform(rng, -max_freq, max_freq),
                                    uniform(rng, 0, 2 * std::numbers::pi), uniform(rng, 0.02, 0.15)});
            }
        }
    }

    ImageRGB render(int64_t h, int64_t w) const {
        ImageRGB img(h, w);
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) {
                    double v = base[c];
                    for (const auto& wv : waves[c]) {
                        v += wv.amp * std::sin(wv.fy * static_cast<double>(y) + wv.fx * static_cast<double>(x) + wv.phase);
                    }
                    img(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
        return img;
    }
};

}  // namespace

AlphaMatte make_alpha(const SyntheticConfig& cfg, int64_t index) {
    cfg.validate();
    Rng rng = make_rng(cfg.seed, kAlphaStream + (static_cast<uint64_t>(index) << 16));
    const auto h = static_cast<double>(cfg.height), w = static_cast<double>(cfg.width);
    // Superellipse body, kept away from the border so a BG band always survives.
    const double cy = uniform(rng, 0.4, 0.6) * h, cx = uniform(rng, 0.4, 0.6) * w;
    const double ry = uniform(rng, 0.18, 0.3) * h, rx = uniform(rng, 0.18, 0.3) * w;
    const double power = uniform(rng, 1.5, 4.0);
    const double theta = uniform(rng, 0, std::numbers::pi);
    const bool translucent = index % 2 == 1;
    const double body = translucent ? uniform(rng, 0.35, 0.8) : 1.0;
    // Wavy rim perturbs the radius.
    const double rim_amp = uniform(rng, 0.0, 0.12), rim_freq = std::floor(uniform(rng, 2, 7));
    const double ct = std::cos(theta), st = std::sin(theta);
    const double scale = std::min(ry, rx);

    AlphaMatte a(cfg.height, cfg.width);
    for (int64_t y = 0; y < cfg.height; ++y)
        for (int64_t x = 0; x < cfg.width; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
            const double u = (ct * dx + st * dy) / rx, v = (-st * dx + ct * dy) / ry;
            const double r = std::pow(std::pow(std::abs(u), power) + std::pow(std::abs(v), power), 1.0 / power);
            const double phi = std::atan2(v, u);
            const double radius = 1.0 + rim_amp * std::sin(rim_freq * phi);
            // Approximate signed distance in pixels; negative inside.
            const double d = (r - radius) * scale;
            const double t = smoothstep(0.5 - d / cfg.edge_width);
            a(y, x) = static_cast<float>(body * t);
        }
    return a;
}

ImageRGB make_foreground(const SyntheticConfig& cfg, int64_t index) {
    cfg.validate();
    Rng rng = make_rng(cfg.seed, kFgStream + (static_cast<uint64_t>(index) << 16));
    return Texture(rng, 3, 0.3).render(cfg.height, cfg.width);
}

ImageRGB make_background(const SyntheticConfig& cfg, int64_t index) {
    cfg.validate();
    Rng rng = make_rng(cfg.seed, kBgStream + (static_cast<uint64_t>(index) << 16));
    return Texture(rng, 5, 0.6).render(cfg.height, cfg.width);
}

MattingSample make_sample(const SyntheticConfig& cfg, int64_t index, int trimap_radius) {
    MattingSample s;
    char id[32];
    std::snprintf(id, sizeof id, "syn_%03lld", static_cast<long long>(index));
    s.id = id;
    s.gt_alpha = make_alpha(cfg, index);
    s.gt_foreground = make_foreground(cfg, index);
    s.gt_background = make_background(cfg, index % cfg.backgrounds);
    s.image = data::composite(s.gt_foreground, s.gt_background, s.gt_alpha);
    s.trimap = data::generate_trimap(s.gt_alpha, trimap_radius, trimap_radius);
    s.synthesized = true;
    return s;
}

data::DatasetManifest write_dataset(const fs::path& root, const SyntheticConfig& cfg) {
    cfg.validate();
    for (const char* sub : {"fg", "alpha", "bg"}) fs::create_directories(root / sub);
    char name[32];
    for (int64_t i = 0; i < cfg.count; ++i) {
        std::snprintf(name, sizeof name, "syn_%03lld.png", static_cast<long long>(i));
        io::write_rgb(root / "fg" / name, make_foreground(cfg, i));
        io::write_alpha16(root / "alpha" / name, make_alpha(cfg, i));
    }
    for (int64_t i = 0; i < cfg.backgrounds; ++i) {
        std::snprintf(name, sizeof name, "bg_%03lld.png", static_cast<long long>(i));
        io::write_rgb(root / "bg" / name, make_background(cfg, i));
    }
    return data::load_manifest(root);
}

}  // namespace transmat::synthetic
