#include "transmat/types.hpp"

#include <cmath>
#include <sstream>

#include "transmat/tensor.hpp"

namespace transmat {

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

const char* label_name(TrimapLabel label) {
    switch (label) {
        case TrimapLabel::FG: return "FG";
        case TrimapLabel::BG: return "BG";
        case TrimapLabel::UNK: return "UNK";
    }
    return "?";
}

namespace {

std::string at_pixel(const char* plane, int64_t y, int64_t x) {
    std::ostringstream os;
    os << plane << " at (" << y << "," << x << ")";
    return os.str();
}

template <class P>
void check_unit_range(const P& plane, const char* name, std::vector<std::string>& out) {
    const auto data = plane.data();
    for (size_t i = 0; i < data.size(); ++i) {
        const float v = data[i];
        if (!(v >= 0.0f && v <= 1.0f)) {
            const int64_t pix = static_cast<int64_t>(i) / P::kChannels;
            std::ostringstream os;
            os << "value " << v << " outside [0,1] in " << at_pixel(name, pix / plane.width(), pix % plane.width());
            out.push_back(os.str());
            return;
        }
    }
}

}  // namespace

std::vector<std::string> validate_sample(const MattingSample& s) {
    std::vector<std::string> out;
    if (s.image.height() < 1 || s.image.width() < 1) {
        out.push_back("image has empty shape " + std::to_string(s.image.height()) + "x" +
                      std::to_string(s.image.width()));
        return out;
    }
    bool shapes_ok = true;
    auto shape_check = [&](const auto& plane, const char* name) {
        if (!plane.same_shape(s.image)) {
            shapes_ok = false;
            out.push_back(std::string("shape mismatch: ") + name + " is " + std::to_string(plane.height()) + "x" +
                          std::to_string(plane.width()) + " but image is " + std::to_string(s.image.height()) +
                          "x" + std::to_string(s.image.width()));
        }
    };
    shape_check(s.trimap, "trimap");
    shape_check(s.gt_alpha, "gt_alpha");
    shape_check(s.gt_foreground, "gt_foreground");
    shape_check(s.gt_background, "gt_background");

    check_unit_range(s.image, "image", out);
    check_unit_range(s.gt_alpha, "gt_alpha", out);
    check_unit_range(s.gt_foreground, "gt_foreground", out);
    check_unit_range(s.gt_background, "gt_background", out);

    for (int64_t i = 0; i < s.trimap.pixels(); ++i) {
        const auto v = static_cast<uint8_t>(s.trimap.data()[static_cast<size_t>(i)]);
        if (v >= kNumTrimapLabels) {
            out.push_back("invalid trimap label " + std::to_string(v) + " in " +
                          at_pixel("trimap", i / s.trimap.width(), i % s.trimap.width()));
            break;
        }
    }

    if (shapes_ok && s.synthesized) {
        const int64_t w = s.image.width();
        for (int64_t i = 0; i < s.image.pixels(); ++i) {
            const double a = s.gt_alpha.data()[static_cast<size_t>(i)];
            bool bad = false;
            for (int c = 0; c < 3 && !bad; ++c) {
                const size_t k = static_cast<size_t>(i * 3 + c);
                const double expect = a * s.gt_foreground.data()[k] + (1.0 - a) * s.gt_background.data()[k];
                bad = std::abs(expect - s.image.data()[k]) > kCompositeTolerance;
            }
            if (bad) {
                out.push_back("image differs from composite(fg, bg, alpha) in " + at_pixel("image", i / w, i % w));
                break;
            }
        }
    }
    return out;
}

GrayPlane8 trimap_encode(const Trimap& trimap) {
    GrayPlane8 out(trimap.height(), trimap.width());
    for (size_t i = 0; i < trimap.storage().size(); ++i) {
        switch (trimap.storage()[i]) {
            case TrimapLabel::BG: out.storage()[i] = 0; break;
            case TrimapLabel::UNK: out.storage()[i] = 128; break;
            case TrimapLabel::FG: out.storage()[i] = 255; break;
        }
    }
    return out;
}

Trimap trimap_decode(const GrayPlane8& plane) {
    Trimap out(plane.height(), plane.width());
    for (size_t i = 0; i < plane.storage().size(); ++i) {
        const uint8_t v = plane.storage()[i];
        TrimapLabel label;
        if (v == 0) {
            label = TrimapLabel::BG;
        } else if (v == 128) {
            label = TrimapLabel::UNK;
        } else if (v == 255) {
            label = TrimapLabel::FG;
        } else {
            const auto pix = static_cast<int64_t>(i);
            throw InvalidTrimapError(v, pix / plane.width(), pix % plane.width());
        }
        out.storage()[i] = label;
    }
    return out;
}

NonBackgroundMask nonbackground_mask(const Trimap& trimap) {
    NonBackgroundMask m(trimap.height(), trimap.width());
    for (size_t i = 0; i < trimap.storage().size(); ++i) {
        m.storage()[i] = trimap.storage()[i] == TrimapLabel::BG ? 0 : 1;
    }
    return m;
}

int64_t count_label(const Trimap& trimap, TrimapLabel label) {
    int64_t n = 0;
    for (auto l : trimap.storage()) n += (l == label);
    return n;
}

}  // namespace transmat
