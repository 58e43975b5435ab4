#include "transmat/image_io.hpp"

#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace transmat::io {

namespace {

cv::Mat load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("file not found: " + path.string());
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw DataError("cannot decode image: " + path.string());
    if (m.depth() != CV_8U && m.depth() != CV_16U) {
        throw DataError("unsupported bit depth in " + path.string() + " (expected 8 or 16 bit)");
    }
    return m;
}

double unit_scale(const cv::Mat& m) { return m.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0; }

double sample(const cv::Mat& m, int y, int x, int c) {
    if (m.depth() == CV_16U) return m.ptr<uint16_t>(y)[x * m.channels() + c];
    return m.ptr<uint8_t>(y)[x * m.channels() + c];
}

void save(const std::filesystem::path& path, const cv::Mat& m) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), m)) throw DataError("cannot write image: " + path.string());
}

uint16_t quantize16(float v) {
    return static_cast<uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
}
uint8_t quantize8(float v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

ImageRGB read_rgb(const std::filesystem::path& path) {
    const cv::Mat m = load(path);
    const int ch = m.channels();
    if (ch != 1 && ch != 3 && ch != 4) throw DataError("unsupported channel count in " + path.string());
    const double s = unit_scale(m);
    ImageRGB out(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            for (int c = 0; c < 3; ++c) {
                // OpenCV stores BGR(A).
                const int src = ch == 1 ? 0 : 2 - c;
                out(y, x, c) = static_cast<float>(sample(m, y, x, src) * s);
            }
    return out;
}

AlphaMatte read_alpha(const std::filesystem::path& path) {
    const cv::Mat m = load(path);
    const double s = unit_scale(m);
    AlphaMatte out(m.rows, m.cols);
    // Multi-channel alpha files use their first (blue) channel, which equals
    // every channel for gray images saved as color.
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) out(y, x) = static_cast<float>(sample(m, y, x, 0) * s);
    return out;
}

GrayPlane8 read_gray8(const std::filesystem::path& path) {
    const cv::Mat m = load(path);
    if (m.depth() != CV_8U) throw DataError("expected an 8-bit image: " + path.string());
    GrayPlane8 out(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) out(y, x) = m.ptr<uint8_t>(y)[x * m.channels()];
    return out;
}

Trimap read_trimap(const std::filesystem::path& path) {
    const cv::Mat m = load(path);
    GrayPlane8 plane(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            if (m.depth() == CV_16U) {
                // 16-bit trimaps must hold the exact 16-bit images of 0/128/255.
                const uint16_t v = m.ptr<uint16_t>(y)[x * m.channels()];
                if (v == 0) {
                    plane(y, x) = 0;
                } else if (v == 128 * 257) {
                    plane(y, x) = 128;
                } else if (v == 65535) {
                    plane(y, x) = 255;
                } else {
                    throw InvalidTrimapError(v, y, x);
                }
            } else {
                plane(y, x) = m.ptr<uint8_t>(y)[x * m.channels()];
            }
        }
    return trimap_decode(plane);
}

std::pair<int64_t, int64_t> read_shape(const std::filesystem::path& path) {
    const cv::Mat m = load(path);
    return {m.rows, m.cols};
}

void write_rgb(const std::filesystem::path& path, const ImageRGB& image) {
    cv::Mat m(static_cast<int>(image.height()), static_cast<int>(image.width()), CV_8UC3);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            for (int c = 0; c < 3; ++c) m.ptr<uint8_t>(y)[x * 3 + (2 - c)] = quantize8(image(y, x, c));
    save(path, m);
}

void write_alpha8(const std::filesystem::path& path, const AlphaMatte& alpha) {
    cv::Mat m(static_cast<int>(alpha.height()), static_cast<int>(alpha.width()), CV_8UC1);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) m.ptr<uint8_t>(y)[x] = quantize8(alpha(y, x));
    save(path, m);
}

void write_alpha16(const std::filesystem::path& path, const AlphaMatte& alpha) {
    cv::Mat m(static_cast<int>(alpha.height()), static_cast<int>(alpha.width()), CV_16UC1);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) m.ptr<uint16_t>(y)[x] = quantize16(alpha(y, x));
    save(path, m);
}

void write_trimap(const std::filesystem::path& path, const Trimap& trimap) {
    const GrayPlane8 plane = trimap_encode(trimap);
    cv::Mat m(static_cast<int>(plane.height()), static_cast<int>(plane.width()), CV_8UC1);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) m.ptr<uint8_t>(y)[x] = plane(y, x);
    save(path, m);
}

}  // namespace transmat::io
