#include "transmat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <nlohmann/json.hpp>

namespace transmat::metrics {

namespace {

void check(const AlphaMatte& pred, const AlphaMatte& gt, const Region& region, const char* what) {
    if (!pred.same_shape(gt) || !pred.same_shape(region)) {
        throw ShapeError(std::string(what) + ": prediction, ground truth and region differ in size");
    }
}

int64_t region_size(const Region& r) {
    return std::count_if(r.storage().begin(), r.storage().end(), [](uint8_t v) { return v != 0; });
}

void require_nonempty(const Region& r, const char* what) {
    if (region_size(r) == 0) throw NoUnknownRegionError(std::string(what) + ": empty region");
}

std::vector<double> to_double(const AlphaMatte& a) { return {a.storage().begin(), a.storage().end()}; }

// Full 2-D convolution (kernel flipped) with replicate borders.
std::vector<double> convolve(const std::vector<double>& img, int64_t h, int64_t w, const std::vector<double>& k,
                             int r) {
    std::vector<double> out(img.size(), 0.0);
    const int side = 2 * r + 1;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double s = 0;
            for (int a = -r; a <= r; ++a) {
                const int64_t sy = std::clamp<int64_t>(y - a, 0, h - 1);
                for (int b = -r; b <= r; ++b) {
                    const int64_t sx = std::clamp<int64_t>(x - b, 0, w - 1);
                    s += k[static_cast<size_t>((a + r) * side + (b + r))] * img[static_cast<size_t>(sy * w + sx)];
                }
            }
            out[static_cast<size_t>(y * w + x)] = s;
        }
    return out;
}

std::vector<double> gradient_magnitude(const std::vector<double>& img, int64_t h, int64_t w, double sigma) {
    int r = 0;
    const auto hx = gauss_derivative_kernel(sigma, r);
    const int side = 2 * r + 1;
    std::vector<double> hy(hx.size());
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) hy[static_cast<size_t>(i * side + j)] = hx[static_cast<size_t>(j * side + i)];
    const auto gx = convolve(img, h, w, hx, r);
    const auto gy = convolve(img, h, w, hy, r);
    std::vector<double> mag(img.size());
    for (size_t i = 0; i < mag.size(); ++i) mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    return mag;
}

// Pixels of the largest 4-connected component of `mask`; ties go to the
// component whose first pixel comes first in column-major order.
std::vector<uint8_t> largest_component(const std::vector<uint8_t>& mask, int64_t h, int64_t w) {
    std::vector<int32_t> label(mask.size(), -1);
    std::vector<int64_t> sizes;
    std::vector<int64_t> stack;
    for (int64_t x = 0; x < w; ++x)
        for (int64_t y = 0; y < h; ++y) {
            const int64_t start = y * w + x;
            if (!mask[static_cast<size_t>(start)] || label[static_cast<size_t>(start)] >= 0) continue;
            const auto id = static_cast<int32_t>(sizes.size());
            int64_t count = 0;
            stack.assign(1, start);
            label[static_cast<size_t>(start)] = id;
            while (!stack.empty()) {
                const int64_t p = stack.back();
                stack.pop_back();
                ++count;
                const int64_t py = p / w, px = p % w;
                const int64_t nb[4][2] = {{py - 1, px}, {py + 1, px}, {py, px - 1}, {py, px + 1}};
                for (const auto& q : nb) {
                    if (q[0] < 0 || q[0] >= h || q[1] < 0 || q[1] >= w) continue;
                    const int64_t qi = q[0] * w + q[1];
                    if (mask[static_cast<size_t>(qi)] && label[static_cast<size_t>(qi)] < 0) {
                        label[static_cast<size_t>(qi)] = id;
                        stack.push_back(qi);
                    }
                }
            }
            sizes.push_back(count);
        }
    std::vector<uint8_t> omega(mask.size(), 0);
    if (sizes.empty()) return omega;
    const auto best = static_cast<int32_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    for (size_t i = 0; i < omega.size(); ++i) omega[i] = label[i] == best ? 1 : 0;
    return omega;
}

}  // namespace

Region unknown_region(const Trimap& trimap) {
    Region r(trimap.height(), trimap.width());
    for (size_t i = 0; i < r.storage().size(); ++i) r.storage()[i] = trimap.storage()[i] == TrimapLabel::UNK ? 1 : 0;
    return r;
}

Region full_region(int64_t height, int64_t width) { return Region(height, width, uint8_t{1}); }

double sad(const AlphaMatte& pred, const AlphaMatte& gt, const Region& region) {
    check(pred, gt, region, "sad");
    require_nonempty(region, "sad");
    double s = 0;
    for (size_t i = 0; i < region.storage().size(); ++i)
        if (region.storage()[i]) s += std::abs(double(pred.storage()[i]) - double(gt.storage()[i]));
    return s / 1000.0;
}

double mse(const AlphaMatte& pred, const AlphaMatte& gt, const Region& region) {
    check(pred, gt, region, "mse");
    require_nonempty(region, "mse");
    double s = 0;
    for (size_t i = 0; i < region.storage().size(); ++i) {
        if (!region.storage()[i]) continue;
        const double d = double(pred.storage()[i]) - double(gt.storage()[i]);
        s += d * d;
    }
    return 1000.0 * s / static_cast<double>(region_size(region));
}

std::vector<double> gauss_derivative_kernel(double sigma, int& halfsize) {
    const double eps = 1e-2;
    halfsize = static_cast<int>(std::ceil(sigma * std::sqrt(-2.0 * std::log(std::sqrt(2.0 * std::numbers::pi) * sigma * eps))));
    const int side = 2 * halfsize + 1;
    auto gauss = [sigma](double x) { return std::exp(-x * x / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi)); };
    auto dgauss = [&](double x) { return -x * gauss(x) / (sigma * sigma); };
    std::vector<double> k(static_cast<size_t>(side * side));
    double norm = 0;
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
            const double v = gauss(i - halfsize) * dgauss(j - halfsize);
            k[static_cast<size_t>(i * side + j)] = v;
            norm += v * v;
        }
    norm = std::sqrt(norm);
    for (double& v : k) v /= norm;
    return k;
}

double grad_error(const AlphaMatte& pred, const AlphaMatte& gt, const Region& region, double sigma) {
    check(pred, gt, region, "grad_error");
    require_nonempty(region, "grad_error");
    const int64_t h = pred.height(), w = pred.width();
    const auto gp = gradient_magnitude(to_double(pred), h, w, sigma);
    const auto gg = gradient_magnitude(to_double(gt), h, w, sigma);
    double s = 0;
    for (size_t i = 0; i < gp.size(); ++i)
        if (region.storage()[i]) s += (gp[i] - gg[i]) * (gp[i] - gg[i]);
    return s / 1000.0;
}

double conn_error(const AlphaMatte& pred, const AlphaMatte& gt, const Region& region, double step) {
    check(pred, gt, region, "conn_error");
    require_nonempty(region, "conn_error");
    if (!(step > 0 && step < 1)) throw std::invalid_argument("conn_error: step must lie in (0, 1)");
    const int64_t h = pred.height(), w = pred.width();
    const auto p = to_double(pred), g = to_double(gt);
    const auto n = static_cast<int>(std::lround(1.0 / step));
    std::vector<double> l_map(p.size(), -1.0);
    std::vector<uint8_t> both(p.size());
    for (int k = 1; k < n; ++k) {
        const double th = static_cast<double>(k) / n;
        const double prev = static_cast<double>(k - 1) / n;
        for (size_t i = 0; i < p.size(); ++i) both[i] = p[i] >= th && g[i] >= th;
        const auto omega = largest_component(both, h, w);
        for (size_t i = 0; i < p.size(); ++i)
            if (l_map[i] == -1.0 && !omega[i]) l_map[i] = prev;
    }
    double s = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double l = l_map[i] == -1.0 ? 1.0 : l_map[i];
        const double pd = p[i] - l, gd = g[i] - l;
        const double pphi = 1.0 - (pd >= 0.15 ? pd : 0.0);
        const double gphi = 1.0 - (gd >= 0.15 ? gd : 0.0);
        if (region.storage()[i]) s += std::abs(pphi - gphi);
    }
    return s / 1000.0;
}

std::string MetricReport::to_json_line() const {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["sad"] = sad;
    j["mse"] = mse;
    j["grad"] = grad;
    j["conn"] = conn;
    j["region_pixels"] = region_pixels;
    return j.dump();
}

MetricReport MetricReport::from_json_line(const std::string& line) {
    try {
        const auto j = nlohmann::json::parse(line);
        MetricReport r;
        r.id = j.at("id").get<std::string>();
        r.sad = j.at("sad").get<double>();
        r.mse = j.at("mse").get<double>();
        r.grad = j.at("grad").get<double>();
        r.conn = j.at("conn").get<double>();
        r.region_pixels = j.at("region_pixels").get<int64_t>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed metric record: ") + e.what());
    }
}

MetricReport evaluate(const AlphaMatte& pred, const MattingSample& sample, bool whole_image, const MetricConfig& cfg) {
    if (!pred.same_shape(sample.gt_alpha)) throw ShapeError("evaluate: prediction does not match sample " + sample.id);
    const Region region = whole_image ? full_region(pred.height(), pred.width()) : unknown_region(sample.trimap);
    MetricReport r;
    r.id = sample.id;
    r.sad = sad(pred, sample.gt_alpha, region);
    r.mse = mse(pred, sample.gt_alpha, region);
    r.grad = grad_error(pred, sample.gt_alpha, region, cfg.grad_sigma);
    r.conn = conn_error(pred, sample.gt_alpha, region, cfg.conn_step);
    r.region_pixels = region_size(region);
    return r;
}

MetricReport mean_report(const std::vector<MetricReport>& reports, const std::string& id) {
    MetricReport m;
    m.id = id;
    if (reports.empty()) return m;
    for (const auto& r : reports) {
        m.sad += r.sad;
        m.mse += r.mse;
        m.grad += r.grad;
        m.conn += r.conn;
        m.region_pixels += r.region_pixels;
    }
    const auto n = static_cast<double>(reports.size());
    m.sad /= n;
    m.mse /= n;
    m.grad /= n;
    m.conn /= n;
    return m;
}

}  // namespace transmat::metrics
