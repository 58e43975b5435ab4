#pragma once

#include <string>
#include <vector>

#include "transmat/types.hpp"

namespace transmat::metrics {

struct RegionTag {};
/// 1 where a pixel counts towards a metric.
using Region = Plane<uint8_t, 1, RegionTag>;

Region unknown_region(const Trimap& trimap);
Region full_region(int64_t height, int64_t width);

struct MetricConfig {
    double grad_sigma = 1.4;
    double conn_step = 0.1;
};

/// Sum of |pred - gt| over the region, / 1000.
double sad(const AlphaMatte& pred, const AlphaMatte& gt, const Region& region);
/// 1000 * mean over the region of (pred - gt)^2.
double mse(const AlphaMatte& pred, const AlphaMatte& gt, const Region& region);
/// Sum over the region of (|grad pred| - |grad gt|)^2 / 1000, with normalized
/// first-order Gaussian derivative filters and replicate borders.
double grad_error(const AlphaMatte& pred, const AlphaMatte& gt, const Region& region, double sigma = 1.4);
/// Connectivity error with thresholds step, 2 step, ... < 1, 4-connectivity, / 1000.
double conn_error(const AlphaMatte& pred, const AlphaMatte& gt, const Region& region, double step = 0.1);

/// The derivative-of-Gaussian kernel along x, (2r+1) x (2r+1) row-major, unit L2 norm.
std::vector<double> gauss_derivative_kernel(double sigma, int& halfsize);

struct MetricReport {
    std::string id;
    double sad = 0;
    double mse = 0;
    double grad = 0;
    double conn = 0;
    int64_t region_pixels = 0;

    /// One JSON object with fields in the order id, sad, mse, grad, conn, region_pixels.
    std::string to_json_line() const;
    static MetricReport from_json_line(const std::string& line);
    bool operator==(const MetricReport&) const = default;
};

/// All four metrics over the sample's UNK region (or the whole image).
MetricReport evaluate(const AlphaMatte& pred, const MattingSample& sample, bool whole_image = false,
                      const MetricConfig& cfg = {});

/// Arithmetic mean of each field in input order; region_pixels is summed.
MetricReport mean_report(const std::vector<MetricReport>& reports, const std::string& id = "mean");

}  // namespace transmat::metrics
