#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "transmat/network.hpp"

namespace transmat::gradcheck {

struct Options {
    uint64_t seed = 0;
    double eps = 1e-5;
    /// Entries probed per tensor; 0 probes every entry.
    int64_t max_entries = 0;
    /// Name of a tensor whose analytic gradient is deliberately perturbed (harness self-test).
    std::string corrupt;
    /// An entry whose forward and backward one-sided differences disagree by more than
    /// this (relative) straddles a kink. It is retried with eps/10, eps/100, eps/1000 and
    /// skipped if none is smooth. 0 disables.
    double kink_threshold = 1e-3;
    /// Lower bound on the norm used to normalise the error.
    double abs_floor = 1e-6;
};

struct TensorResult {
    std::string name;
    double rel_error = 0;  // |analytic - numeric| / max(|analytic|, |numeric|, floor) over probed entries
    int64_t probed = 0;
    int64_t refined = 0;  // entries evaluated with a reduced step
    int64_t skipped = 0;  // entries rejected as kinks
    double analytic_norm = 0;
    double numeric_norm = 0;
};

struct Report {
    std::string component;
    double tolerance = 0;
    double max_rel_error = 0;
    std::string worst_tensor;
    bool passed = false;
    std::vector<TensorResult> tensors;

    std::string summary() const;
};

using Inputs = std::vector<std::pair<std::string, Var<double>>>;

/// Compares reverse-mode gradients of the scalar `objective` with respect to
/// every input against central differences.
Report check(const std::string& component, const std::function<Var<double>()>& objective, const Inputs& inputs,
             double tolerance, const Options& opts);

/// attention, tri_token_attention, tgtb_block, mgf_fuse, losses, full_model_toy.
const std::vector<std::string>& components();

/// Small network used by full_model_toy (32 x 32 inputs).
NetworkConfig toy_network_config(uint64_t seed);

/// Runs the named component on seeded random inputs. Throws std::invalid_argument
/// for an unknown component.
Report run(const std::string& component, const Options& opts = {});

}  // namespace transmat::gradcheck
