#pragma once

#include <string>

#include "mrio/mesh.hpp"
#include "mrio/tensor.hpp"

namespace mrio {

enum class WeightMode { Fixed, Uncertainty };

// Task-loss weighting: either fixed (alpha, beta, delta) or learnable
// homoscedastic noise scales parameterised as log sigma (positivity for
// free; initial log sigma = 0).
struct MultiTaskWeights {
    WeightMode mode = WeightMode::Uncertainty;
    double alpha = 1.0, beta = 1.0, delta = 1.0;
    Tensor log_sigma1, log_sigma2, log_sigma3;

    static MultiTaskWeights fixed(double a, double b, double d);
    static MultiTaskWeights uncertainty(double init_log_sigma = 0.0);
    std::vector<Tensor> trainable() const;
    void validate() const;
};

struct LossReport {
    long long step = 0;
    double matching = 0.0;   // L_F
    double occupancy = 0.0;  // L_B
    double smooth = 0.0;     // L_S
    double sigma1 = 1.0, sigma2 = 1.0, sigma3 = 1.0;  // fixed mode echoes weights
    double total = 0.0;
    std::string json_line() const;
};

// Mean binary cross-entropy. Predictions outside [1e-12, 1-1e-12] are run
// through an affine squash into that band first (counted by
// bce_clamp_events).
Tensor bce_occupancy(const Tensor& predictions, const Tensor& targets);
size_t bce_clamp_events();
void reset_bce_clamp_events();

// Integral of squared principal curvatures, discretised per interior vertex
// as (4H^2 - 2K) * A_mixed. The mesh is not a tape quantity; the returned
// scalar is constant. See pcso for the field-side surrogate.
double smooth_loss_value(const TriangleMesh& mesh);
Tensor smooth_loss(const TriangleMesh& mesh);

// alpha L_F + beta L_B + delta L_S + 1/alpha + 1/beta + 1/delta.
Tensor fixed_total(const Tensor& l_f, const Tensor& l_b, const Tensor& l_s, double alpha,
                   double beta, double delta, LossReport* report = nullptr);

// sum_i [ exp(-2 log sigma_i)/2 * L_i + log sigma_i ].
Tensor uncertainty_total(const Tensor& l_f, const Tensor& l_b, const Tensor& l_s,
                         const MultiTaskWeights& weights, LossReport* report = nullptr);

// Dispatch on weights.mode.
Tensor multitask_total(const Tensor& l_f, const Tensor& l_b, const Tensor& l_s,
                       const MultiTaskWeights& weights, LossReport* report = nullptr);

// Biased squared-MMD with a Gaussian kernel over row-vector sets (n,d), (m,d).
Tensor mmd(const Tensor& src, const Tensor& tgt, double bandwidth);
// Median pairwise distance over the pooled rows (the bandwidth heuristic).
double median_bandwidth(const Tensor& src, const Tensor& tgt);

// L_source + lambda * mmd_value.
Tensor adaptation_loss(const Tensor& l_source, const Tensor& mmd_value, double lambda);

}  // namespace mrio
