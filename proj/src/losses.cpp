#include "mrio/losses.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "json.hpp"

namespace mrio {

MultiTaskWeights MultiTaskWeights::fixed(double a, double b, double d) {
    MultiTaskWeights w;
    w.mode = WeightMode::Fixed;
    w.alpha = a;
    w.beta = b;
    w.delta = d;
    w.validate();
    return w;
}

MultiTaskWeights MultiTaskWeights::uncertainty(double init_log_sigma) {
    MultiTaskWeights w;
    w.mode = WeightMode::Uncertainty;
    w.log_sigma1 = Tensor::param({}, {init_log_sigma});
    w.log_sigma2 = Tensor::param({}, {init_log_sigma});
    w.log_sigma3 = Tensor::param({}, {init_log_sigma});
    return w;
}

std::vector<Tensor> MultiTaskWeights::trainable() const {
    if (mode == WeightMode::Fixed) return {};
    return {log_sigma1, log_sigma2, log_sigma3};
}

void MultiTaskWeights::validate() const {
    if (mode == WeightMode::Fixed)
        check(alpha > 0.0 && beta > 0.0 && delta > 0.0,
              "multitask weights: fixed weights must be positive");
}

std::string LossReport::json_line() const {
    nlohmann::json j;
    j["step"] = step;
    j["L_F"] = matching;
    j["L_B"] = occupancy;
    j["L_S"] = smooth;
    j["sigma1"] = sigma1;
    j["sigma2"] = sigma2;
    j["sigma3"] = sigma3;
    j["total"] = total;
    return j.dump();
}

namespace {
std::atomic<size_t> g_bce_clamps{0};
constexpr double kBceEps = 1e-12;
}  // namespace

size_t bce_clamp_events() { return g_bce_clamps.load(); }
void reset_bce_clamp_events() { g_bce_clamps.store(0); }

Tensor bce_occupancy(const Tensor& predictions, const Tensor& targets) {
    check(predictions.size() == targets.size() && predictions.size() > 0,
          "bce: prediction/target size mismatch");
    for (double t : targets.data())
        check(t >= 0.0 && t <= 1.0, "bce: target outside [0,1]");
    bool needs_clamp = false;
    for (double o : predictions.data())
        if (!(o >= kBceEps && o <= 1.0 - kBceEps)) needs_clamp = true;
    Tensor o = predictions;
    if (needs_clamp) {
        ++g_bce_clamps;
        // affine squash into [eps, 1-eps]; keeps the tape path differentiable
        o = add(mul(predictions, Tensor::scalar(1.0 - 2.0 * kBceEps)), Tensor::scalar(kBceEps));
    }
    Tensor one = Tensor::scalar(1.0);
    Tensor term = add(mul(targets, log(o)), mul(sub(one, targets), log(sub(one, o))));
    return mul(Tensor::scalar(-1.0), mean(term));
}

double smooth_loss_value(const TriangleMesh& mesh) {
    if (mesh.empty()) return 0.0;
    auto curv = mesh_curvature(mesh);
    double total = 0.0;
    for (const auto& c : curv) {
        if (c.boundary) continue;
        double k1k2 = 4.0 * c.mean * c.mean - 2.0 * c.gauss;  // k1^2 + k2^2
        total += k1k2 * c.area;
    }
    return total;
}

Tensor smooth_loss(const TriangleMesh& mesh) { return Tensor::scalar(smooth_loss_value(mesh)); }

Tensor fixed_total(const Tensor& l_f, const Tensor& l_b, const Tensor& l_s, double alpha,
                   double beta, double delta, LossReport* report) {
    check(alpha > 0.0 && beta > 0.0 && delta > 0.0, "fixed_total: weights must be positive");
    Tensor total = add(add(mul(Tensor::scalar(alpha), l_f), mul(Tensor::scalar(beta), l_b)),
                       add(mul(Tensor::scalar(delta), l_s),
                           Tensor::scalar(1.0 / alpha + 1.0 / beta + 1.0 / delta)));
    if (report) {
        report->matching = l_f.value();
        report->occupancy = l_b.value();
        report->smooth = l_s.value();
        report->sigma1 = alpha;
        report->sigma2 = beta;
        report->sigma3 = delta;
        report->total = total.value();
    }
    return total;
}

namespace {

Tensor uncertainty_term(const Tensor& loss, const Tensor& log_sigma) {
    Tensor w = exp(mul(Tensor::scalar(-2.0), log_sigma));  // 1/sigma^2
    return add(mul(mul(Tensor::scalar(0.5), w), loss), log_sigma);
}

}  // namespace

Tensor uncertainty_total(const Tensor& l_f, const Tensor& l_b, const Tensor& l_s,
                         const MultiTaskWeights& weights, LossReport* report) {
    check(weights.log_sigma1.defined() && weights.log_sigma2.defined() &&
              weights.log_sigma3.defined(),
          "uncertainty_total: weights not initialised");
    Tensor total = add(uncertainty_term(l_f, weights.log_sigma1),
                       add(uncertainty_term(l_b, weights.log_sigma2),
                           uncertainty_term(l_s, weights.log_sigma3)));
    if (report) {
        report->matching = l_f.value();
        report->occupancy = l_b.value();
        report->smooth = l_s.value();
        report->sigma1 = std::exp(weights.log_sigma1.value());
        report->sigma2 = std::exp(weights.log_sigma2.value());
        report->sigma3 = std::exp(weights.log_sigma3.value());
        report->total = total.value();
    }
    return total;
}

Tensor multitask_total(const Tensor& l_f, const Tensor& l_b, const Tensor& l_s,
                       const MultiTaskWeights& weights, LossReport* report) {
    if (weights.mode == WeightMode::Fixed)
        return fixed_total(l_f, l_b, l_s, weights.alpha, weights.beta, weights.delta, report);
    return uncertainty_total(l_f, l_b, l_s, weights, report);
}

Tensor mmd(const Tensor& src, const Tensor& tgt, double bandwidth) {
    check(src.ndim() == 2 && tgt.ndim() == 2, "mmd: inputs must be (n,d)");
    check(src.shape()[1] == tgt.shape()[1], "mmd: dimension mismatch");
    check(src.shape()[0] > 0 && tgt.shape()[0] > 0, "mmd: empty set");
    check(bandwidth > 0.0, "mmd: bandwidth must be positive");
    const size_t n = src.shape()[0], m = tgt.shape()[0], d = src.shape()[1];
    const double inv2bw2 = 1.0 / (2.0 * bandwidth * bandwidth);
    const auto& x = src.data();
    const auto& y = tgt.data();

    auto kernel_mean = [&](const std::vector<double>& a, size_t na, const std::vector<double>& b,
                           size_t nb) {
        double acc = 0.0;
        for (size_t i = 0; i < na; ++i)
            for (size_t j = 0; j < nb; ++j) {
                double dist2 = 0.0;
                for (size_t c = 0; c < d; ++c) {
                    double diff = a[i * d + c] - b[j * d + c];
                    dist2 += diff * diff;
                }
                acc += std::exp(-dist2 * inv2bw2);
            }
        return acc / double(na * nb);
    };

    double value = kernel_mean(x, n, x, n) + kernel_mean(y, m, y, m) - 2.0 * kernel_mean(x, n, y, m);

    return custom_op(
        {src, tgt}, Shape{}, {value},
        [x, y, n, m, d, inv2bw2](const std::vector<double>& g,
                                 const std::vector<std::vector<double>*>& in) {
            const double go = g[0];
            // d k(a,b)/d a = -k(a,b) * (a-b) / bw^2
            auto accumulate = [&](const std::vector<double>& a, size_t na,
                                  const std::vector<double>& b, size_t nb, double weight,
                                  std::vector<double>* da, std::vector<double>* db) {
                if (!da && !db) return;
                double scale = go * weight / double(na * nb);
                for (size_t i = 0; i < na; ++i)
                    for (size_t j = 0; j < nb; ++j) {
                        double dist2 = 0.0;
                        for (size_t c = 0; c < d; ++c) {
                            double diff = a[i * d + c] - b[j * d + c];
                            dist2 += diff * diff;
                        }
                        double k = std::exp(-dist2 * inv2bw2);
                        double f = -2.0 * inv2bw2 * k * scale;
                        for (size_t c = 0; c < d; ++c) {
                            double diff = a[i * d + c] - b[j * d + c];
                            if (da) (*da)[i * d + c] += f * diff;
                            if (db) (*db)[j * d + c] -= f * diff;
                        }
                    }
            };
            // value = mean_xx + mean_yy - 2 mean_xy
            accumulate(x, n, x, n, 1.0, in[0], in[0]);
            accumulate(y, m, y, m, 1.0, in[1], in[1]);
            accumulate(x, n, y, m, -2.0, in[0], in[1]);
        });
}

double median_bandwidth(const Tensor& src, const Tensor& tgt) {
    check(src.ndim() == 2 && tgt.ndim() == 2 && src.shape()[1] == tgt.shape()[1],
          "median_bandwidth: bad inputs");
    const size_t d = src.shape()[1];
    std::vector<const std::vector<double>*> sets{&src.data(), &tgt.data()};
    std::vector<double> rows;
    for (const auto* s : sets) rows.insert(rows.end(), s->begin(), s->end());
    const size_t n = rows.size() / d;
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            double dist2 = 0.0;
            for (size_t c = 0; c < d; ++c) {
                double diff = rows[i * d + c] - rows[j * d + c];
                dist2 += diff * diff;
            }
            dists.push_back(std::sqrt(dist2));
        }
    if (dists.empty()) return 1.0;
    std::nth_element(dists.begin(), dists.begin() + long(dists.size() / 2), dists.end());
    double med = dists[dists.size() / 2];
    return med > 1e-12 ? med : 1.0;
}

Tensor adaptation_loss(const Tensor& l_source, const Tensor& mmd_value, double lambda) {
    check(lambda >= 0.0, "adaptation_loss: lambda must be >= 0");
    return add(l_source, mul(Tensor::scalar(lambda), mmd_value));
}

}  // namespace mrio
