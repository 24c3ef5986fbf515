#include "doctest.h"

#include <cmath>

#include "mrio/losses.hpp"
#include "mrio/rng.hpp"
#include "test_helpers.hpp"

using namespace mrio;

TEST_SUITE_BEGIN("losses");

TEST_CASE("bce_occupancy") {
    SUBCASE("fair-coin entropy") {
        Tensor o = Tensor::from({4}, {0.5, 0.5, 0.5, 0.5});
        Tensor t = Tensor::from({4}, {0.5, 0.5, 0.5, 0.5});
        CHECK(bce_occupancy(o, t).value() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    }
    SUBCASE("confident correct prediction is near zero") {
        Tensor o = Tensor::from({1}, {1.0 - 1e-12});
        Tensor t = Tensor::from({1}, {1.0});
        CHECK(bce_occupancy(o, t).value() < 1e-11);
    }
    SUBCASE("minimised at o equal to the soft target") {
        Tensor t = Tensor::from({1}, {0.5});
        double best_o = -1.0, best_v = 1e300;
        for (double o = 0.01; o < 1.0; o += 0.01) {
            double v = bce_occupancy(Tensor::from({1}, {o}), t).value();
            if (v < best_v) {
                best_v = v;
                best_o = o;
            }
        }
        CHECK(best_o == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("out-of-band predictions are squashed and counted") {
        reset_bce_clamp_events();
        Tensor o = Tensor::from({2}, {0.0, 1.0});
        Tensor t = Tensor::from({2}, {0.0, 1.0});
        double v = bce_occupancy(o, t).value();
        CHECK(std::isfinite(v));
        CHECK(bce_clamp_events() == 1);
        reset_bce_clamp_events();
    }
    SUBCASE("gradient check") {
        Rng rng(3);
        Tensor logits = Tensor::param({6}, {0.3, -1.0, 2.0, 0.1, -0.4, 1.3});
        Tensor t = Tensor::from({6}, {1, 0, 1, 0.5, 0, 1});
        auto f = [&] { return bce_occupancy(sigmoid(logits), t); };
        CHECK(finite_diff_check(f, {logits}, 1e-5) < 1e-4);
    }
}

TEST_CASE("smooth loss analytic values") {
    SUBCASE("flat grid interior vanishes") {
        CHECK(smooth_loss_value(mrio_test::flat_grid(10, 0.07)) < 1e-8);
    }
    SUBCASE("icosphere integrates to 8 pi for any radius") {
        for (double r : {0.35, 1.0, 2.5}) {
            double v = smooth_loss_value(mrio_test::icosphere(3, r));
            CHECK(std::fabs(v - 8.0 * M_PI) / (8.0 * M_PI) < 0.05);
        }
    }
    SUBCASE("rigid motion invariance") {
        TriangleMesh m = mrio_test::icosphere(2, 0.6);
        double before = smooth_loss_value(m);
        Mat3 rot = rotation_axis_angle({1.0, 2.0, -0.5}, 0.9);
        for (Vec3& v : m.vertices) v = rot * v + Vec3{3.0, -1.0, 0.25};
        CHECK(std::fabs(smooth_loss_value(m) - before) < 1e-9);
    }
}

TEST_CASE("fixed_total follows the weighted form") {
    Tensor lf = Tensor::scalar(1.0), lb = Tensor::scalar(1.0), ls = Tensor::scalar(1.0);
    LossReport rep;
    Tensor total = fixed_total(lf, lb, ls, 1.0, 1.0, 1.0, &rep);
    CHECK(total.value() == doctest::Approx(6.0));
    CHECK(rep.total == doctest::Approx(6.0));
    CHECK_THROWS_AS((void)fixed_total(lf, lb, ls, 1.0, 1.0, 0.0), std::invalid_argument);

    // reciprocal terms do not reach parameter gradients
    Tensor x = Tensor::param({}, {0.7});
    GradientMap with_recip, without;
    {
        Tape tape;
        with_recip = backward(tape, fixed_total(mul(x, x), Tensor::scalar(0.2),
                                                Tensor::scalar(0.1), 2.0, 3.0, 4.0));
    }
    {
        Tape tape;
        without = backward(tape, mul(Tensor::scalar(2.0), mul(x, x)));
    }
    CHECK(find_grad(with_recip, x)->value() ==
          doctest::Approx(find_grad(without, x)->value()).epsilon(1e-15));
}

TEST_CASE("uncertainty_total") {
    SUBCASE("sigma = 1 halves the loss sum") {
        MultiTaskWeights w = MultiTaskWeights::uncertainty(0.0);
        LossReport rep;
        Tensor total = uncertainty_total(Tensor::scalar(0.4), Tensor::scalar(1.0),
                                         Tensor::scalar(0.2), w, &rep);
        CHECK(total.value() == doctest::Approx(0.5 * (0.4 + 1.0 + 0.2)).epsilon(1e-15));
        CHECK(rep.sigma2 == doctest::Approx(1.0));
    }
    SUBCASE("gradient wrt log sigma matches the analytic form") {
        for (double c : {0.25, 1.0, 4.0}) {
            MultiTaskWeights w = MultiTaskWeights::uncertainty(0.3);
            auto f = [&] {
                return uncertainty_total(Tensor::scalar(c), Tensor::scalar(0.5),
                                         Tensor::scalar(2.0), w);
            };
            CHECK(finite_diff_check(f, w.trainable(), 1e-5) < 1e-6);
            Tape tape;
            auto grads = backward(tape, f());
            double s = w.log_sigma1.value();
            double analytic = -std::exp(-2.0 * s) * c + 1.0;
            CHECK(find_grad(grads, w.log_sigma1)->value() ==
                  doctest::Approx(analytic).epsilon(1e-12));
        }
    }
    SUBCASE("descent on log sigma converges to sigma = sqrt(L)") {
        for (double c : {0.25, 1.0, 4.0}) {
            MultiTaskWeights w = MultiTaskWeights::uncertainty(0.0);
            OptimizerState opt;
            opt.kind = OptKind::Sgd;
            opt.learning_rate = 0.02;
            for (int it = 0; it < 3000; ++it) {
                Tape tape;
                Tensor total = uncertainty_total(Tensor::scalar(c), Tensor::scalar(c),
                                                 Tensor::scalar(c), w);
                auto grads = backward(tape, total);
                optimizer_step(opt, w.trainable(), grads);
            }
            CHECK(std::fabs(std::exp(w.log_sigma1.value()) - std::sqrt(c)) < 1e-3);
        }
    }
    SUBCASE("1-d scan: argmin of L/(2 sigma^2) + log sigma is sqrt(L)") {
        for (double L : {0.25, 1.0, 4.0}) {
            double best_s = 0.0, best_v = 1e300;
            for (double s = 0.01; s <= 10.0; s += 0.0005) {
                double v = L / (2.0 * s * s) + std::log(s);
                if (v < best_v) {
                    best_v = v;
                    best_s = s;
                }
            }
            CHECK(std::fabs(best_s - std::sqrt(L)) < 2e-3);
        }
    }
    SUBCASE("rescaling identity: L_F -> k L_F with sigma1 -> sigma1 sqrt(k)") {
        const double k = 3.7, L = 0.8, s0 = 0.2;
        auto group = [](double loss, double log_sigma) {
            return 0.5 * std::exp(-2.0 * log_sigma) * loss + log_sigma;
        };
        double base = group(L, s0);
        double scaled = group(k * L, s0 + 0.5 * std::log(k));
        CHECK(scaled == doctest::Approx(base + 0.5 * std::log(k)).epsilon(1e-12));
    }
}

TEST_CASE("mmd") {
    Rng rng(31);
    auto random_set = [&rng](size_t n, size_t d, double shift) {
        std::vector<double> v(n * d);
        for (auto& x : v) x = rng.gauss() + shift;
        return Tensor::from({n, d}, std::move(v));
    };
    SUBCASE("identical sets give zero") {
        Tensor x = random_set(40, 3, 0.0);
        CHECK(std::fabs(mmd(x, x, 1.0).value()) < 1e-12);
    }
    SUBCASE("matches the direct double loop exactly") {
        for (int trial = 0; trial < 5; ++trial) {
            size_t n = 30 + size_t(rng.below(471)), m = 30 + size_t(rng.below(471));
            Tensor x = random_set(n, 4, 0.0);
            Tensor y = random_set(m, 4, 3.0);
            const double bw = 1.0;
            auto mean_k = [&](const Tensor& a, const Tensor& b) {
                double acc = 0.0;
                for (size_t i = 0; i < a.shape()[0]; ++i)
                    for (size_t j = 0; j < b.shape()[0]; ++j) {
                        double d2 = 0.0;
                        for (size_t c = 0; c < 4; ++c) {
                            double diff = a.at(i * 4 + c) - b.at(j * 4 + c);
                            d2 += diff * diff;
                        }
                        acc += std::exp(-d2 / (2.0 * bw * bw));
                    }
                return acc / double(a.shape()[0] * b.shape()[0]);
            };
            double oracle = mean_k(x, x) + mean_k(y, y) - 2.0 * mean_k(x, y);
            double got = mmd(x, y, bw).value();
            CHECK(got == oracle);
            CHECK(got >= 0.0);
        }
    }
    SUBCASE("gradient check") {
        Tensor x = random_set(8, 3, 0.0);
        Tensor y = random_set(6, 3, 1.0);
        x.set_requires_grad(true);
        y.set_requires_grad(true);
        auto f = [&] { return mmd(x, y, 0.8); };
        CHECK(finite_diff_check(f, {x, y}, 1e-5) < 1e-4);
    }
    SUBCASE("median bandwidth heuristic is positive and scale aware") {
        Tensor x = random_set(50, 3, 0.0);
        Tensor y = random_set(50, 3, 10.0);
        double bw = median_bandwidth(x, y);
        CHECK(bw > 1.0);
        CHECK(bw < 25.0);
    }
}

TEST_CASE("adaptation_loss") {
    Tensor ls = Tensor::scalar(0.5);
    Tensor m = Tensor::scalar(0.5);
    CHECK(adaptation_loss(ls, m, 0.0).value() == 0.5);
    CHECK(adaptation_loss(ls, m, 1.0).value() == doctest::Approx(1.0));
    CHECK_THROWS_AS((void)adaptation_loss(ls, m, -0.1), std::invalid_argument);

    Tensor x = Tensor::param({}, {1.2});
    Tape tape;
    Tensor total = adaptation_loss(mul(x, x), mul(Tensor::scalar(3.0), x), 0.5);
    auto grads = backward(tape, total);
    CHECK(find_grad(grads, x)->value() == doctest::Approx(2.0 * 1.2 + 0.5 * 3.0).epsilon(1e-14));
}

TEST_SUITE_END();
