#include "doctest.h"

#include <cmath>

#include "mrio/rng.hpp"
#include "mrio/tensor.hpp"

using namespace mrio;

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape, bool rg = false, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.gauss();
    Tensor t = Tensor::from(shape, std::move(v));
    t.set_requires_grad(rg);
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("forward op basics") {
    CHECK(sigmoid(Tensor::scalar(0.0)).value() == doctest::Approx(0.5).epsilon(1e-15));

    Tensor logits = Tensor::from({3}, {1.7, 1.7, 1.7});
    Tensor sm = softmax_axis(logits, 0);
    for (size_t i = 0; i < 3; ++i) CHECK(sm.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

    Rng rng(7);
    Tensor a = random_tensor(rng, {3, 3});
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor prod = matmul(eye, a);
    for (size_t i = 0; i < 9; ++i) CHECK(prod.at(i) == doctest::Approx(a.at(i)).epsilon(1e-15));
}

TEST_CASE("softmax rows are distributions") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor(rng, {4, 6}, false, 10.0);
        Tensor sm = softmax_axis(x, 1);
        for (size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (size_t c = 0; c < 6; ++c) {
                CHECK(sm.at(r * 6 + c) >= 0.0);
                s += sm.at(r * 6 + c);
            }
            CHECK(std::fabs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("backward analytic derivatives") {
    SUBCASE("x squared") {
        Tensor x = Tensor::param({}, {3.0});
        Tape tape;
        Tensor loss = mul(x, x);
        auto grads = backward(tape, loss);
        CHECK(find_grad(grads, x)->value() == doctest::Approx(6.0).epsilon(1e-15));
    }
    SUBCASE("sigmoid at zero") {
        Tensor x = Tensor::param({}, {0.0});
        Tape tape;
        Tensor loss = sigmoid(x);
        auto grads = backward(tape, loss);
        CHECK(find_grad(grads, x)->value() == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("sum of softmax has zero gradient") {
        Rng rng(3);
        Tensor v = random_tensor(rng, {5}, true);
        Tape tape;
        Tensor loss = sum(softmax_axis(v, 0));
        auto grads = backward(tape, loss);
        for (size_t i = 0; i < 5; ++i) CHECK(std::fabs(find_grad(grads, v)->at(i)) < 1e-12);
    }
    SUBCASE("non-participating leaf gets zero") {
        Tensor x = Tensor::param({}, {1.0});
        Tensor unused = Tensor::param({2}, {1.0, 2.0});
        Tape tape;
        tape.touch(unused);
        Tensor loss = mul(x, x);
        auto grads = backward(tape, loss);
        CHECK(find_grad(grads, unused)->at(0) == 0.0);
        CHECK(find_grad(grads, unused)->at(1) == 0.0);
    }
    SUBCASE("loss must be scalar") {
        Tensor x = Tensor::param({2}, {1.0, 2.0});
        Tape tape;
        Tensor y = mul(x, x);
        CHECK_THROWS_AS((void)backward(tape, y), std::invalid_argument);
    }
}

TEST_CASE("backward is linear over loss sums") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor(rng, {6}, true);
        GradientMap ga, gb, gsum;
        {
            Tape tape;
            auto g = backward(tape, sum(mul(x, x)));
            ga = std::move(g);
        }
        {
            Tape tape;
            gb = backward(tape, sum(mul(x, sigmoid(x))));
        }
        {
            Tape tape;
            gsum = backward(tape, add(sum(mul(x, x)), sum(mul(x, sigmoid(x)))));
        }
        for (size_t i = 0; i < 6; ++i) {
            double lhs = find_grad(gsum, x)->at(i);
            double rhs = find_grad(ga, x)->at(i) + find_grad(gb, x)->at(i);
            CHECK(std::fabs(lhs - rhs) < 1e-12);
        }
    }
}

TEST_CASE("finite_diff_check on reference functions") {
    Rng rng(29);
    SUBCASE("quadratic form is exact to O(eps^2)") {
        Tensor x = random_tensor(rng, {4}, true);
        Tensor q = random_tensor(rng, {4, 4});
        auto f = [&] { return sum(mul(x, matmul(reshape(x, {1, 4}), q))); };
        CHECK(finite_diff_check(f, {x}, 1e-5) < 1e-8);
    }
    SUBCASE("focal-style loss over 8 random classes") {
        Tensor logits = random_tensor(rng, {8}, true);
        auto f = [&] {
            Tensor p = softmax_axis(logits, 0);
            Tensor p3 = slice(p, {3}, {1});
            Tensor one_minus = sub(Tensor::scalar(1.0), p3);
            return sum(mul(mul(Tensor::scalar(-1.0), mul(one_minus, one_minus)), log(p3)));
        };
        CHECK(finite_diff_check(f, {logits}, 1e-5) < 1e-4);
    }
    SUBCASE("constant function has zero error") {
        Tensor x = random_tensor(rng, {3}, true);
        auto f = [&] { return add(Tensor::scalar(2.5), mul(Tensor::scalar(0.0), sum(x))); };
        CHECK(finite_diff_check(f, {x}, 1e-5) == 0.0);
    }
}

TEST_CASE("finite_diff_check covers structural ops") {
    Rng rng(31);
    SUBCASE("conv2d") {
        Tensor x = random_tensor(rng, {6, 6, 2}, true);
        Tensor w = random_tensor(rng, {3, 2, 3, 3}, true, 0.5);
        Tensor b = random_tensor(rng, {3}, true, 0.1);
        auto f = [&] { return mean(mul(conv2d3x3(x, w, b, 2), conv2d3x3(x, w, b, 2))); };
        CHECK(finite_diff_check(f, {x, w, b}, 1e-5) < 1e-6);
    }
    SUBCASE("conv3d") {
        Tensor x = random_tensor(rng, {4, 4, 4, 2}, true);
        Tensor w = random_tensor(rng, {2, 2, 3, 3, 3}, true, 0.5);
        Tensor b = random_tensor(rng, {2}, true, 0.1);
        auto f = [&] { return mean(abs(conv3d3x3(x, w, b, 1))); };
        CHECK(finite_diff_check(f, {x, w, b}, 1e-5) < 1e-6);
    }
    SUBCASE("bilinear and trilinear sampling") {
        Tensor feat = random_tensor(rng, {5, 5, 3}, true);
        std::vector<double> xy{0.3, 1.7, 3.9, 2.2, 4.0, 0.0};
        auto f = [&] { return sum(mul(bilinear_sample(feat, xy), bilinear_sample(feat, xy))); };
        CHECK(finite_diff_check(f, {feat}, 1e-5) < 1e-6);

        Tensor vol = random_tensor(rng, {3, 3, 3, 2}, true);
        std::vector<double> dhw{0.5, 1.1, 1.9, 2.0, 0.0, 0.4};
        auto g = [&] { return mean(mul(trilinear_sample(vol, dhw), trilinear_sample(vol, dhw))); };
        CHECK(finite_diff_check(g, {vol}, 1e-5) < 1e-6);
    }
    SUBCASE("concat slice max softmax chain") {
        Tensor a = random_tensor(rng, {3, 2}, true);
        Tensor b = random_tensor(rng, {3, 2}, true);
        auto f = [&] {
            Tensor c = concat({a, b}, 1);
            Tensor m = max_axis(c, 0);
            return sum(mul(m, sum_axis(softmax_axis(c, 1), 0)));
        };
        CHECK(finite_diff_check(f, {a, b}, 1e-5) < 1e-5);
    }
    SUBCASE("voxel pool and upsample") {
        Tensor feats = random_tensor(rng, {10, 2}, true);
        std::vector<double> pts(30);
        for (auto& p : pts) p = rng.uniform();
        auto f = [&] {
            Tensor v = voxel_pool(pts, feats, 2);
            return mean(mul(upsample2_3d(v), upsample2_3d(v)));
        };
        CHECK(finite_diff_check(f, {feats}, 1e-5) < 1e-6);
    }
}

TEST_CASE("optimizer updates") {
    SUBCASE("sgd arithmetic") {
        Tensor p = Tensor::param({}, {1.0});
        OptimizerState st;
        st.kind = OptKind::Sgd;
        st.learning_rate = 0.1;
        GradientMap grads;
        grads[p.key()] = Tensor::scalar(2.0);
        optimizer_step(st, {p}, grads);
        CHECK(p.value() == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("adam first step magnitude") {
        for (double g0 : {0.37, -2.4, 15.0}) {
            Tensor p = Tensor::param({}, {1.0});
            OptimizerState st;
            st.kind = OptKind::Adam;
            st.learning_rate = 0.01;
            GradientMap grads;
            grads[p.key()] = Tensor::scalar(g0);
            optimizer_step(st, {p}, grads);
            double delta = p.value() - 1.0;
            CHECK(delta * g0 < 0.0);
            CHECK(std::fabs(delta) == doctest::Approx(st.learning_rate).epsilon(1e-3));
        }
    }
    SUBCASE("zero gradient leaves parameters") {
        Tensor p = Tensor::param({2}, {1.5, -0.5});
        OptimizerState st;
        st.kind = OptKind::Adam;
        GradientMap grads;
        grads[p.key()] = Tensor::zeros({2});
        optimizer_step(st, {p}, grads);
        CHECK(p.at(0) == 1.5);
        CHECK(p.at(1) == -0.5);
    }
    SUBCASE("missing gradient is a contract violation") {
        Tensor p = Tensor::param({}, {1.0});
        OptimizerState st;
        GradientMap grads;
        CHECK_THROWS_AS(optimizer_step(st, {p}, grads), std::invalid_argument);
    }
    SUBCASE("lr decay schedule") {
        OptimizerState st;
        st.learning_rate = 1.0;
        st.decay_factor = 0.5;
        st.decay_interval = 10;
        st.step_count = 25;
        CHECK(st.current_lr() == doctest::Approx(0.25).epsilon(1e-15));
    }
}

TEST_CASE("shape and domain errors") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({3}, {1, 2, 3});
    CHECK_THROWS_AS((void)add(a, b), std::invalid_argument);
    CHECK_THROWS_AS((void)matmul(a, b), std::invalid_argument);
    CHECK_THROWS_AS((void)log(Tensor::scalar(-1.0)), std::domain_error);
    CHECK_THROWS_AS((void)power(Tensor::scalar(-2.0), 0.5), std::domain_error);
    CHECK_THROWS_AS((void)power(Tensor::scalar(0.0), -1.0), std::domain_error);
}

TEST_SUITE_END();
