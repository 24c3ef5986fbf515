#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "mrio/metrics.hpp"
#include "mrio/rng.hpp"

using namespace mrio;

namespace {

PointCloud random_cloud(Rng& rng, size_t n, bool with_normals = false, double scale = 1.0) {
    PointCloud c;
    for (size_t i = 0; i < n; ++i)
        c.points.push_back({scale * rng.uniform(), scale * rng.uniform(), scale * rng.uniform()});
    if (with_normals)
        for (size_t i = 0; i < n; ++i)
            c.normals.push_back(normalized(Vec3{rng.gauss(), rng.gauss(), rng.gauss()}));
    return c;
}

// O(n^2) oracles mirroring the metric definitions, summing in index order so
// equality against the kd-tree path is exact.
size_t brute_nn(const std::vector<Vec3>& set, const Vec3& q, double& best2) {
    best2 = std::numeric_limits<double>::infinity();
    size_t best = size_t(-1);
    for (size_t i = 0; i < set.size(); ++i) {
        double d2 = norm2(set[i] - q);
        if (d2 < best2) {
            best2 = d2;
            best = i;
        }
    }
    return best;
}

double brute_chamfer(const PointCloud& p, const PointCloud& t) {
    double a = 0.0, b = 0.0, d2;
    for (const Vec3& x : p.points) {
        brute_nn(t.points, x, d2);
        a += d2;
    }
    for (const Vec3& x : t.points) {
        brute_nn(p.points, x, d2);
        b += d2;
    }
    return a / double(p.size()) + b / double(t.size());
}

double brute_accuracy(const PointCloud& p, const PointCloud& t) {
    double a = 0.0, d2;
    for (const Vec3& x : p.points) {
        brute_nn(t.points, x, d2);
        a += std::sqrt(d2);
    }
    return a / double(p.size());
}

double brute_fscore(const PointCloud& p, const PointCloud& t, double thresh) {
    double d2;
    size_t cp = 0, ct = 0;
    for (const Vec3& x : p.points) {
        brute_nn(t.points, x, d2);
        if (d2 <= thresh * thresh) ++cp;
    }
    for (const Vec3& x : t.points) {
        brute_nn(p.points, x, d2);
        if (d2 <= thresh * thresh) ++ct;
    }
    double pr = double(cp) / double(p.size()), rc = double(ct) / double(t.size());
    return pr + rc == 0.0 ? 0.0 : 100.0 * 2.0 * pr * rc / (pr + rc);
}

double brute_nc(const PointCloud& p, const PointCloud& t) {
    double acc = 0.0, d2;
    for (size_t i = 0; i < p.size(); ++i) {
        size_t j = brute_nn(t.points, p.points[i], d2);
        acc += std::fabs(dot(p.normals[i], t.normals[j]));
    }
    return acc / double(p.size());
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("kd-tree nearest matches linear scan on 2000 points / 500 queries") {
    Rng rng(55);
    PointCloud cloud = random_cloud(rng, 2000);
    KdTree tree(cloud.points);
    for (int q = 0; q < 500; ++q) {
        Vec3 query{rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2)};
        double d2;
        size_t want = brute_nn(cloud.points, query, d2);
        KdTree::Result got = tree.nearest(query);
        CHECK(got.index == want);
        CHECK(got.dist2 == d2);
    }
    // a query equal to an indexed point returns it with distance zero
    KdTree::Result self = tree.nearest(cloud.points[137]);
    CHECK(self.index == 137);
    CHECK(self.dist2 == 0.0);
}

TEST_CASE("kd-tree tie-break and edge cases") {
    std::vector<Vec3> pts = {{1, 0, 0}, {-1, 0, 0}, {1, 0, 0}};
    KdTree tree(pts);
    KdTree::Result r = tree.nearest({1.0, 0.1, 0.0});
    CHECK(r.index == 0);  // same distance as id 2: smaller id wins

    std::vector<Vec3> single = {{3, 4, 5}};
    KdTree one(single);
    CHECK(one.nearest({0, 0, 0}).index == 0);

    CHECK_THROWS_AS(KdTree(std::vector<Vec3>{}), std::domain_error);
}

TEST_CASE("metric identities") {
    Rng rng(66);
    for (int trial = 0; trial < 20; ++trial) {
        PointCloud p = random_cloud(rng, 50 + size_t(rng.below(100)), true);
        CHECK(chamfer(p, p) == 0.0);
        CHECK(normal_consistency(p, p) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(fscore(p, p, 0.01) == 100.0);
        CHECK(accuracy(p, p) == 0.0);
        CHECK(completeness(p, p) == 0.0);
    }
}

TEST_CASE("chamfer basics") {
    PointCloud a, b;
    a.points = {{0, 0, 0}};
    b.points = {{0, 0, 2}};
    CHECK(chamfer(a, b) == doctest::Approx(8.0));  // 2 * d^2
    Rng rng(9);
    PointCloud p = random_cloud(rng, 120), t = random_cloud(rng, 90);
    CHECK(chamfer(p, t) == chamfer(t, p));
    PointCloud empty;
    CHECK_THROWS_AS((void)chamfer(p, empty), std::domain_error);
}

TEST_CASE("normal consistency uses absolute cosines") {
    Rng rng(12);
    PointCloud p = random_cloud(rng, 100, true);
    PointCloud flipped = p;
    for (Vec3& n : flipped.normals) n = -n;
    CHECK(normal_consistency(p, flipped) == doctest::Approx(1.0).epsilon(1e-15));

    PointCloud ortho = p;
    for (size_t i = 0; i < ortho.size(); ++i) {
        Vec3 n = p.normals[i];
        Vec3 other = std::fabs(n.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
        ortho.normals[i] = normalized(cross(n, other));
    }
    CHECK(normal_consistency(p, ortho) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("fscore arithmetic and monotonicity") {
    PointCloud p, t;
    // half of P within tau, all of T within tau => FS = 200*0.5/1.5
    t.points = {{0, 0, 0}, {1, 0, 0}};
    p.points = {{0, 0, 0.001}, {1, 0, 0.001}, {5, 5, 5}, {6, 6, 6}};
    double fs = fscore(p, t, 0.01);
    CHECK(fs == doctest::Approx(100.0 * 2.0 * 0.5 / 1.5).epsilon(1e-12));

    PointCloud far;
    far.points = {{100, 100, 100}};
    CHECK(fscore(p, far, 0.01) == 0.0);

    Rng rng(21);
    PointCloud a = random_cloud(rng, 200), b = random_cloud(rng, 180);
    double prev = 101.0;
    for (double tau : {0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005}) {
        double cur = fscore(a, b, tau);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("overall reproduces the reported table arithmetic") {
    CHECK(overall(0.274, 0.246) == 0.260);
    CHECK(overall(0.400, 0.664) == 0.532);
    Rng rng(2);
    PointCloud p = random_cloud(rng, 64);
    CHECK(overall(accuracy(p, p), completeness(p, p)) == 0.0);
}

TEST_CASE("all metrics match the brute-force oracles exactly") {
    Rng rng(1234);
    for (int trial = 0; trial < 100; ++trial) {
        size_t np = 20 + size_t(rng.below(181));
        size_t nt = 20 + size_t(rng.below(181));
        PointCloud p = random_cloud(rng, np, true);
        PointCloud t = random_cloud(rng, nt, true);
        CHECK(chamfer(p, t) == brute_chamfer(p, t));
        CHECK(accuracy(p, t) == brute_accuracy(p, t));
        CHECK(completeness(p, t) == brute_accuracy(t, p));
        CHECK(fscore(p, t, 0.05) == brute_fscore(p, t, 0.05));
        CHECK(normal_consistency(p, t) == brute_nc(p, t));
    }
}

TEST_CASE("metrics are rigid-motion invariant") {
    Rng rng(77);
    PointCloud p = random_cloud(rng, 150, true);
    PointCloud t = random_cloud(rng, 130, true);
    Mat3 rot = rotation_axis_angle({0.3, -0.8, 0.5}, 1.1);
    Vec3 shift{4.0, -2.0, 0.5};
    auto moved = [&](const PointCloud& c) {
        PointCloud m = c;
        for (Vec3& x : m.points) x = rot * x + shift;
        for (Vec3& n : m.normals) n = rot * n;
        return m;
    };
    PointCloud pm = moved(p), tm = moved(t);
    CHECK(std::fabs(chamfer(p, t) - chamfer(pm, tm)) < 1e-9);
    CHECK(std::fabs(fscore(p, t, 0.05) - fscore(pm, tm, 0.05)) < 1e-9);
}

TEST_SUITE_END();
