#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "mrio/isosurface.hpp"
#include "mrio/rng.hpp"
#include "test_helpers.hpp"

using namespace mrio;

namespace {

FieldFn sphere_occupancy(Vec3 centre, double radius, double sharpness = 40.0) {
    return [=](const std::vector<Vec3>& pts, std::vector<double>& out) {
        out.resize(pts.size());
        for (size_t i = 0; i < pts.size(); ++i) {
            double d = radius - norm(pts[i] - centre);
            out[i] = 1.0 / (1.0 + std::exp(-sharpness * d));
        }
    };
}

// Smooth blobby occupancy whose crossing band is resolved at coarse level 16.
FieldFn random_smooth_field(uint64_t seed) {
    Rng rng(seed);
    Vec3 centre{rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6)};
    double radius = rng.uniform(0.18, 0.3);
    Vec3 w1{rng.uniform(2.0, 5.0), rng.uniform(2.0, 5.0), rng.uniform(2.0, 5.0)};
    double amp = rng.uniform(0.0, 0.025);
    double phase = rng.uniform(0.0, 6.28);
    return [=](const std::vector<Vec3>& pts, std::vector<double>& out) {
        out.resize(pts.size());
        for (size_t i = 0; i < pts.size(); ++i) {
            const Vec3& p = pts[i];
            double bump = amp * std::sin(dot(w1, p) + phase);
            double d = radius + bump - norm(p - centre);
            out[i] = 1.0 / (1.0 + std::exp(-30.0 * d));
        }
    };
}

}  // namespace

TEST_SUITE_BEGIN("isosurface");

TEST_CASE("evaluate_grid basics") {
    FieldFn half = [](const std::vector<Vec3>& pts, std::vector<double>& out) {
        out.assign(pts.size(), 0.5);
    };
    OccupancyGrid g = evaluate_grid(half, 4);
    CHECK(g.values.size() == 125);
    for (double v : g.values) CHECK(v == 0.5);

    FieldFn ramp = [](const std::vector<Vec3>& pts, std::vector<double>& out) {
        out.resize(pts.size());
        for (size_t i = 0; i < pts.size(); ++i) out[i] = pts[i].x;
    };
    OccupancyGrid r = evaluate_grid(ramp, 8);
    // single-point decode agrees with the grid value
    std::vector<double> one;
    ramp({r.position(3, 2, 5)}, one);
    CHECK(r.at(3, 2, 5) == one[0]);
    // monotone along x
    for (size_t iy = 0; iy < r.nv(); ++iy)
        for (size_t iz = 0; iz < r.nv(); ++iz)
            for (size_t ix = 0; ix + 1 < r.nv(); ++ix)
                CHECK(r.at(ix, iy, iz) <= r.at(ix + 1, iy, iz));
}

TEST_CASE("marching cubes on a sphere is closed and accurate") {
    const Vec3 centre{0.5, 0.5, 0.5};
    const double radius = 0.31;
    OccupancyGrid grid = evaluate_grid(sphere_occupancy(centre, radius), 64);
    TriangleMesh mesh = marching_cubes(grid);
    REQUIRE(!mesh.empty());
    mesh.validate();
    CHECK(is_closed_manifold(mesh));
    const double cell_diag = std::sqrt(3.0) / 64.0;
    for (const Vec3& v : mesh.vertices) CHECK(std::fabs(norm(v - centre) - radius) < cell_diag);

    // no exact duplicate vertex positions
    std::set<std::array<double, 3>> seen;
    for (const Vec3& v : mesh.vertices) CHECK(seen.insert({v.x, v.y, v.z}).second);

    // outward orientation: face normals point away from the centre
    size_t outward = 0;
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
        Vec3 fc = (mesh.vertices[mesh.faces[f][0]] + mesh.vertices[mesh.faces[f][1]] +
                   mesh.vertices[mesh.faces[f][2]]) / 3.0;
        if (dot(mesh.face_normal(f), fc - centre) > 0.0) ++outward;
    }
    CHECK(outward == mesh.faces.size());
}

TEST_CASE("marching cubes trivial fields") {
    FieldFn low = [](const std::vector<Vec3>& pts, std::vector<double>& out) {
        out.assign(pts.size(), 0.1);
    };
    CHECK(marching_cubes(evaluate_grid(low, 8)).empty());
    FieldFn high = [](const std::vector<Vec3>& pts, std::vector<double>& out) {
        out.assign(pts.size(), 0.9);
    };
    CHECK(marching_cubes(evaluate_grid(high, 8)).empty());
}

TEST_CASE("extraction commutes with value complement up to orientation") {
    for (uint64_t seed : {3u, 17u, 99u}) {
        FieldFn field = random_smooth_field(seed);
        OccupancyGrid grid = evaluate_grid(field, 24);
        OccupancyGrid flipped = grid;
        for (double& v : flipped.values) v = 1.0 - v;
        flipped.tau = 1.0 - grid.tau;

        TriangleMesh a = marching_cubes(grid);
        TriangleMesh b = marching_cubes(flipped);
        REQUIRE(a.vertices.size() == b.vertices.size());
        REQUIRE(a.faces.size() == b.faces.size());
        for (size_t i = 0; i < a.vertices.size(); ++i)
            CHECK(norm(a.vertices[i] - b.vertices[i]) <= 1e-14);
        // same triangles as index sets, orientation flipped
        auto key = [](std::array<uint32_t, 3> f) {
            std::sort(f.begin(), f.end());
            return f;
        };
        std::multiset<std::array<uint32_t, 3>> fa, fb;
        for (const auto& f : a.faces) fa.insert(key(f));
        for (const auto& f : b.faces) fb.insert(key(f));
        CHECK(fa == fb);
        // orientations oppose: matching face normals anti-align
        Vec3 na = a.face_normal(0);
        for (size_t f = 0; f < b.faces.size(); ++f)
            if (key(b.faces[f]) == key(a.faces[0])) {
                CHECK(dot(na, b.face_normal(f)) < 0.0);
                break;
            }
    }
}

TEST_CASE("mise equals dense extraction when the band is resolved") {
    SUBCASE("k = 0 is identical to evaluate_grid") {
        FieldFn field = random_smooth_field(5);
        OccupancyGrid dense = evaluate_grid(field, 16);
        OccupancyGrid sparse = mise(field, 16, 16);
        CHECK(dense.values == sparse.values);
    }
    SUBCASE("sphere coarse 16 to target 64 matches dense bitwise") {
        FieldFn field = sphere_occupancy({0.52, 0.48, 0.5}, 0.27);
        size_t evals = 0;
        OccupancyGrid sparse = mise(field, 16, 64, 0.5, &evals);
        OccupancyGrid dense = evaluate_grid(field, 64);
        TriangleMesh ms = marching_cubes(sparse);
        TriangleMesh md = marching_cubes(dense);
        REQUIRE(ms.vertices.size() == md.vertices.size());
        for (size_t i = 0; i < ms.vertices.size(); ++i) {
            CHECK(ms.vertices[i].x == md.vertices[i].x);
            CHECK(ms.vertices[i].y == md.vertices[i].y);
            CHECK(ms.vertices[i].z == md.vertices[i].z);
        }
        CHECK(ms.faces == md.faces);
        CHECK(evals < dense.values.size());  // sparse evaluation saves decodes
    }
    SUBCASE("twenty random smooth fields match bitwise") {
        for (uint64_t seed = 0; seed < 20; ++seed) {
            FieldFn field = random_smooth_field(1000 + seed);
            TriangleMesh ms = marching_cubes(mise(field, 16, 64));
            TriangleMesh md = marching_cubes(evaluate_grid(field, 64));
            REQUIRE(ms.vertices.size() == md.vertices.size());
            bool same = ms.faces == md.faces;
            for (size_t i = 0; i < ms.vertices.size() && same; ++i)
                same = ms.vertices[i].x == md.vertices[i].x &&
                       ms.vertices[i].y == md.vertices[i].y &&
                       ms.vertices[i].z == md.vertices[i].z;
            CHECK(same);
        }
    }
    SUBCASE("all-inside field has no active cells and an empty mesh") {
        FieldFn high = [](const std::vector<Vec3>& pts, std::vector<double>& out) {
            out.assign(pts.size(), 0.93);
        };
        size_t evals = 0;
        OccupancyGrid g = mise(high, 4, 16, 0.5, &evals);
        CHECK(marching_cubes(g).empty());
        CHECK(evals == 5 * 5 * 5);  // only the coarse lattice was decoded
    }
}

TEST_CASE("mise precondition") {
    FieldFn field = random_smooth_field(2);
    CHECK_THROWS_AS((void)mise(field, 16, 48), std::invalid_argument);
}

TEST_CASE("mesh curvature quantities") {
    SUBCASE("icosphere mean curvature approximates 1/r") {
        for (double r : {1.0, 0.4}) {
            TriangleMesh sphere = mrio_test::icosphere(3, r);
            auto curv = mesh_curvature(sphere);
            std::vector<double> hs;
            for (const auto& c : curv)
                if (!c.boundary) hs.push_back(c.mean);
            std::sort(hs.begin(), hs.end());
            double median = hs[hs.size() / 2];
            CHECK(std::fabs(median - 1.0 / r) / (1.0 / r) < 0.1);
        }
    }
    SUBCASE("flat grid interior is curvature free") {
        TriangleMesh grid = mrio_test::flat_grid(8, 0.1);
        auto curv = mesh_curvature(grid);
        for (const auto& c : curv) {
            if (c.boundary) continue;
            CHECK(std::fabs(c.mean) < 1e-8);
            CHECK(std::fabs(c.gauss) < 1e-8);
        }
    }
    SUBCASE("gauss-bonnet: angle defects sum to 4 pi on genus zero") {
        TriangleMesh sphere = mrio_test::icosphere(2, 0.7);
        auto curv = mesh_curvature(sphere);
        double total = 0.0;
        for (const auto& c : curv) total += c.gauss * c.area;
        CHECK(std::fabs(total - 4.0 * M_PI) < 1e-9);

        // the marching-cubes sphere is genus zero too
        OccupancyGrid g = evaluate_grid(sphere_occupancy({0.5, 0.5, 0.5}, 0.3), 32);
        auto curv2 = mesh_curvature(marching_cubes(g));
        double total2 = 0.0;
        for (const auto& c : curv2) total2 += c.gauss * c.area;
        CHECK(std::fabs(total2 - 4.0 * M_PI) < 1e-9);
    }
    SUBCASE("non-manifold input is rejected") {
        TriangleMesh bad;
        bad.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}};
        bad.faces = {{0, 1, 2}, {0, 1, 3}, {0, 1, 4}};
        CHECK_THROWS_AS((void)mesh_curvature(bad), std::invalid_argument);
    }
}

TEST_CASE("sample_mesh_surface") {
    SUBCASE("single triangle: samples stay inside") {
        TriangleMesh tri;
        tri.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 3, 0}};
        tri.faces = {{0, 1, 2}};
        PointCloud cloud = sample_mesh_surface(tri, 500, 9);
        for (const Vec3& p : cloud.points) {
            CHECK(p.z == 0.0);
            CHECK(p.x >= -1e-12);
            CHECK(p.y >= -1e-12);
            CHECK(p.x / 2.0 + p.y / 3.0 <= 1.0 + 1e-12);
        }
        for (const Vec3& n : cloud.normals) CHECK(std::fabs(norm(n) - 1.0) < 1e-12);
    }
    SUBCASE("area-weighted face selection") {
        TriangleMesh two;
        two.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {10, 0, 1}, {13, 0, 1}, {10, 2, 1}};
        two.faces = {{0, 1, 2}, {3, 4, 5}};  // areas 0.5 and 3.0
        PointCloud cloud = sample_mesh_surface(two, 7000, 3);
        size_t near_small = 0;
        for (const Vec3& p : cloud.points)
            if (p.z == 0.0) ++near_small;
        double frac = double(near_small) / 7000.0;
        CHECK(frac > 0.5 / 3.5 - 0.02);
        CHECK(frac < 0.5 / 3.5 + 0.02);
    }
    SUBCASE("empty mesh is a domain error") {
        TriangleMesh empty;
        CHECK_THROWS_AS((void)sample_mesh_surface(empty, 10, 1), std::domain_error);
    }
}

TEST_CASE("bvh raycast hits the analytic sphere") {
    TriangleMesh sphere = mrio_test::icosphere(4, 0.5, {0.5, 0.5, 0.5});
    Bvh bvh(sphere);
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
        Vec3 dir = normalized(Vec3{rng.gauss(), rng.gauss(), rng.gauss()});
        Vec3 origin = Vec3{0.5, 0.5, 0.5} + dir * (-2.0);
        Bvh::Hit hit = bvh.raycast(origin, dir, 10.0);
        REQUIRE(hit.hit);
        CHECK(hit.t == doctest::Approx(1.5).epsilon(2e-3));
    }
    Bvh::Hit miss = bvh.raycast({0.5, 0.5, 5.0}, {0.0, 0.0, 1.0}, 10.0);
    CHECK(!miss.hit);
}

TEST_SUITE_END();
