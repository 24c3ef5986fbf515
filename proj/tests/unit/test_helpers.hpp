#pragma once

#include <cmath>
#include <map>

#include "mrio/mesh.hpp"

namespace mrio_test {

// Icosphere of the given radius and centre: subdivided icosahedron with
// vertices projected onto the sphere.
inline mrio::TriangleMesh icosphere(int subdivisions, double radius,
                                    mrio::Vec3 centre = {0, 0, 0}) {
    using mrio::Vec3;
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {
        {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
    for (auto& v : verts) v = mrio::normalized(v);
    std::vector<std::array<uint32_t, 3>> faces = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
        {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
        {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};

    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<uint32_t, uint32_t>, uint32_t> midpoint;
        auto mid = [&](uint32_t a, uint32_t b) {
            auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            verts.push_back(mrio::normalized((verts[a] + verts[b]) * 0.5));
            uint32_t idx = uint32_t(verts.size() - 1);
            midpoint[key] = idx;
            return idx;
        };
        std::vector<std::array<uint32_t, 3>> next;
        for (const auto& f : faces) {
            uint32_t ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }

    mrio::TriangleMesh mesh;
    for (const auto& v : verts) mesh.vertices.push_back(centre + v * radius);
    mesh.faces = std::move(faces);
    return mesh;
}

// Flat z=const grid in the xy plane (open boundary).
inline mrio::TriangleMesh flat_grid(int n, double step) {
    mrio::TriangleMesh mesh;
    for (int y = 0; y <= n; ++y)
        for (int x = 0; x <= n; ++x)
            mesh.vertices.push_back({x * step, y * step, 0.25});
    auto vid = [n](int x, int y) { return uint32_t(y * (n + 1) + x); };
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            mesh.faces.push_back({vid(x, y), vid(x + 1, y), vid(x + 1, y + 1)});
            mesh.faces.push_back({vid(x, y), vid(x + 1, y + 1), vid(x, y + 1)});
        }
    return mesh;
}

}  // namespace mrio_test
