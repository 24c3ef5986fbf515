#include "mrio/isosurface.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mrio/parallel.hpp"
#include "mrio/tensor.hpp"

namespace mrio {

void OccupancyGrid::validate() const {
    check(res >= 2, "occupancy grid: resolution must be >= 2 cells per axis");
    check(values.size() == nv() * nv() * nv(), "occupancy grid: value count mismatch");
    for (double v : values) check(std::isfinite(v), "occupancy grid: non-finite value");
}

OccupancyGrid evaluate_grid(const FieldFn& field, size_t res, double tau) {
    check(res >= 2, "evaluate_grid: res must be >= 2");
    OccupancyGrid grid;
    grid.res = res;
    grid.tau = tau;
    const size_t n = res + 1;
    std::vector<Vec3> pts;
    pts.reserve(n * n * n);
    for (size_t ix = 0; ix < n; ++ix)
        for (size_t iy = 0; iy < n; ++iy)
            for (size_t iz = 0; iz < n; ++iz) pts.push_back(grid.position(ix, iy, iz));
    field(pts, grid.values);
    grid.validate();
    return grid;
}

OccupancyGrid mise(const FieldFn& field, size_t coarse_res, size_t target_res, double tau,
                   size_t* evaluated_points) {
    check(coarse_res >= 2, "mise: coarse_res must be >= 2");
    size_t levels = 0, r = coarse_res;
    while (r < target_res) {
        r *= 2;
        ++levels;
    }
    check(r == target_res, "mise: target_res must be coarse_res * 2^k");

    size_t evals = 0;
    OccupancyGrid grid = evaluate_grid(field, coarse_res, tau);
    std::vector<uint8_t> evaluated(grid.values.size(), 1);
    evals += grid.values.size();

    for (size_t level = 0; level < levels; ++level) {
        const size_t cr = grid.res, cn = cr + 1;
        const size_t fr = cr * 2, fn = fr + 1;
        auto inside = [&](double v) { return v > tau; };

        // active cells straddle tau
        std::vector<uint8_t> active(cr * cr * cr, 0);
        for (size_t cx = 0; cx < cr; ++cx)
            for (size_t cy = 0; cy < cr; ++cy)
                for (size_t cz = 0; cz < cr; ++cz) {
                    bool any_in = false, any_out = false;
                    for (int c = 0; c < 8; ++c) {
                        double v = grid.at(cx + (size_t(c) & 1), cy + ((size_t(c) >> 1) & 1),
                                           cz + ((size_t(c) >> 2) & 1));
                        (inside(v) ? any_in : any_out) = true;
                    }
                    active[(cx * cr + cy) * cr + cz] = any_in && any_out;
                }

        std::vector<uint8_t> needed(fn * fn * fn, 0);
        for (size_t cx = 0; cx < cr; ++cx)
            for (size_t cy = 0; cy < cr; ++cy)
                for (size_t cz = 0; cz < cr; ++cz) {
                    if (!active[(cx * cr + cy) * cr + cz]) continue;
                    for (size_t dx = 0; dx <= 2; ++dx)
                        for (size_t dy = 0; dy <= 2; ++dy)
                            for (size_t dz = 0; dz <= 2; ++dz)
                                needed[((2 * cx + dx) * fn + 2 * cy + dy) * fn + 2 * cz + dz] = 1;
                }

        OccupancyGrid fine;
        fine.res = fr;
        fine.tau = tau;
        fine.values.assign(fn * fn * fn, 0.0);
        std::vector<uint8_t> fine_eval(fn * fn * fn, 0);

        std::vector<Vec3> to_eval;
        std::vector<size_t> to_eval_idx;
        for (size_t ix = 0; ix < fn; ++ix)
            for (size_t iy = 0; iy < fn; ++iy)
                for (size_t iz = 0; iz < fn; ++iz) {
                    size_t fi = (ix * fn + iy) * fn + iz;
                    bool coincident = (ix % 2 == 0) && (iy % 2 == 0) && (iz % 2 == 0);
                    size_t ci = ((ix / 2) * cn + iy / 2) * cn + iz / 2;
                    if (coincident && evaluated[ci]) {
                        fine.values[fi] = grid.values[ci];
                        fine_eval[fi] = 1;
                    } else if (needed[fi]) {
                        to_eval.push_back(fine.position(ix, iy, iz));
                        to_eval_idx.push_back(fi);
                        fine_eval[fi] = 1;
                    } else {
                        // sign-consistent fill from the governing coarse point
                        fine.values[fi] = grid.values[ci];
                    }
                }
        if (!to_eval.empty()) {
            std::vector<double> vals;
            field(to_eval, vals);
            for (size_t i = 0; i < to_eval_idx.size(); ++i) fine.values[to_eval_idx[i]] = vals[i];
            evals += to_eval.size();
        }
        grid = std::move(fine);
        evaluated = std::move(fine_eval);
    }
    if (evaluated_points) *evaluated_points = evals;
    return grid;
}

namespace {

// Cell corner c sits at offsets (c&1, c>>1&1, c>>2&1).
// Cell edges as (low corner, axis):
constexpr int kEdgeCorner[12] = {0, 2, 4, 6, 0, 1, 4, 5, 0, 1, 2, 3};
constexpr int kEdgeAxis[12] = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};

// Faces: 4 corners in cyclic order plus the edges between consecutive corners.
struct FaceTable {
    int corners[4];
    int edges[4];
};
constexpr FaceTable kFaces[6] = {
    {{0, 2, 6, 4}, {4, 10, 6, 8}},   // x = 0
    {{1, 5, 7, 3}, {9, 7, 11, 5}},   // x = 1
    {{0, 4, 5, 1}, {8, 2, 9, 0}},    // y = 0
    {{2, 3, 7, 6}, {1, 11, 3, 10}},  // y = 1
    {{0, 1, 3, 2}, {0, 5, 1, 4}},    // z = 0
    {{4, 6, 7, 5}, {6, 3, 7, 2}},    // z = 1
};

struct CellGeometry {
    double v[8];         // corner values minus tau
    bool in[8];          // inside flags
    uint32_t vert[12];   // mesh vertex index per crossed edge, ~0u otherwise
    bool crossed[12];
};

uint64_t pack_edge_key(size_t gx, size_t gy, size_t gz, int axis, size_t nv) {
    return ((gx * nv + gy) * nv + gz) * 3 + size_t(axis);
}

}  // namespace

TriangleMesh marching_cubes(const OccupancyGrid& grid) {
    grid.validate();
    const size_t res = grid.res, nv = grid.nv();
    const double h = 1.0 / double(res);
    const double tau = grid.tau;

    TriangleMesh mesh;
    std::unordered_map<uint64_t, uint32_t> edge_vertex;
    edge_vertex.reserve(1024);

    auto value_at = [&](size_t ix, size_t iy, size_t iz) { return grid.at(ix, iy, iz); };

    for (size_t cx = 0; cx < res; ++cx)
        for (size_t cy = 0; cy < res; ++cy)
            for (size_t cz = 0; cz < res; ++cz) {
                CellGeometry cell;
                bool any_in = false, any_out = false;
                for (int c = 0; c < 8; ++c) {
                    double raw = value_at(cx + (size_t(c) & 1), cy + ((size_t(c) >> 1) & 1),
                                          cz + ((size_t(c) >> 2) & 1));
                    cell.v[c] = raw - tau;
                    cell.in[c] = raw > tau;
                    (cell.in[c] ? any_in : any_out) = true;
                }
                if (!any_in || !any_out) continue;

                // allocate edge vertices in fixed edge order (independent of
                // the loop walk below)
                for (int e = 0; e < 12; ++e) {
                    int c0 = kEdgeCorner[e];
                    int axis = kEdgeAxis[e];
                    int c1 = c0 | (1 << axis);
                    cell.crossed[e] = cell.in[c0] != cell.in[c1];
                    cell.vert[e] = ~0u;
                    if (!cell.crossed[e]) continue;
                    size_t gx = cx + (size_t(c0) & 1), gy = cy + ((size_t(c0) >> 1) & 1),
                           gz = cz + ((size_t(c0) >> 2) & 1);
                    uint64_t key = pack_edge_key(gx, gy, gz, axis, nv);
                    auto it = edge_vertex.find(key);
                    if (it != edge_vertex.end()) {
                        cell.vert[e] = it->second;
                        continue;
                    }
                    double t = (tau - (cell.v[c0] + tau)) / (cell.v[c1] - cell.v[c0]);
                    Vec3 p = grid.position(gx, gy, gz);
                    p[axis] += t * h;
                    uint32_t idx = uint32_t(mesh.vertices.size());
                    mesh.vertices.push_back(p);
                    edge_vertex.emplace(key, idx);
                    cell.vert[e] = idx;
                }

                // face contour segments -> adjacency between crossed edges
                int adj[12][2];
                int adj_n[12] = {0};
                auto link = [&](int ea, int eb) {
                    adj[ea][adj_n[ea]++] = eb;
                    adj[eb][adj_n[eb]++] = ea;
                };
                for (const FaceTable& face : kFaces) {
                    int crossed[4], nc = 0;
                    for (int k = 0; k < 4; ++k)
                        if (cell.crossed[face.edges[k]]) crossed[nc++] = k;
                    if (nc == 0) continue;
                    if (nc == 2) {
                        link(face.edges[crossed[0]], face.edges[crossed[1]]);
                        continue;
                    }
                    // ambiguous face: both diagonals uniform, decided by the
                    // bilinear saddle sign
                    int p0 = cell.in[face.corners[0]] ? 0 : 1;  // inside diagonal start
                    int p1 = p0 + 2;
                    int q0 = 1 - p0, q1 = q0 + 2;
                    double inside_prod = cell.v[face.corners[p0]] * cell.v[face.corners[p1]];
                    double outside_prod = cell.v[face.corners[q0]] * cell.v[face.corners[q1]];
                    bool connected = inside_prod > outside_prod;
                    int hug0 = connected ? q0 : p0;
                    int hug1 = connected ? q1 : p1;
                    // corner k lies between face edges (k+3)%4 and k
                    link(face.edges[(hug0 + 3) % 4], face.edges[hug0]);
                    link(face.edges[(hug1 + 3) % 4], face.edges[hug1]);
                }

                // cell gradient of the trilinear interpolant (per axis: mean
                // difference across the cell)
                Vec3 grad{0, 0, 0};
                for (int c = 0; c < 8; ++c) {
                    double v = cell.v[c];
                    grad.x += (c & 1) ? v : -v;
                    grad.y += (c & 2) ? v : -v;
                    grad.z += (c & 4) ? v : -v;
                }

                // walk closed contour loops
                bool used[12] = {false};
                for (int start = 0; start < 12; ++start) {
                    if (!cell.crossed[start] || used[start]) continue;
                    std::vector<int> loop;
                    int cur = start, prev = -1;
                    do {
                        loop.push_back(cur);
                        used[cur] = true;
                        int nxt = adj[cur][0] == prev ? adj[cur][1] : adj[cur][0];
                        // first step: take the smaller neighbour for determinism
                        if (prev < 0) nxt = std::min(adj[cur][0], adj[cur][1]);
                        prev = cur;
                        cur = nxt;
                    } while (cur != start);
                    if (loop.size() < 3) continue;

                    // orient the loop so its normal opposes the gradient
                    Vec3 newell{0, 0, 0};
                    for (size_t i = 0; i < loop.size(); ++i) {
                        const Vec3& a = mesh.vertices[cell.vert[loop[i]]];
                        const Vec3& b = mesh.vertices[cell.vert[loop[(i + 1) % loop.size()]]];
                        newell += cross(a, b);
                    }
                    if (dot(newell, grad) > 0.0) std::reverse(loop.begin(), loop.end());

                    auto emit = [&mesh](uint32_t a, uint32_t b, uint32_t c) {
                        if (a == b || b == c || a == c) return;
                        mesh.faces.push_back({a, b, c});
                    };
                    if (loop.size() == 3) {
                        emit(cell.vert[loop[0]], cell.vert[loop[1]], cell.vert[loop[2]]);
                    } else {
                        // centroid fan; sum in canonical edge order so the
                        // value is independent of loop orientation
                        std::vector<int> sorted_loop = loop;
                        std::sort(sorted_loop.begin(), sorted_loop.end());
                        Vec3 centroid{0, 0, 0};
                        for (int e : sorted_loop) centroid += mesh.vertices[cell.vert[e]];
                        centroid *= 1.0 / double(loop.size());
                        uint32_t cidx = uint32_t(mesh.vertices.size());
                        mesh.vertices.push_back(centroid);
                        for (size_t i = 0; i < loop.size(); ++i)
                            emit(cidx, cell.vert[loop[i]],
                                 cell.vert[loop[(i + 1) % loop.size()]]);
                    }
                }
            }
    return mesh;
}

TriangleMesh extract_mesh(const FieldFn& field, size_t coarse_res, size_t target_res, double tau) {
    OccupancyGrid grid = mise(field, coarse_res, target_res, tau);
    return marching_cubes(grid);
}

}  // namespace mrio
