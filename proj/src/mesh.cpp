#include "mrio/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mrio/rng.hpp"
#include "mrio/tensor.hpp"

namespace mrio {

void PointCloud::validate() const {
    for (const Vec3& p : points)
        check(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z),
              "point cloud: non-finite point");
    if (!normals.empty()) {
        check(normals.size() == points.size(), "point cloud: normal count mismatch");
        for (const Vec3& n : normals)
            check(std::fabs(norm(n) - 1.0) <= 1e-8, "point cloud: normal not unit length");
    }
}

void TriangleMesh::validate() const {
    for (const auto& f : faces) {
        for (uint32_t idx : f)
            check(idx < vertices.size(), "mesh: face index out of range");
        check(f[0] != f[1] && f[1] != f[2] && f[0] != f[2], "mesh: degenerate face");
    }
}

Vec3 TriangleMesh::face_normal(size_t f) const {
    const auto& t = faces[f];
    Vec3 n = cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]);
    return normalized(n);
}

double TriangleMesh::face_area(size_t f) const {
    const auto& t = faces[f];
    return 0.5 * norm(cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]));
}

double TriangleMesh::surface_area() const {
    double a = 0.0;
    for (size_t f = 0; f < faces.size(); ++f) a += face_area(f);
    return a;
}

std::vector<Vec3> TriangleMesh::vertex_normals() const {
    std::vector<Vec3> normals(vertices.size(), Vec3{0, 0, 0});
    for (size_t f = 0; f < faces.size(); ++f) {
        const auto& t = faces[f];
        Vec3 n = cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]);
        for (uint32_t idx : t) normals[idx] += n;  // area weighting via unnormalised cross
    }
    for (Vec3& n : normals) n = normalized(n);
    return normals;
}

namespace {

using EdgeKey = std::pair<uint32_t, uint32_t>;
EdgeKey edge_key(uint32_t a, uint32_t b) { return a < b ? EdgeKey{a, b} : EdgeKey{b, a}; }

std::map<EdgeKey, int> edge_counts(const TriangleMesh& mesh) {
    std::map<EdgeKey, int> counts;
    for (const auto& f : mesh.faces)
        for (int e = 0; e < 3; ++e) ++counts[edge_key(f[size_t(e)], f[size_t((e + 1) % 3)])];
    return counts;
}

}  // namespace

EdgeStats edge_stats(const TriangleMesh& mesh) {
    EdgeStats st;
    for (const auto& [k, c] : edge_counts(mesh)) {
        (void)k;
        ++st.total_edges;
        if (c == 1) ++st.boundary_edges;
        if (c > 2) ++st.nonmanifold_edges;
    }
    return st;
}

bool is_closed_manifold(const TriangleMesh& mesh) {
    EdgeStats st = edge_stats(mesh);
    return !mesh.empty() && st.boundary_edges == 0 && st.nonmanifold_edges == 0;
}

std::vector<VertexCurvature> mesh_curvature(const TriangleMesh& mesh) {
    mesh.validate();
    EdgeStats st = edge_stats(mesh);
    check(st.nonmanifold_edges == 0, "mesh_curvature: non-manifold edge");

    const size_t nv = mesh.vertices.size();
    std::vector<VertexCurvature> out(nv);
    std::vector<Vec3> laplace(nv, Vec3{0, 0, 0});
    std::vector<double> angle_sum(nv, 0.0);

    // boundary flags
    auto counts = edge_counts(mesh);
    std::vector<uint8_t> boundary(nv, 0);
    for (const auto& [k, c] : counts)
        if (c == 1) boundary[k.first] = boundary[k.second] = 1;

    auto cot = [](const Vec3& u, const Vec3& v) {
        double c = dot(u, v);
        double s = norm(cross(u, v));
        return s > 1e-300 ? c / s : 0.0;
    };

    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        const Vec3 verts[3] = {a, b, c};
        double area = 0.5 * norm(cross(b - a, c - a));
        if (area <= 1e-300) continue;

        double cots[3];  // cotangent of the angle at each corner
        for (int i = 0; i < 3; ++i) {
            const Vec3& p = verts[i];
            const Vec3& q = verts[(i + 1) % 3];
            const Vec3& r = verts[(i + 2) % 3];
            cots[i] = cot(q - p, r - p);
            double ang = std::atan2(norm(cross(q - p, r - p)), dot(q - p, r - p));
            angle_sum[f[size_t(i)]] += ang;
        }

        // cotangent Laplacian: edge (i,j) carries cot(angle opposite)
        for (int i = 0; i < 3; ++i) {
            int j = (i + 1) % 3, k = (i + 2) % 3;
            const Vec3 eij = verts[j] - verts[i];
            laplace[f[size_t(i)]] += eij * cots[k];
            laplace[f[size_t(j)]] -= eij * cots[k];
        }

        // mixed Voronoi area (Meyer et al.)
        bool obtuse = cots[0] < 0.0 || cots[1] < 0.0 || cots[2] < 0.0;
        for (int i = 0; i < 3; ++i) {
            double contrib;
            if (!obtuse) {
                int j = (i + 1) % 3, k = (i + 2) % 3;
                contrib = (norm2(verts[j] - verts[i]) * cots[k] +
                           norm2(verts[k] - verts[i]) * cots[j]) / 8.0;
            } else {
                contrib = cots[i] < 0.0 ? area / 2.0 : area / 4.0;
            }
            out[f[size_t(i)]].area += contrib;
        }
    }

    std::vector<Vec3> normals = mesh.vertex_normals();
    for (size_t v = 0; v < nv; ++v) {
        out[v].boundary = boundary[v] != 0;
        double av = out[v].area;
        if (av <= 1e-300) continue;
        // Laplace-Beltrami of position = -2 H n (n outward)
        Vec3 lb = laplace[v] / (2.0 * av);
        out[v].mean = -0.5 * dot(lb, normals[v]);
        out[v].gauss = (2.0 * M_PI - angle_sum[v]) / av;
    }
    return out;
}

PointCloud sample_mesh_surface(const TriangleMesh& mesh, size_t n, uint64_t seed) {
    domain_check(!mesh.empty(), "sample_mesh_surface: empty mesh");
    std::vector<double> cum(mesh.faces.size());
    double total = 0.0;
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
        total += mesh.face_area(f);
        cum[f] = total;
    }
    domain_check(total > 0.0, "sample_mesh_surface: zero-area mesh");
    Rng rng(seed);
    PointCloud cloud;
    cloud.points.reserve(n);
    cloud.normals.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        double u = rng.uniform() * total;
        size_t f = size_t(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        if (f >= mesh.faces.size()) f = mesh.faces.size() - 1;
        const auto& t = mesh.faces[f];
        double r1 = std::sqrt(rng.uniform());
        double r2 = rng.uniform();
        double w0 = 1.0 - r1, w1 = r1 * (1.0 - r2), w2 = r1 * r2;
        cloud.points.push_back(mesh.vertices[t[0]] * w0 + mesh.vertices[t[1]] * w1 +
                               mesh.vertices[t[2]] * w2);
        cloud.normals.push_back(mesh.face_normal(f));
    }
    return cloud;
}

// ---- BVH -------------------------------------------------------------------

Bvh::Bvh(const TriangleMesh& mesh) : mesh_(&mesh) {
    const uint32_t nf = uint32_t(mesh.faces.size());
    tri_order_.resize(nf);
    std::iota(tri_order_.begin(), tri_order_.end(), 0u);
    tri_boxes_.resize(nf);
    for (uint32_t f = 0; f < nf; ++f) {
        Aabb box;
        for (uint32_t idx : mesh.faces[f]) box.expand(mesh.vertices[idx]);
        tri_boxes_[f] = box;
    }
    if (nf > 0) build(0, nf, 0);
}

int Bvh::build(uint32_t first, uint32_t count, int depth) {
    Node node;
    for (uint32_t i = first; i < first + count; ++i) node.box.expand(tri_boxes_[tri_order_[i]]);
    int id = int(nodes_.size());
    nodes_.push_back(node);
    if (count <= 4 || depth > 40) {
        nodes_[size_t(id)].first = first;
        nodes_[size_t(id)].count = count;
        return id;
    }
    Vec3 extent = node.box.hi - node.box.lo;
    int axis = extent.x >= extent.y && extent.x >= extent.z ? 0 : (extent.y >= extent.z ? 1 : 2);
    uint32_t mid = first + count / 2;
    std::nth_element(tri_order_.begin() + first, tri_order_.begin() + mid,
                     tri_order_.begin() + first + count, [&](uint32_t a, uint32_t b) {
                         double ca = tri_boxes_[a].center()[axis];
                         double cb = tri_boxes_[b].center()[axis];
                         if (ca != cb) return ca < cb;
                         return a < b;
                     });
    int left = build(first, mid - first, depth + 1);
    int right = build(mid, first + count - mid, depth + 1);
    nodes_[size_t(id)].left = left;
    nodes_[size_t(id)].right = right;
    return id;
}

namespace {

bool ray_box(const Vec3& o, const Vec3& inv_dir, const Aabb& box, double t_max) {
    double t0 = 1e-12, t1 = t_max;
    for (int a = 0; a < 3; ++a) {
        double lo = (box.lo[a] - o[a]) * inv_dir[a];
        double hi = (box.hi[a] - o[a]) * inv_dir[a];
        if (inv_dir[a] < 0.0) std::swap(lo, hi);
        t0 = std::max(t0, lo);
        t1 = std::min(t1, hi);
        if (t0 > t1) return false;
    }
    return true;
}

// Moeller-Trumbore
bool ray_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c,
                  double& t_out) {
    const Vec3 e1 = b - a, e2 = c - a;
    const Vec3 p = cross(d, e2);
    double det = dot(e1, p);
    if (std::fabs(det) < 1e-14) return false;
    double inv = 1.0 / det;
    const Vec3 s = o - a;
    double u = dot(s, p) * inv;
    if (u < -1e-12 || u > 1.0 + 1e-12) return false;
    const Vec3 q = cross(s, e1);
    double v = dot(d, q) * inv;
    if (v < -1e-12 || u + v > 1.0 + 1e-12) return false;
    t_out = dot(e2, q) * inv;
    return true;
}

}  // namespace

Bvh::Hit Bvh::raycast(const Vec3& origin, const Vec3& dir, double t_max, double t_min) const {
    Hit best;
    if (nodes_.empty()) return best;
    best.t = t_max;
    Vec3 inv{1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z};
    std::vector<int> stack{0};
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        const Node& node = nodes_[size_t(id)];
        if (!ray_box(origin, inv, node.box, best.t)) continue;
        if (node.left < 0) {
            for (uint32_t i = node.first; i < node.first + node.count; ++i) {
                uint32_t f = tri_order_[i];
                const auto& tri = mesh_->faces[f];
                double t;
                if (ray_triangle(origin, dir, mesh_->vertices[tri[0]], mesh_->vertices[tri[1]],
                                 mesh_->vertices[tri[2]], t) &&
                    t > t_min && t < best.t) {
                    best.hit = true;
                    best.t = t;
                    best.face = f;
                }
            }
        } else {
            stack.push_back(node.left);
            stack.push_back(node.right);
        }
    }
    if (best.hit) best.point = origin + dir * best.t;
    return best;
}

}  // namespace mrio
