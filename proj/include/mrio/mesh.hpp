#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mrio/geom3.hpp"

namespace mrio {

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;  // empty, or one unit normal per point

    bool has_normals() const { return !normals.empty(); }
    size_t size() const { return points.size(); }
    void validate() const;
};

// Per-vertex discrete differential quantities: cotangent-Laplacian mean
// curvature, angle-defect Gaussian curvature and the mixed Voronoi area.
struct VertexCurvature {
    double mean = 0.0;
    double gauss = 0.0;
    double area = 0.0;
    bool boundary = false;
};

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<uint32_t, 3>> faces;  // CCW seen from outside

    bool empty() const { return faces.empty(); }
    void validate() const;  // index ranges, no repeated-index faces

    Vec3 face_normal(size_t f) const;
    double face_area(size_t f) const;
    double surface_area() const;
    std::vector<Vec3> vertex_normals() const;  // area-weighted from faces
};

// Counts faces per undirected edge. A closed manifold mesh has every count
// equal to 2; boundary edges have count 1.
struct EdgeStats {
    size_t boundary_edges = 0;
    size_t nonmanifold_edges = 0;  // count > 2
    size_t total_edges = 0;
};
EdgeStats edge_stats(const TriangleMesh& mesh);
bool is_closed_manifold(const TriangleMesh& mesh);

// Per-vertex curvature via cotangent weights, angle defects and mixed Voronoi
// areas; boundary vertices are flagged. Throws on non-manifold input.
std::vector<VertexCurvature> mesh_curvature(const TriangleMesh& mesh);

// Area-weighted uniform sampling of the surface; normals come from the face
// planes. Deterministic per seed.
PointCloud sample_mesh_surface(const TriangleMesh& mesh, size_t n, uint64_t seed);

// Median-split AABB tree over triangles for nearest-hit ray queries.
class Bvh {
  public:
    explicit Bvh(const TriangleMesh& mesh);

    struct Hit {
        bool hit = false;
        double t = 0.0;
        uint32_t face = 0;
        Vec3 point;
    };
    // Nearest intersection with t in (t_min, t_max).
    Hit raycast(const Vec3& origin, const Vec3& dir, double t_max,
                double t_min = 1e-9) const;

  private:
    struct Node {
        Aabb box;
        int left = -1, right = -1;
        uint32_t first = 0, count = 0;  // leaf triangle range
    };
    int build(uint32_t first, uint32_t count, int depth);

    const TriangleMesh* mesh_ = nullptr;
    std::vector<Node> nodes_;
    std::vector<uint32_t> tri_order_;
    std::vector<Aabb> tri_boxes_;
};

}  // namespace mrio
