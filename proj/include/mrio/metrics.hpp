#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrio/geom3.hpp"
#include "mrio/mesh.hpp"

namespace mrio {

// Balanced median-split k-d tree with exact nearest-neighbour queries;
// distance ties break to the smallest point id.
class KdTree {
  public:
    explicit KdTree(const std::vector<Vec3>& points, size_t leaf_size = 16);

    struct Result {
        size_t index = 0;
        double dist2 = 0.0;
    };
    Result nearest(const Vec3& q) const;
    size_t size() const { return points_.size(); }

  private:
    struct Node {
        int axis = -1;           // -1 for leaves
        double split = 0.0;
        int left = -1, right = -1;
        uint32_t first = 0, count = 0;
    };
    int build(uint32_t first, uint32_t count, size_t leaf_size);
    void search(int node, const Vec3& q, Result& best) const;

    std::vector<Vec3> points_;   // original order
    std::vector<uint32_t> order_;
    std::vector<Node> nodes_;
};

struct MetricsReport {
    double cd = 0.0;       // squared-distance chamfer, both directions
    double nc = 0.0;       // mean |cos| of normal angles, in [0,1]
    double fs = 0.0;       // F-score percent at fs_threshold
    double fs_threshold = 0.01;
    double acc = 0.0;      // mean unsquared distance P -> T
    double comp = 0.0;     // mean unsquared distance T -> P
    double overall = 0.0;  // (acc + comp) / 2
};

double chamfer(const PointCloud& p, const PointCloud& t);
double normal_consistency(const PointCloud& p, const PointCloud& t);
double fscore(const PointCloud& p, const PointCloud& t, double threshold);
double accuracy(const PointCloud& p, const PointCloud& t);
double completeness(const PointCloud& p, const PointCloud& t);
double overall(double acc, double comp);

// All metrics in one pass (normal consistency only when both clouds carry
// normals; it reports -1 otherwise).
MetricsReport evaluate_clouds(const PointCloud& p, const PointCloud& t,
                              double fs_threshold = 0.01);

// Aligned text table, columns ordered CD NC FS | Acc Comp Overall.
std::string metrics_table(const MetricsReport& r);

}  // namespace mrio
