#include "mrio/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mrio/parallel.hpp"
#include "mrio/tensor.hpp"

namespace mrio {

KdTree::KdTree(const std::vector<Vec3>& points, size_t leaf_size) : points_(points) {
    domain_check(!points.empty(), "kd-tree over an empty point set");
    order_.resize(points.size());
    std::iota(order_.begin(), order_.end(), 0u);
    build(0, uint32_t(points.size()), std::max<size_t>(1, leaf_size));
}

int KdTree::build(uint32_t first, uint32_t count, size_t leaf_size) {
    Node node;
    int id = int(nodes_.size());
    nodes_.push_back(node);
    if (count <= leaf_size) {
        nodes_[size_t(id)].first = first;
        nodes_[size_t(id)].count = count;
        return id;
    }
    Aabb box;
    for (uint32_t i = first; i < first + count; ++i) box.expand(points_[order_[i]]);
    Vec3 extent = box.hi - box.lo;
    int axis = extent.x >= extent.y && extent.x >= extent.z ? 0 : (extent.y >= extent.z ? 1 : 2);
    uint32_t mid = first + count / 2;
    std::nth_element(order_.begin() + first, order_.begin() + mid,
                     order_.begin() + first + count, [&](uint32_t a, uint32_t b) {
                         double ca = points_[a][axis], cb = points_[b][axis];
                         if (ca != cb) return ca < cb;
                         return a < b;
                     });
    double split = points_[order_[mid]][axis];
    int left = build(first, mid - first, leaf_size);
    int right = build(mid, first + count - mid, leaf_size);
    nodes_[size_t(id)].axis = axis;
    nodes_[size_t(id)].split = split;
    nodes_[size_t(id)].left = left;
    nodes_[size_t(id)].right = right;
    return id;
}

void KdTree::search(int id, const Vec3& q, Result& best) const {
    const Node& node = nodes_[size_t(id)];
    if (node.axis < 0) {
        for (uint32_t i = node.first; i < node.first + node.count; ++i) {
            uint32_t pi = order_[i];
            double d2 = norm2(points_[pi] - q);
            if (d2 < best.dist2 || (d2 == best.dist2 && pi < best.index)) {
                best.dist2 = d2;
                best.index = pi;
            }
        }
        return;
    }
    double delta = q[node.axis] - node.split;
    int near = delta < 0.0 ? node.left : node.right;
    int far = delta < 0.0 ? node.right : node.left;
    search(near, q, best);
    if (delta * delta <= best.dist2) search(far, q, best);
}

KdTree::Result KdTree::nearest(const Vec3& q) const {
    Result best;
    best.dist2 = std::numeric_limits<double>::infinity();
    best.index = size_t(-1);
    search(0, q, best);
    return best;
}

namespace {

// Nearest-neighbour squared distances (and ids) from each point of p into t,
// in p's index order. Queries run in parallel; sums stay sequential.
void nn_distances(const PointCloud& p, const KdTree& tree, std::vector<double>& d2,
                  std::vector<size_t>& ids) {
    d2.resize(p.size());
    ids.resize(p.size());
    parallel_for_chunks(0, p.size(), [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            KdTree::Result r = tree.nearest(p.points[i]);
            d2[i] = r.dist2;
            ids[i] = r.index;
        }
    });
}

void require_nonempty(const PointCloud& p, const PointCloud& t, const char* op) {
    domain_check(!p.points.empty() && !t.points.empty(),
                 std::string(op) + ": empty point cloud");
}

}  // namespace

double chamfer(const PointCloud& p, const PointCloud& t) {
    require_nonempty(p, t, "chamfer");
    KdTree tp(p.points), tt(t.points);
    std::vector<double> d2;
    std::vector<size_t> ids;
    double acc = 0.0;
    nn_distances(p, tt, d2, ids);
    for (double v : d2) acc += v;
    double lhs = acc / double(p.size());
    nn_distances(t, tp, d2, ids);
    acc = 0.0;
    for (double v : d2) acc += v;
    return lhs + acc / double(t.size());
}

double normal_consistency(const PointCloud& p, const PointCloud& t) {
    require_nonempty(p, t, "normal_consistency");
    check(p.has_normals() && t.has_normals(), "normal_consistency: clouds must carry normals");
    KdTree tt(t.points);
    std::vector<double> d2;
    std::vector<size_t> ids;
    nn_distances(p, tt, d2, ids);
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i)
        acc += std::fabs(dot(p.normals[i], t.normals[ids[i]]));
    return acc / double(p.size());
}

double fscore(const PointCloud& p, const PointCloud& t, double threshold) {
    require_nonempty(p, t, "fscore");
    check(threshold > 0.0, "fscore: threshold must be positive");
    KdTree tp(p.points), tt(t.points);
    std::vector<double> d2;
    std::vector<size_t> ids;
    const double t2 = threshold * threshold;
    nn_distances(p, tt, d2, ids);
    size_t close_p = size_t(std::count_if(d2.begin(), d2.end(),
                                          [t2](double v) { return v <= t2; }));
    nn_distances(t, tp, d2, ids);
    size_t close_t = size_t(std::count_if(d2.begin(), d2.end(),
                                          [t2](double v) { return v <= t2; }));
    double precision = double(close_p) / double(p.size());
    double recall = double(close_t) / double(t.size());
    if (precision + recall == 0.0) return 0.0;
    return 100.0 * 2.0 * precision * recall / (precision + recall);
}

double accuracy(const PointCloud& p, const PointCloud& t) {
    require_nonempty(p, t, "accuracy");
    KdTree tt(t.points);
    std::vector<double> d2;
    std::vector<size_t> ids;
    nn_distances(p, tt, d2, ids);
    double acc = 0.0;
    for (double v : d2) acc += std::sqrt(v);
    return acc / double(p.size());
}

double completeness(const PointCloud& p, const PointCloud& t) { return accuracy(t, p); }

double overall(double acc, double comp) { return (acc + comp) / 2.0; }

MetricsReport evaluate_clouds(const PointCloud& p, const PointCloud& t, double fs_threshold) {
    MetricsReport r;
    r.fs_threshold = fs_threshold;
    r.cd = chamfer(p, t);
    r.nc = p.has_normals() && t.has_normals() ? normal_consistency(p, t) : -1.0;
    r.fs = fscore(p, t, fs_threshold);
    r.acc = accuracy(p, t);
    r.comp = completeness(p, t);
    r.overall = overall(r.acc, r.comp);
    return r;
}

std::string metrics_table(const MetricsReport& r) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-12s %-10s %-10s %-12s %-12s %-12s\n", "CD", "NC", "FS",
                  "Acc", "Comp", "Overall");
    os << line;
    std::snprintf(line, sizeof(line), "%-12.6g %-10.4f %-10.2f %-12.6g %-12.6g %-12.6g\n", r.cd,
                  r.nc, r.fs, r.acc, r.comp, r.overall);
    os << line;
    return os.str();
}

}  // namespace mrio
