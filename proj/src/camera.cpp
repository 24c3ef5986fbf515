#include "mrio/camera.hpp"

#include <cmath>

#include "mrio/parallel.hpp"

namespace mrio {

void CameraIntrinsics::validate() const {
    check(fx > 0.0 && fy > 0.0, "intrinsics: focal lengths must be positive");
    check(cx >= 0.0 && cx < double(width), "intrinsics: cx outside raster");
    check(cy >= 0.0 && cy < double(height), "intrinsics: cy outside raster");
}

CameraIntrinsics CameraIntrinsics::scaled(double s) const {
    CameraIntrinsics r = *this;
    r.fx = fx * s;
    r.fy = fy * s;
    r.cx = cx * s;
    r.cy = cy * s;
    r.width = size_t(std::llround(double(width) * s));
    r.height = size_t(std::llround(double(height) * s));
    return r;
}

void CameraPose::validate(double tol) const {
    Mat3 rtr = R.transposed() * R;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double want = i == j ? 1.0 : 0.0;
            check(std::fabs(rtr(i, j) - want) <= tol, "pose: R is not orthonormal");
        }
    check(std::fabs(R.det() - 1.0) <= tol, "pose: det R != +1");
}

void CameraView::validate() const {
    intrinsics.validate();
    if (image.defined()) {
        check(image.ndim() == 3, "view: image must be (H,W,C)");
        check(image.shape()[0] == intrinsics.height && image.shape()[1] == intrinsics.width,
              "view: raster extents disagree with intrinsics");
    }
    if (!gt_depth.empty())
        check(gt_depth.size() == intrinsics.width * intrinsics.height,
              "view: gt_depth extent mismatch");
}

void DepthHypothesisSet::validate() const {
    check(d_min > 0.0 && d_min < d_max, "hypotheses: need 0 < d_min < d_max");
    check(count >= 2, "hypotheses: need at least 2 depths");
    if (!center.empty())
        check(rel_half_width > 0.0 && rel_half_width < 1.0,
              "hypotheses: rel_half_width must be in (0,1) with a centre map");
}

namespace {

double spaced_depth(double lo, double hi, size_t count, DepthSpacing spacing, size_t i) {
    double t = count > 1 ? double(i) / double(count - 1) : 0.0;
    if (spacing == DepthSpacing::UniformDepth) return lo + (hi - lo) * t;
    double inv = (1.0 / lo) * (1.0 - t) + (1.0 / hi) * t;
    return 1.0 / inv;
}

}  // namespace

double DepthHypothesisSet::base_depth(size_t i) const {
    return spaced_depth(d_min, d_max, count, spacing, i);
}

double DepthHypothesisSet::depth_at(size_t pixel, size_t i) const {
    if (!center.empty() && center[pixel] > 0.0) {
        double c = center[pixel];
        return spaced_depth(c * (1.0 - rel_half_width), c * (1.0 + rel_half_width), count,
                            spacing, i);
    }
    return base_depth(i);
}

long DepthHypothesisSet::nearest_index(size_t pixel, double depth) const {
    double lo = d_min, hi = d_max;
    if (!center.empty() && center[pixel] > 0.0) {
        lo = center[pixel] * (1.0 - rel_half_width);
        hi = center[pixel] * (1.0 + rel_half_width);
    }
    if (!(depth >= lo && depth <= hi)) return -1;
    long best = 0;
    double best_err = std::fabs(spaced_depth(lo, hi, count, spacing, 0) - depth);
    for (size_t i = 1; i < count; ++i) {
        double err = std::fabs(spaced_depth(lo, hi, count, spacing, i) - depth);
        if (err < best_err) {
            best_err = err;
            best = long(i);
        }
    }
    return best;
}

Vec3 backproject(const Pixel& p, double d, const CameraIntrinsics& K) {
    domain_check(d > 0.0, "backproject: depth must be positive");
    return {(p.x - K.cx) / K.fx * d, (p.y - K.cy) / K.fy * d, d};
}

Pixel project(const Vec3& x_cam, const CameraIntrinsics& K) {
    return {K.fx * x_cam.x / x_cam.z + K.cx, K.fy * x_cam.y / x_cam.z + K.cy};
}

RelativeTransform relative_transform(const CameraPose& ref, const CameraPose& src) {
    RelativeTransform rel;
    rel.R = src.R * ref.R.transposed();
    rel.t = src.t - rel.R * ref.t;
    return rel;
}

WarpResult warp_pixel(const Pixel& p, double d, const CameraView& ref, const CameraView& src) {
    RelativeTransform rel = relative_transform(ref.pose, src.pose);
    Vec3 x_src = rel.R * backproject(p, d, ref.intrinsics) + rel.t;
    WarpResult r;
    r.src_depth = x_src.z;
    if (x_src.z <= 0.0) return r;  // behind the source camera
    r.p = project(x_src, src.intrinsics);
    r.valid = r.p.x >= 0.0 && r.p.x <= double(src.intrinsics.width - 1) && r.p.y >= 0.0 &&
              r.p.y <= double(src.intrinsics.height - 1);
    return r;
}

Tensor warp_feature_map(const Tensor& src_features, const DepthHypothesisSet& hypotheses,
                        const CameraView& ref, const CameraView& src,
                        std::vector<uint8_t>* valid) {
    check(src_features.ndim() == 3, "warp_feature_map: features must be (H,W,F)");
    const size_t H = src_features.shape()[0], W = src_features.shape()[1],
                 F = src_features.shape()[2];
    check(ref.intrinsics.height == H && ref.intrinsics.width == W &&
              src.intrinsics.height == H && src.intrinsics.width == W,
          "warp_feature_map: intrinsics do not match feature extents");
    hypotheses.validate();
    const size_t D = hypotheses.count;
    const RelativeTransform rel = relative_transform(ref.pose, src.pose);
    std::vector<double> xy(2 * D * H * W);
    parallel_for_chunks(0, D * H * W, [&](size_t lo, size_t hi) {
        for (size_t s = lo; s < hi; ++s) {
            size_t pix = s % (H * W);
            size_t i = s / (H * W);
            double px = double(pix % W), py = double(pix / W);
            double d = hypotheses.depth_at(pix, i);
            Vec3 x_src = rel.R * backproject({px, py}, d, ref.intrinsics) + rel.t;
            if (x_src.z <= 0.0) {
                xy[2 * s] = -1.0;  // forced out of raster -> invalid sample
                xy[2 * s + 1] = -1.0;
            } else {
                Pixel q = project(x_src, src.intrinsics);
                xy[2 * s] = q.x;
                xy[2 * s + 1] = q.y;
            }
        }
    });
    std::vector<uint8_t> mask;
    Tensor flat = bilinear_sample(src_features, xy, &mask);  // invalid rows are zero
    if (valid) *valid = mask;
    return reshape(flat, {D, H, W, F});
}

std::vector<double> render_depth_from_sdf(const SdfFn& sdf, const CameraView& view,
                                          double max_dist) {
    const size_t W = view.intrinsics.width, H = view.intrinsics.height;
    std::vector<double> depth(W * H, 0.0);
    const Vec3 origin = view.pose.center();
    const Mat3 rt = view.pose.R.transposed();
    constexpr double kHitEps = 1e-9;
    constexpr int kMaxSteps = 512;
    parallel_for_chunks(0, W * H, [&](size_t lo, size_t hi) {
        for (size_t pix = lo; pix < hi; ++pix) {
            double px = double(pix % W), py = double(pix / W);
            Vec3 dir_cam = normalized(Vec3{(px - view.intrinsics.cx) / view.intrinsics.fx,
                                           (py - view.intrinsics.cy) / view.intrinsics.fy, 1.0});
            Vec3 dir = rt * dir_cam;
            double t = 0.0;
            for (int step = 0; step < kMaxSteps; ++step) {
                Vec3 x = origin + dir * t;
                double d = sdf(x);
                if (d < kHitEps) {
                    depth[pix] = view.pose.to_camera(x).z;
                    break;
                }
                t += d;
                if (t > max_dist) break;
            }
        }
    });
    return depth;
}

}  // namespace mrio
