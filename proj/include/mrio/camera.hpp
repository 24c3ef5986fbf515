#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mrio/geom3.hpp"
#include "mrio/tensor.hpp"

namespace mrio {

struct Pixel {
    double x = 0.0, y = 0.0;
};

struct CameraIntrinsics {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    size_t width = 0, height = 0;

    void validate() const;
    // Rescales for a raster downsampled by integer factor 1/s (stride-2
    // pyramids put coarse pixel i at fine coordinate i/s).
    CameraIntrinsics scaled(double s) const;
};

// World-to-camera transform: X_cam = R * X_world + t.
struct CameraPose {
    Mat3 R;
    Vec3 t;

    void validate(double tol = 1e-10) const;
    Vec3 center() const { return R.transposed() * (-t); }
    Vec3 to_camera(const Vec3& xw) const { return R * xw + t; }
    Vec3 to_world(const Vec3& xc) const { return R.transposed() * (xc - t); }
};

struct CameraView {
    CameraIntrinsics intrinsics;
    CameraPose pose;
    Tensor image;                  // (H,W,C); may be undefined for pose-only views
    std::vector<double> gt_depth;  // empty, or H*W with 0 marking invalid

    void validate() const;
};

enum class DepthSpacing { UniformInverse, UniformDepth };

struct DepthHypothesisSet {
    double d_min = 0.0, d_max = 0.0;
    size_t count = 0;
    DepthSpacing spacing = DepthSpacing::UniformInverse;
    // Optional per-pixel recurrence feedback: centre depth per pixel
    // (0 = no prior, base range applies) plus a shared relative half width.
    std::vector<double> center;
    double rel_half_width = 0.0;

    void validate() const;
    // Depth of hypothesis i at a pixel (flat index into the centre map).
    double depth_at(size_t pixel, size_t i) const;
    double base_depth(size_t i) const;
    // Nearest hypothesis index for a depth, or -1 if outside the pixel range.
    long nearest_index(size_t pixel, double depth) const;
};

// K0^-1 * p * d: pixel + depth to a camera-frame point.
Vec3 backproject(const Pixel& p, double d, const CameraIntrinsics& K);
// Perspective projection of a camera-frame point.
Pixel project(const Vec3& x_cam, const CameraIntrinsics& K);

struct RelativeTransform {
    Mat3 R;
    Vec3 t;
};
RelativeTransform relative_transform(const CameraPose& ref, const CameraPose& src);

struct WarpResult {
    Pixel p;
    double src_depth = 0.0;
    bool valid = false;  // in-raster with positive depth in the source frame
};

// p_hat = K [ R (K0^-1 p d) + t ] for the ref->src relative transform.
WarpResult warp_pixel(const Pixel& p, double d, const CameraView& ref, const CameraView& src);

// Warps src features onto every (hypothesis, ref pixel) position. Both views'
// intrinsics must match the feature raster extents. Out-of-raster samples are
// zeroed and reported in `valid` (size D*H*W). Gradients flow to src_features.
Tensor warp_feature_map(const Tensor& src_features, const DepthHypothesisSet& hypotheses,
                        const CameraView& ref, const CameraView& src,
                        std::vector<uint8_t>* valid = nullptr);

using SdfFn = std::function<double(const Vec3&)>;

// Sphere-traced first-hit z-depth per pixel; 0 marks a miss. The field must
// not overestimate distances (Lipschitz constant 1).
std::vector<double> render_depth_from_sdf(const SdfFn& sdf, const CameraView& view,
                                          double max_dist);

}  // namespace mrio
