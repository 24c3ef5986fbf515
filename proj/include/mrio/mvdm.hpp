#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mrio/camera.hpp"
#include "mrio/mesh.hpp"
#include "mrio/tensor.hpp"

namespace mrio {

struct MvdmConfig {
    size_t fine_feat = 16;
    size_t coarse_feat = 32;
    size_t reg_channels = 4;
    double gamma = 2.0;           // focal focusing parameter
    bool attention_scale = false; // optional 1/sqrt(F) logit scaling, off as written
};

struct MvdmParams {
    MvdmConfig config;
    Tensor conv1_w, conv1_b;  // image channels -> fine
    Tensor conv2_w, conv2_b;  // fine -> coarse, stride 2
    Tensor attn_q, attn_k, attn_v, attn_out;  // coarse_feat square
    Tensor path_w, path_b;                    // coarse -> fine pathway projection
    Tensor reg1_w, reg1_b, reg2_w, reg2_b, reg3_w, reg3_b;  // 1 -> C -> C -> 1

    static MvdmParams init(const MvdmConfig& config, uint64_t seed, size_t image_channels = 1);
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    std::vector<Tensor> params() const;
    std::vector<Tensor> regularizer_params() const;
    std::vector<Tensor> last_two_groups() const;  // final regulariser convs
};

struct FeaturePyramid {
    Tensor fine;    // (H, W, F_fine)
    Tensor coarse;  // (H/2, W/2, F_coarse)
};

// Two-level conv pyramid; extents must be even.
FeaturePyramid extract_features(const Tensor& image, const MvdmParams& params);

// 2D sinusoidal encoding in [-1,1]; first half of the channels encode x,
// second half y. F must be even.
Tensor positional_encoding(size_t h, size_t w, size_t f);

// softmax(Q K^T) V, optionally with 1/sqrt(F) logit scaling.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool scale = false);

struct TransformedFeatures {
    FeaturePyramid ref;
    std::vector<FeaturePyramid> srcs;
};

// Feature-matching transform at the coarse level: positional encoding, one
// intra-attention pass per image, then one unidirectional inter pass where
// each source attends to the reference (the inter values are the reference
// features themselves, so source rows land in their convex hull). Coarse
// results propagate to the fine level by upsample + 1x1 projection + add.
TransformedFeatures fmt_transform(const FeaturePyramid& ref,
                                  const std::vector<FeaturePyramid>& srcs,
                                  const MvdmParams& params);

// Per-view inner-product volumes h_i combined as sum_i w_i h_i with
// w_i = relu(max_d h_i), normalised by sum_i w_i to stay view-count
// independent. Invariant to source ordering.
Tensor correlation_volume(const Tensor& ref_feat, const std::vector<Tensor>& warped);

struct DepthProbabilityVolume {
    Tensor probabilities;         // (D, H, W), per-pixel distribution over d
    DepthHypothesisSet hypotheses;
    std::vector<uint8_t> valid;   // H*W warp-coverage mask
};

// Three 3x3x3 convolutions over (d,h,w) then softmax over d.
DepthProbabilityVolume depth_probability(const Tensor& volume, const MvdmParams& params,
                                         const DepthHypothesisSet& hypotheses,
                                         std::vector<uint8_t> valid = {});

// Pixels contribute when covered by the warp mask, gt_depth > 0 and the depth
// maps into the pixel's hypothesis range; mean over that set.
Tensor focal_loss(const DepthProbabilityVolume& p, const std::vector<double>& gt_depth,
                  double gamma);
// focal_loss without the (1-P)^gamma factor; bitwise equal to gamma = 0.
Tensor cross_entropy_loss(const DepthProbabilityVolume& p, const std::vector<double>& gt_depth);

struct DepthMap {
    std::vector<double> depth;       // 0 = invalid
    std::vector<double> confidence;  // probability at the argmax hypothesis
};

// Argmax hypothesis refined by a local expectation over +-window bins.
DepthMap depth_from_probability(const DepthProbabilityVolume& p, size_t window = 2);

struct FusionThresholds {
    double min_confidence = 0.3;
    double max_pixel_error = 1.0;
    double max_relative_depth_error = 0.01;
    size_t min_consistent_views = 2;
};

// Geometric-consistency fusion of per-view depth maps into a world-frame
// cloud with depth-gradient normals. Output order: view-major, row-major.
PointCloud fuse_depth_maps(const std::vector<DepthMap>& maps,
                           const std::vector<CameraView>& views,
                           const FusionThresholds& thresholds = {});

struct PhotoConsistencyStats {
    size_t samples_used = 0;
    double mean_ncc = 0.0;
};

// Surface-integral photo-consistency over mesh samples: per view pair,
// -ncc * |N.d_i| / z_i^3 accumulated where the sample is front-facing and
// unoccluded in both views; h is zero-mean NCC over 5x5 patches, the source
// patch resampled through the surface. Lower is more consistent.
Tensor photo_consistency_loss(const TriangleMesh& mesh, const std::vector<CameraView>& views,
                              const std::vector<std::pair<size_t, size_t>>& pairs,
                              size_t n_samples = 512, uint64_t seed = 1,
                              PhotoConsistencyStats* stats = nullptr);

}  // namespace mrio
