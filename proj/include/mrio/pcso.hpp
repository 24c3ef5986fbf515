#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mrio/isosurface.hpp"
#include "mrio/losses.hpp"
#include "mrio/mesh.hpp"
#include "mrio/synthscene.hpp"
#include "mrio/tensor.hpp"

namespace mrio {

// Learned occupancy field over the unit cube: per-point encoder MLP, voxel
// average pooling with a two-level 3D conv U-stack, and an occupancy decoder
// MLP on (query, trilinear feature).
struct OccupancyField {
    size_t grid = 32;  // G voxels per axis (even)
    size_t feat = 32;  // F feature channels

    Tensor enc_w1, enc_b1, enc_w2, enc_b2;          // 3 -> F -> F
    Tensor agg_down_w, agg_down_b;                  // stride-2 conv, F -> F
    Tensor agg_up_w, agg_up_b;                      // post-upsample conv, F -> F
    Tensor dec_w1, dec_b1, dec_w2, dec_b2, dec_w3, dec_b3;  // (3+F) -> 64 -> 64 -> 1

    static OccupancyField init(size_t grid, size_t feat, uint64_t seed);
    void validate() const;

    // Parameter groups in network order; "last two" = final decoder layers.
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    std::vector<Tensor> params() const;
    std::vector<Tensor> last_two_groups() const;
};

// Per-point features (n,F); the module never consumes normals.
Tensor encode_points(const PointCloud& cloud, const OccupancyField& field);

// Average-pooled voxel features before aggregation (G,G,G,F).
Tensor pool_points(const Tensor& point_features, const PointCloud& cloud, size_t grid);

// Two-level U-stack: down 2x, up 2x, skip-add.
Tensor aggregate_volume(const Tensor& pooled, const OccupancyField& field);

// encode + pool + aggregate.
Tensor compute_volume(const OccupancyField& field, const PointCloud& cloud);

// Trilinear feature lookup at unit-cube positions (voxel-centre convention).
Tensor query_feature(const Tensor& volume, const std::vector<double>& points_xyz, size_t grid);

// Decoder logits / Eq. 6 signed occupancy / Eq. 8 sign-agnostic occupancy.
Tensor decode_logits(const OccupancyField& field, const Tensor& volume,
                     const std::vector<double>& points_xyz);
Tensor decode_occupancy(const OccupancyField& field, const Tensor& volume,
                        const std::vector<double>& points_xyz);
Tensor decode_unsigned(const OccupancyField& field, const Tensor& volume,
                       const std::vector<double>& points_xyz);

// Batch field interface for isosurface extraction against a fixed volume.
FieldFn make_field_fn(const OccupancyField& field, const Tensor& volume);

struct QueryBatch {
    std::vector<double> points;   // 3m, unit cube
    std::vector<double> targets;  // m: 0.5 on-surface, 1.0 non-surface volume
    size_t n_surface = 0, n_volume = 0;
};

// Surface queries drawn from the cloud (target 0.5); volume queries uniform in
// the cube, rejected within reject_radius of the cloud (target 1.0).
QueryBatch sample_targets(const PointCloud& cloud, size_t m_surface, size_t m_volume,
                          double reject_radius, uint64_t seed);

struct FinetuneSchedule {
    size_t iterations = 1000;
    double lr = 3e-5;
    double decay_factor = 0.3;
    long long decay_interval = 400;
    size_t m_surface = 256, m_volume = 256;
    double reject_radius_cells = 1.5;  // in voxel pitches
    size_t extract_every = 100;
    size_t smooth_stencils = 96;
    size_t mc_coarse = 8, mc_target = 32;
    bool last_two_only = false;
    uint64_t seed = 1;
};

struct TrainLogEntry {
    LossReport report;
    double smooth_mesh = 0.0;  // mesh-evaluated smooth loss at last extraction
    std::string json_line() const;
};

struct FinetuneResult {
    std::vector<TrainLogEntry> log;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Sign-agnostic test-time optimisation: unsigned cross-entropy on
// sample_targets batches plus the smooth-loss surrogate, combined by
// `weights` with l_f_constant as the (fixed) matching term. Updates the field
// in place; zero iterations leave it untouched.
FinetuneResult sign_agnostic_finetune(OccupancyField& field, const PointCloud& cloud,
                                      const FinetuneSchedule& schedule,
                                      MultiTaskWeights& weights, double l_f_constant = 0.0);

struct PretrainSchedule {
    size_t iterations = 300;
    double lr = 1e-3;
    size_t queries_per_iter = 512;
    size_t cloud_points = 1500;
    uint64_t seed = 1;
    // the full-dataset reference schedule this substitutes for
    size_t reference_iterations = 30000;
    size_t reference_batch = 32;
};

// Desk-scale pre-training on procedural shapes with true inside/outside
// labels from the SDF sign (signed occupancy + BCE).
void pretrain_field(OccupancyField& field, const std::vector<SceneSpec>& shapes,
                    const PretrainSchedule& schedule);

// Field-side stand-in for the mesh smooth loss: squared second differences of
// the decoded occupancy at the given stencil centres (spacing h).
Tensor smooth_surrogate(const OccupancyField& field, const Tensor& volume,
                        const std::vector<Vec3>& centers, double h);

}  // namespace mrio
