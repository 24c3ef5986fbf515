#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrio/camera.hpp"
#include "mrio/geom3.hpp"
#include "mrio/mesh.hpp"

namespace mrio {

enum class PrimitiveKind { Sphere, Box, Torus };

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    Vec3 center{0.5, 0.5, 0.5};
    double radius = 0.3;      // sphere
    Vec3 half_extents{0.22, 0.22, 0.22};  // box
    double major = 0.26, minor = 0.1;     // torus (axis z)

    double sdf(const Vec3& x) const;
    double area() const;
    // Uniform sample of this primitive's own surface.
    Vec3 sample_surface(class Rng& rng) const;
};

struct CameraRig {
    size_t n_views = 5;
    double radius = 2.4;
    double elevation = 0.45;  // radians above the ring plane
    Vec3 look_at{0.5, 0.5, 0.5};
    double fov_deg = 26.0;
};

struct SceneSpec {
    std::vector<Primitive> shapes;
    uint64_t texture_seed = 1;
    CameraRig rig;
    size_t image_width = 64, image_height = 64;
    double noise_std = 0.0;

    void validate() const;
};

struct GroundTruth {
    SdfFn sdf;
    PointCloud surface;  // samples with normals from the SDF gradient
    // per-view depth ranges for the plane sweep (z-depth of the scene box)
    std::vector<double> d_min, d_max;
};

struct Scene {
    SceneSpec spec;
    GroundTruth gt;
    std::vector<CameraView> views;  // shaded images + gt_depth filled
};

// Union SDF of a shape list.
SdfFn make_union_sdf(const std::vector<Primitive>& shapes);
// Normalised central-difference gradient of an SDF.
Vec3 sdf_normal(const SdfFn& sdf, const Vec3& x);

// Deterministic scene synthesis: ring rig, Lambertian shading over a
// procedural 3D texture (sum of three random-frequency sinusoids), sphere
// traced ground-truth depth per view.
Scene build_scene(const SceneSpec& spec);

// n points with |sdf| < 1e-6 and outward SDF-gradient normals.
PointCloud sample_surface(const GroundTruth& gt, const std::vector<Primitive>& shapes, size_t n,
                          uint64_t seed);

// Gaussian jitter plus random removal; surviving points keep their normals.
PointCloud perturb_cloud(const PointCloud& cloud, double sigma, double dropout, uint64_t seed);

// Named presets ("sphere" | "box" | "torus"), jittered per seed, all inside
// the unit cube.
SceneSpec make_preset(const std::string& name, uint64_t seed);

}  // namespace mrio
