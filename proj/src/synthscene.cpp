#include "mrio/synthscene.hpp"

#include <algorithm>
#include <cmath>

#include "mrio/rng.hpp"
#include "mrio/tensor.hpp"

namespace mrio {

double Primitive::sdf(const Vec3& x) const {
    const Vec3 p = x - center;
    switch (kind) {
        case PrimitiveKind::Sphere:
            return norm(p) - radius;
        case PrimitiveKind::Box: {
            Vec3 q{std::fabs(p.x) - half_extents.x, std::fabs(p.y) - half_extents.y,
                   std::fabs(p.z) - half_extents.z};
            Vec3 qpos{std::fmax(q.x, 0.0), std::fmax(q.y, 0.0), std::fmax(q.z, 0.0)};
            return norm(qpos) + std::fmin(std::fmax(q.x, std::fmax(q.y, q.z)), 0.0);
        }
        case PrimitiveKind::Torus: {
            double rxy = std::sqrt(p.x * p.x + p.y * p.y) - major;
            return std::sqrt(rxy * rxy + p.z * p.z) - minor;
        }
    }
    return 0.0;
}

double Primitive::area() const {
    switch (kind) {
        case PrimitiveKind::Sphere:
            return 4.0 * M_PI * radius * radius;
        case PrimitiveKind::Box: {
            const Vec3& h = half_extents;
            return 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z);
        }
        case PrimitiveKind::Torus:
            return 4.0 * M_PI * M_PI * major * minor;
    }
    return 0.0;
}

Vec3 Primitive::sample_surface(Rng& rng) const {
    switch (kind) {
        case PrimitiveKind::Sphere: {
            // uniform direction via normalised gaussians
            Vec3 d{rng.gauss(), rng.gauss(), rng.gauss()};
            while (norm(d) < 1e-12) d = {rng.gauss(), rng.gauss(), rng.gauss()};
            return center + normalized(d) * radius;
        }
        case PrimitiveKind::Box: {
            const Vec3& h = half_extents;
            double areas[3] = {h.y * h.z, h.x * h.z, h.x * h.y};  // per axis-pair
            double total = areas[0] + areas[1] + areas[2];
            double u = rng.uniform() * total;
            int axis = u < areas[0] ? 0 : (u < areas[0] + areas[1] ? 1 : 2);
            double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            Vec3 p;
            p[axis] = sign * h[axis];
            p[(axis + 1) % 3] = rng.uniform(-h[(axis + 1) % 3], h[(axis + 1) % 3]);
            p[(axis + 2) % 3] = rng.uniform(-h[(axis + 2) % 3], h[(axis + 2) % 3]);
            return center + p;
        }
        case PrimitiveKind::Torus: {
            double u = rng.uniform(0.0, 2.0 * M_PI);
            // density over the tube angle is proportional to major + minor*cos(v)
            double v;
            for (;;) {
                v = rng.uniform(0.0, 2.0 * M_PI);
                if (rng.uniform() * (major + minor) <= major + minor * std::cos(v)) break;
            }
            double rad = major + minor * std::cos(v);
            return center + Vec3{rad * std::cos(u), rad * std::sin(u), minor * std::sin(v)};
        }
    }
    return center;
}

void SceneSpec::validate() const {
    check(!shapes.empty(), "scene: no shapes");
    check(rig.n_views >= 2, "scene: need at least 2 views");
    check(image_width >= 4 && image_height >= 4, "scene: raster too small");
    check(image_width % 2 == 0 && image_height % 2 == 0, "scene: extents must be even");
    check(noise_std >= 0.0, "scene: negative noise level");
    for (const Primitive& s : shapes) {
        Vec3 c = s.center;
        check(c.x > 0.0 && c.x < 1.0 && c.y > 0.0 && c.y < 1.0 && c.z > 0.0 && c.z < 1.0,
              "scene: shape centre outside the unit cube");
    }
}

SdfFn make_union_sdf(const std::vector<Primitive>& shapes) {
    return [shapes](const Vec3& x) {
        double d = std::numeric_limits<double>::infinity();
        for (const Primitive& s : shapes) d = std::fmin(d, s.sdf(x));
        return d;
    };
}

Vec3 sdf_normal(const SdfFn& sdf, const Vec3& x) {
    const double h = 1e-6;
    Vec3 g{sdf({x.x + h, x.y, x.z}) - sdf({x.x - h, x.y, x.z}),
           sdf({x.x, x.y + h, x.z}) - sdf({x.x, x.y - h, x.z}),
           sdf({x.x, x.y, x.z + h}) - sdf({x.x, x.y, x.z - h})};
    return normalized(g);
}

namespace {

struct Texture3d {
    Vec3 freq[3];
    double phase[3];
    double amp[3];

    static Texture3d make(uint64_t seed) {
        Rng rng(substream(seed, "texture"));
        Texture3d t;
        for (int k = 0; k < 3; ++k) {
            Vec3 dir = normalized(Vec3{rng.gauss(), rng.gauss(), rng.gauss()});
            t.freq[k] = dir * rng.uniform(14.0, 46.0);
            t.phase[k] = rng.uniform(0.0, 2.0 * M_PI);
            t.amp[k] = 0.15;
        }
        return t;
    }
    double operator()(const Vec3& x) const {
        double v = 0.5;
        for (int k = 0; k < 3; ++k) v += amp[k] * std::sin(dot(freq[k], x) + phase[k]);
        return v;
    }
};

CameraPose look_at_pose(const Vec3& center, const Vec3& target) {
    Vec3 forward = normalized(target - center);
    Vec3 up_world{0.0, 0.0, 1.0};
    Vec3 right = normalized(cross(forward, up_world));
    Vec3 down = cross(forward, right);
    CameraPose pose;
    for (int c = 0; c < 3; ++c) {
        pose.R(0, c) = right[c];
        pose.R(1, c) = down[c];
        pose.R(2, c) = forward[c];
    }
    pose.t = pose.R * (-center);
    return pose;
}

Aabb scene_bounds(const std::vector<Primitive>& shapes) {
    Aabb box;
    for (const Primitive& s : shapes) {
        double r = 0.0;
        switch (s.kind) {
            case PrimitiveKind::Sphere: r = s.radius; break;
            case PrimitiveKind::Box: r = norm(s.half_extents); break;
            case PrimitiveKind::Torus: r = s.major + s.minor; break;
        }
        box.expand(s.center - Vec3{r, r, r});
        box.expand(s.center + Vec3{r, r, r});
    }
    return box;
}

}  // namespace

Scene build_scene(const SceneSpec& spec) {
    spec.validate();
    Scene scene;
    scene.spec = spec;
    scene.gt.sdf = make_union_sdf(spec.shapes);
    const Texture3d tex = Texture3d::make(spec.texture_seed);
    const Vec3 light = normalized(Vec3{0.35, 0.25, 0.9});

    const size_t W = spec.image_width, H = spec.image_height;
    CameraIntrinsics k;
    k.width = W;
    k.height = H;
    k.fx = k.fy = (double(W) / 2.0) / std::tan(spec.rig.fov_deg * M_PI / 360.0);
    k.cx = (double(W) - 1.0) / 2.0;
    k.cy = (double(H) - 1.0) / 2.0;

    const Aabb bounds = scene_bounds(spec.shapes);
    const double max_dist = spec.rig.radius + norm(bounds.hi - bounds.lo) + 1.0;

    for (size_t v = 0; v < spec.rig.n_views; ++v) {
        double theta = 2.0 * M_PI * double(v) / double(spec.rig.n_views);
        double ce = std::cos(spec.rig.elevation), se = std::sin(spec.rig.elevation);
        Vec3 centre = spec.rig.look_at +
                      Vec3{ce * std::cos(theta), ce * std::sin(theta), se} * spec.rig.radius;
        CameraView view;
        view.intrinsics = k;
        view.pose = look_at_pose(centre, spec.rig.look_at);
        view.pose.validate();

        view.gt_depth = render_depth_from_sdf(scene.gt.sdf, view, max_dist);

        Rng noise(substream(spec.texture_seed, "noise-view-" + std::to_string(v)));
        std::vector<double> img(W * H, 0.0);
        for (size_t pix = 0; pix < W * H; ++pix) {
            double d = view.gt_depth[pix];
            double value = 0.0;
            if (d > 0.0) {
                Pixel p{double(pix % W), double(pix / W)};
                Vec3 x = view.pose.to_world(backproject(p, d, k));
                Vec3 n = sdf_normal(scene.gt.sdf, x);
                double lambert = std::fmax(dot(n, light), 0.0);
                value = tex(x) * (0.25 + 0.75 * lambert);
            }
            if (spec.noise_std > 0.0) value += spec.noise_std * noise.gauss();
            img[pix] = value;
        }
        view.image = Tensor::from({H, W, 1}, std::move(img));

        // z-depth range of the scene bounding box in this view, with margin
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (int corner = 0; corner < 8; ++corner) {
            Vec3 c{corner & 1 ? bounds.hi.x : bounds.lo.x, corner & 2 ? bounds.hi.y : bounds.lo.y,
                   corner & 4 ? bounds.hi.z : bounds.lo.z};
            double z = view.pose.to_camera(c).z;
            lo = std::fmin(lo, z);
            hi = std::fmax(hi, z);
        }
        scene.gt.d_min.push_back(std::fmax(0.05, lo * 0.97));
        scene.gt.d_max.push_back(hi * 1.03);
        scene.views.push_back(std::move(view));
    }

    scene.gt.surface = sample_surface(scene.gt, spec.shapes, 20000,
                                      substream(spec.texture_seed, "gt-surface"));
    return scene;
}

PointCloud sample_surface(const GroundTruth& gt, const std::vector<Primitive>& shapes, size_t n,
                          uint64_t seed) {
    check(n >= 1, "sample_surface: need n >= 1");
    Rng rng(seed);
    std::vector<double> cum;
    double total = 0.0;
    for (const Primitive& s : shapes) {
        total += s.area();
        cum.push_back(total);
    }
    PointCloud cloud;
    cloud.points.reserve(n);
    cloud.normals.reserve(n);
    size_t guard = 0;
    while (cloud.points.size() < n) {
        check(++guard < 1000 * n + 1000, "sample_surface: rejection did not converge");
        double u = rng.uniform() * total;
        size_t si = size_t(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        if (si >= shapes.size()) si = shapes.size() - 1;
        Vec3 p = shapes[si].sample_surface(rng);
        if (gt.sdf(p) < -1e-9) continue;  // inside another shape: not on the union surface
        cloud.points.push_back(p);
        cloud.normals.push_back(sdf_normal(gt.sdf, p));
    }
    return cloud;
}

PointCloud perturb_cloud(const PointCloud& cloud, double sigma, double dropout, uint64_t seed) {
    check(sigma >= 0.0, "perturb_cloud: sigma must be >= 0");
    check(dropout >= 0.0 && dropout < 1.0, "perturb_cloud: dropout must be in [0,1)");
    Rng rng(seed);
    PointCloud out;
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        bool keep = dropout == 0.0 || rng.uniform() >= dropout;
        Vec3 jitter{0, 0, 0};
        if (sigma > 0.0) jitter = {sigma * rng.gauss(), sigma * rng.gauss(), sigma * rng.gauss()};
        if (!keep) continue;
        out.points.push_back(cloud.points[i] + jitter);
        if (cloud.has_normals()) out.normals.push_back(cloud.normals[i]);
    }
    return out;
}

SceneSpec make_preset(const std::string& name, uint64_t seed) {
    Rng rng(substream(seed, "preset-" + name));
    SceneSpec spec;
    spec.texture_seed = seed;
    Primitive p;
    p.center = Vec3{0.5, 0.5, 0.5} + Vec3{rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03),
                                          rng.uniform(-0.03, 0.03)};
    if (name == "sphere") {
        p.kind = PrimitiveKind::Sphere;
        p.radius = 0.27 + rng.uniform(-0.03, 0.03);
    } else if (name == "box") {
        p.kind = PrimitiveKind::Box;
        double s = 0.21 + rng.uniform(-0.02, 0.02);
        p.half_extents = {s, s * rng.uniform(0.85, 1.15), s * rng.uniform(0.85, 1.15)};
    } else if (name == "torus") {
        p.kind = PrimitiveKind::Torus;
        p.major = 0.25 + rng.uniform(-0.02, 0.02);
        p.minor = 0.10 + rng.uniform(-0.01, 0.01);
    } else {
        throw std::invalid_argument("unknown scene preset: " + name);
    }
    spec.shapes.push_back(p);
    return spec;
}

}  // namespace mrio
