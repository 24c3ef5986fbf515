#include "mrio/pcso.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "mrio/metrics.hpp"
#include "mrio/rng.hpp"

namespace mrio {

namespace {

Tensor he_uniform(Rng& rng, const Shape& shape, size_t fan_in, double gain = 1.0) {
    double a = gain * std::sqrt(6.0 / double(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-a, a);
    return Tensor::param(shape, std::move(v));
}

// Small nonzero bias init: empty voxels feed exact zeros into the conv stack,
// and a zero bias would park relu pre-activations exactly on the kink.
Tensor bias_param(Rng& rng, const Shape& shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-0.01, 0.01);
    return Tensor::param(shape, std::move(v));
}

}  // namespace

OccupancyField OccupancyField::init(size_t grid, size_t feat, uint64_t seed) {
    check(grid >= 2 && grid % 2 == 0, "occupancy field: grid must be even and >= 2");
    check(feat >= 1, "occupancy field: feat must be >= 1");
    Rng rng(substream(seed, "pcso-init"));
    OccupancyField f;
    f.grid = grid;
    f.feat = feat;
    const size_t F = feat, H = 64;
    f.enc_w1 = he_uniform(rng, {3, F}, 3);
    f.enc_b1 = bias_param(rng, {F});
    f.enc_w2 = he_uniform(rng, {F, F}, F);
    f.enc_b2 = bias_param(rng, {F});
    f.agg_down_w = he_uniform(rng, {F, F, 3, 3, 3}, F * 27);
    f.agg_down_b = bias_param(rng, {F});
    f.agg_up_w = he_uniform(rng, {F, F, 3, 3, 3}, F * 27);
    f.agg_up_b = bias_param(rng, {F});
    f.dec_w1 = he_uniform(rng, {3 + F, H}, 3 + F);
    f.dec_b1 = bias_param(rng, {H});
    f.dec_w2 = he_uniform(rng, {H, H}, H);
    f.dec_b2 = bias_param(rng, {H});
    f.dec_w3 = he_uniform(rng, {H, 1}, H, 0.1);
    f.dec_b3 = bias_param(rng, {1});
    return f;
}

void OccupancyField::validate() const {
    for (const auto& [name, t] : named_params()) {
        check(t.defined(), "occupancy field: missing parameter " + name);
        for (double v : t.data())
            check(std::isfinite(v), "occupancy field: non-finite parameter " + name);
    }
}

std::vector<std::pair<std::string, Tensor>> OccupancyField::named_params() const {
    return {{"pcso.enc.w1", enc_w1},     {"pcso.enc.b1", enc_b1},
            {"pcso.enc.w2", enc_w2},     {"pcso.enc.b2", enc_b2},
            {"pcso.agg.down.w", agg_down_w}, {"pcso.agg.down.b", agg_down_b},
            {"pcso.agg.up.w", agg_up_w}, {"pcso.agg.up.b", agg_up_b},
            {"pcso.dec.w1", dec_w1},     {"pcso.dec.b1", dec_b1},
            {"pcso.dec.w2", dec_w2},     {"pcso.dec.b2", dec_b2},
            {"pcso.dec.w3", dec_w3},     {"pcso.dec.b3", dec_b3}};
}

std::vector<Tensor> OccupancyField::params() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

std::vector<Tensor> OccupancyField::last_two_groups() const {
    return {dec_w2, dec_b2, dec_w3, dec_b3};
}

Tensor encode_points(const PointCloud& cloud, const OccupancyField& field) {
    domain_check(!cloud.points.empty(), "encode_points: empty cloud");
    const size_t n = cloud.points.size();
    std::vector<double> coords(n * 3);
    for (size_t i = 0; i < n; ++i) {
        coords[3 * i] = cloud.points[i].x;
        coords[3 * i + 1] = cloud.points[i].y;
        coords[3 * i + 2] = cloud.points[i].z;
    }
    Tensor x = Tensor::from({n, 3}, std::move(coords));
    Tensor h = relu(add(matmul(x, field.enc_w1), field.enc_b1));
    return add(matmul(h, field.enc_w2), field.enc_b2);
}

Tensor pool_points(const Tensor& point_features, const PointCloud& cloud, size_t grid) {
    std::vector<double> pts(cloud.points.size() * 3);
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        pts[3 * i] = cloud.points[i].x;
        pts[3 * i + 1] = cloud.points[i].y;
        pts[3 * i + 2] = cloud.points[i].z;
    }
    return voxel_pool(pts, point_features, grid);
}

Tensor aggregate_volume(const Tensor& pooled, const OccupancyField& field) {
    Tensor down = relu(conv3d3x3(pooled, field.agg_down_w, field.agg_down_b, 2));
    Tensor up = conv3d3x3(upsample2_3d(down), field.agg_up_w, field.agg_up_b, 1);
    return add(pooled, up);
}

Tensor compute_volume(const OccupancyField& field, const PointCloud& cloud) {
    return aggregate_volume(pool_points(encode_points(cloud, field), cloud, field.grid), field);
}

Tensor query_feature(const Tensor& volume, const std::vector<double>& points_xyz, size_t grid) {
    check(points_xyz.size() % 3 == 0, "query_feature: xyz triples expected");
    std::vector<double> lattice(points_xyz.size());
    for (size_t i = 0; i < points_xyz.size(); ++i)
        lattice[i] = points_xyz[i] * double(grid) - 0.5;  // voxel centres at (i+0.5)/G
    return trilinear_sample(volume, lattice);
}

Tensor decode_logits(const OccupancyField& field, const Tensor& volume,
                     const std::vector<double>& points_xyz) {
    const size_t m = points_xyz.size() / 3;
    Tensor fq = query_feature(volume, points_xyz, field.grid);
    Tensor q = Tensor::from({m, 3}, std::vector<double>(points_xyz));
    Tensor input = concat({q, fq}, 1);
    Tensor h1 = relu(add(matmul(input, field.dec_w1), field.dec_b1));
    Tensor h2 = relu(add(matmul(h1, field.dec_w2), field.dec_b2));
    Tensor logits = add(matmul(h2, field.dec_w3), field.dec_b3);
    return reshape(logits, {m});
}

Tensor decode_occupancy(const OccupancyField& field, const Tensor& volume,
                        const std::vector<double>& points_xyz) {
    return sigmoid(decode_logits(field, volume, points_xyz));
}

Tensor decode_unsigned(const OccupancyField& field, const Tensor& volume,
                       const std::vector<double>& points_xyz) {
    return sigmoid(abs(decode_logits(field, volume, points_xyz)));
}

FieldFn make_field_fn(const OccupancyField& field, const Tensor& volume) {
    return [&field, volume](const std::vector<Vec3>& pts, std::vector<double>& out) {
        NoGrad ng;
        std::vector<double> xyz(pts.size() * 3);
        for (size_t i = 0; i < pts.size(); ++i) {
            xyz[3 * i] = pts[i].x;
            xyz[3 * i + 1] = pts[i].y;
            xyz[3 * i + 2] = pts[i].z;
        }
        out = decode_occupancy(field, volume, xyz).data();
    };
}

QueryBatch sample_targets(const PointCloud& cloud, size_t m_surface, size_t m_volume,
                          double reject_radius, uint64_t seed) {
    domain_check(!cloud.points.empty(), "sample_targets: empty cloud");
    Rng rng(seed);
    QueryBatch batch;
    batch.n_surface = m_surface;
    batch.n_volume = m_volume;
    for (size_t i = 0; i < m_surface; ++i) {
        const Vec3& p = cloud.points[rng.below(cloud.points.size())];
        batch.points.insert(batch.points.end(), {p.x, p.y, p.z});
        batch.targets.push_back(0.5);
    }
    KdTree tree(cloud.points);
    const double r2 = reject_radius * reject_radius;
    size_t guard = 0;
    for (size_t i = 0; i < m_volume;) {
        check(++guard < 1000 * (m_volume + 1),
              "sample_targets: rejection radius leaves no free volume");
        Vec3 q{rng.uniform(), rng.uniform(), rng.uniform()};
        if (reject_radius > 0.0 && tree.nearest(q).dist2 < r2) continue;
        batch.points.insert(batch.points.end(), {q.x, q.y, q.z});
        batch.targets.push_back(1.0);
        ++i;
    }
    return batch;
}

Tensor smooth_surrogate(const OccupancyField& field, const Tensor& volume,
                        const std::vector<Vec3>& centers, double h) {
    check(!centers.empty(), "smooth_surrogate: no stencil centres");
    const size_t k = centers.size();
    std::vector<double> xyz;
    xyz.reserve(k * 7 * 3);
    auto push = [&xyz](const Vec3& p) { xyz.insert(xyz.end(), {p.x, p.y, p.z}); };
    for (const Vec3& c : centers) {
        push(c);
        push(c + Vec3{h, 0, 0});
        push(c - Vec3{h, 0, 0});
        push(c + Vec3{0, h, 0});
        push(c - Vec3{0, h, 0});
        push(c + Vec3{0, 0, h});
        push(c - Vec3{0, 0, h});
    }
    Tensor occ = reshape(decode_occupancy(field, volume, xyz), {k, 7});
    Tensor centre = slice(occ, {0, 0}, {k, 1});
    Tensor acc;
    for (int axis = 0; axis < 3; ++axis) {
        Tensor plus = slice(occ, {0, size_t(1 + 2 * axis)}, {k, 1});
        Tensor minus = slice(occ, {0, size_t(2 + 2 * axis)}, {k, 1});
        Tensor second = sub(add(plus, minus), mul(Tensor::scalar(2.0), centre));
        Tensor sq = sum(mul(second, second));
        acc = axis == 0 ? sq : add(acc, sq);
    }
    return mul(Tensor::scalar(1.0 / double(k)), acc);
}

std::string TrainLogEntry::json_line() const {
    nlohmann::json j = nlohmann::json::parse(report.json_line());
    j["L_S_mesh"] = smooth_mesh;
    return j.dump();
}

FinetuneResult sign_agnostic_finetune(OccupancyField& field, const PointCloud& cloud,
                                      const FinetuneSchedule& schedule,
                                      MultiTaskWeights& weights, double l_f_constant) {
    FinetuneResult result;
    if (schedule.iterations == 0) return result;
    domain_check(!cloud.points.empty(), "sign_agnostic_finetune: empty cloud");

    OptimizerState opt;
    opt.kind = OptKind::Adam;
    opt.learning_rate = schedule.lr;
    opt.decay_factor = schedule.decay_factor;
    opt.decay_interval = schedule.decay_interval;

    std::vector<Tensor> trainable =
        schedule.last_two_only ? field.last_two_groups() : field.params();
    for (const Tensor& s : weights.trainable()) trainable.push_back(s);

    const double reject_radius = schedule.reject_radius_cells / double(field.grid);
    const double stencil_h = 1.0 / double(field.grid);

    TriangleMesh mesh;
    double smooth_scale = 0.0;
    double smooth_mesh_value = 0.0;

    auto refresh_mesh = [&]() {
        NoGrad ng;
        Tensor volume = compute_volume(field, cloud);
        mesh = extract_mesh(make_field_fn(field, volume), schedule.mc_coarse, schedule.mc_target);
        smooth_mesh_value = mesh.empty() ? 0.0 : smooth_loss_value(mesh);
        if (mesh.empty()) {
            smooth_scale = 0.0;
            return;
        }
        Rng rng(substream(schedule.seed, "stencil-scale"));
        std::vector<Vec3> centers;
        for (size_t i = 0; i < std::min<size_t>(schedule.smooth_stencils, mesh.vertices.size());
             ++i)
            centers.push_back(mesh.vertices[rng.below(mesh.vertices.size())]);
        double raw = smooth_surrogate(field, volume, centers, stencil_h).value();
        smooth_scale = raw > 1e-12 ? smooth_mesh_value / raw : 0.0;
    };

    for (size_t it = 0; it < schedule.iterations; ++it) {
        if (it % schedule.extract_every == 0) refresh_mesh();

        QueryBatch batch =
            sample_targets(cloud, schedule.m_surface, schedule.m_volume, reject_radius,
                           substream(schedule.seed, "queries-" + std::to_string(it)));

        Tape tape;
        for (const Tensor& p : trainable) tape.touch(p);
        Tensor volume = compute_volume(field, cloud);
        Tensor pred = decode_unsigned(field, volume, batch.points);
        Tensor l_b = bce_occupancy(pred, Tensor::from({batch.targets.size()},
                                                      std::vector<double>(batch.targets)));

        Tensor l_s;
        if (!mesh.empty() && smooth_scale > 0.0 && schedule.smooth_stencils > 0) {
            Rng rng(substream(schedule.seed, "stencil-" + std::to_string(it)));
            std::vector<Vec3> centers;
            size_t count = std::min<size_t>(schedule.smooth_stencils, mesh.vertices.size());
            for (size_t i = 0; i < count; ++i)
                centers.push_back(mesh.vertices[rng.below(mesh.vertices.size())]);
            l_s = mul(Tensor::scalar(smooth_scale),
                      smooth_surrogate(field, volume, centers, stencil_h));
        } else {
            l_s = Tensor::scalar(0.0);
        }

        TrainLogEntry entry;
        entry.report.step = (long long)(it);
        Tensor total = multitask_total(Tensor::scalar(l_f_constant), l_b, l_s, weights,
                                       &entry.report);
        entry.smooth_mesh = smooth_mesh_value;
        auto grads = backward(tape, total);
        optimizer_step(opt, trainable, grads);
        result.log.push_back(entry);
        if (it == 0) result.initial_loss = entry.report.total;
        result.final_loss = entry.report.total;
    }
    return result;
}

void pretrain_field(OccupancyField& field, const std::vector<SceneSpec>& shapes,
                    const PretrainSchedule& schedule) {
    check(!shapes.empty(), "pretrain_field: no shapes");
    struct ShapeData {
        PointCloud cloud;
        SdfFn sdf;
    };
    std::vector<ShapeData> data;
    for (size_t s = 0; s < shapes.size(); ++s) {
        ShapeData d;
        d.sdf = make_union_sdf(shapes[s].shapes);
        GroundTruth gt;
        gt.sdf = d.sdf;
        d.cloud = sample_surface(gt, shapes[s].shapes, schedule.cloud_points,
                                 substream(schedule.seed, "pretrain-cloud-" + std::to_string(s)));
        data.push_back(std::move(d));
    }

    OptimizerState opt;
    opt.kind = OptKind::Adam;
    opt.learning_rate = schedule.lr;
    std::vector<Tensor> trainable = field.params();

    for (size_t it = 0; it < schedule.iterations; ++it) {
        const ShapeData& d = data[it % data.size()];
        Rng rng(substream(schedule.seed, "pretrain-q-" + std::to_string(it)));
        std::vector<double> xyz(schedule.queries_per_iter * 3);
        std::vector<double> labels(schedule.queries_per_iter);
        for (size_t i = 0; i < schedule.queries_per_iter; ++i) {
            Vec3 q{rng.uniform(), rng.uniform(), rng.uniform()};
            xyz[3 * i] = q.x;
            xyz[3 * i + 1] = q.y;
            xyz[3 * i + 2] = q.z;
            labels[i] = d.sdf(q) < 0.0 ? 1.0 : 0.0;
        }
        Tape tape;
        for (const Tensor& p : trainable) tape.touch(p);
        Tensor volume = compute_volume(field, d.cloud);
        Tensor pred = decode_occupancy(field, volume, xyz);
        Tensor loss = bce_occupancy(pred, Tensor::from({labels.size()}, std::move(labels)));
        auto grads = backward(tape, loss);
        optimizer_step(opt, trainable, grads);
    }
}

}  // namespace mrio
