#include "mrio/mvdm.hpp"

#include <algorithm>
#include <cmath>

#include "mrio/rng.hpp"

namespace mrio {

namespace {

Tensor he_uniform(Rng& rng, const Shape& shape, size_t fan_in, double gain = 1.0) {
    double a = gain * std::sqrt(6.0 / double(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-a, a);
    return Tensor::param(shape, std::move(v));
}

Tensor bias_param(Rng& rng, const Shape& shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-0.01, 0.01);
    return Tensor::param(shape, std::move(v));
}

Tensor identity_param(size_t f) {
    std::vector<double> v(f * f, 0.0);
    for (size_t i = 0; i < f; ++i) v[i * f + i] = 1.0;
    return Tensor::param({f, f}, std::move(v));
}

}  // namespace

MvdmParams MvdmParams::init(const MvdmConfig& config, uint64_t seed, size_t image_channels) {
    Rng rng(substream(seed, "mvdm-init"));
    MvdmParams p;
    p.config = config;
    const size_t Ff = config.fine_feat, Fc = config.coarse_feat, C = config.reg_channels;
    p.conv1_w = he_uniform(rng, {Ff, image_channels, 3, 3}, image_channels * 9);
    p.conv1_b = bias_param(rng, {Ff});
    p.conv2_w = he_uniform(rng, {Fc, Ff, 3, 3}, Ff * 9);
    p.conv2_b = bias_param(rng, {Fc});
    p.attn_q = identity_param(Fc);
    p.attn_k = identity_param(Fc);
    p.attn_v = identity_param(Fc);
    p.attn_out = identity_param(Fc);
    p.path_w = he_uniform(rng, {Fc, Ff}, Fc, 0.5);
    p.path_b = bias_param(rng, {Ff});
    p.reg1_w = he_uniform(rng, {C, 1, 3, 3, 3}, 27);
    p.reg1_b = bias_param(rng, {C});
    p.reg2_w = he_uniform(rng, {C, C, 3, 3, 3}, C * 27);
    p.reg2_b = bias_param(rng, {C});
    p.reg3_w = he_uniform(rng, {1, C, 3, 3, 3}, C * 27, 0.5);
    p.reg3_b = bias_param(rng, {1});
    return p;
}

std::vector<std::pair<std::string, Tensor>> MvdmParams::named_params() const {
    return {{"mvdm.conv1.w", conv1_w}, {"mvdm.conv1.b", conv1_b},
            {"mvdm.conv2.w", conv2_w}, {"mvdm.conv2.b", conv2_b},
            {"mvdm.attn.q", attn_q},   {"mvdm.attn.k", attn_k},
            {"mvdm.attn.v", attn_v},   {"mvdm.attn.out", attn_out},
            {"mvdm.path.w", path_w},   {"mvdm.path.b", path_b},
            {"mvdm.reg1.w", reg1_w},   {"mvdm.reg1.b", reg1_b},
            {"mvdm.reg2.w", reg2_w},   {"mvdm.reg2.b", reg2_b},
            {"mvdm.reg3.w", reg3_w},   {"mvdm.reg3.b", reg3_b}};
}

std::vector<Tensor> MvdmParams::params() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

std::vector<Tensor> MvdmParams::regularizer_params() const {
    return {reg1_w, reg1_b, reg2_w, reg2_b, reg3_w, reg3_b};
}

std::vector<Tensor> MvdmParams::last_two_groups() const {
    return {reg2_w, reg2_b, reg3_w, reg3_b};
}

FeaturePyramid extract_features(const Tensor& image, const MvdmParams& params) {
    check(image.ndim() == 3, "extract_features: image must be (H,W,C)");
    check(image.shape()[0] % 2 == 0 && image.shape()[1] % 2 == 0,
          "extract_features: extents must be even");
    FeaturePyramid pyr;
    pyr.fine = relu(conv2d3x3(image, params.conv1_w, params.conv1_b, 1));
    pyr.coarse = relu(conv2d3x3(pyr.fine, params.conv2_w, params.conv2_b, 2));
    return pyr;
}

Tensor positional_encoding(size_t h, size_t w, size_t f) {
    check(f % 2 == 0, "positional_encoding: F must be even");
    std::vector<double> v(h * w * f);
    const size_t half = f / 2;
    auto fill = [&](size_t offset, double coord, size_t base) {
        for (size_t c = 0; c < half; ++c) {
            double freq = std::pow(10000.0, -double(2 * (c / 2)) / double(half));
            double arg = coord * freq;
            v[base + offset + c] = (c % 2 == 0) ? std::sin(arg) : std::cos(arg);
        }
    };
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
            size_t base = (y * w + x) * f;
            fill(0, double(x), base);
            fill(half, double(y), base);
        }
    return Tensor::from({h, w, f}, std::move(v));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool scale) {
    check(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2, "attention: rank-2 inputs expected");
    check(q.shape()[1] == k.shape()[1], "attention: Q/K dimension mismatch");
    check(k.shape()[0] == v.shape()[0], "attention: K/V row mismatch");
    Tensor logits = matmul(q, k, /*transpose_b=*/true);
    if (scale) logits = mul(logits, Tensor::scalar(1.0 / std::sqrt(double(q.shape()[1]))));
    return matmul(softmax_axis(logits, 1), v);
}

namespace {

Tensor flatten_hw(const Tensor& x) {
    return reshape(x, {x.shape()[0] * x.shape()[1], x.shape()[2]});
}

Tensor unflatten_hw(const Tensor& x, size_t h, size_t w) {
    return reshape(x, {h, w, x.shape()[1]});
}

// intra-attention with a residual so the image keeps its own signal
Tensor intra_pass(const Tensor& coarse, const MvdmParams& p) {
    const size_t h = coarse.shape()[0], w = coarse.shape()[1], f = coarse.shape()[2];
    Tensor withpos = add(coarse, positional_encoding(h, w, f));
    Tensor x = flatten_hw(withpos);
    Tensor att = attention(matmul(x, p.attn_q), matmul(x, p.attn_k), matmul(x, p.attn_v),
                           p.config.attention_scale);
    return unflatten_hw(add(x, matmul(att, p.attn_out)), h, w);
}

Tensor pathway_to_fine(const Tensor& fine, const Tensor& coarse_t, const MvdmParams& p) {
    Tensor up = upsample2_2d(coarse_t);
    const size_t h = up.shape()[0], w = up.shape()[1];
    Tensor proj = add(matmul(flatten_hw(up), p.path_w), p.path_b);
    return add(fine, unflatten_hw(proj, h, w));
}

}  // namespace

TransformedFeatures fmt_transform(const FeaturePyramid& ref,
                                  const std::vector<FeaturePyramid>& srcs,
                                  const MvdmParams& params) {
    check(!srcs.empty(), "fmt_transform: need at least one source");
    TransformedFeatures out;
    Tensor ref_coarse = intra_pass(ref.coarse, params);
    out.ref.coarse = ref_coarse;
    out.ref.fine = pathway_to_fine(ref.fine, ref_coarse, params);

    const size_t h = ref.coarse.shape()[0], w = ref.coarse.shape()[1];
    Tensor ref_flat = flatten_hw(ref_coarse);
    Tensor ref_k = matmul(ref_flat, params.attn_k);
    for (const FeaturePyramid& src : srcs) {
        Tensor src_coarse = intra_pass(src.coarse, params);
        // unidirectional inter-attention: the source queries the reference;
        // values are the reference features themselves
        Tensor q = matmul(flatten_hw(src_coarse), params.attn_q);
        Tensor inter = unflatten_hw(attention(q, ref_k, ref_flat, params.config.attention_scale),
                                    h, w);
        FeaturePyramid t;
        t.coarse = inter;
        t.fine = pathway_to_fine(src.fine, inter, params);
        out.srcs.push_back(std::move(t));
    }
    return out;
}

Tensor correlation_volume(const Tensor& ref_feat, const std::vector<Tensor>& warped) {
    check(!warped.empty(), "correlation_volume: need at least one warped source");
    check(ref_feat.ndim() == 3, "correlation_volume: ref must be (H,W,F)");
    Tensor num, den;
    for (const Tensor& wf : warped) {
        check(wf.ndim() == 4, "correlation_volume: warped must be (D,H,W,F)");
        check(wf.shape()[1] == ref_feat.shape()[0] && wf.shape()[2] == ref_feat.shape()[1] &&
                  wf.shape()[3] == ref_feat.shape()[2],
              "correlation_volume: shape mismatch");
        Tensor h_i = sum_axis(mul(wf, ref_feat), 3);      // (D,H,W)
        Tensor w_i = relu(max_axis(h_i, 0));              // (H,W)
        Tensor contrib = mul(h_i, w_i);
        if (!num.defined()) {
            num = contrib;
            den = w_i;
        } else {
            num = add(num, contrib);
            den = add(den, w_i);
        }
    }
    Tensor safe_den = add(den, Tensor::scalar(1e-30));
    return mul(num, power(safe_den, -1.0));
}

DepthProbabilityVolume depth_probability(const Tensor& volume, const MvdmParams& params,
                                         const DepthHypothesisSet& hypotheses,
                                         std::vector<uint8_t> valid) {
    check(volume.ndim() == 3, "depth_probability: volume must be (D,H,W)");
    const size_t d = volume.shape()[0], h = volume.shape()[1], w = volume.shape()[2];
    check(hypotheses.count == d, "depth_probability: hypothesis count mismatch");
    Tensor x = reshape(volume, {d, h, w, 1});
    x = relu(conv3d3x3(x, params.reg1_w, params.reg1_b, 1));
    x = relu(conv3d3x3(x, params.reg2_w, params.reg2_b, 1));
    x = conv3d3x3(x, params.reg3_w, params.reg3_b, 1);
    DepthProbabilityVolume out;
    out.probabilities = softmax_axis(reshape(x, {d, h, w}), 0);
    out.hypotheses = hypotheses;
    out.valid = valid.empty() ? std::vector<uint8_t>(h * w, 1) : std::move(valid);
    check(out.valid.size() == h * w, "depth_probability: valid mask extent mismatch");
    return out;
}

namespace {

// One-hot selector over (D,H,W) for each valid pixel's ground-truth bin, plus
// the valid-pixel mask. Pixels outside coverage, without gt or whose depth
// falls outside the hypothesis range are dropped from the set.
struct FocalSelection {
    Tensor one_hot;   // (D,H,W)
    Tensor mask;      // (H,W): 1 on valid pixels
    Tensor inv_mask;  // (H,W): 1 - mask
    size_t n_valid = 0;
};

FocalSelection focal_selection(const DepthProbabilityVolume& p,
                               const std::vector<double>& gt_depth) {
    const Shape& s = p.probabilities.shape();
    const size_t d = s[0], h = s[1], w = s[2];
    check(gt_depth.size() == h * w, "focal_loss: gt depth extent mismatch");
    FocalSelection sel;
    std::vector<double> one_hot(d * h * w, 0.0), mask(h * w, 0.0), inv(h * w, 1.0);
    for (size_t pix = 0; pix < h * w; ++pix) {
        if (!p.valid[pix] || gt_depth[pix] <= 0.0) continue;
        long bin = p.hypotheses.nearest_index(pix, gt_depth[pix]);
        if (bin < 0) continue;
        one_hot[size_t(bin) * h * w + pix] = 1.0;
        mask[pix] = 1.0;
        inv[pix] = 0.0;
        ++sel.n_valid;
    }
    sel.one_hot = Tensor::from({d, h, w}, std::move(one_hot));
    sel.mask = Tensor::from({h, w}, std::move(mask));
    sel.inv_mask = Tensor::from({h, w}, std::move(inv));
    return sel;
}

Tensor masked_focal(const DepthProbabilityVolume& p, const FocalSelection& sel, double gamma,
                    bool with_modulation) {
    domain_check(sel.n_valid > 0, "focal_loss: no valid pixels");
    // P at the gt bin; invalid pixels read exactly 1 so their term is zero
    Tensor p_sel = add(sum_axis(mul(p.probabilities, sel.one_hot), 0), sel.inv_mask);
    Tensor neg_log = mul(Tensor::scalar(-1.0), log(p_sel));
    Tensor term = with_modulation
                      ? mul(power(sub(Tensor::scalar(1.0), p_sel), gamma), neg_log)
                      : neg_log;
    return mul(Tensor::scalar(1.0 / double(sel.n_valid)), sum(term));
}

}  // namespace

Tensor focal_loss(const DepthProbabilityVolume& p, const std::vector<double>& gt_depth,
                  double gamma) {
    check(gamma >= 0.0, "focal_loss: gamma must be >= 0");
    FocalSelection sel = focal_selection(p, gt_depth);
    return masked_focal(p, sel, gamma, true);
}

Tensor cross_entropy_loss(const DepthProbabilityVolume& p, const std::vector<double>& gt_depth) {
    FocalSelection sel = focal_selection(p, gt_depth);
    return masked_focal(p, sel, 0.0, false);
}

DepthMap depth_from_probability(const DepthProbabilityVolume& p, size_t window) {
    const Shape& s = p.probabilities.shape();
    const size_t d = s[0], hw = s[1] * s[2];
    DepthMap map;
    map.depth.assign(hw, 0.0);
    map.confidence.assign(hw, 0.0);
    const auto& prob = p.probabilities.data();
    for (size_t pix = 0; pix < hw; ++pix) {
        if (!p.valid[pix]) continue;
        size_t best = 0;
        double best_p = prob[pix];
        for (size_t i = 1; i < d; ++i) {
            double v = prob[i * hw + pix];
            if (v > best_p) {
                best_p = v;
                best = i;
            }
        }
        size_t lo = best >= window ? best - window : 0;
        size_t hi = std::min(d - 1, best + window);
        double wsum = 0.0, dsum = 0.0;
        for (size_t i = lo; i <= hi; ++i) {
            double v = prob[i * hw + pix];
            wsum += v;
            dsum += v * p.hypotheses.depth_at(pix, i);
        }
        map.depth[pix] = wsum > 0.0 ? dsum / wsum : p.hypotheses.depth_at(pix, best);
        map.confidence[pix] = best_p;
    }
    return map;
}

PointCloud fuse_depth_maps(const std::vector<DepthMap>& maps,
                           const std::vector<CameraView>& views,
                           const FusionThresholds& thresholds) {
    check(views.size() >= 2, "fuse_depth_maps: need at least 2 views");
    check(maps.size() == views.size(), "fuse_depth_maps: map/view count mismatch");
    PointCloud cloud;
    for (size_t r = 0; r < views.size(); ++r) {
        const CameraView& ref = views[r];
        const size_t w = ref.intrinsics.width, h = ref.intrinsics.height;
        check(maps[r].depth.size() == w * h, "fuse_depth_maps: map extent mismatch");
        for (size_t pix = 0; pix < w * h; ++pix) {
            double depth = maps[r].depth[pix];
            if (depth <= 0.0 || maps[r].confidence[pix] < thresholds.min_confidence) continue;
            Pixel p{double(pix % w), double(pix / w)};
            Vec3 xw = ref.pose.to_world(backproject(p, depth, ref.intrinsics));
            size_t consistent = 0;
            for (size_t s = 0; s < views.size() && consistent < thresholds.min_consistent_views;
                 ++s) {
                if (s == r) continue;
                const CameraView& src = views[s];
                Vec3 xs = src.pose.to_camera(xw);
                if (xs.z <= 0.0) continue;
                Pixel ps = project(xs, src.intrinsics);
                long sx = std::lround(ps.x), sy = std::lround(ps.y);
                if (sx < 0 || sy < 0 || sx >= long(src.intrinsics.width) ||
                    sy >= long(src.intrinsics.height))
                    continue;
                double ds = maps[s].depth[size_t(sy) * src.intrinsics.width + size_t(sx)];
                if (ds <= 0.0) continue;
                Vec3 xs_back = src.pose.to_world(
                    backproject({double(sx), double(sy)}, ds, src.intrinsics));
                Vec3 xr_cam = ref.pose.to_camera(xs_back);
                if (xr_cam.z <= 0.0) continue;
                Pixel pr = project(xr_cam, ref.intrinsics);
                double pix_err = std::hypot(pr.x - p.x, pr.y - p.y);
                double rel_err = std::fabs(xr_cam.z - depth) / depth;
                if (pix_err <= thresholds.max_pixel_error &&
                    rel_err <= thresholds.max_relative_depth_error)
                    ++consistent;
            }
            if (consistent < thresholds.min_consistent_views) continue;

            // normal from depth-map gradients, oriented toward the camera
            auto world_at = [&](long x, long y) -> Vec3 {
                double d = maps[r].depth[size_t(y) * w + size_t(x)];
                return ref.pose.to_world(backproject({double(x), double(y)}, d, ref.intrinsics));
            };
            long x = long(pix % w), y = long(pix / w);
            Vec3 normal{0, 0, 0};
            auto depth_ok = [&](long xx, long yy) {
                if (xx < 0 || yy < 0 || xx >= long(w) || yy >= long(h)) return false;
                double dn = maps[r].depth[size_t(yy) * w + size_t(xx)];
                // depth discontinuities (silhouettes) poison the gradient
                return dn > 0.0 && std::fabs(dn - depth) / depth < 0.05;
            };
            if (depth_ok(x - 1, y) && depth_ok(x + 1, y) && depth_ok(x, y - 1) &&
                depth_ok(x, y + 1)) {
                Vec3 du = world_at(x + 1, y) - world_at(x - 1, y);
                Vec3 dv = world_at(x, y + 1) - world_at(x, y - 1);
                normal = normalized(cross(dv, du));
            }
            if (norm(normal) < 0.5) normal = normalized(ref.pose.center() - xw);
            if (dot(normal, ref.pose.center() - xw) < 0.0) normal = -normal;
            cloud.points.push_back(xw);
            cloud.normals.push_back(normal);
        }
    }
    return cloud;
}

namespace {

double bilinear_image(const Tensor& image, double x, double y) {
    const size_t h = image.shape()[0], w = image.shape()[1];
    double xc = std::min(std::max(x, 0.0), double(w - 1));
    double yc = std::min(std::max(y, 0.0), double(h - 1));
    size_t x0 = size_t(std::min(double(w - 2), std::floor(xc)));
    size_t y0 = size_t(std::min(double(h - 2), std::floor(yc)));
    double fx = xc - double(x0), fy = yc - double(y0);
    auto at = [&](size_t yy, size_t xx) { return image.at((yy * w + xx) * image.shape()[2]); };
    return (1 - fx) * (1 - fy) * at(y0, x0) + fx * (1 - fy) * at(y0, x0 + 1) +
           (1 - fx) * fy * at(y0 + 1, x0) + fx * fy * at(y0 + 1, x0 + 1);
}

}  // namespace

Tensor photo_consistency_loss(const TriangleMesh& mesh, const std::vector<CameraView>& views,
                              const std::vector<std::pair<size_t, size_t>>& pairs,
                              size_t n_samples, uint64_t seed, PhotoConsistencyStats* stats) {
    domain_check(!mesh.empty(), "photo_consistency_loss: empty mesh");
    for (const auto& [i, j] : pairs)
        check(i < views.size() && j < views.size(), "photo_consistency_loss: bad view pair");

    PointCloud samples = sample_mesh_surface(mesh, n_samples, seed);
    Bvh bvh(mesh);
    const double area = mesh.surface_area();
    const int patch = 2;  // 5x5

    double loss = 0.0, ncc_sum = 0.0;
    size_t used = 0;

    for (size_t si = 0; si < samples.size(); ++si) {
        const Vec3& x = samples.points[si];
        const Vec3& n = samples.normals[si];
        for (const auto& [vi, vj] : pairs) {
            const CameraView& ci = views[vi];
            const CameraView& cj = views[vj];
            const Vec3 center_i = ci.pose.center();
            const Vec3 center_j = cj.pose.center();
            Vec3 di = normalized(x - center_i);
            Vec3 dj = normalized(x - center_j);
            double facing = dot(n, di);
            if (facing >= 0.0 || dot(n, dj) >= 0.0) continue;  // back-facing somewhere

            Vec3 xi_cam = ci.pose.to_camera(x);
            Vec3 xj_cam = cj.pose.to_camera(x);
            if (xi_cam.z <= 0.0 || xj_cam.z <= 0.0) continue;
            Pixel pi = project(xi_cam, ci.intrinsics);
            Pixel pj = project(xj_cam, cj.intrinsics);
            const double margin = patch + 1.0;
            if (pi.x < margin || pi.y < margin || pi.x > double(ci.intrinsics.width) - margin ||
                pi.y > double(ci.intrinsics.height) - margin)
                continue;
            if (pj.x < 1.0 || pj.y < 1.0 || pj.x > double(cj.intrinsics.width) - 2.0 ||
                pj.y > double(cj.intrinsics.height) - 2.0)
                continue;

            // occlusion: the sample must be the first hit from both cameras
            double ti = norm(x - center_i);
            Bvh::Hit hit_i = bvh.raycast(center_i, di, ti * 2.0);
            if (!hit_i.hit || std::fabs(hit_i.t - ti) > 1e-6 * ti + 1e-9) continue;
            double tj = norm(x - center_j);
            Bvh::Hit hit_j = bvh.raycast(center_j, dj, tj * 2.0);
            if (!hit_j.hit || std::fabs(hit_j.t - tj) > 1e-6 * tj + 1e-9) continue;

            // 5x5 patch: reproject every reference pixel through the surface
            std::vector<double> a, b;
            a.reserve(25);
            b.reserve(25);
            for (int dy = -patch; dy <= patch; ++dy)
                for (int dx = -patch; dx <= patch; ++dx) {
                    Pixel u{pi.x + dx, pi.y + dy};
                    Vec3 dir = normalized(ci.pose.to_world(
                                              backproject(u, 1.0, ci.intrinsics)) -
                                          center_i);
                    Bvh::Hit hit = bvh.raycast(center_i, dir, ti * 4.0);
                    if (!hit.hit) continue;
                    Vec3 y_cam = cj.pose.to_camera(hit.point);
                    if (y_cam.z <= 0.0) continue;
                    Pixel q = project(y_cam, cj.intrinsics);
                    if (q.x < 0.0 || q.y < 0.0 || q.x > double(cj.intrinsics.width - 1) ||
                        q.y > double(cj.intrinsics.height - 1))
                        continue;
                    a.push_back(bilinear_image(ci.image, u.x, u.y));
                    b.push_back(bilinear_image(cj.image, q.x, q.y));
                }
            if (a.size() < 15) continue;

            double ma = 0.0, mb = 0.0;
            for (size_t k = 0; k < a.size(); ++k) {
                ma += a[k];
                mb += b[k];
            }
            ma /= double(a.size());
            mb /= double(a.size());
            double cov = 0.0, va = 0.0, vb = 0.0;
            for (size_t k = 0; k < a.size(); ++k) {
                cov += (a[k] - ma) * (b[k] - mb);
                va += (a[k] - ma) * (a[k] - ma);
                vb += (b[k] - mb) * (b[k] - mb);
            }
            double ncc = cov / std::sqrt(va * vb + 1e-12);

            // facing < 0 here, so consistent patches push the loss down
            loss += ncc * facing / (xi_cam.z * xi_cam.z * xi_cam.z);
            ncc_sum += ncc;
            ++used;
        }
    }
    if (stats) {
        stats->samples_used = used;
        stats->mean_ncc = used ? ncc_sum / double(used) : 0.0;
    }
    double scale = n_samples > 0 ? area / double(n_samples) : 0.0;
    return Tensor::scalar(loss * scale);
}

}  // namespace mrio
