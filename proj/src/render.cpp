#include "mirf/render.hpp"

#include <algorithm>
#include <cmath>

#include "mirf/kernels.hpp"
#include "mirf/rng.hpp"

namespace mirf {

RaySamples make_samples(std::span<const Ray> rays, int n_samples, uint64_t seed) {
    if (n_samples < 2) throw Error("render: need n_samples >= 2");
    RaySamples s;
    s.n_rays = static_cast<int64_t>(rays.size());
    s.n_samples = n_samples;
    const size_t total = rays.size() * static_cast<size_t>(n_samples);
    s.t.resize(total);
    s.delta.resize(total);
    s.pts.resize(total * 3);
    s.dirs.resize(total * 3);
    for (size_t r = 0; r < rays.size(); ++r) {
        const Ray& ray = rays[r];
        Rng rng(mix_seed(seed, r));
        const double span = (ray.far - ray.near) / n_samples;
        for (int k = 0; k < n_samples; ++k)
            s.t[r * n_samples + k] = ray.near + (k + rng.uniform()) * span;
        for (int k = 0; k < n_samples; ++k) {
            const size_t i = r * n_samples + k;
            s.delta[i] = (k + 1 < n_samples ? s.t[i + 1] : ray.far) - s.t[i];
            const Vec3 p = ray.origin + ray.dir * s.t[i];
            s.pts[i * 3 + 0] = p.x;
            s.pts[i * 3 + 1] = p.y;
            s.pts[i * 3 + 2] = p.z;
            s.dirs[i * 3 + 0] = ray.dir.x;
            s.dirs[i * 3 + 1] = ray.dir.y;
            s.dirs[i * 3 + 2] = ray.dir.z;
        }
    }
    return s;
}

void composite_weights(const double* sigma, const double* delta, int64_t k, double* w) {
    double acc = 0.0;
    for (int64_t i = 0; i < k; ++i) {
        const double sd = sigma[i] * delta[i];
        w[i] = std::exp(-acc) * (1.0 - std::exp(-sd));
        acc += sd;
    }
}

namespace {

RenderOutput render_from_samples(const FieldParams& params, const RaySamples& s) {
    const int K = static_cast<int>(s.n_samples);
    FieldEval ev = field_forward(params, s.pts, s.dirs, K);
    RenderOutput out;
    out.t.assign(s.t.begin(), s.t.end());
    out.delta.assign(s.delta.begin(), s.delta.end());
    out.w.resize(static_cast<size_t>(K));
    composite_weights(ev.sigma.data(), s.delta.data(), K, out.w.data());
    out.h = std::move(ev.h);
    out.z = std::move(ev.z);
    for (int k = 0; k < K; ++k) {
        const double wk = out.w[static_cast<size_t>(k)];
        for (int c = 0; c < 3; ++c)
            out.rgb[c] += wk / (1.0 + std::exp(-out.z.at(k, c)));
    }
    out.gray = (out.rgb[0] + out.rgb[1] + out.rgb[2]) / 3.0;
    return out;
}

// One round of inverse-CDF resampling from the first-pass weights; the same
// network evaluates the merged sample set (no separate coarse model).
RaySamples importance_resample(const Ray& ray, const RaySamples& first,
                               const std::vector<double>& w, uint64_t seed) {
    const int K = static_cast<int>(first.n_samples);
    std::vector<double> cdf(static_cast<size_t>(K) + 1, 0.0);
    for (int k = 0; k < K; ++k) cdf[k + 1] = cdf[k] + w[k] + 1e-8;
    const double total = cdf.back();
    Rng rng(mix_seed(seed, 0x1e5a11ull));
    std::vector<double> ts(first.t.begin(), first.t.end());
    for (int k = 0; k < K; ++k) {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const int seg = std::clamp(static_cast<int>(it - cdf.begin()) - 1, 0, K - 1);
        const double frac = (u - cdf[seg]) / (cdf[seg + 1] - cdf[seg]);
        ts.push_back(first.t[seg] + frac * first.delta[seg]);
    }
    std::sort(ts.begin(), ts.end());
    RaySamples s;
    s.n_rays = 1;
    s.n_samples = static_cast<int64_t>(ts.size());
    s.t = ts;
    const size_t n = ts.size();
    s.delta.resize(n);
    s.pts.resize(n * 3);
    s.dirs.resize(n * 3);
    for (size_t i = 0; i < n; ++i) {
        s.delta[i] = (i + 1 < n ? ts[i + 1] : ray.far) - ts[i];
        const Vec3 p = ray.origin + ray.dir * ts[i];
        s.pts[i * 3 + 0] = p.x;
        s.pts[i * 3 + 1] = p.y;
        s.pts[i * 3 + 2] = p.z;
        s.dirs[i * 3 + 0] = ray.dir.x;
        s.dirs[i * 3 + 1] = ray.dir.y;
        s.dirs[i * 3 + 2] = ray.dir.z;
    }
    return s;
}

}  // namespace

RenderOutput render_pixel(const FieldParams& params, const Ray& ray, int n_samples, uint64_t seed,
                          bool importance) {
    if (std::fabs(ray.dir.norm() - 1.0) > 1e-9) throw Error("render: ray direction must be unit");
    const Ray rays[1] = {ray};
    RaySamples s = make_samples(std::span<const Ray>(rays, 1), n_samples, seed);
    if (!importance) return render_from_samples(params, s);
    RenderOutput first = render_from_samples(params, s);
    RaySamples merged = importance_resample(ray, s, first.w, seed);
    return render_from_samples(params, merged);
}

Tensor render_image(const FieldParams& params, const Camera& cam, int n_samples, uint64_t seed,
                    RenderCache* cache, bool parallel, bool importance, double near, double far) {
    std::vector<Ray> rays = generate_rays(cam, near, far);
    const int64_t n = static_cast<int64_t>(rays.size());
    Tensor img = Tensor::zeros({cam.height, cam.width, 3});
    if (cache) cache->resize(static_cast<size_t>(n));
    kernels::for_each_index(n, parallel, [&](int64_t i) {
        RenderOutput out =
            render_pixel(params, rays[static_cast<size_t>(i)], n_samples, mix_seed(seed, static_cast<uint64_t>(i)), importance);
        for (int c = 0; c < 3; ++c) img[i * 3 + c] = out.rgb[c];
        if (cache) (*cache)[static_cast<size_t>(i)] = std::move(out);
    });
    return img;
}

double psnr(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw Error("psnr: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

ParamNodes insert_params(Tape& tape, const FieldParams& params, bool needs_grad) {
    ParamNodes nodes;
    for (size_t i = 0; i < params.count(); ++i) {
        Tensor t = params.tensor(i);
        // biases as [1,M] rows, weights as stored
        nodes.ids.push_back(tape.leaf(std::move(t), needs_grad));
    }
    return nodes;
}

NodeId param_node(const ParamNodes& nodes, const FieldParams& params, const std::string& name) {
    for (size_t i = 0; i < params.count(); ++i)
        if (params.name(i) == name) return nodes.ids[i];
    throw Error("graph: no parameter named " + name);
}

RenderGraph build_render_graph(Tape& tape, const ParamNodes& nodes, const FieldParams& params,
                               const RaySamples& s) {
    const FieldConfig& cfg = params.config();
    const int64_t R = s.n_rays, K = s.n_samples;
    const int64_t n = R * K;
    const int P = cfg.pos_dim(), Q = cfg.dir_dim(), H = cfg.hidden;

    Tensor pe_x = Tensor::zeros({n, P});
    Tensor pe_d = Tensor::zeros({n, Q});
    for (int64_t i = 0; i < n; ++i) {
        positional_encode(&s.pts[static_cast<size_t>(i) * 3], cfg.l_pos, &pe_x.vec()[static_cast<size_t>(i) * P]);
        positional_encode(&s.dirs[static_cast<size_t>(i) * 3], cfg.l_dir, &pe_d.vec()[static_cast<size_t>(i) * Q]);
    }

    auto linear_relu = [&](NodeId x, const std::string& w, const std::string& b) {
        return tape.linear_relu(x, param_node(nodes, params, w), param_node(nodes, params, b));
    };

    NodeId a = linear_relu(tape.constant(std::move(pe_x)), "trunk0.w", "trunk0.b");
    for (int i = 1; i < cfg.trunk_depth; ++i) {
        const std::string base = "trunk" + std::to_string(i);
        a = linear_relu(a, base + ".w", base + ".b");
    }

    NodeId sigma = tape.scale(linear_relu(a, "density.w", "density.b"), cfg.density_scale);  // [n,1]

    RenderGraph g;
    NodeId sd = tape.mul(tape.reshape(sigma, {R, K}), tape.constant(Tensor({R, K}, std::vector<double>(s.delta))));
    NodeId transmit = tape.exp(tape.neg(tape.cumsum_ex_rows(sd)));
    NodeId alpha = tape.sub(tape.constant(Tensor::full({R, K}, 1.0)), tape.exp(tape.neg(sd)));
    g.w = tape.mul(transmit, alpha);

    NodeId feat = tape.concat(a, tape.constant(std::move(pe_d)));
    g.h = linear_relu(feat, "color0.w", "color0.b");
    g.z = tape.linear_nt_bias(g.h, param_node(nodes, params, "rgb.w"),
                              param_node(nodes, params, "rgb.b"));
    g.color = tape.sigmoid(g.z);
    g.rgb = tape.seg_weight_sum(g.w, g.color);
    g.gray = tape.scale(tape.sum_rows(g.rgb), 1.0 / 3.0);
    (void)H;
    return g;
}

NodeId build_jacobian_rows(Tape& tape, const RenderGraph& g, int64_t n_rays, int64_t n_samples,
                           int hidden) {
    // sigmoid'(z) = s(1-s) from the already-computed activation
    NodeId ones = tape.constant(Tensor::full(tape.value(g.color).shape(), 1.0));
    NodeId sp = tape.mul(g.color, tape.sub(ones, g.color));  // [R*K,3]
    NodeId rows = -1;
    for (int c = 0; c < 3; ++c) {
        NodeId u = tape.mul(g.w, tape.reshape(tape.col_slice(sp, c), {n_rays, n_samples}));
        NodeId jc = tape.scale(tape.seg_weight_sum(u, g.h), 1.0 / 3.0);  // [R,H]
        rows = c == 0 ? jc : tape.concat(rows, jc);
    }
    (void)hidden;
    return rows;  // [R,3H]
}

}  // namespace mirf
