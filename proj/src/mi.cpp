#include "mirf/mi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mirf/kernels.hpp"
#include "mirf/render.hpp"

namespace mirf {

double closed_form_mi(double cos_abs) {
    if (cos_abs < 0.0 || cos_abs > 1.0) throw Error("mi: cos_abs out of [0,1]");
    if (cos_abs >= 1.0 - 1e-12) return std::numeric_limits<double>::infinity();
    return std::log(1.0 / std::sqrt(1.0 - cos_abs * cos_abs));
}

double mi_map_clamp() { return closed_form_mi(0.999); }

namespace {

struct Hist2d {
    int bins;
    std::vector<int> joint;  // [bins,bins]
    std::vector<int> rx, cy;
    int total = 0;
};

Hist2d bin_samples(std::span<const double> x, std::span<const double> y, int bins) {
    Hist2d h{bins};
    h.joint.assign(static_cast<size_t>(bins) * bins, 0);
    h.rx.assign(static_cast<size_t>(bins), 0);
    h.cy.assign(static_cast<size_t>(bins), 0);
    auto edges = [&](std::span<const double> v) {
        double lo = v[0], hi = v[0];
        for (double s : v) {
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
        return std::pair<double, double>(lo, hi);
    };
    const auto [xlo, xhi] = edges(x);
    const auto [ylo, yhi] = edges(y);
    const double xw = (xhi - xlo) / bins, yw = (yhi - ylo) / bins;
    for (size_t i = 0; i < x.size(); ++i) {
        int a = xw > 0 ? std::min(bins - 1, static_cast<int>((x[i] - xlo) / xw)) : 0;
        int b = yw > 0 ? std::min(bins - 1, static_cast<int>((y[i] - ylo) / yw)) : 0;
        ++h.joint[static_cast<size_t>(a * bins + b)];
        ++h.rx[static_cast<size_t>(a)];
        ++h.cy[static_cast<size_t>(b)];
        ++h.total;
    }
    return h;
}

// MI of the histogram with an optional single sample removed from cell (ra,cb)
double hist_mi(const Hist2d& h, int ra = -1, int cb = -1) {
    const int n = h.total - (ra >= 0 ? 1 : 0);
    double mi = 0.0;
    for (int a = 0; a < h.bins; ++a) {
        const int rxa = h.rx[static_cast<size_t>(a)] - (a == ra ? 1 : 0);
        if (rxa == 0) continue;
        for (int b = 0; b < h.bins; ++b) {
            int nab = h.joint[static_cast<size_t>(a * h.bins + b)];
            if (a == ra && b == cb) --nab;
            if (nab == 0) continue;
            const int cyb = h.cy[static_cast<size_t>(b)] - (b == cb ? 1 : 0);
            mi += (static_cast<double>(nab) / n) *
                  std::log(static_cast<double>(nab) * n /
                           (static_cast<double>(rxa) * cyb));
        }
    }
    return mi;
}

}  // namespace

double histogram_mi(std::span<const double> x, std::span<const double> y, int bins,
                    double* jackknife_bias) {
    if (x.size() != y.size() || x.empty()) throw Error("mi: sample streams must match");
    if (bins < 2) throw Error("mi: need at least 2 bins");
    Hist2d h = bin_samples(x, y, bins);
    const double mi = hist_mi(h);
    if (jackknife_bias) {
        // leave-one-out over distinct occupied cells, weighted by count
        double mean_loo = 0.0;
        for (int a = 0; a < h.bins; ++a)
            for (int b = 0; b < h.bins; ++b) {
                const int nab = h.joint[static_cast<size_t>(a * h.bins + b)];
                if (nab == 0) continue;
                mean_loo += (static_cast<double>(nab) / h.total) * hist_mi(h, a, b);
            }
        *jackknife_bias = (h.total - 1) * (mean_loo - mi);
    }
    return mi;
}

MiEstimate mc_mi_estimate(const FieldParams& params, const Ray& ray_i, const Ray& ray_j,
                          const PerturbationSpec& spec, int n_draws, int bins, uint64_t seed,
                          int n_samples) {
    if (n_draws < 1000) throw Error("mi: need n_draws >= 1000");
    MiEstimate est;
    est.n_draws = n_draws;
    est.bins = bins;
    est.sigma = spec.sigma;

    const uint64_t seed_i = mix_seed(seed, 1), seed_j = mix_seed(seed, 2);
    RenderOutput ro_i = render_pixel(params, ray_i, n_samples, seed_i);
    RenderOutput ro_j = render_pixel(params, ray_j, n_samples, seed_j);

    const bool fast = is_designated_layer(spec, params);
    const int hidden = params.config().hidden;
    const int64_t d = spec.dim();

    std::vector<double> xs(static_cast<size_t>(n_draws)), ys(static_cast<size_t>(n_draws));
    kernels::for_each_index(n_draws, true, [&](int64_t k) {
        Rng rng(mix_seed(seed, 3, static_cast<uint64_t>(k)));
        std::vector<double> dir = sample_sphere_direction(d, rng);
        if (fast) {
            xs[static_cast<size_t>(k)] = perturbed_gray_from_cache(ro_i, dir, spec.sigma, hidden);
            ys[static_cast<size_t>(k)] = perturbed_gray_from_cache(ro_j, dir, spec.sigma, hidden);
        } else {
            FieldParams moved = apply_perturbation(params, spec, dir);
            xs[static_cast<size_t>(k)] = render_pixel(moved, ray_i, n_samples, seed_i).gray;
            ys[static_cast<size_t>(k)] = render_pixel(moved, ray_j, n_samples, seed_j).gray;
        }
    });

    auto spread = [](const std::vector<double>& v) {
        auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        return *hi - *lo;
    };
    if (spread(xs) < 1e-15 || spread(ys) < 1e-15) {
        est.degenerate = true;
        return est;
    }
    est.empirical_mi = histogram_mi(xs, ys, bins, &est.jackknife_bias);

    PixelJacobian ji = fast ? pixel_jacobian_fast(ro_i, params, spec)
                            : pixel_jacobian_ad(params, ray_i, spec, n_samples, seed_i);
    PixelJacobian jj = fast ? pixel_jacobian_fast(ro_j, params, spec)
                            : pixel_jacobian_ad(params, ray_j, spec, n_samples, seed_j);
    if (ji.norm <= kDegenerateNorm || jj.norm <= kDegenerateNorm) {
        est.degenerate = true;
        return est;
    }
    est.cos_abs = cosine_abs(ji, jj);
    est.closed_form = closed_form_mi(est.cos_abs);
    return est;
}

MiMap mi_map(const FieldParams& params, const Camera& source_cam, int u, int v,
             const Camera& target_cam, const PerturbationSpec& spec, int n_samples, uint64_t seed,
             double near, double far) {
    const Ray src = pixel_ray(source_cam, u, v, near, far);
    const bool fast = is_designated_layer(spec, params);
    PixelJacobian jsrc =
        fast ? pixel_jacobian_fast(render_pixel(params, src, n_samples, mix_seed(seed, 0xabcd)),
                                   params, spec)
             : pixel_jacobian_ad(params, src, spec, n_samples, mix_seed(seed, 0xabcd));
    MiMap map;
    map.source_cos_norm = jsrc.norm;
    map.values = Tensor::zeros({target_cam.height, target_cam.width});
    map.degenerate.assign(static_cast<size_t>(target_cam.height) * target_cam.width, 0);
    if (jsrc.norm <= kDegenerateNorm) {
        std::fill(map.degenerate.begin(), map.degenerate.end(), uint8_t{1});
        return map;
    }
    std::vector<Ray> rays = generate_rays(target_cam, near, far);
    const double clamp = mi_map_clamp();
    kernels::for_each_index(static_cast<int64_t>(rays.size()), true, [&](int64_t i) {
        PixelJacobian jt;
        if (fast) {
            RenderOutput ro = render_pixel(params, rays[static_cast<size_t>(i)], n_samples,
                                           mix_seed(seed, static_cast<uint64_t>(i)));
            jt = pixel_jacobian_fast(ro, params, spec);
        } else {
            jt = pixel_jacobian_ad(params, rays[static_cast<size_t>(i)], spec, n_samples,
                                   mix_seed(seed, static_cast<uint64_t>(i)));
        }
        if (jt.norm <= kDegenerateNorm) {
            map.degenerate[static_cast<size_t>(i)] = 1;
            return;
        }
        const double c = std::min(cosine_abs(jsrc, jt), 0.999);
        map.values[i] = closed_form_mi(c);
        (void)clamp;
    });
    return map;
}

}  // namespace mirf
