#include "mirf/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "mirf/io.hpp"
#include "mirf/jacobian.hpp"
#include "mirf/kernels.hpp"
#include "mirf/metrics.hpp"
#include "mirf/rng.hpp"
#include "mirf/tape.hpp"

namespace mirf {

int SeedLabels::n_classes() const {
    int k = 0;
    for (const Entry& e : pixels) k = std::max(k, e.class_id);
    return k;
}

void SeedLabels::validate_sparse() const {
    const int k = n_classes();
    std::set<int> seen;
    for (const Entry& e : pixels) {
        if (e.class_id < 1) throw Error("seeds: class ids start at 1");
        if (!seen.insert(e.class_id).second)
            throw Error("seeds: sparse mode needs exactly one pixel per class");
    }
    if (static_cast<int>(seen.size()) != k)
        throw Error("seeds: class ids must be contiguous 1..K");
}

SeedLabels make_sparse_seeds(const LabelImage& labels, int view, uint64_t seed,
                             SeedLabels::Mode mode) {
    SeedLabels out;
    out.view = view;
    out.mode = mode;
    std::map<int, std::vector<std::pair<int, int>>> by_class;
    for (int v = 0; v < labels.height; ++v)
        for (int u = 0; u < labels.width; ++u)
            if (labels.at(u, v) >= 1) by_class[labels.at(u, v)].push_back({u, v});
    Rng rng(mix_seed(seed, 0x5eedull));
    for (auto& [cls, pix] : by_class) {
        const auto& [u, v] = pix[rng.below(pix.size())];
        out.pixels.push_back({u, v, cls});
    }
    return out;
}

std::string seeds_to_text(const SeedLabels& seeds) {
    std::ostringstream ss;
    for (const SeedLabels::Entry& e : seeds.pixels)
        ss << seeds.view << " " << e.u << " " << e.v << " " << e.class_id << "\n";
    return ss.str();
}

SeedLabels seeds_from_text(const std::string& text) {
    SeedLabels seeds;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        SeedLabels::Entry e;
        int view;
        if (!(ls >> view >> e.u >> e.v >> e.class_id))
            throw Error("seeds: bad line (want `view_id u v class_id`): " + line);
        if (first) {
            seeds.view = view;
            first = false;
        } else if (view != seeds.view) {
            throw Error("seeds: all entries must share one source view");
        }
        seeds.pixels.push_back(e);
    }
    return seeds;
}

namespace {

// unit direction in the designated layer along one seed pixel's jacobian;
// empty when degenerate
std::vector<double> seed_direction(const FieldParams& params, const Camera& src_cam, int u, int v,
                                   const PropConfig& cfg) {
    const Ray ray = pixel_ray(src_cam, u, v, cfg.near, cfg.far);
    RenderOutput ro = render_pixel(params, ray, cfg.n_samples,
                                   mix_seed(cfg.seed, 0x5bc, static_cast<uint64_t>(v) * 10000 + u),
                                   cfg.importance);
    PerturbationSpec spec = make_single_layer_spec(params, FieldParams::kDesignatedLayer, 1.0);
    PixelJacobian j = pixel_jacobian_fast(ro, params, spec);
    if (j.norm <= kDegenerateNorm) return {};
    for (double& x : j.values) x /= j.norm;
    return std::move(j.values);
}

struct ViewCache {
    RenderCache cache;
    Tensor base_gray;                 // [H,W]
    std::vector<double> base_sample;  // [H*W*K] per-sample gray radiance
    int width = 0, height = 0, k_samples = 0;
};

ViewCache render_view_cache(const FieldParams& params, const Camera& cam, const PropConfig& cfg,
                            bool with_samples) {
    ViewCache vc;
    vc.width = cam.width;
    vc.height = cam.height;
    render_image(params, cam, cfg.n_samples, cfg.seed, &vc.cache, true, cfg.importance, cfg.near,
                 cfg.far);
    const int hidden = params.config().hidden;
    const int64_t n = static_cast<int64_t>(vc.cache.size());
    vc.k_samples = static_cast<int>(vc.cache[0].h.rows());
    vc.base_gray = Tensor::zeros({cam.height, cam.width});
    if (with_samples) vc.base_sample.resize(static_cast<size_t>(n) * vc.k_samples);
    std::vector<double> zero_dir(static_cast<size_t>(3 * hidden), 0.0);
    kernels::for_each_index(n, true, [&](int64_t i) {
        double* samples = with_samples ? &vc.base_sample[static_cast<size_t>(i) * vc.k_samples] : nullptr;
        vc.base_gray[i] = perturbed_gray_from_cache(vc.cache[static_cast<size_t>(i)], zero_dir, 0.0,
                                                    hidden, samples);
    });
    return vc;
}

void response_2d(const FieldParams& params, const ViewCache& vc, const std::vector<double>& dir,
                 double sigma, Tensor& out, int64_t cls_index, int64_t n_classes) {
    const int hidden = params.config().hidden;
    const int64_t n = static_cast<int64_t>(vc.cache.size());
    kernels::for_each_index(n, true, [&](int64_t i) {
        const double pert = perturbed_gray_from_cache(vc.cache[static_cast<size_t>(i)], dir, sigma, hidden);
        out[i * n_classes + cls_index] = std::fabs(pert - vc.base_gray[i]);
    });
}

void response_3d(const FieldParams& params, const ViewCache& vc, const std::vector<double>& dir,
                 double sigma, Tensor& out, int64_t cls_index, int64_t n_classes) {
    const int hidden = params.config().hidden;
    const int64_t n = static_cast<int64_t>(vc.cache.size());
    const int K = vc.k_samples;
    kernels::for_each_index(n, true, [&](int64_t i) {
        std::vector<double> pert(static_cast<size_t>(K));
        perturbed_gray_from_cache(vc.cache[static_cast<size_t>(i)], dir, sigma, hidden, pert.data());
        const double* base = &vc.base_sample[static_cast<size_t>(i) * K];
        double acc = 0.0;
        for (int k = 0; k < K; ++k)
            acc += vc.cache[static_cast<size_t>(i)].w[static_cast<size_t>(k)] * std::fabs(pert[static_cast<size_t>(k)] - base[k]);
        out[i * n_classes + cls_index] = acc;
    });
}

PropagationResult propagate_sparse_impl(const FieldParams& params, const Camera& source_cam,
                                        const SeedLabels& seeds, const Camera& target_cam,
                                        double sigma, const PropConfig& cfg, bool in_3d) {
    seeds.validate_sparse();
    const int K = seeds.n_classes();
    PropagationResult res;
    res.sigma = sigma;
    res.variant = in_3d ? "3d" : "2d";
    res.logits = Tensor::zeros({target_cam.height, target_cam.width, K});
    res.labels = LabelImage(target_cam.width, target_cam.height);
    if (sigma == 0.0) {
        res.empty = true;
        return res;
    }

    ViewCache vc = render_view_cache(params, target_cam, cfg, in_3d);
    for (const SeedLabels::Entry& e : seeds.pixels) {
        std::vector<double> dir = seed_direction(params, source_cam, e.u, e.v, cfg);
        if (dir.empty()) {
            res.unpropagatable.push_back(e.class_id);
            continue;
        }
        if (in_3d)
            response_3d(params, vc, dir, sigma, res.logits, e.class_id - 1, K);
        else
            response_2d(params, vc, dir, sigma, res.logits, e.class_id - 1, K);
    }
    PropagationResult arg = argmax_responses(res.logits, sigma, res.variant);
    res.labels = std::move(arg.labels);
    res.tie_count = arg.tie_count;
    return res;
}

}  // namespace

PropagationResult argmax_responses(const Tensor& responses, double sigma,
                                   const std::string& variant) {
    const int64_t H = responses.shape()[0], W = responses.shape()[1], K = responses.shape()[2];
    PropagationResult res;
    res.sigma = sigma;
    res.variant = variant;
    res.logits = responses;
    res.labels = LabelImage(static_cast<int>(W), static_cast<int>(H));
    for (int64_t i = 0; i < H * W; ++i) {
        int best = 0;  // 0 = no signal
        double best_v = 0.0;
        bool tie = false;
        for (int64_t k = 0; k < K; ++k) {
            const double v = responses[i * K + k];
            if (v > best_v) {
                best = static_cast<int>(k) + 1;
                best_v = v;
                tie = false;
            } else if (v == best_v && best != 0) {
                tie = true;  // equal logits: lowest class index wins
            }
        }
        if (tie) ++res.tie_count;
        res.labels.ids[static_cast<size_t>(i)] = best;
    }
    return res;
}

PropagationResult propagate_sparse_2d(const FieldParams& params, const Camera& source_cam,
                                      const SeedLabels& seeds, const Camera& target_cam,
                                      double sigma, const PropConfig& cfg) {
    return propagate_sparse_impl(params, source_cam, seeds, target_cam, sigma, cfg, false);
}

PropagationResult propagate_sparse_3d(const FieldParams& params, const Camera& source_cam,
                                      const SeedLabels& seeds, const Camera& target_cam,
                                      double sigma, const PropConfig& cfg) {
    return propagate_sparse_impl(params, source_cam, seeds, target_cam, sigma, cfg, true);
}

GradientSelection adaptive_gradient_sampling(const FieldParams& params, const Camera& source_cam,
                                             const LabelImage& source_labels, int n_classes,
                                             double sigma, const PropConfig& cfg, int wanted,
                                             int combos_per_round, int max_rounds) {
    std::vector<std::vector<std::pair<int, int>>> by_class(static_cast<size_t>(n_classes) + 1);
    for (int v = 0; v < source_labels.height; ++v)
        for (int u = 0; u < source_labels.width; ++u) {
            const int id = source_labels.at(u, v);
            if (id >= 1 && id <= n_classes) by_class[static_cast<size_t>(id)].push_back({u, v});
        }
    for (int k = 1; k <= n_classes; ++k)
        if (by_class[static_cast<size_t>(k)].empty())
            throw Error("dense sampling: class " + std::to_string(k) + " has no labeled pixels");

    GradientSelection sel;
    ViewCache vc = render_view_cache(params, source_cam, cfg, false);
    const int64_t H = source_labels.height, W = source_labels.width;
    sel.source_responses = Tensor::zeros({H, W, n_classes});
    const std::vector<int> seen = seen_classes(source_labels);

    auto miou_of = [&](const Tensor& responses) {
        PropagationResult r = argmax_responses(responses, sigma, "2d");
        return compute_metrics(r.labels, source_labels, seen).miou;
    };

    Rng rng(mix_seed(cfg.seed, 0xada7ull));
    double current_miou = miou_of(sel.source_responses);

    for (int round = 0; round < max_rounds && static_cast<int>(sel.selections.size()) < wanted;
         ++round) {
        double best_gain = 0.0;
        std::vector<std::vector<double>> best_dirs;
        Tensor best_responses;
        for (int c = 0; c < combos_per_round; ++c) {
            std::vector<std::vector<double>> dirs(static_cast<size_t>(n_classes));
            bool ok = true;
            Tensor merged = sel.source_responses;
            for (int k = 1; k <= n_classes && ok; ++k) {
                const auto& pix = by_class[static_cast<size_t>(k)];
                const auto& [u, v] = pix[rng.below(pix.size())];
                dirs[static_cast<size_t>(k - 1)] = seed_direction(params, source_cam, u, v, cfg);
                if (dirs[static_cast<size_t>(k - 1)].empty()) ok = false;
            }
            if (!ok) continue;
            Tensor cand = Tensor::zeros({H, W, n_classes});
            for (int k = 1; k <= n_classes; ++k)
                response_2d(params, vc, dirs[static_cast<size_t>(k - 1)], sigma, cand, k - 1, n_classes);
            for (int64_t i = 0; i < merged.numel(); ++i) merged[i] = std::max(merged[i], cand[i]);
            const double gain = miou_of(merged) - current_miou;
            if (gain > best_gain) {
                best_gain = gain;
                best_dirs = std::move(dirs);
                best_responses = std::move(merged);
            }
        }
        if (best_gain > 0.0) {
            sel.selections.push_back(std::move(best_dirs));
            sel.source_responses = std::move(best_responses);
            current_miou += best_gain;
            sel.miou_trace.push_back(current_miou);
        }
    }
    sel.complete = static_cast<int>(sel.selections.size()) >= wanted;
    return sel;
}

Tensor dense_responses(const FieldParams& params, const GradientSelection& sel,
                       const Camera& view_cam, double sigma, const PropConfig& cfg) {
    if (sel.selections.empty()) throw Error("dense responses: no qualified selections");
    const int K = static_cast<int>(sel.selections[0].size());
    ViewCache vc = render_view_cache(params, view_cam, cfg, false);
    Tensor out = Tensor::zeros({view_cam.height, view_cam.width, K});
    Tensor one = Tensor::zeros({view_cam.height, view_cam.width, K});
    for (const auto& dirs : sel.selections) {
        for (int k = 0; k < K; ++k) response_2d(params, vc, dirs[static_cast<size_t>(k)], sigma, one, k, K);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], one[i]);
    }
    return out;
}

void AggModel::save(const std::string& path) const {
    io::write_archive(path, {{"w1", w1}, {"w2", w2}, {"w3", w3},
                             {"scale", Tensor::scalar(input_scale)}});
}

AggModel AggModel::load(const std::string& path) {
    io::NamedTensors in = io::read_archive(path);
    if (in.size() != 4) throw Error(path + ": bad aggregation model");
    AggModel m;
    m.w1 = in[0].second;
    m.w2 = in[1].second;
    m.w3 = in[2].second;
    m.input_scale = in[3].second[0];
    return m;
}

AggModel train_aggregation_mlp(const Tensor& source_responses, const LabelImage& source_labels,
                               int n_classes, const AggConfig& cfg) {
    const int64_t K = n_classes;
    if (source_responses.shape()[2] != K) throw Error("aggregation: response channels != K");

    std::vector<int64_t> pixels;
    for (size_t i = 0; i < source_labels.ids.size(); ++i)
        if (source_labels.ids[i] >= 1) pixels.push_back(static_cast<int64_t>(i));
    if (pixels.empty()) throw Error("aggregation: no labeled pixels");

    double max_r = 0.0;
    for (int64_t i = 0; i < source_responses.numel(); ++i)
        max_r = std::max(max_r, source_responses[i]);

    AggModel model;
    model.input_scale = max_r > 0 ? 1.0 / max_r : 1.0;
    Rng init(mix_seed(cfg.seed, 0xa66ull));
    auto randn = [&](int64_t r, int64_t c) {
        Tensor t = Tensor::zeros({r, c});
        const double s = std::sqrt(2.0 / r);
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = s * init.normal();
        return t;
    };
    model.w1 = randn(K, 256);
    model.w2 = randn(256, 128);
    model.w3 = randn(128, K);

    std::vector<Tensor> m = {Tensor::zeros(model.w1.shape()), Tensor::zeros(model.w2.shape()),
                             Tensor::zeros(model.w3.shape())};
    std::vector<Tensor> v = m;

    for (int it = 0; it < cfg.iters; ++it) {
        Rng rng(mix_seed(cfg.seed, 0xba7c, static_cast<uint64_t>(it)));
        const int64_t B = std::min<int64_t>(cfg.batch, static_cast<int64_t>(pixels.size()));
        Tensor x = Tensor::zeros({B, K});
        Tensor onehot = Tensor::zeros({B, K});
        for (int64_t b = 0; b < B; ++b) {
            const int64_t pix = pixels[rng.below(pixels.size())];
            for (int64_t k = 0; k < K; ++k)
                x.at(b, k) = source_responses[pix * K + k] * model.input_scale;
            onehot.at(b, source_labels.ids[static_cast<size_t>(pix)] - 1) = 1.0;
        }

        Tape tape;
        NodeId xin = tape.constant(std::move(x));
        NodeId w1 = tape.leaf(model.w1, true);
        NodeId w2 = tape.leaf(model.w2, true);
        NodeId w3 = tape.leaf(model.w3, true);
        NodeId a1 = tape.relu(tape.matmul(xin, w1));
        NodeId a2 = tape.relu(tape.matmul(a1, w2));
        NodeId logits = tape.matmul(a2, w3);
        // cross entropy: mean(logsumexp(z) - z[label])
        NodeId lse = tape.log(tape.sum_rows(tape.exp(logits)));
        NodeId zl = tape.sum_rows(tape.mul(logits, tape.constant(std::move(onehot))));
        NodeId loss = tape.mean_all(tape.sub(lse, zl));
        if (!std::isfinite(tape.scalar(loss)))
            throw Error("aggregation: loss diverged at iteration " + std::to_string(it));
        tape.backward(loss);

        const double bc1 = 1.0 - std::pow(0.9, it + 1);
        const double bc2 = 1.0 - std::pow(0.999, it + 1);
        Tensor* weights[3] = {&model.w1, &model.w2, &model.w3};
        const Tensor* grads[3] = {&tape.grad(w1), &tape.grad(w2), &tape.grad(w3)};
        for (int w = 0; w < 3; ++w)
            for (int64_t j = 0; j < weights[w]->numel(); ++j) {
                const double g = (*grads[w])[j];
                m[static_cast<size_t>(w)][j] = 0.9 * m[static_cast<size_t>(w)][j] + 0.1 * g;
                v[static_cast<size_t>(w)][j] = 0.999 * v[static_cast<size_t>(w)][j] + 0.001 * g * g;
                (*weights[w])[j] -= cfg.lr * (m[static_cast<size_t>(w)][j] / bc1) /
                                    (std::sqrt(v[static_cast<size_t>(w)][j] / bc2) + 1e-8);
            }
    }
    return model;
}

LabelImage apply_aggregation(const AggModel& model, const Tensor& responses) {
    const int64_t H = responses.shape()[0], W = responses.shape()[1], K = responses.shape()[2];
    Tensor x = Tensor::zeros({H * W, K});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = responses[i] * model.input_scale;
    Tensor a1 = Tensor::zeros({H * W, model.w1.cols()});
    kernels::matmul(x.data(), model.w1.data(), a1.data(), H * W, K, model.w1.cols());
    for (int64_t i = 0; i < a1.numel(); ++i) a1[i] = std::max(0.0, a1[i]);
    Tensor a2 = Tensor::zeros({H * W, model.w2.cols()});
    kernels::matmul(a1.data(), model.w2.data(), a2.data(), H * W, model.w1.cols(), model.w2.cols());
    for (int64_t i = 0; i < a2.numel(); ++i) a2[i] = std::max(0.0, a2[i]);
    Tensor logits = Tensor::zeros({H * W, K});
    kernels::matmul(a2.data(), model.w3.data(), logits.data(), H * W, model.w2.cols(), K);

    LabelImage out(static_cast<int>(W), static_cast<int>(H));
    for (int64_t i = 0; i < H * W; ++i) {
        int best = 1;
        for (int64_t k = 1; k < K; ++k)
            if (logits.at(i, k) > logits.at(i, best - 1)) best = static_cast<int>(k) + 1;
        out.ids[static_cast<size_t>(i)] = best;
    }
    return out;
}

Tensor recolor_entity(const FieldParams& params, const Camera& source_cam, int u, int v,
                      const double delta[3], double sigma, const Camera& target_cam,
                      const PropConfig& cfg) {
    const Ray ray = pixel_ray(source_cam, u, v, cfg.near, cfg.far);
    RenderOutput ro = render_pixel(params, ray, cfg.n_samples, mix_seed(cfg.seed, 0x2ec), cfg.importance);
    const int H = params.config().hidden;

    std::vector<double> dir(static_cast<size_t>(3 * H), 0.0);
    bool any = false;
    for (int c = 0; c < 3; ++c) {
        if (delta[c] == 0.0) continue;
        PixelJacobian jc = pixel_jacobian_fast_channel(ro, params, c);
        if (jc.norm <= kDegenerateNorm)
            throw Error("recolor: degenerate jacobian for channel " + std::to_string(c));
        for (size_t i = 0; i < dir.size(); ++i) dir[i] += delta[c] * jc.values[i] / jc.norm;
        any = true;
    }

    // render target under z' = z + sigma * (D h); exact for the rgb layer
    RenderCache cache;
    render_image(params, target_cam, cfg.n_samples, cfg.seed, &cache, true, cfg.importance,
                 cfg.near, cfg.far);
    Tensor img = Tensor::zeros({target_cam.height, target_cam.width, 3});
    kernels::for_each_index(static_cast<int64_t>(cache.size()), true, [&](int64_t i) {
        const RenderOutput& px = cache[static_cast<size_t>(i)];
        const int64_t K = px.h.rows();
        double rgb[3] = {0, 0, 0};
        for (int64_t k = 0; k < K; ++k) {
            const double wk = px.w[static_cast<size_t>(k)];
            for (int c = 0; c < 3; ++c) {
                double dz = 0.0;
                for (int j = 0; j < H; ++j) dz += dir[static_cast<size_t>(c * H + j)] * px.h.at(k, j);
                rgb[c] += wk / (1.0 + std::exp(-(px.z.at(k, c) + sigma * dz)));
            }
        }
        for (int c = 0; c < 3; ++c) img[i * 3 + c] = rgb[c];
    });
    (void)any;
    return img;
}

}  // namespace mirf
