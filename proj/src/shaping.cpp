#include "mirf/shaping.hpp"

#include <cmath>
#include <sstream>

#include "mirf/jacobian.hpp"
#include "mirf/render.hpp"
#include "mirf/rng.hpp"

namespace mirf {

void ShapingConfig::validate() const {
    if (!(lambda > 0.0) || !(gamma > 0.0) || !(tau > 0.0))
        throw Error("shaping: lambda, gamma, tau must be positive");
    if (!(thr_lo < thr_hi)) throw Error("shaping: threshold interval empty");
    if (!(ratio_lo < ratio_hi)) throw Error("shaping: ratio band empty");
}

double LabelAffinity::similarity(const PixelRef& a, const PixelRef& b) const {
    const LabelImage& la = instance_ ? ds_.train_views[static_cast<size_t>(a.view)].instances
                                     : ds_.train_views[static_cast<size_t>(a.view)].labels;
    const LabelImage& lb = instance_ ? ds_.train_views[static_cast<size_t>(b.view)].instances
                                     : ds_.train_views[static_cast<size_t>(b.view)].labels;
    return gt_affinity(la.at(a.u, a.v), lb.at(b.u, b.v));
}

FeatureAffinity::FeatureAffinity(Tensor features) : features_(std::move(features)) {
    if (features_.rank() != 4) throw Error("affinity: feature tensor must be [V,H,W,F]");
}

double FeatureAffinity::similarity(const PixelRef& a, const PixelRef& b) const {
    const int64_t H = features_.shape()[1], W = features_.shape()[2], F = features_.shape()[3];
    const double* fa = features_.data() + ((a.view * H + a.v) * W + a.u) * F;
    const double* fb = features_.data() + ((b.view * H + b.v) * W + b.u) * F;
    double dot = 0, na = 0, nb = 0;
    for (int64_t i = 0; i < F; ++i) {
        dot += fa[i] * fb[i];
        na += fa[i] * fa[i];
        nb += fb[i] * fb[i];
    }
    if (na <= 0 || nb <= 0) return 0.0;
    return dot / std::sqrt(na * nb);
}

std::pair<PairBatch, double> select_pairs(const Tensor& similarity, double threshold,
                                          const ShapingConfig& cfg) {
    const int64_t B = similarity.rows();
    PairBatch batch;
    batch.similarity = similarity;
    batch.positives.resize(static_cast<size_t>(B));
    batch.negatives.resize(static_cast<size_t>(B));
    int64_t n_pos = 0, n_tot = 0;
    for (int64_t i = 0; i < B; ++i)
        for (int64_t j = 0; j < B; ++j) {
            if (i == j) continue;
            if (similarity.at(i, j) > threshold) {
                batch.positives[static_cast<size_t>(i)].push_back(static_cast<int>(j));
                ++n_pos;
            } else {
                batch.negatives[static_cast<size_t>(i)].push_back(static_cast<int>(j));
            }
            ++n_tot;
        }
    batch.pos_ratio = n_tot ? static_cast<double>(n_pos) / n_tot : 0.0;

    double next = threshold;
    if (batch.pos_ratio < cfg.ratio_lo)
        next -= cfg.thr_step;
    else if (batch.pos_ratio > cfg.ratio_hi)
        next += cfg.thr_step;
    next = std::min(cfg.thr_hi, std::max(cfg.thr_lo, next));
    return {std::move(batch), next};
}

namespace {

// row norms with a tiny floor inside the sqrt so zero rows stay differentiable
NodeId build_row_norms(Tape& tape, NodeId j_rows) {
    NodeId sq = tape.mul(j_rows, j_rows);
    NodeId ss = tape.sum_rows(sq);
    NodeId eps = tape.constant(Tensor::full(tape.value(ss).shape(), 1e-24));
    return tape.sqrt(tape.add(ss, eps));  // [B,1]
}

}  // namespace

NodeId build_mig_loss(Tape& tape, NodeId j_rows, const PairBatch& pairs, double tau,
                      int* skipped_anchors) {
    const int64_t B = tape.value(j_rows).rows();
    NodeId norms = build_row_norms(tape, j_rows);
    NodeId ones = tape.constant(Tensor::full({B, 1}, 1.0));
    NodeId jn = tape.mul_colvec(j_rows, tape.div(ones, norms));
    NodeId cosmat = tape.abs(tape.matmul_nt(jn, jn));  // [B,B]
    NodeId expmat = tape.exp(tape.scale(cosmat, 1.0 / tau));

    const Tensor& norm_vals = tape.value(norms);
    auto usable = [&](int i) { return norm_vals[i] > kDegenerateNorm; };

    // mask of negatives per anchor (degenerate members dropped)
    Tensor neg_mask = Tensor::zeros({B, B});
    Tensor pos_mask = Tensor::zeros({B, B});
    int n_pairs = 0;
    int skipped = 0;
    for (int64_t i = 0; i < B; ++i) {
        if (!usable(static_cast<int>(i))) {
            ++skipped;
            continue;
        }
        int live_pos = 0;
        for (int j : pairs.positives[static_cast<size_t>(i)])
            if (usable(j)) {
                pos_mask.at(i, j) = 1.0;
                ++live_pos;
            }
        if (live_pos == 0) {
            ++skipped;
            continue;
        }
        for (int j : pairs.negatives[static_cast<size_t>(i)])
            if (usable(j)) neg_mask.at(i, j) = 1.0;
        n_pairs += live_pos;
    }
    if (skipped_anchors) *skipped_anchors = skipped;
    if (n_pairs == 0) return tape.constant(Tensor::scalar(0.0));

    // term(i,p) = log(exp(c_ip/tau) + sum_neg(i)) - c_ip/tau
    NodeId neg_sum = tape.sum_rows(tape.mul(expmat, tape.constant(neg_mask)));  // [B,1]
    NodeId denom = tape.log(tape.add_colvec(expmat, neg_sum));                  // [B,B]
    NodeId terms = tape.sub(denom, tape.scale(cosmat, 1.0 / tau));
    NodeId masked = tape.mul(terms, tape.constant(pos_mask));
    return tape.scale(tape.sum_all(masked), 1.0 / n_pairs);
}

NodeId build_norm_penalty(Tape& tape, NodeId j_rows) {
    NodeId norms = build_row_norms(tape, j_rows);
    NodeId ones = tape.constant(Tensor::full(tape.value(norms).shape(), 1.0));
    NodeId d = tape.sub(ones, norms);
    return tape.mean_all(tape.mul(d, d));
}

namespace {

NodeId rows_leaf(Tape& tape, const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw Error("shaping: empty jacobian set");
    const int64_t B = static_cast<int64_t>(rows.size());
    const int64_t D = static_cast<int64_t>(rows[0].size());
    Tensor t = Tensor::zeros({B, D});
    for (int64_t i = 0; i < B; ++i) {
        if (static_cast<int64_t>(rows[static_cast<size_t>(i)].size()) != D)
            throw Error("shaping: ragged jacobian rows");
        for (int64_t j = 0; j < D; ++j) t.at(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
    return tape.leaf(std::move(t), false);
}

}  // namespace

double mig_loss(const std::vector<std::vector<double>>& jacobian_rows, const PairBatch& pairs,
                double tau) {
    Tape tape;
    return tape.scalar(build_mig_loss(tape, rows_leaf(tape, jacobian_rows), pairs, tau));
}

double norm_penalty(const std::vector<std::vector<double>>& jacobian_rows) {
    Tape tape;
    return tape.scalar(build_norm_penalty(tape, rows_leaf(tape, jacobian_rows)));
}

std::string trace_to_csv(const std::vector<TraceRow>& rows) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "step,l_nerf,l_mig,l_norm,threshold,pos_ratio\n";
    for (const TraceRow& r : rows)
        ss << r.step << "," << r.l_nerf << "," << r.l_mig << "," << r.l_norm << ","
           << r.threshold << "," << r.pos_ratio << "\n";
    return ss.str();
}

namespace {

class Adam {
public:
    explicit Adam(const FieldParams& params) {
        for (size_t i = 0; i < params.count(); ++i) {
            m_.push_back(Tensor::zeros(params.tensor(i).shape()));
            v_.push_back(Tensor::zeros(params.tensor(i).shape()));
        }
    }

    void step(FieldParams& params, const std::vector<const Tensor*>& grads, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(0.9, t_);
        const double bc2 = 1.0 - std::pow(0.999, t_);
        for (size_t i = 0; i < params.count(); ++i) {
            Tensor& p = params.tensor(i);
            const Tensor& g = *grads[i];
            for (int64_t j = 0; j < p.numel(); ++j) {
                m_[i][j] = 0.9 * m_[i][j] + 0.1 * g[j];
                v_[i][j] = 0.999 * v_[i][j] + 0.001 * g[j] * g[j];
                p[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + 1e-8);
            }
        }
    }

private:
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

double decayed_lr(double lr0, double final_fraction, int step, int total) {
    if (total <= 1) return lr0;
    return lr0 * std::pow(final_fraction, static_cast<double>(step) / (total - 1));
}

struct RayBatch {
    std::vector<PixelRef> refs;
    std::vector<Ray> rays;
    Tensor target;  // [B,3]
};

RayBatch sample_rays(const Dataset& ds, int count, bool foreground_only, Rng& rng) {
    RayBatch batch;
    const int W = ds.cfg.image_size, H = ds.cfg.image_size;
    const int V = static_cast<int>(ds.train_views.size());
    batch.target = Tensor::zeros({count, 3});
    for (int i = 0; i < count; ++i) {
        PixelRef ref;
        while (true) {
            ref.view = static_cast<int>(rng.below(static_cast<uint64_t>(V)));
            ref.u = static_cast<int>(rng.below(static_cast<uint64_t>(W)));
            ref.v = static_cast<int>(rng.below(static_cast<uint64_t>(H)));
            if (!foreground_only || ds.train_views[static_cast<size_t>(ref.view)].labels.at(ref.u, ref.v) != 0)
                break;
        }
        batch.refs.push_back(ref);
        batch.rays.push_back(pixel_ray(ds.train_cams[static_cast<size_t>(ref.view)], ref.u, ref.v,
                                       ds.cfg.near, ds.cfg.far));
        const Tensor& img = ds.train_views[static_cast<size_t>(ref.view)].image;
        for (int c = 0; c < 3; ++c)
            batch.target.at(i, c) = img[(static_cast<int64_t>(ref.v) * W + ref.u) * 3 + c];
    }
    return batch;
}

std::vector<const Tensor*> collect_grads(const Tape& tape, const ParamNodes& nodes) {
    std::vector<const Tensor*> grads;
    for (NodeId id : nodes.ids) grads.push_back(&tape.grad(id));
    return grads;
}

}  // namespace

FieldParams train_photometric(const FieldParams& start, const Dataset& ds, const TrainConfig& cfg,
                              std::vector<TraceRow>* trace) {
    if (ds.train_views.empty()) throw Error("train: empty dataset");
    FieldParams params = start;
    Adam adam(params);
    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng(mix_seed(cfg.seed, 0x7a11, static_cast<uint64_t>(step)));
        RayBatch batch = sample_rays(ds, cfg.batch_rays, false, rng);
        Tape tape;
        ParamNodes nodes = insert_params(tape, params, true);
        RaySamples samples = make_samples(batch.rays, cfg.n_samples,
                                          mix_seed(cfg.seed, 0x5a3e, static_cast<uint64_t>(step)));
        RenderGraph g = build_render_graph(tape, nodes, params, samples);
        NodeId diff = tape.sub(g.rgb, tape.constant(std::move(batch.target)));
        NodeId loss = tape.mean_all(tape.mul(diff, diff));
        const double lval = tape.scalar(loss);
        if (!std::isfinite(lval))
            throw Error("train: loss diverged (non-finite) at step " + std::to_string(step));
        tape.backward(loss);
        adam.step(params, collect_grads(tape, nodes),
                  decayed_lr(cfg.lr, cfg.lr_final_fraction, step, cfg.steps));
        if (trace) trace->push_back({step, lval, 0.0, 0.0, 0.0, 0.0});
    }
    return params;
}

ShapeResult shape(const FieldParams& start, const Dataset& ds, const AffinityProvider& affinity,
                  const ShapingConfig& cfg) {
    cfg.validate();
    if (ds.train_views.empty()) throw Error("shape: empty dataset");
    ShapeResult result;
    result.params = start;
    Adam adam(result.params);
    double threshold = cfg.thr_init;
    const int B = cfg.batch_rays;

    for (int step = 0; step < cfg.epochs; ++step) {
        Rng rng(mix_seed(cfg.seed, 0x517e, static_cast<uint64_t>(step)));
        RayBatch contrastive = sample_rays(ds, B, true, rng);
        RayBatch photo = sample_rays(ds, cfg.photo_rays, false, rng);

        // affinity scores drive the positive/negative split
        Tensor scores = Tensor::zeros({B, B});
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < B; ++j)
                scores.at(i, j) =
                    i == j ? 1.0 : affinity.similarity(contrastive.refs[static_cast<size_t>(i)],
                                                       contrastive.refs[static_cast<size_t>(j)]);
        auto [pairs, next_threshold] = select_pairs(scores, threshold, cfg);

        Tape tape;
        ParamNodes nodes = insert_params(tape, result.params, true);
        const uint64_t sample_seed = mix_seed(cfg.seed, 0xc0de, static_cast<uint64_t>(step));
        RaySamples cs = make_samples(contrastive.rays, cfg.n_samples, sample_seed);
        RenderGraph cg = build_render_graph(tape, nodes, result.params, cs);
        RaySamples ps = make_samples(photo.rays, cfg.n_samples, mix_seed(sample_seed, 0xf0));
        RenderGraph pg = build_render_graph(tape, nodes, result.params, ps);

        // L_nerf over both ray sets
        NodeId dc = tape.sub(cg.rgb, tape.constant(std::move(contrastive.target)));
        NodeId dp = tape.sub(pg.rgb, tape.constant(std::move(photo.target)));
        NodeId sum_sq = tape.add(tape.sum_all(tape.mul(dc, dc)), tape.sum_all(tape.mul(dp, dp)));
        NodeId l_nerf = tape.scale(sum_sq, 1.0 / (3.0 * (B + cfg.photo_rays)));

        NodeId total = l_nerf;
        double l_mig_val = 0.0, l_norm_val = 0.0;
        if (cfg.mig_graph_enabled) {
            NodeId j_rows = build_jacobian_rows(tape, cg, B, cfg.n_samples,
                                                result.params.config().hidden);
            int skipped = 0;
            NodeId l_mig = build_mig_loss(tape, j_rows, pairs, cfg.tau, &skipped);
            result.skipped_anchors += skipped;
            NodeId l_norm = build_norm_penalty(tape, j_rows);
            l_mig_val = tape.scalar(l_mig);
            l_norm_val = tape.scalar(l_norm);
            total = tape.add(total, tape.add(tape.scale(l_mig, cfg.lambda),
                                             tape.scale(l_norm, cfg.gamma)));

            // analytic rows must agree with the reverse-mode reference
            if (cfg.check_every > 0 && step % cfg.check_every == 0) {
                PerturbationSpec spec =
                    make_single_layer_spec(result.params, FieldParams::kDesignatedLayer, 1e-3);
                PixelJacobian ref = pixel_jacobian_ad(result.params, contrastive.rays[0], spec,
                                                      cfg.n_samples, mix_seed(sample_seed, 0));
                const Tensor& rows = tape.value(j_rows);
                double max_rel = 0.0;
                for (int64_t k = 0; k < rows.cols(); ++k) {
                    const double denom = std::max(std::fabs(ref.values[static_cast<size_t>(k)]), 1e-9);
                    max_rel = std::max(max_rel, std::fabs(rows.at(0, k) - ref.values[static_cast<size_t>(k)]) / denom);
                }
                result.max_jacobian_check_rel = std::max(result.max_jacobian_check_rel, max_rel);
                if (max_rel > 1e-6)
                    throw Error("shape: analytic jacobian diverged from AD reference at step " +
                                std::to_string(step));
            }
        }

        const double l_nerf_val = tape.scalar(l_nerf);
        const double total_val = tape.scalar(total);
        if (!std::isfinite(total_val))
            throw Error("shape: loss diverged (non-finite) at step " + std::to_string(step));
        tape.backward(total);
        adam.step(result.params, collect_grads(tape, nodes),
                  decayed_lr(cfg.lr, cfg.lr_final_fraction, step, cfg.epochs));

        result.trace.push_back({step, l_nerf_val, l_mig_val, l_norm_val, threshold,
                                pairs.pos_ratio});
        threshold = next_threshold;
    }
    result.params.shaped_tag = true;
    return result;
}

}  // namespace mirf
