#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mirf/camera.hpp"
#include "mirf/field.hpp"
#include "mirf/render.hpp"
#include "mirf/tensor.hpp"

namespace mirf {

// Label propagation by delta perturbations along seed-pixel gradients: each
// labeled class perturbs the designated layer along its (normalized) seed
// Jacobian, and target pixels respond in proportion to how aligned their own
// Jacobians are.

struct SeedLabels {
    int view = 0;  // source view id
    struct Entry {
        int u = 0, v = 0;
        int class_id = 0;
    };
    std::vector<Entry> pixels;
    enum Mode { Semantic, Instance } mode = Semantic;

    int n_classes() const;
    void validate_sparse() const;  // exactly one pixel per class, ids 1..K
};

// one random labeled pixel per class present in the source labels
SeedLabels make_sparse_seeds(const LabelImage& labels, int view, uint64_t seed,
                             SeedLabels::Mode mode = SeedLabels::Semantic);

std::string seeds_to_text(const SeedLabels& seeds);
SeedLabels seeds_from_text(const std::string& text);

struct PropConfig {
    int n_samples = 32;
    uint64_t seed = 0;
    double near = 0.1;
    double far = 6.0;
    bool importance = false;
};

struct PropagationResult {
    Tensor logits;          // [H,W,K], absolute responses (>= 0)
    LabelImage labels;      // argmax class, 0 where all logits are zero
    double sigma = 0.0;
    std::string variant;    // "2d" | "3d"
    std::vector<int> unpropagatable;  // classes with degenerate seed jacobians
    bool empty = false;     // sigma == 0: nothing propagated
    int tie_count = 0;
};

PropagationResult propagate_sparse_2d(const FieldParams& params, const Camera& source_cam,
                                      const SeedLabels& seeds, const Camera& target_cam,
                                      double sigma, const PropConfig& cfg);

// responses measured per sample point in 3-D, then accumulated with the
// unperturbed quadrature weights
PropagationResult propagate_sparse_3d(const FieldParams& params, const Camera& source_cam,
                                      const SeedLabels& seeds, const Camera& target_cam,
                                      double sigma, const PropConfig& cfg);

// ---- dense setting ----

struct GradientSelection {
    // 5 qualified selections of K unit directions each (flat rgb.w space)
    std::vector<std::vector<std::vector<double>>> selections;
    std::vector<double> miou_trace;  // source reconstruction after each accept
    bool complete = false;           // got all requested selections
    Tensor source_responses;         // [H,W,K] accumulated max responses
};

// Repeatedly samples 20 combinations of one labeled pixel per class, keeps a
// combination only when it improves source-view reconstruction, and stops
// after `wanted` qualified selections or `max_rounds` rounds.
GradientSelection adaptive_gradient_sampling(const FieldParams& params, const Camera& source_cam,
                                             const LabelImage& source_labels, int n_classes,
                                             double sigma, const PropConfig& cfg, int wanted = 5,
                                             int combos_per_round = 20, int max_rounds = 50);

// per-class max response over the qualified selections on an arbitrary view
Tensor dense_responses(const FieldParams& params, const GradientSelection& sel,
                       const Camera& view_cam, double sigma, const PropConfig& cfg);

PropagationResult argmax_responses(const Tensor& responses, double sigma,
                                   const std::string& variant);

// ---- aggregation decoder (dense setting) ----

struct AggConfig {
    int iters = 20000;
    int batch = 256;
    double lr = 1e-3;
    uint64_t seed = 0;
};

// bias-free 3-layer decoder: K -> 256 -> 128 -> K with rectifier activations
struct AggModel {
    Tensor w1, w2, w3;
    double input_scale = 1.0;

    void save(const std::string& path) const;
    static AggModel load(const std::string& path);
};

AggModel train_aggregation_mlp(const Tensor& source_responses, const LabelImage& source_labels,
                               int n_classes, const AggConfig& cfg);
LabelImage apply_aggregation(const AggModel& model, const Tensor& responses);

// ---- entity re-coloring ----

// perturbs the designated layer along the per-channel jacobians of one seed
// pixel, weighted by the requested color delta, and renders the target view
Tensor recolor_entity(const FieldParams& params, const Camera& source_cam, int u, int v,
                      const double delta[3], double sigma, const Camera& target_cam,
                      const PropConfig& cfg);

}  // namespace mirf
