#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mirf/field.hpp"
#include "mirf/scene.hpp"
#include "mirf/tape.hpp"

namespace mirf {

struct TrainConfig {
    int steps = 5000;
    int batch_rays = 256;
    double lr = 5e-4;               // initial; decays exponentially
    double lr_final_fraction = 0.1;
    int n_samples = 32;
    uint64_t seed = 0;
};

enum class AffinitySource { GroundTruth, FeatureFile };

struct ShapingConfig {
    double lambda = 0.01;  // contrastive weight
    double gamma = 0.01;   // norm-penalty weight
    double tau = 0.1;      // temperature
    int batch_rays = 64;   // contrastive rays per epoch, foreground only
    int photo_rays = 192;  // extra reconstruction rays per epoch
    double thr_init = 0.65;
    double thr_lo = 0.5, thr_hi = 0.8;
    double thr_step = 0.001;
    double ratio_lo = 0.05, ratio_hi = 0.15;
    double lr = 5e-4;               // initial; decays exponentially
    double lr_final_fraction = 0.1;
    int epochs = 10000;
    int n_samples = 32;
    AffinitySource affinity = AffinitySource::GroundTruth;
    std::string feature_file;  // [V,H,W,F] tensor, used with FeatureFile
    bool instance_mode = false;
    uint64_t seed = 0;
    bool mig_graph_enabled = true;  // off: same sampling, reconstruction only
    int check_every = 1;            // analytic-vs-AD jacobian check cadence

    void validate() const;
};

struct PixelRef {
    int view = 0;
    int u = 0, v = 0;
};

// Positive/negative split of one contrastive batch. Anchor i's candidate set
// is the rest of the batch, so |pos|+|neg| = batch size - 1 per anchor.
struct PairBatch {
    std::vector<std::vector<int>> positives;
    std::vector<std::vector<int>> negatives;
    Tensor similarity;  // [B,B] scores that produced the split
    double pos_ratio = 0.0;
};

// Pairwise similarity surrogate for mutual information.
class AffinityProvider {
public:
    virtual ~AffinityProvider() = default;
    virtual double similarity(const PixelRef& a, const PixelRef& b) const = 0;
};

// same semantic (or instance) id => 1, else 0; background never matches
class LabelAffinity : public AffinityProvider {
public:
    LabelAffinity(const Dataset& ds, bool instance_mode)
        : ds_(ds), instance_(instance_mode) {}
    double similarity(const PixelRef& a, const PixelRef& b) const override;

private:
    const Dataset& ds_;
    bool instance_;
};

// cosine similarity of externally supplied per-pixel feature vectors
class FeatureAffinity : public AffinityProvider {
public:
    FeatureAffinity(Tensor features);  // [V,H,W,F]
    double similarity(const PixelRef& a, const PixelRef& b) const override;

private:
    Tensor features_;
};

// Splits each anchor's candidates by the threshold and adapts it for the next
// step: -step if the positive ratio is below ratio_lo, +step if above
// ratio_hi, clamped to [thr_lo, thr_hi].
std::pair<PairBatch, double> select_pairs(const Tensor& similarity, double threshold,
                                          const ShapingConfig& cfg);

// InfoNCE over |cos| of jacobian rows; one term per (anchor, positive) pair,
// anchors without positives (or with degenerate jacobians) are skipped.
NodeId build_mig_loss(Tape& tape, NodeId j_rows, const PairBatch& pairs, double tau,
                      int* skipped_anchors = nullptr);
// mean over anchors of (1 - |J_i|)^2
NodeId build_norm_penalty(Tape& tape, NodeId j_rows);

// standalone evaluations (tape-backed) for probing and tests
double mig_loss(const std::vector<std::vector<double>>& jacobian_rows, const PairBatch& pairs,
                double tau);
double norm_penalty(const std::vector<std::vector<double>>& jacobian_rows);

struct TraceRow {
    int step = 0;
    double l_nerf = 0, l_mig = 0, l_norm = 0;
    double threshold = 0, pos_ratio = 0;
};
std::string trace_to_csv(const std::vector<TraceRow>& rows);

// Phase 1: photometric reconstruction with Adam on sampled rays.
FieldParams train_photometric(const FieldParams& start, const Dataset& ds, const TrainConfig& cfg,
                              std::vector<TraceRow>* trace = nullptr);

// Phase 2: reconstruction + contrastive jacobian alignment + norm penalty.
struct ShapeResult {
    FieldParams params;
    std::vector<TraceRow> trace;
    int skipped_anchors = 0;
    double max_jacobian_check_rel = 0.0;
};
ShapeResult shape(const FieldParams& start, const Dataset& ds, const AffinityProvider& affinity,
                  const ShapingConfig& cfg);

}  // namespace mirf
