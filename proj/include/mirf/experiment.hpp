#pragma once

#include <string>
#include <vector>

#include "mirf/config.hpp"
#include "mirf/metrics.hpp"
#include "mirf/propagation.hpp"
#include "mirf/scene.hpp"
#include "mirf/shaping.hpp"

namespace mirf {

// End-to-end experiment: scene -> dataset -> train -> shape -> propagate ->
// metrics, with every artifact written under an output directory and a
// manifest recording every seed and the config hash.

struct ExperimentConfig {
    std::string experiment_id = "exp";
    std::string out_dir = "run";
    uint64_t seed = 1;
    uint64_t scene_seed = 1;
    int n_objects = 4;

    DatasetConfig dataset;
    int train_views = 24;
    int test_views = 6;
    int n_samples = 32;

    TrainConfig train;
    ShapingConfig shaping;

    std::string mode = "sparse";   // sparse | dense
    std::string variant = "2d";    // 2d | 3d
    double sigma = 0.1;
    double label_density = 1.0;    // dense mode: fraction of each class kept
    int source_view = 0;
    bool instance_mode = false;

    AggConfig agg;
    int dense_wanted = 5;
    int dense_combos = 20;
    int dense_rounds = 50;

    static const std::vector<std::string>& known_keys();
    static ExperimentConfig from_config(const Config& cfg);
    Config to_config() const;
};

struct ExperimentReport {
    MetricReport mean;                   // averaged over target views
    std::vector<MetricReport> per_view;
    MetricReport dense_raw_mean;         // dense mode: argmax before decoding
    uint64_t config_hash = 0;
    std::string out_dir;
};

ExperimentReport run_experiment(const ExperimentConfig& cfg);

// metrics CSV row: experiment_id, mode, variant, sigma, density, mIoU,
// avg_acc, total_acc
std::string metrics_csv_header();
std::string metrics_csv_row(const ExperimentConfig& cfg, const MetricReport& rep);

// dense-label ablation: a random connected patch per class covering the
// requested fraction of that class's pixels
LabelImage density_subsample(const LabelImage& full, double fraction, uint64_t seed);

}  // namespace mirf
