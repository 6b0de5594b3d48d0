#include "mirf/experiment.hpp"

#include <cmath>
#include <deque>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mirf/io.hpp"
#include "mirf/rng.hpp"

namespace mirf {

const std::vector<std::string>& ExperimentConfig::known_keys() {
    static const std::vector<std::string> keys = {
        "experiment_id", "out_dir", "seed", "scene_seed", "n_objects", "image_size", "fov_deg",
        "orbit_radius", "near", "far", "n_samples", "train_views", "test_views", "train_steps",
        "train_batch_rays", "train_lr", "shape_steps", "lambda", "gamma", "tau", "batch_rays",
        "photo_rays", "thr_init", "thr_lo", "thr_hi", "thr_step", "ratio_lo", "ratio_hi",
        "shape_lr", "affinity", "feature_file", "mode", "variant", "sigma", "label_density",
        "source_view", "instance_mode", "agg_iters", "agg_batch", "agg_lr", "dense_wanted",
        "dense_combos", "dense_rounds"};
    return keys;
}

ExperimentConfig ExperimentConfig::from_config(const Config& cfg) {
    cfg.require_known(known_keys());
    ExperimentConfig e;
    e.experiment_id = cfg.get_str("experiment_id", e.experiment_id);
    e.out_dir = cfg.get_str("out_dir", e.out_dir);
    e.seed = cfg.get_u64("seed", e.seed);
    e.scene_seed = cfg.get_u64("scene_seed", e.seed);
    e.n_objects = cfg.get_int("n_objects", e.n_objects);
    e.dataset.image_size = cfg.get_int("image_size", e.dataset.image_size);
    e.dataset.fov_deg = cfg.get_double("fov_deg", e.dataset.fov_deg);
    e.dataset.orbit_radius = cfg.get_double("orbit_radius", e.dataset.orbit_radius);
    e.dataset.near = cfg.get_double("near", e.dataset.near);
    e.dataset.far = cfg.get_double("far", e.dataset.far);
    e.n_samples = cfg.get_int("n_samples", e.n_samples);
    e.train_views = cfg.get_int("train_views", e.train_views);
    e.test_views = cfg.get_int("test_views", e.test_views);

    e.train.steps = cfg.get_int("train_steps", 1500);
    e.train.batch_rays = cfg.get_int("train_batch_rays", 256);
    e.train.lr = cfg.get_double("train_lr", 5e-4);
    e.train.n_samples = e.n_samples;
    e.train.seed = mix_seed(e.seed, 0x7e1);

    e.shaping.epochs = cfg.get_int("shape_steps", 800);
    e.shaping.lambda = cfg.get_double("lambda", e.shaping.lambda);
    e.shaping.gamma = cfg.get_double("gamma", e.shaping.gamma);
    e.shaping.tau = cfg.get_double("tau", e.shaping.tau);
    e.shaping.batch_rays = cfg.get_int("batch_rays", e.shaping.batch_rays);
    e.shaping.photo_rays = cfg.get_int("photo_rays", e.shaping.photo_rays);
    e.shaping.thr_init = cfg.get_double("thr_init", e.shaping.thr_init);
    e.shaping.thr_lo = cfg.get_double("thr_lo", e.shaping.thr_lo);
    e.shaping.thr_hi = cfg.get_double("thr_hi", e.shaping.thr_hi);
    e.shaping.thr_step = cfg.get_double("thr_step", e.shaping.thr_step);
    e.shaping.ratio_lo = cfg.get_double("ratio_lo", e.shaping.ratio_lo);
    e.shaping.ratio_hi = cfg.get_double("ratio_hi", e.shaping.ratio_hi);
    e.shaping.lr = cfg.get_double("shape_lr", e.shaping.lr);
    e.shaping.n_samples = e.n_samples;
    e.shaping.seed = mix_seed(e.seed, 0x54a);
    const std::string aff = cfg.get_str("affinity", "gt");
    if (aff == "gt")
        e.shaping.affinity = AffinitySource::GroundTruth;
    else if (aff == "feature-file")
        e.shaping.affinity = AffinitySource::FeatureFile;
    else
        throw ConfigError("config key affinity: want gt | feature-file, got " + aff);
    e.shaping.feature_file = cfg.get_str("feature_file", "");
    e.instance_mode = cfg.get_bool("instance_mode", e.instance_mode);
    e.shaping.instance_mode = e.instance_mode;

    e.mode = cfg.get_str("mode", e.mode);
    if (e.mode != "sparse" && e.mode != "dense")
        throw ConfigError("config key mode: want sparse | dense, got " + e.mode);
    e.variant = cfg.get_str("variant", e.variant);
    if (e.variant != "2d" && e.variant != "3d")
        throw ConfigError("config key variant: want 2d | 3d, got " + e.variant);
    e.sigma = cfg.get_double("sigma", e.sigma);
    e.label_density = cfg.get_double("label_density", e.label_density);
    if (!(e.label_density > 0.0 && e.label_density <= 1.0))
        throw ConfigError("config key label_density: want (0,1]");
    e.source_view = cfg.get_int("source_view", e.source_view);

    e.agg.iters = cfg.get_int("agg_iters", 3000);
    e.agg.batch = cfg.get_int("agg_batch", 256);
    e.agg.lr = cfg.get_double("agg_lr", e.agg.lr);
    e.agg.seed = mix_seed(e.seed, 0xa66);
    e.dense_wanted = cfg.get_int("dense_wanted", e.dense_wanted);
    e.dense_combos = cfg.get_int("dense_combos", e.dense_combos);
    e.dense_rounds = cfg.get_int("dense_rounds", e.dense_rounds);
    return e;
}

Config ExperimentConfig::to_config() const {
    Config c;
    auto num = [](double v) {
        std::ostringstream ss;
        ss.precision(17);
        ss << v;
        return ss.str();
    };
    c.set("experiment_id", experiment_id);
    c.set("out_dir", out_dir);
    c.set("seed", std::to_string(seed));
    c.set("scene_seed", std::to_string(scene_seed));
    c.set("n_objects", std::to_string(n_objects));
    c.set("image_size", std::to_string(dataset.image_size));
    c.set("fov_deg", num(dataset.fov_deg));
    c.set("orbit_radius", num(dataset.orbit_radius));
    c.set("near", num(dataset.near));
    c.set("far", num(dataset.far));
    c.set("n_samples", std::to_string(n_samples));
    c.set("train_views", std::to_string(train_views));
    c.set("test_views", std::to_string(test_views));
    c.set("train_steps", std::to_string(train.steps));
    c.set("train_batch_rays", std::to_string(train.batch_rays));
    c.set("train_lr", num(train.lr));
    c.set("shape_steps", std::to_string(shaping.epochs));
    c.set("lambda", num(shaping.lambda));
    c.set("gamma", num(shaping.gamma));
    c.set("tau", num(shaping.tau));
    c.set("batch_rays", std::to_string(shaping.batch_rays));
    c.set("photo_rays", std::to_string(shaping.photo_rays));
    c.set("thr_init", num(shaping.thr_init));
    c.set("thr_lo", num(shaping.thr_lo));
    c.set("thr_hi", num(shaping.thr_hi));
    c.set("thr_step", num(shaping.thr_step));
    c.set("ratio_lo", num(shaping.ratio_lo));
    c.set("ratio_hi", num(shaping.ratio_hi));
    c.set("shape_lr", num(shaping.lr));
    c.set("affinity", shaping.affinity == AffinitySource::GroundTruth ? "gt" : "feature-file");
    if (!shaping.feature_file.empty()) c.set("feature_file", shaping.feature_file);
    c.set("mode", mode);
    c.set("variant", variant);
    c.set("sigma", num(sigma));
    c.set("label_density", num(label_density));
    c.set("source_view", std::to_string(source_view));
    c.set("instance_mode", instance_mode ? "true" : "false");
    c.set("agg_iters", std::to_string(agg.iters));
    c.set("agg_batch", std::to_string(agg.batch));
    c.set("agg_lr", num(agg.lr));
    c.set("dense_wanted", std::to_string(dense_wanted));
    c.set("dense_combos", std::to_string(dense_combos));
    c.set("dense_rounds", std::to_string(dense_rounds));
    return c;
}

std::string metrics_csv_header() {
    return "experiment_id,mode,variant,sigma,density,mIoU,avg_acc,total_acc\n";
}

std::string metrics_csv_row(const ExperimentConfig& cfg, const MetricReport& rep) {
    std::ostringstream ss;
    ss.precision(10);
    ss << cfg.experiment_id << "," << cfg.mode << "," << cfg.variant << "," << cfg.sigma << ","
       << cfg.label_density << "," << rep.miou << "," << rep.avg_class_acc << "," << rep.total_acc
       << "\n";
    return ss.str();
}

LabelImage density_subsample(const LabelImage& full, double fraction, uint64_t seed) {
    if (fraction >= 1.0) return full;
    LabelImage out(full.width, full.height);
    std::map<int, std::vector<int>> by_class;  // flat pixel indices
    for (size_t i = 0; i < full.ids.size(); ++i)
        if (full.ids[i] >= 1) by_class[full.ids[i]].push_back(static_cast<int>(i));

    Rng rng(mix_seed(seed, 0xde2));
    for (auto& [cls, pixels] : by_class) {
        const int target = std::max<int>(1, static_cast<int>(std::llround(fraction * pixels.size())));
        std::set<int> in_class(pixels.begin(), pixels.end());
        std::set<int> chosen;
        std::deque<int> frontier;
        while (static_cast<int>(chosen.size()) < target) {
            if (frontier.empty()) {
                // new connected component seed
                int start;
                do {
                    start = pixels[rng.below(pixels.size())];
                } while (chosen.count(start));
                frontier.push_back(start);
            }
            const int cur = frontier.front();
            frontier.pop_front();
            if (chosen.count(cur)) continue;
            chosen.insert(cur);
            const int u = cur % full.width, v = cur / full.width;
            const int du[4] = {1, -1, 0, 0}, dv[4] = {0, 0, 1, -1};
            for (int d = 0; d < 4; ++d) {
                const int nu = u + du[d], nv = v + dv[d];
                if (nu < 0 || nv < 0 || nu >= full.width || nv >= full.height) continue;
                const int ni = nv * full.width + nu;
                if (in_class.count(ni) && !chosen.count(ni)) frontier.push_back(ni);
            }
        }
        for (int i : chosen) out.ids[static_cast<size_t>(i)] = cls;
    }
    return out;
}

namespace {

template <class F>
auto stage(const std::string& name, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error("stage " + name + ": " + e.what());
    }
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
    MetricReport mean;
    if (reports.empty()) return mean;
    for (const MetricReport& r : reports) {
        mean.miou += r.miou;
        mean.avg_class_acc += r.avg_class_acc;
        mean.total_acc += r.total_acc;
    }
    mean.miou /= reports.size();
    mean.avg_class_acc /= reports.size();
    mean.total_acc /= reports.size();
    mean.seen = reports[0].seen;
    return mean;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    ExperimentReport report;
    report.out_dir = cfg.out_dir;
    report.config_hash = cfg.to_config().hash();
    fs::create_directories(cfg.out_dir);

    SceneSpec scene = stage("scene", [&] { return generate_scene(cfg.n_objects, cfg.scene_seed); });
    io::write_text(cfg.out_dir + "/scene.txt", scene_to_text(scene));

    Dataset ds = stage("dataset", [&] {
        return make_dataset(scene, cfg.train_views, cfg.test_views, mix_seed(cfg.seed, 0xd5),
                            cfg.dataset);
    });
    ds.save(cfg.out_dir + "/dataset");

    FieldParams photo = stage("train", [&] {
        FieldParams init = FieldParams::init(FieldConfig{}, mix_seed(cfg.seed, 0x141));
        return train_photometric(init, ds, cfg.train);
    });
    photo.save(cfg.out_dir + "/ck_photo.jtns");

    FieldParams shaped = stage("shape", [&] {
        if (cfg.shaping.affinity == AffinitySource::GroundTruth) {
            LabelAffinity aff(ds, cfg.instance_mode);
            ShapeResult res = shape(photo, ds, aff, cfg.shaping);
            io::write_text(cfg.out_dir + "/trace.csv", trace_to_csv(res.trace));
            return res.params;
        }
        FeatureAffinity aff(io::read_tensor(cfg.shaping.feature_file));
        ShapeResult res = shape(photo, ds, aff, cfg.shaping);
        io::write_text(cfg.out_dir + "/trace.csv", trace_to_csv(res.trace));
        return res.params;
    });
    shaped.save(cfg.out_dir + "/ck_shaped.jtns");

    const GtView& source = ds.train_views[static_cast<size_t>(cfg.source_view)];
    const LabelImage& source_full = cfg.instance_mode ? source.instances : source.labels;
    const Camera& source_cam = ds.train_cams[static_cast<size_t>(cfg.source_view)];
    PropConfig prop;
    prop.n_samples = cfg.n_samples;
    prop.seed = mix_seed(cfg.seed, 0x960);
    prop.near = cfg.dataset.near;
    prop.far = cfg.dataset.far;

    std::vector<MetricReport> per_view, raw_per_view;
    stage("propagate", [&] {
        const std::vector<int> seen = seen_classes(source_full);
        if (cfg.mode == "sparse") {
            SeedLabels seeds = make_sparse_seeds(source_full, cfg.source_view,
                                                 mix_seed(cfg.seed, 0x5ee),
                                                 cfg.instance_mode ? SeedLabels::Instance
                                                                   : SeedLabels::Semantic);
            io::write_text(cfg.out_dir + "/seeds.txt", seeds_to_text(seeds));
            for (size_t t = 0; t < ds.test_cams.size(); ++t) {
                PropagationResult res =
                    cfg.variant == "2d"
                        ? propagate_sparse_2d(shaped, source_cam, seeds, ds.test_cams[t], cfg.sigma, prop)
                        : propagate_sparse_3d(shaped, source_cam, seeds, ds.test_cams[t], cfg.sigma, prop);
                io::write_tensor(cfg.out_dir + "/prop_logits_" + std::to_string(t) + ".jtns", res.logits);
                io::write_label_ppm(cfg.out_dir + "/prop_labels_" + std::to_string(t) + ".ppm", res.labels);
                const LabelImage& gt = cfg.instance_mode ? ds.test_views[t].instances
                                                         : ds.test_views[t].labels;
                per_view.push_back(compute_metrics(res.labels, gt, seen));
            }
        } else {
            LabelImage source_used = density_subsample(source_full, cfg.label_density,
                                                       mix_seed(cfg.seed, 0xde5));
            const int K = scene.n_classes();
            GradientSelection sel = adaptive_gradient_sampling(
                shaped, source_cam, source_used, K, cfg.sigma, prop, cfg.dense_wanted,
                cfg.dense_combos, cfg.dense_rounds);
            AggModel model = train_aggregation_mlp(sel.source_responses, source_used, K, cfg.agg);
            model.save(cfg.out_dir + "/agg_model.jtns");
            for (size_t t = 0; t < ds.test_cams.size(); ++t) {
                Tensor responses = dense_responses(shaped, sel, ds.test_cams[t], cfg.sigma, prop);
                PropagationResult raw = argmax_responses(responses, cfg.sigma, cfg.variant);
                LabelImage decoded = apply_aggregation(model, responses);
                io::write_tensor(cfg.out_dir + "/prop_logits_" + std::to_string(t) + ".jtns", responses);
                io::write_label_ppm(cfg.out_dir + "/prop_labels_" + std::to_string(t) + ".ppm", decoded);
                const LabelImage& gt = cfg.instance_mode ? ds.test_views[t].instances
                                                         : ds.test_views[t].labels;
                per_view.push_back(compute_metrics(decoded, gt, seen));
                raw_per_view.push_back(compute_metrics(raw.labels, gt, seen));
            }
        }
        return 0;
    });

    report.per_view = per_view;
    report.mean = stage("metrics", [&] { return mean_report(per_view); });
    report.dense_raw_mean = mean_report(raw_per_view);

    std::string csv = metrics_csv_header() + metrics_csv_row(cfg, report.mean);
    io::write_text(cfg.out_dir + "/metrics.csv", csv);

    nlohmann::json manifest;
    manifest["experiment_id"] = cfg.experiment_id;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(report.config_hash));
    manifest["config_hash"] = hex;
    for (const auto& [k, v] : cfg.to_config().entries()) manifest["config"][k] = v;
    manifest["stage_seeds"] = {
        {"scene", cfg.scene_seed},
        {"dataset", mix_seed(cfg.seed, 0xd5)},
        {"train", cfg.train.seed},
        {"shape", cfg.shaping.seed},
        {"propagate", prop.seed},
    };
    manifest["artifacts"] = {"scene.txt", "dataset", "ck_photo.jtns", "ck_shaped.jtns",
                             "trace.csv", "metrics.csv"};
    io::write_text(cfg.out_dir + "/manifest.json", manifest.dump(2) + "\n");
    return report;
}

}  // namespace mirf
