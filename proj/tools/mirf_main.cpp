// Command-line front end: scene generation, training, shaping, MI probes,
// label propagation, re-coloring, evaluation, and the end-to-end experiment
// harness. Exit codes: 0 ok, 1 stage error, 2 config error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mirf/config.hpp"
#include "mirf/experiment.hpp"
#include "mirf/io.hpp"
#include "mirf/jacobian.hpp"
#include "mirf/metrics.hpp"
#include "mirf/mi.hpp"
#include "mirf/propagation.hpp"
#include "mirf/render.hpp"
#include "mirf/scene.hpp"
#include "mirf/shaping.hpp"

using namespace mirf;

namespace {

// config file + explicit flag overrides -> one Config
Config merge_config(const std::string& config_path, const Config& overrides) {
    Config cfg = config_path.empty() ? Config{} : Config::parse_file(config_path);
    for (const auto& [k, v] : overrides.entries()) cfg.set(k, v);
    return cfg;
}

const Camera& pick_cam(const Dataset& ds, const std::string& split, int view) {
    const auto& cams = split == "test" ? ds.test_cams : ds.train_cams;
    if (view < 0 || view >= static_cast<int>(cams.size()))
        throw Error("view " + std::to_string(view) + " out of range for split " + split);
    return cams[static_cast<size_t>(view)];
}

const GtView& pick_view(const Dataset& ds, const std::string& split, int view) {
    const auto& views = split == "test" ? ds.test_views : ds.train_views;
    if (view < 0 || view >= static_cast<int>(views.size()))
        throw Error("view " + std::to_string(view) + " out of range for split " + split);
    return views[static_cast<size_t>(view)];
}

struct RunPaths {
    std::string dir;
    std::string dataset() const { return dir + "/dataset"; }
    std::string photo() const { return dir + "/ck_photo.jtns"; }
    std::string shaped() const { return dir + "/ck_shaped.jtns"; }
};

FieldParams load_checkpoint(const RunPaths& run, const std::string& which) {
    if (which == "photo") return FieldParams::load(run.photo());
    if (which == "shaped") return FieldParams::load(run.shaped());
    return FieldParams::load(which);  // explicit path
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale radiance-field engine with mutual-information shaping"};
    app.require_subcommand(1);

    std::string config_path, run_dir, out_path, split = "test", checkpoint = "shaped";
    uint64_t seed = 1;
    app.add_option("--config", config_path, "key=value config file")->capture_default_str();

    // scene-gen
    auto* scene_gen = app.add_subcommand("scene-gen", "generate a synthetic scene");
    int sg_objects = 4;
    std::string sg_out = "scene.txt";
    scene_gen->add_option("--objects", sg_objects);
    scene_gen->add_option("--seed", seed);
    scene_gen->add_option("--out", sg_out);

    // train
    auto* train_cmd = app.add_subcommand("train", "build dataset and fit the field photometrically");
    train_cmd->add_option("--config", config_path);
    train_cmd->add_option("--out-dir", run_dir)->required();
    uint64_t train_seed_flag = 0;
    auto* train_seed_opt = train_cmd->add_option("--seed", train_seed_flag);

    // shape
    auto* shape_cmd = app.add_subcommand("shape", "mutual-information shaping of a trained field");
    shape_cmd->add_option("--config", config_path);
    shape_cmd->add_option("--run", run_dir)->required();
    auto* shape_seed_opt = shape_cmd->add_option("--seed", train_seed_flag);

    // render
    auto* render_cmd = app.add_subcommand("render", "render a checkpoint or the ground truth");
    int view_index = 0, n_samples_flag = 32;
    bool render_gt = false;
    render_cmd->add_option("--run", run_dir)->required();
    render_cmd->add_option("--checkpoint", checkpoint, "photo | shaped | path");
    render_cmd->add_option("--split", split, "train | test");
    render_cmd->add_option("--view", view_index);
    render_cmd->add_option("--samples", n_samples_flag);
    render_cmd->add_flag("--gt", render_gt, "render the exact scene instead of the field");
    render_cmd->add_option("--seed", seed);
    render_cmd->add_option("--out", out_path)->required();

    // mi-probe
    auto* mi_cmd = app.add_subcommand("mi-probe", "MI estimates for pixel pairs or a full map");
    std::string pairs_path, source_pixel, pattern = "layer";
    int mi_draws = 10000, mi_bins = 32;
    double mi_sigma = 1e-3;
    bool mi_map_mode = false;
    int64_t rn_dim = 64;
    mi_cmd->add_option("--run", run_dir)->required();
    mi_cmd->add_option("--checkpoint", checkpoint);
    mi_cmd->add_option("--pairs", pairs_path, "file: view_a u_a v_a view_b u_b v_b per line");
    mi_cmd->add_flag("--map", mi_map_mode, "closed-form MI map from one source pixel");
    mi_cmd->add_option("--source", source_pixel, "map mode: view:u:v in --split");
    mi_cmd->add_option("--target-view", view_index, "map mode: target view in --split");
    mi_cmd->add_option("--split", split);
    mi_cmd->add_option("--draws", mi_draws);
    mi_cmd->add_option("--bins", mi_bins);
    mi_cmd->add_option("--sigma", mi_sigma);
    mi_cmd->add_option("--pattern", pattern, "layer | block | random");
    mi_cmd->add_option("--random-dim", rn_dim, "index count for the random pattern");
    mi_cmd->add_option("--samples", n_samples_flag);
    mi_cmd->add_option("--seed", seed);
    mi_cmd->add_option("--out", out_path)->required();

    // propagate
    auto* prop_cmd = app.add_subcommand("propagate", "propagate labels from the source view");
    std::string prop_mode = "sparse", prop_variant = "2d", seeds_path;
    double prop_sigma = 0.1, prop_density = 1.0;
    int source_view = 0;
    prop_cmd->add_option("--run", run_dir)->required();
    prop_cmd->add_option("--checkpoint", checkpoint);
    prop_cmd->add_option("--mode", prop_mode, "sparse | dense");
    prop_cmd->add_option("--variant", prop_variant, "2d | 3d");
    prop_cmd->add_option("--sigma", prop_sigma)->capture_default_str();
    prop_cmd->add_option("--source-view", source_view, "train-split source view");
    prop_cmd->add_option("--target-view", view_index, "view in --split");
    prop_cmd->add_option("--split", split);
    prop_cmd->add_option("--seeds", seeds_path, "sparse seeds file: view u v class per line");
    prop_cmd->add_option("--density", prop_density, "dense mode label fraction");
    prop_cmd->add_option("--samples", n_samples_flag);
    prop_cmd->add_option("--seed", seed);
    prop_cmd->add_option("--out-dir", out_path)->required();

    // recolor
    auto* recolor_cmd = app.add_subcommand("recolor", "re-color an entity through one pixel");
    std::string pixel_spec, delta_spec = "0.5,0,0";
    double recolor_sigma = 0.1;
    recolor_cmd->add_option("--run", run_dir)->required();
    recolor_cmd->add_option("--checkpoint", checkpoint);
    recolor_cmd->add_option("--pixel", pixel_spec, "source pixel view:u:v (train split)")->required();
    recolor_cmd->add_option("--delta", delta_spec, "r,g,b color delta");
    recolor_cmd->add_option("--sigma", recolor_sigma);
    recolor_cmd->add_option("--target-view", view_index);
    recolor_cmd->add_option("--split", split);
    recolor_cmd->add_option("--samples", n_samples_flag);
    recolor_cmd->add_option("--seed", seed);
    recolor_cmd->add_option("--out", out_path)->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "segmentation metrics for predicted labels");
    std::string pred_path, gt_path, seen_spec;
    eval_cmd->add_option("--pred", pred_path)->required();
    eval_cmd->add_option("--gt", gt_path)->required();
    eval_cmd->add_option("--seen", seen_spec, "comma-separated class ids (default: ids in gt)");

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "full pipeline from a config file");
    exp_cmd->add_option("--config", config_path)->required();
    std::string exp_out_override;
    exp_cmd->add_option("--out-dir", exp_out_override);
    auto* exp_seed_opt = exp_cmd->add_option("--seed", train_seed_flag);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*scene_gen) {
            SceneSpec scene = generate_scene(sg_objects, seed);
            io::write_text(sg_out, scene_to_text(scene));
            std::printf("wrote %s (%d objects)\n", sg_out.c_str(), sg_objects);
        } else if (*train_cmd) {
            Config overrides;
            if (train_seed_opt->count()) overrides.set("seed", std::to_string(train_seed_flag));
            overrides.set("out_dir", run_dir);
            ExperimentConfig cfg = ExperimentConfig::from_config(merge_config(config_path, overrides));
            std::filesystem::create_directories(cfg.out_dir);
            SceneSpec scene = generate_scene(cfg.n_objects, cfg.scene_seed);
            io::write_text(cfg.out_dir + "/scene.txt", scene_to_text(scene));
            Dataset ds = make_dataset(scene, cfg.train_views, cfg.test_views,
                                      mix_seed(cfg.seed, 0xd5), cfg.dataset);
            ds.save(cfg.out_dir + "/dataset");
            FieldParams params = FieldParams::init(FieldConfig{}, mix_seed(cfg.seed, 0x141));
            params = train_photometric(params, ds, cfg.train);
            params.save(cfg.out_dir + "/ck_photo.jtns");
            double sum = 0;
            for (size_t t = 0; t < ds.test_cams.size(); ++t)
                sum += psnr(render_image(params, ds.test_cams[t], cfg.n_samples, 17, nullptr, true,
                                         false, cfg.dataset.near, cfg.dataset.far),
                            ds.test_views[t].image);
            std::printf("trained; held-out PSNR %.2f dB; wrote %s/ck_photo.jtns\n",
                        sum / ds.test_cams.size(), cfg.out_dir.c_str());
        } else if (*shape_cmd) {
            Config overrides;
            if (shape_seed_opt->count()) overrides.set("seed", std::to_string(train_seed_flag));
            overrides.set("out_dir", run_dir);
            ExperimentConfig cfg = ExperimentConfig::from_config(merge_config(config_path, overrides));
            RunPaths run{run_dir};
            Dataset ds = Dataset::load(run.dataset());
            FieldParams photo = FieldParams::load(run.photo());
            ShapeResult res = [&] {
                if (cfg.shaping.affinity == AffinitySource::GroundTruth) {
                    LabelAffinity aff(ds, cfg.instance_mode);
                    return shape(photo, ds, aff, cfg.shaping);
                }
                FeatureAffinity aff(io::read_tensor(cfg.shaping.feature_file));
                return shape(photo, ds, aff, cfg.shaping);
            }();
            res.params.save(run.shaped());
            io::write_text(run_dir + "/trace.csv", trace_to_csv(res.trace));
            std::printf("shaped (%d epochs, %d skipped anchors, max jacobian check %.2e); wrote %s\n",
                        cfg.shaping.epochs, res.skipped_anchors, res.max_jacobian_check_rel,
                        run.shaped().c_str());
        } else if (*render_cmd) {
            RunPaths run{run_dir};
            Dataset ds = Dataset::load(run.dataset());
            Tensor img = [&] {
                if (render_gt) return pick_view(ds, split, view_index).image;
                FieldParams params = load_checkpoint(run, checkpoint);
                return render_image(params, pick_cam(ds, split, view_index), n_samples_flag, seed,
                                    nullptr, true, false, ds.cfg.near, ds.cfg.far);
            }();
            if (out_path.size() > 4 && out_path.substr(out_path.size() - 4) == ".ppm")
                io::write_ppm(out_path, img);
            else
                io::write_tensor(out_path, img);
            std::printf("wrote %s\n", out_path.c_str());
        } else if (*mi_cmd) {
            RunPaths run{run_dir};
            Dataset ds = Dataset::load(run.dataset());
            FieldParams params = load_checkpoint(run, checkpoint);
            auto make_spec = [&]() {
                if (pattern == "layer")
                    return make_single_layer_spec(params, FieldParams::kDesignatedLayer, mi_sigma);
                if (pattern == "block") return make_layer_block_spec(params, mi_sigma);
                if (pattern == "random")
                    return make_random_neurons_spec(params, rn_dim, mi_sigma, seed);
                throw ConfigError("mi-probe: pattern must be layer | block | random");
            };
            PerturbationSpec spec = make_spec();
            if (mi_map_mode) {
                int sv, su, sp;
                if (std::sscanf(source_pixel.c_str(), "%d:%d:%d", &sv, &su, &sp) != 3)
                    throw ConfigError("mi-probe: --source wants view:u:v");
                MiMap map = mi_map(params, pick_cam(ds, split, sv), su, sp,
                                   pick_cam(ds, split, view_index), spec, n_samples_flag, seed,
                                   ds.cfg.near, ds.cfg.far);
                io::write_heatmap_ppm(out_path + ".ppm", map.values);
                io::write_tensor(out_path, map.values);
                std::printf("wrote %s and %s.ppm\n", out_path.c_str(), out_path.c_str());
            } else {
                if (pairs_path.empty()) throw ConfigError("mi-probe: need --pairs or --map");
                std::istringstream in(io::read_text(pairs_path));
                std::ostringstream out;
                out << "# va ua vva vb ub vvb cos_abs closed_form empirical_mi\n";
                out.precision(10);
                int va, ua, vva, vb, ub, vvb;
                while (in >> va >> ua >> vva >> vb >> ub >> vvb) {
                    const Ray ra = pixel_ray(pick_cam(ds, split, va), ua, vva, ds.cfg.near, ds.cfg.far);
                    const Ray rb = pixel_ray(pick_cam(ds, split, vb), ub, vvb, ds.cfg.near, ds.cfg.far);
                    MiEstimate est = mc_mi_estimate(params, ra, rb, spec, mi_draws, mi_bins, seed,
                                                    n_samples_flag);
                    out << va << " " << ua << " " << vva << " " << vb << " " << ub << " " << vvb
                        << " " << est.cos_abs << " " << est.closed_form << " " << est.empirical_mi
                        << (est.degenerate ? " degenerate" : "") << "\n";
                }
                io::write_text(out_path, out.str());
                std::printf("wrote %s (jackknife bias note: see MiEstimate)\n", out_path.c_str());
            }
        } else if (*prop_cmd) {
            RunPaths run{run_dir};
            Dataset ds = Dataset::load(run.dataset());
            FieldParams params = load_checkpoint(run, checkpoint);
            const Camera& src_cam = ds.train_cams.at(static_cast<size_t>(source_view));
            const Camera& tgt_cam = pick_cam(ds, split, view_index);
            const LabelImage& src_labels = ds.train_views.at(static_cast<size_t>(source_view)).labels;
            PropConfig pc;
            pc.n_samples = n_samples_flag;
            pc.seed = seed;
            pc.near = ds.cfg.near;
            pc.far = ds.cfg.far;
            std::filesystem::create_directories(out_path);
            LabelImage result_labels;
            Tensor result_logits;
            if (prop_mode == "sparse") {
                SeedLabels seeds = seeds_path.empty()
                                       ? make_sparse_seeds(src_labels, source_view, seed)
                                       : seeds_from_text(io::read_text(seeds_path));
                PropagationResult res =
                    prop_variant == "2d"
                        ? propagate_sparse_2d(params, src_cam, seeds, tgt_cam, prop_sigma, pc)
                        : propagate_sparse_3d(params, src_cam, seeds, tgt_cam, prop_sigma, pc);
                result_labels = res.labels;
                result_logits = res.logits;
                if (res.empty) std::printf("note: sigma 0, empty result\n");
                for (int k : res.unpropagatable) std::printf("note: class %d unpropagatable\n", k);
            } else if (prop_mode == "dense") {
                LabelImage used = density_subsample(src_labels, prop_density, seed);
                const int K = ds.scene.n_classes();
                GradientSelection sel =
                    adaptive_gradient_sampling(params, src_cam, used, K, prop_sigma, pc);
                if (!sel.complete) std::printf("warning: partial gradient selection (%zu)\n",
                                               sel.selections.size());
                AggConfig agg;
                agg.seed = seed;
                agg.iters = 3000;
                AggModel model = train_aggregation_mlp(sel.source_responses, used, K, agg);
                result_logits = dense_responses(params, sel, tgt_cam, prop_sigma, pc);
                result_labels = apply_aggregation(model, result_logits);
            } else {
                throw ConfigError("propagate: mode must be sparse | dense");
            }
            io::write_tensor(out_path + "/logits.jtns", result_logits);
            io::write_label_image(out_path + "/labels.jtns", result_labels);
            io::write_label_ppm(out_path + "/labels.ppm", result_labels);
            std::printf("wrote %s/{logits.jtns,labels.jtns,labels.ppm}\n", out_path.c_str());
        } else if (*recolor_cmd) {
            RunPaths run{run_dir};
            Dataset ds = Dataset::load(run.dataset());
            FieldParams params = load_checkpoint(run, checkpoint);
            int sv, su, sp;
            if (std::sscanf(pixel_spec.c_str(), "%d:%d:%d", &sv, &su, &sp) != 3)
                throw ConfigError("recolor: --pixel wants view:u:v");
            double delta[3];
            if (std::sscanf(delta_spec.c_str(), "%lf,%lf,%lf", &delta[0], &delta[1], &delta[2]) != 3)
                throw ConfigError("recolor: --delta wants r,g,b");
            PropConfig pc;
            pc.n_samples = n_samples_flag;
            pc.seed = seed;
            pc.near = ds.cfg.near;
            pc.far = ds.cfg.far;
            Tensor img = recolor_entity(params, ds.train_cams.at(static_cast<size_t>(sv)), su, sp,
                                        delta, recolor_sigma, pick_cam(ds, split, view_index), pc);
            io::write_ppm(out_path, img);
            std::printf("wrote %s\n", out_path.c_str());
        } else if (*eval_cmd) {
            LabelImage pred = io::read_label_image(pred_path);
            LabelImage gt = io::read_label_image(gt_path);
            std::vector<int> seen;
            if (seen_spec.empty()) {
                seen = seen_classes(gt);
            } else {
                std::istringstream ss(seen_spec);
                std::string tok;
                while (std::getline(ss, tok, ',')) seen.push_back(std::stoi(tok));
            }
            MetricReport rep = compute_metrics(pred, gt, seen);
            std::printf("mIoU %.4f  avg_acc %.4f  total_acc %.4f\n", rep.miou, rep.avg_class_acc,
                        rep.total_acc);
            for (auto [k, iou] : rep.per_class_iou) std::printf("class %d IoU %.4f\n", k, iou);
        } else if (*exp_cmd) {
            Config overrides;
            if (!exp_out_override.empty()) overrides.set("out_dir", exp_out_override);
            if (exp_seed_opt->count()) overrides.set("seed", std::to_string(train_seed_flag));
            ExperimentConfig cfg = ExperimentConfig::from_config(merge_config(config_path, overrides));
            ExperimentReport rep = run_experiment(cfg);
            std::printf("experiment %s done: mIoU %.4f avg_acc %.4f total_acc %.4f (hash %016llx)\n",
                        cfg.experiment_id.c_str(), rep.mean.miou, rep.mean.avg_class_acc,
                        rep.mean.total_acc, static_cast<unsigned long long>(rep.config_hash));
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
