#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mirf/camera.hpp"
#include "mirf/tensor.hpp"

namespace mirf {

// Procedural ground-truth scenes: flat-albedo spheres and axis-aligned boxes
// with per-object semantic/instance ids. These stand in for captured data,
// providing exact images, labels and depth.

struct Primitive {
    enum Kind { Sphere, Box } kind = Sphere;
    Vec3 center;
    Vec3 extent;  // sphere: extent.x is the radius; box: half extents
    Vec3 albedo;
    int sem_id = 0;
    int inst_id = 0;
};

struct SceneSpec {
    std::vector<Primitive> prims;
    uint64_t seed = 0;

    Vec3 centroid() const;
    int n_classes() const;
};

// Deterministic for a seed; non-overlapping primitives with pairwise albedo
// distance >= 0.2. Throws after the retry budget is exhausted.
SceneSpec generate_scene(int n_objects, uint64_t seed, int max_retries = 1000);

// one primitive per line: kind cx cy cz ex ey ez ar ag ab sem_id inst_id
std::string scene_to_text(const SceneSpec& scene);
SceneSpec scene_from_text(const std::string& text);

struct GtView {
    Tensor image;      // [H,W,3]
    LabelImage labels;  // semantic ids
    LabelImage instances;
    Tensor depth;      // [H,W], 0 where no hit
};

// Exact nearest-hit rendering: albedo color, id label, black background.
GtView gt_render(const SceneSpec& scene, const Camera& cam);

// hit parameter of the closest primitive along the ray, with its index
std::optional<std::pair<double, int>> intersect_scene(const SceneSpec& scene, const Ray& ray);

struct DatasetConfig {
    int image_size = 48;
    double fov_deg = 60.0;
    double orbit_radius = 4.0;
    double near = 0.1;
    double far = 6.0;
};

struct Dataset {
    SceneSpec scene;
    DatasetConfig cfg;
    std::vector<Camera> train_cams, test_cams;
    std::vector<GtView> train_views, test_views;

    void save(const std::string& dir) const;
    static Dataset load(const std::string& dir);
};

// Cameras on the origin-centered orbit sphere looking at the scene centroid;
// train and test pose sets are disjoint.
Dataset make_dataset(const SceneSpec& scene, int n_train_views, int n_test_views, uint64_t seed,
                     const DatasetConfig& cfg = {});

// 1 iff both ids are foreground and equal. The label surrogate for pair
// selection; background (0) is never similar to anything.
inline int gt_affinity(int id_a, int id_b) {
    return (id_a > 0 && id_b > 0 && id_a == id_b) ? 1 : 0;
}

}  // namespace mirf
