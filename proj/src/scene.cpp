#include "mirf/scene.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "mirf/io.hpp"
#include "mirf/kernels.hpp"
#include "mirf/rng.hpp"

namespace mirf {

Vec3 SceneSpec::centroid() const {
    Vec3 c;
    for (const Primitive& p : prims) c = c + p.center;
    return prims.empty() ? c : c * (1.0 / prims.size());
}

int SceneSpec::n_classes() const {
    int k = 0;
    for (const Primitive& p : prims) k = std::max(k, p.sem_id);
    return k;
}

namespace {

double bounding_radius(const Primitive& p) {
    return p.kind == Primitive::Sphere ? p.extent.x : p.extent.norm();
}

}  // namespace

SceneSpec generate_scene(int n_objects, uint64_t seed, int max_retries) {
    if (n_objects < 1 || n_objects > 16) throw Error("scene: n_objects must be in [1,16]");
    SceneSpec scene;
    scene.seed = seed;
    Rng rng(mix_seed(seed, 0x5ce7eull));

    // shrink objects as the count grows so placement stays easy
    const double size_scale = std::min(1.0, std::cbrt(4.0 / n_objects));
    const double place_radius = 1.3;
    int retries = 0;

    for (int i = 0; i < n_objects; ++i) {
        while (true) {
            Primitive p;
            p.kind = rng.uniform() < 0.5 ? Primitive::Sphere : Primitive::Box;
            const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            const double cz = rng.uniform(-1.0, 1.0);
            const double rr = place_radius * std::cbrt(rng.uniform());
            const double sxy = std::sqrt(1.0 - cz * cz);
            p.center = {rr * sxy * std::cos(theta), rr * sxy * std::sin(theta), rr * cz};
            if (p.kind == Primitive::Sphere) {
                const double r = rng.uniform(0.42, 0.62) * size_scale;
                p.extent = {r, r, r};
            } else {
                p.extent = {rng.uniform(0.34, 0.55) * size_scale, rng.uniform(0.34, 0.55) * size_scale,
                            rng.uniform(0.34, 0.55) * size_scale};
            }
            p.albedo = {rng.uniform(0.1, 0.95), rng.uniform(0.1, 0.95), rng.uniform(0.1, 0.95)};
            p.sem_id = i + 1;
            p.inst_id = i + 1;

            bool ok = true;
            for (const Primitive& q : scene.prims) {
                const double gap = (p.center - q.center).norm() - bounding_radius(p) - bounding_radius(q);
                if (gap < 0.05) ok = false;
                const Vec3 da = p.albedo - q.albedo;
                if (da.norm() < 0.2) ok = false;
            }
            if (ok) {
                scene.prims.push_back(p);
                break;
            }
            if (++retries > max_retries)
                throw Error("scene: placement failed after " + std::to_string(max_retries) + " retries");
        }
    }
    return scene;
}

std::string scene_to_text(const SceneSpec& scene) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "# kind cx cy cz ex ey ez ar ag ab sem_id inst_id\n";
    ss << "# seed " << scene.seed << "\n";
    for (const Primitive& p : scene.prims) {
        ss << (p.kind == Primitive::Sphere ? "sphere" : "box") << " " << p.center.x << " "
           << p.center.y << " " << p.center.z << " " << p.extent.x << " " << p.extent.y << " "
           << p.extent.z << " " << p.albedo.x << " " << p.albedo.y << " " << p.albedo.z << " "
           << p.sem_id << " " << p.inst_id << "\n";
    }
    return ss.str();
}

SceneSpec scene_from_text(const std::string& text) {
    SceneSpec scene;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ls(line);
            std::string hash, key;
            ls >> hash >> key;
            if (key == "seed") ls >> scene.seed;
            continue;
        }
        std::istringstream ls(line);
        std::string kind;
        Primitive p;
        if (!(ls >> kind >> p.center.x >> p.center.y >> p.center.z >> p.extent.x >> p.extent.y >>
              p.extent.z >> p.albedo.x >> p.albedo.y >> p.albedo.z >> p.sem_id >> p.inst_id))
            throw Error("scene: bad primitive line: " + line);
        if (kind == "sphere")
            p.kind = Primitive::Sphere;
        else if (kind == "box")
            p.kind = Primitive::Box;
        else
            throw Error("scene: unknown primitive kind: " + kind);
        scene.prims.push_back(p);
    }
    return scene;
}

namespace {

// smallest positive root of |o + t d - c|^2 = r^2
std::optional<double> hit_sphere(const Ray& ray, const Vec3& c, double r) {
    const Vec3 oc = ray.origin - c;
    const double b = oc.dot(ray.dir);
    const double disc = b * b - (oc.dot(oc) - r * r);
    if (disc < 0.0) return std::nullopt;
    const double s = std::sqrt(disc);
    double t = -b - s;
    if (t <= 1e-9) t = -b + s;
    if (t <= 1e-9) return std::nullopt;
    return t;
}

std::optional<double> hit_box(const Ray& ray, const Vec3& c, const Vec3& e) {
    double tmin = -1e300, tmax = 1e300;
    const double o[3] = {ray.origin.x - c.x, ray.origin.y - c.y, ray.origin.z - c.z};
    const double d[3] = {ray.dir.x, ray.dir.y, ray.dir.z};
    const double h[3] = {e.x, e.y, e.z};
    for (int i = 0; i < 3; ++i) {
        if (std::fabs(d[i]) < 1e-12) {
            if (std::fabs(o[i]) > h[i]) return std::nullopt;
            continue;
        }
        double t0 = (-h[i] - o[i]) / d[i];
        double t1 = (h[i] - o[i]) / d[i];
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return std::nullopt;
    }
    double t = tmin;
    if (t <= 1e-9) t = tmax;
    if (t <= 1e-9) return std::nullopt;
    return t;
}

}  // namespace

std::optional<std::pair<double, int>> intersect_scene(const SceneSpec& scene, const Ray& ray) {
    std::optional<std::pair<double, int>> best;
    for (size_t i = 0; i < scene.prims.size(); ++i) {
        const Primitive& p = scene.prims[i];
        std::optional<double> t = p.kind == Primitive::Sphere ? hit_sphere(ray, p.center, p.extent.x)
                                                              : hit_box(ray, p.center, p.extent);
        if (t && (!best || *t < best->first)) best = {{*t, static_cast<int>(i)}};
    }
    return best;
}

GtView gt_render(const SceneSpec& scene, const Camera& cam) {
    GtView view;
    view.image = Tensor::zeros({cam.height, cam.width, 3});
    view.labels = LabelImage(cam.width, cam.height);
    view.instances = LabelImage(cam.width, cam.height);
    view.depth = Tensor::zeros({cam.height, cam.width});
    const int64_t n = static_cast<int64_t>(cam.width) * cam.height;
    kernels::for_each_index(n, true, [&](int64_t i) {
        const int u = static_cast<int>(i % cam.width);
        const int v = static_cast<int>(i / cam.width);
        const Ray ray = pixel_ray(cam, u, v, 0.0, 1e9);
        auto hit = intersect_scene(scene, ray);
        if (!hit) return;
        const Primitive& p = scene.prims[static_cast<size_t>(hit->second)];
        view.image[i * 3 + 0] = p.albedo.x;
        view.image[i * 3 + 1] = p.albedo.y;
        view.image[i * 3 + 2] = p.albedo.z;
        view.labels.ids[static_cast<size_t>(i)] = p.sem_id;
        view.instances.ids[static_cast<size_t>(i)] = p.inst_id;
        view.depth[i] = hit->first;
    });
    return view;
}

Dataset make_dataset(const SceneSpec& scene, int n_train_views, int n_test_views, uint64_t seed,
                     const DatasetConfig& cfg) {
    if (n_train_views < 1 || n_test_views < 1) throw Error("dataset: view counts must be >= 1");
    Dataset ds;
    ds.scene = scene;
    ds.cfg = cfg;
    Rng rng(mix_seed(seed, 0xda7a5e7ull));
    const Vec3 target = scene.centroid();
    const double fov = cfg.fov_deg * 3.14159265358979323846 / 180.0;

    std::vector<Vec3> taken;
    auto draw_camera = [&]() {
        while (true) {
            Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
            dir = dir.normalized();
            if (std::fabs(dir.z) > 0.97) continue;  // keep look_at well-conditioned
            bool distinct = true;
            for (const Vec3& t : taken)
                if ((t - dir).norm() < 1e-3) distinct = false;
            if (!distinct) continue;
            taken.push_back(dir);
            return Camera::look_at(cfg.image_size, cfg.image_size, fov, dir * cfg.orbit_radius,
                                   target);
        }
    };

    for (int i = 0; i < n_train_views; ++i) ds.train_cams.push_back(draw_camera());
    for (int i = 0; i < n_test_views; ++i) ds.test_cams.push_back(draw_camera());
    for (const Camera& c : ds.train_cams) ds.train_views.push_back(gt_render(scene, c));
    for (const Camera& c : ds.test_cams) ds.test_views.push_back(gt_render(scene, c));
    return ds;
}

namespace {

void save_split(const std::string& dir, const std::string& split, const std::vector<Camera>& cams,
                const std::vector<GtView>& views) {
    const int64_t V = static_cast<int64_t>(views.size());
    const int64_t H = views[0].image.shape()[0], W = views[0].image.shape()[1];
    Tensor images = Tensor::zeros({V, H, W, 3});
    std::vector<int64_t> labels(static_cast<size_t>(V * H * W));
    std::vector<int64_t> instances(labels.size());
    for (int64_t v = 0; v < V; ++v) {
        const GtView& view = views[static_cast<size_t>(v)];
        for (int64_t i = 0; i < H * W * 3; ++i) images[v * H * W * 3 + i] = view.image[i];
        for (int64_t i = 0; i < H * W; ++i) {
            labels[static_cast<size_t>(v * H * W + i)] = view.labels.ids[static_cast<size_t>(i)];
            instances[static_cast<size_t>(v * H * W + i)] = view.instances.ids[static_cast<size_t>(i)];
        }
    }
    io::write_tensor(dir + "/" + split + "_images.jtns", images);
    io::write_tensor_i64(dir + "/" + split + "_labels.jtns", {V, H, W}, labels);
    io::write_tensor_i64(dir + "/" + split + "_instances.jtns", {V, H, W}, instances);
    std::vector<std::array<double, 12>> poses;
    for (const Camera& c : cams) poses.push_back(c.pose_row_major());
    io::write_poses(dir + "/" + split + "_poses.txt", poses);
}

void load_split(const std::string& dir, const std::string& split, const DatasetConfig& cfg,
                std::vector<Camera>& cams, std::vector<GtView>& views) {
    Tensor images = io::read_tensor(dir + "/" + split + "_images.jtns");
    auto [lshape, labels] = io::read_tensor_i64(dir + "/" + split + "_labels.jtns");
    auto [ishape, instances] = io::read_tensor_i64(dir + "/" + split + "_instances.jtns");
    auto poses = io::read_poses(dir + "/" + split + "_poses.txt");
    const int64_t V = images.shape()[0], H = images.shape()[1], W = images.shape()[2];
    const double fov = cfg.fov_deg * 3.14159265358979323846 / 180.0;
    for (int64_t v = 0; v < V; ++v) {
        cams.push_back(Camera::from_pose(static_cast<int>(W), static_cast<int>(H), fov,
                                         poses[static_cast<size_t>(v)]));
        GtView view;
        view.image = Tensor::zeros({H, W, 3});
        for (int64_t i = 0; i < H * W * 3; ++i) view.image[i] = images[v * H * W * 3 + i];
        view.labels = LabelImage(static_cast<int>(W), static_cast<int>(H));
        view.instances = LabelImage(static_cast<int>(W), static_cast<int>(H));
        for (int64_t i = 0; i < H * W; ++i) {
            view.labels.ids[static_cast<size_t>(i)] = static_cast<int32_t>(labels[static_cast<size_t>(v * H * W + i)]);
            view.instances.ids[static_cast<size_t>(i)] = static_cast<int32_t>(instances[static_cast<size_t>(v * H * W + i)]);
        }
        view.depth = Tensor::zeros({H, W});
        views.push_back(std::move(view));
    }
}

}  // namespace

void Dataset::save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    io::write_text(dir + "/scene.txt", scene_to_text(scene));
    std::ostringstream meta;
    meta.precision(17);
    meta << "image_size = " << cfg.image_size << "\nfov_deg = " << cfg.fov_deg
         << "\norbit_radius = " << cfg.orbit_radius << "\nnear = " << cfg.near
         << "\nfar = " << cfg.far << "\n";
    io::write_text(dir + "/meta.cfg", meta.str());
    save_split(dir, "train", train_cams, train_views);
    save_split(dir, "test", test_cams, test_views);
}

Dataset Dataset::load(const std::string& dir) {
    Dataset ds;
    ds.scene = scene_from_text(io::read_text(dir + "/scene.txt"));
    std::istringstream meta(io::read_text(dir + "/meta.cfg"));
    std::string key, eq;
    while (meta >> key >> eq) {
        double val;
        meta >> val;
        if (key == "image_size") ds.cfg.image_size = static_cast<int>(val);
        else if (key == "fov_deg") ds.cfg.fov_deg = val;
        else if (key == "orbit_radius") ds.cfg.orbit_radius = val;
        else if (key == "near") ds.cfg.near = val;
        else if (key == "far") ds.cfg.far = val;
    }
    load_split(dir, "train", ds.cfg, ds.train_cams, ds.train_views);
    load_split(dir, "test", ds.cfg, ds.test_cams, ds.test_views);
    return ds;
}

}  // namespace mirf
