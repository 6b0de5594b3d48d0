#include "mirf/camera.hpp"

namespace mirf {

namespace {

void check_rotation(const double r[9]) {
    // ||R^T R - I||_inf < 1e-9
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += r[k * 3 + i] * r[k * 3 + j];
            const double want = i == j ? 1.0 : 0.0;
            if (std::fabs(s - want) >= 1e-9) throw Error("camera: rotation is not orthonormal");
        }
}

}  // namespace

Camera::Camera(int w, int h, double fov, const double r[9], Vec3 p)
    : width(w), height(h), fov_y(fov), pos(p) {
    if (w <= 0 || h <= 0) throw Error("camera: non-positive image size");
    if (!(fov > 0.0 && fov < 3.14159265358979323846)) throw Error("camera: fov out of (0, pi)");
    for (int i = 0; i < 9; ++i) rot[i] = r[i];
    check_rotation(rot);
}

Camera Camera::look_at(int w, int h, double fov, Vec3 from, Vec3 target) {
    Vec3 forward = (target - from).normalized();
    Vec3 up{0, 0, 1};
    if (std::fabs(forward.dot(up)) > 0.999) up = {0, 1, 0};
    Vec3 right = forward.cross(up).normalized();
    Vec3 cam_up = right.cross(forward);
    // columns: x=right, y=up, z=-forward
    double r[9] = {right.x, cam_up.x, -forward.x, right.y, cam_up.y,
                   -forward.y, right.z, cam_up.z, -forward.z};
    return Camera(w, h, fov, r, from);
}

Camera Camera::from_pose(int w, int h, double fov, const std::array<double, 12>& p) {
    double r[9] = {p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]};
    return Camera(w, h, fov, r, Vec3{p[3], p[7], p[11]});
}

Ray pixel_ray(const Camera& cam, int u, int v, double near, double far) {
    const double f = cam.focal_px();
    const double cx = (u + 0.5) - cam.width / 2.0;
    const double cy = cam.height / 2.0 - (v + 0.5);
    Vec3 dir_cam{cx / f, cy / f, -1.0};
    Ray ray;
    ray.origin = cam.pos;
    ray.dir = cam.cam_to_world(dir_cam).normalized();
    ray.near = near;
    ray.far = far;
    if (!(near >= 0.0 && near < far)) throw Error("ray: need 0 <= near < far");
    return ray;
}

std::vector<Ray> generate_rays(const Camera& cam, double near, double far) {
    std::vector<Ray> rays;
    rays.reserve(static_cast<size_t>(cam.width) * cam.height);
    for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u) rays.push_back(pixel_ray(cam, u, v, near, far));
    return rays;
}

}  // namespace mirf
