#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "mirf/tensor.hpp"

namespace mirf {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        return {x / n, y / n, z / n};
    }
};

// Pinhole camera. Rotation columns are the camera axes in world coordinates
// (x right, y up, looking along -z), t is the camera center.
struct Camera {
    int width = 0;
    int height = 0;
    double fov_y = 0;           // vertical, radians
    double rot[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
    Vec3 pos;

    Camera() = default;
    Camera(int w, int h, double fov, const double r[9], Vec3 p);

    // looks from `from` toward `target`, world up +z (fallback +y)
    static Camera look_at(int w, int h, double fov, Vec3 from, Vec3 target);

    Vec3 cam_to_world(const Vec3& v) const {
        return {rot[0] * v.x + rot[1] * v.y + rot[2] * v.z,
                rot[3] * v.x + rot[4] * v.y + rot[5] * v.z,
                rot[6] * v.x + rot[7] * v.y + rot[8] * v.z};
    }

    std::array<double, 12> pose_row_major() const {
        return {rot[0], rot[1], rot[2], pos.x, rot[3], rot[4], rot[5],
                pos.y,  rot[6], rot[7], rot[8], pos.z};
    }
    static Camera from_pose(int w, int h, double fov, const std::array<double, 12>& p);

    double focal_px() const { return (height / 2.0) / std::tan(fov_y / 2.0); }
};

struct Ray {
    Vec3 origin;
    Vec3 dir;      // unit
    double near = 0.1;
    double far = 6.0;
};

// One ray per pixel through the pixel center, row-major (index = v*width + u).
std::vector<Ray> generate_rays(const Camera& cam, double near, double far);
Ray pixel_ray(const Camera& cam, int u, int v, double near, double far);

}  // namespace mirf
