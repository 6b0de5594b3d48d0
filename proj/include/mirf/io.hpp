#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mirf/tensor.hpp"

namespace mirf::io {

// Binary tensor container: magic "JTNS", version byte, dtype code
// (0 = f64, 1 = i64), rank byte, little-endian u64 extents, raw LE payload.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

void write_label_image(const std::string& path, const LabelImage& img);  // i64 [H,W]
LabelImage read_label_image(const std::string& path);

void write_tensor_i64(const std::string& path, const std::vector<int64_t>& shape,
                      const std::vector<int64_t>& data);
std::pair<std::vector<int64_t>, std::vector<int64_t>> read_tensor_i64(const std::string& path);

// Archive of named tensors (checkpoints): "JTNA", version byte, u32 count,
// then per entry a u16 name length, the name, and a JTNS tensor record.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
void write_archive(const std::string& path, const NamedTensors& entries);
NamedTensors read_archive(const std::string& path);

// Binary PPM (P6, 8-bit). img is [H,W,3] with values clamped to [0,1].
void write_ppm(const std::string& path, const Tensor& img);
// Grayscale heat map -> P6 with a fixed blue-red ramp.
void write_heatmap_ppm(const std::string& path, const Tensor& values);
// Label map -> P6 with a fixed 16-color palette (id 0 is black).
void write_label_ppm(const std::string& path, const LabelImage& img);

// Pose list: one camera per line, 12 floats, row-major 3x4 [R|t].
void write_poses(const std::string& path, const std::vector<std::array<double, 12>>& poses);
std::vector<std::array<double, 12>> read_poses(const std::string& path);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

bool file_exists(const std::string& path);

}  // namespace mirf::io
