#include "mirf/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mirf::io {

namespace {

constexpr uint8_t kDtypeF64 = 0;
constexpr uint8_t kDtypeI64 = 1;
constexpr uint8_t kVersion = 1;

void put_u64(std::ostream& out, uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64(std::istream& in) {
    uint8_t b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_tensor_record(std::ostream& out, const Tensor& t, uint8_t dtype,
                         const int64_t* ints = nullptr) {
    out.write("JTNS", 4);
    out.put(static_cast<char>(kVersion));
    out.put(static_cast<char>(dtype));
    out.put(static_cast<char>(t.rank()));
    for (int64_t e : t.shape()) put_u64(out, static_cast<uint64_t>(e));
    if (dtype == kDtypeF64) {
        for (int64_t i = 0; i < t.numel(); ++i) {
            uint64_t bits;
            double v = t[i];
            std::memcpy(&bits, &v, 8);
            put_u64(out, bits);
        }
    } else {
        for (int64_t i = 0; i < t.numel(); ++i)
            put_u64(out, static_cast<uint64_t>(ints ? ints[i] : static_cast<int64_t>(t[i])));
    }
}

struct RawTensor {
    std::vector<int64_t> shape;
    uint8_t dtype;
    std::vector<double> f64;
    std::vector<int64_t> i64;
};

RawTensor read_tensor_record(std::istream& in, const std::string& path) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::strncmp(magic, "JTNS", 4) != 0)
        throw Error(path + ": not a JTNS tensor (bad magic)");
    const int version = in.get();
    if (version != kVersion) throw Error(path + ": unsupported JTNS version");
    const int dtype = in.get();
    if (dtype != kDtypeF64 && dtype != kDtypeI64) throw Error(path + ": unknown dtype code");
    const int rank = in.get();
    if (rank <= 0 || rank > 8) throw Error(path + ": bad rank");
    RawTensor r;
    r.dtype = static_cast<uint8_t>(dtype);
    int64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
        int64_t e = static_cast<int64_t>(get_u64(in));
        r.shape.push_back(e);
        numel *= e;
    }
    if (!in || numel <= 0) throw Error(path + ": bad extents");
    if (dtype == kDtypeF64) {
        r.f64.resize(static_cast<size_t>(numel));
        for (int64_t i = 0; i < numel; ++i) {
            uint64_t bits = get_u64(in);
            std::memcpy(&r.f64[static_cast<size_t>(i)], &bits, 8);
        }
    } else {
        r.i64.resize(static_cast<size_t>(numel));
        for (int64_t i = 0; i < numel; ++i) r.i64[static_cast<size_t>(i)] = static_cast<int64_t>(get_u64(in));
    }
    if (!in) throw Error(path + ": truncated payload");
    return r;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open for reading: " + path);
    return in;
}

uint8_t to_byte(double v) {
    double c = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(c * 255.0));
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& t) {
    auto out = open_out(path);
    write_tensor_record(out, t, kDtypeF64);
}

Tensor read_tensor(const std::string& path) {
    auto in = open_in(path);
    RawTensor r = read_tensor_record(in, path);
    if (r.dtype != kDtypeF64) throw Error(path + ": expected f64 tensor");
    return Tensor(r.shape, std::move(r.f64));
}

void write_label_image(const std::string& path, const LabelImage& img) {
    auto out = open_out(path);
    Tensor shape_holder = Tensor::zeros({img.height, img.width});
    std::vector<int64_t> ids(img.ids.begin(), img.ids.end());
    write_tensor_record(out, shape_holder, kDtypeI64, ids.data());
}

void write_tensor_i64(const std::string& path, const std::vector<int64_t>& shape,
                      const std::vector<int64_t>& data) {
    auto out = open_out(path);
    Tensor shape_holder = Tensor::zeros(shape);
    if (shape_holder.numel() != static_cast<int64_t>(data.size()))
        throw Error("write_tensor_i64: data length does not match shape");
    write_tensor_record(out, shape_holder, kDtypeI64, data.data());
}

std::pair<std::vector<int64_t>, std::vector<int64_t>> read_tensor_i64(const std::string& path) {
    auto in = open_in(path);
    RawTensor r = read_tensor_record(in, path);
    if (r.dtype != kDtypeI64) throw Error(path + ": expected i64 tensor");
    return {r.shape, std::move(r.i64)};
}

LabelImage read_label_image(const std::string& path) {
    auto in = open_in(path);
    RawTensor r = read_tensor_record(in, path);
    if (r.dtype != kDtypeI64 || r.shape.size() != 2) throw Error(path + ": expected i64 [H,W]");
    LabelImage img(static_cast<int>(r.shape[1]), static_cast<int>(r.shape[0]));
    for (size_t i = 0; i < r.i64.size(); ++i) img.ids[i] = static_cast<int32_t>(r.i64[i]);
    return img;
}

void write_archive(const std::string& path, const NamedTensors& entries) {
    auto out = open_out(path);
    out.write("JTNA", 4);
    out.put(static_cast<char>(kVersion));
    uint32_t count = static_cast<uint32_t>(entries.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, t] : entries) {
        uint16_t len = static_cast<uint16_t>(name.size());
        out.write(reinterpret_cast<const char*>(&len), 2);
        out.write(name.data(), len);
        write_tensor_record(out, t, kDtypeF64);
    }
}

NamedTensors read_archive(const std::string& path) {
    auto in = open_in(path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::strncmp(magic, "JTNA", 4) != 0) throw Error(path + ": not a JTNA archive");
    if (in.get() != kVersion) throw Error(path + ": unsupported archive version");
    uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    NamedTensors entries;
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t len = 0;
        in.read(reinterpret_cast<char*>(&len), 2);
        std::string name(len, '\0');
        in.read(name.data(), len);
        RawTensor r = read_tensor_record(in, path);
        if (r.dtype != kDtypeF64) throw Error(path + ": archive entry must be f64");
        entries.emplace_back(name, Tensor(r.shape, std::move(r.f64)));
    }
    return entries;
}

void write_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.shape()[2] != 3) throw Error("write_ppm: image must be [H,W,3]");
    const int64_t H = img.shape()[0], W = img.shape()[1];
    auto out = open_out(path);
    out << "P6\n" << W << " " << H << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
    for (int64_t v = 0; v < H; ++v) {
        for (int64_t u = 0; u < W; ++u)
            for (int64_t c = 0; c < 3; ++c)
                row[static_cast<size_t>(u * 3 + c)] = to_byte(img[(v * W + u) * 3 + c]);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

void write_heatmap_ppm(const std::string& path, const Tensor& values) {
    if (values.rank() != 2) throw Error("write_heatmap_ppm: expected [H,W]");
    double lo = values[0], hi = values[0];
    for (int64_t i = 0; i < values.numel(); ++i) {
        lo = std::min(lo, values[i]);
        hi = std::max(hi, values[i]);
    }
    const double range = hi > lo ? hi - lo : 1.0;
    const int64_t H = values.shape()[0], W = values.shape()[1];
    Tensor rgb = Tensor::zeros({H, W, 3});
    for (int64_t i = 0; i < values.numel(); ++i) {
        const double t = (values[i] - lo) / range;
        rgb[i * 3 + 0] = t;
        rgb[i * 3 + 1] = 4.0 * t * (1.0 - t) * 0.6;
        rgb[i * 3 + 2] = 1.0 - t;
    }
    write_ppm(path, rgb);
}

void write_label_ppm(const std::string& path, const LabelImage& img) {
    static const std::array<std::array<double, 3>, 16> palette = {{
        {0.00, 0.00, 0.00}, {0.90, 0.10, 0.10}, {0.10, 0.75, 0.10}, {0.15, 0.25, 0.95},
        {0.95, 0.85, 0.10}, {0.80, 0.15, 0.80}, {0.10, 0.85, 0.85}, {0.95, 0.55, 0.10},
        {0.55, 0.35, 0.15}, {0.55, 0.85, 0.35}, {0.35, 0.55, 0.85}, {0.85, 0.45, 0.60},
        {0.50, 0.50, 0.50}, {0.75, 0.75, 0.95}, {0.40, 0.10, 0.55}, {0.90, 0.95, 0.75},
    }};
    Tensor rgb = Tensor::zeros({img.height, img.width, 3});
    for (size_t i = 0; i < img.ids.size(); ++i) {
        const auto& c = palette[static_cast<size_t>(img.ids[i]) % palette.size()];
        rgb[static_cast<int64_t>(i) * 3 + 0] = c[0];
        rgb[static_cast<int64_t>(i) * 3 + 1] = c[1];
        rgb[static_cast<int64_t>(i) * 3 + 2] = c[2];
    }
    write_ppm(path, rgb);
}

void write_poses(const std::string& path, const std::vector<std::array<double, 12>>& poses) {
    std::ostringstream ss;
    ss.precision(17);
    for (const auto& p : poses) {
        for (int i = 0; i < 12; ++i) ss << (i ? " " : "") << p[i];
        ss << "\n";
    }
    write_text(path, ss.str());
}

std::vector<std::array<double, 12>> read_poses(const std::string& path) {
    std::istringstream in(read_text(path));
    std::vector<std::array<double, 12>> poses;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::array<double, 12> p{};
        for (int i = 0; i < 12; ++i)
            if (!(ls >> p[i])) throw Error(path + ": pose line needs 12 floats");
        poses.push_back(p);
    }
    return poses;
}

void write_text(const std::string& path, const std::string& text) {
    auto out = open_out(path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_text(const std::string& path) {
    auto in = open_in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool file_exists(const std::string& path) {
    std::ifstream in(path);
    return in.good();
}

}  // namespace mirf::io
