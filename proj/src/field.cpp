#include "mirf/field.hpp"

#include <cmath>

#include "mirf/kernels.hpp"
#include "mirf/rng.hpp"

namespace mirf {

namespace {

Tensor randn(std::vector<int64_t> shape, double std, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = std * rng.normal();
    return t;
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace

int positional_dim(int L) { return 3 + 6 * L; }

void positional_encode(const double* xyz, int L, double* out) {
    out[0] = xyz[0];
    out[1] = xyz[1];
    out[2] = xyz[2];
    int o = 3;
    double freq = kPi;
    for (int l = 0; l < L; ++l) {
        for (int c = 0; c < 3; ++c) {
            double s, cs;
#if defined(__GNUC__)
            __builtin_sincos(freq * xyz[c], &s, &cs);
#else
            s = std::sin(freq * xyz[c]);
            cs = std::cos(freq * xyz[c]);
#endif
            out[o++] = s;
            out[o++] = cs;
        }
        freq *= 2.0;
    }
}

FieldParams FieldParams::init(const FieldConfig& cfg, uint64_t seed) {
    FieldParams p;
    p.cfg_ = cfg;
    Rng rng(mix_seed(seed, 0x461dull));
    const int H = cfg.hidden;
    int in = cfg.pos_dim();
    for (int i = 0; i < cfg.trunk_depth; ++i) {
        const std::string base = "trunk" + std::to_string(i);
        p.tensors_.emplace_back(base + ".w", randn({in, H}, std::sqrt(2.0 / in), rng));
        p.tensors_.emplace_back(base + ".b", Tensor::zeros({H}));
        in = H;
    }
    p.tensors_.emplace_back("density.w", randn({H, 1}, std::sqrt(2.0 / H), rng));
    p.tensors_.emplace_back("density.b", Tensor::full({1}, -0.5));
    const int cin = H + cfg.dir_dim();
    p.tensors_.emplace_back("color0.w", randn({cin, H}, std::sqrt(2.0 / cin), rng));
    p.tensors_.emplace_back("color0.b", Tensor::zeros({H}));
    p.tensors_.emplace_back("rgb.w", randn({3, H}, std::sqrt(1.0 / H), rng));
    p.tensors_.emplace_back("rgb.b", Tensor::zeros({3}));
    return p;
}

Tensor& FieldParams::tensor(const std::string& name) {
    for (auto& [n, t] : tensors_)
        if (n == name) return t;
    throw Error("field: no parameter tensor named " + name);
}

const Tensor& FieldParams::tensor(const std::string& name) const {
    return const_cast<FieldParams*>(this)->tensor(name);
}

int64_t FieldParams::flat_size() const {
    int64_t n = 0;
    for (const auto& [name, t] : tensors_) n += t.numel();
    return n;
}

int64_t FieldParams::offset_of(const std::string& name) const {
    int64_t off = 0;
    for (const auto& [n, t] : tensors_) {
        if (n == name) return off;
        off += t.numel();
    }
    throw Error("field: no parameter tensor named " + name);
}

double FieldParams::flat_get(int64_t i) const {
    for (const auto& [n, t] : tensors_) {
        if (i < t.numel()) return t[i];
        i -= t.numel();
    }
    throw Error("field: flat index out of range");
}

void FieldParams::flat_add(int64_t i, double delta) {
    for (auto& [n, t] : tensors_) {
        if (i < t.numel()) {
            t[i] += delta;
            return;
        }
        i -= t.numel();
    }
    throw Error("field: flat index out of range");
}

void FieldParams::save(const std::string& path) const {
    io::NamedTensors out;
    out.emplace_back("meta", Tensor({6}, {static_cast<double>(cfg_.l_pos),
                                          static_cast<double>(cfg_.l_dir),
                                          static_cast<double>(cfg_.hidden),
                                          static_cast<double>(cfg_.trunk_depth),
                                          shaped_tag ? 1.0 : 0.0,
                                          cfg_.density_scale}));
    for (const auto& e : tensors_) out.push_back(e);
    io::write_archive(path, out);
}

FieldParams FieldParams::load(const std::string& path) {
    io::NamedTensors in = io::read_archive(path);
    if (in.empty() || in[0].first != "meta" || in[0].second.numel() != 6)
        throw Error(path + ": missing checkpoint meta");
    const Tensor& m = in[0].second;
    FieldConfig cfg;
    cfg.l_pos = static_cast<int>(m[0]);
    cfg.l_dir = static_cast<int>(m[1]);
    cfg.hidden = static_cast<int>(m[2]);
    cfg.trunk_depth = static_cast<int>(m[3]);
    cfg.density_scale = m[5];
    FieldParams p = FieldParams::init(cfg, 0);
    p.shaped_tag = m[4] != 0.0;
    for (size_t i = 0; i < p.tensors_.size(); ++i) {
        if (i + 1 >= in.size() || in[i + 1].first != p.tensors_[i].first)
            throw Error(path + ": checkpoint tensor order mismatch");
        if (!in[i + 1].second.same_shape(p.tensors_[i].second))
            throw Error(path + ": checkpoint tensor shape mismatch for " + p.tensors_[i].first);
        p.tensors_[i].second = std::move(in[i + 1].second);
    }
    return p;
}

FieldEval field_forward(const FieldParams& params, const std::vector<double>& pts,
                        const std::vector<double>& dirs, int64_t n) {
    const FieldConfig& cfg = params.config();
    const int H = cfg.hidden;
    const int P = cfg.pos_dim();
    const int Q = cfg.dir_dim();

    Tensor pe_x = Tensor::zeros({n, P});
    Tensor pe_d = Tensor::zeros({n, Q});
    for (int64_t i = 0; i < n; ++i) {
        positional_encode(&pts[static_cast<size_t>(i) * 3], cfg.l_pos, &pe_x.vec()[static_cast<size_t>(i) * P]);
        positional_encode(&dirs[static_cast<size_t>(i) * 3], cfg.l_dir, &pe_d.vec()[static_cast<size_t>(i) * Q]);
    }

    auto linear_relu = [&](const Tensor& x, const std::string& w, const std::string& b) {
        const Tensor& W = params.tensor(w);
        const Tensor& B = params.tensor(b);
        Tensor y = Tensor::zeros({x.rows(), W.cols()});
        kernels::matmul_serial(x.data(), W.data(), y.data(), x.rows(), x.cols(), W.cols());
        for (int64_t i = 0; i < y.rows(); ++i)
            for (int64_t j = 0; j < y.cols(); ++j) {
                double v = y.at(i, j) + B[j];
                y.at(i, j) = v > 0.0 ? v : 0.0;
            }
        return y;
    };

    Tensor a = linear_relu(pe_x, "trunk0.w", "trunk0.b");
    for (int i = 1; i < cfg.trunk_depth; ++i) {
        const std::string base = "trunk" + std::to_string(i);
        a = linear_relu(a, base + ".w", base + ".b");
    }

    FieldEval out;
    out.sigma.resize(static_cast<size_t>(n));
    {
        const Tensor& W = params.tensor("density.w");
        const double b = params.tensor("density.b")[0];
        const double scale = cfg.density_scale;
        for (int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < H; ++j) s += a.at(i, j) * W[j];
            s += b;
            out.sigma[static_cast<size_t>(i)] = s > 0.0 ? scale * s : 0.0;
        }
    }

    Tensor feat = Tensor::zeros({n, H + Q});
    for (int64_t i = 0; i < n; ++i) {
        for (int j = 0; j < H; ++j) feat.at(i, j) = a.at(i, j);
        for (int j = 0; j < Q; ++j) feat.at(i, H + j) = pe_d.at(i, j);
    }
    out.h = linear_relu(feat, "color0.w", "color0.b");

    out.z = Tensor::zeros({n, 3});
    {
        const Tensor& W = params.tensor("rgb.w");  // (3,H)
        const Tensor& B = params.tensor("rgb.b");
        kernels::matmul_nt_serial(out.h.data(), W.data(), out.z.data(), n, H, 3);
        for (int64_t i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) out.z.at(i, c) += B[c];
    }

    // name the layer on the slow path only
    bool bad = !out.z.all_finite();
    for (double s : out.sigma) bad = bad || !std::isfinite(s);
    if (bad) {
        for (size_t i = 0; i < params.count(); ++i)
            if (!params.tensor(i).all_finite())
                throw Error("field: non-finite parameters in layer " + params.name(i));
        if (!a.all_finite()) throw Error("field: non-finite output at trunk");
        if (!out.h.all_finite()) throw Error("field: non-finite output at color0");
        throw Error("field: non-finite output at rgb layer or density head");
    }
    return out;
}

}  // namespace mirf
