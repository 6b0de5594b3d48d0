#include "mirf/jacobian.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mirf {

namespace {

void validate_spec(const PerturbationSpec& spec, int64_t flat_size) {
    if (spec.dim() < 2) throw Error("perturbation: need at least 2 indices");
    if (!(spec.sigma > 0.0)) throw Error("perturbation: sigma must be positive");
    std::unordered_set<int64_t> seen;
    for (int64_t i : spec.indices) {
        if (i < 0 || i >= flat_size) throw Error("perturbation: index out of range");
        if (!seen.insert(i).second) throw Error("perturbation: duplicate index");
    }
}

}  // namespace

PerturbationSpec make_single_layer_spec(const FieldParams& params, const std::string& layer,
                                        double sigma) {
    PerturbationSpec spec;
    spec.pattern = PerturbationSpec::SingleLayer;
    spec.sigma = sigma;
    const int64_t off = params.offset_of(layer);
    const int64_t n = params.tensor(layer).numel();
    for (int64_t i = 0; i < n; ++i) spec.indices.push_back(off + i);
    validate_spec(spec, params.flat_size());
    return spec;
}

PerturbationSpec make_random_neurons_spec(const FieldParams& params, int64_t d, double sigma,
                                          uint64_t seed) {
    PerturbationSpec spec;
    spec.pattern = PerturbationSpec::RandomNeurons;
    spec.sigma = sigma;
    const int64_t total = params.flat_size();
    if (d > total) throw Error("perturbation: more indices than parameters");
    Rng rng(mix_seed(seed, 0x9e34ull));
    std::unordered_set<int64_t> chosen;
    while (static_cast<int64_t>(chosen.size()) < d)
        chosen.insert(static_cast<int64_t>(rng.below(static_cast<uint64_t>(total))));
    spec.indices.assign(chosen.begin(), chosen.end());
    std::sort(spec.indices.begin(), spec.indices.end());
    validate_spec(spec, total);
    return spec;
}

PerturbationSpec make_layer_block_spec(const FieldParams& params, double sigma) {
    PerturbationSpec spec;
    spec.pattern = PerturbationSpec::LayerBlock;
    spec.sigma = sigma;
    for (const char* name : {"color0.w", "color0.b", "rgb.w", "rgb.b"}) {
        const int64_t off = params.offset_of(name);
        const int64_t n = params.tensor(name).numel();
        for (int64_t i = 0; i < n; ++i) spec.indices.push_back(off + i);
    }
    std::sort(spec.indices.begin(), spec.indices.end());
    validate_spec(spec, params.flat_size());
    return spec;
}

bool is_designated_layer(const PerturbationSpec& spec, const FieldParams& params) {
    const int64_t off = params.offset_of(FieldParams::kDesignatedLayer);
    const int64_t n = params.tensor(FieldParams::kDesignatedLayer).numel();
    if (spec.dim() != n) return false;
    for (int64_t i = 0; i < n; ++i)
        if (spec.indices[static_cast<size_t>(i)] != off + i) return false;
    return true;
}

PixelJacobian make_pixel_jacobian(std::vector<double> values) {
    PixelJacobian j;
    j.values = std::move(values);
    double s = 0.0;
    for (double v : j.values) {
        if (!std::isfinite(v)) throw Error("jacobian: non-finite gradient component");
        s += v * v;
    }
    j.norm = std::sqrt(s);
    return j;
}

PixelJacobian pixel_jacobian_ad(const FieldParams& params, const Ray& ray,
                                const PerturbationSpec& spec, int n_samples, uint64_t seed) {
    validate_spec(spec, params.flat_size());
    Tape tape;
    ParamNodes nodes = insert_params(tape, params, true);
    const Ray rays[1] = {ray};
    RaySamples samples = make_samples(std::span<const Ray>(rays, 1), n_samples, seed);
    RenderGraph g = build_render_graph(tape, nodes, params, samples);
    tape.backward(g.gray);

    std::vector<double> values;
    values.reserve(spec.indices.size());
    // walk the flat index space tensor by tensor
    size_t ti = 0;
    int64_t base = 0;
    for (int64_t flat : spec.indices) {
        while (flat >= base + params.tensor(ti).numel()) {
            base += params.tensor(ti).numel();
            ++ti;
        }
        values.push_back(tape.grad(nodes.ids[ti])[flat - base]);
    }
    return make_pixel_jacobian(std::move(values));
}

PixelJacobian pixel_jacobian_fast(const RenderOutput& ro, const FieldParams& params,
                                  const PerturbationSpec& spec) {
    if (!is_designated_layer(spec, params))
        throw Error("jacobian: fast path requires the designated rgb.w layer");
    const int H = params.config().hidden;
    const int64_t K = ro.h.rows();
    std::vector<double> values(static_cast<size_t>(3 * H), 0.0);
    for (int64_t k = 0; k < K; ++k) {
        const double wk = ro.w[static_cast<size_t>(k)];
        if (wk == 0.0) continue;
        for (int c = 0; c < 3; ++c) {
            const double sc = 1.0 / (1.0 + std::exp(-ro.z.at(k, c)));
            const double g = wk * sc * (1.0 - sc) / 3.0;
            for (int j = 0; j < H; ++j) values[static_cast<size_t>(c * H + j)] += g * ro.h.at(k, j);
        }
    }
    return make_pixel_jacobian(std::move(values));
}

PixelJacobian pixel_jacobian_fast_channel(const RenderOutput& ro, const FieldParams& params,
                                          int channel) {
    const int H = params.config().hidden;
    const int64_t K = ro.h.rows();
    std::vector<double> values(static_cast<size_t>(3 * H), 0.0);
    for (int64_t k = 0; k < K; ++k) {
        const double wk = ro.w[static_cast<size_t>(k)];
        if (wk == 0.0) continue;
        const double sc = 1.0 / (1.0 + std::exp(-ro.z.at(k, channel)));
        const double g = wk * sc * (1.0 - sc);
        for (int j = 0; j < H; ++j) values[static_cast<size_t>(channel * H + j)] += g * ro.h.at(k, j);
    }
    return make_pixel_jacobian(std::move(values));
}

double cosine_abs(const PixelJacobian& a, const PixelJacobian& b) {
    if (a.values.size() != b.values.size()) throw Error("cosine: dimension mismatch");
    if (a.norm <= kDegenerateNorm || b.norm <= kDegenerateNorm)
        throw Error("cosine: degenerate jacobian (near-zero norm)");
    double dot = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) dot += a.values[i] * b.values[i];
    return std::fabs(dot) / (a.norm * b.norm);
}

FieldParams apply_perturbation(const FieldParams& params, const PerturbationSpec& spec,
                               std::span<const double> direction) {
    validate_spec(spec, params.flat_size());
    if (static_cast<int64_t>(direction.size()) != spec.dim())
        throw Error("perturbation: direction size mismatch");
    double n2 = 0.0;
    for (double v : direction) n2 += v * v;
    if (std::fabs(std::sqrt(n2) - 1.0) > 1e-9) throw Error("perturbation: direction must be unit");
    FieldParams out = params;
    for (size_t i = 0; i < direction.size(); ++i)
        out.flat_add(spec.indices[i], spec.sigma * direction[i]);
    return out;
}

std::vector<double> sample_sphere_direction(int64_t d, Rng& rng) {
    if (d < 2) throw Error("sphere: dimension must be >= 2");
    std::vector<double> v(static_cast<size_t>(d));
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& x : v) {
            x = rng.normal();
            n2 += x * x;
        }
    } while (n2 < 1e-30);
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    return v;
}

double perturbed_gray_from_cache(const RenderOutput& ro, std::span<const double> dir, double sigma,
                                 int hidden, double* sample_gray_out) {
    const int64_t K = ro.h.rows();
    double gray = 0.0;
    for (int64_t k = 0; k < K; ++k) {
        double sample_gray = 0.0;
        for (int c = 0; c < 3; ++c) {
            double dz = 0.0;
            const double* d = dir.data() + c * hidden;
            for (int j = 0; j < hidden; ++j) dz += d[j] * ro.h.at(k, j);
            sample_gray += 1.0 / (1.0 + std::exp(-(ro.z.at(k, c) + sigma * dz)));
        }
        sample_gray /= 3.0;
        if (sample_gray_out) sample_gray_out[k] = sample_gray;
        gray += ro.w[static_cast<size_t>(k)] * sample_gray;
    }
    return gray;
}

}  // namespace mirf
