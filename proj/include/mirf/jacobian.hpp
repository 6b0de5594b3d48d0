#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mirf/field.hpp"
#include "mirf/render.hpp"
#include "mirf/rng.hpp"

namespace mirf {

// A perturbation target: which flattened parameters move, and how far.
struct PerturbationSpec {
    enum Pattern { RandomNeurons, SingleLayer, LayerBlock } pattern = SingleLayer;
    std::vector<int64_t> indices;  // unique, sorted, into the flat parameter space
    double sigma = 0.1;

    int64_t dim() const { return static_cast<int64_t>(indices.size()); }
};

PerturbationSpec make_single_layer_spec(const FieldParams& params, const std::string& layer,
                                        double sigma);
PerturbationSpec make_random_neurons_spec(const FieldParams& params, int64_t d, double sigma,
                                          uint64_t seed);
// the whole color branch (color0 + rgb layers)
PerturbationSpec make_layer_block_spec(const FieldParams& params, double sigma);

// true iff the spec covers exactly the designated rgb.w layer
bool is_designated_layer(const PerturbationSpec& spec, const FieldParams& params);

struct PixelJacobian {
    std::vector<double> values;
    double norm = 0.0;
};
PixelJacobian make_pixel_jacobian(std::vector<double> values);

// d(gray)/d(theta_spec) by reverse-mode AD through quadrature and MLP.
PixelJacobian pixel_jacobian_ad(const FieldParams& params, const Ray& ray,
                                const PerturbationSpec& spec, int n_samples, uint64_t seed);

// Analytic path for the designated layer, assembled from cached activations:
// J[c*H+j] = (1/3) * sum_k w_k * sigmoid'(z_kc) * h_kj.
PixelJacobian pixel_jacobian_fast(const RenderOutput& ro, const FieldParams& params,
                                  const PerturbationSpec& spec);

// Per-channel variant (no 1/3 gray averaging): J_c[c*H+j] for channel c only.
PixelJacobian pixel_jacobian_fast_channel(const RenderOutput& ro, const FieldParams& params,
                                          int channel);

// |a.b| / (|a||b|); degenerate inputs (norm <= 1e-12) are an error.
double cosine_abs(const PixelJacobian& a, const PixelJacobian& b);

constexpr double kDegenerateNorm = 1e-12;

// theta_spec <- theta_spec + sigma * direction; everything else bit-identical.
FieldParams apply_perturbation(const FieldParams& params, const PerturbationSpec& spec,
                               std::span<const double> direction);

// isotropic unit vector (normalized standard normal)
std::vector<double> sample_sphere_direction(int64_t d, Rng& rng);

// Gray value of a cached pixel when rgb.w moves by sigma * dir (dir indexed
// c*H+j). Exact: the density path does not depend on rgb.w. Optionally also
// yields the per-sample gray radiance values used by 3-D propagation.
double perturbed_gray_from_cache(const RenderOutput& ro, std::span<const double> dir, double sigma,
                                 int hidden, double* sample_gray_out = nullptr);

}  // namespace mirf
