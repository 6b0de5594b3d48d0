#pragma once

#include <span>
#include <vector>

#include "mirf/camera.hpp"
#include "mirf/field.hpp"
#include "mirf/tape.hpp"

namespace mirf {

// Stratified sample positions and segment lengths for a batch of rays.
// Ray i draws its jitter from mix_seed(seed, i).
struct RaySamples {
    int64_t n_rays = 0;
    int64_t n_samples = 0;
    std::vector<double> t;      // [R*K]
    std::vector<double> delta;  // [R*K]; last segment runs to `far`
    std::vector<double> pts;    // [R*K,3]
    std::vector<double> dirs;   // [R*K,3]
};
RaySamples make_samples(std::span<const Ray> rays, int n_samples, uint64_t seed);

// w_k = T_k * (1 - exp(-sigma_k * delta_k)), T_k = exp(-sum_{j<k} sigma_j delta_j)
void composite_weights(const double* sigma, const double* delta, int64_t k, double* w);

// Everything a pixel render produces that downstream consumers need: the
// color, the quadrature internals, and the cached color-branch activations
// used by the analytic Jacobian path and perturbed re-renders.
struct RenderOutput {
    double rgb[3] = {0, 0, 0};
    double gray = 0;
    std::vector<double> t;
    std::vector<double> delta;
    std::vector<double> w;
    Tensor h;  // [K,H] penultimate color features
    Tensor z;  // [K,3] pre-activation color logits
};

RenderOutput render_pixel(const FieldParams& params, const Ray& ray, int n_samples,
                          uint64_t seed, bool importance = false);

using RenderCache = std::vector<RenderOutput>;

// Image tensor [H,W,3]; pixel i uses seed mix_seed(seed, i). Deterministic and
// bit-identical for any thread count (pixels are independent).
Tensor render_image(const FieldParams& params, const Camera& cam, int n_samples, uint64_t seed,
                    RenderCache* cache = nullptr, bool parallel = true, bool importance = false,
                    double near = 0.1, double far = 6.0);

// 10*log10(1/MSE); identical images return the +infinity sentinel.
double psnr(const Tensor& a, const Tensor& b);

// ---- tape graph construction (training and reference Jacobians) ----

struct ParamNodes {
    std::vector<NodeId> ids;  // same order as FieldParams tensors
};
ParamNodes insert_params(Tape& tape, const FieldParams& params, bool needs_grad = true);
NodeId param_node(const ParamNodes& nodes, const FieldParams& params, const std::string& name);

struct RenderGraph {
    NodeId w = -1;      // [R,K]
    NodeId h = -1;      // [R*K,H]
    NodeId z = -1;      // [R*K,3]
    NodeId color = -1;  // sigmoid(z)
    NodeId rgb = -1;    // [R,3]
    NodeId gray = -1;   // [R,1]
};
RenderGraph build_render_graph(Tape& tape, const ParamNodes& nodes, const FieldParams& params,
                               const RaySamples& samples);

// Rows of d(gray)/d(rgb.w) for every ray, [R,3H]; flat layout matches the
// designated layer (c*H+j). Built from forward activations only, so a single
// reverse pass differentiates through it.
NodeId build_jacobian_rows(Tape& tape, const RenderGraph& g, int64_t n_rays, int64_t n_samples,
                           int hidden);

}  // namespace mirf
