#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mirf/camera.hpp"
#include "mirf/field.hpp"
#include "mirf/jacobian.hpp"

namespace mirf {

// Monte-Carlo and closed-form mutual information between two pixels under
// random perturbations of the chosen parameter subset, for verifying that
// MI tracks |cos| of the pixel Jacobians.

struct MiEstimate {
    double empirical_mi = 0.0;   // nats, plug-in histogram estimate
    double closed_form = 0.0;    // nats up to an additive constant
    double cos_abs = 0.0;
    int n_draws = 0;
    int bins = 0;
    double sigma = 0.0;
    bool degenerate = false;     // zero response variance or zero-norm jacobian
    double jackknife_bias = 0.0; // leave-one-out bias estimate of empirical_mi
};

// log(1/sqrt(1-c^2)); returns the +infinity sentinel once c >= 1-1e-12.
double closed_form_mi(double cos_abs);

// display clamp used by mi_map (value at cos = 0.999)
double mi_map_clamp();

// Plug-in MI of two scalar samples with an equal-width 2-D histogram; bin
// edges span the observed range of each coordinate, so the estimate is
// exactly invariant to adding a constant to either stream.
double histogram_mi(std::span<const double> x, std::span<const double> y, int bins,
                    double* jackknife_bias = nullptr);

MiEstimate mc_mi_estimate(const FieldParams& params, const Ray& ray_i, const Ray& ray_j,
                          const PerturbationSpec& spec, int n_draws, int bins, uint64_t seed,
                          int n_samples = 32);

struct MiMap {
    Tensor values;                   // [H,W], closed-form MI clamped at cos 0.999
    std::vector<uint8_t> degenerate; // per pixel: 1 = no signal
    double source_cos_norm = 0.0;
};

// Closed-form MI between one source pixel and every pixel of a target view.
MiMap mi_map(const FieldParams& params, const Camera& source_cam, int u, int v,
             const Camera& target_cam, const PerturbationSpec& spec, int n_samples, uint64_t seed,
             double near = 0.1, double far = 6.0);

}  // namespace mirf
