#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mirf/io.hpp"
#include "mirf/tensor.hpp"

namespace mirf {

struct FieldConfig {
    int l_pos = 6;      // position encoding frequency count
    int l_dir = 4;      // direction encoding frequency count
    int hidden = 64;    // H
    int trunk_depth = 4;
    // fixed output gain on the rectified density so surfaces can reach full
    // opacity within a short optimization budget
    double density_scale = 25.0;

    int pos_dim() const { return 3 + 6 * l_pos; }
    int dir_dim() const { return 3 + 6 * l_dir; }
};

// All trainable weights of the radiance MLP, as an ordered list of named
// tensors. The flattened parameter space used by perturbation index sets is
// the row-major concatenation of the tensors in this order.
//
//   trunk0.w [P,H] trunk0.b [H] ... density.w [H,1] density.b [1]
//   color0.w [H+Q,H] color0.b [H] rgb.w [3,H] rgb.b [3]
//
// "rgb.w" is the designated perturbation layer; it is stored (3,H) row-major
// so flat index c*H+j addresses weight (channel c, feature j).
class FieldParams {
public:
    static constexpr const char* kDesignatedLayer = "rgb.w";

    FieldParams() = default;
    static FieldParams init(const FieldConfig& cfg, uint64_t seed);

    const FieldConfig& config() const { return cfg_; }
    size_t count() const { return tensors_.size(); }
    const std::string& name(size_t i) const { return tensors_[i].first; }
    Tensor& tensor(const std::string& name);
    const Tensor& tensor(const std::string& name) const;
    Tensor& tensor(size_t i) { return tensors_[i].second; }
    const Tensor& tensor(size_t i) const { return tensors_[i].second; }

    int64_t flat_size() const;
    int64_t offset_of(const std::string& name) const;
    double flat_get(int64_t i) const;
    void flat_add(int64_t i, double delta);

    bool shaped_tag = false;  // set after the shaping phase

    void save(const std::string& path) const;
    static FieldParams load(const std::string& path);

private:
    FieldConfig cfg_;
    io::NamedTensors tensors_;
};

// gamma(x): raw coordinates followed by sin/cos pairs at frequencies
// 2^0*pi .. 2^{L-1}*pi, interleaved per frequency; output dim 3 + 6L.
void positional_encode(const double* xyz, int L, double* out);
int positional_dim(int L);

// Batched MLP evaluation. pts/dirs are [N,3]; fills sigma [N], h [N,H],
// z [N,3]. Throws naming the first offending layer if outputs go non-finite.
struct FieldEval {
    std::vector<double> sigma;
    Tensor h;
    Tensor z;
};
FieldEval field_forward(const FieldParams& params, const std::vector<double>& pts,
                        const std::vector<double>& dirs, int64_t n);

}  // namespace mirf
