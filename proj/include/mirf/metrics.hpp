#pragma once

#include <map>
#include <vector>

#include "mirf/tensor.hpp"

namespace mirf {

struct MetricReport {
    double miou = 0.0;
    double avg_class_acc = 0.0;
    double total_acc = 0.0;
    std::map<int, double> per_class_iou;  // seen classes only
    std::vector<int> seen;
};

// Metrics over the pixels whose ground-truth class is in `seen`; classes the
// source view never showed are excluded from every score.
MetricReport compute_metrics(const LabelImage& pred, const LabelImage& gt,
                             const std::vector<int>& seen);

// classes (id >= 1) present in a label image
std::vector<int> seen_classes(const LabelImage& labels);

}  // namespace mirf
