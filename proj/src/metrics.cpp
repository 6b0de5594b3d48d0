#include "mirf/metrics.hpp"

#include <algorithm>
#include <set>

namespace mirf {

std::vector<int> seen_classes(const LabelImage& labels) {
    std::set<int> ids;
    for (int32_t id : labels.ids)
        if (id >= 1) ids.insert(id);
    return {ids.begin(), ids.end()};
}

MetricReport compute_metrics(const LabelImage& pred, const LabelImage& gt,
                             const std::vector<int>& seen) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw Error("metrics: label image shapes differ");
    if (seen.empty()) throw Error("metrics: empty seen-class set");

    MetricReport rep;
    rep.seen = seen;
    std::set<int> seen_set(seen.begin(), seen.end());

    std::map<int, int64_t> inter, pred_n, gt_n;
    int64_t correct = 0, total = 0;
    for (size_t i = 0; i < gt.ids.size(); ++i) {
        const int g = gt.ids[i];
        if (!seen_set.count(g)) continue;  // evaluate on seen-class pixels only
        const int p = pred.ids[i];
        ++total;
        ++gt_n[g];
        ++pred_n[p];
        if (p == g) {
            ++correct;
            ++inter[g];
        }
    }

    double iou_sum = 0.0, acc_sum = 0.0;
    for (int k : seen) {
        const int64_t un = gt_n[k] + pred_n[k] - inter[k];
        const double iou = un > 0 ? static_cast<double>(inter[k]) / un : 0.0;
        rep.per_class_iou[k] = iou;
        iou_sum += iou;
        acc_sum += gt_n[k] > 0 ? static_cast<double>(inter[k]) / gt_n[k] : 0.0;
    }
    rep.miou = iou_sum / seen.size();
    rep.avg_class_acc = acc_sum / seen.size();
    rep.total_acc = total > 0 ? static_cast<double>(correct) / total : 0.0;
    return rep;
}

}  // namespace mirf
