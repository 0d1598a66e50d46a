#include "occ/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace occ::metrics {

using scene::kEmptyLabel;
using scene::SemanticVoxelGrid;

namespace {

void check_dims(const SemanticVoxelGrid& a, const SemanticVoxelGrid& b,
                const std::vector<uint8_t>* visible) {
  if (a.X != b.X || a.Y != b.Y || a.Z != b.Z)
    throw std::invalid_argument("metrics: grid dimension mismatch");
  if (visible && static_cast<int64_t>(visible->size()) != a.nvox())
    throw std::invalid_argument("metrics: visible mask size mismatch");
}

EvalReport score(const SemanticVoxelGrid& pred, const SemanticVoxelGrid& gt,
                 const std::vector<uint8_t>* visible) {
  check_dims(pred, gt, visible);
  size_t ncat = gt.categories.size();
  EvalReport r;
  for (const auto& c : gt.categories) r.names.push_back(c.name);
  r.tp.assign(ncat, 0);
  r.fp.assign(ncat, 0);
  r.fn.assign(ncat, 0);
  r.gt_count.assign(ncat, 0);
  r.visible_mask_applied = visible != nullptr;
  for (int64_t i = 0; i < gt.nvox(); ++i) {
    if (visible && !(*visible)[i]) continue;
    uint16_t p = pred.labels[i], g = gt.labels[i];
    bool po = p != kEmptyLabel, go = g != kEmptyLabel;
    if ((po && p >= ncat) || (go && g >= ncat))
      throw std::invalid_argument("metrics: label outside the shared category table");
    if (po && go)
      ++r.geo_tp;
    else if (po)
      ++r.geo_fp;
    else if (go)
      ++r.geo_fn;
    if (go) ++r.gt_count[g];
    if (p == g) {
      if (po) ++r.tp[p];
    } else {
      if (po) ++r.fp[p];
      if (go) ++r.fn[g];
    }
  }
  return r;
}

}  // namespace

double EvalReport::geometry_iou() const {
  int64_t u = geo_tp + geo_fp + geo_fn;
  return u == 0 ? 1.0 : static_cast<double>(geo_tp) / static_cast<double>(u);
}

std::vector<double> EvalReport::per_class_iou() const {
  std::vector<double> iou(tp.size(), std::nan(""));
  for (size_t c = 0; c < tp.size(); ++c) {
    int64_t u = tp[c] + fp[c] + fn[c];
    if (u > 0) iou[c] = static_cast<double>(tp[c]) / static_cast<double>(u);
  }
  return iou;
}

double EvalReport::miou() const {
  auto iou = per_class_iou();
  double s = 0;
  int n = 0;
  for (double v : iou)
    if (!std::isnan(v)) {
      s += v;
      ++n;
    }
  return n == 0 ? std::nan("") : s / n;
}

std::string EvalReport::table() const {
  std::vector<size_t> order(tp.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return gt_count[a] > gt_count[b]; });
  auto iou = per_class_iou();
  std::ostringstream os;
  os << "class              gt_count        IoU\n";
  for (size_t c : order) {
    os.width(12);
    os << std::left << (c < names.size() && !names[c].empty() ? names[c] : "cat_" + std::to_string(c))
       << std::right;
    os.width(12);
    os << gt_count[c];
    os.width(12);
    if (std::isnan(iou[c]))
      os << "-";
    else
      os << iou[c];
    os << "\n";
  }
  os << "geometry_iou " << geometry_iou() << "\nmiou " << miou() << "\n";
  return os.str();
}

std::string EvalReport::key_values() const {
  std::ostringstream os;
  os << "geometry_iou = " << geometry_iou() << "\n";
  os << "miou = " << miou() << "\n";
  os << "visible_mask = " << (visible_mask_applied ? 1 : 0) << "\n";
  os << "proxy = " << (proxy_applied ? 1 : 0) << "\n";
  auto iou = per_class_iou();
  for (size_t c = 0; c < iou.size(); ++c) {
    os << "class." << c << ".count = " << gt_count[c] << "\n";
    if (!std::isnan(iou[c])) os << "class." << c << ".iou = " << iou[c] << "\n";
  }
  return os.str();
}

double geometry_iou(const SemanticVoxelGrid& pred, const SemanticVoxelGrid& gt,
                    const std::vector<uint8_t>* visible) {
  check_dims(pred, gt, visible);
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < gt.nvox(); ++i) {
    if (visible && !(*visible)[i]) continue;
    bool po = pred.labels[i] != kEmptyLabel, go = gt.labels[i] != kEmptyLabel;
    inter += po && go;
    uni += po || go;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

EvalReport semantic_miou(const SemanticVoxelGrid& pred, const SemanticVoxelGrid& gt,
                         const std::vector<uint8_t>* visible) {
  return score(pred, gt, visible);
}

EvalReport gt_substitution_proxy(const SemanticVoxelGrid& pred, const SemanticVoxelGrid& gt,
                                 const std::vector<uint8_t>* visible) {
  check_dims(pred, gt, visible);
  SemanticVoxelGrid subst = pred;
  for (int64_t i = 0; i < gt.nvox(); ++i)
    if (pred.labels[i] != kEmptyLabel && gt.labels[i] != kEmptyLabel)
      subst.labels[i] = gt.labels[i];
  EvalReport r = score(subst, gt, visible);
  r.proxy_applied = true;
  return r;
}

EvalReport per_class_report(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("per_class_report: no reports");
  EvalReport out = reports[0];
  for (size_t i = 1; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    if (r.tp.size() != out.tp.size())
      throw std::invalid_argument("per_class_report: category table mismatch");
    for (size_t c = 0; c < out.tp.size(); ++c) {
      out.tp[c] += r.tp[c];
      out.fp[c] += r.fp[c];
      out.fn[c] += r.fn[c];
      out.gt_count[c] += r.gt_count[c];
    }
    out.geo_tp += r.geo_tp;
    out.geo_fp += r.geo_fp;
    out.geo_fn += r.geo_fn;
    out.visible_mask_applied = out.visible_mask_applied && r.visible_mask_applied;
    out.proxy_applied = out.proxy_applied && r.proxy_applied;
  }
  return out;
}

}  // namespace occ::metrics
