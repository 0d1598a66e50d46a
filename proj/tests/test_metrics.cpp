#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "occ/metrics.hpp"

using namespace occ;
using namespace occ::metrics;
using scene::kEmptyLabel;
using scene::SemanticVoxelGrid;

namespace {

SemanticVoxelGrid make_grid(int x, int y, int z, int ncat) {
  SemanticVoxelGrid g;
  g.X = x;
  g.Y = y;
  g.Z = z;
  g.labels.assign(static_cast<size_t>(g.nvox()), kEmptyLabel);
  for (int c = 0; c < ncat; ++c) g.categories.push_back({"cat_" + std::to_string(c), c % 2 == 0});
  return g;
}

}  // namespace

TEST_CASE("geometry IoU closed forms") {
  auto gt = make_grid(2, 2, 2, 2);
  auto pred = gt;
  gt.labels = {0, 0, 1, 1, kEmptyLabel, kEmptyLabel, kEmptyLabel, kEmptyLabel};
  pred.labels = gt.labels;
  CHECK(geometry_iou(pred, gt) == 1.0);

  // disjoint occupancy
  pred.labels = {kEmptyLabel, kEmptyLabel, kEmptyLabel, kEmptyLabel, 0, 0, 1, 1};
  CHECK(geometry_iou(pred, gt) == 0.0);

  // pred 3 occupied, gt 4, overlap 2 -> 2/5
  pred.labels = {0, 0, kEmptyLabel, kEmptyLabel, 1, kEmptyLabel, kEmptyLabel, kEmptyLabel};
  CHECK(geometry_iou(pred, gt) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(geometry_iou(pred, gt) == geometry_iou(gt, pred));  // symmetry

  auto bad = make_grid(2, 2, 1, 2);
  CHECK_THROWS(geometry_iou(bad, gt));
}

TEST_CASE("semantic mIoU counting oracle and conventions") {
  auto gt = make_grid(2, 2, 2, 3);
  auto pred = gt;
  // hand-built 8-voxel case with two categories in play
  gt.labels = {0, 0, 0, 1, 1, kEmptyLabel, kEmptyLabel, kEmptyLabel};
  pred.labels = {0, 0, 1, 1, kEmptyLabel, 1, kEmptyLabel, kEmptyLabel};
  // cat0: tp=2 fp=0 fn=1 -> 2/3 ; cat1: tp=1 fp=2 fn=1 -> 1/4 ; cat2 absent
  auto r = semantic_miou(pred, gt);
  auto iou = r.per_class_iou();
  CHECK(iou[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(iou[1] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(std::isnan(iou[2]));  // absent from both: excluded
  CHECK(r.miou() == doctest::Approx((2.0 / 3.0 + 0.25) / 2).epsilon(1e-12));
  CHECK(r.gt_count == std::vector<int64_t>{3, 2, 0});

  // perfect prediction
  auto rp = semantic_miou(gt, gt);
  for (size_t c = 0; c < 2; ++c) CHECK(rp.per_class_iou()[c] == 1.0);
  CHECK(rp.miou() == 1.0);

  // per-category symmetry
  auto rs = semantic_miou(gt, pred);
  for (int c = 0; c < 2; ++c)
    CHECK(rs.per_class_iou()[c] == doctest::Approx(iou[c]).epsilon(1e-12));
}

TEST_CASE("visible-mask filtering only counts masked voxels") {
  auto gt = make_grid(2, 2, 2, 2);
  auto pred = gt;
  gt.labels = {0, 0, 1, 1, 0, 0, 1, 1};
  pred.labels = {0, 1, 1, 0, kEmptyLabel, kEmptyLabel, kEmptyLabel, kEmptyLabel};
  std::vector<uint8_t> vis = {1, 1, 1, 1, 0, 0, 0, 0};
  auto r = semantic_miou(pred, gt, &vis);
  CHECK(r.visible_mask_applied);
  // within the mask: cat0 tp=1 fp=1 fn=1; cat1 tp=1 fp=1 fn=1
  CHECK(r.tp == std::vector<int64_t>{1, 1});
  CHECK(r.fp == std::vector<int64_t>{1, 1});
  CHECK(r.fn == std::vector<int64_t>{1, 1});
  CHECK(geometry_iou(pred, gt, &vis) == 1.0);  // all masked-in voxels occupied in both
  // masked-out mistakes are invisible: flipping them changes nothing
  auto pred2 = pred;
  pred2.labels[5] = 1;
  auto r2 = semantic_miou(pred2, gt, &vis);
  CHECK(r2.tp == r.tp);
  CHECK(r2.fp == r.fp);
  CHECK(r2.fn == r.fn);
}

TEST_CASE("gt substitution proxy") {
  auto gt = make_grid(2, 2, 2, 2);
  gt.labels = {0, 0, 1, 1, kEmptyLabel, kEmptyLabel, kEmptyLabel, kEmptyLabel};

  // already perfect: unchanged
  auto rp = gt_substitution_proxy(gt, gt);
  CHECK(rp.proxy_applied);
  CHECK(rp.miou() == 1.0);
  CHECK(rp.geometry_iou() == 1.0);

  // perfect geometry, uniformly wrong semantics -> proxy mIoU = 1
  auto wrong = gt;
  for (auto& l : wrong.labels)
    if (l != kEmptyLabel) l = 1 - l;
  CHECK(semantic_miou(wrong, gt).miou() < 0.5);
  CHECK(gt_substitution_proxy(wrong, gt).miou() == 1.0);

  // monotonicity sweep on random outputs
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dl(0, 4);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = make_grid(4, 4, 2, 4);
    auto p = g;
    for (auto& l : g.labels) {
      int v = dl(rng);
      l = v == 4 ? kEmptyLabel : static_cast<uint16_t>(v);
    }
    for (auto& l : p.labels) {
      int v = dl(rng);
      l = v == 4 ? kEmptyLabel : static_cast<uint16_t>(v);
    }
    auto raw = semantic_miou(p, g);
    auto prox = gt_substitution_proxy(p, g);
    CHECK(prox.miou() >= raw.miou() - 1e-12);
    auto ri = raw.per_class_iou();
    auto pi = prox.per_class_iou();
    for (size_t c = 0; c < ri.size(); ++c)
      if (!std::isnan(ri[c]) && !std::isnan(pi[c])) CHECK(pi[c] >= ri[c] - 1e-12);
  }
}

TEST_CASE("dataset-level pooling") {
  auto gt = make_grid(2, 2, 1, 2);
  auto pred = gt;

  // single scene: aggregation is the identity
  gt.labels = {0, 0, 1, kEmptyLabel};
  pred.labels = {0, 1, 1, kEmptyLabel};
  auto r1 = semantic_miou(pred, gt);
  auto agg1 = per_class_report({r1});
  CHECK(agg1.miou() == doctest::Approx(r1.miou()).epsilon(1e-12));

  // pooled IoU differs from the mean of per-scene IoUs
  auto gt2 = make_grid(2, 2, 1, 2);
  auto pred2 = gt2;
  gt2.labels = {0, 0, 0, 0};
  pred2.labels = {0, 0, 0, 1};
  auto r2 = semantic_miou(pred2, gt2);
  // scene1 cat0: tp=1 fp=0 fn=1 -> 1/2 ; scene2 cat0: tp=3 fp=0 fn=1 -> 3/4
  // pooled cat0: tp=4 fp=0 fn=2 -> 2/3 != (1/2+3/4)/2
  auto pooled = per_class_report({r1, r2});
  CHECK(pooled.per_class_iou()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(std::abs(pooled.per_class_iou()[0] - 0.5 * (0.5 + 0.75)) > 0.01);
  CHECK(pooled.gt_count == std::vector<int64_t>{6, 1});

  // emitted table is ordered by non-increasing gt count
  auto txt = pooled.table();
  auto p0 = txt.find("cat_0");
  auto p1 = txt.find("cat_1");
  REQUIRE(p0 != std::string::npos);
  REQUIRE(p1 != std::string::npos);
  CHECK(p0 < p1);
  CHECK(pooled.key_values().find("class.0.count = 6") != std::string::npos);
}
