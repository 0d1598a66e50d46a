#include "occ/group_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "occ/ops_sample.hpp"

namespace occ::gd {

using scene::kEmptyLabel;

// ---- semantic groups ----

namespace {

SemanticGroup make_gt_group(const std::vector<scene::CategoryDef>& cats) {
  SemanticGroup g;
  for (size_t i = 0; i < cats.size(); ++i) {
    g.label_names.push_back(cats[i].name);
    g.relabel.push_back(static_cast<int>(i));
    g.to_original.push_back(static_cast<uint16_t>(i));
  }
  g.label_names.push_back("empty");
  g.to_original.push_back(kEmptyLabel);
  g.empty_label = static_cast<int>(cats.size());
  return g;
}

// Splits one partition's categories into `bands` count bands (band 0 = most
// frequent); thresholds are midpoints between adjacent band boundary counts.
void assign_bands(const std::vector<int64_t>& histogram, const std::vector<int>& ids, int bands,
                  std::vector<std::vector<int>>& members, std::vector<double>& edges) {
  edges.assign(bands + 1, 0.0);
  edges[0] = kInf;
  std::vector<int> nz;
  for (int id : ids)
    if (histogram[id] > 0) nz.push_back(id);
  std::sort(nz.begin(), nz.end(), [&](int a, int b) {
    return histogram[a] != histogram[b] ? histogram[a] > histogram[b] : a < b;
  });
  int n = static_cast<int>(nz.size());
  for (int j = 1; j < bands; ++j) {
    int b = n * j / bands;
    edges[j] = (b <= 0 || b >= n)
                   ? (b <= 0 ? kInf : 0.0)
                   : 0.5 * (static_cast<double>(histogram[nz[b - 1]]) + histogram[nz[b]]);
  }
  for (int id : nz) {
    int band = bands - 1;
    for (int j = 0; j < bands; ++j)
      if (static_cast<double>(histogram[id]) > edges[j + 1]) {
        band = j;
        break;
      }
    members[band].push_back(id);
  }
}

}  // namespace

SemanticGroupSpec build_semantic_groups(const std::vector<int64_t>& histogram,
                                        const std::vector<scene::CategoryDef>& cats, int K) {
  if (K < 1) throw std::invalid_argument("build_semantic_groups: K >= 1");
  if (histogram.size() != cats.size())
    throw std::invalid_argument("build_semantic_groups: histogram/category size mismatch");
  SemanticGroupSpec spec;
  spec.K = K;
  if (K == 1) {
    spec.groups.push_back(make_gt_group(cats));
    return spec;
  }

  // G_1: {foreground, background, empty}
  SemanticGroup g1;
  g1.label_names = {"foreground", "background", "empty"};
  g1.empty_label = 2;
  for (const auto& c : cats) {
    g1.relabel.push_back(c.foreground ? 0 : 1);
  }
  g1.to_original.assign(3, kEmptyLabel);
  spec.groups.push_back(g1);

  int mid = K - 2;
  if (mid > 0) {
    std::vector<int> fg_ids, bg_ids;
    for (size_t i = 0; i < cats.size(); ++i)
      (cats[i].foreground ? fg_ids : bg_ids).push_back(static_cast<int>(i));
    std::vector<std::vector<int>> fg_members(mid), bg_members(mid);
    std::vector<double> fg_edges, bg_edges;
    assign_bands(histogram, fg_ids, mid, fg_members, fg_edges);
    assign_bands(histogram, bg_ids, mid, bg_members, bg_edges);
    // zero-count categories land in the finest middle group, flagged
    for (size_t i = 0; i < cats.size(); ++i)
      if (histogram[i] == 0)
        (cats[i].foreground ? fg_members : bg_members)[mid - 1].push_back(static_cast<int>(i));

    for (int j = 0; j < mid; ++j) {
      SemanticGroup g;
      g.others_label = 0;
      g.label_names.push_back("others");
      g.to_original.push_back(kEmptyLabel);
      g.fg_hi = fg_edges[j];
      g.fg_lo = fg_edges[j + 1];
      g.bg_hi = bg_edges[j];
      g.bg_lo = bg_edges[j + 1];
      std::vector<int> ids = fg_members[j];
      ids.insert(ids.end(), bg_members[j].begin(), bg_members[j].end());
      std::sort(ids.begin(), ids.end());
      g.relabel.assign(cats.size(), 0);
      for (int id : ids) {
        g.relabel[id] = static_cast<int>(g.label_names.size());
        g.label_names.push_back(cats[id].name);
        g.to_original.push_back(static_cast<uint16_t>(id));
        if (histogram[id] == 0) g.flagged_zero_count.push_back(id);
      }
      g.label_names.push_back("empty");
      g.to_original.push_back(kEmptyLabel);
      g.empty_label = static_cast<int>(g.label_names.size()) - 1;
      spec.groups.push_back(std::move(g));
    }
  }

  spec.groups.push_back(make_gt_group(cats));
  return spec;
}

std::string SemanticGroupSpec::serialize() const {
  std::ostringstream os;
  os << "K = " << K << "\n";
  for (size_t g = 0; g < groups.size(); ++g) {
    const auto& gr = groups[g];
    os << "group." << g + 1 << ".labels =";
    for (const auto& n : gr.label_names) os << " " << n;
    os << "\n";
    if (gr.others_label >= 0) {
      auto range = [](double lo, double hi) {
        std::ostringstream r;
        r << "(" << lo << ", ";
        if (hi == kInf)
          r << "inf";
        else
          r << hi;
        r << "]";
        return r.str();
      };
      os << "group." << g + 1 << ".fg_count = " << range(gr.fg_lo, gr.fg_hi) << "\n";
      os << "group." << g + 1 << ".bg_count = " << range(gr.bg_lo, gr.bg_hi) << "\n";
    }
    if (!gr.flagged_zero_count.empty()) {
      os << "group." << g + 1 << ".zero_count_forced =";
      for (int id : gr.flagged_zero_count) os << " " << id;
      os << "\n";
    }
  }
  return os.str();
}

std::vector<int> relabel_for_group(const std::vector<uint16_t>& labels,
                                   const SemanticGroup& group) {
  std::vector<int> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    uint16_t l = labels[i];
    if (l == kEmptyLabel) {
      out[i] = group.empty_label;
    } else {
      if (l >= group.relabel.size())
        throw std::out_of_range("relabel_for_group: unknown category id");
      out[i] = group.relabel[l];
    }
  }
  return out;
}

// ---- decoder ----

MaskDecoderLayer::MaskDecoderLayer(ParamStore& ps, const std::string& name, const GdConfig& cfg)
    : heads(cfg.heads),
      n_ref(cfg.n_ref),
      ln_q(ps, name + ".ln", cfg.c_m),
      value_proj(ps, name + ".value", cfg.c_query, cfg.c_m),
      point_head(ps, name + ".point", cfg.c_m, cfg.heads * cfg.n_ref * 3, /*zero_init=*/true),
      weight_head(ps, name + ".weight", cfg.c_m, cfg.heads * cfg.n_ref),
      out_proj(ps, name + ".out", cfg.c_m, cfg.c_m, /*zero_init=*/true),
      self_attn(ps, name + ".attn", cfg.c_m, cfg.heads) {}

Tensor MaskDecoderLayer::operator()(const Tensor& q, const Tensor& ref_logits,
                                    const Tensor& oc_vol) const {
  int nq = q.dim(0), cm = q.dim(1);
  int hr = heads * n_ref;
  Tensor qn = ln_q(q);
  // expand [Nq,3] reference logits over (head, ref) with a constant selector
  std::vector<double> sel(static_cast<size_t>(3) * hr * 3, 0.0);
  for (int i = 0; i < hr; ++i)
    for (int c = 0; c < 3; ++c) sel[static_cast<size_t>(c) * hr * 3 + i * 3 + c] = 1.0;
  Tensor refx = matmul(ref_logits, Tensor::from({3, hr * 3}, std::move(sel)));
  Tensor points = reshape(sigmoid(add(refx, point_head(qn))), {nq, heads, n_ref, 3});
  Tensor w = reshape(softmax(reshape(weight_head(qn), {nq * heads, n_ref}), 1),
                     {nq, heads, n_ref});

  int cq = oc_vol.dim(0);
  int64_t n = oc_vol.size() / cq;
  Tensor val2d = transpose2d(value_proj(transpose2d(reshape(oc_vol, {cq, static_cast<int>(n)}))));
  Tensor value = reshape(val2d, {cm, oc_vol.dim(1), oc_vol.dim(2), oc_vol.dim(3)});
  Tensor sampled = deform_attend_3d(value, points, w);
  Tensor out = add(q, out_proj(sampled));
  return self_attn(out, Tensor());
}

GroupDecoder::GroupDecoder(ParamStore& ps, const GdConfig& cfg_, const SemanticGroupSpec& spec)
    : cfg(cfg_),
      mask_embed1(ps, "dec.embed1", cfg_.c_m, cfg_.c_m),
      mask_embed2(ps, "dec.embed2", cfg_.c_m, cfg_.c_query) {
  for (int l = 0; l < cfg.n_layers; ++l)
    layers.emplace_back(ps, "dec.l" + std::to_string(l), cfg);
  for (size_t g = 0; g < spec.groups.size(); ++g) {
    GroupHead h;
    std::string pre = "dec.g" + std::to_string(g);
    h.query_embed = ps.add(pre + ".query", {cfg.n_q, cfg.c_m}, 1.0 / std::sqrt(cfg.c_m));
    h.ref_points = ps.add(pre + ".ref", {cfg.n_q, 3}, 1.0);
    int n_labels = static_cast<int>(spec.groups[g].label_names.size());
    h.class_head = Linear(ps, pre + ".cls", cfg.c_m, n_labels + 1);
    heads.push_back(std::move(h));
  }
}

GroupPrediction GroupDecoder::decode(int group, const Tensor& oc_vol,
                                     const Tensor& o_flat) const {
  const GroupHead& h = heads.at(group);
  Tensor q = h.query_embed;
  for (const auto& layer : layers) q = layer(q, h.ref_points, oc_vol);
  GroupPrediction out;
  out.class_logits = h.class_head(q);
  Tensor e_m = mask_embed2(relu(mask_embed1(q)));
  out.mask_logits = mask_logits_from_embeddings(e_m, o_flat);
  return out;
}

Tensor mask_logits_from_embeddings(const Tensor& e_m, const Tensor& o_flat) {
  if (e_m.dim(1) != o_flat.dim(0))
    throw std::invalid_argument("mask_logits_from_embeddings: channel mismatch");
  return matmul(e_m, o_flat);
}

// ---- matching ----

std::vector<int> hungarian_assign(const std::vector<double>& cost, int n_rows, int n_cols) {
  if (n_cols > n_rows) throw std::invalid_argument("hungarian_assign: more columns than rows");
  // potentials method; "rows" of the algorithm are our columns (segments)
  int n = n_cols, m = n_rows;
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= m; ++j)
        if (!used[j]) {
          double cur = cost[static_cast<size_t>(j - 1) * n_cols + (i0 - 1)] - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int j = 0; j <= m; ++j)
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assigned(n_cols, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] > 0) assigned[p[j] - 1] = j - 1;
  return assigned;
}

namespace {

double bce_mean(const double* logits, const std::vector<double>& t) {
  double s = 0.0;
  for (size_t v = 0; v < t.size(); ++v) {
    double l = logits[v];
    s += std::max(l, 0.0) - l * t[v] + std::log1p(std::exp(-std::abs(l)));
  }
  return s / static_cast<double>(t.size());
}

double dice_cost(const double* logits, const std::vector<double>& t, double eps = 1.0) {
  double inter = 0.0, ps = 0.0, ts = 0.0;
  for (size_t v = 0; v < t.size(); ++v) {
    double p = 1.0 / (1.0 + std::exp(-logits[v]));
    inter += p * t[v];
    ps += p;
    ts += t[v];
  }
  return 1.0 - (2.0 * inter + eps) / (ps + ts + eps);
}

std::vector<double> binary_target(const std::vector<int>& target, int label) {
  std::vector<double> t(target.size());
  for (size_t i = 0; i < target.size(); ++i) t[i] = target[i] == label ? 1.0 : 0.0;
  return t;
}

}  // namespace

Matching hungarian_match(const GroupPrediction& pred, const std::vector<int>& target,
                         int n_labels, const GdConfig& cfg) {
  Matching m;
  std::vector<char> present(n_labels, 0);
  for (int l : target)
    if (l >= 0 && l < n_labels) present[l] = 1;
  for (int l = 0; l < n_labels; ++l)
    if (present[l]) m.segment_label.push_back(l);
  int n_seg = static_cast<int>(m.segment_label.size());
  int n_q = pred.class_logits.dim(0);
  if (n_seg > n_q)
    throw std::runtime_error("hungarian_match: " + std::to_string(n_seg) +
                             " gt segments exceed " + std::to_string(n_q) +
                             " queries; increase n_q");
  int lc = pred.class_logits.dim(1);
  int64_t nvox = pred.mask_logits.dim(1);

  std::vector<double> cost(static_cast<size_t>(n_q) * n_seg);
  std::vector<std::vector<double>> seg_t;
  for (int s = 0; s < n_seg; ++s) seg_t.push_back(binary_target(target, m.segment_label[s]));
  for (int q = 0; q < n_q; ++q) {
    const double* cl = pred.class_logits.data().data() + static_cast<size_t>(q) * lc;
    double mx = *std::max_element(cl, cl + lc), z = 0.0;
    for (int j = 0; j < lc; ++j) z += std::exp(cl[j] - mx);
    const double* ml = pred.mask_logits.data().data() + static_cast<size_t>(q) * nvox;
    for (int s = 0; s < n_seg; ++s) {
      double p = std::exp(cl[m.segment_label[s]] - mx) / z;
      cost[static_cast<size_t>(q) * n_seg + s] = cfg.w_cls * (-p) +
                                                 cfg.w_bce * bce_mean(ml, seg_t[s]) +
                                                 cfg.w_dice * dice_cost(ml, seg_t[s]);
    }
  }
  m.segment_query = hungarian_assign(cost, n_q, n_seg);
  return m;
}

Tensor mask_cls_loss(const GroupPrediction& pred, const Matching& match,
                     const std::vector<int>& target, int n_labels, const GdConfig& cfg) {
  int n_q = pred.class_logits.dim(0);
  int no_object = pred.class_logits.dim(1) - 1;
  (void)n_labels;
  std::vector<int> cls_target(n_q, no_object);
  std::vector<double> weights(no_object + 1, 1.0);
  weights[no_object] = cfg.no_object_weight;
  for (size_t s = 0; s < match.segment_label.size(); ++s)
    cls_target[match.segment_query[s]] = match.segment_label[s];
  Tensor loss = scale(cross_entropy(pred.class_logits, cls_target, weights), cfg.w_cls);

  int n_seg = static_cast<int>(match.segment_label.size());
  if (n_seg > 0) {
    Tensor msum;
    for (int s = 0; s < n_seg; ++s) {
      Tensor row = slice(pred.mask_logits, 0, match.segment_query[s], 1);
      auto t = binary_target(target, match.segment_label[s]);
      Tensor term = add(scale(bce_with_logits(row, t), cfg.w_bce),
                        scale(dice_loss_with_logits(row, t), cfg.w_dice));
      msum = msum.defined() ? add(msum, term) : term;
    }
    loss = add(loss, scale(msum, 1.0 / n_seg));
  }
  return loss;
}

Tensor group_losses(const std::vector<GroupPrediction>& preds,
                    const std::vector<std::vector<int>>& targets, const SemanticGroupSpec& spec,
                    const GdConfig& cfg) {
  Tensor total;
  for (size_t g = 0; g < preds.size(); ++g) {
    int n_labels = static_cast<int>(spec.groups[g].label_names.size());
    Matching m = hungarian_match(preds[g], targets[g], n_labels, cfg);
    Tensor l = mask_cls_loss(preds[g], m, targets[g], n_labels, cfg);
    total = total.defined() ? add(total, l) : l;
  }
  return total;
}

Tensor segmentation_aux_loss(const Linear& seg_head, const Tensor& o_flat,
                             const std::vector<int>& voxel_targets) {
  Tensor logits = seg_head(transpose2d(o_flat));
  return cross_entropy(logits, voxel_targets);
}

Tensor depth_aux_loss(const Tensor& depth_logits, const std::vector<int>& bin_targets) {
  Tensor logits = transpose2d(depth_logits);
  return cross_entropy(logits, bin_targets, {}, /*ignore_index=*/-1);
}

std::vector<uint16_t> semantic_inference(const GroupPrediction& pred,
                                         const SemanticGroup& group, int64_t nvox) {
  int n_q = pred.class_logits.dim(0), lc = pred.class_logits.dim(1);
  int n_labels = lc - 1;
  if (pred.mask_logits.dim(1) != nvox)
    throw std::invalid_argument("semantic_inference: voxel count mismatch");
  // per-query class simplex; a query whose argmax is no-object is dropped
  std::vector<std::vector<double>> p(n_q, std::vector<double>(lc));
  std::vector<char> keep(n_q, 0);
  for (int q = 0; q < n_q; ++q) {
    const double* cl = pred.class_logits.data().data() + static_cast<size_t>(q) * lc;
    double mx = *std::max_element(cl, cl + lc), z = 0.0;
    for (int j = 0; j < lc; ++j) z += std::exp(cl[j] - mx);
    for (int j = 0; j < lc; ++j) p[q][j] = std::exp(cl[j] - mx) / z;
    int arg = 0;
    for (int j = 1; j < lc; ++j)
      if (p[q][j] > p[q][arg]) arg = j;
    keep[q] = arg != n_labels;
  }
  std::vector<uint16_t> out(static_cast<size_t>(nvox), kEmptyLabel);
  for (int64_t v = 0; v < nvox; ++v) {
    double best = -1.0;
    int bl = -1;
    for (int q = 0; q < n_q; ++q) {
      if (!keep[q]) continue;
      double mv = 1.0 / (1.0 + std::exp(-pred.mask_logits.data()[q * nvox + v]));
      for (int l = 0; l < n_labels; ++l) {
        double s = p[q][l] * mv;
        if (s > best) {
          best = s;
          bl = l;
        }
      }
    }
    out[v] = bl < 0 ? kEmptyLabel : group.to_original[bl];
  }
  return out;
}

}  // namespace occ::gd
