#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "occ/config.hpp"
#include "occ/dataset.hpp"
#include "occ/io.hpp"
#include "occ/metrics.hpp"
#include "occ/model.hpp"
#include "occ/ops_sample.hpp"

namespace fs = std::filesystem;
using namespace occ;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
};

RunConfig load_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : parse_config_file(opts.config_path);
  for (const auto& kv : opts.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: --set expects key=value, got '" + kv + "'");
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "config file (flat key = value)");
  cmd->add_option("--set", opts.sets, "override a config key (key=value), repeatable");
}

void write_snapshot(const RunConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "config.snapshot");
  out << serialize_config(cfg);
}

OccupancyModel build_model(const RunConfig& cfg, const std::string& data_dir) {
  auto hist = data::dataset_histogram(data_dir);
  auto cats = data::dataset_categories(data_dir);
  auto spec = gd::build_semantic_groups(hist, cats, cfg.k_groups);
  return OccupancyModel(cfg, spec, static_cast<int>(cats.size()));
}

struct LoadedScene {
  data::SceneSample sample;
  OccupancyModel::SceneCache cache;
};

std::vector<LoadedScene> load_scenes(const OccupancyModel& model, const std::string& data_dir) {
  std::vector<LoadedScene> scenes;
  int n = data::dataset_size(data_dir);
  for (int i = 0; i < n; ++i) {
    LoadedScene s;
    s.sample = data::load_scene(data_dir, i);
    s.cache = model.prepare(s.sample);
    scenes.push_back(std::move(s));
  }
  return scenes;
}

int run_train(const RunConfig& cfg, const std::string& data_dir, bool resume) {
  write_snapshot(cfg, cfg.out_dir);
  auto model = build_model(cfg, data_dir);
  auto scenes = load_scenes(model, data_dir);
  Trainer trainer(model);

  auto ckpt_path = (fs::path(cfg.out_dir) / "ckpt_last.ockp").string();
  if (resume) {
    restore(model, trainer.opt, io::read_checkpoint(ckpt_path));
    trainer.step = trainer.opt.step_count;
  }
  std::ofstream log(fs::path(cfg.out_dir) / "loss_log.txt",
                    resume ? std::ios::app : std::ios::out);
  bool have_good = resume;
  int total = cfg.total_steps();
  for (int s = static_cast<int>(trainer.step); s < total; ++s) {
    auto& scene = scenes[static_cast<size_t>(s) % scenes.size()];
    auto entry = trainer.train_step(scene.sample, scene.cache);
    log << entry.line() << "\n";
    if (!entry.finite()) {
      std::cerr << "error[train]: non-finite loss at step " << entry.step
                << (have_good ? "; last-good checkpoint kept at " + ckpt_path : "") << "\n";
      return 3;
    }
    if (entry.step % cfg.log_every == 0 || s + 1 == total)
      std::cout << entry.line() << "\n";
    if (entry.step % cfg.checkpoint_every == 0 || s + 1 == total) {
      io::write_checkpoint(ckpt_path, snapshot(model, trainer.opt, trainer.step));
      have_good = true;
    }
  }
  std::cout << "checkpoint " << ckpt_path << "\n";
  return 0;
}

int run_eval(const RunConfig& cfg, const std::string& data_dir, const std::string& ckpt_path,
             bool visible_mask, bool proxy) {
  auto model = build_model(cfg, data_dir);
  AdamW opt;
  restore(model, opt, io::read_checkpoint(ckpt_path));
  auto scenes = load_scenes(model, data_dir);

  std::vector<metrics::EvalReport> raw, prox;
  for (auto& s : scenes) {
    auto pred = model.infer(s.sample, s.cache);
    const std::vector<uint8_t>* mask = visible_mask ? &s.sample.visible : nullptr;
    raw.push_back(metrics::semantic_miou(pred, s.sample.grid, mask));
    if (proxy) prox.push_back(metrics::gt_substitution_proxy(pred, s.sample.grid, mask));
  }
  auto report = metrics::per_class_report(raw);
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream out(fs::path(cfg.out_dir) / "eval_report.txt");
    out << report.table();
    out << report.key_values();
    if (proxy) {
      auto p = metrics::per_class_report(prox);
      out << "proxy.geometry_iou = " << p.geometry_iou() << "\n";
      out << "proxy.miou = " << p.miou() << "\n";
    }
  }
  std::cout << report.table();
  std::cout << "geometry_iou " << report.geometry_iou() << " miou " << report.miou() << "\n";
  if (proxy) {
    auto p = metrics::per_class_report(prox);
    std::cout << "proxy_miou " << p.miou() << "\n";
  }
  return 0;
}

int run_export(const RunConfig& cfg, const std::string& grid_path,
               const std::string& data_dir, const std::string& ckpt_path, int scene_index,
               const std::string& out_path) {
  if (!grid_path.empty()) {
    io::export_ply(out_path, io::read_ovg(grid_path));
  } else {
    auto model = build_model(cfg, data_dir);
    AdamW opt;
    restore(model, opt, io::read_checkpoint(ckpt_path));
    auto sample = data::load_scene(data_dir, scene_index);
    auto cache = model.prepare(sample);
    io::export_ply(out_path, model.infer(sample, cache));
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

struct AblateResult {
  std::string label;
  double geometry_iou = 0, miou = 0;
  std::vector<double> class_iou;
  int64_t op_count = 0;
  int64_t cells = 0;
};

AblateResult train_and_eval(RunConfig cfg, const std::string& label) {
  AblateResult res;
  res.label = label;
  std::vector<LoadedScene> scenes;
  std::vector<int64_t> hist;
  std::vector<scene::CategoryDef> cats;
  std::vector<data::SceneSample> samples;
  for (int i = 0; i < cfg.n_scenes; ++i) {
    samples.push_back(data::make_scene(cfg, i));
    auto h = scene::class_histogram(samples.back().grid);
    if (hist.size() < h.size()) hist.resize(h.size(), 0);
    for (size_t k = 0; k < h.size(); ++k) hist[k] += h[k];
  }
  cats = samples[0].grid.categories;
  auto spec = gd::build_semantic_groups(hist, cats, cfg.k_groups);
  OccupancyModel model(cfg, spec, static_cast<int>(cats.size()));
  for (auto& s : samples) scenes.push_back({std::move(s), {}});
  for (auto& s : scenes) s.cache = model.prepare(s.sample);

  Trainer trainer(model);
  int total = cfg.total_steps();
  for (int s = 0; s < total; ++s) {
    auto entry = trainer.train_step(scenes[static_cast<size_t>(s) % scenes.size()].sample,
                                    scenes[static_cast<size_t>(s) % scenes.size()].cache);
    if (!entry.finite()) throw std::runtime_error("ablate: non-finite loss in run " + label);
  }

  reset_deform_sample_op_count();
  std::vector<metrics::EvalReport> reports;
  for (auto& s : scenes) {
    auto pred = model.infer(s.sample, s.cache);
    reports.push_back(metrics::semantic_miou(pred, s.sample.grid, &s.sample.visible));
  }
  res.op_count = deform_sample_op_count();
  auto rep = metrics::per_class_report(reports);
  res.geometry_iou = rep.geometry_iou();
  res.miou = rep.miou();
  res.class_iou = rep.per_class_iou();
  res.cells = model.ncompact;
  return res;
}

void print_ablation(const std::vector<AblateResult>& rows, int64_t full_cells,
                    const std::vector<std::string>& class_names) {
  std::cout << "run\tcompact_cells\tcell_ratio\tsample_ops\tgeom_iou\tmiou";
  for (const auto& n : class_names) std::cout << "\tiou:" << n;
  std::cout << "\n";
  for (const auto& r : rows) {
    std::cout << r.label << "\t" << r.cells << "\t"
              << static_cast<double>(full_cells) / static_cast<double>(r.cells) << "\t"
              << r.op_count << "\t" << r.geometry_iou << "\t" << r.miou;
    for (double v : r.class_iou) std::cout << "\t" << v;
    std::cout << "\n";
  }
}

int run_ablate(const RunConfig& base, const std::string& axis, int seeds) {
  std::vector<AblateResult> rows;
  auto sample0 = data::make_scene(base, 0);
  std::vector<std::string> class_names;
  for (const auto& c : sample0.grid.categories) class_names.push_back(c.name);
  int64_t full_cells = vt::cell_count({base.grid_x, base.grid_y, base.grid_z});

  auto variants = [&]() -> std::vector<std::pair<std::string, RunConfig>> {
    std::vector<std::pair<std::string, RunConfig>> v;
    if (axis == "grouping") {
      for (int k : {1, base.k_groups > 1 ? base.k_groups : 4}) {
        RunConfig c = base;
        c.k_groups = k;
        v.push_back({"K=" + std::to_string(k), c});
      }
    } else if (axis == "compact-dims") {
      for (auto [sx, sz] : {std::pair{4, 1}, std::pair{2, 1}, std::pair{2, 2}}) {
        RunConfig c = base;
        c.sigma_x = c.sigma_y = sx;
        c.sigma_z = sz;
        if (c.grid_x % sx || c.grid_y % sx || c.grid_z % sz) continue;
        v.push_back({"sigma=(" + std::to_string(sx) + "," + std::to_string(sx) + "," +
                         std::to_string(sz) + ")",
                     c});
      }
    } else if (axis == "ivt") {
      for (bool on : {true, false}) {
        RunConfig c = base;
        c.use_ivt = on;
        v.push_back({std::string("ivt=") + (on ? "on" : "off"), c});
      }
    } else {
      throw std::runtime_error("ablate: axis must be grouping, compact-dims, or ivt");
    }
    return v;
  }();

  for (const auto& [label, cfg] : variants) {
    for (int s = 0; s < seeds; ++s) {
      RunConfig c = cfg;
      c.seed = base.seed + static_cast<uint64_t>(s);
      rows.push_back(
          train_and_eval(c, label + (seeds > 1 ? " seed=" + std::to_string(c.seed) : "")));
    }
  }
  print_ablation(rows, full_cells, class_names);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occtool: synthetic occupancy-prediction pipeline"};
  app.require_subcommand(1);

  CommonOpts gen_o, train_o, eval_o, export_o, ablate_o;
  std::string gen_data, train_data, eval_data, eval_ckpt, export_grid, export_data,
      export_ckpt, export_out = "export.ply", ablate_axis = "grouping";
  int export_scene = 0, ablate_seeds = 1;
  bool eval_visible = false, eval_proxy = false;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(gen, gen_o);
  gen->add_option("--data", gen_data, "dataset directory (default <out_dir>/dataset)");

  auto* train = app.add_subcommand("train", "train on a generated dataset");
  add_common(train, train_o);
  train->add_option("--data", train_data, "dataset directory");
  bool train_resume = false;
  train->add_flag("--resume", train_resume, "continue from <out_dir>/ckpt_last.ockp");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_o);
  eval->add_option("--data", eval_data, "dataset directory");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_flag("--visible-mask", eval_visible, "restrict scoring to visible voxels");
  eval->add_flag("--proxy", eval_proxy, "also report the label-substitution upper bound");

  auto* exp = app.add_subcommand("export", "export a grid or a prediction as PLY");
  add_common(exp, export_o);
  exp->add_option("--grid", export_grid, "OVG grid file to export directly");
  exp->add_option("--data", export_data, "dataset directory (with --checkpoint)");
  exp->add_option("--checkpoint", export_ckpt, "checkpoint file");
  exp->add_option("--scene", export_scene, "scene index");
  exp->add_option("--out", export_out, "output PLY path");

  auto* abl = app.add_subcommand("ablate", "matched comparison runs along one axis");
  add_common(abl, ablate_o);
  abl->add_option("--axis", ablate_axis, "grouping | compact-dims | ivt");
  abl->add_option("--seeds", ablate_seeds, "seeds per variant");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cfg = load_config(gen_o);
      auto dir = gen_data.empty() ? (fs::path(cfg.out_dir) / "dataset").string() : gen_data;
      data::write_dataset(cfg, dir);
      write_snapshot(cfg, cfg.out_dir);
      std::cout << "wrote " << cfg.n_scenes << " scene(s) to " << dir << "\n";
      return 0;
    }
    if (train->parsed()) {
      auto cfg = load_config(train_o);
      auto dir = train_data.empty() ? (fs::path(cfg.out_dir) / "dataset").string() : train_data;
      return run_train(cfg, dir, train_resume);
    }
    if (eval->parsed()) {
      auto cfg = load_config(eval_o);
      auto dir = eval_data.empty() ? (fs::path(cfg.out_dir) / "dataset").string() : eval_data;
      return run_eval(cfg, dir, eval_ckpt, eval_visible, eval_proxy);
    }
    if (exp->parsed()) {
      RunConfig cfg = load_config(export_o);
      if (export_grid.empty() && (export_ckpt.empty() || export_data.empty()))
        throw std::runtime_error("export: need --grid, or --checkpoint with --data");
      return run_export(cfg, export_grid, export_data, export_ckpt, export_scene, export_out);
    }
    if (abl->parsed()) return run_ablate(load_config(ablate_o), ablate_axis, ablate_seeds);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error[input]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error[run]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
