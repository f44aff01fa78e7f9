#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "rotcatt/checkpoint.hpp"
#include "rotcatt/data.hpp"
#include "rotcatt/harness.hpp"
#include "rotcatt/model.hpp"
#include "rotcatt/plot.hpp"

namespace fs = std::filesystem;
using namespace rotcatt;

namespace {

struct RunFlags {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<int64_t> steps;
  std::optional<std::string> precision, volume, out, eval_volume;
  std::optional<double> learning_rate;
  std::optional<int64_t> checkpoint_every, log_every;
  bool no_rotatory = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "key = value config file");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--steps", f.steps, "optimizer steps");
  cmd->add_option("--precision", f.precision, "f32 or f64");
  cmd->add_option("--volume", f.volume, "training volume stem (default: generated phantom)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--lr", f.learning_rate, "Adam learning rate");
  cmd->add_option("--checkpoint-every", f.checkpoint_every, "checkpoint cadence in steps (0: final only)");
  cmd->add_option("--log-every", f.log_every, "progress line cadence (0: quiet)");
}

RunConfig resolve(const RunFlags& f) {
  RunConfig run;
  if (!f.config.empty()) run = load_run_config(f.config);
  if (f.seed) run.seed = *f.seed;
  if (f.steps) run.steps = *f.steps;
  if (f.precision) run.precision = *f.precision;
  if (f.volume) run.volume = *f.volume;
  if (f.eval_volume) run.eval_volume = *f.eval_volume;
  if (f.out) run.out = *f.out;
  if (f.learning_rate) run.learning_rate = *f.learning_rate;
  if (f.checkpoint_every) run.checkpoint_every = *f.checkpoint_every;
  if (f.log_every) run.log_every = *f.log_every;
  if (f.no_rotatory) run.model.rotatory_enabled = false;
  validate_run_config(run);
  return run;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : std::string("n/a"); }

void print_report(const MetricsReport& r) {
  fmt::print("{:>6} {:>8} {:>8} {:>10} {:>10}\n", "class", "dsc", "iou", "hd_voxel", "hd_mm");
  for (const auto& c : r.classes) {
    fmt::print("{:>6} {:>8.4f} {:>8.4f} {:>10} {:>10}{}\n", c.label, c.dsc, c.iou, fmt_opt(c.hd_voxel), fmt_opt(c.hd_mm),
               c.hd_absent_in_one ? "  (absent in one mask)" : "");
  }
  fmt::print("{:>6} {:>8.4f} {:>8.4f} {:>10} {:>10}\n", "macro", r.macro_dsc, r.macro_iou, fmt_opt(r.macro_hd_voxel),
             fmt_opt(r.macro_hd_mm));
}

int run_cli(int argc, char** argv) {
  CLI::App app{"RotCAtt-TransUNet++ desk-scale segmentation"};
  app.require_subcommand(1);

  // phantom
  auto* phantom = app.add_subcommand("phantom", "write a synthetic phantom volume");
  uint64_t ph_seed = 0;
  std::vector<int64_t> dims{16, 64, 64};
  int ph_classes = 4;
  std::string ph_out = "phantom";
  phantom->add_option("--seed", ph_seed, "phantom seed");
  phantom->add_option("--dims", dims, "S H W")->expected(3);
  phantom->add_option("--classes", ph_classes, "number of classes (>= 3)");
  phantom->add_option("--out", ph_out, "output stem (writes .vol, .lbl, .json)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train on a volume");
  RunFlags train_flags;
  std::string resume;
  add_run_flags(train_cmd, train_flags);
  train_cmd->add_option("--resume", resume, "checkpoint to continue from");
  train_cmd->add_flag("--no-rotatory", train_flags.no_rotatory, "disable the rotatory block");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a labeled volume");
  std::string ev_ckpt, ev_volume, ev_out = "eval";
  eval_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--volume", ev_volume, "labeled volume stem")->required();
  eval_cmd->add_option("--out", ev_out, "output directory (report.json, report.csv)");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "train with and without rotatory attention");
  RunFlags ablate_flags;
  add_run_flags(ablate_cmd, ablate_flags);
  ablate_cmd->add_option("--eval-volume", ablate_flags.eval_volume, "scoring volume (default: training volume)");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "write predicted labels for a volume");
  std::string pr_ckpt, pr_volume, pr_out = "prediction";
  predict_cmd->add_option("--checkpoint", pr_ckpt, "checkpoint file")->required();
  predict_cmd->add_option("--volume", pr_volume, "input volume stem")->required();
  predict_cmd->add_option("--out", pr_out, "output stem (writes .lbl, .json)");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render PNG figures");
  std::string pl_log, pl_volume, pl_pred, pl_out;
  std::vector<std::string> pl_reports;
  std::optional<int64_t> pl_slice;
  int pl_scale = 4;
  plot_cmd->add_option("--loss-log", pl_log, "loss CSV -> training curves");
  plot_cmd->add_option("--report", pl_reports, "report JSON(s) -> per-class bars");
  plot_cmd->add_option("--volume", pl_volume, "labeled volume stem for the overlay");
  plot_cmd->add_option("--prediction", pl_pred, "predicted label stem for the overlay");
  plot_cmd->add_option("--slice", pl_slice, "overlay slice (default: middle)");
  plot_cmd->add_option("--scale", pl_scale, "overlay pixels per voxel");
  plot_cmd->add_option("--out", pl_out, "output PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (phantom->parsed()) {
    VolumePair v = generate_phantom(ph_seed, dims[0], dims[1], dims[2], ph_classes);
    const std::string stem = volume_stem(ph_out);
    if (fs::path(stem).has_parent_path()) fs::create_directories(fs::path(stem).parent_path());
    save_volume(v, stem);
    fmt::print("wrote {}.vol {}.lbl {}.json\n", stem, stem, stem);
  } else if (train_cmd->parsed()) {
    const RunConfig run = resolve(train_flags);
    const TrainResult r = train(run, resume);
    fmt::print("checkpoint {}\nloss log {}\n", r.checkpoint, r.loss_log);
  } else if (eval_cmd->parsed()) {
    const VolumePair v = load_volume(ev_volume);
    if (v.labels.empty()) throw DataError("eval volume has no labels");
    const EvalOutput e = evaluate_checkpoint(ev_ckpt, v);
    fs::create_directories(ev_out);
    write_file((fs::path(ev_out) / "report.json").string(), e.report.to_json().dump(2) + "\n");
    write_file((fs::path(ev_out) / "report.csv").string(), MetricsReport::csv_header() + "\n" + e.report.csv_rows());
    print_report(e.report);
  } else if (ablate_cmd->parsed()) {
    const RunConfig run = resolve(ablate_flags);
    const AblationResult a = ablate(run);
    fmt::print("{}", a.to_csv());
    fmt::print("written to {}\n", (fs::path(run.out) / "ablation.json").string());
  } else if (predict_cmd->parsed()) {
    const VolumePair v = load_volume(pr_volume);
    const EvalOutput e = evaluate_checkpoint(pr_ckpt, v);
    const std::string stem = volume_stem(pr_out);
    if (fs::path(stem).has_parent_path()) fs::create_directories(fs::path(stem).parent_path());
    save_labels(e.prediction, v.spacing, v.num_classes, stem);
    fmt::print("wrote {}.lbl {}.json\n", stem, stem);
  } else if (plot_cmd->parsed()) {
    const int modes = int(!pl_log.empty()) + int(!pl_reports.empty()) + int(!pl_volume.empty());
    if (modes != 1) throw ConfigError("plot needs exactly one of --loss-log, --report, --volume");
    std::optional<Canvas> canvas;
    if (!pl_log.empty()) {
      canvas = plot_loss_curves(read_loss_csv(pl_log));
    } else if (!pl_reports.empty()) {
      std::vector<MetricsReport> reports;
      std::vector<std::string> names;
      for (const auto& path : pl_reports) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open report " + path);
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
          throw DataError("report " + path + ": " + e.what());
        }
        reports.push_back(MetricsReport::from_json(j));
        names.push_back(fs::path(path).parent_path().filename().string());
      }
      canvas = plot_class_scores(reports, names);
    } else {
      if (pl_pred.empty()) throw ConfigError("overlay needs --prediction");
      const VolumePair v = load_volume(pl_volume);
      const VolumePair p = load_volume(pl_pred);
      if (v.labels.empty() || v.intensities.empty()) throw DataError("overlay volume needs intensities and labels");
      const int64_t slice = pl_slice.value_or(v.slices() / 2);
      canvas = plot_overlay(v.intensities, v.labels, p.labels, slice, pl_scale);
    }
    if (fs::path(pl_out).has_parent_path()) fs::create_directories(fs::path(pl_out).parent_path());
    write_png(*canvas, pl_out);
    fmt::print("wrote {}\n", pl_out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
