#include "rotcatt/harness.hpp"

#include <cstdio>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "rotcatt/checkpoint.hpp"
#include "rotcatt/losses.hpp"
#include "rotcatt/model.hpp"
#include "rotcatt/optim.hpp"

namespace rotcatt {

namespace fs = std::filesystem;

// Run configuration -----------------------------------------------------------

void apply_run_keys(ConfigFile& file, RunConfig& run) {
  apply_model_keys(file, run.model);
  auto take = [&](const char* key, auto&& apply) {
    auto it = file.values.find(key);
    if (it == file.values.end()) return;
    apply(it->first, it->second);
    file.values.erase(it);
  };
  take("seed", [&](auto& k, auto& v) { run.seed = parse_uint64(k, v); });
  take("steps", [&](auto& k, auto& v) { run.steps = parse_int64(k, v); });
  take("learning_rate", [&](auto& k, auto& v) { run.learning_rate = parse_double(k, v); });
  take("clip_norm", [&](auto& k, auto& v) { run.clip_norm = parse_double(k, v); });
  take("checkpoint_every", [&](auto& k, auto& v) { run.checkpoint_every = parse_int64(k, v); });
  take("log_every", [&](auto& k, auto& v) { run.log_every = parse_int64(k, v); });
  take("precision", [&](auto&, auto& v) { run.precision = v; });
  take("volume", [&](auto&, auto& v) { run.volume = v; });
  take("eval_volume", [&](auto&, auto& v) { run.eval_volume = v; });
  take("out", [&](auto&, auto& v) { run.out = v; });
  take("phantom_slices", [&](auto& k, auto& v) { run.phantom_slices = parse_int64(k, v); });
  take("phantom_seed", [&](auto& k, auto& v) { run.phantom_seed = parse_uint64(k, v); });
  if (!file.values.empty()) throw ConfigError("unknown config key '" + file.values.begin()->first + "'");
}

RunConfig load_run_config(const std::string& path) {
  ConfigFile file = read_config_file(path);
  RunConfig run;
  apply_run_keys(file, run);
  return run;
}

void validate_run_config(const RunConfig& run) {
  validate_config(run.model);
  if (run.steps < 0) throw ConfigError("steps must be non-negative");
  if (!(run.learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(run.clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (run.checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (run.precision != "f32" && run.precision != "f64") throw ConfigError("precision must be f32 or f64");
  if (run.out.empty()) throw ConfigError("output directory must be set");
}

nlohmann::json run_config_to_json(const RunConfig& run) {
  nlohmann::ordered_json j;
  j["model"] = model_config_to_json(run.model);
  j["seed"] = run.seed;
  j["steps"] = run.steps;
  j["learning_rate"] = run.learning_rate;
  j["clip_norm"] = run.clip_norm;
  j["checkpoint_every"] = run.checkpoint_every;
  j["precision"] = run.precision;
  j["volume"] = run.volume;
  j["eval_volume"] = run.eval_volume;
  j["phantom_slices"] = run.phantom_slices;
  j["phantom_seed"] = run.phantom_seed.value_or(run.seed);
  return j;
}

VolumePair training_volume(const RunConfig& run) {
  if (!run.volume.empty()) return load_volume(run.volume);
  return generate_phantom(run.phantom_seed.value_or(run.seed), run.phantom_slices, run.model.input_height,
                          run.model.input_width, run.model.num_classes);
}

void check_volume_against_plan(const VolumePair& volume, const ModelConfig& config) {
  const ShapePlan plan = derive_shapes(config);
  Shape input = plan.logits;
  input[1] = 1;
  std::vector<std::string> diffs;
  if (volume.intensities.empty()) diffs.push_back("volume has no intensities");
  else {
    if (volume.height() != config.input_height) {
      diffs.push_back(fmt::format("height: plan {} vs volume {}", config.input_height, volume.height()));
    }
    if (volume.width() != config.input_width) {
      diffs.push_back(fmt::format("width: plan {} vs volume {}", config.input_width, volume.width()));
    }
    if (volume.slices() < config.window) {
      diffs.push_back(fmt::format("slices: window needs {} vs volume {}", config.window, volume.slices()));
    }
  }
  if (volume.num_classes != config.num_classes) {
    diffs.push_back(fmt::format("classes: plan {} vs volume {}", config.num_classes, volume.num_classes));
  }
  if (diffs.empty()) return;
  std::string msg = "volume " + (volume.intensities.empty() ? std::string("(none)") : shape_string(volume.intensities.shape())) +
                    " does not fit plan input " + shape_string(input) + " -> logits " + shape_string(plan.logits) + ":";
  for (const auto& d : diffs) msg += "\n  " + d;
  throw ShapeError(msg);
}

std::vector<size_t> epoch_order(uint64_t seed, int64_t epoch, size_t windows) {
  std::seed_seq seq{uint32_t(seed), uint32_t(seed >> 32), uint32_t(epoch), uint32_t(uint64_t(epoch) >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::vector<size_t> order(windows);
  for (size_t i = 0; i < windows; ++i) order[i] = i;
  for (size_t i = windows; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

// Loss log --------------------------------------------------------------------

std::string loss_csv_header() { return "step,dice_loss,iou_loss,combined"; }

std::string format_loss_row(const LossRecord& r) {
  return fmt::format("{},{:.17g},{:.17g},{:.17g}", r.step, r.dice, r.iou, r.combined);
}

std::vector<LossRecord> read_loss_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open loss log " + path);
  std::string line;
  std::getline(in, line);
  if (line != loss_csv_header()) throw DataError("loss log " + path + " has an unexpected header");
  std::vector<LossRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRecord r;
    char c1, c2, c3;
    std::istringstream ss(line);
    if (!(ss >> r.step >> c1 >> r.dice >> c2 >> r.iou >> c3 >> r.combined) || c1 != ',' || c2 != ',' || c3 != ',') {
      throw DataError("loss log " + path + ": malformed row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

// Training --------------------------------------------------------------------

namespace {

template <typename F>
decltype(auto) with_precision(const std::string& precision, F&& fn) {
  if (precision == "f64") return fn(double{});
  if (precision == "f32") return fn(float{});
  throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

template <typename T>
Tensor<T> to_precision(const Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>) return t;
  else return t.template cast<T>();
}

template <typename T>
TrainResult train_impl(const RunConfig& run, const VolumePair& volume, const std::string& resume) {
  validate_run_config(run);
  check_volume_against_plan(volume, run.model);
  if (volume.labels.empty()) throw DataError("training volume has no labels");
  fs::create_directories(run.out);
  const std::vector<SliceBatch> batches = slice_batches(volume, run.model.window, SliceMode::Train);

  RotCAttModel<T> model(run.model, run.seed);
  AdamOptions opts;
  opts.learning_rate = run.learning_rate;
  Adam<T> adam(model.parameters(), opts);
  const nlohmann::json run_json = run_config_to_json(run);

  int64_t start = 0;
  const std::string log_path = (fs::path(run.out) / "loss.csv").string();
  std::vector<std::string> kept_rows;
  if (!resume.empty()) {
    const CheckpointHeader h = read_checkpoint_header(resume);
    if (!(h.model == run.model)) throw ConfigError("resume checkpoint was trained with a different model configuration");
    load_checkpoint(resume, model, &adam);
    start = h.step;
    if (fs::exists(log_path)) {
      for (const LossRecord& r : read_loss_csv(log_path)) {
        if (r.step <= start) kept_rows.push_back(format_loss_row(r));
      }
    }
  }
  {
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw DataError("cannot write " + log_path);
    log << loss_csv_header() << '\n';
    for (const auto& row : kept_rows) log << row << '\n';
  }
  write_text((fs::path(run.out) / "run.json").string(), run_json.dump(2) + "\n");

  TrainResult result;
  result.loss_log = log_path;
  result.parameter_count = model.parameter_count();
  result.checkpoint = (fs::path(run.out) / "checkpoint.ckpt").string();
  if (run.log_every > 0) {
    fmt::print("train: {} parameters, {} windows of {} slices, steps {}..{} ({})\n", result.parameter_count,
               batches.size(), run.model.window, start + 1, run.steps, run.precision);
    std::fflush(stdout);
  }

  std::vector<Tensor<T>> images;
  for (const auto& b : batches) images.push_back(to_precision<T>(b.images));
  const T alpha = static_cast<T>(run.model.alpha), eps = static_cast<T>(run.model.epsilon);
  const auto t0 = std::chrono::steady_clock::now();
  std::ofstream log(log_path, std::ios::app);
  model.set_training(true);
  int64_t above = 0;
  std::vector<size_t> order;
  int64_t order_epoch = -1;
  for (int64_t step = start + 1; step <= run.steps; ++step) {
    const int64_t epoch = (step - 1) / int64_t(batches.size());
    if (epoch != order_epoch) {
      order = epoch_order(run.seed, epoch, batches.size());
      order_epoch = epoch;
    }
    const size_t w = order[size_t((step - 1) % int64_t(batches.size()))];
    Var<T> logits = model.forward(Var<T>(images[w]));
    LossTerms<T> terms = segmentation_loss(logits, batches[w].labels, alpha, eps);
    LossRecord rec{step, double(terms.dice.value()[0]), double(terms.iou.value()[0]), double(terms.combined.value()[0])};
    if (!std::isfinite(rec.combined)) throw NumericError(fmt::format("non-finite loss at step {}", step));
    backward(terms.combined);
    clip_grad_norm(model.parameters(), run.clip_norm);
    adam.step();
    adam.zero_grad();

    log << format_loss_row(rec) << '\n';
    log.flush();
    if (rec.iou > rec.dice) ++above;
    result.records.push_back(rec);
    if (run.log_every > 0 && (step % run.log_every == 0 || step == run.steps)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      fmt::print("step {:>5}  dice {:.4f}  iou {:.4f}  combined {:.4f}  ({:.2f} s/step)\n", step, rec.dice, rec.iou,
                 rec.combined, secs / double(step - start));
      std::fflush(stdout);
    }
    if (run.checkpoint_every > 0 && step % run.checkpoint_every == 0 && step != run.steps) {
      save_checkpoint((fs::path(run.out) / fmt::format("checkpoint_step{}.ckpt", step)).string(), model, &adam, run_json,
                      step);
    }
  }
  save_checkpoint(result.checkpoint, model, &adam, run_json, std::max(start, run.steps));
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.iou_above_dice = result.records.empty() ? 0.0 : double(above) / double(result.records.size());

  nlohmann::ordered_json summary;
  summary["steps_run"] = result.records.size();
  summary["final_step"] = std::max(start, run.steps);
  summary["parameter_count"] = result.parameter_count;
  summary["iou_loss_above_dice_loss_fraction"] = result.iou_above_dice;
  summary["seconds"] = result.seconds;
  write_text((fs::path(run.out) / "train_summary.json").string(), summary.dump(2) + "\n");
  if (run.log_every > 0) {
    fmt::print("train: done in {:.1f} s; iou_loss > dice_loss on {:.0f}% of steps\n", result.seconds,
               100.0 * result.iou_above_dice);
    std::fflush(stdout);
  }
  return result;
}

template <typename T>
EvalOutput evaluate_impl(RotCAttModel<T>& model, const VolumePair& volume) {
  const ModelConfig& cfg = model.config();
  check_volume_against_plan(volume, cfg);
  NoGradGuard no_grad;
  model.set_training(false);
  const int window = cfg.window;
  const std::vector<int64_t> starts = window_starts(volume.slices(), window, SliceMode::Eval);
  const std::vector<size_t> assign = eval_assignment(volume.slices(), window);
  const int64_t plane = volume.height() * volume.width();
  const bool labeled = !volume.labels.empty();

  EvalOutput out;
  out.prediction = LabelTensor(volume.intensities.shape());
  double dice = 0, iou = 0, combined = 0;
  for (size_t w = 0; w < starts.size(); ++w) {
    const SliceBatch batch = extract_window(volume, starts[w], window);
    Var<T> logits = model.forward(Var<T>(to_precision<T>(batch.images)));
    if (labeled) {
      LossTerms<T> terms =
          segmentation_loss(logits, batch.labels, static_cast<T>(cfg.alpha), static_cast<T>(cfg.epsilon));
      dice += double(terms.dice.value()[0]);
      iou += double(terms.iou.value()[0]);
      combined += double(terms.combined.value()[0]);
    }
    const LabelTensor hard = argmax_classes(logits.value());
    for (int64_t k = 0; k < window; ++k) {
      const int64_t z = starts[w] + k;
      if (assign[size_t(z)] != w) continue;
      std::copy_n(hard.data() + k * plane, plane, out.prediction.data() + z * plane);
    }
  }
  if (labeled) {
    out.report = evaluate_labels(out.prediction, volume.labels, cfg.num_classes,
                                 {volume.spacing[0], volume.spacing[1], volume.spacing[2]});
    const double n = double(starts.size());
    out.report.dice_loss = dice / n;
    out.report.iou_loss = iou / n;
    out.report.combined_loss = combined / n;
  }
  return out;
}

}  // namespace

TrainResult train_on(const RunConfig& run, const VolumePair& volume, const std::string& resume) {
  return with_precision(run.precision, [&](auto tag) {
    using T = decltype(tag);
    return train_impl<T>(run, volume, resume);
  });
}

TrainResult train(const RunConfig& run, const std::string& resume) {
  validate_run_config(run);
  return train_on(run, training_volume(run), resume);
}

EvalOutput evaluate_checkpoint(const std::string& checkpoint, const VolumePair& volume) {
  const CheckpointHeader h = read_checkpoint_header(checkpoint);
  return with_precision(h.dtype, [&](auto tag) {
    using T = decltype(tag);
    RotCAttModel<T> model(h.model, 0);
    load_checkpoint<T>(checkpoint, model, nullptr);
    return evaluate_impl(model, volume);
  });
}

// Ablation --------------------------------------------------------------------

namespace {

nlohmann::ordered_json row_json(const std::string& name, std::optional<int64_t> params, double dsc, double iou,
                        std::optional<double> hd_voxel, std::optional<double> hd_mm, double tube) {
  nlohmann::ordered_json j;
  j["row"] = name;
  j["parameters"] = params ? nlohmann::json(*params) : nlohmann::json(nullptr);
  j["dsc"] = dsc;
  j["iou"] = iou;
  j["hd_voxel"] = hd_voxel ? nlohmann::json(*hd_voxel) : nlohmann::json(nullptr);
  j["hd_mm"] = hd_mm ? nlohmann::json(*hd_mm) : nlohmann::json(nullptr);
  j["tube_dsc"] = tube;
  return j;
}

std::optional<double> diff(const std::optional<double>& a, const std::optional<double>& b) {
  if (!a || !b) return std::nullopt;
  return *a - *b;
}

}  // namespace

nlohmann::ordered_json AblationResult::to_json() const {
  const AblationRow& a = with_rotatory;
  const AblationRow& b = without_rotatory;
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const AblationRow* r : {&a, &b}) {
    j["rows"].push_back(row_json(r->name, r->parameter_count, r->report.macro_dsc, r->report.macro_iou,
                                 r->report.macro_hd_voxel, r->report.macro_hd_mm, r->tube_dsc));
  }
  j["rows"].push_back(row_json("delta", a.parameter_count - b.parameter_count, a.report.macro_dsc - b.report.macro_dsc,
                               a.report.macro_iou - b.report.macro_iou,
                               diff(a.report.macro_hd_voxel, b.report.macro_hd_voxel),
                               diff(a.report.macro_hd_mm, b.report.macro_hd_mm), a.tube_dsc - b.tube_dsc));
  j["reports"]["w RotAtt"] = a.report.to_json();
  j["reports"]["w/o RotAtt"] = b.report.to_json();
  j["train_seconds"] = {{"w RotAtt", a.train_seconds}, {"w/o RotAtt", b.train_seconds}};
  return j;
}

std::string AblationResult::to_csv() const {
  std::string out = "row,parameters,dsc,iou,hd_voxel,hd_mm,tube_dsc\n";
  const nlohmann::ordered_json j = to_json();
  for (const auto& r : j.at("rows")) {
    auto num = [](const nlohmann::ordered_json& v) { return v.is_null() ? std::string() : fmt::format("{:.10g}", v.get<double>()); };
    out += fmt::format("{},{},{},{},{},{},{}\n", r.at("row").get<std::string>(), r.at("parameters").get<int64_t>(),
                       num(r.at("dsc")), num(r.at("iou")), num(r.at("hd_voxel")), num(r.at("hd_mm")),
                       num(r.at("tube_dsc")));
  }
  return out;
}

AblationResult ablate(const RunConfig& run) {
  validate_run_config(run);
  const VolumePair train_vol = training_volume(run);
  const VolumePair eval_vol = run.eval_volume.empty() ? train_vol : load_volume(run.eval_volume);
  AblationResult result;
  for (bool rotatory : {true, false}) {
    RunConfig r = run;
    r.model.rotatory_enabled = rotatory;
    r.out = (fs::path(run.out) / (rotatory ? "with_rotatt" : "without_rotatt")).string();
    const TrainResult tr = train_on(r, train_vol);
    EvalOutput ev = evaluate_checkpoint(tr.checkpoint, eval_vol);
    write_text((fs::path(r.out) / "report.json").string(), ev.report.to_json().dump(2) + "\n");
    AblationRow& row = rotatory ? result.with_rotatory : result.without_rotatory;
    row.name = rotatory ? "w RotAtt" : "w/o RotAtt";
    row.rotatory = rotatory;
    row.parameter_count = tr.parameter_count;
    row.report = ev.report;
    row.tube_dsc = ev.report.classes.at(size_t(run.model.num_classes - 1)).dsc;
    row.train_seconds = tr.seconds;
  }
  write_text((fs::path(run.out) / "ablation.json").string(), result.to_json().dump(2) + "\n");
  write_text((fs::path(run.out) / "ablation.csv").string(), result.to_csv());
  return result;
}

}  // namespace rotcatt
