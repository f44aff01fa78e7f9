#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rotcatt/config.hpp"
#include "rotcatt/data.hpp"
#include "rotcatt/metrics.hpp"

namespace rotcatt {

// Model configuration plus everything a run needs besides the weights.
struct RunConfig {
  ModelConfig model;
  uint64_t seed = 0;
  int64_t steps = 500;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  int64_t checkpoint_every = 100;  // 0 keeps only the final checkpoint
  int64_t log_every = 25;          // 0 silences progress lines
  std::string precision = "f32";   // "f32" or "f64"
  std::string volume;              // training volume; empty generates the default phantom
  std::string eval_volume;         // ablation scoring volume; empty reuses the training volume
  std::string out = "run";
  int64_t phantom_slices = 16;
  std::optional<uint64_t> phantom_seed;  // defaults to `seed`
};

// Consumes model and run keys; any key left over is a ConfigError.
void apply_run_keys(ConfigFile& file, RunConfig& run);
RunConfig load_run_config(const std::string& path);
void validate_run_config(const RunConfig& run);
nlohmann::json run_config_to_json(const RunConfig& run);

// Loads run.volume, or builds the default phantom matching the model input.
VolumePair training_volume(const RunConfig& run);

// ShapeError describing how the volume disagrees with the model's plan.
void check_volume_against_plan(const VolumePair& volume, const ModelConfig& config);

// Window visiting order for one epoch; a pure function of (seed, epoch).
std::vector<size_t> epoch_order(uint64_t seed, int64_t epoch, size_t windows);

struct LossRecord {
  int64_t step = 0;
  double dice = 0, iou = 0, combined = 0;
};

struct TrainResult {
  std::string checkpoint;  // final checkpoint path
  std::string loss_log;
  std::vector<LossRecord> records;  // steps run by this call
  int64_t parameter_count = 0;
  double seconds = 0;
  double iou_above_dice = 0;  // fraction of steps where iou_loss > dice_loss
};

// Writes <out>/loss.csv, <out>/checkpoint.ckpt, periodic
// <out>/checkpoint_step<N>.ckpt, <out>/run.json and <out>/train_summary.json.
TrainResult train(const RunConfig& run, const std::string& resume = "");
TrainResult train_on(const RunConfig& run, const VolumePair& volume, const std::string& resume = "");

std::string loss_csv_header();
std::string format_loss_row(const LossRecord& r);
std::vector<LossRecord> read_loss_csv(const std::string& path);

struct EvalOutput {
  MetricsReport report;
  LabelTensor prediction;  // (S, H, W)
};

// Eval-mode windows, per-slice predictions from the assigned window. The
// report is filled only when the volume carries labels.
EvalOutput evaluate_checkpoint(const std::string& checkpoint, const VolumePair& volume);

struct AblationRow {
  std::string name;
  bool rotatory = false;
  int64_t parameter_count = 0;
  MetricsReport report;
  double tube_dsc = 0;
  double train_seconds = 0;
};

struct AblationResult {
  AblationRow with_rotatory, without_rotatory;
  nlohmann::ordered_json to_json() const;
  std::string to_csv() const;
};

// Two runs identical except for rotatory_enabled, written under
// <out>/with_rotatt and <out>/without_rotatt, plus <out>/ablation.{json,csv}.
AblationResult ablate(const RunConfig& run);

}  // namespace rotcatt
