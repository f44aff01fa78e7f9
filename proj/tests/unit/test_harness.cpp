#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rotcatt/checkpoint.hpp"
#include "rotcatt/harness.hpp"
#include "rotcatt/model.hpp"
#include "rotcatt/plot.hpp"

using namespace rotcatt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("rotcatt_test_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_run(const fs::path& out, const std::string& precision = "f64") {
  RunConfig run;
  run.model.depth = 3;
  run.model.base_channels = 4;
  run.model.input_height = run.model.input_width = 16;
  run.model.window = 4;
  run.model.transformer_layers = 1;
  run.model.num_heads = 2;
  run.steps = 10;
  run.checkpoint_every = 5;
  run.log_every = 0;
  run.precision = precision;
  run.phantom_slices = 8;
  run.seed = 3;
  run.out = out.string();
  return run;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(ROTCATT_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("run config keys") {
  ConfigFile f = parse_config_text("depth = 3\nsteps = 7\nlearning_rate = 0.01\nprecision = f64\nseed = 9\n");
  RunConfig run;
  apply_run_keys(f, run);
  CHECK(run.model.depth == 3);
  CHECK(run.steps == 7);
  CHECK(run.learning_rate == 0.01);
  CHECK(run.precision == "f64");
  CHECK(run.seed == 9);
  ConfigFile bad = parse_config_text("stepz = 7\n");
  CHECK_THROWS_AS(apply_run_keys(bad, run), ConfigError);
  run.precision = "f16";
  CHECK_THROWS_AS(validate_run_config(run), ConfigError);
}

TEST_CASE("epoch order is a seeded permutation") {
  auto a = epoch_order(1, 0, 6), b = epoch_order(1, 0, 6), c = epoch_order(1, 1, 6);
  CHECK(a == b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<size_t>{0, 1, 2, 3, 4, 5});
  CHECK(c.size() == 6);
}

TEST_CASE("volume disagreeing with the plan aborts before training") {
  const auto dir = scratch("mismatch");
  RunConfig run = tiny_run(dir / "run");
  auto volume = generate_phantom(1, 8, 32, 16, 4);
  try {
    train_on(run, volume);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("32") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(dir / "run" / "loss.csv"));
}

TEST_CASE("training writes the loss log and checkpoints, resume matches") {
  const auto dir = scratch("train");
  RunConfig run = tiny_run(dir / "a");
  TrainResult a = train(run);
  REQUIRE(a.records.size() == 10);
  const auto rows = read_loss_csv(a.loss_log);
  REQUIRE(rows.size() == 10);
  CHECK(slurp(a.loss_log).rfind("step,dice_loss,iou_loss,combined\n", 0) == 0);
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].step == int64_t(i) + 1);
    CHECK(rows[i].combined > 0.0);
    CHECK(rows[i].combined <= 1.0);
  }
  CHECK(fs::exists(dir / "a" / "checkpoint.ckpt"));
  CHECK(fs::exists(dir / "a" / "checkpoint_step5.ckpt"));
  CHECK(fs::exists(dir / "a" / "train_summary.json"));

  RunConfig again = tiny_run(dir / "b");
  train(again);
  CHECK(slurp(dir / "a" / "loss.csv") == slurp(dir / "b" / "loss.csv"));

  fs::copy_file(dir / "a" / "loss.csv", dir / "a" / "loss_full.csv");
  TrainResult resumed = train(run, (dir / "a" / "checkpoint_step5.ckpt").string());
  REQUIRE(resumed.records.size() == 5);
  double worst = 0;
  for (size_t i = 0; i < 5; ++i) {
    CHECK(resumed.records[i].step == rows[i + 5].step);
    worst = std::max(worst, std::abs(resumed.records[i].combined - rows[i + 5].combined));
    worst = std::max(worst, std::abs(resumed.records[i].dice - rows[i + 5].dice));
  }
  MESSAGE("resume divergence " << worst);
  CHECK(worst <= 1e-10);
  CHECK(read_loss_csv((dir / "a" / "loss.csv").string()).size() == 10);

  CHECK_THROWS_AS(train(run, (dir / "a" / "nope.ckpt").string()), DataError);
}

TEST_CASE("checkpoint round trip restores parameters bit for bit") {
  const auto dir = scratch("ckpt");
  RunConfig run = tiny_run(dir / "r", "f32");
  run.steps = 2;
  TrainResult r = train(run);
  RotCAttModel<float> a(run.model, 99);
  load_checkpoint(r.checkpoint, a, static_cast<Adam<float>*>(nullptr));
  save_checkpoint((dir / "again.ckpt").string(), a, static_cast<Adam<float>*>(nullptr), nlohmann::json::object(), 2);
  RotCAttModel<float> b(run.model, 7);
  load_checkpoint((dir / "again.ckpt").string(), b, static_cast<Adam<float>*>(nullptr));
  const auto& pa = a.parameters();
  const auto& pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    const auto& x = pa[i].var.value();
    const auto& y = pb[i].var.value();
    REQUIRE(x.numel() == y.numel());
    CHECK(std::equal(x.span().begin(), x.span().end(), y.span().begin()));
  }
  RotCAttModel<double> wrong(run.model, 1);
  CHECK_THROWS_AS(load_checkpoint(r.checkpoint, wrong, static_cast<Adam<double>*>(nullptr)), DataError);
}

TEST_CASE("evaluation report and determinism") {
  const auto dir = scratch("eval");
  RunConfig run = tiny_run(dir / "r", "f32");
  run.steps = 3;
  TrainResult r = train(run);
  const VolumePair volume = training_volume(run);
  auto e1 = evaluate_checkpoint(r.checkpoint, volume);
  auto e2 = evaluate_checkpoint(r.checkpoint, volume);
  CHECK(e1.prediction.shape() == volume.labels.shape());
  CHECK(e1.report.to_json().dump() == e2.report.to_json().dump());
  CHECK(e1.report.classes.size() == 4);
  CHECK(e1.report.dice_loss.has_value());
  for (auto l : e1.prediction.span()) CHECK(l < 4);
}

TEST_CASE("command line exit codes") {
  const auto dir = scratch("cli");
  const std::string d = dir.string();
  CHECK(cli("phantom --seed 4 --dims 8 16 16 --out " + d + "/p") == 0);
  CHECK(fs::exists(dir / "p.vol"));
  CHECK(fs::exists(dir / "p.lbl"));
  CHECK(fs::exists(dir / "p.json"));
  CHECK(cli("phantom --seed 4 --dims 8 16 16 --out " + d + "/q") == 0);
  CHECK(slurp(dir / "p.vol") == slurp(dir / "q.vol"));
  CHECK(cli("phantom --seed 4 --dims 2 16 16 --out " + d + "/bad") != 0);
  CHECK(cli("phantom --classes 2 --out " + d + "/bad") == 2);
  CHECK(cli("frobnicate") == 2);
  CHECK(cli("eval --checkpoint " + d + "/missing.ckpt --volume " + d + "/p --out " + d + "/e") == 3);

  fs::resize_file(dir / "q.vol", 100);
  CHECK(cli("plot --volume " + d + "/q --prediction " + d + "/p --slice 0 --out " + d + "/x.png") == 3);

  std::ofstream(dir / "bad.cfg") << "depth = 3\nwindow = 2\n";
  CHECK(cli("train --config " + d + "/bad.cfg --out " + d + "/t") == 2);
}

TEST_CASE("plots decode and reject bad slices") {
  const auto dir = scratch("plot");
  std::vector<LossRecord> recs;
  for (int i = 1; i <= 20; ++i) recs.push_back({i, 1.0 / i, 0.5 / i, 0.7 / i});
  write_png(plot_loss_curves(recs), (dir / "loss.png").string());
  Canvas back = read_png((dir / "loss.png").string());
  CHECK(back.width() > 0);
  CHECK(fs::file_size(dir / "loss.png") > 0);

  auto v = generate_phantom(1, 8, 16, 16, 4);
  Canvas overlay = plot_overlay(v.intensities, v.labels, v.labels, 4, 2);
  write_png(overlay, (dir / "overlay.png").string());
  Canvas o2 = read_png((dir / "overlay.png").string());
  CHECK(o2.width() == overlay.width());
  CHECK(o2.rgb() == overlay.rgb());
  CHECK_THROWS_AS(plot_overlay(v.intensities, v.labels, v.labels, 8, 2), DataError);
  CHECK(class_color(1) == Rgb{230, 25, 75});
  CHECK(class_color(9) == class_color(1));
}
