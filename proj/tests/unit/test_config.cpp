#include <doctest.h>

#include "rotcatt/config.hpp"
#include "rotcatt/model.hpp"

using namespace rotcatt;

namespace {

ModelConfig make(int d, int hw, int c, int b = 3) {
  ModelConfig cfg;
  cfg.depth = d;
  cfg.input_height = cfg.input_width = hw;
  cfg.base_channels = c;
  cfg.window = b;
  cfg.num_heads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("reference D=4 256x256 plan has patches 16, 8, 4 and 256 tokens") {
  ShapePlan p = derive_shapes(make(4, 256, 64));
  REQUIRE(p.levels.size() == 3);
  CHECK(p.level(1).patch == 16);
  CHECK(p.level(2).patch == 8);
  CHECK(p.level(3).patch == 4);
  for (const auto& lv : p.levels) CHECK(lv.seq_len == 256);
  CHECK(p.sequence_length == 256);
  CHECK(p.bottleneck == Shape{3, 512, 32, 32});
  CHECK(p.level(1).feature == Shape{3, 64, 256, 256});
}

TEST_CASE("minimal D=2 plan") {
  ModelConfig cfg = make(2, 8, 1);
  cfg.rotatory_enabled = true;
  ShapePlan p = derive_shapes(cfg);
  REQUIRE(p.levels.size() == 1);
  CHECK(p.level(1).patch == 4);
  CHECK(p.level(1).seq_len == 4);
  CHECK(p.level(1).feature == Shape{3, 1, 8, 8});
}

TEST_CASE("desk plan level 3") {
  ShapePlan p = derive_shapes(make(4, 64, 16, 8));
  CHECK(p.level(1).patch == 16);
  CHECK(p.level(3).patch == 4);
  CHECK(p.sequence_length == 16);
  CHECK(p.level(3).feature == Shape{8, 64, 16, 16});
  CHECK(p.level(3).tokens == Shape{8, 16, 256});
  CHECK(p.logits == Shape{8, 4, 64, 64});
}

TEST_CASE("derive_shapes is pure") { CHECK(derive_shapes(make(3, 32, 8)) == derive_shapes(make(3, 32, 8))); }

TEST_CASE("validate_config names the violated constraint") {
  auto message = [](const ModelConfig& c) {
    try {
      validate_config(c);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  ModelConfig c = make(4, 64, 16);
  c.window = 2;
  CHECK(message(c).find("window") != std::string::npos);
  c.rotatory_enabled = false;
  CHECK(message(c).empty());

  c = make(4, 60, 16);
  CHECK(message(c).find("divisible") != std::string::npos);
  c = make(1, 64, 16);
  CHECK(!message(c).empty());
  c = make(4, 64, 16);
  c.num_heads = 3;
  CHECK(message(c).find("heads") != std::string::npos);
  c = make(4, 64, 16);
  c.embed_dims = {32, 64};
  CHECK(!message(c).empty());
  c = make(4, 64, 16);
  c.alpha = 1.5;
  CHECK(!message(c).empty());
}

TEST_CASE("validate_tensor reports the first differing axis") {
  const ShapePlan p = derive_shapes(make(4, 256, 64));
  CHECK_FALSE(validate_tensor({3, 64, 256, 256}, p.level(1).feature).has_value());
  auto m = validate_tensor({3, 64, 128, 256}, p.level(1).feature);
  REQUIRE(m.has_value());
  REQUIRE(m->axis.has_value());
  CHECK(*m->axis == 2);
  CHECK(m->message().find("axis 2") != std::string::npos);
  CHECK_FALSE(validate_tensor({3, 512, 32, 32}, p.bottleneck).has_value());
  CHECK_THROWS_AS(expect_shape({3, 64, 128, 256}, p.level(1).feature, "level 1"), ShapeError);
}

TEST_CASE("config file parsing") {
  ConfigFile f = parse_config_text("# desk\ndepth = 3\nbase_channels=8 # inline\nembed_dims = 16, 32\n"
                                   "rotatory_enabled = off\nsteps = 10\n");
  ModelConfig c;
  apply_model_keys(f, c);
  CHECK(c.depth == 3);
  CHECK(c.base_channels == 8);
  CHECK(c.embed_dims == std::vector<int>{16, 32});
  CHECK_FALSE(c.rotatory_enabled);
  REQUIRE(f.values.size() == 1);
  CHECK(f.values.at("steps") == "10");

  ConfigFile bad = parse_config_text("depth = three\n");
  CHECK_THROWS_AS(apply_model_keys(bad, c), ConfigError);
  CHECK_THROWS_AS(parse_config_text("just words\n"), ConfigError);

  ModelConfig round;
  ConfigFile again = parse_config_text(format_model_config(c));
  apply_model_keys(again, round);
  CHECK(round == c);
}

TEST_CASE("ablated model has fewer parameters") {
  ModelConfig c = make(3, 32, 8, 4);
  const int64_t with = count_parameters(c);
  c.rotatory_enabled = false;
  const int64_t without = count_parameters(c);
  CHECK(without < with);
  CHECK(without > 0);
}

TEST_CASE("full-scale parameter count is of the same order as 51.51M") {
  const int64_t n = count_parameters(full_scale_config());
  MESSAGE("full-scale parameter count: " << n);
  CHECK(n > 5'000'000);
  CHECK(n < 500'000'000);
}
