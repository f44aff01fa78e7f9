#include "rotcatt/config.hpp"

#include <fstream>
#include <sstream>

namespace rotcatt {
namespace {

bool is_pow2_multiple(int value, int64_t divisor) { return value % divisor == 0; }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

int64_t parse_int64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

uint64_t parse_uint64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected non-negative integer, got '" + v + "'");
  }
}

int ModelConfig::embed_dim(int level) const {
  if (!embed_dims.empty()) return embed_dims.at(static_cast<size_t>(level - 1));
  return base_channels << (level + 1);
}

ModelConfig full_scale_config() {
  ModelConfig c;
  c.base_channels = 64;
  c.input_height = 256;
  c.input_width = 256;
  return c;
}

void validate_config(const ModelConfig& c) {
  auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
  if (c.depth < 2) fail("depth D must be >= 2 (got " + std::to_string(c.depth) + ")");
  if (c.depth > 12) fail("depth D must be <= 12");
  if (c.base_channels < 1) fail("base_channels must be >= 1");
  if (c.input_height < 1 || c.input_width < 1) fail("input_height/input_width must be positive");
  const int64_t down = int64_t{1} << (c.depth - 1);
  if (!is_pow2_multiple(c.input_height, down) || !is_pow2_multiple(c.input_width, down)) {
    fail("H and W must be divisible by 2^(D-1) = " + std::to_string(down));
  }
  const int64_t p1 = int64_t{1} << c.depth;
  if ((int64_t{c.input_height} * c.input_width) % (p1 * p1) != 0) {
    fail("H*W must be divisible by p_1^2 = " + std::to_string(p1 * p1));
  }
  if (c.input_height % p1 != 0 || c.input_width % p1 != 0) {
    fail("H and W must each be divisible by p_1 = 2^D = " + std::to_string(p1) +
         " so every level tiles into whole patches");
  }
  if (c.window < 1) fail("window B must be >= 1");
  if (c.rotatory_enabled && c.window < 3) {
    fail("window B must be >= 3 when rotatory_enabled (three consecutive slices), got " +
         std::to_string(c.window));
  }
  if (c.num_classes < 1) fail("num_classes must be >= 1");
  if (c.num_classes > 255) fail("num_classes must fit the u8 label format (<= 255)");
  if (c.transformer_layers < 0) fail("transformer_layers must be >= 0");
  if (c.num_heads < 1) fail("num_heads must be >= 1");
  if (c.mlp_ratio < 1) fail("mlp_ratio must be >= 1");
  if (!c.embed_dims.empty() && static_cast<int>(c.embed_dims.size()) != c.depth - 1) {
    fail("embed_dims must list D-1 = " + std::to_string(c.depth - 1) + " values");
  }
  for (int i = 1; i < c.depth; ++i) {
    const int d = c.embed_dim(i);
    if (d < 1) fail("embed dim for level " + std::to_string(i) + " must be positive");
    if (d % c.num_heads != 0) {
      fail("embed dim " + std::to_string(d) + " at level " + std::to_string(i) +
           " not divisible by num_heads " + std::to_string(c.num_heads));
    }
  }
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (!(c.epsilon >= 0.0)) fail("epsilon must be >= 0");
  if (!(c.embedding_dropout >= 0.0 && c.embedding_dropout < 1.0)) {
    fail("embedding_dropout must lie in [0, 1)");
  }
}

Shape ShapePlan::node_shape(int i) const {
  if (i == static_cast<int>(levels.size()) + 1) return bottleneck;
  return level(i).feature;
}

ShapePlan derive_shapes(const ModelConfig& c) {
  validate_config(c);
  ShapePlan plan;
  plan.window = c.window;
  const int d = c.depth;
  for (int i = 1; i < d; ++i) {
    LevelPlan lp;
    lp.level = i;
    lp.channels = c.base_channels << (i - 1);
    lp.height = c.input_height >> (i - 1);
    lp.width = c.input_width >> (i - 1);
    lp.patch = 1 << (d - i + 1);
    lp.grid_h = lp.height / lp.patch;
    lp.grid_w = lp.width / lp.patch;
    lp.seq_len = int64_t{lp.height} * lp.width / (int64_t{lp.patch} * lp.patch);
    lp.embed_dim = c.embed_dim(i);
    lp.feature = {c.window, lp.channels, lp.height, lp.width};
    lp.tokens = {c.window, lp.seq_len, lp.embed_dim};
    if (i == 1) {
      plan.sequence_length = lp.seq_len;
    } else if (lp.seq_len != plan.sequence_length) {
      throw ConfigError("sequence length differs across levels: level " + std::to_string(i) +
                        " has " + std::to_string(lp.seq_len) + ", level 1 has " +
                        std::to_string(plan.sequence_length));
    }
    plan.levels.push_back(lp);
  }
  plan.bottleneck = {c.window, int64_t{c.base_channels} << (d - 1), c.input_height >> (d - 1),
                     c.input_width >> (d - 1)};
  plan.logits = {c.window, c.num_classes, c.input_height, c.input_width};
  return plan;
}

std::string ShapeMismatch::message() const {
  std::string m = "shape mismatch: expected " + shape_string(expected) + ", got " +
                  shape_string(actual);
  if (axis) {
    m += " (axis " + std::to_string(*axis) + ": expected " + std::to_string(expected[*axis]) +
         ", got " + std::to_string(actual[*axis]) + ")";
  } else {
    m += " (rank " + std::to_string(expected.size()) + " vs " + std::to_string(actual.size()) + ")";
  }
  return m;
}

std::optional<ShapeMismatch> validate_tensor(const Shape& actual, const Shape& expected) {
  if (actual == expected) return std::nullopt;
  ShapeMismatch mm{expected, actual, std::nullopt};
  if (actual.size() == expected.size()) {
    for (size_t a = 0; a < actual.size(); ++a) {
      if (actual[a] != expected[a]) {
        mm.axis = a;
        break;
      }
    }
  }
  return mm;
}

void expect_shape(const Shape& actual, const Shape& expected, const std::string& context) {
  if (auto mm = validate_tensor(actual, expected)) throw ShapeError(context + ": " + mm->message());
}

ConfigFile parse_config_text(const std::string& text) {
  ConfigFile file;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    file.values[key] = value;
  }
  return file;
}

ConfigFile read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

void apply_model_keys(ConfigFile& file, ModelConfig& c) {
  auto take = [&](const char* key, auto&& apply) {
    auto it = file.values.find(key);
    if (it == file.values.end()) return;
    apply(it->first, it->second);
    file.values.erase(it);
  };
  take("depth", [&](auto& k, auto& v) { c.depth = parse_int(k, v); });
  take("base_channels", [&](auto& k, auto& v) { c.base_channels = parse_int(k, v); });
  take("input_height", [&](auto& k, auto& v) { c.input_height = parse_int(k, v); });
  take("input_width", [&](auto& k, auto& v) { c.input_width = parse_int(k, v); });
  take("window", [&](auto& k, auto& v) { c.window = parse_int(k, v); });
  take("num_classes", [&](auto& k, auto& v) { c.num_classes = parse_int(k, v); });
  take("transformer_layers", [&](auto& k, auto& v) { c.transformer_layers = parse_int(k, v); });
  take("mlp_ratio", [&](auto& k, auto& v) { c.mlp_ratio = parse_int(k, v); });
  take("num_heads", [&](auto& k, auto& v) { c.num_heads = parse_int(k, v); });
  take("alpha", [&](auto& k, auto& v) { c.alpha = parse_double(k, v); });
  take("epsilon", [&](auto& k, auto& v) { c.epsilon = parse_double(k, v); });
  take("rotatory_enabled", [&](auto& k, auto& v) { c.rotatory_enabled = parse_bool(k, v); });
  take("tie_rotatory", [&](auto& k, auto& v) { c.tie_rotatory = parse_bool(k, v); });
  take("embedding_dropout", [&](auto& k, auto& v) { c.embedding_dropout = parse_double(k, v); });
  take("embed_dims", [&](auto& k, auto& v) {
    c.embed_dims.clear();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) c.embed_dims.push_back(parse_int(k, item));
    }
  });
}

std::string format_model_config(const ModelConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "depth = " << c.depth << "\n"
      << "base_channels = " << c.base_channels << "\n"
      << "input_height = " << c.input_height << "\n"
      << "input_width = " << c.input_width << "\n"
      << "window = " << c.window << "\n"
      << "num_classes = " << c.num_classes << "\n"
      << "transformer_layers = " << c.transformer_layers << "\n";
  if (!c.embed_dims.empty()) {
    out << "embed_dims = ";
    for (size_t i = 0; i < c.embed_dims.size(); ++i) out << (i ? "," : "") << c.embed_dims[i];
    out << "\n";
  }
  out << "mlp_ratio = " << c.mlp_ratio << "\n"
      << "num_heads = " << c.num_heads << "\n"
      << "alpha = " << c.alpha << "\n"
      << "epsilon = " << c.epsilon << "\n"
      << "rotatory_enabled = " << (c.rotatory_enabled ? "true" : "false") << "\n"
      << "tie_rotatory = " << (c.tie_rotatory ? "true" : "false") << "\n"
      << "embedding_dropout = " << c.embedding_dropout << "\n";
  return out.str();
}

}  // namespace rotcatt
