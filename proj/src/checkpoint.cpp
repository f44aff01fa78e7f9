#include "rotcatt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace rotcatt {

namespace {

constexpr char kMagic[8] = {'R', 'C', 'A', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename U>
void put_le(std::string& out, U value) {
  for (size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<char>((value >> (8 * b)) & 0xff));
}

template <typename U>
U get_le(const std::string& in, size_t pos) {
  U v = 0;
  for (size_t b = 0; b < sizeof(U); ++b) v |= U(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  return v;
}

template <typename T>
void append_tensor(std::string& out, const Tensor<T>& t) {
  using Bits = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
  out.reserve(out.size() + size_t(t.numel()) * sizeof(T));
  for (T v : t.span()) put_le<Bits>(out, std::bit_cast<Bits>(v));
}

template <typename T>
void read_tensor(const std::string& in, size_t pos, Tensor<T>& t) {
  using Bits = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = std::bit_cast<T>(get_le<Bits>(in, pos + size_t(i) * sizeof(T)));
}

struct RawCheckpoint {
  CheckpointHeader header;
  nlohmann::json tensors;
  std::string bytes;
  size_t payload = 0;
};

RawCheckpoint read_raw(const std::string& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint not found: " + path);
  RawCheckpoint raw;
  if (with_payload) {
    raw.bytes.assign(std::istreambuf_iterator<char>(in), {});
  } else {
    raw.bytes.resize(20);
    in.read(raw.bytes.data(), 20);
    raw.bytes.resize(size_t(in.gcount()));
  }
  if (raw.bytes.size() < 20 || std::memcmp(raw.bytes.data(), kMagic, 8) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  const uint32_t version = get_le<uint32_t>(raw.bytes, 8);
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const uint64_t len = get_le<uint64_t>(raw.bytes, 12);
  if (!with_payload) {
    raw.bytes.resize(20 + len);
    in.read(raw.bytes.data() + 20, std::streamsize(len));
    if (uint64_t(in.gcount()) != len) throw DataError("truncated checkpoint header: " + path);
  } else if (raw.bytes.size() < 20 + len) {
    throw DataError("truncated checkpoint header: " + path);
  }
  try {
    const auto j = nlohmann::json::parse(raw.bytes.begin() + 20, raw.bytes.begin() + 20 + std::ptrdiff_t(len));
    CheckpointHeader& h = raw.header;
    h.version = int(version);
    h.dtype = j.at("dtype").get<std::string>();
    h.model = model_config_from_json(j.at("model_config"));
    h.run = j.at("run");
    h.step = j.at("step").get<int64_t>();
    h.adam_step = j.at("adam_step").get<int64_t>();
    h.rng_state = j.at("rng_state").get<std::string>();
    raw.tensors = j.at("tensors");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  if (raw.header.dtype != "f32" && raw.header.dtype != "f64") throw DataError("checkpoint dtype must be f32 or f64");
  raw.payload = 20 + len;
  return raw;
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["depth"] = c.depth;
  j["base_channels"] = c.base_channels;
  j["input_height"] = c.input_height;
  j["input_width"] = c.input_width;
  j["window"] = c.window;
  j["num_classes"] = c.num_classes;
  j["transformer_layers"] = c.transformer_layers;
  j["embed_dims"] = c.embed_dims;
  j["mlp_ratio"] = c.mlp_ratio;
  j["num_heads"] = c.num_heads;
  j["alpha"] = c.alpha;
  j["epsilon"] = c.epsilon;
  j["rotatory_enabled"] = c.rotatory_enabled;
  j["tie_rotatory"] = c.tie_rotatory;
  j["embedding_dropout"] = c.embedding_dropout;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.depth = j.at("depth").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.input_height = j.at("input_height").get<int>();
  c.input_width = j.at("input_width").get<int>();
  c.window = j.at("window").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.transformer_layers = j.at("transformer_layers").get<int>();
  c.embed_dims = j.at("embed_dims").get<std::vector<int>>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.rotatory_enabled = j.at("rotatory_enabled").get<bool>();
  c.tie_rotatory = j.at("tie_rotatory").get<bool>();
  c.embedding_dropout = j.at("embedding_dropout").get<double>();
  return c;
}

template <typename T>
void save_checkpoint(const std::string& path, RotCAttModel<T>& model, Adam<T>* adam, const nlohmann::json& run,
                     int64_t step) {
  std::string payload;
  nlohmann::json tensors = nlohmann::json::array();
  auto add = [&](const std::string& name, const char* kind, const Tensor<T>& t) {
    tensors.push_back({{"name", name}, {"kind", kind}, {"shape", t.shape()}, {"offset", payload.size()}});
    append_tensor(payload, t);
  };
  for (const auto& p : model.parameters()) add(p.name, p.trainable ? "param" : "buffer", p.var.value());
  if (adam) {
    for (size_t k = 0; k < adam->params().size(); ++k) {
      add(adam->params()[k].name, "adam_m", adam->first_moments()[k]);
      add(adam->params()[k].name, "adam_v", adam->second_moments()[k]);
    }
  }
  std::ostringstream rng;
  rng << model.dropout_rng();
  nlohmann::ordered_json header;
  header["format"] = "rotcatt-checkpoint";
  header["dtype"] = dtype_name<T>();
  header["model_config"] = model_config_to_json(model.config());
  header["run"] = run;
  header["step"] = step;
  header["adam_step"] = adam ? adam->steps_taken() : 0;
  header["rng_state"] = rng.str();
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::string out(kMagic, 8);
  put_le<uint32_t>(out, kVersion);
  put_le<uint64_t>(out, text.size());
  out += text;
  out += payload;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint " + tmp);
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw DataError("checkpoint write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::string& path) { return read_raw(path, false).header; }

template <typename T>
CheckpointHeader load_checkpoint(const std::string& path, RotCAttModel<T>& model, Adam<T>* adam) {
  RawCheckpoint raw = read_raw(path, true);
  if (raw.header.dtype != dtype_name<T>()) {
    throw DataError("checkpoint holds " + raw.header.dtype + " tensors, run precision is " + dtype_name<T>());
  }
  if (!(raw.header.model == model.config())) throw DataError("checkpoint model configuration differs from the model");
  std::map<std::pair<std::string, std::string>, nlohmann::json> index;
  for (const auto& t : raw.tensors) index[{t.at("name").get<std::string>(), t.at("kind").get<std::string>()}] = t;
  const size_t payload_size = raw.bytes.size() - raw.payload;
  auto restore = [&](const std::string& name, const char* kind, Tensor<T>& dst) {
    auto it = index.find({name, kind});
    if (it == index.end()) throw DataError("checkpoint lacks " + std::string(kind) + " " + name);
    const Shape shape = it->second.at("shape").get<Shape>();
    if (shape != dst.shape()) {
      throw DataError("checkpoint " + name + " has shape " + shape_string(shape) + ", model expects " +
                      shape_string(dst.shape()));
    }
    const size_t offset = it->second.at("offset").get<size_t>();
    if (offset + size_t(dst.numel()) * sizeof(T) > payload_size) throw DataError("checkpoint payload truncated at " + name);
    read_tensor(raw.bytes, raw.payload + offset, dst);
  };
  for (const auto& p : model.parameters()) restore(p.name, p.trainable ? "param" : "buffer", p.var.value_mut());
  if (adam) {
    for (size_t k = 0; k < adam->params().size(); ++k) {
      restore(adam->params()[k].name, "adam_m", adam->first_moments()[k]);
      restore(adam->params()[k].name, "adam_v", adam->second_moments()[k]);
    }
    adam->set_steps_taken(raw.header.adam_step);
  }
  std::istringstream rng(raw.header.rng_state);
  rng >> model.dropout_rng();
  if (!rng) throw DataError("checkpoint rng state unreadable");
  return raw.header;
}

template void save_checkpoint(const std::string&, RotCAttModel<float>&, Adam<float>*, const nlohmann::json&, int64_t);
template void save_checkpoint(const std::string&, RotCAttModel<double>&, Adam<double>*, const nlohmann::json&, int64_t);
template CheckpointHeader load_checkpoint(const std::string&, RotCAttModel<float>&, Adam<float>*);
template CheckpointHeader load_checkpoint(const std::string&, RotCAttModel<double>&, Adam<double>*);

}  // namespace rotcatt
