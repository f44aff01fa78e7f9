#include "rotcatt/model.hpp"

namespace rotcatt {

namespace {

template <typename F>
auto with_context(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ShapeError& e) {
    throw ShapeError(stage + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(stage + ": " + e.what());
  }
}

}  // namespace

template <typename T>
RotCAttModel<T>::RotCAttModel(const ModelConfig& config, uint64_t seed)
    : config_(config), plan_(derive_shapes(config)), encoder_(config, seed), decoder_(config, seed),
      dropout_rng_(param_seed(seed, "dropout")) {
  for (const LevelPlan& lv : plan_.levels) {
    const std::string base = "level" + std::to_string(lv.level);
    embeddings_.emplace_back(base + ".embed", lv.level, lv.channels, lv.patch, lv.embed_dim, seed);
    positions_.emplace_back(base + ".position", lv.seq_len, lv.embed_dim, seed);
    transformers_.emplace_back(base + ".transformer", config.transformer_layers, lv.embed_dim, config.num_heads,
                               config.mlp_ratio, seed);
    if (config.rotatory_enabled) rotatory_.emplace_back(base + ".rotatory", lv.embed_dim, config.tie_rotatory, seed);
    reconstruct_.emplace_back(base + ".reconstruct", lv, seed);
  }
  encoder_.collect(params_);
  for (size_t k = 0; k < plan_.levels.size(); ++k) {
    embeddings_[k].collect(params_);
    positions_[k].collect(params_);
    transformers_[k].collect(params_);
    if (config.rotatory_enabled) rotatory_[k].collect(params_);
    reconstruct_[k].collect(params_);
  }
  decoder_.collect(params_);
}

template <typename T>
Var<T> RotCAttModel<T>::forward(const Var<T>& slices, ForwardTrace<T>* trace) {
  Shape input = plan_.logits;
  input[1] = 1;
  expect_shape(slices.shape(), input, "forward input");
  FeatureGrid<T> grid = with_context("encoder", [&] { return encoder_.encode(slices, training_); });

  ForwardTrace<T> local;
  ForwardTrace<T>& tr = trace ? *trace : local;
  tr = ForwardTrace<T>{};
  for (const LevelPlan& lv : plan_.levels) {
    const size_t k = static_cast<size_t>(lv.level - 1);
    const std::string where = "level " + std::to_string(lv.level);
    Var<T> z = with_context(where + " embedding", [&] {
      TokenTensor<T> raw = embeddings_[k].forward(grid.output(lv.level));
      Var<T> pos = add_positional(raw, positions_[k].table()).values;
      if (training_ && config_.embedding_dropout > 0) {
        pos = ops::dropout(pos, static_cast<T>(config_.embedding_dropout), dropout_rng_);
      }
      return pos;
    });
    expect_shape(z.shape(), lv.tokens, where + " tokens");
    Var<T> e = with_context(where + " transformer", [&] { return transformers_[k].forward(z); });
    Var<T> f;
    if (config_.rotatory_enabled) {
      Var<T> r = with_context(where + " rotatory", [&] { return rotatory_[k].forward(e); });
      f = fuse(e, r);
      tr.rotatory.push_back(r);
    } else {
      f = rotatory_disabled_path(e);
    }
    Var<T> o = with_context(where + " reconstruct", [&] { return reconstruct_[k].forward(f); });
    expect_shape(o.shape(), lv.feature, where + " reconstruct");
    tr.tokens.push_back(z);
    tr.encoded.push_back(e);
    tr.fused.push_back(f);
    tr.reconstructed.push_back(o);
  }
  tr.decoder = with_context("decoder", [&] { return decoder_.decode(grid.bottleneck(), tr.reconstructed, training_); });
  expect_shape(tr.decoder.logits.shape(), plan_.logits, "logits");
  Var<T> logits = tr.decoder.logits;
  if (!trace) local = ForwardTrace<T>{};
  return logits;
}

int64_t count_parameters(const ModelConfig& config) {
  NoGradGuard guard;
  RotCAttModel<float> model(config, 0);
  return model.parameter_count();
}

template class RotCAttModel<float>;
template class RotCAttModel<double>;

}  // namespace rotcatt
