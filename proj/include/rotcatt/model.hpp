#pragma once

#include <random>
#include <vector>

#include "rotcatt/embedding.hpp"
#include "rotcatt/encoder.hpp"
#include "rotcatt/fusion.hpp"
#include "rotcatt/rotatory.hpp"
#include "rotcatt/transformer.hpp"

namespace rotcatt {

// Intermediate tensors of one forward pass, indexed by level - 1.
template <typename T>
struct ForwardTrace {
  std::vector<Var<T>> tokens;         // Z_i after positional add
  std::vector<Var<T>> encoded;        // E_i
  std::vector<Var<T>> rotatory;       // R_i (empty when disabled)
  std::vector<Var<T>> fused;          // F_i
  std::vector<Var<T>> reconstructed;  // O_i
  DecoderState<T> decoder;
};

template <typename T>
class RotCAttModel {
 public:
  RotCAttModel(const ModelConfig& config, uint64_t seed);

  // slices (B, 1, H, W) -> logits (B, K, H, W).
  Var<T> forward(const Var<T>& slices, ForwardTrace<T>* trace = nullptr);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  const ModelConfig& config() const { return config_; }
  const ShapePlan& plan() const { return plan_; }

  // Stable, name-ordered list of parameters and running-statistic buffers.
  const ParamList<T>& parameters() const { return params_; }
  int64_t parameter_count() const { return count_trainable(params_); }

  std::mt19937_64& dropout_rng() { return dropout_rng_; }

  RotatoryBlock<T>& rotatory_block(int level) { return rotatory_.at(static_cast<size_t>(level - 1)); }
  TransformerEncoder<T>& transformer(int level) { return transformers_.at(static_cast<size_t>(level - 1)); }
  Decoder<T>& decoder() { return decoder_; }

 private:
  ModelConfig config_;
  ShapePlan plan_;
  bool training_ = true;
  Encoder<T> encoder_;
  std::vector<PatchEmbedding<T>> embeddings_;
  std::vector<PositionalTable<T>> positions_;
  std::vector<TransformerEncoder<T>> transformers_;
  std::vector<RotatoryBlock<T>> rotatory_;
  std::vector<Reconstruct<T>> reconstruct_;
  Decoder<T> decoder_;
  ParamList<T> params_;
  std::mt19937_64 dropout_rng_;
};

// Trainable parameter count of a freshly built model, without allocating activations.
int64_t count_parameters(const ModelConfig& config);

}  // namespace rotcatt
