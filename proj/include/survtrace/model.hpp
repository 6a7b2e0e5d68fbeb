#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "survtrace/autodiff.hpp"
#include "survtrace/data.hpp"

namespace survtrace {

struct ModelConfig {
  std::size_t embed_dim = 16;   // d_e
  std::size_t heads = 2;        // H, must divide embed_dim
  std::size_t layers = 2;       // stacked encoder layers
  std::size_t ffn_layers = 2;   // depth of each encoder layer's feed-forward stack
  std::size_t hidden = 64;      // FFN inner width, shared-representation width, head width
  std::size_t head_layers = 2;  // 1 or 2 affine layers per output head

  void validate() const;
  std::size_t head_dim() const { return embed_dim / heads; }
};

// One encoder layer's attention weights for a single record: [head] -> D×D.
using LayerAttention = std::vector<Tensor>;

struct EncodeResult {
  Var encoded;  // (B·D)×d_e, final per-field embeddings
  // [layer][head] -> (B·D)×D softmax weights, rows grouped by record.
  std::vector<std::vector<Tensor>> attention;
};

struct ForwardResult {
  Var embeddings;                // (B·D)×d_e
  EncodeResult encoder;
  Var shared;                    // B×hidden
  std::vector<Var> hazards;      // per event: B×m, strictly positive
  Var mortality;                 // B×1 in (0,1)
  Var length_of_stay;            // B×1
};

// Attention maps for one record with covariate labels attached.
struct AttentionExport {
  std::vector<std::string> labels;           // row/column order
  std::vector<std::vector<Tensor>> layers;   // [layer][head] -> D×D
};

using RecordBatch = std::span<const SurvivalRecord* const>;

class SurvTraceModel {
 public:
  SurvTraceModel() = default;
  SurvTraceModel(CovariateSchema schema, TimeGrid grid, int num_events, ModelConfig config,
                 std::uint64_t seed);

  const CovariateSchema& schema() const { return schema_; }
  const TimeGrid& grid() const { return grid_; }
  const ModelConfig& config() const { return config_; }
  int num_events() const { return num_events_; }
  std::size_t fields() const { return schema_.size(); }

  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  // Embedding lookup / scaling, categorical fields first. (B·D)×d_e.
  Var embed(Tape& tape, RecordBatch batch) const;
  // Multi-head self-attention of one layer; returns the concatenated head
  // outputs (before W_res) and per-head attention weights.
  Var attention_layer(Tape& tape, std::size_t layer, const Var& embeddings,
                      std::vector<Tensor>* attention_out) const;
  EncodeResult encode(Tape& tape, const Var& embeddings) const;
  Var shared_representation(Tape& tape, const Var& encoded, const Var& embeddings) const;
  // event is 1-based.
  Var hazard_head(Tape& tape, const Var& shared, int event) const;
  Var mp_head(Tape& tape, const Var& shared) const;
  Var ls_head(Tape& tape, const Var& shared) const;

  ForwardResult forward(Tape& tape, RecordBatch batch) const;

  // Inference helpers (no gradient recording).
  std::vector<Tensor> predict_hazards(RecordBatch batch) const;
  AttentionExport export_attention(const SurvivalRecord& record) const;

 private:
  Var param(Tape& tape, const std::string& name) const;
  Var mlp(Tape& tape, const std::string& prefix, const Var& input) const;
  void add_mlp(const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng);

  CovariateSchema schema_;
  TimeGrid grid_;
  int num_events_ = 1;
  ModelConfig config_;
  // Parameters are read-only in forward passes; the tape watches them by
  // pointer so gradients land in Parameter::grad.
  mutable ParameterStore params_;
};

// Parameter naming, shared with checkpoints and the reference oracle in tests.
namespace param_names {
std::string categorical_table(std::size_t field);
inline const char* numerical_table() { return "embed.numerical"; }
std::string query(std::size_t layer, std::size_t head);
std::string key(std::size_t layer, std::size_t head);
std::string value(std::size_t layer, std::size_t head);
std::string residual(std::size_t layer);
std::string ffn_weight(std::size_t layer, std::size_t i);
std::string ffn_bias(std::size_t layer, std::size_t i);
inline const char* shared() { return "shared.weight"; }
std::string hazard_prefix(int event);
inline const char* mp_prefix() { return "mp"; }
inline const char* ls_prefix() { return "ls"; }
}  // namespace param_names

std::vector<const SurvivalRecord*> batch_of(std::span<const SurvivalRecord> records);
std::vector<const SurvivalRecord*> batch_of(std::span<const SurvivalRecord> records,
                                            std::span<const std::size_t> indices);

}  // namespace survtrace
