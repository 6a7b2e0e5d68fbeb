#include "survtrace/model.hpp"

#include <utility>

#include "survtrace/errors.hpp"
#include "survtrace/optim.hpp"

namespace survtrace {

void ModelConfig::validate() const {
  if (embed_dim == 0 || heads == 0 || hidden == 0 || ffn_layers == 0) {
    throw ContractError("model sizes must be positive");
  }
  if (embed_dim % heads != 0) {
    throw ContractError("attention heads (" + std::to_string(heads) + ") must divide embed_dim (" +
                        std::to_string(embed_dim) + ")");
  }
  if (head_layers != 1 && head_layers != 2) throw ContractError("head_layers must be 1 or 2");
}

namespace param_names {
std::string categorical_table(std::size_t field) { return "embed.categorical." + std::to_string(field); }
std::string query(std::size_t l, std::size_t h) { return "encoder." + std::to_string(l) + ".head." + std::to_string(h) + ".query"; }
std::string key(std::size_t l, std::size_t h) { return "encoder." + std::to_string(l) + ".head." + std::to_string(h) + ".key"; }
std::string value(std::size_t l, std::size_t h) { return "encoder." + std::to_string(l) + ".head." + std::to_string(h) + ".value"; }
std::string residual(std::size_t l) { return "encoder." + std::to_string(l) + ".residual"; }
std::string ffn_weight(std::size_t l, std::size_t i) { return "encoder." + std::to_string(l) + ".ffn." + std::to_string(i) + ".weight"; }
std::string ffn_bias(std::size_t l, std::size_t i) { return "encoder." + std::to_string(l) + ".ffn." + std::to_string(i) + ".bias"; }
std::string hazard_prefix(int event) { return "hazard." + std::to_string(event); }
}  // namespace param_names

std::vector<const SurvivalRecord*> batch_of(std::span<const SurvivalRecord> records) {
  std::vector<const SurvivalRecord*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(&r);
  return out;
}

std::vector<const SurvivalRecord*> batch_of(std::span<const SurvivalRecord> records,
                                            std::span<const std::size_t> indices) {
  std::vector<const SurvivalRecord*> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(&records[i]);
  return out;
}

SurvTraceModel::SurvTraceModel(CovariateSchema schema, TimeGrid grid, int num_events, ModelConfig config,
                               std::uint64_t seed)
    : schema_(std::move(schema)), grid_(std::move(grid)), num_events_(num_events), config_(config) {
  config_.validate();
  if (num_events_ < 1) throw ContractError("model needs at least one event type");
  std::mt19937_64 rng(seed);
  const std::size_t de = config_.embed_dim, dh = config_.head_dim(), hidden = config_.hidden;

  for (std::size_t c = 0; c < schema_.categorical_count(); ++c) {
    params_.add(param_names::categorical_table(c), xavier_uniform(schema_.categorical(c).cardinality() + 1, de, rng));
  }
  if (schema_.numerical_count() > 0) {
    params_.add(param_names::numerical_table(), xavier_uniform(schema_.numerical_count(), de, rng));
  }
  for (std::size_t l = 0; l < config_.layers; ++l) {
    for (std::size_t h = 0; h < config_.heads; ++h) {
      params_.add(param_names::query(l, h), xavier_uniform(de, dh, rng));
      params_.add(param_names::key(l, h), xavier_uniform(de, dh, rng));
      params_.add(param_names::value(l, h), xavier_uniform(de, dh, rng));
    }
    params_.add(param_names::residual(l), xavier_uniform(de, de, rng));
    for (std::size_t i = 0; i < config_.ffn_layers; ++i) {
      const std::size_t in = i == 0 ? de : hidden;
      const std::size_t out = i + 1 == config_.ffn_layers ? de : hidden;
      params_.add(param_names::ffn_weight(l, i), xavier_uniform(in, out, rng));
      params_.add(param_names::ffn_bias(l, i), Tensor({1, out}));
    }
  }
  params_.add(param_names::shared(), xavier_uniform(2 * fields() * de, hidden, rng));
  for (int k = 1; k <= num_events_; ++k) add_mlp(param_names::hazard_prefix(k), hidden, grid_.bins(), rng);
  add_mlp(param_names::mp_prefix(), hidden, 1, rng);
  add_mlp(param_names::ls_prefix(), hidden, 1, rng);
}

void SurvTraceModel::add_mlp(const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  if (config_.head_layers == 2) {
    params_.add(prefix + ".0.weight", xavier_uniform(in, config_.hidden, rng));
    params_.add(prefix + ".0.bias", Tensor({1, config_.hidden}));
    params_.add(prefix + ".1.weight", xavier_uniform(config_.hidden, out, rng));
    params_.add(prefix + ".1.bias", Tensor({1, out}));
  } else {
    params_.add(prefix + ".0.weight", xavier_uniform(in, out, rng));
    params_.add(prefix + ".0.bias", Tensor({1, out}));
  }
}

Var SurvTraceModel::param(Tape& tape, const std::string& name) const { return tape.watch(params_.at(name)); }

Var SurvTraceModel::mlp(Tape& tape, const std::string& prefix, const Var& input) const {
  Var h = add_row(matmul(input, param(tape, prefix + ".0.weight")), param(tape, prefix + ".0.bias"));
  if (config_.head_layers == 1) return h;
  h = relu(h);
  return add_row(matmul(h, param(tape, prefix + ".1.weight")), param(tape, prefix + ".1.bias"));
}

Var SurvTraceModel::embed(Tape& tape, RecordBatch batch) const {
  if (batch.empty()) throw ContractError("embed: empty batch");
  const std::size_t b = batch.size();
  for (const auto* r : batch) validate_record(schema_, *r, num_events_);
  std::vector<Var> parts;
  for (std::size_t c = 0; c < schema_.categorical_count(); ++c) {
    std::vector<std::size_t> idx(b);
    for (std::size_t i = 0; i < b; ++i) idx[i] = batch[i]->categorical[c];
    parts.push_back(gather_rows(param(tape, param_names::categorical_table(c)), idx));
  }
  if (schema_.numerical_count() > 0) {
    Var table = param(tape, param_names::numerical_table());
    for (std::size_t j = 0; j < schema_.numerical_count(); ++j) {
      Tensor column({b, 1});
      for (std::size_t i = 0; i < b; ++i) column[i] = batch[i]->numerical[j];
      const std::size_t row = j;
      parts.push_back(matmul(tape.constant(std::move(column)), gather_rows(table, std::span(&row, 1))));
    }
  }
  return interleave_rows(parts);
}

Var SurvTraceModel::attention_layer(Tape& tape, std::size_t layer, const Var& x,
                                    std::vector<Tensor>* attention_out) const {
  const std::size_t d = fields();
  std::vector<Var> heads;
  for (std::size_t h = 0; h < config_.heads; ++h) {
    Var q = matmul(x, param(tape, param_names::query(layer, h)));
    Var k = matmul(x, param(tape, param_names::key(layer, h)));
    Var v = matmul(x, param(tape, param_names::value(layer, h)));
    Var weights = softmax_rows(block_matmul_nt(q, k, d));
    if (attention_out != nullptr) attention_out->push_back(weights.value());
    heads.push_back(block_matmul(weights, v, d));
  }
  return heads.size() == 1 ? heads[0] : concat_cols(heads);
}

EncodeResult SurvTraceModel::encode(Tape& tape, const Var& embeddings) const {
  EncodeResult out;
  Var x = embeddings;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    std::vector<Tensor> maps;
    Var mixed = attention_layer(tape, l, x, &maps);
    out.attention.push_back(std::move(maps));
    Var res = selu(add(matmul(mixed, param(tape, param_names::residual(l))), x));
    Var h = res;
    for (std::size_t i = 0; i < config_.ffn_layers; ++i) {
      h = add_row(matmul(h, param(tape, param_names::ffn_weight(l, i))), param(tape, param_names::ffn_bias(l, i)));
      if (i + 1 < config_.ffn_layers) h = selu(h);
    }
    x = selu(add(h, res));
  }
  out.encoded = x;
  return out;
}

Var SurvTraceModel::shared_representation(Tape& tape, const Var& encoded, const Var& embeddings) const {
  const std::size_t width = fields() * config_.embed_dim;
  const std::size_t b = encoded.rows() / fields();
  const Var parts[] = {reshape(encoded, {b, width}), reshape(embeddings, {b, width})};
  return selu(matmul(concat_cols(parts), param(tape, param_names::shared())));
}

Var SurvTraceModel::hazard_head(Tape& tape, const Var& shared, int event) const {
  if (event < 1 || event > num_events_) {
    throw ContractError("event " + std::to_string(event) + " outside 1.." + std::to_string(num_events_));
  }
  return softplus(mlp(tape, param_names::hazard_prefix(event), shared));
}

Var SurvTraceModel::mp_head(Tape& tape, const Var& shared) const {
  return sigmoid(mlp(tape, param_names::mp_prefix(), shared));
}

Var SurvTraceModel::ls_head(Tape& tape, const Var& shared) const {
  return mlp(tape, param_names::ls_prefix(), shared);
}

ForwardResult SurvTraceModel::forward(Tape& tape, RecordBatch batch) const {
  ForwardResult out;
  out.embeddings = embed(tape, batch);
  out.encoder = encode(tape, out.embeddings);
  out.shared = shared_representation(tape, out.encoder.encoded, out.embeddings);
  for (int k = 1; k <= num_events_; ++k) out.hazards.push_back(hazard_head(tape, out.shared, k));
  out.mortality = mp_head(tape, out.shared);
  out.length_of_stay = ls_head(tape, out.shared);
  return out;
}

std::vector<Tensor> SurvTraceModel::predict_hazards(RecordBatch batch) const {
  Tape tape(false);
  Var embeddings = embed(tape, batch);
  Var encoded = encode(tape, embeddings).encoded;
  Var shared = shared_representation(tape, encoded, embeddings);
  std::vector<Tensor> out;
  for (int k = 1; k <= num_events_; ++k) out.push_back(hazard_head(tape, shared, k).value());
  return out;
}

AttentionExport SurvTraceModel::export_attention(const SurvivalRecord& record) const {
  Tape tape(false);
  const SurvivalRecord* one[] = {&record};
  EncodeResult enc = encode(tape, embed(tape, one));
  AttentionExport out;
  out.labels = schema_.embedding_labels();
  out.layers = std::move(enc.attention);
  return out;
}

}  // namespace survtrace
