#include "survtrace/serialization.hpp"

#include <fstream>

#include "survtrace/errors.hpp"

namespace survtrace {

namespace {

template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

Json read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

void write_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Json to_json(const ModelConfig& c) {
  return Json{{"embed_dim", c.embed_dim}, {"heads", c.heads},   {"layers", c.layers},
              {"ffn_layers", c.ffn_layers}, {"hidden", c.hidden}, {"head_layers", c.head_layers}};
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  read_opt(j, "embed_dim", c.embed_dim);
  read_opt(j, "heads", c.heads);
  read_opt(j, "layers", c.layers);
  read_opt(j, "ffn_layers", c.ffn_layers);
  read_opt(j, "hidden", c.hidden);
  read_opt(j, "head_layers", c.head_layers);
  return c;
}

Json to_json(const TrainConfig& c) {
  return Json{{"learning_rate", c.learning_rate},
              {"weight_decay", c.weight_decay},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"anneal_epochs", c.anneal_epochs},
              {"anneal", c.anneal == AnnealMode::linear ? "linear" : "constant"},
              {"gamma_mp", c.gamma_mp},
              {"gamma_ls", c.gamma_ls},
              {"time_bins", c.time_bins},
              {"grid_scheme", to_string(c.grid_scheme)},
              {"use_ips", c.use_ips},
              {"propensity",
               {{"l2", c.propensity.l2},
                {"floor", c.propensity.floor},
                {"normalize", c.propensity.normalize},
                {"max_iterations", c.propensity.max_iterations},
                {"tolerance", c.propensity.tolerance}}},
              {"model", to_json(c.model)},
              {"split", {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test}}},
              {"seed", c.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  if (!j.is_object()) throw DataError("config must be a JSON object");
  TrainConfig c;
  try {
    read_opt(j, "learning_rate", c.learning_rate);
    read_opt(j, "weight_decay", c.weight_decay);
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "max_epochs", c.max_epochs);
    read_opt(j, "patience", c.patience);
    read_opt(j, "anneal_epochs", c.anneal_epochs);
    if (j.contains("anneal")) {
      const auto mode = j.at("anneal").get<std::string>();
      if (mode != "linear" && mode != "constant") throw DataError("anneal must be 'linear' or 'constant'");
      c.anneal = mode == "linear" ? AnnealMode::linear : AnnealMode::constant;
    }
    read_opt(j, "gamma_mp", c.gamma_mp);
    read_opt(j, "gamma_ls", c.gamma_ls);
    read_opt(j, "time_bins", c.time_bins);
    if (j.contains("grid_scheme")) c.grid_scheme = parse_grid_scheme(j.at("grid_scheme").get<std::string>());
    read_opt(j, "use_ips", c.use_ips);
    if (j.contains("propensity")) {
      const auto& p = j.at("propensity");
      read_opt(p, "l2", c.propensity.l2);
      read_opt(p, "floor", c.propensity.floor);
      read_opt(p, "normalize", c.propensity.normalize);
      read_opt(p, "max_iterations", c.propensity.max_iterations);
      read_opt(p, "tolerance", c.propensity.tolerance);
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("split")) {
      const auto& s = j.at("split");
      read_opt(s, "train", c.split.train);
      read_opt(s, "validation", c.split.validation);
      read_opt(s, "test", c.split.test);
    }
    read_opt(j, "seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) { return train_config_from_json(read_file(path)); }

Json to_json(const CovariateSchema& schema) {
  Json fields = Json::array();
  for (const auto& f : schema.fields()) {
    Json jf{{"name", f.name}, {"kind", f.kind == FieldKind::numerical ? "numerical" : "categorical"}};
    if (f.kind == FieldKind::numerical) {
      jf["mean"] = f.mean;
      jf["stddev"] = f.stddev;
    } else {
      jf["vocabulary"] = f.vocabulary;
      jf["mode"] = f.mode;
    }
    fields.push_back(std::move(jf));
  }
  return Json{{"fields", fields}};
}

CovariateSchema schema_from_json(const Json& j) {
  std::vector<FieldDescriptor> fields;
  for (const auto& jf : j.at("fields")) {
    FieldDescriptor f;
    f.name = jf.at("name").get<std::string>();
    const auto kind = jf.at("kind").get<std::string>();
    if (kind == "numerical") {
      f.kind = FieldKind::numerical;
      f.mean = jf.at("mean").get<double>();
      f.stddev = jf.at("stddev").get<double>();
    } else if (kind == "categorical") {
      f.kind = FieldKind::categorical;
      f.vocabulary = jf.at("vocabulary").get<std::vector<std::string>>();
      f.mode = jf.at("mode").get<std::size_t>();
    } else {
      throw DataError("unknown field kind '" + kind + "'");
    }
    fields.push_back(std::move(f));
  }
  return CovariateSchema(std::move(fields));
}

Json to_json(const PropensityModel& p) {
  return Json{{"weights", p.weights()}, {"offsets", p.offsets()}, {"floor", p.floor()}, {"normalize", p.normalize()}};
}

PropensityModel propensity_from_json(const Json& j) {
  return PropensityModel(j.at("weights").get<std::vector<std::vector<double>>>(),
                         j.at("offsets").get<std::vector<double>>(), j.at("floor").get<double>(),
                         j.at("normalize").get<bool>());
}

Json to_json(const TrainHistory& h) {
  Json epochs = Json::array();
  for (std::size_t e = 0; e < h.epochs.size(); ++e) {
    const auto& r = h.epochs[e];
    epochs.push_back(Json{{"epoch", e},
                          {"train_total", r.train.total},
                          {"train_survival", r.train.survival},
                          {"train_mp", r.train.mp},
                          {"train_ls", r.train.ls},
                          {"gamma_mp", r.train.gamma_mp},
                          {"gamma_ls", r.train.gamma_ls},
                          {"validation", r.validation},
                          {"improved", r.improved}});
  }
  return Json{{"initial_validation", h.initial_validation},
              {"best_epoch", h.best_epoch},
              {"best_validation", h.best_validation},
              {"stopped_early", h.stopped_early},
              {"epochs", epochs}};
}

Json to_json(const MetricsReport& r) {
  Json events = Json::array();
  for (const auto& e : r.events) {
    Json hs = Json::array();
    for (const auto& h : e.horizons) {
      hs.push_back(Json{{"quantile", h.quantile},
                        {"horizon", h.horizon},
                        {"ctd", h.ctd},
                        {"comparable_pairs", h.comparable_pairs}});
    }
    events.push_back(Json{{"event", e.event}, {"horizons", hs}});
  }
  return Json{{"metric", "ctd_ipcw"}, {"events", events}};
}

Json to_json(const AttentionExport& a) {
  Json layers = Json::array();
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    Json heads = Json::array();
    for (std::size_t h = 0; h < a.layers[l].size(); ++h) {
      const Tensor& m = a.layers[l][h];
      Json rows = Json::array();
      for (std::size_t r = 0; r < m.rows(); ++r) {
        std::vector<double> row(m.values().begin() + static_cast<std::ptrdiff_t>(r * m.cols()),
                                m.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * m.cols()));
        rows.push_back(row);
      }
      heads.push_back(Json{{"head", h}, {"weights", rows}});
    }
    layers.push_back(Json{{"layer", l}, {"heads", heads}});
  }
  return Json{{"labels", a.labels}, {"layers", layers}};
}

Json to_json(const Checkpoint& c) {
  Json params = Json::array();
  const auto& store = c.model.parameters();
  for (std::size_t i = 0; i < store.size(); ++i) {
    params.push_back(Json{{"name", store[i].name}, {"shape", store[i].value.shape()}, {"values", store[i].value.data()}});
  }
  Json data{{"duration_column", c.data.declaration.duration_column},
            {"event_column", c.data.declaration.event_column},
            {"ignore", c.data.declaration.ignore},
            {"split_seed", c.data.split_seed},
            {"fractions", {c.data.fractions.train, c.data.fractions.validation, c.data.fractions.test}}};
  if (c.data.declaration.categorical) data["categorical"] = *c.data.declaration.categorical;
  return Json{{"format", kCheckpointFormat},
              {"config", to_json(c.config)},
              {"num_events", c.model.num_events()},
              {"schema", to_json(c.model.schema())},
              {"grid", c.model.grid().cuts()},
              {"data", data},
              {"propensity", c.propensity ? to_json(*c.propensity) : Json()},
              {"parameters", params}};
}

Checkpoint checkpoint_from_json(const Json& j) {
  if (!j.contains("format") || j.at("format") != kCheckpointFormat) {
    throw DataError(std::string("not a checkpoint (expected format tag ") + kCheckpointFormat + ")");
  }
  try {
    Checkpoint c;
    c.config = train_config_from_json(j.at("config"));
    CovariateSchema schema = schema_from_json(j.at("schema"));
    TimeGrid grid(j.at("grid").get<std::vector<double>>());
    c.model = SurvTraceModel(std::move(schema), std::move(grid), j.at("num_events").get<int>(), c.config.model,
                             c.config.seed);
    auto& store = c.model.parameters();
    std::size_t seen = 0;
    for (const auto& jp : j.at("parameters")) {
      Parameter& p = store.at(jp.at("name").get<std::string>());
      Tensor value(jp.at("shape").get<Shape>(), jp.at("values").get<std::vector<double>>());
      require_same_shape(p.value, value, p.name.c_str());
      p.value = std::move(value);
      ++seen;
    }
    if (seen != store.size()) throw DataError("checkpoint is missing parameters");
    if (!j.at("propensity").is_null()) c.propensity = propensity_from_json(j.at("propensity"));
    const auto& d = j.at("data");
    c.data.declaration.duration_column = d.at("duration_column").get<std::string>();
    c.data.declaration.event_column = d.at("event_column").get<std::string>();
    c.data.declaration.ignore = d.at("ignore").get<std::vector<std::string>>();
    if (d.contains("categorical")) c.data.declaration.categorical = d.at("categorical").get<std::vector<std::string>>();
    c.data.split_seed = d.at("split_seed").get<std::uint64_t>();
    const auto fr = d.at("fractions").get<std::vector<double>>();
    if (fr.size() != 3) throw DataError("checkpoint split fractions must have three entries");
    c.data.fractions = {fr[0], fr[1], fr[2]};
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ContractError& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) { write_json(to_json(c), path); }

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_file(path)); }

}  // namespace survtrace
