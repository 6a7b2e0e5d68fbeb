#include "cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "survtrace/data.hpp"
#include "survtrace/errors.hpp"
#include "survtrace/eval.hpp"
#include "survtrace/serialization.hpp"
#include "survtrace/text.hpp"
#include "survtrace/trainer.hpp"

namespace survtrace::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  // shared
  std::string data;
  std::string config;
  std::string checkpoint;
  std::string out;
  // Unset means "duration"/"event" for train and the checkpoint's names otherwise.
  std::optional<std::string> duration_col;
  std::optional<std::string> event_col;
  std::optional<std::uint64_t> seed;
  std::string quantiles = "0.25,0.5,0.75";
  std::optional<std::string> categorical;
  std::string ignore;
  std::string fold;

  // synth
  std::size_t n = 1000;
  int events = 2;
  std::size_t numerical = 4;
  std::size_t categorical_fields = 0;
  double censoring = 0.3;

  // train
  std::optional<std::size_t> epochs;

  // predict / attention
  std::string times;
  std::size_t row = 0;
};

fs::path sibling(const fs::path& path, const std::string& suffix) {
  fs::path p = path;
  return p.replace_extension(suffix);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

SchemaDeclaration declaration(const Options& o) {
  SchemaDeclaration d;
  if (o.duration_col) d.duration_column = *o.duration_col;
  if (o.event_col) d.event_column = *o.event_col;
  if (o.categorical) d.categorical = text::split_list(*o.categorical);
  if (!o.ignore.empty()) d.ignore = text::split_list(o.ignore);
  return d;
}

Dataset make_dataset(const CovariateSchema& schema, const RawTable& table, std::span<const std::size_t> rows,
                     int num_events) {
  Dataset d;
  d.schema = schema;
  d.num_events = num_events;
  d.records = transform(schema, table, rows);
  return d;
}

int cmd_synth(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw ContractError("synth needs --out");
  SyntheticSpec spec =
      SyntheticSpec::standard(o.n, o.events, o.seed.value_or(0), o.numerical, o.categorical_fields);
  spec.censoring_rate = o.censoring;
  const SyntheticData data = synthesize(spec);
  const fs::path csv = o.out;
  const fs::path sidecar = sibling(csv, ".propensity.csv");
  write_synthetic_csv(data, csv, sidecar);
  out << "wrote " << csv.string() << " (" << data.size() << " records)\n";
  out << "wrote " << sidecar.string() << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  if (o.data.empty() || o.out.empty()) throw ContractError("train needs --data and --out");
  TrainConfig config = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
  if (o.seed) config.seed = *o.seed;
  if (o.epochs) config.max_epochs = *o.epochs;
  config.validate();

  const SchemaDeclaration decl = declaration(o);
  const RawTable table = read_csv(o.data, decl);
  const SplitIndices idx = split(table.rows.size(), config.split, config.seed);
  const CovariateSchema schema = fit_schema(table, idx.train);
  const Dataset train_set = make_dataset(schema, table, idx.train, table.num_events);
  const Dataset validation_set = make_dataset(schema, table, idx.validation, table.num_events);

  out << "records " << table.rows.size() << " (train " << idx.train.size() << ", validation "
      << idx.validation.size() << ", test " << idx.test.size() << "), events " << table.num_events << ", fields "
      << schema.categorical_count() << " categorical + " << schema.numerical_count() << " numerical\n";

  TrainResult result = train(config, train_set, validation_set, [&](std::size_t epoch, const EpochRecord& r) {
    out << "epoch " << epoch << " train " << text::format_number(r.train.total) << " validation "
        << text::format_number(r.validation) << (r.improved ? " *" : "") << "\n";
  });

  Checkpoint ckpt{config, std::move(result.model), std::move(result.propensity),
                  DataProvenance{decl, config.seed, config.split}};
  save_checkpoint(ckpt, o.out);
  const fs::path history = sibling(o.out, ".history.json");
  write_json(to_json(result.history), history);
  out << "best epoch " << result.history.best_epoch << " validation "
      << text::format_number(result.history.best_validation) << "\n";
  out << "wrote " << o.out << "\n";
  out << "wrote " << history.string() << "\n";
  return 0;
}

// Records of the requested fold plus the reference set used for the censoring
// estimate and the horizons (the training fold, or the whole file for "all").
struct EvalData {
  std::vector<SurvivalRecord> records;
  std::vector<SurvivalRecord> reference;
};

EvalData select_fold(const Checkpoint& ckpt, const RawTable& table, const std::string& fold) {
  EvalData d;
  const CovariateSchema& schema = ckpt.model.schema();
  if (fold == "all") {
    d.records = transform(schema, table);
    d.reference = d.records;
    return d;
  }
  const SplitIndices idx = split(table.rows.size(), ckpt.data.fractions, ckpt.data.split_seed);
  if (fold == "test") {
    d.records = transform(schema, table, idx.test);
  } else if (fold == "validation") {
    d.records = transform(schema, table, idx.validation);
  } else if (fold == "train") {
    d.records = transform(schema, table, idx.train);
  } else {
    throw ContractError("unknown fold '" + fold + "' (expected train, validation, test or all)");
  }
  d.reference = transform(schema, table, idx.train);
  return d;
}

RawTable read_for_checkpoint(const Options& o, const Checkpoint& ckpt) {
  SchemaDeclaration decl = ckpt.data.declaration;
  if (o.duration_col) decl.duration_column = *o.duration_col;
  if (o.event_col) decl.event_column = *o.event_col;
  const RawTable table = read_csv(o.data, decl);
  if (table.num_events > ckpt.model.num_events()) {
    throw DataError("data has event type " + std::to_string(table.num_events) + " but the model knows " +
                    std::to_string(ckpt.model.num_events()));
  }
  return table;
}

int cmd_eval(const Options& o, std::ostream& out) {
  if (o.data.empty() || o.checkpoint.empty()) throw ContractError("eval needs --data and --checkpoint");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const RawTable table = read_for_checkpoint(o, ckpt);
  const EvalData d = select_fold(ckpt, table, o.fold.empty() ? "test" : o.fold);
  const auto quantiles = text::parse_number_list(o.quantiles);
  for (double q : quantiles) {
    if (!(q >= 0.0 && q <= 1.0)) throw ContractError("quantiles must lie in [0, 1]");
  }
  const MetricsReport report =
      evaluate(ckpt.model, d.records, km_censoring(d.reference), quantiles, event_times(d.reference));
  for (const auto& e : report.events) {
    for (const auto& h : e.horizons) {
      out << "event " << e.event << " q " << text::format_number(h.quantile) << " horizon "
          << text::format_number(h.horizon) << " ctd " << text::format_number(h.ctd) << "\n";
    }
  }
  if (!o.out.empty()) {
    write_json(to_json(report), o.out);
    out << "wrote " << o.out << "\n";
  }
  return 0;
}

int cmd_predict(const Options& o, std::ostream& out) {
  if (o.data.empty() || o.checkpoint.empty()) throw ContractError("predict needs --data and --checkpoint");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const RawTable table = read_for_checkpoint(o, ckpt);
  const EvalData d = select_fold(ckpt, table, o.fold.empty() ? "all" : o.fold);
  std::vector<double> times;
  if (o.times.empty()) {
    times.push_back(0.0);
    for (double c : ckpt.model.grid().cuts()) times.push_back(c);
  } else {
    times = text::parse_number_list(o.times);
  }
  for (double t : times) {
    if (t < 0.0) throw ContractError("prediction times must be nonnegative");
  }
  const CurvePrediction curves = predict(ckpt.model, d.records, times);

  std::ofstream file;
  std::ostream* sink = &out;
  if (!o.out.empty()) {
    file = open_out(o.out);
    sink = &file;
  }
  *sink << "record,time";
  for (int k = 1; k <= ckpt.model.num_events(); ++k) *sink << ",S_" << k;
  *sink << "\n";
  for (std::size_t r = 0; r < curves.values.size(); ++r) {
    for (std::size_t t = 0; t < times.size(); ++t) {
      *sink << r << ',' << text::format_number(times[t]);
      for (const auto& per_event : curves.values[r]) *sink << ',' << text::format_number(per_event[t]);
      *sink << "\n";
    }
  }
  if (!o.out.empty()) out << "wrote " << o.out << "\n";
  return 0;
}

int cmd_attention(const Options& o, std::ostream& out) {
  if (o.data.empty() || o.checkpoint.empty()) throw ContractError("attention needs --data and --checkpoint");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const RawTable table = read_for_checkpoint(o, ckpt);
  if (o.row >= table.rows.size()) {
    throw ContractError("--row " + std::to_string(o.row) + " is out of range (" + std::to_string(table.rows.size()) +
                        " records)");
  }
  const std::vector<std::size_t> rows{o.row};
  const auto records = transform(ckpt.model.schema(), table, rows);
  Json j = to_json(ckpt.model.export_attention(records.front()));
  j["row"] = o.row;
  if (o.out.empty()) {
    out << j.dump(2) << "\n";
  } else {
    write_json(j, o.out);
    out << "wrote " << o.out << "\n";
  }
  return 0;
}

void add_data_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--data", o.data, "Input CSV (header row; empty cell = missing)");
  cmd->add_option("--duration-col", o.duration_col, "Duration column name (default: duration)");
  cmd->add_option("--event-col", o.event_col, "Event column name, 0 = censored, 1..K = event type (default: event)");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Transformer survival analysis with competing events"};
  app.name("survtrace");
  app.require_subcommand(1, 1);

  auto* synth = app.add_subcommand("synth", "Generate synthetic competing-risks data");
  synth->add_option("--n", o.n, "Number of records")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--events", o.events, "Number of event types")->capture_default_str()->check(CLI::Range(1, 16));
  synth->add_option("--numerical", o.numerical, "Numerical covariates")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--categorical-fields", o.categorical_fields, "Three-level categorical covariates")
      ->capture_default_str();
  synth->add_option("--censoring", o.censoring, "Censoring probability")->capture_default_str()->check(CLI::Range(0.0, 0.99));
  synth->add_option("--seed", o.seed, "Random seed (default 0)");
  synth->add_option("--out", o.out, "Output CSV; the propensity sidecar goes next to it")->required();

  auto* train = app.add_subcommand("train", "Fit a model and write a checkpoint");
  add_data_flags(train, o);
  train->get_option("--data")->required();
  train->add_option("--config", o.config, "JSON training config (all fields optional)");
  train->add_option("--categorical", o.categorical, "Comma-separated categorical columns (default: inferred)");
  train->add_option("--ignore", o.ignore, "Comma-separated columns to skip");
  train->add_option("--seed", o.seed, "Overrides the config seed (init, shuffling and split)");
  train->add_option("--epochs", o.epochs, "Overrides max_epochs");
  train->add_option("--out", o.out, "Checkpoint path; history goes to <stem>.history.json")->required();

  auto* eval = app.add_subcommand("eval", "Time-dependent concordance at event-time quantiles");
  add_data_flags(eval, o);
  eval->get_option("--data")->required();
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint from train")->required();
  eval->add_option("--quantiles", o.quantiles, "Horizon quantiles of event times")->capture_default_str();
  eval->add_option("--fold", o.fold, "test (default), validation, train or all");
  eval->add_option("--out", o.out, "Metrics JSON");

  auto* pred = app.add_subcommand("predict", "Per-record survival curves as CSV");
  add_data_flags(pred, o);
  pred->get_option("--data")->required();
  pred->add_option("--checkpoint", o.checkpoint, "Checkpoint from train")->required();
  pred->add_option("--times", o.times, "Comma-separated times (default: 0 and the grid cuts)");
  pred->add_option("--fold", o.fold, "all (default), train, validation or test");
  pred->add_option("--out", o.out, "Output CSV (default: stdout)");

  auto* attn = app.add_subcommand("attention", "Labeled attention maps for one record");
  add_data_flags(attn, o);
  attn->get_option("--data")->required();
  attn->add_option("--checkpoint", o.checkpoint, "Checkpoint from train")->required();
  attn->add_option("--row", o.row, "0-based data row")->capture_default_str();
  attn->add_option("--out", o.out, "Output JSON (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    err << failing->help();
    return 2;
  }

  try {
    if (*synth) return cmd_synth(o, out);
    if (*train) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*pred) return cmd_predict(o, out);
    if (*attn) return cmd_attention(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace survtrace::cli
