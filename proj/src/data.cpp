#include "survtrace/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "survtrace/errors.hpp"
#include "survtrace/text.hpp"

namespace survtrace {

// ---- schema ----------------------------------------------------------------

std::size_t FieldDescriptor::lookup(const std::string& value) const {
  const auto it = std::find(vocabulary.begin(), vocabulary.end(), value);
  return it == vocabulary.end() ? unknown_index() : static_cast<std::size_t>(it - vocabulary.begin());
}

CovariateSchema::CovariateSchema(std::vector<FieldDescriptor> fields) : fields_(std::move(fields)) {
  if (fields_.empty()) throw DataError("schema needs at least one covariate");
  std::set<std::string> names;
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    const auto& f = fields_[i];
    if (!names.insert(f.name).second) throw DataError("duplicate covariate name: " + f.name);
    if (f.kind == FieldKind::categorical) {
      if (f.mode > f.vocabulary.size()) throw DataError("categorical mode out of range in " + f.name);
      categorical_.push_back(i);
    } else {
      if (!(f.stddev > 0.0) || !std::isfinite(f.mean)) {
        throw DataError("invalid standardization statistics in " + f.name);
      }
      numerical_.push_back(i);
    }
  }
}

std::vector<std::string> CovariateSchema::embedding_labels() const {
  std::vector<std::string> out;
  for (std::size_t i : categorical_) out.push_back(fields_[i].name);
  for (std::size_t i : numerical_) out.push_back(fields_[i].name);
  return out;
}

std::size_t CovariateSchema::flat_width() const {
  std::size_t w = numerical_.size();
  for (std::size_t i : categorical_) w += fields_[i].cardinality() + 1;
  return w;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{schema, {}, num_events};
  out.records.reserve(indices.size());
  for (std::size_t i : indices) out.records.push_back(records.at(i));
  return out;
}

void validate_record(const CovariateSchema& schema, const SurvivalRecord& record, int num_events) {
  if (record.numerical.size() != schema.numerical_count() ||
      record.categorical.size() != schema.categorical_count()) {
    throw DataError("record has " + std::to_string(record.numerical.size()) + " numerical and " +
                    std::to_string(record.categorical.size()) + " categorical values; schema expects " +
                    std::to_string(schema.numerical_count()) + " and " +
                    std::to_string(schema.categorical_count()));
  }
  for (std::size_t c = 0; c < record.categorical.size(); ++c) {
    if (record.categorical[c] > schema.categorical(c).unknown_index()) {
      throw DataError("categorical index out of range for field " + schema.categorical(c).name);
    }
  }
  if (!(record.duration >= 0.0) || !std::isfinite(record.duration)) {
    throw DataError("duration must be a finite nonnegative number");
  }
  if (record.event < 0 || record.event > num_events) {
    throw DataError("event label " + std::to_string(record.event) + " outside 0.." + std::to_string(num_events));
  }
}

std::vector<double> flatten_covariates(const CovariateSchema& schema, const SurvivalRecord& record) {
  std::vector<double> out(record.numerical.begin(), record.numerical.end());
  for (std::size_t c = 0; c < schema.categorical_count(); ++c) {
    const std::size_t slots = schema.categorical(c).cardinality() + 1;
    const std::size_t base = out.size();
    out.resize(base + slots, 0.0);
    out[base + record.categorical[c]] = 1.0;
  }
  return out;
}

// ---- CSV ---------------------------------------------------------------------

namespace {

bool is_integer_valued(double v) { return std::floor(v) == v; }

FieldKind infer_kind(const std::vector<RawRow>& rows, std::size_t col, std::size_t max_levels) {
  std::set<double> distinct;
  bool all_integer = true;
  for (const auto& r : rows) {
    const auto& cell = r.cells[col];
    if (text::trim(cell).empty()) continue;
    auto v = text::parse_number(cell);
    if (!v) return FieldKind::categorical;
    all_integer = all_integer && is_integer_valued(*v);
    if (distinct.size() <= max_levels) distinct.insert(*v);
  }
  if (all_integer && !distinct.empty() && distinct.size() <= max_levels) return FieldKind::categorical;
  return FieldKind::numerical;
}

}  // namespace

RawTable read_csv(std::istream& in, const SchemaDeclaration& decl) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV: missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = text::split_csv_line(line);
  for (auto& h : header) h = text::trim(h);

  auto find_col = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t dur_col = find_col(decl.duration_column);
  const std::size_t ev_col = find_col(decl.event_column);
  for (const auto& ig : decl.ignore) find_col(ig);

  RawTable table;
  std::vector<std::size_t> cov_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == dur_col || c == ev_col) continue;
    if (std::find(decl.ignore.begin(), decl.ignore.end(), header[c]) != decl.ignore.end()) continue;
    cov_cols.push_back(c);
    table.names.push_back(header[c]);
  }
  if (cov_cols.empty()) throw DataError("CSV has no covariate columns");
  if (decl.categorical) {
    for (const auto& name : *decl.categorical) {
      if (std::find(table.names.begin(), table.names.end(), name) == table.names.end()) {
        throw DataError("missing column '" + name + "'");
      }
    }
  }

  std::size_t line_no = 1;
  int max_event = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    auto cells = text::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(cells.size()), line_no);
    }
    RawRow row;
    row.line = line_no;
    auto dur = text::parse_number(cells[dur_col]);
    if (!dur || *dur < 0.0) {
      throw DataError("duration '" + cells[dur_col] + "' is not a nonnegative number", line_no);
    }
    auto ev = text::parse_number(cells[ev_col]);
    if (!ev || *ev < 0.0 || !is_integer_valued(*ev)) {
      throw DataError("event '" + cells[ev_col] + "' is not a nonnegative integer", line_no);
    }
    row.duration = *dur;
    row.event = static_cast<int>(*ev);
    max_event = std::max(max_event, row.event);
    for (std::size_t c : cov_cols) row.cells.push_back(text::trim(cells[c]));
    table.rows.push_back(std::move(row));
  }
  if (table.rows.empty()) throw DataError("CSV has a header but no data rows");
  table.num_events = std::max(1, max_event);

  for (std::size_t c = 0; c < table.names.size(); ++c) {
    FieldKind kind;
    if (decl.categorical) {
      const auto& cats = *decl.categorical;
      kind = std::find(cats.begin(), cats.end(), table.names[c]) != cats.end() ? FieldKind::categorical
                                                                                : FieldKind::numerical;
    } else {
      kind = infer_kind(table.rows, c, decl.max_inferred_levels);
    }
    table.kinds.push_back(kind);
    if (kind == FieldKind::numerical) {
      for (const auto& r : table.rows) {
        if (!r.cells[c].empty() && !text::parse_number(r.cells[c])) {
          throw DataError("non-numeric value '" + r.cells[c] + "' in numerical column '" + table.names[c] + "'",
                          r.line);
        }
      }
    }
  }
  return table;
}

RawTable read_csv(const std::filesystem::path& path, const SchemaDeclaration& decl) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_csv(in, decl);
}

CovariateSchema fit_schema(const RawTable& table, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DataError("cannot fit a schema on zero rows");
  std::vector<FieldDescriptor> fields;
  for (std::size_t c = 0; c < table.names.size(); ++c) {
    FieldDescriptor f;
    f.name = table.names[c];
    f.kind = table.kinds[c];
    if (f.kind == FieldKind::numerical) {
      double s = 0.0, ss = 0.0;
      std::size_t n = 0;
      for (std::size_t r : rows) {
        if (auto v = text::parse_number(table.rows[r].cells[c])) {
          s += *v;
          ++n;
        }
      }
      f.mean = n > 0 ? s / static_cast<double>(n) : 0.0;
      for (std::size_t r : rows) {
        if (auto v = text::parse_number(table.rows[r].cells[c])) ss += (*v - f.mean) * (*v - f.mean);
      }
      const double sd = n > 0 ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
      f.stddev = sd > 1e-12 ? sd : 1.0;
    } else {
      std::map<std::string, std::size_t> counts;
      for (std::size_t r : rows) {
        const auto& cell = table.rows[r].cells[c];
        if (!cell.empty()) ++counts[cell];
      }
      std::size_t best = 0;
      for (const auto& [value, count] : counts) {
        if (count > best) {
          best = count;
          f.mode = f.vocabulary.size();
        }
        f.vocabulary.push_back(value);
      }
      // A column that is entirely missing falls back to the unknown slot.
      if (f.vocabulary.empty()) f.mode = 0;
    }
    fields.push_back(std::move(f));
  }
  return CovariateSchema(std::move(fields));
}

CovariateSchema fit_schema(const RawTable& table) {
  std::vector<std::size_t> all(table.rows.size());
  std::iota(all.begin(), all.end(), 0);
  return fit_schema(table, all);
}

std::vector<SurvivalRecord> transform(const CovariateSchema& schema, const RawTable& table,
                                      std::span<const std::size_t> rows) {
  std::vector<std::size_t> column(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& name = schema.fields()[i].name;
    const auto it = std::find(table.names.begin(), table.names.end(), name);
    if (it == table.names.end()) throw DataError("missing column '" + name + "'");
    column[i] = static_cast<std::size_t>(it - table.names.begin());
  }
  std::vector<SurvivalRecord> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) {
    const RawRow& raw = table.rows.at(r);
    SurvivalRecord rec;
    rec.duration = raw.duration;
    rec.event = raw.event;
    for (std::size_t i : schema.categorical_fields()) {
      const auto& f = schema.fields()[i];
      const auto& cell = raw.cells[column[i]];
      rec.categorical.push_back(cell.empty() ? f.mode : f.lookup(cell));
    }
    for (std::size_t i : schema.numerical_fields()) {
      const auto& f = schema.fields()[i];
      const auto& cell = raw.cells[column[i]];
      double v = f.mean;
      if (!cell.empty()) {
        auto parsed = text::parse_number(cell);
        if (!parsed) {
          throw DataError("non-numeric value '" + cell + "' in numerical column '" + f.name + "'", raw.line);
        }
        v = *parsed;
      }
      rec.numerical.push_back(f.standardize(v));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<SurvivalRecord> transform(const CovariateSchema& schema, const RawTable& table) {
  std::vector<std::size_t> all(table.rows.size());
  std::iota(all.begin(), all.end(), 0);
  return transform(schema, table, all);
}

Dataset load_csv(const std::filesystem::path& path, const SchemaDeclaration& decl) {
  RawTable table = read_csv(path, decl);
  Dataset ds;
  ds.schema = fit_schema(table);
  ds.records = transform(ds.schema, table);
  ds.num_events = table.num_events;
  return ds;
}

// ---- time grid ---------------------------------------------------------------

GridScheme parse_grid_scheme(const std::string& name) {
  if (name == "quantile") return GridScheme::quantile;
  if (name == "uniform") return GridScheme::uniform;
  throw ContractError("unknown grid scheme '" + name + "' (expected quantile or uniform)");
}

std::string to_string(GridScheme scheme) { return scheme == GridScheme::quantile ? "quantile" : "uniform"; }

TimeGrid::TimeGrid(std::vector<double> cuts) : cuts_(std::move(cuts)) {
  if (cuts_.empty()) throw ContractError("time grid needs at least one cut point");
  double prev = 0.0;
  for (double c : cuts_) {
    if (!std::isfinite(c) || !(c > prev)) throw ContractError("time grid cut points must be strictly increasing and > 0");
    prev = c;
  }
}

TimeGrid::Position TimeGrid::locate(double t) const {
  if (!(t >= 0.0)) throw ContractError("time must be nonnegative, got " + text::format_number(t));
  Position p;
  if (t > cuts_.back()) {
    p.bin = cuts_.size() - 1;
    p.proportion = 1.0;
    p.clamped = true;
    return p;
  }
  p.bin = static_cast<std::size_t>(std::lower_bound(cuts_.begin(), cuts_.end(), t) - cuts_.begin());
  const double lo = lower(p.bin);
  p.proportion = (t - lo) / (cuts_[p.bin] - lo);
  return p;
}

KappaResult kappa(const TimeGrid& grid, double t) {
  const auto p = grid.locate(t);
  return {p.bin + 1, p.clamped};
}

double rho(const TimeGrid& grid, double t) { return grid.locate(t).proportion; }

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ContractError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

TimeGrid build_time_grid(std::span<const double> durations, std::size_t m, GridScheme scheme) {
  if (m < 2) throw ContractError("time grid needs m >= 2");
  if (durations.empty()) throw ContractError("time grid needs at least one duration");
  const auto [mn, mx] = std::minmax_element(durations.begin(), durations.end());
  if (*mn == *mx) throw DataError("degenerate time grid: all durations equal " + text::format_number(*mn));
  std::vector<double> cuts;
  if (scheme == GridScheme::uniform) {
    for (std::size_t j = 1; j <= m; ++j) cuts.push_back(*mx * static_cast<double>(j) / static_cast<double>(m));
    cuts.back() = *mx;
  } else {
    std::vector<double> sorted(durations.begin(), durations.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t j = 1; j <= m; ++j) {
      const double c = j == m ? *mx : empirical_quantile(sorted, static_cast<double>(j) / static_cast<double>(m));
      if (c > 0.0 && (cuts.empty() || c > cuts.back())) cuts.push_back(c);
    }
  }
  return TimeGrid(std::move(cuts));
}

// ---- splits ------------------------------------------------------------------

SplitIndices split(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.validation < 0 || f.test < 0 || std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) {
    throw ContractError("split fractions must be nonnegative and sum to 1");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(f.validation * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw ContractError("split of " + std::to_string(n) + " records leaves an empty partition");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                        order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return out;
}

// ---- synthetic data ----------------------------------------------------------

SyntheticSpec SyntheticSpec::standard(std::size_t n, int events, std::uint64_t seed, std::size_t numerical,
                                      std::size_t categorical) {
  if (numerical == 0) throw ContractError("synthetic data needs at least one numerical covariate");
  SyntheticSpec s;
  s.n = n;
  s.events = events;
  s.seed = seed;
  s.numerical = numerical;
  s.categorical = categorical;
  const std::size_t p = numerical;
  for (int k = 0; k < events; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    std::vector<double> beta(p + categorical, 0.0);
    beta[0] = 1.0;  // shared risk factor
    beta[(1 + kk) % p] += 1.5;
    for (std::size_t c = 0; c < categorical; ++c) beta[p + c] = 0.5;
    s.risk.push_back(beta);
    // Event logits spread along the last covariate, +0.8 for event 1 down to
    // -0.8 for event K, so assignment stays off the risk covariates when p > K.
    std::vector<double> a(p, 0.0);
    if (events > 1) a[p - 1] = 0.8 * static_cast<double>(events - 1 - 2 * k) / static_cast<double>(events - 1);
    s.assignment.push_back(a);
  }
  return s;
}

SyntheticData synthesize(const SyntheticSpec& spec) {
  if (spec.events < 1) throw ContractError("synthetic spec needs at least one event");
  if (!(spec.censoring_rate >= 0.0 && spec.censoring_rate < 1.0)) {
    throw ContractError("censoring rate must lie in [0, 1)");
  }
  const auto K = static_cast<std::size_t>(spec.events);
  const std::size_t p = spec.numerical, q = spec.categorical;
  if (p + q == 0) throw ContractError("synthetic spec needs at least one covariate");
  auto check = [](const std::vector<std::vector<double>>& m, std::size_t rows, std::size_t cols, const char* what) {
    if (m.size() != rows) throw ContractError(std::string(what) + ": wrong number of events");
    for (const auto& r : m) {
      if (r.size() != cols) throw ContractError(std::string(what) + ": wrong coefficient count");
    }
  };
  check(spec.risk, K, p + q, "risk coefficients");
  check(spec.assignment, K, p, "assignment coefficients");

  SyntheticData d;
  d.num_events = spec.events;
  for (std::size_t j = 0; j < p; ++j) d.numerical_names.push_back("x" + std::to_string(j + 1));
  for (std::size_t j = 0; j < q; ++j) d.categorical_names.push_back("c" + std::to_string(j + 1));

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> level(0, 2);

  for (std::size_t i = 0; i < spec.n; ++i) {
    std::vector<double> x(p);
    for (auto& v : x) v = normal(rng);
    std::vector<std::size_t> c(q);
    for (auto& v : c) v = level(rng);

    std::vector<double> latent(K);
    for (std::size_t k = 0; k < K; ++k) {
      double eta = 0.0;
      for (std::size_t j = 0; j < p; ++j) eta += spec.risk[k][j] * x[j];
      for (std::size_t j = 0; j < q; ++j) eta += spec.risk[k][p + j] * (static_cast<double>(c[j]) - 1.0);
      const double rate = spec.base_rate * std::exp(eta);
      latent[k] = -std::log1p(-unit(rng)) / rate;
    }

    std::vector<double> logits(K);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < p; ++j) logits[k] += spec.assignment[k][j] * x[j];
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> prob(K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += prob[k] = std::exp(logits[k] - mx);
    for (auto& v : prob) v /= z;

    const double u = unit(rng);
    std::size_t label = K - 1;
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      acc += prob[k];
      if (u < acc) {
        label = k;
        break;
      }
    }
    double duration = latent[label];
    int event = static_cast<int>(label) + 1;
    const double cu = unit(rng);
    const double scale = unit(rng);
    if (cu < spec.censoring_rate) {
      event = 0;
      duration *= scale;
    }
    d.numerical.push_back(std::move(x));
    d.categorical.push_back(std::move(c));
    d.durations.push_back(duration);
    d.events.push_back(event);
    d.propensities.push_back(std::move(prob));
  }
  return d;
}

Dataset to_dataset(const SyntheticData& data) {
  std::vector<FieldDescriptor> fields;
  for (const auto& name : data.numerical_names) {
    FieldDescriptor f;
    f.name = name;
    fields.push_back(std::move(f));
  }
  for (const auto& name : data.categorical_names) {
    FieldDescriptor f;
    f.name = name;
    f.kind = FieldKind::categorical;
    f.vocabulary = {"L0", "L1", "L2"};
    fields.push_back(std::move(f));
  }
  Dataset ds;
  ds.schema = CovariateSchema(std::move(fields));
  ds.num_events = data.num_events;
  for (std::size_t i = 0; i < data.size(); ++i) {
    SurvivalRecord r;
    r.numerical = data.numerical[i];
    r.categorical = data.categorical[i];
    r.duration = data.durations[i];
    r.event = data.events[i];
    ds.records.push_back(std::move(r));
  }
  return ds;
}

void write_synthetic_csv(const SyntheticData& data, const std::filesystem::path& csv,
                         const std::filesystem::path& propensity_sidecar) {
  std::ofstream out(csv);
  if (!out) throw DataError("cannot write " + csv.string());
  for (const auto& n : data.numerical_names) out << n << ',';
  for (const auto& n : data.categorical_names) out << n << ',';
  out << "duration,event\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.numerical[i]) out << text::format_number(v) << ',';
    for (std::size_t v : data.categorical[i]) out << 'L' << v << ',';
    out << text::format_number(data.durations[i]) << ',' << data.events[i] << '\n';
  }
  std::ofstream side(propensity_sidecar);
  if (!side) throw DataError("cannot write " + propensity_sidecar.string());
  for (int k = 1; k <= data.num_events; ++k) side << (k > 1 ? "," : "") << "propensity_" << k;
  side << '\n';
  for (const auto& row : data.propensities) {
    for (std::size_t k = 0; k < row.size(); ++k) side << (k > 0 ? "," : "") << text::format_number(row[k]);
    side << '\n';
  }
}

}  // namespace survtrace
