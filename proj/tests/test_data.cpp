#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "survtrace/data.hpp"
#include "survtrace/errors.hpp"

using namespace survtrace;

namespace {

RawTable read_text(const std::string& csv, const SchemaDeclaration& decl = {}) {
  std::istringstream in(csv);
  return read_csv(in, decl);
}

std::vector<double> range_1_to(int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 1.0);
  return v;
}

// Type-7 quantile computed directly from its definition.
double quantile_oracle(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

TEST_CASE("METABRIC-format file gives four categorical and five numerical fields") {
  const Dataset d = load_csv(std::filesystem::path(SURVTRACE_FIXTURES) / "metabric_format.csv", {});
  CHECK(d.schema.size() == 9);
  CHECK(d.schema.categorical_count() == 4);
  CHECK(d.schema.numerical_count() == 5);
  CHECK(d.size() == 60);
  CHECK(d.num_events == 1);
  const auto labels = d.schema.embedding_labels();
  CHECK(labels == std::vector<std::string>{"x4", "x5", "x6", "x7", "x0", "x1", "x2", "x3", "x8"});
  for (const auto& r : d.records) validate_record(d.schema, r, d.num_events);
}

TEST_CASE("two-point column standardizes to -1 and +1") {
  const RawTable t = read_text("a,duration,event\n1.5,5,1\n3.5,6,0\n");
  const CovariateSchema s = fit_schema(t);
  const auto recs = transform(s, t);
  CHECK(recs[0].numerical[0] == doctest::Approx(-1.0));
  CHECK(recs[1].numerical[0] == doctest::Approx(1.0));
}

TEST_CASE("categorical column is mode-imputed with a dense vocabulary") {
  SchemaDeclaration decl;
  decl.categorical = std::vector<std::string>{"g"};
  const RawTable t = read_text("g,duration,event\na,1,1\nb,2,0\na,3,1\n,4,0\n", decl);
  const CovariateSchema s = fit_schema(t);
  const FieldDescriptor& g = s.categorical(0);
  CHECK(g.vocabulary == std::vector<std::string>{"a", "b"});
  CHECK(g.mode == 0);
  const auto recs = transform(s, t);
  CHECK(recs[3].categorical[0] == 0);
  CHECK(recs[1].categorical[0] == 1);
}

TEST_CASE("unseen categories map to the reserved unknown index") {
  SchemaDeclaration decl;
  decl.categorical = std::vector<std::string>{"g"};
  const RawTable train = read_text("g,duration,event\na,1,1\nb,2,0\n", decl);
  const RawTable test = read_text("g,duration,event\nz,1,1\n", decl);
  const CovariateSchema s = fit_schema(train);
  const auto recs = transform(s, test);
  CHECK(recs[0].categorical[0] == s.categorical(0).unknown_index());
  CHECK(s.categorical(0).unknown_index() == 2);
}

TEST_CASE("missing numerical values are imputed with the training mean") {
  const RawTable t = read_text("a,duration,event\n2.5,1,1\n3.5,2,0\n,3,1\n");
  const std::vector<std::size_t> train{0, 1};
  const CovariateSchema s = fit_schema(t, train);
  CHECK(s.numerical(0).mean == 3.0);
  const auto recs = transform(s, t);
  CHECK(recs[2].numerical[0] == 0.0);
}

TEST_CASE("preprocessing never changes labels") {
  const Dataset d = load_csv(std::filesystem::path(SURVTRACE_FIXTURES) / "metabric_format.csv", {});
  const RawTable t = read_csv(std::filesystem::path(SURVTRACE_FIXTURES) / "metabric_format.csv", {});
  const std::vector<std::size_t> train{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto recs = transform(fit_schema(t, train), t);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].duration == t.rows[i].duration);
    CHECK(recs[i].event == t.rows[i].event);
    CHECK(d.records[i].duration == t.rows[i].duration);
  }
}

TEST_CASE("ingestion errors") {
  SUBCASE("missing column is named") {
    try {
      read_text("a,time,event\n1,2,1\n");
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("'duration'") != std::string::npos);
    }
  }
  SUBCASE("non-numeric value reports its line") {
    SchemaDeclaration decl;
    decl.categorical = std::vector<std::string>{};
    try {
      read_text("a,duration,event\n1.5,2,1\n2.5,3,0\noops,4,1\n", decl);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(e.line() == 4);
      CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }
  }
  SUBCASE("bad duration and event") {
    CHECK_THROWS_AS(read_text("a,duration,event\n1,-2,1\n"), DataError);
    CHECK_THROWS_AS(read_text("a,duration,event\n1,2,1.5\n"), DataError);
    CHECK_THROWS_AS(read_text("a,duration,event\n1,2\n"), DataError);
  }
  SUBCASE("record validation") {
    const CovariateSchema s = fit_schema(read_text("a,duration,event\n1,2,1\n3,4,0\n"));
    SurvivalRecord r{{0.0}, {}, 1.0, 3};
    CHECK_THROWS_AS(validate_record(s, r, 2), DataError);
    r.event = 1;
    r.duration = -1;
    CHECK_THROWS_AS(validate_record(s, r, 2), DataError);
    r.duration = 1;
    r.numerical.push_back(1.0);
    CHECK_THROWS_AS(validate_record(s, r, 2), DataError);
  }
}

TEST_CASE("competing events set the event count") {
  const RawTable t = read_text("a,duration,event\n1,2,1\n2,3,2\n3,4,0\n");
  CHECK(t.num_events == 2);
}

TEST_CASE("flattened covariates: numerical then one-hot") {
  SchemaDeclaration decl;
  decl.categorical = std::vector<std::string>{"g"};
  const RawTable t = read_text("g,a,duration,event\nx,1,1,1\ny,3,2,0\n", decl);
  const CovariateSchema s = fit_schema(t);
  CHECK(s.flat_width() == 1 + 3);
  const auto recs = transform(s, t);
  CHECK(flatten_covariates(s, recs[1]) == std::vector<double>{1.0, 0.0, 1.0, 0.0});
}

TEST_CASE("time grid examples") {
  const auto d = range_1_to(100);
  CHECK(build_time_grid(d, 4, GridScheme::uniform).cuts() == std::vector<double>{25, 50, 75, 100});
  const auto q = build_time_grid(d, 4, GridScheme::quantile).cuts();
  REQUIRE(q.size() == 4);
  CHECK(q[0] == doctest::Approx(25.75));
  CHECK(q[1] == doctest::Approx(50.5));
  CHECK(q[2] == doctest::Approx(75.25));
  CHECK(q[3] == 100.0);
  for (int j = 1; j <= 4; ++j) CHECK(q[static_cast<std::size_t>(j - 1)] == doctest::Approx(quantile_oracle(d, j / 4.0)));
  const std::vector<double> two{1, 2};
  CHECK(build_time_grid(two, 2, GridScheme::quantile).cuts() == std::vector<double>{1.5, 2});
  CHECK(build_time_grid(two, 2, GridScheme::uniform).cuts() == std::vector<double>{1, 2});
}

TEST_CASE("time grid errors") {
  const std::vector<double> same{3, 3, 3};
  CHECK_THROWS_AS(build_time_grid(same, 4, GridScheme::quantile), DataError);
  const std::vector<double> d{1, 2, 3};
  CHECK_THROWS_AS(build_time_grid(d, 1, GridScheme::quantile), ContractError);
  CHECK_THROWS_AS(TimeGrid({2, 1}), ContractError);
  CHECK_THROWS_AS(parse_grid_scheme("log"), ContractError);
}

TEST_CASE("grid covers the maximum training duration") {
  std::mt19937_64 rng(8);
  std::exponential_distribution<double> e(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> d(40);
    for (double& x : d) x = e(rng);
    for (auto scheme : {GridScheme::quantile, GridScheme::uniform}) {
      const TimeGrid g = build_time_grid(d, 10, scheme);
      CHECK(g.horizon() == *std::max_element(d.begin(), d.end()));
      for (std::size_t j = 1; j < g.bins(); ++j) CHECK(g.cuts()[j] > g.cuts()[j - 1]);
    }
  }
}

TEST_CASE("kappa and rho examples") {
  const TimeGrid g({10, 20, 30});
  CHECK(kappa(g, 15).index == 2);
  CHECK(kappa(g, 10).index == 1);
  CHECK(kappa(g, 30).index == 3);
  CHECK(kappa(g, 0).index == 1);
  CHECK(rho(g, 15) == doctest::Approx(0.5));
  CHECK(rho(g, 20) == 1.0);
  CHECK(rho(g, 10 + 1e-9) < 1e-9);
  const auto beyond = kappa(g, 45);
  CHECK(beyond.index == 3);
  CHECK(beyond.clamped);
  CHECK(rho(g, 45) == 1.0);
  CHECK_THROWS_AS(kappa(g, -1), ContractError);
}

TEST_CASE("kappa brackets t and rho increases within each interval") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> cuts;
    double c = 0.0;
    for (int j = 0; j < 6; ++j) cuts.push_back(c += 0.1 + u(rng));
    const TimeGrid g(cuts);
    for (int s = 0; s < 50; ++s) {
      const double t = u(rng) * g.horizon();
      const std::size_t k = kappa(g, t).index;
      CHECK(g.lower(k - 1) <= t);
      CHECK(t <= g.upper(k - 1));
      if (t > 0.0) CHECK(g.lower(k - 1) < t);
      const double r = rho(g, t);
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
      const double t2 = std::min(g.upper(k - 1), t + 1e-3);
      if (t > 0.0 && t2 > t) CHECK(rho(g, t2) > r);
    }
  }
}

TEST_CASE("split sizes, determinism and partition") {
  const auto s = split(10, {0.6, 0.1, 0.3}, 42);
  CHECK(s.train.size() == 6);
  CHECK(s.validation.size() == 1);
  CHECK(s.test.size() == 3);
  const auto again = split(10, {0.6, 0.1, 0.3}, 42);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.validation.begin(), s.validation.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 10);
  CHECK_THROWS_AS(split(10, {1.0, 0.0, 0.0}, 1), ContractError);
  CHECK_THROWS_AS(split(10, {0.5, 0.1, 0.3}, 1), ContractError);
  const auto other = split(1000, {0.6, 0.1, 0.3}, 43);
  const auto base = split(1000, {0.6, 0.1, 0.3}, 42);
  CHECK(other.train != base.train);
}

TEST_CASE("synthetic data with zero assignment coefficients has propensity one half") {
  SyntheticSpec spec = SyntheticSpec::standard(200, 2, 3);
  for (auto& a : spec.assignment) std::fill(a.begin(), a.end(), 0.0);
  const SyntheticData d = synthesize(spec);
  for (const auto& p : d.propensities) {
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);
  }
}

TEST_CASE("synthetic data without censoring has no censored records") {
  SyntheticSpec spec = SyntheticSpec::standard(500, 2, 4);
  spec.censoring_rate = 0.0;
  const SyntheticData d = synthesize(spec);
  CHECK(std::none_of(d.events.begin(), d.events.end(), [](int e) { return e == 0; }));
  spec.censoring_rate = 0.3;
  const SyntheticData c = synthesize(spec);
  const auto censored = std::count(c.events.begin(), c.events.end(), 0);
  CHECK(censored > 100);
  CHECK(censored < 200);
}

TEST_CASE("assignment coefficient on x1 raises the event-1 share where x1 is large") {
  SyntheticSpec spec = SyntheticSpec::standard(1000, 2, 5);
  spec.censoring_rate = 0.0;
  for (auto& a : spec.assignment) std::fill(a.begin(), a.end(), 0.0);
  spec.assignment[0][0] = 2.0;
  const SyntheticData d = synthesize(spec);
  double hi = 0, hi_n = 0, lo = 0, lo_n = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x1 = d.numerical[i][0];
    if (x1 > 1) {
      hi_n += 1;
      hi += d.events[i] == 1;
    } else if (x1 < -1) {
      lo_n += 1;
      lo += d.events[i] == 1;
    }
  }
  REQUIRE(hi_n > 0);
  REQUIRE(lo_n > 0);
  CHECK(hi / hi_n > lo / lo_n);
}

TEST_CASE("synthesize is bitwise reproducible") {
  SyntheticSpec spec = SyntheticSpec::standard(300, 3, 77, 5, 2);
  const SyntheticData a = synthesize(spec);
  const SyntheticData b = synthesize(spec);
  CHECK(a.numerical == b.numerical);
  CHECK(a.categorical == b.categorical);
  CHECK(a.durations == b.durations);
  CHECK(a.events == b.events);
  CHECK(a.propensities == b.propensities);
  for (const auto& p : a.propensities) CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("synthetic csv round-trips through ingestion") {
  const SyntheticData d = synthesize(SyntheticSpec::standard(120, 2, 9, 3, 1));
  const auto dir = std::filesystem::temp_directory_path() / "survtrace_test_data";
  std::filesystem::create_directories(dir);
  write_synthetic_csv(d, dir / "s.csv", dir / "s.propensity.csv");
  const RawTable t = read_csv(dir / "s.csv", {});
  CHECK(t.rows.size() == 120);
  CHECK(t.num_events == 2);
  CHECK(t.names == std::vector<std::string>{"x1", "x2", "x3", "c1"});
  CHECK(t.kinds[3] == FieldKind::categorical);
  for (std::size_t i = 0; i < 120; ++i) {
    CHECK(t.rows[i].duration == d.durations[i]);
    CHECK(t.rows[i].event == d.events[i]);
  }
  std::ifstream side(dir / "s.propensity.csv");
  std::string line;
  std::size_t n = 0;
  std::getline(side, line);
  CHECK(line == "propensity_1,propensity_2");
  while (std::getline(side, line)) ++n;
  CHECK(n == 120);
}

TEST_CASE("to_dataset keeps synthetic values") {
  const SyntheticData d = synthesize(SyntheticSpec::standard(50, 2, 1, 4, 1));
  const Dataset ds = to_dataset(d);
  CHECK(ds.size() == 50);
  CHECK(ds.num_events == 2);
  CHECK(ds.records[3].numerical == d.numerical[3]);
  CHECK(ds.records[3].categorical == d.categorical[3]);
  const std::vector<std::size_t> idx{4, 2};
  const Dataset sub = ds.subset(idx);
  CHECK(sub.size() == 2);
  CHECK(sub.records[0].duration == d.durations[4]);
}
