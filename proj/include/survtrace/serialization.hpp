#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "survtrace/data.hpp"
#include "survtrace/model.hpp"
#include "survtrace/propensity.hpp"
#include "survtrace/trainer.hpp"

namespace survtrace {

using Json = nlohmann::ordered_json;

inline constexpr const char* kCheckpointFormat = "survtrace-checkpoint/1";

// How the training data was read and split, kept so that eval/predict can
// rebuild the same folds from the same CSV.
struct DataProvenance {
  SchemaDeclaration declaration;
  std::uint64_t split_seed = 42;
  SplitFractions fractions;
};

struct Checkpoint {
  TrainConfig config;
  SurvTraceModel model;
  std::optional<PropensityModel> propensity;
  DataProvenance data;
};

Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);

Json to_json(const TrainConfig& c);
// Every field is optional; missing fields keep their defaults.
TrainConfig train_config_from_json(const Json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

Json to_json(const CovariateSchema& schema);
CovariateSchema schema_from_json(const Json& j);

Json to_json(const PropensityModel& p);
PropensityModel propensity_from_json(const Json& j);

Json to_json(const TrainHistory& h);
Json to_json(const MetricsReport& r);
Json to_json(const AttentionExport& a);

Json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const Json& j);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Writes `j` with two-space indentation and a trailing newline.
void write_json(const Json& j, const std::filesystem::path& path);

}  // namespace survtrace
