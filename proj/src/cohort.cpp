#include "ritw/cohort.hpp"

#include <fstream>

#include <json.hpp>

#include "ritw/error.hpp"

namespace ritw {

using nlohmann::json;

int PatientRecord::initiation_step() const {
  for (std::size_t t = 0; t < treatments.size(); ++t) {
    if (treatments[t] != 0) return static_cast<int>(t);
  }
  return -1;
}

std::size_t Cohort::treated_count() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.treated() ? 1 : 0;
  return n;
}

void Cohort::validate() const {
  for (const auto& r : records) {
    require(static_cast<int>(r.baseline.size()) == schema.baseline_dim,
            "cohort: record ", r.id, " baseline size ", r.baseline.size(),
            " does not match schema d=", schema.baseline_dim);
    require(static_cast<int>(r.covariates.size()) == schema.horizon,
            "cohort: record ", r.id, " has ", r.covariates.size(), " covariate steps, T=",
            schema.horizon);
    for (const auto& x : r.covariates)
      require(static_cast<int>(x.size()) == schema.baseline_dim, "cohort: record ", r.id,
              " covariate width ", x.size(), " does not match d=", schema.baseline_dim);
    require(static_cast<int>(r.treatments.size()) == schema.horizon, "cohort: record ",
            r.id, " has ", r.treatments.size(), " treatments, T=", schema.horizon);
    for (std::size_t t = 1; t < r.treatments.size(); ++t)
      require(r.treatments[t] >= r.treatments[t - 1], "cohort: record ", r.id,
              " treatment sequence is not absorbing");
    require(static_cast<int>(r.outcomes.size()) == schema.tasks, "cohort: record ", r.id,
            " has ", r.outcomes.size(), " outcomes, K=", schema.tasks);
  }
}

namespace {

json truth_to_json(const GroundTruth& t) {
  return {{"beta_b", t.beta_baseline},
          {"beta", t.beta_covariate},
          {"ate_by_time", t.ate_by_time}};
}

GroundTruth truth_from_json(const json& j) {
  GroundTruth t;
  t.beta_baseline = j.at("beta_b").get<std::vector<double>>();
  t.beta_covariate = j.at("beta").get<std::vector<double>>();
  t.ate_by_time = j.at("ate_by_time").get<std::vector<double>>();
  return t;
}

}  // namespace

void save_cohort(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cohort: cannot open '", path, "' for writing");
  json schema = {{"d", cohort.schema.baseline_dim},
                 {"T", cohort.schema.horizon},
                 {"K", cohort.schema.tasks},
                 {"binary_outcome", cohort.schema.binary_outcome}};
  if (cohort.schema.truth) schema["truth"] = truth_to_json(*cohort.schema.truth);
  json header = {{"schema", schema}};
  if (cohort.warning) header["warning"] = *cohort.warning;
  out << header.dump() << "\n";
  for (const auto& r : cohort.records) {
    json row = {{"id", r.id}, {"b", r.baseline}, {"x", r.covariates}, {"a", r.treatments}};
    if (r.outcomes.size() == 1 && !cohort.schema.binary_outcome) row["y"] = r.outcomes[0];
    else row["y"] = r.outcomes;
    out << row.dump() << "\n";
  }
  require(out.good(), "cohort: write to '", path, "' failed");
}

Cohort load_cohort(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cohort: cannot open '", path, "'");
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "cohort: '", path, "' is empty");
  json header = json::parse(line);
  const json& schema = header.at("schema");
  Cohort cohort;
  cohort.schema.baseline_dim = schema.at("d").get<int>();
  cohort.schema.horizon = schema.at("T").get<int>();
  cohort.schema.tasks = schema.at("K").get<int>();
  cohort.schema.binary_outcome = schema.value("binary_outcome", false);
  if (schema.contains("truth")) cohort.schema.truth = truth_from_json(schema["truth"]);
  if (header.contains("warning")) cohort.warning = header["warning"].get<std::string>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json row = json::parse(line);
    PatientRecord r;
    r.id = row.at("id").get<int>();
    r.baseline = row.at("b").get<std::vector<double>>();
    r.covariates = row.at("x").get<std::vector<std::vector<double>>>();
    r.treatments = row.at("a").get<std::vector<int>>();
    if (row.at("y").is_array()) r.outcomes = row["y"].get<std::vector<double>>();
    else r.outcomes = {row.at("y").get<double>()};
    cohort.records.push_back(std::move(r));
  }
  cohort.validate();
  return cohort;
}

}  // namespace ritw
