#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "crgrf/error.hpp"
#include "crgrf/simbench.hpp"

namespace crgrf {

namespace {

using nlohmann::json;

json model_json(const WeibullModel& m) {
  return {{"rate", m.rate},
          {"shape", m.shape},
          {"covariate_coefs", m.covariate_coefs},
          {"treatment_coefs", m.treatment_coefs}};
}

WeibullModel model_from(const json& j) {
  WeibullModel m;
  m.rate = j.at("rate").get<double>();
  m.shape = j.at("shape").get<double>();
  m.covariate_coefs = j.at("covariate_coefs").get<std::vector<double>>();
  m.treatment_coefs = j.at("treatment_coefs").get<std::vector<double>>();
  return m;
}

}  // namespace

void save_design(std::ostream& out, const SimDesign& design) {
  json j;
  j["name"] = design.name;
  j["n"] = design.n;
  j["horizon"] = design.horizon;
  j["covariates"] = json::array();
  for (const auto& c : design.covariates) {
    json cj{{"name", c.name}};
    if (c.kind == CovariateSpec::Kind::kUniform) {
      cj["kind"] = "uniform";
    } else {
      cj["kind"] = "categorical";
      cj["levels"] = c.levels;
      if (!c.probabilities.empty()) cj["probabilities"] = c.probabilities;
    }
    j["covariates"].push_back(cj);
  }
  j["treatments"] = json::array();
  for (std::size_t k = 0; k < design.num_treatments(); ++k) {
    const auto& pm = design.propensities.at(k);
    json tj{{"name", design.treatment_names[k]},
            {"intercept", pm.intercept},
            {"slope", pm.slope}};
    tj["driver"] = pm.driver >= 0 ? json(design.covariates.at(pm.driver).name) : json(nullptr);
    j["treatments"].push_back(tj);
  }
  j["event"] = model_json(design.event);
  j["competing"] = model_json(design.competing);
  j["censoring"] = model_json(design.censoring);
  j["max_followup"] = std::isfinite(design.max_followup) ? json(design.max_followup) : json(nullptr);
  j["binned"] = json::array();
  for (const auto& b : design.binned) {
    j["binned"].push_back(
        {{"name", b.name}, {"source", design.covariates.at(b.source).name}, {"bins", b.bins}});
  }
  out << j.dump(2) << '\n';
}

void save_design(const std::string& path, const SimDesign& design) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write design file " + path);
  save_design(out, design);
}

SimDesign load_design(std::istream& in) {
  SimDesign d;
  try {
    const json j = json::parse(in);
    auto covariate_named = [&](const std::string& name) {
      for (std::size_t i = 0; i < d.covariates.size(); ++i) {
        if (d.covariates[i].name == name) return i;
      }
      throw ConfigError("design refers to unknown covariate " + name);
    };
    d.name = j.value("name", std::string("custom"));
    d.n = j.at("n").get<std::size_t>();
    d.horizon = j.at("horizon").get<double>();
    for (const auto& cj : j.at("covariates")) {
      CovariateSpec c;
      c.name = cj.at("name").get<std::string>();
      const auto kind = cj.at("kind").get<std::string>();
      if (kind == "uniform") {
        c.kind = CovariateSpec::Kind::kUniform;
      } else if (kind == "categorical") {
        c.kind = CovariateSpec::Kind::kCategorical;
        c.levels = cj.at("levels").get<std::size_t>();
        c.probabilities = cj.value("probabilities", std::vector<double>{});
      } else {
        throw ConfigError("unknown covariate kind " + kind);
      }
      d.covariates.push_back(std::move(c));
    }
    for (const auto& tj : j.at("treatments")) {
      d.treatment_names.push_back(tj.at("name").get<std::string>());
      PropensityModel pm;
      pm.intercept = tj.value("intercept", 0.0);
      pm.slope = tj.value("slope", 0.0);
      if (tj.contains("driver") && !tj["driver"].is_null()) {
        pm.driver = static_cast<int>(covariate_named(tj["driver"].get<std::string>()));
      }
      d.propensities.push_back(pm);
    }
    d.event = model_from(j.at("event"));
    d.competing = model_from(j.at("competing"));
    d.censoring = model_from(j.at("censoring"));
    if (j.contains("max_followup") && !j["max_followup"].is_null()) {
      d.max_followup = j["max_followup"].get<double>();
    }
    if (j.contains("binned")) {
      for (const auto& bj : j["binned"]) {
        d.binned.push_back({bj.at("name").get<std::string>(),
                            covariate_named(bj.at("source").get<std::string>()),
                            bj.value("bins", std::size_t{5})});
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed design file: ") + e.what());
  }
  d.validate();
  return d;
}

SimDesign load_design(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read design file " + path);
  return load_design(in);
}

}  // namespace crgrf
