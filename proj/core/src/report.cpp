// Copyright 2026 The wsiqc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>

#include "json.hpp"
#include "wsiqc/pipeline.hpp"

namespace wsiqc::pipeline {

using json = nlohmann::json;

MetricVector QualityReport::Vector() const {
  MetricVector v;
  for (int k = 0; k < kMetricCount; ++k) {
    v.values[k] = metrics[k].evaluable ? metrics[k].value : kImputedValue;
    v.evaluable[k] = metrics[k].evaluable;
  }
  return v;
}

std::string SerializeReport(const QualityReport& r, bool include_timings) {
  json metrics = json::object();
  for (int k = 0; k < kMetricCount; ++k) {
    const MetricEntry& e = r.metrics[k];
    json raw = json::object();
    for (const auto& [key, v] : e.raw) {
      if (std::isfinite(v)) raw[key] = v;
    }
    metrics[std::string(MetricName(k))] = {
        {"value", e.value}, {"evaluable", e.evaluable}, {"raw", raw}, {"warnings", e.warnings}};
  }
  json j{{"slide_id", r.slide_id},
         {"version", r.version},
         {"config_hash", r.config_hash},
         {"backend", r.backend},
         {"artifact_patches", r.artifact_patches},
         {"content_patches", r.content_patches},
         {"metrics", metrics},
         {"tbs_annotation", content::TbsAnnotationName(r.tbs_annotation)},
         {"score", r.score ? json(*r.score) : json(nullptr)}};
  if (r.decision) {
    j["decision"] = {{"score", r.decision->score},
                     {"action", score::ActionName(r.decision->action)},
                     {"reasons", r.decision->reasons}};
  } else {
    j["decision"] = nullptr;
  }
  if (include_timings) {
    json t = json::array();
    for (const StageTiming& s : r.timings) t.push_back({{"stage", s.stage}, {"seconds", s.seconds}});
    j["timings"] = t;
  }
  return j.dump(2);
}

QualityReport ParseReport(const std::string& text) {
  QualityReport r;
  try {
    const json j = json::parse(text);
    r.slide_id = j.at("slide_id").get<std::string>();
    r.version = j.value("version", "");
    r.config_hash = j.value("config_hash", "");
    r.backend = j.value("backend", "none");
    r.artifact_patches = j.value("artifact_patches", std::int64_t{0});
    r.content_patches = j.value("content_patches", std::int64_t{0});
    const json& metrics = j.at("metrics");
    for (int k = 0; k < kMetricCount; ++k) {
      const json& m = metrics.at(std::string(MetricName(k)));
      MetricEntry& e = r.metrics[k];
      e.value = m.at("value").get<double>();
      e.evaluable = m.at("evaluable").get<bool>();
      e.raw = m.value("raw", std::map<std::string, double>{});
      e.warnings = m.value("warnings", std::vector<std::string>{});
    }
    const auto tbs = content::ParseTbsAnnotation(j.value("tbs_annotation", "none"));
    if (!tbs) throw Error(ErrorCode::kInvalidArgument, "unknown tbs_annotation");
    r.tbs_annotation = *tbs;
    if (!j.at("score").is_null()) r.score = j["score"].get<double>();
    if (j.contains("decision") && !j["decision"].is_null()) {
      score::SlideDecision d;
      d.score = j["decision"].at("score").get<double>();
      d.action = score::ParseAction(j["decision"].at("action").get<std::string>());
      d.reasons = j["decision"].value("reasons", std::vector<std::string>{});
      r.decision = d;
    }
    for (const json& t : j.value("timings", json::array())) {
      r.timings.push_back({t.at("stage").get<std::string>(), t.at("seconds").get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("report: ") + e.what());
  }
  return r;
}

}  // namespace wsiqc::pipeline
