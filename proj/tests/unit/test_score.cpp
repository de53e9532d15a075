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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "test_util.hpp"
#include "wsiqc/score_model.hpp"

using namespace wsiqc;
using namespace wsiqc::score;

namespace {

std::vector<Example> Q6Labels(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Example> out(n);
  for (Example& e : out) {
    for (double& v : e.x) v = u(rng);
    e.label = 10 * e.x[5];
  }
  return out;
}

double Rmse(const GbdtModel& m, const std::vector<Example>& data) {
  double ss = 0;
  for (const Example& e : data) ss += std::pow(m.PredictRaw(e.x) - e.label, 2);
  return std::sqrt(ss / static_cast<double>(data.size()));
}

}  // namespace

TEST_CASE("constant labels fit in one round") {
  std::vector<Example> data = Q6Labels(20, 1);
  for (Example& e : data) e.label = 3.25;
  GbdtConfig cfg;
  cfg.rounds = 1;
  cfg.lambda = 0;
  const GbdtModel m = TrainGbdt(data, cfg).model;
  Features probe{};
  probe.fill(0.3);
  CHECK(m.PredictRaw(probe) == 3.25);
}

TEST_CASE("one leaf with no regularisation and full step lands on the mean") {
  std::vector<Example> data = Q6Labels(16, 2);
  double mean = 0;
  for (Example& e : data) {
    e.label = std::round(e.label * 8) / 8;
    mean += e.label;
  }
  mean /= 16;
  GbdtConfig cfg;
  cfg.rounds = 1;
  cfg.max_depth = 0;
  cfg.lambda = 0;
  cfg.gamma = 0;
  cfg.eta = 1;
  const TrainResult r = TrainGbdt(data, cfg);
  REQUIRE(r.model.trees.size() == 1);
  CHECK(r.model.trees[0].nodes.size() == 1);
  for (const Example& e : data) CHECK(r.model.PredictRaw(e.x) == doctest::Approx(mean).epsilon(1e-15));
}

TEST_CASE("strong regularisation pulls predictions to the base score") {
  const std::vector<Example> data = Q6Labels(200, 3);
  GbdtConfig cfg;
  cfg.lambda = 1e12;
  cfg.rounds = 10;
  const GbdtModel m = TrainGbdt(data, cfg).model;
  for (const Example& e : data) CHECK(m.PredictRaw(e.x) == doctest::Approx(m.base_score).epsilon(1e-6));
}

TEST_CASE("learns a single-metric rubric") {
  const std::vector<Example> data = Q6Labels(500, 4);
  GbdtConfig cfg;
  cfg.rounds = 50;
  cfg.eta = 0.3;
  const TrainResult r = TrainGbdt(data, cfg);
  CHECK(r.rmse_per_round.back() < 0.1);
  Features x{};
  x.fill(1.0);
  x[5] = 0.5;
  CHECK(PredictScore(r.model, x) == doctest::Approx(5.0).epsilon(0.04));

  // Training loss never increases with gamma = 0.
  for (std::size_t k = 1; k < r.rmse_per_round.size(); ++k) {
    REQUIRE(r.rmse_per_round[k] <= r.rmse_per_round[k - 1] + 1e-12);
  }
  CHECK(Rmse(r.model, data) == doctest::Approx(r.rmse_per_round.back()));

  // Split features stay in range.
  for (const Tree& t : r.model.trees) {
    for (const TreeNode& n : t.nodes) {
      if (!n.is_leaf()) {
        REQUIRE(n.feature >= 0);
        REQUIRE(n.feature < kMetricCount);
      }
    }
  }
}

TEST_CASE("training is deterministic and warns on constant features") {
  std::vector<Example> data = Q6Labels(50, 5);
  for (Example& e : data) e.x[0] = 1.0;
  const TrainResult a = TrainGbdt(data);
  const TrainResult b = TrainGbdt(data);
  CHECK(a.model == b.model);
  CHECK(std::any_of(a.warnings.begin(), a.warnings.end(),
                    [](const std::string& w) { return w.find("q1") != std::string::npos; }));
  CHECK_THROWS_CODE(TrainGbdt(Q6Labels(9, 1)), ErrorCode::kEmptyDataset);
  GbdtConfig bad;
  bad.eta = 0;
  CHECK_THROWS_CODE(TrainGbdt(data, bad), ErrorCode::kInvalidArgument);
}

TEST_CASE("prediction is clamped to the score range") {
  GbdtModel m;
  m.base_score = 5;
  Features x{};
  CHECK(PredictScore(m, x) == 5.0);
  m.base_score = 14;
  CHECK(PredictScore(m, x) == 10.0);
  m.base_score = -2;
  CHECK(PredictScore(m, MetricVector{}) == 0.0);
}

TEST_CASE("model files round trip exactly") {
  const GbdtModel m = TrainGbdt(RubricDataset(300, 8)).model;
  const GbdtModel back = ParseModel(SerializeModel(m));
  CHECK(back == m);
  testing::TempDir tmp("score");
  SaveModel(tmp / "m.json", m);
  CHECK(LoadModel(tmp / "m.json") == m);
  CHECK_THROWS_CODE(ParseModel("{}"), ErrorCode::kMalformedModel);
  CHECK_THROWS_CODE(ParseModel(R"({"base_score": 1, "eta": 0.1, "trees": [], "feature_names": ["q1"]})"),
                    ErrorCode::kMalformedModel);
  CHECK_THROWS_CODE(LoadModel(tmp / "missing.json"), ErrorCode::kIo);
}

TEST_CASE("default model tracks the rubric") {
  const GbdtModel& m = DefaultModel();
  CHECK(m.trees.size() == 100);
  const std::vector<Example> held_out = RubricDataset(500, 99);
  CHECK(Rmse(m, held_out) < 0.3);

  // All-clean slides land in the top decile of the training labels.
  std::vector<double> labels;
  for (const Example& e : RubricDataset(1000, 20240611)) labels.push_back(e.label);
  std::sort(labels.begin(), labels.end());
  Features clean;
  clean.fill(1.0);
  CHECK(PredictScore(m, clean) >= labels[900]);
}

TEST_CASE("labels csv") {
  testing::TempDir tmp("labels");
  {
    std::ofstream out(tmp / "l.csv");
    out << "slide,q1,q2,q3,q4,q5,q6,q7,q8,label\n";
    out << "a,1,1,1,1,1,0.5,1,1,9\n\n";
    out << "b,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,4.5\n";
  }
  const auto rows = LoadLabelsCsv(tmp / "l.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].x[5] == 0.5);
  CHECK(rows[1].x[7] == 0.8);
  CHECK(rows[1].label == 4.5);

  {
    std::ofstream(tmp / "bad.csv") << "q1,q2,label\n1,1,1\n";
    std::ofstream(tmp / "row.csv") << "q1,q2,q3,q4,q5,q6,q7,q8,label\n1,1,x,1,1,1,1,1,1\n";
  }
  CHECK_THROWS_CODE(LoadLabelsCsv(tmp / "bad.csv"), ErrorCode::kInvalidArgument);
  CHECK_THROWS_CODE(LoadLabelsCsv(tmp / "row.csv"), ErrorCode::kInvalidArgument);
  CHECK_THROWS_CODE(LoadLabelsCsv(tmp / "none.csv"), ErrorCode::kIo);
}

TEST_CASE("decision examples") {
  MetricVector q = MetricVector::FromValues({1, 1, 1, 1, 1, 1, 1, 1});
  CHECK(Decide(7, q).action == Action::kArchive);
  CHECK(Decide(6, q).action == Action::kRePrepare);
  q.Set(MetricId::kFocus, 0.3);
  SlideDecision d = Decide(4, q);
  CHECK(d.action == Action::kReScan);
  CHECK(d.reasons == std::vector<std::string>{"q2"});
  q.Set(MetricId::kStain, 0.2);
  d = Decide(4, q);
  CHECK(d.action == Action::kRePrepareAndScan);
  CHECK(d.reasons == std::vector<std::string>{"q2", "q5"});
  CHECK(Decide(8, q).action == Action::kArchive);

  // A not-evaluable metric is imputed and never a fault.
  MetricVector n = MetricVector::FromValues({1, 1, 1, 1, 1, 1, 1, 1});
  n.values[0] = 0.1;
  n.evaluable[0] = false;
  CHECK(Decide(3, n).reasons.empty());

  CHECK(IsScanningMetric(MetricId::kGrid));
  CHECK(IsScanningMetric(MetricId::kFocus));
  CHECK_FALSE(IsScanningMetric(MetricId::kMarker));
  CHECK(ParseAction("re_prepare_and_scan") == Action::kRePrepareAndScan);
  CHECK_THROWS_CODE(ParseAction("discard"), ErrorCode::kInvalidArgument);
}

TEST_CASE("decision ignores perturbations that cross no threshold") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 500; ++i) {
    MetricVector q;
    for (int k = 0; k < kMetricCount; ++k) q.Set(static_cast<MetricId>(k), u(rng));
    const double score = 10 * u(rng);
    MetricVector p = q;
    for (int k = 0; k < kMetricCount; ++k) {
      const double v = q.values[k];
      p.values[k] = v < kFaultBelow ? v * u(rng) : kFaultBelow + (1 - kFaultBelow) * u(rng);
    }
    REQUIRE(Decide(score, q) == Decide(score, p));
  }
}
