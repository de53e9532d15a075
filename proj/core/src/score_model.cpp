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

#include "wsiqc/score_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "wsiqc/error.hpp"

namespace wsiqc::score {

using json = nlohmann::json;

double Tree::Predict(const Features& x) const {
  if (nodes.empty()) return 0;
  int k = 0;
  while (!nodes[k].is_leaf()) {
    const TreeNode& n = nodes[k];
    k = x[n.feature] < n.threshold ? n.left : n.right;
  }
  return nodes[k].leaf;
}

double GbdtModel::PredictRaw(const Features& x) const {
  double sum = 0;
  for (const Tree& t : trees) sum += t.Predict(x);
  return base_score + eta * sum;
}

namespace {

struct Split {
  double gain = 0;
  int feature = -1;
  double threshold = 0;
};

double Score(double g, double h, double lambda) { return g * g / (h + lambda); }

class TreeBuilder {
 public:
  TreeBuilder(std::span<const Example> data, std::span<const double> grad,
              const GbdtConfig& config)
      : data_(data), grad_(grad), config_(config) {}

  Tree Build() {
    std::vector<std::size_t> idx(data_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    tree_.nodes.clear();
    Grow(idx, 0);
    return std::move(tree_);
  }

 private:
  int Grow(std::vector<std::size_t>& idx, int depth) {
    double g = 0;
    for (std::size_t i : idx) g += grad_[i];
    const auto h = static_cast<double>(idx.size());
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();

    Split best;
    if (depth < config_.max_depth && idx.size() >= 2) best = FindSplit(idx, g, h);
    if (best.feature < 0) {
      const double denom = h + config_.lambda;
      tree_.nodes[id].leaf = denom > 0 ? -g / denom : 0.0;
      return id;
    }
    std::vector<std::size_t> left, right;
    for (std::size_t i : idx) {
      (data_[i].x[best.feature] < best.threshold ? left : right).push_back(i);
    }
    tree_.nodes[id].feature = best.feature;
    tree_.nodes[id].threshold = best.threshold;
    const int l = Grow(left, depth + 1);
    const int r = Grow(right, depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  // Features are scanned in ascending order and thresholds from low to high;
  // only a strictly larger gain replaces the incumbent.
  Split FindSplit(std::vector<std::size_t>& idx, double g, double h) const {
    Split best;
    const double lambda = config_.lambda;
    const double parent = Score(g, h, lambda);
    std::vector<std::size_t> order(idx);
    for (int f = 0; f < kMetricCount; ++f) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = data_[a].x[f], vb = data_[b].x[f];
        return va < vb || (va == vb && a < b);
      });
      double gl = 0, hl = 0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        gl += grad_[order[k]];
        hl += 1;
        const double v = data_[order[k]].x[f];
        const double next = data_[order[k + 1]].x[f];
        if (v == next) continue;
        const double gr = g - gl, hr = h - hl;
        const double gain =
            0.5 * (Score(gl, hl, lambda) + Score(gr, hr, lambda) - parent) - config_.gamma;
        if (gain > best.gain) {
          best.gain = gain;
          best.feature = f;
          best.threshold = v + (next - v) / 2;
        }
      }
    }
    return best;
  }

  std::span<const Example> data_;
  std::span<const double> grad_;
  const GbdtConfig& config_;
  Tree tree_;
};

double Rmse(std::span<const Example> data, std::span<const double> pred) {
  double ss = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ss += (pred[i] - data[i].label) * (pred[i] - data[i].label);
  }
  return std::sqrt(ss / static_cast<double>(data.size()));
}

}  // namespace

TrainResult TrainGbdt(std::span<const Example> data, const GbdtConfig& config) {
  if (data.size() < kMinTrainingExamples) {
    throw Error(ErrorCode::kEmptyDataset, "score training needs at least 10 examples, got " +
                                              std::to_string(data.size()));
  }
  if (config.rounds < 0 || config.max_depth < 0 || config.lambda < 0 || config.gamma < 0 ||
      !(config.eta > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid boosting configuration");
  }
  TrainResult result;
  GbdtModel& model = result.model;
  model.eta = config.eta;
  model.lambda = config.lambda;
  model.gamma = config.gamma;
  model.max_depth = config.max_depth;
  for (int k = 0; k < kMetricCount; ++k) model.feature_names.emplace_back(MetricName(k));

  for (int f = 0; f < kMetricCount; ++f) {
    const double v0 = data[0].x[f];
    const bool constant = std::all_of(data.begin(), data.end(),
                                      [&](const Example& e) { return e.x[f] == v0; });
    if (constant) {
      result.warnings.push_back("ConstantFeatureWarning: " + std::string(MetricName(f)) +
                                " is constant in the training set");
    }
  }

  // Mean with one residual correction pass, so constant labels give back the
  // label exactly.
  const auto n = static_cast<double>(data.size());
  double mean = 0;
  for (const Example& e : data) mean += e.label;
  mean /= n;
  double resid = 0;
  for (const Example& e : data) resid += e.label - mean;
  model.base_score = mean + resid / n;

  std::vector<double> sums(data.size(), 0.0), pred(data.size()), grad(data.size());
  for (int round = 0; round < config.rounds; ++round) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      pred[i] = model.base_score + model.eta * sums[i];
      grad[i] = pred[i] - data[i].label;
    }
    TreeBuilder builder(data, grad, config);
    model.trees.push_back(builder.Build());
    const Tree& t = model.trees.back();
    for (std::size_t i = 0; i < data.size(); ++i) {
      sums[i] += t.Predict(data[i].x);
      pred[i] = model.base_score + model.eta * sums[i];
    }
    result.rmse_per_round.push_back(Rmse(data, pred));
  }
  return result;
}

double PredictScore(const GbdtModel& model, const Features& x) {
  return std::clamp(model.PredictRaw(x), kMinScore, kMaxScore);
}

double PredictScore(const GbdtModel& model, const MetricVector& q) {
  Features x = q.values;
  for (int k = 0; k < kMetricCount; ++k) {
    if (!q.evaluable[k]) x[k] = kImputedValue;
  }
  return PredictScore(model, x);
}

std::string SerializeModel(const GbdtModel& model) {
  json trees = json::array();
  for (const Tree& t : model.trees) {
    json nodes = json::array();
    for (const TreeNode& n : t.nodes) {
      if (n.is_leaf()) {
        nodes.push_back({{"leaf", n.leaf}});
      } else {
        nodes.push_back(
            {{"feat", n.feature}, {"thr", n.threshold}, {"left", n.left}, {"right", n.right}});
      }
    }
    trees.push_back({{"nodes", std::move(nodes)}});
  }
  json j{{"base_score", model.base_score}, {"eta", model.eta},     {"lambda", model.lambda},
         {"gamma", model.gamma},           {"max_depth", model.max_depth},
         {"trees", std::move(trees)},      {"feature_names", model.feature_names}};
  return j.dump();
}

GbdtModel ParseModel(const std::string& text) {
  GbdtModel m;
  try {
    const json j = json::parse(text);
    m.base_score = j.at("base_score").get<double>();
    m.eta = j.at("eta").get<double>();
    m.lambda = j.value("lambda", 1.0);
    m.gamma = j.value("gamma", 0.0);
    m.max_depth = j.value("max_depth", 3);
    m.feature_names = j.value("feature_names", std::vector<std::string>{});
    for (const json& jt : j.at("trees")) {
      Tree t;
      for (const json& jn : jt.at("nodes")) {
        TreeNode n;
        if (jn.contains("leaf")) {
          n.leaf = jn["leaf"].get<double>();
        } else {
          n.feature = jn.at("feat").get<int>();
          n.threshold = jn.at("thr").get<double>();
          n.left = jn.at("left").get<int>();
          n.right = jn.at("right").get<int>();
        }
        t.nodes.push_back(n);
      }
      m.trees.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedModel, std::string("score model: ") + e.what());
  }
  if (!m.feature_names.empty() && m.feature_names.size() != kMetricCount) {
    throw Error(ErrorCode::kMalformedModel, "score model must name eight features");
  }
  for (const Tree& t : m.trees) {
    const int size = static_cast<int>(t.nodes.size());
    if (size == 0) throw Error(ErrorCode::kMalformedModel, "empty tree");
    for (int k = 0; k < size; ++k) {
      const TreeNode& n = t.nodes[k];
      if (n.is_leaf()) continue;
      // Children must come after their parent, which also rules out cycles.
      if (n.feature >= kMetricCount || n.left <= k || n.right <= k || n.left >= size ||
          n.right >= size) {
        throw Error(ErrorCode::kMalformedModel, "invalid tree node");
      }
    }
  }
  return m;
}

GbdtModel LoadModel(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseModel(ss.str());
}

void SaveModel(const std::filesystem::path& path, const GbdtModel& model) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << SerializeModel(model) << '\n';
}

namespace {

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

}  // namespace

std::vector<Example> LoadLabelsCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kEmptyDataset, "empty labels file");
  const auto header = SplitCsv(line);
  std::array<int, kMetricCount> col{};
  col.fill(-1);
  int label_col = -1;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (header[c] == "label") label_col = c;
    if (auto id = MetricFromName(header[c])) col[Index(*id)] = c;
  }
  if (label_col < 0 || std::count(col.begin(), col.end(), -1) > 0) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": header needs q1..q8 and label");
  }
  std::vector<Example> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \r\t") == std::string::npos) continue;
    const auto cells = SplitCsv(line);
    Example e;
    try {
      for (int k = 0; k < kMetricCount; ++k) e.x[k] = std::stod(cells.at(col[k]));
      e.label = std::stod(cells.at(label_col));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument,
                  path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    rows.push_back(e);
  }
  return rows;
}

double RubricLabel(const Features& q) {
  double s = 0;
  for (int k = 0; k < kMetricCount; ++k) s += kRubricWeights[k] * q[k];
  return 10 * s;
}

std::vector<Example> RubricDataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Example> out(n);
  for (Example& e : out) {
    // Most metrics of a real slide are near 1; a few are damaged.
    for (double& v : e.x) {
      const double u = unit(rng);
      v = u < 0.6 ? 0.85 + 0.15 * unit(rng) : unit(rng);
    }
    if (unit(rng) < 0.1) e.x.fill(1.0);
    e.label = RubricLabel(e.x);
  }
  return out;
}

const GbdtModel& DefaultModel() {
  static const GbdtModel model = [] {
    const auto data = RubricDataset(1000, 20240611);
    return TrainGbdt(data).model;
  }();
  return model;
}

std::string_view ActionName(Action a) {
  switch (a) {
    case Action::kArchive: return "archive";
    case Action::kRePrepare: return "re_prepare";
    case Action::kReScan: return "re_scan";
    case Action::kRePrepareAndScan: return "re_prepare_and_scan";
  }
  return "?";
}

Action ParseAction(std::string_view name) {
  for (Action a : {Action::kArchive, Action::kRePrepare, Action::kReScan,
                   Action::kRePrepareAndScan}) {
    if (ActionName(a) == name) return a;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown action '" + std::string(name) + "'");
}

bool IsScanningMetric(MetricId id) { return id == MetricId::kGrid || id == MetricId::kFocus; }

SlideDecision Decide(double score, const MetricVector& q) {
  SlideDecision d;
  d.score = score;
  bool scanning = false, preparation = false;
  for (int k = 0; k < kMetricCount; ++k) {
    const auto id = static_cast<MetricId>(k);
    const double v = q.evaluable[k] ? q.values[k] : kImputedValue;
    if (v < kFaultBelow) {
      d.reasons.emplace_back(MetricName(id));
      (IsScanningMetric(id) ? scanning : preparation) = true;
    }
  }
  if (score > kArchiveAbove) {
    d.action = Action::kArchive;
  } else if (scanning && preparation) {
    d.action = Action::kRePrepareAndScan;
  } else if (scanning) {
    d.action = Action::kReScan;
  } else {
    d.action = Action::kRePrepare;
  }
  return d;
}

}  // namespace wsiqc::score
