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

#include "wsiqc/focus_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "wsiqc/default_models.hpp"
#include "wsiqc/error.hpp"

namespace wsiqc::focus {

using json = nlohmann::json;

namespace {

constexpr std::size_t kTaps = static_cast<std::size_t>(kChannels) * kKernelSize * kKernelSize;
constexpr char kMagic[16] = {'F', 'O', 'C', 'U', 'S', 'A', 'T', 'T',
                             'N', 'E', 'T', 'v', '1', '\0', '\0', '\0'};

int OutputExtent(int n) { return (n - kKernelSize) / kConvStride + 1; }

struct Extremum {
  double value = 0;
  int u = 0;
  int v = 0;
};

struct FilterPool {
  Extremum lo;
  Extremum hi;
};

double Response(const Window& x, const FocusNetWeights& w, int f, int u, int v) {
  double r = w.bias[f];
  const int y0 = u * kConvStride, x0 = v * kConvStride;
  for (int c = 0; c < kChannels; ++c) {
    for (int dy = 0; dy < kKernelSize; ++dy) {
      const double* row = &x.data[(static_cast<std::size_t>(c) * x.height + y0 + dy) * x.width + x0];
      const double* kr = &w.kernel[((static_cast<std::size_t>(f) * kChannels + c) * kKernelSize + dy) * kKernelSize];
      for (int dx = 0; dx < kKernelSize; ++dx) r += kr[dx] * row[dx];
    }
  }
  return r;
}

std::vector<FilterPool> Pool(const Window& x, const FocusNetWeights& w) {
  if (x.width < kKernelSize || x.height < kKernelSize) {
    throw Error(ErrorCode::kWindowTooSmall, "window must be at least 7x7");
  }
  const int ou = OutputExtent(x.height), ov = OutputExtent(x.width);
  std::vector<FilterPool> pools(static_cast<std::size_t>(w.n_filters));
  for (int f = 0; f < w.n_filters; ++f) {
    FilterPool& p = pools[f];
    bool first = true;
    for (int u = 0; u < ou; ++u) {
      for (int v = 0; v < ov; ++v) {
        const double r = Response(x, w, f, u, v);
        if (first) {
          p.lo = p.hi = {r, u, v};
          first = false;
          continue;
        }
        // Strict comparisons keep the lowest linear index on ties.
        if (r < p.lo.value) p.lo = {r, u, v};
        if (r > p.hi.value) p.hi = {r, u, v};
      }
    }
  }
  return pools;
}

double Head(const std::vector<FilterPool>& pools, const FocusNetWeights& w) {
  double y = w.w3;
  for (int f = 0; f < w.n_filters; ++f) {
    y += w.w1[f] * pools[f].lo.value + w.w2[f] * pools[f].hi.value;
  }
  return y;
}

void CheckShape(const FocusNetWeights& w) {
  const auto n = static_cast<std::size_t>(w.n_filters);
  if (w.n_filters <= 0 || w.kernel.size() != n * kTaps || w.bias.size() != n ||
      w.w1.size() != n || w.w2.size() != n) {
    throw Error(ErrorCode::kMalformedModel, "focus weights have inconsistent shapes");
  }
}

double Plcc(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

// ---------------------------------------------------------------------------
// Weights

FocusNetWeights FocusNetWeights::Zero(int n_filters) {
  FocusNetWeights w;
  w.n_filters = n_filters;
  w.kernel.assign(static_cast<std::size_t>(n_filters) * kTaps, 0.0);
  w.bias.assign(static_cast<std::size_t>(n_filters), 0.0);
  w.w1.assign(static_cast<std::size_t>(n_filters), 0.0);
  w.w2.assign(static_cast<std::size_t>(n_filters), 0.0);
  return w;
}

FocusNetWeights FocusNetWeights::Random(int n_filters, std::uint64_t seed) {
  FocusNetWeights w = Zero(n_filters);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> kernel_init(0.0, 1.0 / std::sqrt(static_cast<double>(kTaps)));
  std::normal_distribution<double> head_init(0.0, 1.0);
  for (double& v : w.kernel) v = kernel_init(rng);
  for (double& v : w.bias) v = 0.1 * head_init(rng);
  for (double& v : w.w1) v = head_init(rng);
  for (double& v : w.w2) v = head_init(rng);
  w.w3 = head_init(rng);
  return w;
}

std::size_t FocusNetWeights::parameter_count() const {
  return kernel.size() + bias.size() + w1.size() + w2.size() + 1;
}

std::vector<double> FocusNetWeights::Flatten() const {
  std::vector<double> p;
  p.reserve(parameter_count());
  p.insert(p.end(), kernel.begin(), kernel.end());
  p.insert(p.end(), bias.begin(), bias.end());
  p.insert(p.end(), w1.begin(), w1.end());
  p.insert(p.end(), w2.begin(), w2.end());
  p.push_back(w3);
  return p;
}

void FocusNetWeights::Unflatten(std::span<const double> p) {
  if (p.size() != parameter_count()) {
    throw Error(ErrorCode::kInvalidArgument, "parameter vector has the wrong length");
  }
  auto it = p.begin();
  for (auto* v : {&kernel, &bias, &w1, &w2}) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(v->size()), v->begin());
    it += static_cast<std::ptrdiff_t>(v->size());
  }
  w3 = *it;
}

void FocusNetWeights::Validate() const {
  CheckShape(*this);
  for (double v : Flatten()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kMalformedModel, "non-finite focus weight");
  }
}

// ---------------------------------------------------------------------------
// Inference

Window MakeWindow(const RgbImage& img, int x, int y, int w, int h) {
  Window win;
  win.width = w;
  win.height = h;
  win.data.resize(static_cast<std::size_t>(kChannels) * w * h);
  for (int yy = 0; yy < h; ++yy) {
    const std::uint8_t* p = img.px(x, y + yy);
    for (int xx = 0; xx < w; ++xx, p += 3) {
      for (int c = 0; c < kChannels; ++c) win.at(c, yy, xx) = p[c] / 255.0;
    }
  }
  return win;
}

double PredictWindow(const Window& x, const FocusNetWeights& w) {
  return Head(Pool(x, w), w);
}

double PredictWindowWithGradient(const Window& x, const FocusNetWeights& w,
                                 FocusNetWeights& grad) {
  const std::vector<FilterPool> pools = Pool(x, w);
  grad = FocusNetWeights::Zero(w.n_filters);
  grad.w3 = 1.0;
  for (int f = 0; f < w.n_filters; ++f) {
    const FilterPool& p = pools[f];
    grad.w1[f] = p.lo.value;
    grad.w2[f] = p.hi.value;
    grad.bias[f] = w.w1[f] + w.w2[f];
    for (const auto& [coef, ext] : {std::pair{w.w1[f], p.lo}, std::pair{w.w2[f], p.hi}}) {
      const int y0 = ext.u * kConvStride, x0 = ext.v * kConvStride;
      for (int c = 0; c < kChannels; ++c) {
        for (int dy = 0; dy < kKernelSize; ++dy) {
          for (int dx = 0; dx < kKernelSize; ++dx) {
            grad.k(f, c, dy, dx) += coef * x.at(c, y0 + dy, x0 + dx);
          }
        }
      }
    }
  }
  return Head(pools, w);
}

double ScorePatch(const RgbImage& patch, const FocusNetWeights& w, int window, int stride,
                  int valid_width, int valid_height) {
  double sum = 0;
  int n = 0;
  for (int y = 0; y + window <= valid_height; y += stride) {
    for (int x = 0; x + window <= valid_width; x += stride) {
      sum += PredictWindow(MakeWindow(patch, x, y, window, window), w);
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / n;
}

FocusScore AggregateQ2(std::vector<double> q_patch) {
  FocusScore s;
  s.q_patch = std::move(q_patch);
  double sum = 0;
  int n = 0;
  for (double q : s.q_patch) {
    if (std::isnan(q)) continue;
    sum += q;
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::kNoContentPatches, "no content patches to score sharpness");
  s.mean_raw = sum / n;
  s.q2 = std::clamp(s.mean_raw / kScoreRange, 0.0, 1.0);
  return s;
}

// ---------------------------------------------------------------------------
// Training

double PlccLossAndGradient(const FocusNetWeights& w, std::span<const TrainSample> batch,
                           FocusNetWeights* grad) {
  const std::size_t n = batch.size();
  if (n < 2) throw Error(ErrorCode::kDegenerateTargets, "PLCC needs at least two samples");
  std::vector<double> y(n), t(n);
  std::vector<FocusNetWeights> dy(grad ? n : 0);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = grad ? PredictWindowWithGradient(batch[i].window, w, dy[i])
                : PredictWindow(batch[i].window, w);
    t[i] = batch[i].target;
  }
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  const double mt = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (y[i] - my) * (t[i] - mt);
    saa += (y[i] - my) * (y[i] - my);
    sbb += (t[i] - mt) * (t[i] - mt);
  }
  if (!(sbb > 0)) throw Error(ErrorCode::kDegenerateTargets, "targets are constant");
  if (!(saa > 0)) {
    // Constant predictions: PLCC is undefined, treat as uncorrelated.
    if (grad) *grad = FocusNetWeights::Zero(w.n_filters);
    return 1.0;
  }
  const double norm_a = std::sqrt(saa), norm_b = std::sqrt(sbb);
  const double plcc = sab / (norm_a * norm_b);
  if (grad) {
    *grad = FocusNetWeights::Zero(w.n_filters);
    std::vector<double> acc(w.parameter_count(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      // dPLCC/dy_i; the centring terms cancel because the deviations sum to 0.
      const double dp = (t[i] - mt) / (norm_a * norm_b) - plcc * (y[i] - my) / saa;
      const std::vector<double> g = dy[i].Flatten();
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] -= dp * g[k];
    }
    grad->Unflatten(acc);
  }
  return 1.0 - plcc;
}

TrainResult TrainFocus(std::span<const TrainSample> dataset, const TrainConfig& config) {
  if (dataset.size() < 2) throw Error(ErrorCode::kDegenerateTargets, "need at least two samples");
  {
    const double t0 = dataset.front().target;
    if (std::all_of(dataset.begin(), dataset.end(),
                    [t0](const TrainSample& s) { return s.target == t0; })) {
      throw Error(ErrorCode::kDegenerateTargets, "all training targets are equal");
    }
  }
  TrainResult result;
  FocusNetWeights w = FocusNetWeights::Random(config.n_filters, config.seed);
  std::vector<double> params = w.Flatten();
  std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch =
      config.batch_size <= 1 ? dataset.size()
                             : std::min<std::size_t>(static_cast<std::size_t>(config.batch_size),
                                                     dataset.size());
  long step = 0;
  std::vector<TrainSample> minibatch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start + 1 < order.size(); start += batch) {
      minibatch.clear();
      for (std::size_t k = start; k < std::min(start + batch, order.size()); ++k) {
        minibatch.push_back(dataset[order[k]]);
      }
      FocusNetWeights grad;
      try {
        PlccLossAndGradient(w, minibatch, &grad);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kDegenerateTargets) continue;  // single-target minibatch
        throw;
      }
      const std::vector<double> g = grad.Flatten();
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t k = 0; k < params.size(); ++k) {
        m[k] = kBeta1 * m[k] + (1 - kBeta1) * g[k];
        v[k] = kBeta2 * v[k] + (1 - kBeta2) * g[k] * g[k];
        params[k] -= config.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
      }
      w.Unflatten(params);
    }
    result.epoch_loss.push_back(PlccLossAndGradient(w, dataset, nullptr));
  }

  if (config.rescale_to_targets) {
    std::vector<double> y, t;
    for (const TrainSample& s : dataset) {
      y.push_back(PredictWindow(s.window, w));
      t.push_back(s.target);
    }
    const double n = static_cast<double>(y.size());
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    const double mt = std::accumulate(t.begin(), t.end(), 0.0) / n;
    // Regress outputs on targets and invert. The direct fit of targets on
    // outputs would shrink every level toward the overall mean.
    double stt = 0, syt = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      stt += (t[i] - mt) * (t[i] - mt);
      syt += (y[i] - my) * (t[i] - mt);
    }
    if (syt > 0) {
      const double a = stt / syt, c = mt - a * my;
      for (double& x : w.w1) x *= a;
      for (double& x : w.w2) x *= a;
      w.w3 = a * w.w3 + c;
    }
  }

  std::vector<double> y, t;
  for (const TrainSample& s : dataset) {
    y.push_back(PredictWindow(s.window, w));
    t.push_back(s.target);
  }
  result.final_plcc = Plcc(y, t);
  result.weights = std::move(w);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

std::string SerializeWeightsJson(const FocusNetWeights& w) {
  CheckShape(w);
  json kernel = json::array();
  for (int f = 0; f < w.n_filters; ++f) {
    json per_filter = json::array();
    for (int c = 0; c < kChannels; ++c) {
      json rows = json::array();
      for (int y = 0; y < kKernelSize; ++y) {
        json row = json::array();
        for (int x = 0; x < kKernelSize; ++x) row.push_back(w.k(f, c, y, x));
        rows.push_back(std::move(row));
      }
      per_filter.push_back(std::move(rows));
    }
    kernel.push_back(std::move(per_filter));
  }
  json j{{"n_filters", w.n_filters}, {"kernel", kernel}, {"bias", w.bias},
         {"w1", w.w1},               {"w2", w.w2},         {"w3", w.w3}};
  return j.dump();
}

FocusNetWeights ParseWeightsJson(const std::string& text) {
  FocusNetWeights w;
  try {
    const json j = json::parse(text);
    w = FocusNetWeights::Zero(j.at("n_filters").get<int>());
    const json& kernel = j.at("kernel");
    if (kernel.size() != static_cast<std::size_t>(w.n_filters)) {
      throw Error(ErrorCode::kMalformedModel, "kernel filter count mismatch");
    }
    for (int f = 0; f < w.n_filters; ++f) {
      for (int c = 0; c < kChannels; ++c) {
        for (int y = 0; y < kKernelSize; ++y) {
          const json& row = kernel.at(f).at(c).at(y);
          if (row.size() != kKernelSize) throw Error(ErrorCode::kMalformedModel, "kernel must be 7x7");
          for (int x = 0; x < kKernelSize; ++x) w.k(f, c, y, x) = row.at(x).get<double>();
        }
      }
    }
    w.bias = j.at("bias").get<std::vector<double>>();
    w.w1 = j.at("w1").get<std::vector<double>>();
    w.w2 = j.at("w2").get<std::vector<double>>();
    w.w3 = j.at("w3").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedModel, std::string("focus weights: ") + e.what());
  }
  w.Validate();
  return w;
}

std::string SerializeWeightsBinary(const FocusNetWeights& w) {
  CheckShape(w);
  static_assert(std::endian::native == std::endian::little, "little-endian host expected");
  std::string out(kMagic, sizeof(kMagic));
  const auto n = static_cast<std::uint32_t>(w.n_filters);
  out.append(reinterpret_cast<const char*>(&n), sizeof(n));
  const std::vector<double> p = w.Flatten();
  out.append(reinterpret_cast<const char*>(p.data()), p.size() * sizeof(double));
  return out;
}

FocusNetWeights ParseWeightsBinary(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kMalformedModel, "not a FOCUSATTNETv1 weight file");
  }
  std::uint32_t n = 0;
  std::memcpy(&n, bytes.data() + sizeof(kMagic), sizeof(n));
  if (n == 0 || n > 4096) throw Error(ErrorCode::kMalformedModel, "bad filter count");
  FocusNetWeights w = FocusNetWeights::Zero(static_cast<int>(n));
  std::vector<double> p(w.parameter_count());
  if (bytes.size() != sizeof(kMagic) + 4 + p.size() * sizeof(double)) {
    throw Error(ErrorCode::kMalformedModel, "truncated focus weight file");
  }
  std::memcpy(p.data(), bytes.data() + sizeof(kMagic) + 4, p.size() * sizeof(double));
  w.Unflatten(p);
  w.Validate();
  return w;
}

FocusNetWeights LoadWeights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() >= sizeof(kMagic) && std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0) {
    return ParseWeightsBinary(bytes);
  }
  return ParseWeightsJson(bytes);
}

void SaveWeights(const std::filesystem::path& path, const FocusNetWeights& w, bool binary) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  if (binary) {
    out << SerializeWeightsBinary(w);
  } else {
    out << SerializeWeightsJson(w) << '\n';
  }
}

const FocusNetWeights& DefaultWeights() {
  static const FocusNetWeights weights =
      ParseWeightsJson(std::string(internal::kFocusDefaultJson));
  return weights;
}

}  // namespace wsiqc::focus
