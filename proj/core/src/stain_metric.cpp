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

#include "wsiqc/stain_metric.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "wsiqc/error.hpp"

namespace wsiqc::stain {

using json = nlohmann::json;

namespace {

double Norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

double Percentile(std::vector<double>& v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

StainBasis StainBasis::Default() {
  StainBasis b;
  b.Normalize();
  return b;
}

void StainBasis::Normalize() {
  for (Vec3* v : {&hematoxylin, &eosin}) {
    if ((*v)[0] < 0 || (*v)[1] < 0 || (*v)[2] < 0) {
      throw Error(ErrorCode::kInvalidArgument, "stain vectors must be non-negative");
    }
    const double n = Norm(*v);
    if (!(n > 0)) throw Error(ErrorCode::kInvalidArgument, "zero stain vector");
    for (double& x : *v) x /= n;
  }
  const double cosine = hematoxylin[0] * eosin[0] + hematoxylin[1] * eosin[1] +
                        hematoxylin[2] * eosin[2];
  if (cosine > 0.9999) {
    throw Error(ErrorCode::kInvalidArgument, "stain vectors are collinear");
  }
  for (double i0 : background) {
    if (!(i0 > 0)) throw Error(ErrorCode::kInvalidArgument, "background intensity must be positive");
  }
}

Deconvolver::Deconvolver(const StainBasis& basis) : basis_(basis) {
  basis_.Normalize();
  for (int c = 0; c < 3; ++c) {
    for (int v = 0; v < 256; ++v) {
      od_lut_[c][v] = -std::log10(std::max(v, 1) / basis_.background[c]);
    }
  }
  // pinv(M) = (M^T M)^-1 M^T for M = [h e].
  const Vec3& h = basis_.hematoxylin;
  const Vec3& e = basis_.eosin;
  const double hh = h[0] * h[0] + h[1] * h[1] + h[2] * h[2];
  const double ee = e[0] * e[0] + e[1] * e[1] + e[2] * e[2];
  const double he = h[0] * e[0] + h[1] * e[1] + h[2] * e[2];
  const double det = hh * ee - he * he;
  for (int c = 0; c < 3; ++c) {
    pinv_[0][c] = (ee * h[c] - he * e[c]) / det;
    pinv_[1][c] = (hh * e[c] - he * h[c]) / det;
  }
}

Concentrations Deconvolver::Pixel(std::uint8_t r, std::uint8_t g, std::uint8_t b) const {
  const double od[3] = {od_lut_[0][r], od_lut_[1][g], od_lut_[2][b]};
  Concentrations c;
  c.hematoxylin = std::max(0.0, pinv_[0][0] * od[0] + pinv_[0][1] * od[1] + pinv_[0][2] * od[2]);
  c.eosin = std::max(0.0, pinv_[1][0] * od[0] + pinv_[1][1] * od[1] + pinv_[1][2] * od[2]);
  return c;
}

Concentrations Deconvolver::Intensity(const Vec3& rgb) const {
  double od[3];
  for (int c = 0; c < 3; ++c) od[c] = -std::log10(std::max(rgb[c], 1e-9) / basis_.background[c]);
  Concentrations out;
  out.hematoxylin =
      std::max(0.0, pinv_[0][0] * od[0] + pinv_[0][1] * od[1] + pinv_[0][2] * od[2]);
  out.eosin = std::max(0.0, pinv_[1][0] * od[0] + pinv_[1][1] * od[1] + pinv_[1][2] * od[2]);
  return out;
}

Vec3 RenderIntensity(const StainBasis& basis, const Concentrations& c) {
  StainBasis b = basis;
  b.Normalize();
  Vec3 out;
  for (int k = 0; k < 3; ++k) {
    const double od = c.hematoxylin * b.hematoxylin[k] + c.eosin * b.eosin[k];
    out[k] = b.background[k] * std::pow(10.0, -od);
  }
  return out;
}

ConcentrationMaps Deconvolve(const RgbImage& patch, const StainBasis& basis) {
  const Deconvolver dec(basis);
  ConcentrationMaps maps;
  maps.width = patch.width;
  maps.height = patch.height;
  maps.hematoxylin.resize(patch.pixel_count());
  maps.eosin.resize(patch.pixel_count());
  for (std::size_t i = 0; i < patch.pixel_count(); ++i) {
    const std::uint8_t* p = patch.data.data() + i * 3;
    const Concentrations c = dec.Pixel(p[0], p[1], p[2]);
    maps.hematoxylin[i] = c.hematoxylin;
    maps.eosin[i] = c.eosin;
  }
  return maps;
}

BasisEstimate EstimateBasis(std::span<const RgbImage> patches, const StainBasis& fallback) {
  BasisEstimate est;
  est.basis = fallback;
  est.basis.Normalize();
  const Vec3& i0 = est.basis.background;

  std::vector<Eigen::Vector3d> od;
  for (const RgbImage& img : patches) {
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
      const std::uint8_t* p = img.data.data() + i * 3;
      Eigen::Vector3d v;
      for (int c = 0; c < 3; ++c) v[c] = -std::log10(std::max<int>(p[c], 1) / i0[c]);
      if (v.norm() > kBasisOdThreshold) od.push_back(v);
    }
  }
  est.pixels_used = static_cast<std::int64_t>(od.size());
  if (est.pixels_used < kMinBasisPixels) {
    est.adaptive_failed = true;
    return est;
  }

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& v : od) mean += v;
  mean /= static_cast<double>(od.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& v : od) cov += (v - mean) * (v - mean).transpose();
  cov /= static_cast<double>(od.size() - 1);

  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  // Eigenvalues ascending.
  const double l1 = eig.eigenvalues()[2], l2 = eig.eigenvalues()[1];
  if (!(l1 > 0) || l2 / l1 < 1e-3) {
    est.adaptive_failed = true;
    return est;
  }
  Eigen::Vector3d e1 = eig.eigenvectors().col(2);
  Eigen::Vector3d e2 = eig.eigenvectors().col(1);
  if (e1.sum() < 0) e1 = -e1;
  if (e2.sum() < 0) e2 = -e2;

  std::vector<double> angles;
  angles.reserve(od.size());
  for (const auto& v : od) angles.push_back(std::atan2(v.dot(e2), v.dot(e1)));
  const double lo = Percentile(angles, 0.01);
  const double hi = Percentile(angles, 0.99);
  Eigen::Vector3d a = std::cos(lo) * e1 + std::sin(lo) * e2;
  Eigen::Vector3d b = std::cos(hi) * e1 + std::sin(hi) * e2;

  auto to_vec = [](Eigen::Vector3d v, Vec3& out) {
    if (v.sum() < 0) v = -v;
    // Tiny negative components come from noise; larger ones mean the fit
    // landed outside the physical cone.
    for (int c = 0; c < 3; ++c) {
      if (v[c] < -0.05) return false;
      v[c] = std::max(v[c], 0.0);
    }
    if (v.norm() == 0) return false;
    v.normalize();
    out = {v[0], v[1], v[2]};
    return true;
  };
  Vec3 va, vb;
  if (!to_vec(a, va) || !to_vec(b, vb)) {
    est.adaptive_failed = true;
    return est;
  }
  // Hematoxylin absorbs more red than eosin.
  StainBasis fitted = est.basis;
  if (va[0] >= vb[0]) {
    fitted.hematoxylin = va;
    fitted.eosin = vb;
  } else {
    fitted.hematoxylin = vb;
    fitted.eosin = va;
  }
  try {
    fitted.Normalize();
  } catch (const Error&) {
    est.adaptive_failed = true;
    return est;
  }
  est.basis = fitted;
  return est;
}

GraySum ChannelGray(const RgbImage& patch, std::span<const double> concentration, double tau,
                    int valid_width, int valid_height) {
  GraySum s;
  for (int y = 0; y < valid_height; ++y) {
    for (int x = 0; x < valid_width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * patch.width + x;
      if (concentration[i] > tau) {
        const std::uint8_t* p = patch.data.data() + i * 3;
        s.sum += Bt601Gray(p[0], p[1], p[2]);
        ++s.count;
      }
    }
  }
  return s;
}

PatchStain MeasurePatch(const RgbImage& patch, const Deconvolver& deconvolver, double tau,
                        int valid_width, int valid_height) {
  PatchStain s;
  for (int y = 0; y < valid_height; ++y) {
    const std::uint8_t* p = patch.px(0, y);
    for (int x = 0; x < valid_width; ++x, p += 3) {
      const Concentrations c = deconvolver.Pixel(p[0], p[1], p[2]);
      if (c.hematoxylin <= tau && c.eosin <= tau) continue;
      const double g = Bt601Gray(p[0], p[1], p[2]);
      if (c.hematoxylin > tau) {
        s.hematoxylin.sum += g;
        ++s.hematoxylin.count;
      }
      if (c.eosin > tau) {
        s.eosin.sum += g;
        ++s.eosin.count;
      }
    }
  }
  return s;
}

double ScoreChannel(double v_gray, const GrayRange& range) {
  if (v_gray >= range.min && v_gray <= range.max) return 1.0;
  if (v_gray > range.max) return std::max(0.0, 1.0 - (v_gray - range.max) / range.max);
  return std::max(0.0, 1.0 - (range.min - v_gray) / range.min);
}

void StainCalibration::Validate() const {
  for (const GrayRange* r : {&hematoxylin, &eosin}) {
    if (!(r->min > 0) || r->min > r->max || r->max > 255) {
      throw Error(ErrorCode::kMalformedModel, "stain range must satisfy 0 < min <= max <= 255");
    }
  }
  if (!(tau > 0)) throw Error(ErrorCode::kMalformedModel, "tau must be positive");
  StainBasis b = basis;
  b.Normalize();
}

StainCalibration CalibrateStain(std::span<const ReferenceGray> references,
                                const StainCalibration& base) {
  if (references.size() < kMinStainReferences) {
    throw Error(ErrorCode::kTooFewSamples,
                "stain calibration needs at least 20 reference slides, got " +
                    std::to_string(references.size()));
  }
  auto range_of = [&](auto member) {
    const double n = static_cast<double>(references.size());
    double mean = 0;
    for (const auto& r : references) mean += r.*member;
    mean /= n;
    double ss = 0;
    for (const auto& r : references) ss += (r.*member - mean) * (r.*member - mean);
    const double sd = std::sqrt(ss / (n - 1));
    GrayRange g{std::clamp(mean - 2 * sd, 0.0, 255.0), std::clamp(mean + 2 * sd, 0.0, 255.0)};
    return g;
  };
  StainCalibration cal = base;
  cal.hematoxylin = range_of(&ReferenceGray::hematoxylin);
  cal.eosin = range_of(&ReferenceGray::eosin);
  cal.sample_count = static_cast<std::int64_t>(references.size());
  if (!(cal.hematoxylin.min > 0) || !(cal.eosin.min > 0)) {
    throw Error(ErrorCode::kDegenerateCalibration, "calibrated range reaches gray level 0");
  }
  return cal;
}

std::string SerializeCalibration(const StainCalibration& cal) {
  json j{{"hematoxylin", {{"min", cal.hematoxylin.min}, {"max", cal.hematoxylin.max}}},
         {"eosin", {{"min", cal.eosin.min}, {"max", cal.eosin.max}}},
         {"basis", {{"h", cal.basis.hematoxylin}, {"e", cal.basis.eosin}}},
         {"background", cal.basis.background},
         {"tau", cal.tau},
         {"sample_count", cal.sample_count}};
  return j.dump(2);
}

StainCalibration ParseCalibration(const std::string& text) {
  StainCalibration cal;
  try {
    const json j = json::parse(text);
    cal.hematoxylin = {j.at("hematoxylin").at("min").get<double>(),
                       j.at("hematoxylin").at("max").get<double>()};
    cal.eosin = {j.at("eosin").at("min").get<double>(), j.at("eosin").at("max").get<double>()};
    if (j.contains("basis")) {
      cal.basis.hematoxylin = j["basis"].at("h").get<Vec3>();
      cal.basis.eosin = j["basis"].at("e").get<Vec3>();
    }
    if (j.contains("background")) cal.basis.background = j["background"].get<Vec3>();
    cal.tau = j.value("tau", kDefaultTau);
    cal.sample_count = j.value("sample_count", std::int64_t{0});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedModel, std::string("stain calibration: ") + e.what());
  }
  cal.Validate();
  cal.basis.Normalize();
  return cal;
}

StainCalibration LoadCalibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseCalibration(ss.str());
}

void SaveCalibration(const std::filesystem::path& path, const StainCalibration& cal) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << SerializeCalibration(cal) << '\n';
}

StainMeasurement ScoreStain(const PatchStain& totals, const StainCalibration& cal) {
  StainMeasurement m;
  m.count_hematoxylin = totals.hematoxylin.count;
  m.count_eosin = totals.eosin.count;
  m.v_gray_hematoxylin = totals.hematoxylin.mean();
  m.v_gray_eosin = totals.eosin.mean();
  if (m.v_gray_hematoxylin) m.score_hematoxylin = ScoreChannel(*m.v_gray_hematoxylin, cal.hematoxylin);
  if (m.v_gray_eosin) m.score_eosin = ScoreChannel(*m.v_gray_eosin, cal.eosin);
  if (m.score_hematoxylin && m.score_eosin) {
    m.q5 = std::min(*m.score_hematoxylin, *m.score_eosin);
  } else if (m.score_hematoxylin) {
    m.q5 = m.score_hematoxylin;
  } else if (m.score_eosin) {
    m.q5 = m.score_eosin;
  }
  return m;
}

}  // namespace wsiqc::stain
