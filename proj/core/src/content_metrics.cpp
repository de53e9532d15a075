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

#include "wsiqc/content_metrics.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <string>
#include <utility>

#include "wsiqc/error.hpp"

namespace wsiqc::content {

std::string_view DetectionClassName(DetectionClass c) {
  switch (c) {
    case DetectionClass::kSquamousCell: return "squamous_cell";
    case DetectionClass::kCellMass: return "cell_mass";
    case DetectionClass::kNeutrophil: return "neutrophil";
  }
  return "?";
}

DetectionClass ParseDetectionClass(std::string_view name) {
  if (name == "squamous_cell") return DetectionClass::kSquamousCell;
  if (name == "cell_mass") return DetectionClass::kCellMass;
  if (name == "neutrophil") return DetectionClass::kNeutrophil;
  throw Error(ErrorCode::kUnknownClass, "unknown detection class '" + std::string(name) + "'");
}

std::string_view DetectionProblem(const Detection& d) {
  if (!(d.conf >= 0.0 && d.conf <= 1.0)) return "confidence outside [0, 1]";
  if (d.box.w <= 0 || d.box.h <= 0) return "empty bbox";
  if (d.box.x < 0 || d.box.y < 0 || d.box.x + d.box.w > kPatchSize ||
      d.box.y + d.box.h > kPatchSize) {
    return "bbox outside the patch";
  }
  if (d.grid_i < 0 || d.grid_j < 0) return "negative patch index";
  return {};
}

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t Find(std::size_t a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }
  // The smaller root wins, so the forest does not depend on call order.
  bool Union(std::size_t a, std::size_t b) {
    a = Find(a);
    b = Find(b);
    if (a == b) return false;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
};

double Iou1d(int a0, int a1, int b0, int b1) {
  const int inter = std::max(0, std::min(a1, b1) - std::max(a0, b0));
  const int uni = std::max(a1, b1) - std::min(a0, b0);
  return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

bool NearRight(const Box& b) {
  return b.x + b.w == kPatchSize && kPatchSize - (b.x + b.w / 2.0) <= kBorderBand;
}
bool NearLeft(const Box& b) { return b.x == 0 && b.w / 2.0 <= kBorderBand; }
bool NearBottom(const Box& b) {
  return b.y + b.h == kPatchSize && kPatchSize - (b.y + b.h / 2.0) <= kBorderBand;
}
bool NearTop(const Box& b) { return b.y == 0 && b.h / 2.0 <= kBorderBand; }

}  // namespace

std::int64_t CountObjects(std::span<const Detection> detections, DetectionClass cls,
                          double confidence_floor) {
  std::vector<const Detection*> kept;
  for (const Detection& d : detections) {
    if (d.cls == cls && d.conf >= confidence_floor) kept.push_back(&d);
  }
  auto key = [](const Detection* d) {
    return std::tuple(d->magnification, d->grid_i, d->grid_j, d->box);
  };
  std::sort(kept.begin(), kept.end(),
            [&](const Detection* a, const Detection* b) { return key(a) < key(b); });

  using Cell = std::tuple<double, std::int64_t, std::int64_t>;
  std::map<Cell, std::vector<std::size_t>> left, top;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const Detection& d = *kept[k];
    if (NearLeft(d.box)) left[{d.magnification, d.grid_i, d.grid_j}].push_back(k);
    if (NearTop(d.box)) top[{d.magnification, d.grid_i, d.grid_j}].push_back(k);
  }

  DisjointSets sets(kept.size());
  std::int64_t merges = 0;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const Detection& a = *kept[k];
    if (NearRight(a.box)) {
      auto it = left.find({a.magnification, a.grid_i, a.grid_j + 1});
      if (it != left.end()) {
        for (std::size_t o : it->second) {
          const Box& b = kept[o]->box;
          if (Iou1d(a.box.y, a.box.y + a.box.h, b.y, b.y + b.h) >= kBorderOverlap) {
            merges += sets.Union(k, o);
          }
        }
      }
    }
    if (NearBottom(a.box)) {
      auto it = top.find({a.magnification, a.grid_i + 1, a.grid_j});
      if (it != top.end()) {
        for (std::size_t o : it->second) {
          const Box& b = kept[o]->box;
          if (Iou1d(a.box.x, a.box.x + a.box.w, b.x, b.x + b.w) >= kBorderOverlap) {
            merges += sets.Union(k, o);
          }
        }
      }
    }
  }
  return static_cast<std::int64_t>(kept.size()) - merges;
}

double Q6FromCount(std::int64_t x) {
  if (x < 0) throw Error(ErrorCode::kInvalidArgument, "negative cell count");
  if (x >= kAdequateCellCount) return 1.0;
  return static_cast<double>(x) / static_cast<double>(kAdequateCellCount);
}

double Q7FromMassCount(std::int64_t mass_count) {
  if (mass_count < 0) throw Error(ErrorCode::kInvalidArgument, "negative mass count");
  if (mass_count <= kMassAllowance) return 1.0;
  return static_cast<double>(kMassAllowance) / static_cast<double>(mass_count);
}

OtsuResult Otsu(std::span<const std::int64_t, 256> histogram) {
  OtsuResult r;
  double n = 0, sum = 0, sum_sq = 0;
  for (int v = 0; v < 256; ++v) {
    const auto c = static_cast<double>(histogram[v]);
    n += c;
    sum += c * v;
    sum_sq += c * v * v;
  }
  if (n == 0) return r;
  const double mean = sum / n;
  const double total_var = sum_sq / n - mean * mean;
  if (total_var <= 1e-12) {
    r.threshold = -1;
    return r;
  }
  double best = -1, w0 = 0, s0 = 0;
  for (int t = 0; t < 255; ++t) {
    w0 += static_cast<double>(histogram[t]);
    s0 += static_cast<double>(histogram[t]) * t;
    if (w0 == 0 || w0 == n) continue;
    const double m0 = s0 / w0;
    const double m1 = (sum - s0) / (n - w0);
    const double between = w0 * (n - w0) * (m1 - m0) * (m1 - m0) / (n * n);
    if (between > best) {
      best = between;
      r.threshold = t;
      r.mean_gap = m1 - m0;
    }
  }
  r.separability = best / total_var;
  return r;
}

namespace {

Box ClipBox(const GrayImage& gray, const Box& b) {
  const int x0 = std::clamp(b.x, 0, gray.width), y0 = std::clamp(b.y, 0, gray.height);
  const int x1 = std::clamp(b.x + b.w, 0, gray.width);
  const int y1 = std::clamp(b.y + b.h, 0, gray.height);
  return {x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
}

}  // namespace

std::int64_t SegmentBox(const GrayImage& gray, const Box& box, GrayImage* mask) {
  const Box b = ClipBox(gray, box);
  std::array<std::int64_t, 256> hist{};
  for (int y = b.y; y < b.y + b.h; ++y) {
    for (int x = b.x; x < b.x + b.w; ++x) ++hist[gray.at(x, y)];
  }
  const OtsuResult o = Otsu(hist);
  if (o.separability < kMinSeparability || o.mean_gap < kMinMeanGap) return 0;
  std::int64_t n = 0;
  for (int y = b.y; y < b.y + b.h; ++y) {
    for (int x = b.x; x < b.x + b.w; ++x) {
      if (gray.at(x, y) <= o.threshold) {
        ++n;
        if (mask) mask->at(x, y) = 255;
      }
    }
  }
  return n;
}

std::int64_t BoxArea(const GrayImage& gray, const Box& box) { return SegmentBox(gray, box); }

std::int64_t BoxArea(const RgbImage& patch, const Box& box) {
  return SegmentBox(ToGray(patch), box);
}

std::int64_t PatchNeutrophilArea(const GrayImage& gray, std::span<const Box> boxes) {
  if (boxes.empty()) return 0;
  GrayImage mask(gray.width, gray.height, 0);
  for (const Box& b : boxes) SegmentBox(gray, b, &mask);
  return std::count(mask.data.begin(), mask.data.end(), std::uint8_t{255});
}

std::string_view TbsAnnotationName(TbsAnnotation a) {
  switch (a) {
    case TbsAnnotation::kNone: return "none";
    case TbsAnnotation::kInflammatoryObscuration: return "inflammatory_obscuration";
    case TbsAnnotation::kUnsatisfactory: return "unsatisfactory";
  }
  return "?";
}

std::optional<TbsAnnotation> ParseTbsAnnotation(std::string_view name) {
  for (TbsAnnotation a : {TbsAnnotation::kNone, TbsAnnotation::kInflammatoryObscuration,
                          TbsAnnotation::kUnsatisfactory}) {
    if (TbsAnnotationName(a) == name) return a;
  }
  return std::nullopt;
}

NeutrophilScore Q8FromAreas(double s_neutrophil, double s_total) {
  if (!(s_total > 0)) throw Error(ErrorCode::kZeroContentArea, "no content area for q8");
  if (s_neutrophil < 0 || s_neutrophil > s_total) {
    throw Error(ErrorCode::kInvalidArgument, "neutrophil area outside [0, S]");
  }
  NeutrophilScore s;
  s.coverage = s_neutrophil / s_total;
  s.q8 = 1.0 - s.coverage;
  if (s.coverage > 0.75) {
    s.annotation = TbsAnnotation::kUnsatisfactory;
  } else if (s.coverage >= 0.5) {
    s.annotation = TbsAnnotation::kInflammatoryObscuration;
  }
  return s;
}

}  // namespace wsiqc::content
