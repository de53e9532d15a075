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

#include "wsiqc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"
#include "wsiqc/content_metrics.hpp"
#include "wsiqc/error.hpp"
#include "wsiqc/grid_metric.hpp"

namespace wsiqc::synth {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kSlot = 40;      // placement cell for one cell/neutrophil
constexpr std::int64_t kMassSlots = 3;  // masses take 3x3 slots
constexpr double kCellMaxRadius = 15;
constexpr double kNeutrophilMaxRadius = 18;

[[noreturn]] void OutOfBounds(const std::string& what) {
  throw Error(ErrorCode::kSpecOutOfBounds, what);
}

std::uint64_t SplitMix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                      std::uint64_t c = 0) {
  return SplitMix(SplitMix(SplitMix(SplitMix(seed) ^ a) ^ b) ^ c);
}

// Half-open integer box in base pixels.
struct IBox {
  std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool Intersects(const IBox& o) const {
    return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
  }
};

// Pixels whose centres may fall inside [c - e, c + e].
std::int64_t FirstPixel(double lo) { return static_cast<std::int64_t>(std::ceil(lo - 0.5)); }
std::int64_t EndPixel(double hi) { return static_cast<std::int64_t>(std::floor(hi - 0.5)) + 1; }

struct Disk {
  double cx = 0, cy = 0, r = 0;
  bool Contains(double x, double y) const {
    return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
  }
  IBox Box() const {
    return {FirstPixel(cx - r), FirstPixel(cy - r), EndPixel(cx + r), EndPixel(cy + r)};
  }
};

struct Cell {
  double cx = 0, cy = 0, a = 0, b = 0, theta = 0;
  double eosin = 0;
  Disk nucleus;
  double conf = 1;

  double ExtentX() const {
    const double c = std::cos(theta), s = std::sin(theta);
    return std::sqrt(a * a * c * c + b * b * s * s);
  }
  double ExtentY() const {
    const double c = std::cos(theta), s = std::sin(theta);
    return std::sqrt(a * a * s * s + b * b * c * c);
  }
  IBox Box() const {
    const double ex = ExtentX(), ey = ExtentY();
    return {FirstPixel(cx - ex), FirstPixel(cy - ey), EndPixel(cx + ex), EndPixel(cy + ey)};
  }
  bool Contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = dx * c + dy * s, v = -dx * s + dy * c;
    return u * u / (a * a) + v * v / (b * b) <= 1.0;
  }
};

struct Mass {
  std::vector<Disk> disks;
  IBox box;
  double conf = 1;
  bool Contains(double x, double y) const {
    return std::any_of(disks.begin(), disks.end(),
                       [&](const Disk& d) { return d.Contains(x, y); });
  }
};

struct Neutrophil {
  Disk disk;
  double conf = 1;
};

double SegmentDistance2(const Capsule& c, double x, double y) {
  const double vx = c.x1 - c.x0, vy = c.y1 - c.y0;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((x - c.x0) * vx + (y - c.y0) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double px = c.x0 + t * vx - x, py = c.y0 + t * vy - y;
  return px * px + py * py;
}

bool InCapsule(const Capsule& c, double x, double y) {
  return SegmentDistance2(c, x, y) <= c.half_width * c.half_width;
}

IBox CapsuleBox(const Capsule& c) {
  return {FirstPixel(std::min(c.x0, c.x1) - c.half_width),
          FirstPixel(std::min(c.y0, c.y1) - c.half_width),
          EndPixel(std::max(c.x0, c.x1) + c.half_width),
          EndPixel(std::max(c.y0, c.y1) + c.half_width)};
}

IBox RingBox(const Ring& r) { return Disk{r.cx, r.cy, r.radius}.Box(); }

bool InRingRim(const Ring& r, double x, double y) {
  const double d2 = (x - r.cx) * (x - r.cx) + (y - r.cy) * (y - r.cy);
  const double inner = std::max(0.0, r.radius - r.thickness);
  return d2 <= r.radius * r.radius && d2 >= inner * inner;
}

IBox RectBox(const Rect& r) { return {r.x, r.y, r.x + r.w, r.y + r.h}; }

double Triangle(double x, double period) {
  const double f = x / period - std::floor(x / period);
  return 1.0 - std::abs(2.0 * f - 1.0);
}

double GridPattern(const SceneSpec& spec, double x, double y) {
  if (spec.grid_amplitude == 0) return 0;
  return spec.grid_amplitude *
         (Triangle(x, spec.grid_period) + Triangle(y, spec.grid_period)) / 2.0;
}

std::uint8_t Quantize(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

// Object placement ----------------------------------------------------------

struct Scene {
  std::vector<Cell> cells;
  std::vector<Mass> masses;
  std::vector<Neutrophil> neutrophils;
  std::vector<content::Detection> decoys;
};

double Uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double Confidence(std::mt19937_64& rng) {
  return std::round(Uniform(rng, 0.6, 1.0) * 1000) / 1000;
}

bool InsideOnePatch(const IBox& b) {
  // At least one pixel of margin to every patch edge.
  const std::int64_t px = b.x0 / kPatchSize, py = b.y0 / kPatchSize;
  return b.x0 > px * kPatchSize && b.y0 > py * kPatchSize &&
         b.x1 < (px + 1) * kPatchSize && b.y1 < (py + 1) * kPatchSize;
}

Scene PlaceObjects(const SceneSpec& spec) {
  Scene scene;
  std::mt19937_64 rng(MixSeed(spec.seed, 1));
  if (!spec.specimen) return scene;
  const Rect& sp = *spec.specimen;
  const std::int64_t nx = sp.w / kSlot, ny = sp.h / kSlot;
  std::vector<char> used(static_cast<std::size_t>(std::max<std::int64_t>(nx * ny, 0)), 0);
  auto slot_x = [&](std::int64_t sx) { return sp.x + sx * kSlot; };
  auto slot_y = [&](std::int64_t sy) { return sp.y + sy * kSlot; };

  for (std::int64_t m = 0; m < spec.masses; ++m) {
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      if (nx < kMassSlots || ny < kMassSlots) break;
      const auto sx = static_cast<std::int64_t>(Uniform(rng, 0, static_cast<double>(nx - 2)));
      const auto sy = static_cast<std::int64_t>(Uniform(rng, 0, static_cast<double>(ny - 2)));
      bool free = true;
      for (std::int64_t dy = 0; dy < kMassSlots; ++dy) {
        for (std::int64_t dx = 0; dx < kMassSlots; ++dx) {
          free &= !used[(sy + dy) * nx + sx + dx];
        }
      }
      if (!free) continue;
      Mass mass;
      const double cx = static_cast<double>(slot_x(sx)) + 1.5 * kSlot;
      const double cy = static_cast<double>(slot_y(sy)) + 1.5 * kSlot;
      const int n = 5 + static_cast<int>(Uniform(rng, 0, 5));
      for (int k = 0; k < n; ++k) {
        const double r = Uniform(rng, 10, 18);
        const double ang = Uniform(rng, 0, 2 * std::numbers::pi);
        const double off = Uniform(rng, 0, 22);
        mass.disks.push_back({cx + off * std::cos(ang), cy + off * std::sin(ang), r});
      }
      IBox box = mass.disks.front().Box();
      for (const Disk& d : mass.disks) {
        const IBox b = d.Box();
        box = {std::min(box.x0, b.x0), std::min(box.y0, b.y0), std::max(box.x1, b.x1),
               std::max(box.y1, b.y1)};
      }
      if (!InsideOnePatch(box)) continue;
      mass.box = box;
      mass.conf = Confidence(rng);
      for (std::int64_t dy = 0; dy < kMassSlots; ++dy) {
        for (std::int64_t dx = 0; dx < kMassSlots; ++dx) used[(sy + dy) * nx + sx + dx] = 1;
      }
      scene.masses.push_back(std::move(mass));
      placed = true;
    }
    if (!placed) OutOfBounds("no room for cell mass " + std::to_string(m));
  }

  std::vector<std::int64_t> free_slots;
  for (std::int64_t k = 0; k < nx * ny; ++k) {
    if (!used[k]) free_slots.push_back(k);
  }
  std::shuffle(free_slots.begin(), free_slots.end(), rng);
  if (static_cast<std::int64_t>(free_slots.size()) < spec.cells + spec.neutrophils) {
    OutOfBounds("specimen area holds " + std::to_string(free_slots.size()) +
                " objects, spec asks for " + std::to_string(spec.cells + spec.neutrophils));
  }

  std::size_t next = 0;
  for (std::int64_t c = 0; c < spec.cells; ++c, ++next) {
    const std::int64_t slot = free_slots[next];
    const double x0 = static_cast<double>(slot_x(slot % nx));
    const double y0 = static_cast<double>(slot_y(slot / nx));
    Cell cell;
    cell.a = Uniform(rng, spec.cell_radius_min, spec.cell_radius_max);
    cell.b = Uniform(rng, spec.cell_radius_min, cell.a);
    cell.theta = Uniform(rng, 0, std::numbers::pi);
    const double ex = cell.ExtentX() + 1, ey = cell.ExtentY() + 1;
    // Box stays one pixel inside the slot, so boxes of different objects
    // never touch.
    cell.cx = Uniform(rng, x0 + 1 + ex, x0 + kSlot - 1 - ex);
    cell.cy = Uniform(rng, y0 + 1 + ey, y0 + kSlot - 1 - ey);
    cell.eosin = spec.cytoplasm_eosin * Uniform(rng, 0.9, 1.1);
    cell.nucleus = {cell.cx, cell.cy, std::min(spec.nucleus_radius, cell.b * 0.6)};
    cell.conf = Confidence(rng);
    scene.cells.push_back(cell);
  }

  for (std::int64_t n = 0; n < spec.neutrophils; ++n) {
    bool placed = false;
    while (!placed) {
      if (next >= free_slots.size()) OutOfBounds("no room for neutrophil " + std::to_string(n));
      const std::int64_t slot = free_slots[next++];
      const double x0 = static_cast<double>(slot_x(slot % nx));
      const double y0 = static_cast<double>(slot_y(slot / nx));
      for (int attempt = 0; attempt < 8 && !placed; ++attempt) {
        Neutrophil nt;
        nt.disk.r = Uniform(rng, spec.neutrophil_radius_min, spec.neutrophil_radius_max);
        const double e = nt.disk.r + 1;
        nt.disk.cx = Uniform(rng, x0 + 1 + e, x0 + kSlot - 1 - e);
        nt.disk.cy = Uniform(rng, y0 + 1 + e, y0 + kSlot - 1 - e);
        if (!InsideOnePatch(nt.disk.Box())) continue;
        nt.conf = Confidence(rng);
        scene.neutrophils.push_back(nt);
        placed = true;
      }
    }
  }

  for (std::int64_t d = 0; d < spec.decoys; ++d) {
    content::Detection det;
    det.magnification = spec.content_magnification;
    const std::int64_t px = sp.x + static_cast<std::int64_t>(Uniform(rng, 0, static_cast<double>(sp.w)));
    const std::int64_t py = sp.y + static_cast<std::int64_t>(Uniform(rng, 0, static_cast<double>(sp.h)));
    det.grid_i = py / kPatchSize;
    det.grid_j = px / kPatchSize;
    det.cls = static_cast<content::DetectionClass>(static_cast<int>(Uniform(rng, 0, 3)));
    det.box.w = 8 + static_cast<int>(Uniform(rng, 0, 24));
    det.box.h = 8 + static_cast<int>(Uniform(rng, 0, 24));
    det.box.x = static_cast<int>(Uniform(rng, 0, kPatchSize - det.box.w));
    det.box.y = static_cast<int>(Uniform(rng, 0, kPatchSize - det.box.h));
    det.conf = std::round(Uniform(rng, 0.05, 0.45) * 1000) / 1000;
    scene.decoys.push_back(det);
  }
  return scene;
}

// Rendering -------------------------------------------------------------------

// Optical density (per RGB channel) over a window of the base raster.
struct OdBuffer {
  std::int64_t x0 = 0, y0 = 0;
  int w = 0, h = 0;
  std::array<std::vector<float>, 3> od;

  OdBuffer(std::int64_t x, std::int64_t y, int width, int height) : x0(x), y0(y), w(width), h(height) {
    for (auto& c : od) c.assign(static_cast<std::size_t>(w) * h, 0.0f);
  }
  IBox Box() const { return {x0, y0, x0 + w, y0 + h}; }
  void Add(int x, int y, const stain::Vec3& v, double scale) {
    const std::size_t i = static_cast<std::size_t>(y) * w + x;
    for (int c = 0; c < 3; ++c) od[c][i] += static_cast<float>(v[c] * scale);
  }
};

template <typename Fn>
void ForPixels(const OdBuffer& buf, const IBox& box, Fn&& fn) {
  const std::int64_t xa = std::max(box.x0, buf.x0), xb = std::min(box.x1, buf.x0 + buf.w);
  const std::int64_t ya = std::max(box.y0, buf.y0), yb = std::min(box.y1, buf.y0 + buf.h);
  for (std::int64_t y = ya; y < yb; ++y) {
    for (std::int64_t x = xa; x < xb; ++x) {
      fn(static_cast<int>(x - buf.x0), static_cast<int>(y - buf.y0), static_cast<double>(x) + 0.5,
         static_cast<double>(y) + 0.5);
    }
  }
}

void PaintScene(const SceneSpec& spec, const Scene& scene, const stain::StainBasis& basis,
                OdBuffer& buf) {
  const IBox area = buf.Box();
  const stain::Vec3& hv = basis.hematoxylin;
  const stain::Vec3& ev = basis.eosin;
  if (spec.specimen && spec.wash_eosin > 0) {
    const IBox sp = RectBox(*spec.specimen);
    if (sp.Intersects(area)) {
      ForPixels(buf, sp, [&](int x, int y, double, double) { buf.Add(x, y, ev, spec.wash_eosin); });
    }
  }
  for (const Cell& c : scene.cells) {
    const IBox b = c.Box();
    if (!b.Intersects(area)) continue;
    ForPixels(buf, b, [&](int x, int y, double px, double py) {
      if (c.nucleus.Contains(px, py)) {
        buf.Add(x, y, hv, spec.nucleus_hematoxylin);
      } else if (c.Contains(px, py)) {
        buf.Add(x, y, ev, c.eosin);
      }
    });
  }
  for (const Mass& m : scene.masses) {
    if (!m.box.Intersects(area)) continue;
    ForPixels(buf, m.box, [&](int x, int y, double px, double py) {
      if (m.Contains(px, py)) {
        buf.Add(x, y, hv, spec.mass_hematoxylin);
        buf.Add(x, y, ev, spec.mass_eosin);
      }
    });
  }
  for (const Neutrophil& n : scene.neutrophils) {
    const IBox b = n.disk.Box();
    if (!b.Intersects(area)) continue;
    ForPixels(buf, b, [&](int x, int y, double px, double py) {
      if (n.disk.Contains(px, py)) buf.Add(x, y, hv, spec.neutrophil_hematoxylin);
    });
  }
  for (const Capsule& c : spec.markers) {
    const IBox b = CapsuleBox(c);
    if (!b.Intersects(area)) continue;
    ForPixels(buf, b, [&](int x, int y, double px, double py) {
      if (InCapsule(c, px, py)) buf.Add(x, y, c.od, 1.0);
    });
  }
  for (const Ring& r : spec.bubbles) {
    const IBox b = RingBox(r);
    if (!b.Intersects(area)) continue;
    const stain::Vec3 gray{1, 1, 1};
    ForPixels(buf, b, [&](int x, int y, double px, double py) {
      if (InRingRim(r, px, py)) buf.Add(x, y, gray, r.od);
    });
  }
}

std::vector<double> GaussianKernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

int BlurHalo(double sigma) { return static_cast<int>(std::ceil(3 * sigma)); }

// Replaces the OD inside `target` (buffer coordinates) with its Gaussian blur.
// The buffer must extend the halo beyond `target` on every side.
void BlurInside(OdBuffer& buf, const IBox& target, double sigma) {
  if (sigma <= 0) return;
  const auto k = GaussianKernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int tx0 = static_cast<int>(target.x0), tx1 = static_cast<int>(target.x1);
  const int ty0 = static_cast<int>(target.y0), ty1 = static_cast<int>(target.y1);
  const int rows = (ty1 - ty0) + 2 * r, cols = tx1 - tx0;
  std::vector<double> tmp(static_cast<std::size_t>(rows) * cols);
  for (auto& plane : buf.od) {
    for (int y = 0; y < rows; ++y) {
      const int sy = std::clamp(ty0 - r + y, 0, buf.h - 1);
      for (int x = 0; x < cols; ++x) {
        double acc = 0;
        for (int t = -r; t <= r; ++t) {
          const int sx = std::clamp(tx0 + x + t, 0, buf.w - 1);
          acc += k[t + r] * plane[static_cast<std::size_t>(sy) * buf.w + sx];
        }
        tmp[static_cast<std::size_t>(y) * cols + x] = acc;
      }
    }
    for (int y = 0; y < ty1 - ty0; ++y) {
      for (int x = 0; x < cols; ++x) {
        double acc = 0;
        for (int t = -r; t <= r; ++t) {
          acc += k[t + r] * tmp[static_cast<std::size_t>(y + r + t) * cols + x];
        }
        plane[static_cast<std::size_t>(ty0 + y) * buf.w + tx0 + x] = static_cast<float>(acc);
      }
    }
  }
}

struct TileStats {
  stain::PatchStain stain;
  std::int64_t blurred = 0;
};

// Renders base tile (row, col) into `base` and returns its noise-free stain
// statistics under the default calibration.
TileStats RenderTile(const SceneSpec& spec, const Scene& scene, std::int64_t row,
                     std::int64_t col, const stain::Deconvolver& reference,
                     bool background_passes_tau, RgbImage& base) {
  const std::int64_t tx0 = col * kPatchSize, ty0 = row * kPatchSize;
  const int tw = static_cast<int>(std::min<std::int64_t>(kPatchSize, spec.width - tx0));
  const int th = static_cast<int>(std::min<std::int64_t>(kPatchSize, spec.height - ty0));
  const IBox tile{tx0, ty0, tx0 + tw, ty0 + th};

  int halo = 0;
  for (const BlurRegion& b : spec.blur) {
    if (RectBox(b.rect).Intersects(tile)) halo = std::max(halo, BlurHalo(b.sigma));
  }
  OdBuffer buf(tx0 - halo, ty0 - halo, tw + 2 * halo, th + 2 * halo);
  PaintScene(spec, scene, spec.basis, buf);

  TileStats stats;
  std::vector<char> blurred;
  for (const BlurRegion& b : spec.blur) {
    const IBox r = RectBox(b.rect);
    if (!r.Intersects(tile)) continue;
    const IBox inter{std::max(r.x0, tile.x0), std::max(r.y0, tile.y0), std::min(r.x1, tile.x1),
                     std::min(r.y1, tile.y1)};
    BlurInside(buf, {inter.x0 - buf.x0, inter.y0 - buf.y0, inter.x1 - buf.x0, inter.y1 - buf.y0},
               b.sigma);
    if (blurred.empty()) blurred.assign(static_cast<std::size_t>(tw) * th, 0);
    for (std::int64_t y = inter.y0; y < inter.y1; ++y) {
      for (std::int64_t x = inter.x0; x < inter.x1; ++x) {
        blurred[(y - ty0) * tw + (x - tx0)] = 1;
      }
    }
  }
  if (!blurred.empty()) stats.blurred = std::count(blurred.begin(), blurred.end(), 1);

  std::mt19937_64 rng(MixSeed(spec.seed, 2, static_cast<std::uint64_t>(row),
                              static_cast<std::uint64_t>(col)));
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0 ? spec.noise_sigma : 1.0);
  const double tau = stain::kDefaultTau;
  constexpr double kLn10 = std::numbers::ln10;

  for (int y = 0; y < th; ++y) {
    for (int x = 0; x < tw; ++x) {
      const std::size_t bi = static_cast<std::size_t>(y + halo) * buf.w + (x + halo);
      const double g = GridPattern(spec, static_cast<double>(tx0 + x) + 0.5,
                                   static_cast<double>(ty0 + y) + 0.5);
      stain::Vec3 clean;
      bool stained = false;
      for (int c = 0; c < 3; ++c) {
        const double od = buf.od[c][bi];
        stained |= od != 0;
        clean[c] = spec.background * std::exp(-od * kLn10) + g;
      }
      const double n = spec.noise_sigma > 0 ? noise(rng) : 0.0;
      std::uint8_t* p = base.px(static_cast<int>(tx0 + x), static_cast<int>(ty0 + y));
      for (int c = 0; c < 3; ++c) p[c] = Quantize(clean[c] + n);

      if (!stained && !background_passes_tau) continue;
      const stain::Concentrations conc = reference.Intensity(clean);
      if (conc.hematoxylin <= tau && conc.eosin <= tau) continue;
      const double gray = 0.299 * clean[0] + 0.587 * clean[1] + 0.114 * clean[2];
      if (conc.hematoxylin > tau) {
        stats.stain.hematoxylin.sum += gray;
        ++stats.stain.hematoxylin.count;
      }
      if (conc.eosin > tau) {
        stats.stain.eosin.sum += gray;
        ++stats.stain.eosin.count;
      }
    }
  }
  return stats;
}

std::vector<Rational> LevelFactors(const SceneSpec& spec) {
  std::vector<Rational> f;
  for (double v : spec.levels) f.push_back(Rational::FromDouble(v, 1000));
  return f;
}

// Column (or row) averages of the stitching triangle wave at `ratio` base
// pixels per output pixel.
std::vector<double> DownsampledTriangle(double period, Rational ratio, std::int64_t first,
                                        std::int64_t count) {
  std::vector<double> out(static_cast<std::size_t>(count));
  const double s = ratio.value();
  for (std::int64_t k = 0; k < count; ++k) {
    const double lo = static_cast<double>(first + k) * s, hi = lo + s;
    double acc = 0;
    for (auto b = static_cast<std::int64_t>(std::floor(lo)); static_cast<double>(b) < hi; ++b) {
      const double w = std::min(hi, static_cast<double>(b + 1)) - std::max(lo, static_cast<double>(b));
      if (w > 0) acc += w * Triangle(static_cast<double>(b) + 0.5, period);
    }
    out[static_cast<std::size_t>(k)] = acc / s;
  }
  return out;
}

double Variance(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size());
}

}  // namespace

// Spec validation and JSON ------------------------------------------------------

void Validate(const SceneSpec& spec) {
  if (spec.width < kPatchSize || spec.height < kPatchSize || spec.width > 32768 ||
      spec.height > 32768) {
    OutOfBounds("slide dimensions must lie in [512, 32768]");
  }
  if (spec.levels.empty() || spec.levels.front() != 1.0) {
    OutOfBounds("the first level factor must be 1");
  }
  for (std::size_t k = 1; k < spec.levels.size(); ++k) {
    if (!(spec.levels[k] > 0 && spec.levels[k] < spec.levels[k - 1])) {
      OutOfBounds("level factors must be positive and strictly decreasing");
    }
  }
  if (!(spec.base_magnification > 0)) OutOfBounds("base magnification must be positive");
  if (spec.content_magnification != spec.base_magnification) {
    OutOfBounds("the content magnification must equal the base magnification");
  }
  if (!(spec.artifact_magnification > 0) ||
      spec.artifact_magnification > spec.base_magnification) {
    OutOfBounds("artifact magnification must lie in (0, base]");
  }
  if (!(spec.background > kWhiteLevel && spec.background <= 255)) {
    OutOfBounds("background must be brighter than 200 and at most 255");
  }
  if (spec.noise_sigma < 0 || spec.noise_sigma > 50) OutOfBounds("noise sigma out of range");
  if (spec.grid_amplitude < 0 || !(spec.grid_period >= 2)) OutOfBounds("bad grid pattern");
  const IBox slide{0, 0, spec.width, spec.height};
  auto inside = [&](const IBox& b) {
    return b.x0 >= slide.x0 && b.y0 >= slide.y0 && b.x1 <= slide.x1 && b.y1 <= slide.y1;
  };
  if (spec.specimen) {
    if (spec.specimen->w <= 0 || spec.specimen->h <= 0 || !inside(RectBox(*spec.specimen))) {
      OutOfBounds("specimen rectangle outside the slide");
    }
  } else if (spec.cells > 0 || spec.masses > 0 || spec.neutrophils > 0 || spec.decoys > 0) {
    OutOfBounds("cells, masses, neutrophils and decoys need a specimen rectangle");
  }
  if (spec.cells < 0 || spec.masses < 0 || spec.neutrophils < 0 || spec.decoys < 0) {
    OutOfBounds("object counts must be non-negative");
  }
  if (!(spec.cell_radius_min > 1 && spec.cell_radius_min <= spec.cell_radius_max &&
        spec.cell_radius_max <= kCellMaxRadius)) {
    OutOfBounds("cell radii must satisfy 1 < min <= max <= 15");
  }
  if (!(spec.neutrophil_radius_min > 1 && spec.neutrophil_radius_min <= spec.neutrophil_radius_max &&
        spec.neutrophil_radius_max <= kNeutrophilMaxRadius)) {
    OutOfBounds("neutrophil radii must satisfy 1 < min <= max <= 18");
  }
  for (double c : {spec.wash_eosin, spec.cytoplasm_eosin, spec.nucleus_hematoxylin,
                   spec.mass_hematoxylin, spec.mass_eosin, spec.neutrophil_hematoxylin}) {
    if (c < 0 || c > 5) OutOfBounds("stain concentrations must lie in [0, 5]");
  }
  for (const Capsule& c : spec.markers) {
    if (!(c.half_width > 0) || !inside(CapsuleBox(c))) OutOfBounds("marker stroke outside the slide");
    for (double v : c.od) {
      if (v < 0) OutOfBounds("marker optical density must be non-negative");
    }
  }
  for (const Ring& r : spec.bubbles) {
    if (!(r.radius > 0) || r.thickness < 0 || r.od < 0 || !inside(RingBox(r))) {
      OutOfBounds("bubble outside the slide");
    }
  }
  for (const BlurRegion& b : spec.blur) {
    if (b.rect.w <= 0 || b.rect.h <= 0 || !inside(RectBox(b.rect)) || b.sigma < 0 || b.sigma > 20) {
      OutOfBounds("blur region outside the slide or sigma outside [0, 20]");
    }
  }
  stain::StainBasis basis = spec.basis;
  basis.Normalize();
}

namespace {

json RectJson(const Rect& r) { return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }

Rect RectFrom(const json& j) {
  return {j.at("x").get<std::int64_t>(), j.at("y").get<std::int64_t>(),
          j.at("w").get<std::int64_t>(), j.at("h").get<std::int64_t>()};
}

}  // namespace

std::string SerializeSpec(const SceneSpec& s) {
  json j;
  j["seed"] = s.seed;
  j["width"] = s.width;
  j["height"] = s.height;
  j["base_magnification"] = s.base_magnification;
  j["levels"] = s.levels;
  j["artifact_magnification"] = s.artifact_magnification;
  j["content_magnification"] = s.content_magnification;
  j["background"] = s.background;
  j["noise_sigma"] = s.noise_sigma;
  if (s.specimen) j["specimen"] = RectJson(*s.specimen);
  j["wash_eosin"] = s.wash_eosin;
  j["cells"] = {{"count", s.cells},
                {"radius_min", s.cell_radius_min},
                {"radius_max", s.cell_radius_max},
                {"cytoplasm_eosin", s.cytoplasm_eosin},
                {"nucleus_radius", s.nucleus_radius},
                {"nucleus_hematoxylin", s.nucleus_hematoxylin}};
  j["masses"] = {{"count", s.masses},
                 {"hematoxylin", s.mass_hematoxylin},
                 {"eosin", s.mass_eosin}};
  j["neutrophils"] = {{"count", s.neutrophils},
                      {"radius_min", s.neutrophil_radius_min},
                      {"radius_max", s.neutrophil_radius_max},
                      {"hematoxylin", s.neutrophil_hematoxylin}};
  j["decoys"] = s.decoys;
  j["markers"] = json::array();
  for (const Capsule& c : s.markers) {
    j["markers"].push_back({{"x0", c.x0}, {"y0", c.y0}, {"x1", c.x1}, {"y1", c.y1},
                            {"half_width", c.half_width}, {"od", c.od}});
  }
  j["bubbles"] = json::array();
  for (const Ring& r : s.bubbles) {
    j["bubbles"].push_back({{"cx", r.cx}, {"cy", r.cy}, {"radius", r.radius},
                            {"thickness", r.thickness}, {"od", r.od}});
  }
  j["blur"] = json::array();
  for (const BlurRegion& b : s.blur) {
    json e = RectJson(b.rect);
    e["sigma"] = b.sigma;
    j["blur"].push_back(e);
  }
  j["grid"] = {{"amplitude", s.grid_amplitude}, {"period", s.grid_period}};
  j["basis"] = {{"h", s.basis.hematoxylin}, {"e", s.basis.eosin}};
  return j.dump(2);
}

SceneSpec ParseSpec(const std::string& text) {
  SceneSpec s;
  try {
    const json j = json::parse(text);
    s.seed = j.value("seed", s.seed);
    s.width = j.value("width", s.width);
    s.height = j.value("height", s.height);
    s.base_magnification = j.value("base_magnification", s.base_magnification);
    s.levels = j.value("levels", s.levels);
    s.artifact_magnification = j.value("artifact_magnification", s.artifact_magnification);
    s.content_magnification = j.value("content_magnification", s.content_magnification);
    s.background = j.value("background", s.background);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    if (j.contains("specimen") && !j["specimen"].is_null()) s.specimen = RectFrom(j["specimen"]);
    s.wash_eosin = j.value("wash_eosin", s.wash_eosin);
    if (j.contains("cells")) {
      const json& c = j["cells"];
      s.cells = c.value("count", s.cells);
      s.cell_radius_min = c.value("radius_min", s.cell_radius_min);
      s.cell_radius_max = c.value("radius_max", s.cell_radius_max);
      s.cytoplasm_eosin = c.value("cytoplasm_eosin", s.cytoplasm_eosin);
      s.nucleus_radius = c.value("nucleus_radius", s.nucleus_radius);
      s.nucleus_hematoxylin = c.value("nucleus_hematoxylin", s.nucleus_hematoxylin);
    }
    if (j.contains("masses")) {
      const json& m = j["masses"];
      s.masses = m.value("count", s.masses);
      s.mass_hematoxylin = m.value("hematoxylin", s.mass_hematoxylin);
      s.mass_eosin = m.value("eosin", s.mass_eosin);
    }
    if (j.contains("neutrophils")) {
      const json& n = j["neutrophils"];
      s.neutrophils = n.value("count", s.neutrophils);
      s.neutrophil_radius_min = n.value("radius_min", s.neutrophil_radius_min);
      s.neutrophil_radius_max = n.value("radius_max", s.neutrophil_radius_max);
      s.neutrophil_hematoxylin = n.value("hematoxylin", s.neutrophil_hematoxylin);
    }
    s.decoys = j.value("decoys", s.decoys);
    for (const json& m : j.value("markers", json::array())) {
      Capsule c;
      c.x0 = m.at("x0").get<double>();
      c.y0 = m.at("y0").get<double>();
      c.x1 = m.at("x1").get<double>();
      c.y1 = m.at("y1").get<double>();
      c.half_width = m.value("half_width", c.half_width);
      c.od = m.value("od", c.od);
      s.markers.push_back(c);
    }
    for (const json& b : j.value("bubbles", json::array())) {
      Ring r;
      r.cx = b.at("cx").get<double>();
      r.cy = b.at("cy").get<double>();
      r.radius = b.value("radius", r.radius);
      r.thickness = b.value("thickness", r.thickness);
      r.od = b.value("od", r.od);
      s.bubbles.push_back(r);
    }
    for (const json& b : j.value("blur", json::array())) {
      s.blur.push_back({RectFrom(b), b.value("sigma", 2.0)});
    }
    if (j.contains("grid")) {
      s.grid_amplitude = j["grid"].value("amplitude", s.grid_amplitude);
      s.grid_period = j["grid"].value("period", s.grid_period);
    }
    if (j.contains("basis")) {
      s.basis.hematoxylin = j["basis"].at("h").get<stain::Vec3>();
      s.basis.eosin = j["basis"].at("e").get<stain::Vec3>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("scene spec: ") + e.what());
  }
  Validate(s);
  return s;
}

SceneSpec LoadSpec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseSpec(ss.str());
}

std::string SerializeGroundTruth(const GroundTruth& t) {
  json metrics = json::object();
  for (int k = 0; k < kMetricCount; ++k) {
    json m{{"value", t.metrics.values[k]}, {"evaluable", static_cast<bool>(t.metrics.evaluable[k])}};
    if (!t.has_reference[k]) m["value"] = nullptr;
    metrics[std::string(MetricName(k))] = m;
  }
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j{{"metrics", metrics},
         {"artifact_patches", t.artifact_patches},
         {"content_patches", t.content_patches},
         {"background_patches", t.background_patches},
         {"cell_count", t.cell_count},
         {"mass_count", t.mass_count},
         {"s_neutrophil", t.s_neutrophil},
         {"s_total", t.s_total},
         {"marker_occlusion", t.marker_occlusion},
         {"bubble_occlusion", t.bubble_occlusion},
         {"v_gray_hematoxylin", opt(t.v_gray_hematoxylin)},
         {"v_gray_eosin", opt(t.v_gray_eosin)},
         {"grid_delta", t.grid_delta},
         {"grid_v_nogrid", t.grid_v_nogrid},
         {"blurred_fraction", t.blurred_fraction}};
  return j.dump(2);
}

// Generation ------------------------------------------------------------------

double RoundingVariance(std::int64_t n) {
  if (n <= 0) throw Error(ErrorCode::kInvalidArgument, "n must be positive");
  double mean = 0, sq = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    const double f = static_cast<double>(k) / static_cast<double>(n);
    const double e = (f >= 0.5 ? 1.0 : 0.0) - f;
    mean += e;
    sq += e * e;
  }
  mean /= static_cast<double>(n);
  return sq / static_cast<double>(n) - mean * mean;
}

double AnalyticBackgroundVariance(const SceneSpec& spec, double magnification) {
  const double base_var = spec.noise_sigma * spec.noise_sigma + 1.0 / 12.0;
  const Rational ratio = Rational::FromDouble(spec.base_magnification / magnification, 1000);
  if (ratio.den == 1) {
    const std::int64_t n = ratio.num * ratio.num;
    return n == 1 ? base_var : base_var / static_cast<double>(n) + RoundingVariance(n);
  }
  const double s = ratio.value();
  return base_var / (s * s) + 1.0 / 12.0;
}

SlideHandle SyntheticSlide::AsSlide() const {
  return MakeMemorySlide(id, base_magnification, factors, rasters);
}

SyntheticSlide GenerateSlide(const SceneSpec& spec) {
  Validate(spec);
  const Scene scene = PlaceObjects(spec);

  SyntheticSlide out;
  out.id = "synthetic-" + std::to_string(spec.seed);
  out.base_magnification = spec.base_magnification;
  out.factors = LevelFactors(spec);

  // Base raster, tile by tile; noise streams are keyed by tile so the result
  // does not depend on traversal order.
  RgbImage base(static_cast<int>(spec.width), static_cast<int>(spec.height));
  const stain::StainCalibration reference_cal;
  const stain::Deconvolver reference(reference_cal.basis);
  bool background_passes_tau = false;
  for (double g : {0.0, spec.grid_amplitude}) {
    const double v = spec.background + g;
    const auto c = reference.Intensity({v, v, v});
    background_passes_tau |= c.hematoxylin > stain::kDefaultTau || c.eosin > stain::kDefaultTau;
  }
  const std::int64_t rows = (spec.height + kPatchSize - 1) / kPatchSize;
  const std::int64_t cols = (spec.width + kPatchSize - 1) / kPatchSize;
  std::vector<TileStats> tiles(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      tiles[r * cols + c] = RenderTile(spec, scene, r, c, reference, background_passes_tau, base);
    }
  }
  out.rasters = BuildLevels(base, out.factors);
  const SlideHandle slide = out.AsSlide();

  GroundTruth& truth = out.truth;
  truth.has_reference.fill(true);
  truth.has_reference[Index(MetricId::kFocus)] = false;

  // Content classification at the content power (the base raster).
  const PatchGrid content_grid = slide->Patches(spec.content_magnification);
  std::vector<char> content_patch(content_grid.size(), 0);
  stain::PatchStain stain_totals;
  std::int64_t blurred = 0;
  for (std::size_t k = 0; k < content_grid.size(); ++k) {
    const std::int64_t i = static_cast<std::int64_t>(k) / content_grid.cols();
    const std::int64_t j = static_cast<std::int64_t>(k) % content_grid.cols();
    const int vw = static_cast<int>(std::min<std::int64_t>(kPatchSize, spec.width - j * kPatchSize));
    const int vh = static_cast<int>(std::min<std::int64_t>(kPatchSize, spec.height - i * kPatchSize));
    const RgbImage tile = Crop(base, static_cast<int>(j * kPatchSize),
                               static_cast<int>(i * kPatchSize), kPatchSize, kPatchSize);
    if (CountWhite(tile, vw, vh).is_white()) continue;
    content_patch[k] = 1;
    ++truth.content_patches;
    stain_totals.hematoxylin += tiles[k].stain.hematoxylin;
    stain_totals.eosin += tiles[k].stain.eosin;
    blurred += tiles[k].blurred;
  }
  auto is_content = [&](std::int64_t i, std::int64_t j) {
    return i >= 0 && j >= 0 && i < content_grid.rows() && j < content_grid.cols() &&
           content_patch[i * content_grid.cols() + j];
  };

  // Oracle detections, clipped per patch.
  auto emit = [&](content::DetectionClass cls, const IBox& box, double conf, bool& any_content) {
    for (std::int64_t i = box.y0 / kPatchSize; i <= (box.y1 - 1) / kPatchSize; ++i) {
      for (std::int64_t j = box.x0 / kPatchSize; j <= (box.x1 - 1) / kPatchSize; ++j) {
        const std::int64_t px = j * kPatchSize, py = i * kPatchSize;
        content::Detection d;
        d.magnification = spec.content_magnification;
        d.grid_i = i;
        d.grid_j = j;
        d.cls = cls;
        const std::int64_t x0 = std::max(box.x0, px), x1 = std::min(box.x1, px + kPatchSize);
        const std::int64_t y0 = std::max(box.y0, py), y1 = std::min(box.y1, py + kPatchSize);
        d.box = {static_cast<int>(x0 - px), static_cast<int>(y0 - py), static_cast<int>(x1 - x0),
                 static_cast<int>(y1 - y0)};
        d.conf = conf;
        out.oracle.detections.push_back(d);
        any_content |= is_content(i, j);
      }
    }
  };
  for (const Cell& c : scene.cells) {
    bool any = false;
    emit(content::DetectionClass::kSquamousCell, c.Box(), c.conf, any);
    truth.cell_count += any;
  }
  for (const Mass& m : scene.masses) {
    bool any = false;
    emit(content::DetectionClass::kCellMass, m.box, m.conf, any);
    truth.mass_count += any;
  }
  for (const Neutrophil& n : scene.neutrophils) {
    bool any = false;
    const IBox b = n.disk.Box();
    emit(content::DetectionClass::kNeutrophil, b, n.conf, any);
    if (!any) continue;
    for (std::int64_t y = b.y0; y < b.y1; ++y) {
      for (std::int64_t x = b.x0; x < b.x1; ++x) {
        truth.s_neutrophil += n.disk.Contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      }
    }
  }
  for (const content::Detection& d : scene.decoys) out.oracle.detections.push_back(d);
  out.oracle.provenance = backend::Provenance::kOracle;
  out.oracle.producer = "wsiqc-synth";
  out.oracle.version = "1";

  MetricVector& q = truth.metrics;
  if (truth.content_patches > 0) {
    truth.s_total = static_cast<double>(truth.content_patches) * kPatchSize * kPatchSize;
    truth.blurred_fraction = static_cast<double>(blurred) / truth.s_total;
    q.Set(MetricId::kFocus, 1.0);
    q.Set(MetricId::kCellCount, content::Q6FromCount(truth.cell_count));
    q.Set(MetricId::kCellMass, content::Q7FromMassCount(truth.mass_count));
    q.Set(MetricId::kNeutrophil, content::Q8FromAreas(truth.s_neutrophil, truth.s_total).q8);
    const stain::StainMeasurement sm = stain::ScoreStain(stain_totals, reference_cal);
    truth.v_gray_hematoxylin = sm.v_gray_hematoxylin;
    truth.v_gray_eosin = sm.v_gray_eosin;
    if (sm.q5) {
      q.Set(MetricId::kStain, *sm.q5);
    } else {
      q.MarkNotEvaluable(MetricId::kStain);
    }
  } else {
    for (MetricId id : {MetricId::kFocus, MetricId::kStain, MetricId::kCellCount,
                        MetricId::kCellMass, MetricId::kNeutrophil}) {
      q.MarkNotEvaluable(id);
    }
  }

  // Artifact power: content classification, masks, q1, q3, q4.
  const double amag = spec.artifact_magnification;
  const PatchGrid art = slide->Patches(amag);
  std::vector<char> art_content(art.size(), 0);
  std::vector<grid::BackgroundCandidate> candidates;
  for (std::size_t k = 0; k < art.size(); ++k) {
    const PatchRecord p = art.Read(k);
    art_content[k] = !p.is_white;
    truth.artifact_patches += !p.is_white;
    if (p.is_white) candidates.push_back({p.grid_i, p.grid_j, p.white_fraction, true});
  }
  truth.background_patches = static_cast<std::int64_t>(candidates.size());

  const double s = spec.base_magnification / amag;  // base pixels per artifact pixel
  std::map<std::tuple<std::int64_t, std::int64_t, int>, GrayImage> masks;
  auto paint_mask = [&](artifact::MaskClass cls, const IBox& base_box, auto&& inside) {
    const auto ax0 = static_cast<std::int64_t>(std::floor(static_cast<double>(base_box.x0) / s));
    const auto ay0 = static_cast<std::int64_t>(std::floor(static_cast<double>(base_box.y0) / s));
    const auto ax1 = std::min<std::int64_t>(
        art.width(), static_cast<std::int64_t>(std::ceil(static_cast<double>(base_box.x1) / s)) + 1);
    const auto ay1 = std::min<std::int64_t>(
        art.height(), static_cast<std::int64_t>(std::ceil(static_cast<double>(base_box.y1) / s)) + 1);
    for (std::int64_t y = std::max<std::int64_t>(ay0, 0); y < ay1; ++y) {
      for (std::int64_t x = std::max<std::int64_t>(ax0, 0); x < ax1; ++x) {
        if (!inside((static_cast<double>(x) + 0.5) * s, (static_cast<double>(y) + 0.5) * s)) continue;
        auto key = std::tuple(y / kPatchSize, x / kPatchSize, static_cast<int>(cls));
        auto it = masks.find(key);
        if (it == masks.end()) it = masks.emplace(key, GrayImage(kPatchSize, kPatchSize, 0)).first;
        it->second.at(static_cast<int>(x % kPatchSize), static_cast<int>(y % kPatchSize)) = 255;
      }
    }
  };
  for (const Capsule& c : spec.markers) {
    paint_mask(artifact::MaskClass::kMarker, CapsuleBox(c),
               [&](double x, double y) { return InCapsule(c, x, y); });
  }
  for (const Ring& r : spec.bubbles) {
    const Disk d{r.cx, r.cy, r.radius};
    paint_mask(artifact::MaskClass::kBubble, RingBox(r),
               [&](double x, double y) { return d.Contains(x, y); });
  }
  for (auto& [key, bits] : masks) {
    const auto [i, j, cls] = key;
    artifact::SegMask m;
    m.magnification = amag;
    m.grid_i = i;
    m.grid_j = j;
    m.mask_class = static_cast<artifact::MaskClass>(cls);
    m.bits = std::move(bits);
    if (art_content[static_cast<std::size_t>(i * art.cols() + j)]) {
      const double ratio = artifact::PatchOcclusion(m);
      (m.mask_class == artifact::MaskClass::kMarker ? truth.marker_occlusion
                                                    : truth.bubble_occlusion) += ratio;
    }
    out.oracle.masks.push_back(std::move(m));
  }
  if (truth.artifact_patches > 0) {
    const double m = static_cast<double>(truth.artifact_patches);
    q.Set(MetricId::kMarker, std::clamp(1.0 - truth.marker_occlusion / m, 0.0, 1.0));
    q.Set(MetricId::kBubble, std::clamp(1.0 - truth.bubble_occlusion / m, 0.0, 1.0));
  } else {
    q.MarkNotEvaluable(MetricId::kMarker);
    q.MarkNotEvaluable(MetricId::kBubble);
  }

  truth.grid_v_nogrid = AnalyticBackgroundVariance(spec, amag);
  if (candidates.size() >= grid::kBackgroundPatches) {
    const auto chosen = grid::SelectContentFreePatches(candidates, art.rows(), art.cols());
    const Rational ratio = Rational::FromDouble(s, 1000);
    const double half = spec.grid_amplitude / 2.0;
    double delta = 0;
    for (const auto& c : chosen) {
      const auto tx = DownsampledTriangle(spec.grid_period, ratio, c.grid_j * kPatchSize, kPatchSize);
      const auto ty = DownsampledTriangle(spec.grid_period, ratio, c.grid_i * kPatchSize, kPatchSize);
      delta += half * half * (Variance(tx) + Variance(ty));
    }
    truth.grid_delta = delta / static_cast<double>(chosen.size());
    q.Set(MetricId::kGrid, std::clamp(1.0 - truth.grid_delta / truth.grid_v_nogrid, 0.0, 1.0));
  } else {
    q.MarkNotEvaluable(MetricId::kGrid);
  }
  return out;
}

void WriteSyntheticSlide(const fs::path& dir, const SyntheticSlide& slide, const SceneSpec& spec) {
  fs::create_directories(dir);
  if (fs::exists(dir / "slide")) fs::remove_all(dir / "slide");
  if (fs::exists(dir / "oracle")) fs::remove_all(dir / "oracle");
  fs::path name = fs::absolute(dir).lexically_normal();
  if (name.filename().empty()) name = name.parent_path();
  WriteTileTree(dir / "slide", slide.base_magnification, slide.factors, slide.rasters,
                name.filename().string());
  backend::SaveArtifacts(dir / "oracle", slide.oracle);
  std::ofstream(dir / "ground_truth.json") << SerializeGroundTruth(slide.truth) << '\n';
  std::ofstream(dir / "spec.json") << SerializeSpec(spec) << '\n';
}

SyntheticSlide GenerateSlideTo(const fs::path& dir, const SceneSpec& spec) {
  SyntheticSlide slide = GenerateSlide(spec);
  WriteSyntheticSlide(dir, slide, spec);
  return slide;
}

std::vector<RgbImage> RenderBackgroundPatches(const SceneSpec& spec, double magnification,
                                              int count, std::uint64_t seed) {
  const Rational ratio = Rational::FromDouble(spec.base_magnification / magnification, 1000);
  if (ratio < Rational{1, 1}) {
    throw Error(ErrorCode::kMagnificationUnavailable, "magnification above base");
  }
  const std::int64_t side = (kPatchSize * ratio.num + ratio.den - 1) / ratio.den;
  std::vector<RgbImage> out;
  for (int k = 0; k < count; ++k) {
    std::mt19937_64 rng(MixSeed(seed, 3, static_cast<std::uint64_t>(k)));
    std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0 ? spec.noise_sigma : 1.0);
    RgbImage raw(static_cast<int>(side), static_cast<int>(side));
    for (std::size_t i = 0; i < raw.pixel_count(); ++i) {
      const double n = spec.noise_sigma > 0 ? noise(rng) : 0.0;
      const std::uint8_t v = Quantize(spec.background + n);
      raw.data[i * 3] = raw.data[i * 3 + 1] = raw.data[i * 3 + 2] = v;
    }
    out.push_back(ratio == Rational{1, 1} ? std::move(raw)
                                          : BoxResample(raw, ratio, kPatchSize, kPatchSize));
  }
  return out;
}

// Focus ladder -----------------------------------------------------------------

double LadderTarget(int level, int levels) {
  return focus::kScoreRange * (1.0 - static_cast<double>(level) / (levels - 1));
}

std::vector<LadderSample> RenderFocusLadder(const FocusLadderConfig& config) {
  if (config.levels < 2 || config.window < focus::kKernelSize || config.windows_per_level < 1) {
    throw Error(ErrorCode::kInvalidArgument, "focus ladder needs >= 2 levels and a 7x7 window");
  }
  SceneSpec spec;
  spec.seed = config.seed;
  const double max_sigma = config.sigma_step * (config.levels - 1);
  const int halo = BlurHalo(max_sigma) + 2;
  const int side = config.window + 2 * halo;
  std::mt19937_64 rng(MixSeed(config.seed, 4));
  const stain::StainBasis basis = stain::StainBasis::Default();

  auto render = [&](const OdBuffer& od, double sigma, std::uint64_t noise_seed) {
    OdBuffer b = od;
    if (sigma > 0) BlurInside(b, {halo, halo, halo + config.window, halo + config.window}, sigma);
    std::mt19937_64 nrng(noise_seed);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    RgbImage img(config.window, config.window);
    for (int y = 0; y < config.window; ++y) {
      for (int x = 0; x < config.window; ++x) {
        const std::size_t bi = static_cast<std::size_t>(y + halo) * b.w + (x + halo);
        const double n = noise(nrng);
        std::uint8_t* p = img.px(x, y);
        for (int c = 0; c < 3; ++c) {
          p[c] = Quantize(spec.background * std::exp(-b.od[c][bi] * std::numbers::ln10) + n);
        }
      }
    }
    return img;
  };

  std::vector<LadderSample> out;
  for (int s = 0; s < config.windows_per_level; ++s) {
    Scene scene;
    const int n_cells = 2 + static_cast<int>(Uniform(rng, 0, 6));
    for (int k = 0; k < n_cells; ++k) {
      Cell c;
      c.a = Uniform(rng, spec.cell_radius_min, spec.cell_radius_max);
      c.b = Uniform(rng, spec.cell_radius_min, c.a);
      c.theta = Uniform(rng, 0, std::numbers::pi);
      c.cx = Uniform(rng, halo + 8, halo + config.window - 8);
      c.cy = Uniform(rng, halo + 8, halo + config.window - 8);
      c.eosin = spec.cytoplasm_eosin * Uniform(rng, 0.9, 1.1);
      c.nucleus = {c.cx, c.cy, spec.nucleus_radius * Uniform(rng, 0.8, 1.2)};
      scene.cells.push_back(c);
    }
    SceneSpec local = spec;
    local.specimen = Rect{0, 0, side, side};
    // Stain strength stays near the slide generator's so that contrast does
    // not masquerade as sharpness.
    local.nucleus_hematoxylin = spec.nucleus_hematoxylin * Uniform(rng, 0.9, 1.1);
    OdBuffer od(0, 0, side, side);
    PaintScene(local, scene, basis, od);
    const std::uint64_t noise_seed = MixSeed(config.seed, 5, static_cast<std::uint64_t>(s));
    for (int level = 0; level < config.levels; ++level) {
      out.push_back({render(od, level * config.sigma_step,
                            MixSeed(noise_seed, static_cast<std::uint64_t>(level))),
                     level, LadderTarget(level, config.levels)});
    }
  }
  const auto n_background = static_cast<int>(
      std::round(config.background_share * static_cast<double>(out.size())));
  for (int k = 0; k < n_background; ++k) {
    SceneSpec local = spec;
    local.specimen = Rect{0, 0, side, side};
    local.wash_eosin = Uniform(rng, 0.0, 0.12);
    OdBuffer od(0, 0, side, side);
    PaintScene(local, Scene{}, basis, od);
    out.push_back({render(od, 0, MixSeed(config.seed, 6, static_cast<std::uint64_t>(k))), 0,
                   focus::kScoreRange});
  }
  return out;
}

std::vector<focus::TrainSample> ToTrainSamples(const std::vector<LadderSample>& ladder) {
  std::vector<focus::TrainSample> out;
  out.reserve(ladder.size());
  for (const LadderSample& s : ladder) {
    out.push_back({focus::MakeWindow(s.image, 0, 0, s.image.width, s.image.height), s.target});
  }
  return out;
}

}  // namespace wsiqc::synth
