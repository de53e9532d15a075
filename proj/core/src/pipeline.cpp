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

#include "wsiqc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "toml.hpp"
#include "wsiqc/artifact_metrics.hpp"
#include "wsiqc/focus_model.hpp"
#include "wsiqc/grid_metric.hpp"
#include "wsiqc/parallel.hpp"
#include "wsiqc/png_io.hpp"
#include "wsiqc/stain_metric.hpp"

#ifndef WSIQC_VERSION
#define WSIQC_VERSION "0.0.0"
#endif

namespace wsiqc::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kPatchArea = static_cast<double>(kPatchSize) * kPatchSize;

bool SameMagnification(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, b); }

std::string BackendName(BackendKind k) {
  switch (k) {
    case BackendKind::kFiles: return "files";
    case BackendKind::kOracle: return "oracle";
    case BackendKind::kNone: break;
  }
  return "none";
}

std::uint64_t Fnv1a(std::string_view bytes, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string Hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Model files are identified by content so a report hash does not depend on
// where the files live.
json FileIdentity(const std::optional<fs::path>& p) {
  if (!p) return nullptr;
  std::ifstream in(*p, std::ios::binary);
  if (!in) return p->generic_string();
  std::ostringstream ss;
  ss << in.rdbuf();
  return "fnv1a:" + Hex16(Fnv1a(ss.str()));
}

// ---------------------------------------------------------------------------
// TOML

[[noreturn]] void ConfigError(const std::string& msg) {
  throw Error(ErrorCode::kInvalidArgument, "config: " + msg);
}

class TomlSection {
 public:
  TomlSection(const toml::table& root, std::string name) : name_(std::move(name)) {
    const toml::node* n = root.get(name_);
    if (n == nullptr) return;
    table_ = n->as_table();
    if (table_ == nullptr) ConfigError("[" + name_ + "] must be a table");
  }

  template <typename T>
  std::optional<T> Get(std::string_view key) {
    seen_.insert(std::string(key));
    if (table_ == nullptr) return std::nullopt;
    const toml::node* n = table_->get(key);
    if (n == nullptr) return std::nullopt;
    std::optional<T> v = n->value_exact<T>();
    if constexpr (std::is_same_v<T, double>) {
      if (!v) v = n->value<double>();
    }
    if (!v) ConfigError(name_ + "." + std::string(key) + " has the wrong type");
    return v;
  }

  void RejectUnknown() const {
    if (table_ == nullptr) return;
    for (const auto& [k, v] : *table_) {
      if (!seen_.contains(std::string(k.str()))) {
        ConfigError("unknown key " + name_ + "." + std::string(k.str()));
      }
    }
  }

 private:
  std::string name_;
  const toml::table* table_ = nullptr;
  std::set<std::string> seen_;
};

std::optional<fs::path> PathOption(TomlSection& s, std::string_view key, const fs::path& base) {
  const auto v = s.Get<std::string>(key);
  if (!v) return std::nullopt;
  fs::path p(*v);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p;
}

int IntOption(TomlSection& s, std::string_view key, int fallback) {
  const auto v = s.Get<std::int64_t>(key);
  if (!v) return fallback;
  if (*v < std::numeric_limits<int>::min() || *v > std::numeric_limits<int>::max()) {
    ConfigError(std::string(key) + " out of range");
  }
  return static_cast<int>(*v);
}

// ---------------------------------------------------------------------------
// Evaluation helpers

template <typename Fn>
auto InStage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  }
}

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& out) : out_(out) {}
  void Lap(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    out_.push_back({stage, std::chrono::duration<double>(now - last_).count()});
    last_ = now;
  }

 private:
  std::vector<StageTiming>& out_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

struct LoadedModels {
  std::optional<grid::GridCalibration> grid;
  stain::StainCalibration stain;
  focus::FocusNetWeights focus_own;
  const focus::FocusNetWeights* focus = nullptr;
  score::GbdtModel score_own;
  const score::GbdtModel* score = nullptr;
};

LoadedModels LoadModels(const PipelineConfig& config) {
  LoadedModels m;
  if (config.grid_calibration) m.grid = grid::LoadCalibration(*config.grid_calibration);
  if (config.stain_calibration) m.stain = stain::LoadCalibration(*config.stain_calibration);
  if (config.focus_weights) {
    m.focus_own = focus::LoadWeights(*config.focus_weights);
    m.focus = &m.focus_own;
  } else {
    m.focus = &focus::DefaultWeights();
  }
  if (config.score_model) {
    m.score_own = score::LoadModel(*config.score_model);
    m.score = &m.score_own;
  } else {
    m.score = &score::DefaultModel();
  }
  return m;
}

MetricEntry NotEvaluable(std::string why) {
  MetricEntry e;
  e.warnings.push_back(std::move(why));
  return e;
}

MetricEntry Evaluable(double v) {
  MetricEntry e;
  e.value = v;
  e.evaluable = true;
  return e;
}

PatchScoreMap EmptyMap(std::string_view metric, const PatchGrid& g) {
  PatchScoreMap m;
  m.metric = std::string(metric);
  m.magnification = g.magnification();
  m.rows = g.rows();
  m.cols = g.cols();
  m.values.assign(g.size(), std::nullopt);
  return m;
}

std::string PatchLabel(double mag, std::int64_t i, std::int64_t j) {
  return MagnificationLabel(mag) + "x patch (" + std::to_string(i) + ", " + std::to_string(j) + ")";
}

// Backend artifacts grouped by the patch they belong to.
struct ArtifactIndex {
  // Marker and bubble masks per artifact-power patch, merged when a patch
  // has several masks of one class.
  std::map<std::size_t, GrayImage> marker;
  std::map<std::size_t, GrayImage> bubble;
  std::vector<content::Detection> detections;  // content power only
  std::int64_t ignored_masks = 0;
  std::int64_t ignored_detections = 0;
};

void MergeMask(std::map<std::size_t, GrayImage>& into, std::size_t index, const GrayImage& bits) {
  auto [it, inserted] = into.try_emplace(index, bits);
  if (inserted) return;
  for (std::size_t p = 0; p < bits.data.size(); ++p) {
    it->second.data[p] = std::max(it->second.data[p], bits.data[p]);
  }
}

ArtifactIndex IndexArtifacts(const backend::ArtifactSet& set, const PatchGrid& art,
                             const PatchGrid& con) {
  ArtifactIndex idx;
  for (const artifact::SegMask& m : set.masks) {
    if (!SameMagnification(m.magnification, art.magnification())) {
      ++idx.ignored_masks;
      continue;
    }
    if (m.grid_i < 0 || m.grid_j < 0 || m.grid_i >= art.rows() || m.grid_j >= art.cols()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "mask references missing " + PatchLabel(m.magnification, m.grid_i, m.grid_j));
    }
    const auto index = static_cast<std::size_t>(m.grid_i * art.cols() + m.grid_j);
    MergeMask(m.mask_class == artifact::MaskClass::kMarker ? idx.marker : idx.bubble, index,
              m.bits);
  }
  for (const content::Detection& d : set.detections) {
    if (!SameMagnification(d.magnification, con.magnification())) {
      ++idx.ignored_detections;
      continue;
    }
    if (d.grid_i < 0 || d.grid_j < 0 || d.grid_i >= con.rows() || d.grid_j >= con.cols()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "detection references missing " + PatchLabel(d.magnification, d.grid_i, d.grid_j));
    }
    idx.detections.push_back(d);
  }
  return idx;
}

struct ArtifactSlot {
  double white_fraction = 0;
  bool is_white = false;
  grid::MeanVar mean_var;
};

struct ContentSlot {
  bool is_white = true;
  stain::PatchStain stain;
  std::int64_t neutrophil_area = 0;
  double focus = std::numeric_limits<double>::quiet_NaN();
};

void EvaluateOcclusion(const std::map<std::size_t, GrayImage>& masks,
                       const std::vector<ArtifactSlot>& slots, std::int64_t m_a,
                       MetricEntry& entry, PatchScoreMap& map,
                       std::string_view what) {
  std::vector<double> ratios;
  std::vector<double> per_patch(slots.size(), 0.0);
  std::int64_t on_white = 0;
  for (const auto& [index, bits] : masks) {
    if (slots[index].is_white) {
      ++on_white;
      continue;
    }
    artifact::SegMask m;
    m.bits = bits;
    const double r = artifact::PatchOcclusion(m);
    ratios.push_back(r);
    per_patch[index] = r;
  }
  try {
    const artifact::OcclusionScore s = artifact::AggregateOcclusion(ratios, m_a);
    entry = Evaluable(s.quality);
    entry.raw = {{"content_patches", static_cast<double>(s.content_patches)},
                 {"detected_patches", static_cast<double>(s.detected_patches)},
                 {"detected_only_mean", s.detected_only_mean}};
  } catch (const Error& e) {
    entry = NotEvaluable(e.what());
  }
  if (on_white > 0) {
    entry.warnings.push_back(std::to_string(on_white) + " " + std::string(what) +
                             " masks on background patches ignored");
  }
  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (!slots[k].is_white) map.values[k] = 1.0 - per_patch[k];
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::Validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::kInvalidArgument, "config: " + m); };
  if (!(artifact_magnification > 0) || !std::isfinite(artifact_magnification)) {
    bad("artifact magnification must be positive");
  }
  if (!(content_magnification > 0) || !std::isfinite(content_magnification)) {
    bad("content magnification must be positive");
  }
  if (sample_every < 1) bad("sample_every must be >= 1");
  if (focus_window < focus::kKernelSize || focus_window > kPatchSize) {
    bad("focus window must be in [7, 512]");
  }
  if (focus_stride < 1) bad("focus stride must be >= 1");
  if (workers < 0) bad("workers must be >= 0");
  if (!(confidence_floor >= 0 && confidence_floor <= 1)) bad("confidence floor must be in [0, 1]");
  if (backend == BackendKind::kFiles && backend_dir.empty()) bad("files backend needs a directory");
}

PipelineConfig ParseConfig(const std::string& toml_text, const fs::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e.description() << " at line " << e.source().begin.line;
    ConfigError(msg.str());
  }
  static const std::set<std::string> kSections{"magnification", "focus", "content", "stain",
                                               "grid", "score", "backend", "runtime"};
  for (const auto& [k, v] : root) {
    if (!kSections.contains(std::string(k.str()))) {
      ConfigError("unknown section [" + std::string(k.str()) + "]");
    }
  }

  PipelineConfig c;
  TomlSection mag(root, "magnification");
  c.artifact_magnification = mag.Get<double>("artifact").value_or(c.artifact_magnification);
  c.content_magnification = mag.Get<double>("content").value_or(c.content_magnification);
  mag.RejectUnknown();

  TomlSection foc(root, "focus");
  c.sample_every = IntOption(foc, "sample_every", c.sample_every);
  c.focus_window = IntOption(foc, "window", c.focus_window);
  c.focus_stride = IntOption(foc, "stride", c.focus_stride);
  c.focus_weights = PathOption(foc, "weights", base_dir);
  foc.RejectUnknown();

  TomlSection con(root, "content");
  c.confidence_floor = con.Get<double>("confidence_floor").value_or(c.confidence_floor);
  con.RejectUnknown();

  TomlSection st(root, "stain");
  c.adaptive_stain_basis = st.Get<bool>("adaptive_basis").value_or(c.adaptive_stain_basis);
  c.stain_calibration = PathOption(st, "calibration", base_dir);
  st.RejectUnknown();

  TomlSection gr(root, "grid");
  c.grid_calibration = PathOption(gr, "calibration", base_dir);
  gr.RejectUnknown();

  TomlSection sc(root, "score");
  c.score_model = PathOption(sc, "model", base_dir);
  sc.RejectUnknown();

  TomlSection be(root, "backend");
  const std::string kind = be.Get<std::string>("kind").value_or("none");
  if (kind == "none") {
    c.backend = BackendKind::kNone;
  } else if (kind == "files") {
    c.backend = BackendKind::kFiles;
  } else if (kind == "oracle") {
    c.backend = BackendKind::kOracle;
  } else {
    ConfigError("backend.kind must be none, files or oracle");
  }
  if (auto dir = PathOption(be, "dir", base_dir)) c.backend_dir = *dir;
  be.RejectUnknown();

  TomlSection rt(root, "runtime");
  c.workers = IntOption(rt, "workers", c.workers);
  rt.RejectUnknown();

  c.Validate();
  return c;
}

PipelineConfig LoadConfig(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ParseConfig(ss.str(), path.parent_path());
}

std::string CanonicalConfig(const PipelineConfig& c) {
  const json j{{"artifact_magnification", c.artifact_magnification},
               {"content_magnification", c.content_magnification},
               {"sample_every", c.sample_every},
               {"focus_window", c.focus_window},
               {"focus_stride", c.focus_stride},
               {"confidence_floor", c.confidence_floor},
               {"adaptive_stain_basis", c.adaptive_stain_basis},
               {"grid_calibration", FileIdentity(c.grid_calibration)},
               {"stain_calibration", FileIdentity(c.stain_calibration)},
               {"focus_weights", FileIdentity(c.focus_weights)},
               {"score_model", FileIdentity(c.score_model)},
               {"backend", BackendName(c.backend)}};
  return j.dump();
}

std::string ConfigHash(const PipelineConfig& config) {
  return Hex16(Fnv1a(CanonicalConfig(config)));
}

void ParseBackendSelector(const std::string& text, PipelineConfig& config) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string dir = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (kind == "none" && colon == std::string::npos) {
    config.backend = BackendKind::kNone;
    config.backend_dir.clear();
  } else if (kind == "oracle") {
    config.backend = BackendKind::kOracle;
    config.backend_dir = dir;
  } else if (kind == "files" && !dir.empty()) {
    config.backend = BackendKind::kFiles;
    config.backend_dir = dir;
  } else {
    throw Error(ErrorCode::kInvalidArgument,
                "backend must be none, oracle, oracle:<dir> or files:<dir>, got '" + text + "'");
  }
}

// ---------------------------------------------------------------------------
// Evaluation

Evaluation EvaluateSlide(const SlideHandle& slide, const backend::ArtifactSet* artifacts,
                         const PipelineConfig& config) {
  Evaluation out;
  QualityReport& r = out.report;
  r.slide_id = slide->id();
  r.version = WSIQC_VERSION;
  r.backend = artifacts == nullptr ? "none" : std::string(backend::ProvenanceName(artifacts->provenance));
  StageClock clock(r.timings);

  const LoadedModels models = InStage("config", [&] {
    config.Validate();
    return LoadModels(config);
  });
  r.config_hash = ConfigHash(config);
  const int workers = config.workers;

  const auto [art, con] = InStage("tiling", [&] {
    return std::pair{slide->Patches(config.artifact_magnification),
                     slide->Patches(config.content_magnification)};
  });
  clock.Lap("tiling");

  std::optional<ArtifactIndex> index;
  if (artifacts != nullptr) {
    index = InStage("backend", [&] { return IndexArtifacts(*artifacts, art, con); });
  }

  // Low-power pass: background statistics for q1, occlusion for q3/q4.
  std::vector<ArtifactSlot> aslots(art.size());
  InStage("artifact", [&] {
    ParallelFor(art.size(), workers, [&](std::size_t k) {
      const PatchRecord rec = art.Read(k);
      ArtifactSlot& s = aslots[k];
      s.white_fraction = rec.white_fraction;
      s.is_white = rec.is_white;
      if (rec.is_white) s.mean_var = grid::PatchMeanVar(rec.pixels, rec.valid_width, rec.valid_height);
    });
  });
  std::int64_t m_a = 0;
  for (const ArtifactSlot& s : aslots) m_a += !s.is_white;
  r.artifact_patches = m_a;

  PatchScoreMap q1_map = EmptyMap("q1", art);
  MetricEntry& e1 = r.metrics[Index(MetricId::kGrid)];
  if (!models.grid) {
    e1 = NotEvaluable("no grid calibration configured");
  } else {
    try {
      std::vector<grid::BackgroundCandidate> cands;
      for (std::size_t k = 0; k < aslots.size(); ++k) {
        cands.push_back({static_cast<std::int64_t>(k) / art.cols(),
                         static_cast<std::int64_t>(k) % art.cols(), aslots[k].white_fraction,
                         aslots[k].is_white});
      }
      const auto chosen = grid::SelectContentFreePatches(std::move(cands), art.rows(), art.cols());
      std::vector<grid::MeanVar> mv;
      for (const auto& c : chosen) mv.push_back(aslots[c.grid_i * art.cols() + c.grid_j].mean_var);
      const grid::GridMeasurement g = grid::ComputeQ1(mv, *models.grid);
      e1 = Evaluable(g.q1);
      e1.raw = {{"v_wsi", g.v_wsi}, {"v_nogrid", models.grid->v_nogrid}, {"deviation", g.deviation}};
      for (std::size_t p = 0; p < chosen.size(); ++p) {
        const double dev = std::abs(g.v_patch[p] - models.grid->v_nogrid) / models.grid->v_nogrid;
        q1_map.values[chosen[p].grid_i * art.cols() + chosen[p].grid_j] =
            std::clamp(1.0 - dev, 0.0, 1.0);
      }
    } catch (const Error& e) {
      e1 = NotEvaluable(e.what());
    }
  }

  PatchScoreMap q3_map = EmptyMap("q3", art);
  PatchScoreMap q4_map = EmptyMap("q4", art);
  MetricEntry& e3 = r.metrics[Index(MetricId::kMarker)];
  MetricEntry& e4 = r.metrics[Index(MetricId::kBubble)];
  if (!index) {
    e3 = NotEvaluable("no segmentation backend");
    e4 = NotEvaluable("no segmentation backend");
  } else {
    EvaluateOcclusion(index->marker, aslots, m_a, e3, q3_map, "marker");
    EvaluateOcclusion(index->bubble, aslots, m_a, e4, q4_map, "bubble");
    if (index->ignored_masks > 0) {
      const std::string w = std::to_string(index->ignored_masks) +
                            " masks at other magnifications ignored";
      e3.warnings.push_back(w);
      e4.warnings.push_back(w);
    }
  }
  clock.Lap("artifact");

  // High-power pass: focus, stain and content.
  std::unordered_map<std::size_t, std::vector<content::Box>> neutrophil_boxes;
  if (index) {
    for (const content::Detection& d : index->detections) {
      if (d.cls != content::DetectionClass::kNeutrophil || d.conf < config.confidence_floor) continue;
      neutrophil_boxes[static_cast<std::size_t>(d.grid_i * con.cols() + d.grid_j)].push_back(d.box);
    }
  }
  std::vector<ContentSlot> cslots(con.size());
  std::vector<std::string> stain_warnings;
  InStage("content", [&] {
    stain::Deconvolver deconvolver(models.stain.basis);
    const bool focus_inline = config.sample_every == 1;
    ParallelFor(con.size(), workers, [&](std::size_t k) {
      const PatchRecord rec = con.Read(k);
      ContentSlot& s = cslots[k];
      s.is_white = rec.is_white;
      if (rec.is_white) return;
      s.stain = stain::MeasurePatch(rec.pixels, deconvolver, models.stain.tau, rec.valid_width,
                                    rec.valid_height);
      if (auto it = neutrophil_boxes.find(k); it != neutrophil_boxes.end()) {
        s.neutrophil_area = content::PatchNeutrophilArea(ToGray(rec.pixels), it->second);
      }
      if (focus_inline) {
        s.focus = focus::ScorePatch(rec.pixels, *models.focus, config.focus_window,
                                    config.focus_stride, rec.valid_width, rec.valid_height);
      }
    });

    std::vector<std::size_t> content_idx;
    for (std::size_t k = 0; k < cslots.size(); ++k) {
      if (!cslots[k].is_white) content_idx.push_back(k);
    }

    if (!focus_inline) {
      std::vector<std::size_t> sampled;
      for (std::size_t p = 0; p < content_idx.size(); p += config.sample_every) {
        sampled.push_back(content_idx[p]);
      }
      ParallelFor(sampled.size(), workers, [&](std::size_t t) {
        const PatchRecord rec = con.Read(sampled[t]);
        cslots[sampled[t]].focus = focus::ScorePatch(rec.pixels, *models.focus, config.focus_window,
                                                     config.focus_stride, rec.valid_width,
                                                     rec.valid_height);
      });
    }

    if (config.adaptive_stain_basis && !content_idx.empty()) {
      constexpr std::size_t kBasisPatches = 16;
      const std::size_t n = std::min(kBasisPatches, content_idx.size());
      std::vector<RgbImage> sample(n);
      ParallelFor(n, workers, [&](std::size_t t) {
        PatchRecord rec = con.Read(content_idx[t * content_idx.size() / n]);
        sample[t] = Crop(rec.pixels, 0, 0, rec.valid_width, rec.valid_height);
      });
      const stain::BasisEstimate est = stain::EstimateBasis(sample, models.stain.basis);
      if (est.adaptive_failed) {
        stain_warnings.push_back("adaptive stain basis failed; using the calibrated basis");
      } else {
        stain::StainBasis basis = est.basis;
        basis.background = models.stain.basis.background;
        const stain::Deconvolver adaptive(basis);
        ParallelFor(content_idx.size(), workers, [&](std::size_t t) {
          const PatchRecord rec = con.Read(content_idx[t]);
          cslots[content_idx[t]].stain = stain::MeasurePatch(
              rec.pixels, adaptive, models.stain.tau, rec.valid_width, rec.valid_height);
        });
      }
    }
  });

  std::int64_t m_c = 0;
  stain::PatchStain stain_total;
  std::vector<double> q_patch;
  double s_neutrophil = 0;
  PatchScoreMap q2_map = EmptyMap("q2", con);
  PatchScoreMap q5_map = EmptyMap("q5", con);
  PatchScoreMap q8_map = EmptyMap("q8", con);
  for (std::size_t k = 0; k < cslots.size(); ++k) {
    const ContentSlot& s = cslots[k];
    if (s.is_white) continue;
    ++m_c;
    stain_total.hematoxylin += s.stain.hematoxylin;
    stain_total.eosin += s.stain.eosin;
    s_neutrophil += static_cast<double>(s.neutrophil_area);
    if (!std::isnan(s.focus)) {
      q_patch.push_back(s.focus);
      q2_map.values[k] = std::clamp(s.focus / focus::kScoreRange, 0.0, 1.0);
    }
    if (index) q8_map.values[k] = 1.0 - static_cast<double>(s.neutrophil_area) / kPatchArea;
  }
  r.content_patches = m_c;

  MetricEntry& e2 = r.metrics[Index(MetricId::kFocus)];
  try {
    const focus::FocusScore f = focus::AggregateQ2(q_patch);
    e2 = Evaluable(f.q2);
    e2.raw = {{"mean_raw", f.mean_raw}, {"sampled_patches", static_cast<double>(f.q_patch.size())}};
  } catch (const Error& e) {
    e2 = NotEvaluable(e.what());
  }

  MetricEntry& e5 = r.metrics[Index(MetricId::kStain)];
  if (m_c == 0) {
    e5 = NotEvaluable("no content patches");
  } else {
    const stain::StainMeasurement s = stain::ScoreStain(stain_total, models.stain);
    if (s.q5) {
      e5 = Evaluable(*s.q5);
    } else {
      e5 = NotEvaluable("no stained pixels in content patches");
    }
    e5.raw["count_hematoxylin"] = static_cast<double>(s.count_hematoxylin);
    e5.raw["count_eosin"] = static_cast<double>(s.count_eosin);
    if (s.v_gray_hematoxylin) e5.raw["v_gray_hematoxylin"] = *s.v_gray_hematoxylin;
    if (s.v_gray_eosin) e5.raw["v_gray_eosin"] = *s.v_gray_eosin;
    if (s.score_hematoxylin) e5.raw["score_hematoxylin"] = *s.score_hematoxylin;
    if (s.score_eosin) e5.raw["score_eosin"] = *s.score_eosin;
    if (e5.evaluable) {
      for (std::size_t k = 0; k < cslots.size(); ++k) {
        if (cslots[k].is_white) continue;
        const auto p = stain::ScoreStain(cslots[k].stain, models.stain).q5;
        if (p) q5_map.values[k] = *p;
      }
    }
  }
  for (auto& w : stain_warnings) e5.warnings.push_back(std::move(w));

  MetricEntry& e6 = r.metrics[Index(MetricId::kCellCount)];
  MetricEntry& e7 = r.metrics[Index(MetricId::kCellMass)];
  MetricEntry& e8 = r.metrics[Index(MetricId::kNeutrophil)];
  if (!index) {
    e6 = NotEvaluable("no detection backend");
    e7 = NotEvaluable("no detection backend");
    e8 = NotEvaluable("no detection backend");
  } else if (m_c == 0) {
    e6 = NotEvaluable("no content patches");
    e7 = NotEvaluable("no content patches");
    e8 = NotEvaluable("no content patches");
  } else {
    std::vector<content::Detection> kept;
    std::int64_t on_white = 0;
    for (const content::Detection& d : index->detections) {
      if (cslots[static_cast<std::size_t>(d.grid_i * con.cols() + d.grid_j)].is_white) {
        ++on_white;
      } else {
        kept.push_back(d);
      }
    }
    const std::int64_t cells = content::CountCells(kept, config.confidence_floor);
    const std::int64_t masses =
        content::CountObjects(kept, content::DetectionClass::kCellMass, config.confidence_floor);
    e6 = Evaluable(content::Q6FromCount(cells));
    e6.raw = {{"cell_count", static_cast<double>(cells)}};
    e7 = Evaluable(content::Q7FromMassCount(masses));
    e7.raw = {{"mass_count", static_cast<double>(masses)}};
    const double s_total = static_cast<double>(m_c) * kPatchArea;
    const content::NeutrophilScore n = content::Q8FromAreas(s_neutrophil, s_total);
    e8 = Evaluable(n.q8);
    e8.raw = {{"s_neutrophil", s_neutrophil}, {"s_total", s_total}, {"coverage", n.coverage}};
    r.tbs_annotation = n.annotation;
    std::string w;
    if (on_white > 0) w = std::to_string(on_white) + " detections on background patches ignored";
    if (index->ignored_detections > 0) {
      if (!w.empty()) w += "; ";
      w += std::to_string(index->ignored_detections) + " detections at other magnifications ignored";
    }
    if (!w.empty()) {
      e6.warnings.push_back(w);
      e7.warnings.push_back(w);
      e8.warnings.push_back(w);
    }
  }
  clock.Lap("content");

  // Fusion and decision.
  InStage("scoring", [&] {
    const MetricVector v = r.Vector();
    if (std::any_of(v.evaluable.begin(), v.evaluable.end(), [](bool b) { return b; })) {
      r.score = score::PredictScore(*models.score, v);
      r.decision = score::Decide(*r.score, v);
    }
  });
  clock.Lap("scoring");

  out.patch_scores = {std::move(q1_map), std::move(q2_map), std::move(q3_map),
                      std::move(q4_map), std::move(q5_map), std::move(q8_map)};
  return out;
}

Evaluation Evaluate(const fs::path& slide_path, const PipelineConfig& config,
                    SlideHandle* opened) {
  const SlideHandle slide = InStage("open", [&] { return OpenSlide(slide_path); });
  if (opened != nullptr) *opened = slide;
  std::optional<backend::ArtifactSet> artifacts;
  if (config.backend != BackendKind::kNone) {
    artifacts = InStage("backend", [&] {
      if (config.backend == BackendKind::kFiles) {
        return backend::LoadArtifacts(config.backend_dir, backend::Provenance::kFiles);
      }
      fs::path dir = config.backend_dir;
      if (dir.empty()) {
        fs::path p = slide_path.lexically_normal();
        if (!p.has_filename()) p = p.parent_path();
        dir = p.parent_path() / "oracle";
      }
      if (!fs::is_directory(dir)) {
        throw Error(ErrorCode::kIo, "oracle directory not found: " + dir.string());
      }
      return backend::LoadArtifacts(dir, backend::Provenance::kOracle);
    });
  }
  return EvaluateSlide(slide, artifacts ? &*artifacts : nullptr, config);
}

// ---------------------------------------------------------------------------
// Heatmaps

std::vector<std::optional<double>> NormalizeScores(const PatchScoreMap& scores) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& v : scores.values) {
    if (!v) continue;
    lo = std::min(lo, *v);
    hi = std::max(hi, *v);
  }
  std::vector<std::optional<double>> out(scores.values.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (!scores.values[k]) continue;
    out[k] = hi > lo ? (*scores.values[k] - lo) / (hi - lo) : 0.5;
  }
  return out;
}

std::array<std::uint8_t, 3> ColorMap(double t) {
  // Red (low) through yellow and green to blue (high).
  static constexpr std::array<std::array<double, 3>, 5> kStops{{
      {215, 25, 28}, {253, 174, 97}, {255, 255, 191}, {171, 221, 164}, {43, 131, 186}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const double pos = t * (kStops.size() - 1);
  const auto lo = std::min<std::size_t>(static_cast<std::size_t>(pos), kStops.size() - 2);
  const double f = pos - static_cast<double>(lo);
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    rgb[c] = static_cast<std::uint8_t>(
        std::lround(kStops[lo][c] + f * (kStops[lo + 1][c] - kStops[lo][c])));
  }
  return rgb;
}

void EmitHeatmap(const SlidePyramid& slide, const PatchScoreMap& scores, const fs::path& out_path,
                 int cell_pixels) {
  if (cell_pixels < 1 || cell_pixels > kPatchSize) {
    throw Error(ErrorCode::kInvalidArgument, "heatmap cell size must be in [1, 512]");
  }
  const int w = static_cast<int>(scores.cols * cell_pixels);
  const int h = static_cast<int>(scores.rows * cell_pixels);
  GrayImage gray(w, h, 200);
  try {
    const double thumb_mag = scores.magnification * cell_pixels / kPatchSize;
    const RgbImage thumb = slide.Patches(thumb_mag).ReadAll();
    const GrayImage g = ToGray(thumb);
    for (int y = 0; y < std::min(h, g.height); ++y) {
      for (int x = 0; x < std::min(w, g.width); ++x) gray.at(x, y) = g.at(x, y);
    }
  } catch (const Error&) {
    // Slide too small for a thumbnail at this scale: plain gray backdrop.
  }
  const auto norm = NormalizeScores(scores);
  RgbImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t k = static_cast<std::size_t>(y / cell_pixels) * scores.cols + x / cell_pixels;
      const std::uint8_t g = gray.at(x, y);
      std::uint8_t* p = img.px(x, y);
      if (k < norm.size() && norm[k]) {
        const auto c = ColorMap(*norm[k]);
        for (int ch = 0; ch < 3; ++ch) p[ch] = static_cast<std::uint8_t>((g + c[ch] + 1) / 2);
      } else {
        p[0] = p[1] = p[2] = g;
      }
    }
  }
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  WritePngRgb(out_path, img, 6);
}

// ---------------------------------------------------------------------------
// Batch

namespace {

const std::array<std::string, 4> kTimedStages{"tiling", "artifact", "content", "scoring"};

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c == '\n' ? ' ' : c;
  }
  return q + '"';
}

}  // namespace

std::string SummaryCsvHeader() {
  std::string h = "slide_id";
  for (int k = 0; k < kMetricCount; ++k) h += "," + std::string(MetricName(k));
  h += ",score,action";
  for (const auto& s : kTimedStages) h += "," + s + "_s";
  return h + ",error\n";
}

BatchResult BatchEvaluate(const std::vector<fs::path>& slides, const PipelineConfig& config) {
  BatchResult result;
  result.rows.resize(slides.size());
  for (std::size_t k = 0; k < slides.size(); ++k) {
    BatchRow& row = result.rows[k];
    row.slide = slides[k].string();
    try {
      row.report = Evaluate(slides[k], config).report;
    } catch (const Error& e) {
      row.error = e.what();
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  }

  std::string csv = SummaryCsvHeader();
  for (const BatchRow& row : result.rows) {
    if (!row.report) {
      std::string id = fs::path(row.slide).lexically_normal().filename().string();
      if (id.empty()) id = fs::path(row.slide).lexically_normal().parent_path().filename().string();
      csv += CsvField(id);
      for (int k = 0; k < kMetricCount + 2 + static_cast<int>(kTimedStages.size()); ++k) csv += ",";
      csv += "," + CsvField(row.error) + "\n";
      continue;
    }
    const QualityReport& r = *row.report;
    csv += CsvField(r.slide_id);
    for (const MetricEntry& e : r.metrics) csv += "," + (e.evaluable ? Num(e.value) : "NA");
    csv += "," + (r.score ? Num(*r.score) : "NA");
    csv += "," + (r.decision ? std::string(score::ActionName(r.decision->action)) : "NA");
    for (const auto& stage : kTimedStages) {
      double sec = 0;
      for (const StageTiming& t : r.timings) {
        if (t.stage == stage) sec += t.seconds;
      }
      csv += "," + Num(sec);
    }
    csv += ",\n";
  }
  result.summary_csv = std::move(csv);
  return result;
}

std::vector<fs::path> ReadSlideList(const fs::path& list_file) {
  std::ifstream in(list_file);
  if (!in) throw Error(ErrorCode::kIo, "cannot read slide list " + list_file.string());
  std::vector<fs::path> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    fs::path p(line.substr(b, e - b + 1));
    if (p.is_relative()) p = list_file.parent_path() / p;
    out.push_back(p);
  }
  return out;
}

}  // namespace wsiqc::pipeline
