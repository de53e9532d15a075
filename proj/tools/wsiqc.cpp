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

// wsiqc: command-line front end for slide quality evaluation, calibration,
// model training and synthetic slide generation.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "wsiqc/eval_stats.hpp"
#include "wsiqc/focus_model.hpp"
#include "wsiqc/grid_metric.hpp"
#include "wsiqc/parallel.hpp"
#include "wsiqc/pipeline.hpp"
#include "wsiqc/png_io.hpp"
#include "wsiqc/score_model.hpp"
#include "wsiqc/stain_metric.hpp"
#include "wsiqc/synth.hpp"

namespace fs = std::filesystem;
using namespace wsiqc;

namespace {

enum Exit { kOk = 0, kUsage = 1, kInput = 2, kEvaluation = 3 };

void WriteText(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

void Emit(const std::optional<fs::path>& path, const std::string& text) {
  if (path) {
    WriteText(*path, text);
  } else {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
  }
}

bool IsSlidePath(const fs::path& p) {
  if (fs::is_directory(p)) return fs::exists(p / "manifest.json");
  const std::string ext = p.extension().string();
  return ext == ".tif" || ext == ".tiff" || ext == ".TIF" || ext == ".TIFF";
}

std::vector<fs::path> SortedEntries(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// Shared evaluation options.
struct EvalOptions {
  std::optional<fs::path> config;
  std::optional<std::string> backend;
  std::optional<int> workers;

  void Add(CLI::App* app) {
    app->add_option("--config", config, "TOML configuration file");
    app->add_option("--backend", backend, "none, oracle, oracle:<dir> or files:<dir>");
    app->add_option("--workers", workers, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  }

  pipeline::PipelineConfig Build() const {
    pipeline::PipelineConfig c = config ? pipeline::LoadConfig(*config) : pipeline::PipelineConfig{};
    if (backend) pipeline::ParseBackendSelector(*backend, c);
    if (workers) c.workers = *workers;
    c.Validate();
    return c;
  }
};

int RunEvaluate(const fs::path& slide, const EvalOptions& opts, const std::optional<fs::path>& report,
                const std::optional<fs::path>& heatmaps) {
  const pipeline::PipelineConfig config = opts.Build();
  SlideHandle handle;
  const pipeline::Evaluation ev = pipeline::Evaluate(slide, config, &handle);
  Emit(report, pipeline::SerializeReport(ev.report));
  if (heatmaps) {
    for (const pipeline::PatchScoreMap& m : ev.patch_scores) {
      if (std::none_of(m.values.begin(), m.values.end(), [](const auto& v) { return v.has_value(); })) {
        continue;
      }
      pipeline::EmitHeatmap(*handle, m, *heatmaps / (ev.report.slide_id + "_" + m.metric + ".png"));
    }
  }
  if (ev.report.decision) {
    std::cerr << ev.report.slide_id << ": score " << *ev.report.score << ", "
              << score::ActionName(ev.report.decision->action) << "\n";
  } else {
    std::cerr << ev.report.slide_id << ": no metric could be evaluated\n";
  }
  return kOk;
}

int RunBatch(const fs::path& list, const EvalOptions& opts, const std::optional<fs::path>& summary,
             const std::optional<fs::path>& reports) {
  const pipeline::PipelineConfig config = opts.Build();
  const auto slides = pipeline::ReadSlideList(list);
  const pipeline::BatchResult result = pipeline::BatchEvaluate(slides, config);
  Emit(summary, result.summary_csv);
  std::size_t failed = 0;
  for (const pipeline::BatchRow& row : result.rows) {
    if (!row.report) {
      ++failed;
      std::cerr << row.slide << ": " << row.error << "\n";
      continue;
    }
    if (reports) {
      WriteText(*reports / (row.report->slide_id + ".json"), pipeline::SerializeReport(*row.report));
    }
  }
  std::cerr << result.rows.size() - failed << " evaluated, " << failed << " failed\n";
  return kOk;
}

int RunCalibrateGrid(const fs::path& dir, double magnification, const std::optional<fs::path>& out) {
  std::vector<grid::MeanVar> samples;
  for (const fs::path& p : SortedEntries(dir)) {
    if (p.extension() == ".png") {
      const RgbImage img = ReadPngRgb(p);
      samples.push_back(grid::PatchMeanVar(img, img.width, img.height));
    } else if (IsSlidePath(p)) {
      IterPatches(*OpenSlide(p), magnification, [&](const PatchRecord& rec) {
        if (rec.is_white) samples.push_back(grid::PatchMeanVar(rec.pixels, rec.valid_width, rec.valid_height));
      });
    }
  }
  const grid::GridCalibration cal = grid::CalibrateGrid(samples);
  Emit(out, grid::SerializeCalibration(cal));
  std::cerr << "grid calibration from " << cal.sample_count << " background patches, v_nogrid "
            << cal.v_nogrid << "\n";
  return kOk;
}

int RunCalibrateStain(const fs::path& dir, double magnification, int workers,
                      const std::optional<fs::path>& out) {
  const stain::StainCalibration base;
  const stain::Deconvolver deconvolver(base.basis);
  std::vector<stain::ReferenceGray> refs;
  for (const fs::path& p : SortedEntries(dir)) {
    if (!IsSlidePath(p)) continue;
    const PatchGrid grid = OpenSlide(p)->Patches(magnification);
    std::vector<stain::PatchStain> per(grid.size());
    ParallelFor(grid.size(), workers, [&](std::size_t k) {
      const PatchRecord rec = grid.Read(k);
      if (!rec.is_white) {
        per[k] = stain::MeasurePatch(rec.pixels, deconvolver, base.tau, rec.valid_width, rec.valid_height);
      }
    });
    stain::PatchStain total;
    for (const auto& s : per) {
      total.hematoxylin += s.hematoxylin;
      total.eosin += s.eosin;
    }
    const auto h = total.hematoxylin.mean();
    const auto e = total.eosin.mean();
    if (!h || !e) {
      std::cerr << "skipping " << p.string() << ": no stained pixels\n";
      continue;
    }
    refs.push_back({*h, *e});
  }
  const stain::StainCalibration cal = stain::CalibrateStain(refs, base);
  Emit(out, stain::SerializeCalibration(cal));
  std::cerr << "stain calibration from " << cal.sample_count << " slides: hematoxylin ["
            << cal.hematoxylin.min << ", " << cal.hematoxylin.max << "], eosin [" << cal.eosin.min
            << ", " << cal.eosin.max << "]\n";
  return kOk;
}

int RunTrainScore(const fs::path& labels, const score::GbdtConfig& cfg, const std::optional<fs::path>& out) {
  const auto data = score::LoadLabelsCsv(labels);
  const score::TrainResult r = score::TrainGbdt(data, cfg);
  for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::vector<double> pred;
  std::vector<double> truth;
  for (const auto& ex : data) {
    pred.push_back(score::PredictScore(r.model, ex.x));
    truth.push_back(ex.label);
  }
  std::cerr << "trained " << r.model.trees.size() << " trees on " << data.size()
            << " examples, rmse " << (r.rmse_per_round.empty() ? 0.0 : r.rmse_per_round.back());
  try {
    std::cerr << ", srcc " << stats::Srcc(pred, truth) << ", plcc " << stats::Plcc(pred, truth);
  } catch (const Error&) {
  }
  std::cerr << "\n";
  Emit(out, score::SerializeModel(r.model));
  return kOk;
}

// <dir>/labels.csv: "file,target" rows naming PNG windows relative to <dir>.
std::vector<focus::TrainSample> LoadFocusDataset(const fs::path& dir) {
  std::ifstream in(dir / "labels.csv");
  if (!in) throw Error(ErrorCode::kIo, "missing " + (dir / "labels.csv").string());
  std::vector<focus::TrainSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("file,", 0) == 0)) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "labels.csv line " + std::to_string(line_no));
    }
    focus::TrainSample s;
    try {
      s.target = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "labels.csv line " + std::to_string(line_no));
    }
    const RgbImage img = ReadPngRgb(dir / line.substr(0, comma));
    s.window = focus::MakeWindow(img, 0, 0, img.width, img.height);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error(ErrorCode::kEmptyDataset, "no samples in " + dir.string());
  return out;
}

int RunTrainFocus(const fs::path& dir, const focus::TrainConfig& cfg, bool binary,
                  const std::optional<fs::path>& out) {
  const auto data = LoadFocusDataset(dir);
  const focus::TrainResult r = focus::TrainFocus(data, cfg);
  std::vector<double> pred;
  std::vector<double> truth;
  for (const auto& s : data) {
    pred.push_back(focus::PredictWindow(s.window, r.weights));
    truth.push_back(s.target);
  }
  std::cerr << "trained on " << data.size() << " windows, plcc " << stats::Plcc(pred, truth)
            << ", srcc " << stats::Srcc(pred, truth) << "\n";
  if (out) {
    focus::SaveWeights(*out, r.weights, binary);
  } else {
    std::cout << focus::SerializeWeightsJson(r.weights) << "\n";
  }
  return kOk;
}

int RunSynth(const fs::path& spec_path, const fs::path& out_dir) {
  const synth::SceneSpec spec = synth::LoadSpec(spec_path);
  const synth::SyntheticSlide s = synth::GenerateSlideTo(out_dir, spec);
  std::cerr << "wrote " << s.id << " to " << out_dir.string() << "\n";
  return kOk;
}

int RunSynthLadder(const fs::path& out_dir, const synth::FocusLadderConfig& cfg) {
  const auto ladder = synth::RenderFocusLadder(cfg);
  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "file,target\n";
  char name[64];
  for (std::size_t k = 0; k < ladder.size(); ++k) {
    std::snprintf(name, sizeof name, "w%05zu_L%02d.png", k, ladder[k].level);
    WritePngRgb(out_dir / name, ladder[k].image, 6);
    csv << name << "," << ladder[k].target << "\n";
  }
  WriteText(out_dir / "labels.csv", csv.str());
  std::cerr << "wrote " << ladder.size() << " windows to " << out_dir.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Whole-slide image quality control"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(WSIQC_VERSION));

  EvalOptions eval_opts;
  fs::path slide;
  std::optional<fs::path> report;
  std::optional<fs::path> heatmaps;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate one slide");
  evaluate->add_option("slide", slide, "Tile-tree directory or pyramidal TIFF")->required();
  evaluate->add_option("--report", report, "Write the JSON report here instead of stdout");
  evaluate->add_option("--heatmaps", heatmaps, "Directory for per-metric heatmap PNGs");
  eval_opts.Add(evaluate);

  EvalOptions batch_opts;
  fs::path list;
  std::optional<fs::path> summary;
  std::optional<fs::path> reports;
  auto* batch = app.add_subcommand("batch", "Evaluate the slides named in a list file");
  batch->add_option("list", list, "One slide path per line")->required();
  batch->add_option("--summary", summary, "Write the CSV summary here instead of stdout");
  batch->add_option("--reports", reports, "Directory for per-slide JSON reports");
  batch_opts.Add(batch);

  fs::path cal_dir;
  std::optional<fs::path> cal_out;
  double cal_mag = 4;
  int cal_workers = 0;
  auto* cal_grid = app.add_subcommand("calibrate-grid",
                                      "Grid-free background reference from PNG patches or slides");
  cal_grid->add_option("dir", cal_dir)->required();
  cal_grid->add_option("--out", cal_out);
  cal_grid->add_option("--magnification", cal_mag)->capture_default_str();

  double stain_mag = 20;
  auto* cal_stain = app.add_subcommand("calibrate-stain", "Stain gray ranges from reference slides");
  cal_stain->add_option("dir", cal_dir)->required();
  cal_stain->add_option("--out", cal_out);
  cal_stain->add_option("--magnification", stain_mag)->capture_default_str();
  cal_stain->add_option("--workers", cal_workers)->check(CLI::NonNegativeNumber);

  fs::path labels;
  std::optional<fs::path> model_out;
  score::GbdtConfig gbdt;
  auto* train_score = app.add_subcommand("train-score", "Fit the slide score model");
  train_score->add_option("labels", labels, "CSV with q1..q8,label columns")->required();
  train_score->add_option("--out", model_out);
  train_score->add_option("--rounds", gbdt.rounds)->capture_default_str();
  train_score->add_option("--max-depth", gbdt.max_depth)->capture_default_str();
  train_score->add_option("--eta", gbdt.eta)->capture_default_str();
  train_score->add_option("--lambda", gbdt.lambda)->capture_default_str();
  train_score->add_option("--gamma", gbdt.gamma)->capture_default_str();

  fs::path dataset;
  std::optional<fs::path> weights_out;
  focus::TrainConfig focus_cfg;
  bool binary = false;
  auto* train_focus = app.add_subcommand("train-focus", "Fit sharpness weights on labelled windows");
  train_focus->add_option("dataset", dataset, "Directory with labels.csv and PNG windows")->required();
  train_focus->add_option("--out", weights_out);
  train_focus->add_option("--epochs", focus_cfg.epochs)->capture_default_str();
  train_focus->add_option("--learning-rate", focus_cfg.learning_rate)->capture_default_str();
  train_focus->add_option("--filters", focus_cfg.n_filters)->capture_default_str();
  train_focus->add_option("--batch-size", focus_cfg.batch_size)->capture_default_str();
  train_focus->add_option("--seed", focus_cfg.seed)->capture_default_str();
  train_focus->add_flag("--binary", binary, "Write the binary weight format");

  fs::path spec_path;
  fs::path out_dir;
  auto* synth_cmd = app.add_subcommand("synth", "Render a synthetic slide with oracle artifacts");
  synth_cmd->add_option("spec", spec_path, "Scene specification JSON")->required();
  synth_cmd->add_option("out", out_dir)->required();

  synth::FocusLadderConfig ladder;
  auto* ladder_cmd = app.add_subcommand("synth-ladder", "Render a blur-ladder focus training set");
  ladder_cmd->add_option("out", out_dir)->required();
  ladder_cmd->add_option("--levels", ladder.levels)->capture_default_str();
  ladder_cmd->add_option("--windows", ladder.windows_per_level)->capture_default_str();
  ladder_cmd->add_option("--background-share", ladder.background_share)->capture_default_str();
  ladder_cmd->add_option("--seed", ladder.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*evaluate) return RunEvaluate(slide, eval_opts, report, heatmaps);
    if (*batch) return RunBatch(list, batch_opts, summary, reports);
    if (*cal_grid) return RunCalibrateGrid(cal_dir, cal_mag, cal_out);
    if (*cal_stain) return RunCalibrateStain(cal_dir, stain_mag, cal_workers, cal_out);
    if (*train_score) return RunTrainScore(labels, gbdt, model_out);
    if (*train_focus) return RunTrainFocus(dataset, focus_cfg, binary, weights_out);
    if (*synth_cmd) return RunSynth(spec_path, out_dir);
    if (*ladder_cmd) return RunSynthLadder(out_dir, ladder);
  } catch (const pipeline::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return IsInputError(e.code()) ? kInput : kEvaluation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return IsInputError(e.code()) ? kInput : kEvaluation;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kEvaluation;
  }
  return kUsage;
}
