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

#include "wsiqc/backends.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "wsiqc/error.hpp"
#include "wsiqc/png_io.hpp"
#include "wsiqc/pyramid.hpp"

namespace wsiqc::backend {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string_view ProvenanceName(Provenance p) {
  return p == Provenance::kOracle ? "oracle" : "files";
}

std::string DetectionToJson(const content::Detection& d) {
  json j{{"level", d.magnification},
         {"i", d.grid_i},
         {"j", d.grid_j},
         {"class", content::DetectionClassName(d.cls)},
         {"x", d.box.x},
         {"y", d.box.y},
         {"w", d.box.w},
         {"h", d.box.h},
         {"conf", d.conf}};
  return j.dump();
}

namespace {

[[noreturn]] void BadLine(std::size_t line_no, const std::string& why) {
  throw Error(ErrorCode::kMalformedDetectionLine,
              "detections.jsonl line " + std::to_string(line_no) + ": " + why);
}

double ParseLevel(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    double out = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec == std::errc() && res.ptr == s.data() + s.size()) return out;
  }
  throw std::invalid_argument("level must be a magnification");
}

}  // namespace

content::Detection DetectionFromJson(std::string_view line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    BadLine(line_no, e.what());
  }
  if (!j.is_object()) BadLine(line_no, "expected an object");
  content::Detection d;
  std::string cls;
  try {
    d.magnification = ParseLevel(j.at("level"));
    d.grid_i = j.at("i").get<std::int64_t>();
    d.grid_j = j.at("j").get<std::int64_t>();
    cls = j.at("class").get<std::string>();
    d.box = {j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(),
             j.at("h").get<int>()};
    d.conf = j.at("conf").get<double>();
  } catch (const std::exception& e) {
    BadLine(line_no, e.what());
  }
  d.cls = content::ParseDetectionClass(cls);
  if (!(d.magnification > 0)) BadLine(line_no, "level must be positive");
  if (auto problem = content::DetectionProblem(d); !problem.empty()) {
    BadLine(line_no, std::string(problem));
  }
  return d;
}

std::string MaskFileName(const artifact::SegMask& mask) {
  return MagnificationLabel(mask.magnification) + "_" + std::to_string(mask.grid_i) + "_" +
         std::to_string(mask.grid_j) + "_" + std::string(artifact::MaskClassName(mask.mask_class)) +
         ".png";
}

namespace {

artifact::SegMask LoadMask(const fs::path& path) {
  // <level>_<i>_<j>_<class>; the level may itself contain a dot.
  const std::string stem = path.stem().string();
  std::vector<std::string> parts;
  std::stringstream ss(stem);
  std::string part;
  while (std::getline(ss, part, '_')) parts.push_back(part);
  if (parts.size() != 4) {
    throw Error(ErrorCode::kInvalidArgument, "mask name must be <level>_<i>_<j>_<class>.png: " +
                                                 path.filename().string());
  }
  artifact::SegMask m;
  m.mask_class = artifact::ParseMaskClass(parts[3]);
  try {
    m.magnification = ParseLevel(parts[0]);
    std::size_t used = 0;
    m.grid_i = std::stoll(parts[1], &used);
    if (used != parts[1].size()) throw std::invalid_argument("i");
    m.grid_j = std::stoll(parts[2], &used);
    if (used != parts[2].size()) throw std::invalid_argument("j");
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "bad mask coordinates: " + path.filename().string());
  }
  if (!(m.magnification > 0) || m.grid_i < 0 || m.grid_j < 0) {
    throw Error(ErrorCode::kInvalidArgument, "bad mask coordinates: " + path.filename().string());
  }
  m.bits = ReadPngGray(path);
  if (m.bits.width != kPatchSize || m.bits.height != kPatchSize) {
    throw Error(ErrorCode::kMaskSizeMismatch,
                path.filename().string() + " is " + std::to_string(m.bits.width) + "x" +
                    std::to_string(m.bits.height) + ", expected 512x512");
  }
  for (auto& v : m.bits.data) v = v ? 255 : 0;
  return m;
}

}  // namespace

ArtifactSet LoadArtifacts(const fs::path& dir, Provenance provenance) {
  if (!fs::is_directory(dir)) {
    throw Error(ErrorCode::kIo, "artifact directory not found: " + dir.string());
  }
  ArtifactSet set;
  set.provenance = provenance;

  if (const fs::path meta = dir / "meta.json"; fs::exists(meta)) {
    std::ifstream in(meta);
    try {
      const json j = json::parse(in);
      set.producer = j.value("producer", "");
      set.version = j.value("version", "");
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, "meta.json: " + std::string(e.what()));
    }
  }

  if (const fs::path det = dir / "detections.jsonl"; fs::exists(det)) {
    std::ifstream in(det);
    if (!in) throw Error(ErrorCode::kIo, "cannot read " + det.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      set.detections.push_back(DetectionFromJson(line, line_no));
    }
  }

  if (const fs::path masks = dir / "masks"; fs::is_directory(masks)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(masks)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) set.masks.push_back(LoadMask(f));
  }
  return set;
}

void SaveArtifacts(const fs::path& dir, const ArtifactSet& set) {
  fs::create_directories(dir / "masks");
  {
    std::ofstream out(dir / "detections.jsonl");
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir / "detections.jsonl").string());
    for (const auto& d : set.detections) out << DetectionToJson(d) << '\n';
  }
  for (const auto& m : set.masks) {
    if (m.bits.width != kPatchSize || m.bits.height != kPatchSize) {
      throw Error(ErrorCode::kMaskSizeMismatch, "mask must be 512x512");
    }
    WritePngMask(dir / "masks" / MaskFileName(m), m.bits);
  }
  if (!set.producer.empty() || !set.version.empty()) {
    std::ofstream out(dir / "meta.json");
    out << json{{"producer", set.producer}, {"version", set.version}}.dump(2) << '\n';
  }
}

}  // namespace wsiqc::backend
