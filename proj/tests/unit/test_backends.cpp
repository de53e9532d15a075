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

#include <fstream>

#include "test_util.hpp"
#include "wsiqc/backends.hpp"
#include "wsiqc/png_io.hpp"
#include "wsiqc/synth.hpp"

using namespace wsiqc;
using namespace wsiqc::backend;
using wsiqc::testing::TempDir;

namespace {

ArtifactSet Sample() {
  ArtifactSet set;
  content::Detection d;
  d.magnification = 20;
  d.grid_i = 1;
  d.grid_j = 2;
  d.cls = content::DetectionClass::kNeutrophil;
  d.box = {10, 20, 30, 40};
  d.conf = 0.875;
  set.detections.push_back(d);
  d.cls = content::DetectionClass::kCellMass;
  d.magnification = 2.5;
  set.detections.push_back(d);

  artifact::SegMask m;
  m.magnification = 4;
  m.grid_i = 0;
  m.grid_j = 3;
  m.mask_class = artifact::MaskClass::kBubble;
  m.bits = GrayImage(kPatchSize, kPatchSize, 0);
  for (int x = 0; x < 100; ++x) m.bits.at(x, 7) = 255;
  set.masks.push_back(m);
  m.mask_class = artifact::MaskClass::kMarker;
  m.grid_j = 4;
  set.masks.push_back(m);
  set.producer = "unit";
  set.version = "1";
  return set;
}

}  // namespace

TEST_CASE("detection lines") {
  const ArtifactSet s = Sample();
  const std::string line = DetectionToJson(s.detections[0]);
  CHECK(DetectionFromJson(line, 1) == s.detections[0]);
  CHECK(DetectionFromJson(R"({"level":"20","i":0,"j":0,"class":"squamous_cell","x":1,"y":1,"w":2,"h":2,"conf":1})", 1)
            .magnification == 20);

  CHECK_THROWS_CODE(DetectionFromJson("{", 7), ErrorCode::kMalformedDetectionLine);
  CHECK_THROWS_CODE(DetectionFromJson(R"({"level":20,"i":0,"j":0,"class":"squamous_cell","x":1,"y":1,"w":2,"h":2})", 3),
                    ErrorCode::kMalformedDetectionLine);
  CHECK_THROWS_CODE(DetectionFromJson(R"({"level":20,"i":0,"j":0,"class":"squamous_cell","x":600,"y":1,"w":2,"h":2,"conf":1})", 3),
                    ErrorCode::kMalformedDetectionLine);
  CHECK_THROWS_CODE(DetectionFromJson(R"({"level":20,"i":0,"j":0,"class":"platelet","x":1,"y":1,"w":2,"h":2,"conf":1})", 3),
                    ErrorCode::kUnknownClass);
  try {
    DetectionFromJson("[]", 42);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 42") != std::string::npos);
  }
}

TEST_CASE("artifact directory round trip is a fixpoint") {
  TempDir tmp("backend");
  const ArtifactSet s = Sample();
  SaveArtifacts(tmp / "a", s);
  CHECK(std::filesystem::exists(tmp / "a" / "masks" / "4_0_3_bubble.png"));
  const ArtifactSet once = LoadArtifacts(tmp / "a");
  CHECK(once.detections == s.detections);
  CHECK(once.masks.size() == 2);
  CHECK(once.producer == "unit");
  SaveArtifacts(tmp / "b", once);
  CHECK(LoadArtifacts(tmp / "b") == once);

  bool found = false;
  for (const auto& m : once.masks) {
    if (m.mask_class == artifact::MaskClass::kBubble) {
      CHECK(m == s.masks[0]);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("missing files mean nothing detected") {
  TempDir tmp("backend_empty");
  const ArtifactSet s = LoadArtifacts(tmp.path());
  CHECK(s.detections.empty());
  CHECK(s.masks.empty());
  CHECK_THROWS_CODE(LoadArtifacts(tmp / "nope"), ErrorCode::kIo);
}

TEST_CASE("bad artifact files") {
  TempDir tmp("backend_bad");
  std::filesystem::create_directories(tmp / "m" / "masks");
  WritePngMask(tmp / "m" / "masks" / "4_0_0_marker.png", GrayImage(256, 256, 1));
  CHECK_THROWS_CODE(LoadArtifacts(tmp / "m"), ErrorCode::kMaskSizeMismatch);

  std::filesystem::create_directories(tmp / "c" / "masks");
  WritePngMask(tmp / "c" / "masks" / "4_0_0_fold.png", GrayImage(kPatchSize, kPatchSize, 1));
  CHECK_THROWS_CODE(LoadArtifacts(tmp / "c"), ErrorCode::kUnknownClass);

  std::filesystem::create_directories(tmp / "d");
  {
    std::ofstream out(tmp / "d" / "detections.jsonl");
    out << DetectionToJson(Sample().detections[0]) << "\n\n";
    out << "{\"level\": 20}\n";
  }
  try {
    LoadArtifacts(tmp / "d");
    FAIL("expected MalformedDetectionLine");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMalformedDetectionLine);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("oracle artifacts survive the file format") {
  synth::SceneSpec spec;
  spec.width = spec.height = 2048;
  spec.specimen = synth::Rect{256, 256, 1536, 1536};
  spec.cells = 120;
  spec.neutrophils = 30;
  spec.masses = 3;
  spec.markers.push_back({300, 300, 1500, 400, 12});
  spec.bubbles.push_back({1000, 1200, 150});
  const synth::SyntheticSlide slide = synth::GenerateSlide(spec);
  CHECK(slide.oracle.provenance == Provenance::kOracle);
  CHECK_FALSE(slide.oracle.detections.empty());
  CHECK_FALSE(slide.oracle.masks.empty());

  TempDir tmp("backend_oracle");
  SaveArtifacts(tmp.path(), slide.oracle);
  const ArtifactSet back = LoadArtifacts(tmp.path(), Provenance::kOracle);
  CHECK(back.detections == slide.oracle.detections);
  CHECK(back.masks.size() == slide.oracle.masks.size());
}
