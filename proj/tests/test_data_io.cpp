#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "crowdcount/data_io.hpp"
#include "crowdcount/error.hpp"
#include "test_util.hpp"

using namespace crowdcount;
namespace fs = std::filesystem;

TEST_CASE("label_patch boundaries") {
  CHECK(label_patch(0, 100) == CrowdClass::NCP);
  CHECK(label_patch(5, 100) == CrowdClass::LCP);
  CHECK(label_patch(6, 100) == CrowdClass::MCP);
  CHECK(label_patch(20, 100) == CrowdClass::MCP);
  CHECK(label_patch(21, 100) == CrowdClass::HCP);
  CHECK(label_patch(1, 1) == CrowdClass::HCP);
  CHECK(test::error_code_of([] { label_patch(-1, 100); }) == ErrorCode::Argument);
  CHECK(test::error_code_of([] { label_patch(3, 0); }) == ErrorCode::Argument);
}

TEST_CASE("label_patch agrees with a rational-arithmetic oracle") {
  // cc ≤ 0.05·m  ⇔  20·cc ≤ m;  cc ≤ 0.2·m  ⇔  5·cc ≤ m.
  for (int64_t m : {1, 2, 3, 7, 19, 20, 21, 99, 100, 101, 997, 1000}) {
    for (int64_t cc = 0; cc <= 3 * m; ++cc) {
      CrowdClass want = cc == 0 ? CrowdClass::NCP
                        : 20 * cc <= m ? CrowdClass::LCP
                        : 5 * cc <= m  ? CrowdClass::MCP
                                       : CrowdClass::HCP;
      REQUIRE_MESSAGE(label_patch(cc, m) == want, "cc=" << cc << " m=" << m);
    }
  }
}

TEST_CASE("segmentation target of a single disk") {
  const std::vector<Point> pts{{128, 128}};
  const auto seg = make_gt_segmap(pts, 8.0, 256, 256);
  int64_t want = 0;
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x) {
      const bool inside = (x - 128) * (x - 128) + (y - 128) * (y - 128) <= 64;
      want += inside;
      REQUIRE(seg.at(y, x) == (inside ? 1 : 0));
    }
  CHECK(seg.ones() == want);
  CHECK(want == 197);
}

TEST_CASE("segmentation target pooling") {
  SUBCASE("empty") {
    const auto seg = make_gt_segmap({}, 8.0, 64, 64);
    CHECK(seg.ones() == 0);
    CHECK(seg.map.size() == 64u * 64u);
  }
  SUBCASE("corner hit survives max-pooling") {
    const std::vector<Point> pts{{0, 0}};
    const auto seg = make_gt_segmap(pts, 8.0, 64, 64);
    CHECK(seg.at(0, 0) == 1);
  }
  SUBCASE("pooled map is the block-max of the full map") {
    const std::vector<Point> pts{{30, 200}, {250, 3}, {100, 100}};
    const auto full = make_gt_segmap(pts, 5.0, 256, 256);
    const auto pooled = make_gt_segmap(pts, 5.0, 32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        int m = 0;
        for (int dy = 0; dy < 8; ++dy)
          for (int dx = 0; dx < 8; ++dx) m = std::max<int>(m, full.at(8 * y + dy, 8 * x + dx));
        REQUIRE(pooled.at(y, x) == m);
      }
  }
}

TEST_CASE("horizontal flip mirrors pixels and points") {
  Patch p;
  p.pixels = Image(3, 256, 256);
  p.pixels.at(1, 7, 10) = 200.0f;
  p.points = {{10, 7}};
  const Patch f = flip_patch(p);
  REQUIRE(f.points.size() == 1);
  CHECK(f.points[0].x == 245.0);
  CHECK(f.points[0].y == 7.0);
  CHECK(f.pixels.at(1, 7, 245) == 200.0f);
  const Patch back = flip_patch(f);
  CHECK(back.pixels == p.pixels);
  CHECK(back.points == p.points);
}

TEST_CASE("synthetic generation") {
  SUBCASE("empty crowd") {
    SynthOptions o;
    o.seed = 7;
    const auto recs = generate_synthetic(o);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].points.empty());
    CHECK(recs[0].image.height == 256);
    CHECK(recs[0].image.width == 256);
  }
  SUBCASE("deterministic for a fixed seed") {
    SynthOptions o;
    o.n_images = 2;
    o.size_range = {512, 512};
    o.count_range = {10, 10};
    o.seed = 7;
    const auto a = generate_synthetic(o), b = generate_synthetic(o);
    REQUIRE(a.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
      CHECK(a[i].image == b[i].image);
      CHECK(a[i].points == b[i].points);
      CHECK(a[i].points.size() == 10);
    }
    o.seed = 8;
    CHECK_FALSE(generate_synthetic(o)[0].image == a[0].image);
  }
  SUBCASE("impossible density") {
    SynthOptions o;
    o.count_range = {5000, 5000};
    o.seed = 7;
    CHECK(test::error_code_of([&] { generate_synthetic(o); }) == ErrorCode::Generation);
  }
  SUBCASE("blobs are darker than the background") {
    SynthOptions o;
    o.count_range = {1, 1};
    o.seed = 3;
    const auto r = generate_synthetic(o)[0];
    const auto& p = r.points[0];
    double center = 0, corner = 0;
    for (int c = 0; c < 3; ++c) center += r.image.at(c, static_cast<int>(p.y), static_cast<int>(p.x));
    const int cy = p.y < 128 ? 250 : 5, cx = p.x < 128 ? 250 : 5;
    for (int c = 0; c < 3; ++c) corner += r.image.at(c, cy, cx);
    CHECK(center + 40 < corner);
  }
  SUBCASE("counts stay inside the requested range") {
    SynthOptions o;
    o.n_images = 30;
    o.size_range = {40, 90};
    o.count_range = {2, 6};
    o.blob_radius = {2, 3};
    o.seed = 1;
    for (const auto& r : generate_synthetic(o)) {
      CHECK(r.points.size() >= 2);
      CHECK(r.points.size() <= 6);
      CHECK_NOTHROW(validate_record(r));
    }
  }
}

TEST_CASE("training patch sampling") {
  ImageRecord rec;
  rec.id = "r";
  rec.image = Image(3, 512, 512, 100.0f);
  for (int k = 0; k < 7; ++k) rec.points.push_back({250.0 + k, 260.0 - k});
  std::vector<ImageRecord> recs{rec};

  SUBCASE("mirrored copies double the count") {
    const std::vector<int> sizes{128, 256, 512};
    const auto patches = sample_training_patches(recs, 10, sizes, 5);
    CHECK(patches.size() == 20);
    for (const auto& p : patches) {
      CHECK(p.pixels.height == 256);
      CHECK(p.pixels.width == 256);
    }
  }
  SUBCASE("a full-image crop keeps every head") {
    const std::vector<int> sizes{512};
    for (const auto& p : sample_training_patches(recs, 3, sizes, 9)) CHECK(p.gt_count() == 7);
  }
  SUBCASE("records below every crop size") {
    const std::vector<int> sizes{1024};
    CHECK(test::error_code_of([&] { sample_training_patches(recs, 2, sizes, 1); }) ==
          ErrorCode::Sampling);
  }
}

TEST_CASE("manifest loading") {
  test::TempDir dir("manifest");
  write_png(dir.path / "a.png", Image(3, 256, 256, 10.0f));

  SUBCASE("empty manifest") {
    std::ofstream(dir.path / "m.jsonl") << "";
    CHECK(load_dataset(dir.path / "m.jsonl").empty());
  }
  SUBCASE("one image without heads") {
    std::ofstream(dir.path / "m.jsonl") << R"({"id": "a", "image": "a.png", "points": []})" << "\n\n";
    const auto recs = load_dataset(dir.path / "m.jsonl");
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].points.empty());
    CHECK(recs[0].image.width == 256);
  }
  SUBCASE("point outside the image") {
    std::ofstream(dir.path / "m.jsonl") << R"({"id": "a", "image": "a.png", "points": [[300, 10]]})";
    try {
      load_dataset(dir.path / "m.jsonl");
      FAIL("expected a validation error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Validation);
      CHECK(std::string(e.what()).find("'a'") != std::string::npos);
    }
  }
  SUBCASE("missing manifest names the path") {
    try {
      load_dataset(dir.path / "nope.jsonl");
      FAIL("expected a load error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Load);
      CHECK(std::string(e.what()).find("nope.jsonl") != std::string::npos);
    }
  }
  SUBCASE("missing image") {
    std::ofstream(dir.path / "m.jsonl") << R"({"id": "b", "image": "b.png", "points": []})";
    CHECK(test::error_code_of([&] { load_dataset(dir.path / "m.jsonl"); }) == ErrorCode::Load);
  }
  SUBCASE("write then load round-trips") {
    SynthOptions o;
    o.n_images = 3;
    o.size_range = {60, 80};
    o.count_range = {0, 5};
    o.blob_radius = {2, 3};
    o.seed = 4;
    const auto recs = generate_synthetic(o);
    const auto manifest = write_dataset(recs, dir.path / "ds");
    const auto back = load_dataset(manifest);
    REQUIRE(back.size() == recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
      CHECK(back[i].id == recs[i].id);
      CHECK(back[i].points == recs[i].points);
      CHECK(back[i].image.height == recs[i].image.height);
    }
  }
}

TEST_CASE("dataset statistics") {
  ImageRecord r;
  r.image = Image(3, 300, 600);
  for (int k = 0; k < 5; ++k) r.points.push_back({10.0 + k, 10});
  for (int k = 0; k < 9; ++k) r.points.push_back({300.0 + k, 280});
  std::vector<ImageRecord> recs{r};
  CHECK(compute_dataset_stats(recs, 256).cc_max == 9);
  ImageRecord empty;
  empty.image = Image(3, 10, 10);
  std::vector<ImageRecord> none{empty};
  CHECK(compute_dataset_stats(none, 256).cc_max == 1);
}
