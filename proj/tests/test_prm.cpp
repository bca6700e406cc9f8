#include <doctest.h>

#include <random>

#include "crowdcount/error.hpp"
#include "crowdcount/prm.hpp"
#include "test_util.hpp"

using namespace crowdcount;

TEST_CASE("bilinear resize of a 2x2 image to 4x4") {
  Image in(1, 2, 2);
  in.data = {1, 3, 5, 7};
  const Image out = bilinear_resize(in, 4, 4);
  // Row/column source coordinates are 0, 0.25, 0.75, 1 after clamping.
  const float want[4][4] = {{1, 1.5f, 2.5f, 3}, {2, 2.5f, 3.5f, 4}, {4, 4.5f, 5.5f, 6}, {5, 5.5f, 6.5f, 7}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(out.at(0, i, j) == doctest::Approx(want[i][j]).epsilon(1e-7));
  CHECK(test::max_abs_diff(out, test::oracle_bilinear(in, 4, 4)) < 1e-6);
}

TEST_CASE("bilinear resize matches the per-pixel oracle") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> side(1, 40);
  for (int t = 0; t < 60; ++t) {
    const Image in = test::random_image(2, side(rng), side(rng), rng);
    const int oh = side(rng), ow = side(rng);
    REQUIRE(test::max_abs_diff(bilinear_resize(in, oh, ow), test::oracle_bilinear(in, oh, ow)) < 1e-4);
  }
}

TEST_CASE("bilinear resize properties") {
  std::mt19937_64 rng(5);
  SUBCASE("constant stays constant") {
    const Image in(3, 13, 7, 42.5f);
    const Image out = bilinear_resize(in, 29, 4);
    for (float v : out.data) CHECK(v == doctest::Approx(42.5f).epsilon(1e-7));
  }
  SUBCASE("identity size is bit-identical") {
    const Image in = test::random_image(3, 11, 17, rng);
    CHECK(bilinear_resize(in, 11, 17) == in);
  }
  SUBCASE("output stays inside the input range") {
    const Image in = test::random_image(1, 9, 12, rng);
    const auto [lo, hi] = std::minmax_element(in.data.begin(), in.data.end());
    for (float v : bilinear_resize(in, 31, 5).data) {
      CHECK(v >= *lo - 1e-3f);
      CHECK(v <= *hi + 1e-3f);
    }
  }
  SUBCASE("linear in the pixel values") {
    const Image a = test::random_image(1, 8, 8, rng), b = test::random_image(1, 8, 8, rng);
    Image mix(1, 8, 8);
    for (size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = 0.25f * a.data[i] + 0.5f * b.data[i];
    const Image ra = bilinear_resize(a, 16, 5), rb = bilinear_resize(b, 16, 5), rm = bilinear_resize(mix, 16, 5);
    for (size_t i = 0; i < rm.data.size(); ++i)
      CHECK(rm.data[i] == doctest::Approx(0.25 * ra.data[i] + 0.5 * rb.data[i]).epsilon(1e-5));
  }
}

TEST_CASE("rescaler output-count law") {
  std::mt19937_64 rng(2);
  const Image p = test::random_image(3, 64, 64, rng);
  const size_t want[4] = {0, 1, 1, 4};
  for (auto cls : kAllClasses) {
    for (auto rule : {LcpRule::DownscaleCentered, LcpRule::Identity}) {
      PrmOptions o;
      o.lcp = rule;
      const auto out = prm_rescale(p, cls, o);
      CHECK(out.patches.size() == want[static_cast<int>(cls)]);
      CHECK(out.provenance == rescale_tags(cls, o));
      for (const auto& q : out.patches) {
        CHECK(q.height == 64);
        CHECK(q.width == 64);
        CHECK(q.channels == 3);
      }
    }
  }
}

TEST_CASE("rescaler geometry") {
  std::mt19937_64 rng(3);
  const Image p = test::random_image(3, 32, 32, rng);

  SUBCASE("medium crowd passes through") {
    CHECK(prm_rescale(p, CrowdClass::MCP).patches[0] == p);
  }
  SUBCASE("high crowd: quadrants TL, TR, BL, BR upscaled 2x") {
    const auto out = prm_rescale(p, CrowdClass::HCP);
    const int origins[4][2] = {{0, 0}, {0, 16}, {16, 0}, {16, 16}};
    for (int q = 0; q < 4; ++q) {
      const Image src = crop(p, origins[q][0], origins[q][1], 16, 16);
      CHECK(test::max_abs_diff(out.patches[q], test::oracle_bilinear(src, 32, 32)) < 1e-4);
    }
  }
  SUBCASE("low crowd: half-size copy centred on a zero canvas") {
    const Image out = prm_rescale(p, CrowdClass::LCP).patches[0];
    const Image small = test::oracle_bilinear(p, 16, 16);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          const bool inside = y >= 8 && y < 24 && x >= 8 && x < 24;
          const float want = inside ? small.at(c, y - 8, x - 8) : 0.0f;
          REQUIRE(out.at(c, y, x) == doctest::Approx(want).epsilon(1e-6));
        }
  }
  SUBCASE("constant patch gives four identical constant quadrants") {
    for (const auto& q : prm_rescale(Image(3, 32, 32, 77.0f), CrowdClass::HCP).patches)
      for (float v : q.data) REQUIRE(v == doctest::Approx(77.0f));
  }
  SUBCASE("no crowd: nothing") { CHECK(prm_rescale(p, CrowdClass::NCP).patches.empty()); }
  SUBCASE("wrong shape") {
    CHECK(test::error_code_of([] { prm_rescale(Image(3, 32, 30), CrowdClass::MCP); }) == ErrorCode::Argument);
    CHECK(test::error_code_of([] { prm_rescale(Image(3, 31, 31), CrowdClass::HCP); }) == ErrorCode::Argument);
    CHECK(test::error_code_of([] { prm_rescale(Image(1, 32, 32), CrowdClass::HCP); }) == ErrorCode::Argument);
  }
}

TEST_CASE("points follow the rescale") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> coord(0, 255);
  std::vector<Point> pts;
  for (int k = 0; k < 300; ++k) pts.push_back({double(coord(rng)), double(coord(rng))});

  size_t across_quadrants = 0;
  for (auto tag : rescale_tags(CrowdClass::HCP)) {
    const auto moved = rescale_points(pts, tag, 256);
    across_quadrants += moved.size();
    for (const auto& p : moved) {
      CHECK(p.x >= 0);
      CHECK(p.x <= 255);
      CHECK(p.y >= 0);
      CHECK(p.y <= 255);
    }
  }
  CHECK(across_quadrants == pts.size());
  CHECK(rescale_points(pts, RescaleTag::Identity, 256) == pts);

  const auto down = rescale_points(pts, RescaleTag::Downscaled, 256);
  REQUIRE(down.size() == pts.size());
  for (const auto& p : down) {
    CHECK(p.x >= 64);
    CHECK(p.x < 192);
    CHECK(p.y >= 64);
    CHECK(p.y < 192);
  }

  // A head at the centre of the top-left quadrant lands near the output centre.
  const std::vector<Point> one{{64, 64}};
  const auto tl = rescale_points(one, RescaleTag::QuadrantTL, 256);
  REQUIRE(tl.size() == 1);
  CHECK(std::abs(tl[0].x - 128.5) <= 1.0);
  CHECK(rescale_points(one, RescaleTag::QuadrantBR, 256).empty());
}
