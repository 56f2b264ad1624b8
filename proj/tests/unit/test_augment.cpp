#include <random>

#include "csenn/augment.hpp"
#include "csenn/data.hpp"
#include "doctest_torch.hpp"

using namespace csenn;

namespace {

ImageSample gradient_image(int h, int w, std::vector<BoundingBox> boxes) {
  ImageSample s;
  s.height = h;
  s.width = w;
  s.pixels.resize(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) s.at(y, x, ch) = static_cast<float>((x * 7 + y * 3 + ch * 50) % 256) / 255.0f;
  s.action_labels = {1, 0, 0, 1};
  s.boxes = std::move(boxes);
  s.sample_id = "img";
  return s;
}

bool pixel_equal(const ImageSample& a, const ImageSample& b, int y, int x) {
  for (int ch = 0; ch < 3; ++ch)
    if (a.at(y, x, ch) != b.at(y, x, ch)) return false;
  return true;
}

bool pixel_differs_everywhere(const ImageSample& a, const ImageSample& b, int y, int x) {
  for (int ch = 0; ch < 3; ++ch)
    if (a.at(y, x, ch) == b.at(y, x, ch)) return false;
  return true;
}

}  // namespace

TEST_SUITE("augment") {

TEST_CASE("box covering the whole image leaves it unchanged") {
  auto s = gradient_image(32, 32, {{0, 0, 32, 32, "obstacle"}});
  auto m = mask_image(s, {});
  CHECK(m.pixels == s.pixels);
  CHECK(m.sample_id == "img#mask");
  CHECK(is_masked_id(m.sample_id));
  CHECK_FALSE(is_masked_id(s.sample_id));
}

TEST_CASE("empty box list replaces every pixel") {
  auto s = gradient_image(16, 16, {});
  auto m = mask_image(s, {});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) CHECK(pixel_differs_everywhere(s, m, y, x));
}

TEST_CASE("one box with margin 4 on a 64x64 image") {
  auto s = gradient_image(64, 64, {{16, 16, 32, 32, "obstacle"}});
  MaskConfig cfg;
  cfg.epsilon_px = 4;
  cfg.seed = 11;
  auto m = mask_image(s, cfg);
  int kept = 0;
  int replaced = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const bool inside = x >= 12 && x < 36 && y >= 12 && y < 36;
      if (inside) {
        CHECK(pixel_equal(s, m, y, x));
        ++kept;
      } else {
        CHECK(pixel_differs_everywhere(s, m, y, x));
        ++replaced;
      }
    }
  CHECK(kept == 576);
  CHECK(replaced == 64 * 64 - 576);
  CHECK((m.boxes == s.boxes));
  CHECK(m.action_labels == s.action_labels);
}

TEST_CASE("noise is uniform in [0,1] and follows the keyed stream") {
  auto s = gradient_image(16, 16, {});
  MaskConfig cfg;
  cfg.seed = 5;
  auto m = mask_image(s, cfg);
  std::mt19937_64 rng(noise_stream_seed(5, "img"));
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (std::size_t i = 0; i < m.pixels.size(); ++i) {
    CHECK(m.pixels[i] == u(rng));
    CHECK(m.pixels[i] >= 0.0f);
    CHECK(m.pixels[i] <= 1.0f);
  }
}

TEST_CASE("preserved mask") {
  SUBCASE("no boxes") { CHECK(preserved_mask({}, 10, 8, 8).count() == 0); }
  SUBCASE("overlapping boxes form a union") {
    std::vector<BoundingBox> boxes{{0, 0, 10, 10, "a"}, {5, 5, 15, 15, "b"}};
    const auto n = preserved_mask(boxes, 0, 32, 32).count();
    CHECK(n == 100 + 100 - 25);
    CHECK(n <= 200);
  }
  SUBCASE("corner box is clipped at the border") {
    auto m = preserved_mask({{0, 0, 4, 4, "a"}}, 3, 16, 16);
    CHECK(m.count() == 7 * 7);
    CHECK(m.at(6, 6));
    CHECK_FALSE(m.at(7, 0));
    auto far = preserved_mask({{12, 12, 16, 16, "a"}}, 10, 16, 16);
    CHECK(far.count() == 14 * 14);
  }
}

TEST_CASE("determinism and idempotence") {
  auto s = gradient_image(32, 32, {{4, 4, 10, 12, "sign_left"}, {20, 18, 28, 30, "obstacle"}});
  MaskConfig cfg;
  cfg.seed = 99;
  auto a = mask_image(s, cfg);
  auto b = mask_image(s, cfg);
  CHECK(a.pixels == b.pixels);

  auto twice = mask_image(a, cfg);
  const auto keep = preserved_mask(s.boxes, cfg.epsilon_px, 32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (keep.at(y, x)) CHECK(pixel_equal(twice, s, y, x));

  cfg.seed = 100;
  CHECK(mask_image(s, cfg).pixels != a.pixels);
}

TEST_CASE("negative margin is rejected") {
  MaskConfig cfg;
  cfg.epsilon_px = -1;
  CHECK_THROWS_AS(mask_image(gradient_image(4, 4, {}), cfg), ConfigError);
}

TEST_CASE("masking contract on 100 synthetic scenes") {
  auto data = generate_synthetic(100, 21);
  MaskConfig cfg;
  cfg.seed = 3;
  for (const auto& e : data.entries) {
    const auto& s = e.sample;
    auto m = mask_image(s, cfg);
    const auto keep = preserved_mask(s.boxes, cfg.epsilon_px, s.height, s.width);
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        if (keep.at(y, x))
          REQUIRE(pixel_equal(s, m, y, x));
        else
          REQUIRE(pixel_differs_everywhere(s, m, y, x));
      }
    REQUIRE(mask_image(s, cfg).pixels == m.pixels);
  }
}

}  // TEST_SUITE
