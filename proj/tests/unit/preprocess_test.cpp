#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "plotgrid/png_io.hpp"
#include "plotgrid/preprocess.hpp"
#include "plotgrid/random.hpp"

using namespace plotgrid;
namespace fs = std::filesystem;

namespace {

ImageRecord random_image(Rng& rng, std::uint32_t h, std::uint32_t w, std::string id = "img") {
  ImageRecord r{std::move(id), std::nullopt, Image(h, w)};
  for (auto& p : r.image.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return r;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("plotgrid_preprocess_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Bilinear value at destination (r, c) evaluated straight from the
// half-pixel formula, independent of the tap tables.
double bilinear_oracle(const Image& src, std::uint32_t side, std::size_t r, std::size_t c, std::size_t ch) {
  const double n = src.height;
  auto coord = [&](std::size_t d) { return std::clamp((d + 0.5) * n / side - 0.5, 0.0, n - 1); };
  const double y = coord(r), x = coord(c);
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min<std::size_t>(y0 + 1, src.height - 1), x1 = std::min<std::size_t>(x0 + 1, src.width - 1);
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * (1 - fx) * src.at(y0, x0, ch) + (1 - fy) * fx * src.at(y0, x1, ch) +
         fy * (1 - fx) * src.at(y1, x0, ch) + fy * fx * src.at(y1, x1, ch);
}

}  // namespace

TEST(CenterCrop, LandscapeAndPortrait) {
  Rng rng(1);
  const auto img = random_image(rng, 800, 600);
  const auto crop = center_square_crop(img);
  ASSERT_EQ(crop.image.height, 600u);
  ASSERT_EQ(crop.image.width, 600u);
  for (std::size_t r = 0; r < 600; r += 37)
    for (std::size_t c = 0; c < 600; c += 41)
      for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(crop.image.at(r, c, ch), img.image.at(r + 100, c, ch));

  const auto odd = random_image(rng, 7, 4);
  const auto small = center_square_crop(odd);
  ASSERT_EQ(small.image.height, 4u);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(small.image.at(r, c, 0), odd.image.at(r + 1, c, 0));
}

TEST(CenterCrop, SquareIsIdentityAndIdempotent) {
  Rng rng(2);
  const auto sq = random_image(rng, 128, 128);
  EXPECT_EQ(center_square_crop(sq), sq);
  const auto wide = random_image(rng, 33, 90);
  const auto once = center_square_crop(wide);
  EXPECT_EQ(center_square_crop(once), once);
}

TEST(Resize, ConstantStaysConstant) {
  for (std::uint32_t src : {1u, 7u, 600u}) {
    ImageRecord img{"c", std::nullopt, Image(src, src)};
    for (std::size_t i = 0; i < img.image.pixels.size(); i += 3) {
      img.image.pixels[i] = 17;
      img.image.pixels[i + 1] = 200;
      img.image.pixels[i + 2] = 255;
    }
    for (std::uint32_t side : {1u, 5u, 128u}) {
      const auto out = resize_bilinear(img, side);
      ASSERT_EQ(out.image.height, side);
      for (std::size_t i = 0; i < out.image.pixels.size(); i += 3) {
        ASSERT_EQ(out.image.pixels[i], 17);
        ASSERT_EQ(out.image.pixels[i + 1], 200);
        ASSERT_EQ(out.image.pixels[i + 2], 255);
      }
    }
  }
}

TEST(Resize, CheckerboardUpscaleMatchesHandValues) {
  ImageRecord board{"b", std::nullopt, Image(2, 2)};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    board.image.at(0, 1, ch) = 255;
    board.image.at(1, 0, ch) = 255;
  }
  const auto out = resize_bilinear(board, 4);
  // Source coordinates for 2 -> 4 are {0, .25, .75, 1}; f = 255(x(1-y) + y(1-x)).
  const int expected[4][4] = {{0, 64, 191, 255}, {64, 96, 159, 191}, {191, 159, 96, 64}, {255, 191, 64, 0}};
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double oracle = bilinear_oracle(board.image, 4, r, c, 0);
      EXPECT_EQ(out.image.at(r, c, 0), expected[r][c]) << r << "," << c;
      EXPECT_EQ(out.image.at(r, c, 0), static_cast<int>(std::floor(oracle + 0.5)));
    }
  }
}

TEST(Resize, RandomImagesMatchFormula) {
  Rng rng(5);
  for (auto [src, dst] : {std::pair{9u, 4u}, {13u, 128u}, {300u, 128u}}) {
    const auto img = random_image(rng, src, src);
    const auto out = resize_bilinear(img, dst);
    for (std::size_t r = 0; r < dst; r += 3)
      for (std::size_t c = 0; c < dst; c += 5)
        for (std::size_t ch = 0; ch < 3; ++ch)
          ASSERT_EQ(out.image.at(r, c, ch), static_cast<int>(std::floor(bilinear_oracle(img.image, dst, r, c, ch) + 0.5)));
  }
}

TEST(Resize, IdentityScaleAndErrors) {
  Rng rng(6);
  const auto img = random_image(rng, 128, 128);
  EXPECT_EQ(resize_bilinear(img, 128), img);
  EXPECT_THROW(resize_bilinear(random_image(rng, 4, 5), 4), Error);
  EXPECT_THROW(resize_bilinear(img, 0), Error);
}

TEST(Normalize, AlwaysProducesProcessedSide) {
  Rng rng(7);
  for (auto [h, w] : {std::pair{1u, 1u}, {800u, 600u}, {3u, 250u}, {128u, 128u}}) {
    const auto p = normalize_image(random_image(rng, h, w));
    EXPECT_EQ(p.image.height, kProcessedSide);
    EXPECT_EQ(p.image.width, kProcessedSide);
    EXPECT_EQ(p.image.pixels.size(), std::size_t{kProcessedSide} * kProcessedSide * 3);
  }
}

TEST(FilterMinImages, Threshold) {
  const auto catalog = SpeciesCatalog::from_entries({{SpeciesId{1}, 150}, {SpeciesId{2}, 99}, {SpeciesId{3}, 100}});
  const auto kept = filter_min_images(catalog, 100);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept.decode(0), SpeciesId{1});
  EXPECT_EQ(kept.decode(1), SpeciesId{3});
  EXPECT_EQ(kept.encode(SpeciesId{3}), 1u);
  EXPECT_EQ(filter_min_images(catalog, 0), catalog);
}

TEST(FilterMinImages, SkewedCatalogMatchesBruteForceAndComposes) {
  Rng rng(8);
  std::vector<CatalogEntry> entries;
  for (std::uint64_t s = 0; s < 500; ++s) {
    // Right-skewed: most species small, a long tail of large ones.
    const double u = rng.uniform();
    entries.push_back({SpeciesId{s * 13 + 1}, static_cast<std::uint64_t>(std::floor(5.0 / (0.02 + u * u)))});
  }
  const auto catalog = SpeciesCatalog::from_entries(entries);
  for (std::uint64_t m : {0u, 10u, 100u, 250u}) {
    std::vector<SpeciesId> oracle;
    for (const auto& e : catalog.entries())
      if (e.image_count >= m) oracle.push_back(e.species);
    const auto kept = filter_min_images(catalog, m);
    ASSERT_EQ(kept.size(), oracle.size());
    for (ClassIndex i = 0; i < oracle.size(); ++i) EXPECT_EQ(kept.decode(i), oracle[i]);
  }
  for (std::uint64_t m1 : {5u, 50u, 200u})
    for (std::uint64_t m2 : {1u, 60u, 300u})
      EXPECT_EQ(filter_min_images(filter_min_images(catalog, m1), m2), filter_min_images(catalog, std::max(m1, m2)));
}

TEST(ImageShard, RoundTripIsByteIdentical) {
  Rng rng(9);
  std::vector<ImageRecord> items;
  for (int i = 0; i < 10; ++i) {
    auto r = random_image(rng, 3 + i, 5 + 2 * i, "id-" + std::to_string(i));
    if (i % 3 != 0) r.species = SpeciesId{rng.next()};
    items.push_back(std::move(r));
  }
  const auto dir = scratch_dir("roundtrip");
  pack_shard(items, dir / "a.img1");
  const auto loaded = load_shard(dir / "a.img1");
  EXPECT_EQ(loaded, items);
  pack_shard(loaded, dir / "b.img1");
  EXPECT_EQ(io::read_file(dir / "a.img1"), io::read_file(dir / "b.img1"));
}

TEST(ImageShard, EmptyListCreatesNoFile) {
  const auto dir = scratch_dir("empty");
  EXPECT_THROW(pack_shard({}, dir / "x.img1"), Error);
  EXPECT_FALSE(fs::exists(dir / "x.img1"));
}

TEST(ImageShard, SizeFormula) {
  Rng rng(10);
  std::vector<ImageRecord> items;
  std::size_t expected = 4 + 4;
  for (int i = 0; i < 1000; ++i) {
    auto r = random_image(rng, 1 + static_cast<std::uint32_t>(rng.below(6)), 1 + static_cast<std::uint32_t>(rng.below(6)),
                          std::string(rng.below(12), 'x'));
    if (rng.below(2)) r.species = SpeciesId{rng.below(50)};
    expected += 2 + r.image_id.size() + 1 + (r.species ? 8 : 0) + 2 + 2 + std::size_t{r.image.height} * r.image.width * 3;
    items.push_back(std::move(r));
  }
  EXPECT_EQ(encode_image_shard(items).size(), expected);
}

TEST(ImageShard, MalformedInputsRejected) {
  Rng rng(12);
  std::vector<ImageRecord> items{random_image(rng, 2, 2)};
  auto bytes = encode_image_shard(items);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_image_shard(truncated), Error);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_image_shard(trailing), Error);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_image_shard(bad_magic), Error);

  ImageRecord broken{"bad", std::nullopt, Image(2, 2)};
  broken.image.pixels.pop_back();
  EXPECT_THROW(encode_image_shard(std::vector<ImageRecord>{broken}), Error);
}

TEST(Png, DirectoryLayoutLoads) {
  Rng rng(13);
  const auto dir = scratch_dir("png");
  const auto a = random_image(rng, 20, 30, "a");
  const auto b = random_image(rng, 8, 8, "b");
  write_png(dir / "42" / "a.png", a.image);
  write_png(dir / "plot.png", b.image);
  const auto records = load_image_directory(dir);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].image_id, "a");
  EXPECT_EQ(records[0].species, SpeciesId{42});
  EXPECT_EQ(records[0].image, a.image);
  EXPECT_EQ(records[1].image_id, "plot");
  EXPECT_FALSE(records[1].species.has_value());
  EXPECT_EQ(records[1].image, b.image);
}
