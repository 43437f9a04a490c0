#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "vipt/config.hpp"
#include "vipt/synthdata.hpp"

using namespace vipt;
namespace fs = std::filesystem;
using vipt::test::scratch_dir;
using vipt::test::slurp;
using vipt::test::spit;

namespace {

SceneSpec small_scene(std::uint64_t seed = 3) {
  SceneSpec s;
  s.seed = seed;
  s.num_frames = 20;
  s.width = 64;
  s.height = 48;
  s.min_size = 8;
  s.max_size = 12;
  return s;
}

}  // namespace

TEST(Pnm, RoundTripBothKinds) {
  const auto dir = scratch_dir("pnm");
  Image8 rgb(5, 3, 3), gray(4, 2, 1);
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<std::uint8_t>(i * 7);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) gray.pixels[i] = static_cast<std::uint8_t>(255 - i);
  write_ppm(dir / "a.ppm", rgb);
  write_pgm(dir / "b.pgm", gray);
  EXPECT_EQ(read_pnm(dir / "a.ppm"), rgb);
  EXPECT_EQ(read_pnm(dir / "b.pgm"), gray);
  EXPECT_EQ(slurp(dir / "b.pgm").substr(0, 3), "P5\n");
}

TEST(Pnm, HeaderCommentsAccepted) {
  const auto dir = scratch_dir("pnm_comment");
  spit(dir / "c.pgm", std::string("P5\n# made by hand\n2 1\n255\n") + char(10) + char(20));
  const Image8 img = read_pnm(dir / "c.pgm");
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.at(1, 0, 0), 20);
}

TEST(Pnm, MalformedFilesRejected) {
  const auto dir = scratch_dir("pnm_bad");
  spit(dir / "magic.pgm", "P2\n1 1\n255\n0");
  spit(dir / "short.pgm", "P5\n4 4\n255\nabc");
  spit(dir / "depth.pgm", "P5\n1 1\n65535\n00");
  for (const char* f : {"magic.pgm", "short.pgm", "depth.pgm"}) EXPECT_THROW(read_pnm(dir / f), ImageFormatError) << f;
  EXPECT_THROW(read_pnm(dir / "missing.pgm"), DatasetIntegrityError);
}

TEST(Scene, ValidationRejectsImpossibleSpecs) {
  SceneSpec s = small_scene();
  s.max_size = 100;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_scene();
  s.rgb_corruption_rate = 1.5;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_scene();
  s.num_frames = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Scene, DeterministicPerSeed) {
  const Sequence a = gen_sequence(small_scene(5)), b = gen_sequence(small_scene(5)), c = gen_sequence(small_scene(6));
  EXPECT_EQ(a.rgb, b.rgb);
  EXPECT_EQ(a.aux, b.aux);
  EXPECT_EQ(a.boxes, b.boxes);
  EXPECT_NE(a.rgb, c.rgb);
}

TEST(Scene, BoxesStayOnCanvasAndMoveSmoothly) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Sequence s = gen_sequence(small_scene(seed));
    ASSERT_EQ(s.size(), 20u);
    for (std::size_t f = 0; f < s.size(); ++f) {
      const Rect& r = s.boxes[f];
      EXPECT_GE(r.x, 0.0);
      EXPECT_GE(r.y, 0.0);
      EXPECT_LE(r.x + r.w, 64.0);
      EXPECT_LE(r.y + r.h, 48.0);
      if (f > 0) {
        EXPECT_LT(std::hypot(r.cx() - s.boxes[f - 1].cx(), r.cy() - s.boxes[f - 1].cy()), 6.0);
      }
    }
  }
}

TEST(Scene, CorruptionCountAndFirstFrameClean) {
  SceneSpec spec = small_scene();
  spec.rgb_corruption_rate = 0.3;
  const Sequence s = gen_sequence(spec);
  EXPECT_EQ(corrupted_count(s), 6u);
  EXPECT_FALSE(s.corrupted[0]);
  spec.rgb_corruption_rate = 0.0;
  EXPECT_EQ(corrupted_count(gen_sequence(spec)), 0u);
}

TEST(Scene, AuxAlwaysShowsTargetRgbOnlyWhenClean) {
  SceneSpec spec = small_scene(11);
  spec.distractors = 0;
  const Sequence s = gen_sequence(spec);
  const Image8& rgb0 = s.rgb[0];
  const auto px = [](const Rect& r) { return std::pair<std::size_t, std::size_t>(r.cx(), r.cy()); };
  const auto [x0, y0] = px(s.boxes[0]);
  for (std::size_t f = 0; f < s.size(); ++f) {
    const auto [x, y] = px(s.boxes[f]);
    EXPECT_EQ(s.aux[f].at(x, y, 0), 200);
    int diff = 0;
    for (std::size_t c = 0; c < 3; ++c) diff += std::abs(int(s.rgb[f].at(x, y, c)) - int(rgb0.at(x0, y0, c)));
    if (s.corrupted[f]) {
      EXPECT_GT(diff, 60) << "frame " << f;
    } else {
      EXPECT_EQ(diff, 0) << "frame " << f;
    }
  }
}

TEST(Scene, DerivedSeedsDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(42, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(42, 3), derive_seed(42, 3));
}

TEST(Rects, FormatParseRoundTrip) {
  const Rect r{12.5, 0.1 + 0.2, 7.0, 1e-3};
  EXPECT_EQ(parse_rect(format_rect(r)), r);
  EXPECT_EQ(parse_rect("1,2,3,4"), (Rect{1, 2, 3, 4}));
  EXPECT_THROW(parse_rect("1,2,3"), DatasetIntegrityError);
  EXPECT_THROW(parse_rect("1,2,x,4"), DatasetIntegrityError);
}

TEST(Dataset, WriteReadRoundTrip) {
  const auto dir = scratch_dir("dataset");
  std::vector<Sequence> seqs = {gen_sequence(small_scene(1), "b"), gen_sequence(small_scene(2), "a")};
  write_dataset(seqs, dir);
  EXPECT_TRUE(fs::exists(dir / "a" / "rgb" / "000000.ppm"));
  EXPECT_TRUE(fs::exists(dir / "a" / "aux" / "000019.pgm"));
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, "a");
  EXPECT_EQ(back[0].rgb, seqs[1].rgb);
  EXPECT_EQ(back[0].aux, seqs[1].aux);
  EXPECT_EQ(back[0].boxes, seqs[1].boxes);
  EXPECT_EQ(back[1].corrupted, seqs[0].corrupted);
  EXPECT_EQ(total_frames(back), 40u);
}

TEST(Dataset, MissingFramesDetected) {
  const auto dir = scratch_dir("dataset_bad");
  write_dataset({gen_sequence(small_scene(1), "s")}, dir);
  fs::remove(dir / "s" / "aux" / "000004.pgm");
  EXPECT_THROW(read_dataset(dir), DatasetIntegrityError);
}

TEST(Dataset, GroundTruthCountMismatchDetected) {
  const auto dir = scratch_dir("dataset_gt");
  write_dataset({gen_sequence(small_scene(1), "s")}, dir);
  spit(dir / "s" / "groundtruth.txt", "1,2,3,4\n");
  EXPECT_THROW(read_dataset(dir), DatasetIntegrityError);
}

TEST(Crop, IdentityWindowReproducesPixels) {
  Image8 img(6, 6, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
  bool padded = true;
  const Tensor t = crop_resize(img, {0, 0, 6}, 6, &padded);
  EXPECT_FALSE(padded);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x) EXPECT_DOUBLE_EQ(t.at(c, y, x), (img.at(x, y, c) / 255.0 - 0.5) / 0.5);
}

TEST(Crop, GrayReplicatedAndPaddingUsesMean) {
  Image8 img(4, 4, 1);
  for (std::size_t i = 0; i < 16; ++i) img.pixels[i] = i < 8 ? 0 : 200;  // mean 100
  bool padded = false;
  const Tensor t = crop_resize(img, {-100, -100, 10}, 2, &padded);
  EXPECT_TRUE(padded);
  for (double v : t.values()) EXPECT_DOUBLE_EQ(v, (100 / 255.0 - 0.5) / 0.5);
  const Tensor g = crop_resize(img, {0, 0, 4}, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      EXPECT_EQ(g.at(0, y, x), g.at(1, y, x));
      EXPECT_EQ(g.at(0, y, x), g.at(2, y, x));
    }
}

TEST(Crop, HalfPixelBilinearMidpoint) {
  Image8 img(2, 1, 1);
  img.pixels = {0, 100};
  // a 2-pixel window sampled once lands midway between the two pixels
  const Tensor t = crop_resize(img, {0, -0.5, 2}, 1);
  EXPECT_NEAR(t[0], (50 / 255.0 - 0.5) / 0.5, 1e-12);
}

TEST(Pairs, GroundTruthInCropCoordinates) {
  const Sequence s = gen_sequence(small_scene(4));
  CropSettings crop;
  crop.template_size = 16;
  crop.search_size = 32;
  const SamplePair p = make_pair(s, 0, 5, Jitter{}, crop);
  EXPECT_EQ(p.template_rgb.shape(), (Shape{3, 16, 16}));
  EXPECT_EQ(p.search_aux.shape(), (Shape{3, 32, 32}));
  // no jitter: the target sits at the crop centre and spans 1/context of it
  EXPECT_NEAR(p.gt.cx, 0.5, 1e-12);
  EXPECT_NEAR(p.gt.cy, 0.5, 1e-12);
  const Rect& g = s.boxes[5];
  EXPECT_NEAR(p.gt.w * p.gt.h, 1.0 / 16, 1e-12);
  EXPECT_NEAR(p.gt.w / p.gt.h, g.w / g.h, 1e-12);

  const SamplePair q = make_pair(s, 0, 5, Jitter{0.1, -0.05, 0.0}, crop);
  EXPECT_NEAR(q.gt.cx, 0.4, 1e-12);
  EXPECT_NEAR(q.gt.cy, 0.55, 1e-12);
  EXPECT_THROW(make_pair(s, 0, 20, Jitter{}, crop), std::out_of_range);
}

TEST(Pairs, SamplerIsPureInSeedStepSlot) {
  const std::vector<Sequence> seqs = {gen_sequence(small_scene(1)), gen_sequence(small_scene(2))};
  PairSampler::Options opt;
  opt.seed = 9;
  opt.crop.template_size = 16;
  opt.crop.search_size = 32;
  const PairSampler a(seqs, opt), b(seqs, opt);
  const SamplePair x = a.sample(3, 1), y = b.sample(3, 1), z = a.sample(3, 2);
  EXPECT_EQ(x.search_rgb, y.search_rgb);
  EXPECT_EQ(x.gt, y.gt);
  EXPECT_NE(x.search_rgb, z.search_rgb);
  // order of calls does not matter
  (void)a.sample(100, 0);
  EXPECT_EQ(a.sample(3, 1).template_aux, x.template_aux);
}

TEST(Pairs, RandomPairIsSeeded) {
  CropSettings crop;
  const SamplePair a = random_pair(crop, 1), b = random_pair(crop, 1), c = random_pair(crop, 2);
  EXPECT_EQ(a.search_rgb, b.search_rgb);
  EXPECT_NE(a.search_rgb, c.search_rgb);
  for (double v : a.template_aux.values()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(DatasetSpecs, IniRoundTripAndGenerate) {
  DatasetSpec spec;
  spec.sequences = 3;
  spec.scene = small_scene(77);
  spec.scene.shape = TargetShape::kDisc;
  const DatasetSpec back = parse_dataset_spec(dataset_spec_to_ini(spec));
  EXPECT_EQ(back.sequences, 3u);
  EXPECT_EQ(back.scene.seed, 77u);
  EXPECT_EQ(back.scene.shape, TargetShape::kDisc);
  const auto seqs = generate_dataset(spec);
  ASSERT_EQ(seqs.size(), 3u);
  EXPECT_EQ(seqs[2].id, "seq002");
  SceneSpec s2 = spec.scene;
  s2.seed = derive_seed(77, 2);
  EXPECT_EQ(seqs[2].rgb, gen_sequence(s2).rgb);
  EXPECT_THROW(parse_dataset_spec("[dataset]\nbogus = 1\n"), ConfigError);
}
