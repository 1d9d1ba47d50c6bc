#include <gtest/gtest.h>
#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "lshift/media.hpp"
#include "support/tiny_run.hpp"

namespace lshift {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("lshift_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string write_config(const std::string& text) {
    const auto p = dir / "run.conf";
    std::ofstream(p) << text;
    return p.string();
  }
  std::string trained_checkpoint() {
    const auto r = cli({"train", "--config", write_config(test::tiny_config_text(2)), "--out",
                        (dir / "run").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return (dir / "run" / "final.lsc").string();
  }
  fs::path dir;
};

TEST_F(CliTest, MissingConfigIsUsageError) {
  auto r = cli({"train", "--config", "/no/such.conf", "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/no/such.conf"), std::string::npos);
}

TEST_F(CliTest, BadKeyNamed) {
  auto r = cli({"train", "--config", write_config("learning_rate = 1\n"), "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos);
}

TEST_F(CliTest, ZeroStepsWritesFinalCheckpoint) {
  auto r = cli({"train", "--config", write_config(test::tiny_config_text(0)), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "o" / "final.lsc"));
}

TEST_F(CliTest, TrainWritesMetricsAndResumeAppends) {
  const auto cfg = write_config(test::tiny_config_text(2) + "checkpoint_every = 1\n");
  auto r = cli({"train", "--config", cfg, "--out", (dir / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "o" / "ckpt_000001.lsc"));
  std::ifstream log(dir / "o" / "metrics.log");
  std::string line;
  int n = 0;
  while (std::getline(log, line)) {
    ++n;
    EXPECT_EQ(line.rfind("step=" + std::to_string(n) + " loss=", 0), 0u) << line;
    EXPECT_NE(line.find(" grad_norm="), std::string::npos);
  }
  EXPECT_EQ(n, 2);

  const auto cfg4 = write_config(test::tiny_config_text(3));
  r = cli({"train", "--config", cfg4, "--out", (dir / "o").string(), "--resume",
           (dir / "o" / "final.lsc").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream log2(dir / "o" / "metrics.log");
  n = 0;
  while (std::getline(log2, line)) ++n;
  EXPECT_EQ(n, 3);

  const auto other = write_config(test::tiny_config_text(3) + "seed = 5\n");
  r = cli({"train", "--config", other, "--out", (dir / "o").string(), "--resume",
           (dir / "o" / "final.lsc").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
}

TEST_F(CliTest, DivergenceExitsThree) {
  auto r = cli({"train", "--config", write_config(test::with_value(test::tiny_config_text(50), "lr", "1e30")), "--out",
                (dir / "o").string()});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST_F(CliTest, SampleIsByteIdenticalAndImageModeWritesOneFrame) {
  const auto ckpt = trained_checkpoint();
  const std::vector<std::string> base = {"sample", "--ckpt", ckpt, "--prompt", "a blue circle moving left",
                                         "--steps", "5", "--seed", "3"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", (dir / "a").string()});
  b.insert(b.end(), {"--out", (dir / "b").string()});
  ASSERT_EQ(cli(a).code, 0);
  ASSERT_EQ(cli(b).code, 0);
  for (int f = 0; f < 4; ++f) {
    const auto name = "frame_00" + std::to_string(f) + ".png";
    ASSERT_TRUE(fs::exists(dir / "a" / name));
    EXPECT_EQ(read_bytes(dir / "a" / name), read_bytes(dir / "b" / name));
  }
  EXPECT_EQ(read_bytes(dir / "a" / "sample.gif"), read_bytes(dir / "b" / "sample.gif"));

  auto img = base;
  img.insert(img.end(), {"--image-mode", "--format", "ppm", "--out", (dir / "img").string()});
  ASSERT_EQ(cli(img).code, 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "img")) {
    ++files;
    EXPECT_EQ(e.path().filename(), "frame_000.ppm");
  }
  EXPECT_EQ(files, 1);
}

TEST_F(CliTest, SampleErrors) {
  const auto ckpt = trained_checkpoint();
  auto r = cli({"sample", "--ckpt", ckpt, "--prompt", "a purple square", "--out", (dir / "x").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("purple"), std::string::npos);

  auto bytes = read_bytes(ckpt);
  bytes[bytes.size() / 2] ^= 0x01;
  const auto bad = dir / "bad.lsc";
  std::ofstream(bad, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                              static_cast<std::streamsize>(bytes.size()));
  r = cli({"sample", "--ckpt", bad.string(), "--prompt", "a red square moving up", "--out",
           (dir / "x").string()});
  EXPECT_EQ(r.code, 4);
  r = cli({"eval", "--ckpt", bad.string()});
  EXPECT_EQ(r.code, 4);
}

TEST_F(CliTest, EvalPrintsKeyValues) {
  const auto ckpt = trained_checkpoint();
  auto r = cli({"eval", "--ckpt", ckpt, "--samples", "4", "--steps", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  while (std::getline(lines, line)) EXPECT_NE(line.find('='), std::string::npos) << line;
  EXPECT_NE(r.out.find("agreement="), std::string::npos);
  EXPECT_NE(r.out.find("motion="), std::string::npos);
}

TEST(CliShiftDemo, Grid) {
  auto r = cli({"shift-demo", "--frames", "3", "--channels", "3", "--fold", "3"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("[pad, f0, f1]"), std::string::npos);
  EXPECT_NE(r.out.find("[f0, f1, f2]"), std::string::npos);
  EXPECT_NE(r.out.find("[f1, f2, pad]"), std::string::npos);
  EXPECT_EQ(cli({"shift-demo", "--frames", "3", "--channels", "3", "--fold", "3"}).out, r.out);
  EXPECT_NE(cli({"shift-demo", "--frames", "1"}).out.find("[pad, f0, pad]"), std::string::npos);
  EXPECT_EQ(cli({"shift-demo", "--channels", "2"}).code, 2);
}

TEST(CliUsage, ExitCodes) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"train"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

Image8 checker() {
  Image8 img{3, 2, {}};
  for (int i = 0; i < 6; ++i) {
    img.rgb.push_back(static_cast<std::uint8_t>(40 * i));
    img.rgb.push_back(static_cast<std::uint8_t>(255 - 40 * i));
    img.rgb.push_back(static_cast<std::uint8_t>(i % 2 ? 255 : 0));
  }
  return img;
}

TEST(Media, ToImageClampsAndUpscales) {
  const std::vector<float> planar = {-0.5f, 1.5f, 0.5f, 0.0f, 1.0f, 0.25f};  // (3,1,2)
  auto img = to_image(planar, 1, 2, 2);
  EXPECT_EQ(img.width, 4);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.rgb[0], 0);
  EXPECT_EQ(img.rgb[1], 128);
  EXPECT_EQ(img.rgb[2], 255);
  EXPECT_EQ(img.rgb[6], 255);
}

TEST(Media, PpmLayout) {
  const auto bytes = encode_ppm(checker());
  const std::string header = "P6\n3 2\n255\n";
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
  EXPECT_EQ(bytes.size(), header.size() + 18);
}

TEST(Media, PngDecodesToPixels) {
  const auto img = checker();
  const auto png = encode_png(img);
  const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  ASSERT_TRUE(std::equal(sig, sig + 8, png.begin()));
  // Walk chunks, verify CRCs, collect IDAT.
  std::size_t pos = 8;
  std::vector<std::uint8_t> idat;
  bool saw_end = false;
  auto be32 = [&](std::size_t p) {
    return (std::uint32_t(png[p]) << 24) | (std::uint32_t(png[p + 1]) << 16) | (std::uint32_t(png[p + 2]) << 8) | png[p + 3];
  };
  while (pos < png.size()) {
    const auto len = be32(pos);
    const std::string type(png.begin() + pos + 4, png.begin() + pos + 8);
    const auto crc = crc32(0L, png.data() + pos + 4, len + 4);
    EXPECT_EQ(crc, be32(pos + 8 + len)) << type;
    if (type == "IHDR") {
      EXPECT_EQ(be32(pos + 8), 3u);
      EXPECT_EQ(be32(pos + 12), 2u);
    }
    if (type == "IDAT") idat.insert(idat.end(), png.begin() + pos + 8, png.begin() + pos + 8 + len);
    if (type == "IEND") saw_end = true;
    pos += 12 + len;
  }
  EXPECT_TRUE(saw_end);
  std::vector<std::uint8_t> raw(2 * (1 + 9));
  uLongf raw_len = raw.size();
  ASSERT_EQ(uncompress(raw.data(), &raw_len, idat.data(), idat.size()), Z_OK);
  ASSERT_EQ(raw_len, raw.size());
  for (int y = 0; y < 2; ++y) {
    EXPECT_EQ(raw[y * 10], 0);
    for (int i = 0; i < 9; ++i) EXPECT_EQ(raw[y * 10 + 1 + i], img.rgb[y * 9 + i]);
  }
}

TEST(Media, GifStructure) {
  const auto gif = encode_gif({checker(), checker()}, 10);
  ASSERT_GT(gif.size(), 13u);
  EXPECT_EQ(std::string(gif.begin(), gif.begin() + 6), "GIF89a");
  EXPECT_EQ(gif[6] | (gif[7] << 8), 3);
  EXPECT_EQ(gif[8] | (gif[9] << 8), 2);
  EXPECT_EQ(gif.back(), 0x3B);
  int frames = 0;
  for (std::size_t i = 0; i + 1 < gif.size(); ++i)
    if (gif[i] == 0x21 && gif[i + 1] == 0xF9) ++frames;
  EXPECT_EQ(frames, 2);
}

}  // namespace
}  // namespace lshift
