#include "lshift/synthvid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lshift {

namespace {

constexpr std::array<std::string_view, 3> kColors = {"red", "green", "blue"};
constexpr std::array<std::string_view, 2> kShapes = {"square", "circle"};
constexpr std::array<std::string_view, 5> kDirections = {"left", "right", "up", "down", "none"};
constexpr int kCoverageGrid = 4;

std::array<CaptionSpec, 24> build_specs() {
  std::array<CaptionSpec, 24> specs;
  std::size_t i = 0;
  for (int c = 0; c < 3; ++c)
    for (int s = 0; s < 2; ++s)
      for (int d = 0; d < 4; ++d)
        specs[i++] = {static_cast<Color>(c), static_cast<ShapeKind>(s), static_cast<Direction>(d)};
  return specs;
}

template <std::size_t N>
std::size_t lookup(const std::array<std::string_view, N>& names, std::string_view word) {
  const auto it = std::find(names.begin(), names.end(), word);
  if (it == names.end()) throw ConfigError("unexpected caption word: " + std::string(word));
  return static_cast<std::size_t>(it - names.begin());
}

// Fraction of pixel (px, py) inside the disc, by a regular subsample grid.
float disc_coverage(int px, int py, double cx, double cy, double r) {
  int inside = 0;
  for (int sy = 0; sy < kCoverageGrid; ++sy)
    for (int sx = 0; sx < kCoverageGrid; ++sx) {
      const double x = px + (sx + 0.5) / kCoverageGrid - 0.5 - cx;
      const double y = py + (sy + 0.5) / kCoverageGrid - 0.5 - cy;
      inside += (x * x + y * y <= r * r) ? 1 : 0;
    }
  return static_cast<float>(inside) / (kCoverageGrid * kCoverageGrid);
}

}  // namespace

std::string_view to_string(Color c) { return kColors.at(static_cast<std::size_t>(c)); }
std::string_view to_string(ShapeKind s) { return kShapes.at(static_cast<std::size_t>(s)); }
std::string_view to_string(Direction d) { return kDirections.at(static_cast<std::size_t>(d)); }

Direction parse_direction(std::string_view s) { return static_cast<Direction>(lookup(kDirections, s)); }

std::string CaptionSpec::caption() const {
  return "a " + std::string(to_string(color)) + " " + std::string(to_string(shape)) + " moving " +
         std::string(to_string(direction));
}

const std::array<CaptionSpec, 24>& all_specs() {
  static const std::array<CaptionSpec, 24> specs = build_specs();
  return specs;
}

CaptionSpec parse_caption(std::string_view caption) {
  tokenize(caption, kDefaultMaxTokens);  // vocabulary check with the offending word
  for (const auto& spec : all_specs())
    if (spec.caption() == caption) return spec;
  throw ConfigError("caption does not follow \"a <color> <shape> moving <direction>\": " +
                    std::string(caption));
}

VideoSample render(const CaptionSpec& spec, const RenderConfig& cfg, std::uint64_t seed) {
  if (spec.direction == Direction::none) throw ConfigError("render: direction must be set");
  if (cfg.frames < 1 || cfg.object_size < 1 || cfg.velocity < 0)
    throw ConfigError("render: frames and object size must be positive, velocity non-negative");
  const bool horizontal = spec.direction == Direction::left || spec.direction == Direction::right;
  const int along = horizontal ? cfg.width : cfg.height;
  const int across = horizontal ? cfg.height : cfg.width;
  const int travel = cfg.velocity * (cfg.frames - 1);
  if (cfg.object_size + travel > along || cfg.object_size > across)
    throw ConfigError("render: a " + std::to_string(cfg.object_size) + " px object moving " +
                      std::to_string(travel) + " px does not fit a " + std::to_string(cfg.width) +
                      "x" + std::to_string(cfg.height) + " frame");

  Rng rng(seed);
  const int along_start = static_cast<int>(rng.uniform_int(along - cfg.object_size - travel + 1));
  const int across_pos = static_cast<int>(rng.uniform_int(across - cfg.object_size + 1));
  const bool reverse = spec.direction == Direction::left || spec.direction == Direction::up;
  const int start = reverse ? along_start + travel : along_start;
  const int step = reverse ? -cfg.velocity : cfg.velocity;

  const std::array<float, 3> rgb = {spec.color == Color::red ? 1.f : 0.f,
                                    spec.color == Color::green ? 1.f : 0.f,
                                    spec.color == Color::blue ? 1.f : 0.f};
  const int h = cfg.height, w = cfg.width, size = cfg.object_size;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<float> pixels(static_cast<std::size_t>(cfg.frames * 3 * plane), 0.f);
  VideoSample out;
  out.spec = spec;
  for (int f = 0; f < cfg.frames; ++f) {
    const int pos = start + f * step;
    const int x0 = horizontal ? pos : across_pos;
    const int y0 = horizontal ? across_pos : pos;
    const double cx = x0 + (size - 1) / 2.0;
    const double cy = y0 + (size - 1) / 2.0;
    out.trajectory.push_back({cx, cy});
    for (int y = y0; y < y0 + size; ++y)
      for (int x = x0; x < x0 + size; ++x) {
        const float cover =
            spec.shape == ShapeKind::square ? 1.f : disc_coverage(x, y, cx, cy, size / 2.0);
        for (int ch = 0; ch < 3; ++ch)
          pixels[static_cast<std::size_t>((f * 3 + ch) * plane + y * w + x)] = rgb[ch] * cover;
      }
  }
  out.video = Tensor<float>::from({cfg.frames, 3, h, w}, std::move(pixels));
  return out;
}

SyntheticDataset::SyntheticDataset(RenderConfig cfg, std::uint64_t seed, int max_tokens)
    : cfg_(cfg), seed_(seed), max_tokens_(max_tokens) {}

CaptionSpec SyntheticDataset::spec_at(std::int64_t index) const {
  if (index < 0) throw std::out_of_range("dataset index must be non-negative");
  const auto epoch = static_cast<std::uint64_t>(index / 24);
  Rng rng = Rng(seed_).split(epoch);
  std::array<int, 24> order;
  std::iota(order.begin(), order.end(), 0);
  for (int i = 23; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
  return all_specs()[order[static_cast<std::size_t>(index % 24)]];
}

SyntheticDataset::Item SyntheticDataset::get(std::int64_t index) const {
  const CaptionSpec spec = spec_at(index);
  const std::uint64_t render_seed =
      Rng(seed_).split((1ULL << 40) + static_cast<std::uint64_t>(index)).next_u64();
  Item item{render(spec, cfg_, render_seed), {tokenize(spec.caption(), max_tokens_), false}};
  return item;
}

std::vector<SyntheticDataset::Item> dataset_iter(std::int64_t count, const RenderConfig& cfg,
                                                 std::uint64_t seed) {
  if (count < 1) throw ConfigError("dataset_iter: count must be >= 1");
  SyntheticDataset ds(cfg, seed);
  std::vector<SyntheticDataset::Item> items;
  items.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) items.push_back(ds.get(i));
  return items;
}

std::vector<Point> centroid_track(std::span<const float> video, int frames, int height, int width) {
  const std::int64_t plane = static_cast<std::int64_t>(height) * width;
  if (static_cast<std::int64_t>(video.size()) != frames * 3 * plane)
    throw ShapeError("centroid_track: video size does not match (F,3,H,W)");
  auto clamp01 = [](float v) { return std::clamp(v, 0.f, 1.f); };
  std::array<double, 3> totals{};
  for (int f = 0; f < frames; ++f)
    for (int ch = 0; ch < 3; ++ch)
      for (std::int64_t i = 0; i < plane; ++i) totals[ch] += clamp01(video[(f * 3 + ch) * plane + i]);
  const auto best = static_cast<int>(std::max_element(totals.begin(), totals.end()) - totals.begin());
  std::vector<Point> track;
  for (int f = 0; f < frames; ++f) {
    double mass = 0, sx = 0, sy = 0;
    const float* p = video.data() + (f * 3 + best) * plane;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double v = clamp01(p[y * width + x]);
        mass += v;
        sx += v * x;
        sy += v * y;
      }
    if (mass <= 0) return {};
    track.push_back({sx / mass, sy / mass});
  }
  return track;
}

Direction centroid_probe(const Tensor<float>& video) {
  if (video.rank() != 4 || video.dim(1) != 3) throw ShapeError("centroid_probe expects (F,3,H,W)");
  const auto track = centroid_track(video.data(), static_cast<int>(video.dim(0)),
                                    static_cast<int>(video.dim(2)), static_cast<int>(video.dim(3)));
  if (track.empty()) return Direction::none;
  const double dx = track.back().x - track.front().x;
  const double dy = track.back().y - track.front().y;
  if (std::max(std::abs(dx), std::abs(dy)) < 0.5) return Direction::none;
  if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? Direction::right : Direction::left;
  return dy > 0 ? Direction::down : Direction::up;
}

}  // namespace lshift
