#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lshift/tensor.hpp"
#include "lshift/text.hpp"

namespace lshift {

enum class Color : std::uint8_t { red, green, blue };
enum class ShapeKind : std::uint8_t { square, circle };
enum class Direction : std::uint8_t { left, right, up, down, none };

std::string_view to_string(Color c);
std::string_view to_string(ShapeKind s);
std::string_view to_string(Direction d);
/// Parses "left", "right", "up", "down" or "none".
Direction parse_direction(std::string_view s);

struct CaptionSpec {
  Color color = Color::red;
  ShapeKind shape = ShapeKind::square;
  Direction direction = Direction::right;

  /// "a {color} {shape} moving {direction}".
  std::string caption() const;
  bool operator==(const CaptionSpec&) const = default;
};

/// The 24 specs, ordered color-major, then shape, then direction.
const std::array<CaptionSpec, 24>& all_specs();

/// Parses a caption of the fixed grammar; throws ConfigError otherwise.
CaptionSpec parse_caption(std::string_view caption);

struct RenderConfig {
  int height = 16;
  int width = 16;
  int frames = 8;
  int object_size = 4;
  int velocity = 1;
};

struct Point {
  double x = 0;
  double y = 0;
};

struct VideoSample {
  Tensor<float> video;  // (F, 3, H, W) in [0, 1]
  CaptionSpec spec;
  std::vector<Point> trajectory;  // object centre per frame, pixel-index coordinates
};

/// Draws the object on a black background moving `velocity` px/frame along
/// spec.direction. The start position is drawn uniformly from the positions
/// that keep the object fully in frame. Throws ConfigError when no such
/// position exists.
VideoSample render(const CaptionSpec& spec, const RenderConfig& cfg, std::uint64_t seed);

/// Deterministic corpus. Each block of 24 consecutive indices is a seeded
/// permutation of all_specs(); every sample has its own render seed.
class SyntheticDataset {
 public:
  SyntheticDataset(RenderConfig cfg, std::uint64_t seed, int max_tokens = kDefaultMaxTokens);

  struct Item {
    VideoSample sample;
    TextCondition text;
  };

  Item get(std::int64_t index) const;
  CaptionSpec spec_at(std::int64_t index) const;
  const RenderConfig& config() const { return cfg_; }

 private:
  RenderConfig cfg_;
  std::uint64_t seed_;
  int max_tokens_;
};

/// First `count` items of SyntheticDataset(cfg, seed).
std::vector<SyntheticDataset::Item> dataset_iter(std::int64_t count, const RenderConfig& cfg,
                                                 std::uint64_t seed);

/// Intensity-weighted centroid per frame on the channel with the largest
/// total intensity, after clamping to [0, 1].
std::vector<Point> centroid_track(std::span<const float> video, int frames, int height, int width);

/// Direction of the dominant axis of (last - first) centroid; y grows
/// downward. Returns none for displacements under 0.5 px or empty frames.
Direction centroid_probe(const Tensor<float>& video);

}  // namespace lshift
