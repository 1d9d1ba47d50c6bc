#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lshift/codec.hpp"
#include "lshift/diffusion.hpp"
#include "lshift/model.hpp"
#include "lshift/synthvid.hpp"

namespace lshift {

/// Unknown or malformed configuration key; key() names it.
class ConfigKeyError : public ConfigError {
 public:
  ConfigKeyError(std::string key, const std::string& message)
      : ConfigError(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ScheduleConfig {
  int steps = 1000;
  double beta1 = 8.5e-4;
  double beta_last = 1.2e-2;
  std::string kind = "quad";
};

struct SamplerSettings {
  int steps = 100;
  double guidance_scale = 7.5;
  ReverseVariance variance = ReverseVariance::posterior;
};

struct TrainConfig {
  std::int64_t steps = 2000;
  int batch_size = 8;
  double lr = 1e-3;
  double text_drop_p = 0.1;
  double ema_decay = 0.999;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 0;        // 0 disables periodic evaluation
  std::int64_t checkpoint_every = 0;  // 0 writes only the final checkpoint
  int eval_samples = 40;
  double eval_guidance = 3.0;
  int eval_sample_steps = 100;
  bool use_ema = true;
  int codec_steps = 500;  // learned codec only
};

/// Everything a run needs. The U-Net input width is derived from the codec.
struct RunConfig {
  RenderConfig data;
  CodecConfig codec;
  ModelConfig model;
  ScheduleConfig schedule;
  SamplerSettings sampler;
  TrainConfig train;

  /// Syncs derived fields (U-Net channels) and checks every section.
  void finalize();
};

/// Parses flat `key = value` lines; '#' starts a comment. Keys not listed in
/// config_keys() raise ConfigKeyError naming the key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);

/// Documented keys in canonical order.
std::vector<std::string> config_keys();

/// Splits `key = value` lines without interpreting them (used for checkpoint blobs).
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace lshift
