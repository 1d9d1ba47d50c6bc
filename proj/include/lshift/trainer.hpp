#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lshift/checkpoint.hpp"
#include "lshift/codec.hpp"
#include "lshift/config.hpp"
#include "lshift/model.hpp"
#include "lshift/optim.hpp"

namespace lshift {

struct Batch {
  Tensor<float> latents;  // (B,F,c,h,w)
  std::vector<TokenIds> tokens;
};

struct TrainState {
  std::int64_t step = 0;
  ParamStore<float> params;
  ParamStore<float> ema;
  AdamState<float> adam;
  Rng::State rng;
  std::vector<double> loss_history;
  ParamStore<float> codec_params;  // learned codec only
};

struct StepStats {
  std::int64_t step = 0;  // step number after the update (1-based)
  double loss = 0;
  double grad_norm = 0;
  std::vector<int> timesteps;
};

struct EvalReport {
  int samples = 0;
  int agree = 0;
  double agreement = 0;
  std::array<std::array<int, 5>, 4> confusion{};  // [prompted][probed], probed includes none
  double motion = 0;                              // mean |frame_{i+1} - frame_i| per pixel
};

/// key=value lines, one metric per line.
std::string format_report(const EvalReport& report);

/// Maps pixels in [0,1] to the model range [-1,1] and back.
Tensor<float> to_model_range(const Tensor<float>& video);
Tensor<float> from_model_range(const Tensor<float>& video);

class Trainer {
 public:
  explicit Trainer(RunConfig cfg);

  const RunConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const UNet<float>& net() const { return net_; }

  /// Fresh weights, optimizer and RNG state; trains the codec first in learned mode.
  TrainState init_state() const;
  LatentCodec codec(const TrainState& state) const;

  /// Dataset items [step * B, (step + 1) * B) encoded to latents.
  Batch make_batch(const TrainState& state, std::int64_t step) const;

  /// Forward, backward, Adam and EMA update. Throws NumericError with the
  /// step, drawn timesteps and gradient norm if the loss or gradients are not finite.
  StepStats train_step(TrainState& state, const Batch& batch) const;

  struct Hooks {
    std::function<void(const TrainState&, const StepStats&)> on_step;
    std::function<void(const TrainState&)> on_checkpoint;
    std::function<void(const TrainState&, const EvalReport&)> on_eval;
  };
  /// Runs train_step until state.step reaches cfg.train.steps.
  void train(TrainState& state, const Hooks& hooks = {}) const;

  /// Weights used for sampling: EMA unless use_ema is off.
  const ParamStore<float>& sampling_weights(const TrainState& state) const;

  /// Pixel videos (B,F,3,H,W) for the prompts.
  Tensor<float> generate(const ParamStore<float>& weights, const LatentCodec& codec,
                         const std::vector<TokenIds>& prompts, int frames, int steps,
                         double guidance, std::uint64_t seed) const;

  /// Samples `samples` prompts cycling through all 24 specs and probes motion.
  EvalReport evaluate(const ParamStore<float>& weights, const LatentCodec& codec, int samples,
                      std::uint64_t seed, double guidance, int steps) const;

 private:
  RunConfig cfg_;
  NoiseSchedule sched_;
  UNet<float> net_;
};

/// Full resumable snapshot: config, RNG, step, weights, EMA, moments, loss history.
Checkpoint to_checkpoint(const RunConfig& cfg, const TrainState& state);

struct Restored {
  RunConfig config;
  TrainState state;
};
/// Inverse of to_checkpoint. Missing tensors raise CheckpointError(missing).
Restored from_checkpoint(const Checkpoint& ckpt);

}  // namespace lshift
