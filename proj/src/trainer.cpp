#include "lshift/trainer.hpp"

#include <cmath>
#include <sstream>

namespace lshift {

namespace {

// Independent streams derived from the run seed.
enum : std::uint64_t {
  kDataStream = 0xDA7A,
  kModelStream = 0x30DE1,
  kTrainStream = 0x7EA1,
  kCodecStream = 0xC0DEC,
};

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
  return Rng(seed).split(stream).next_u64();
}

constexpr int kEvalChunk = 8;

}  // namespace

std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  out << "samples=" << r.samples << "\n";
  out << "agree=" << r.agree << "\n";
  out << "agreement=" << r.agreement << "\n";
  out << "motion=" << r.motion << "\n";
  for (int p = 0; p < 4; ++p)
    for (int q = 0; q < 5; ++q)
      out << "confusion." << to_string(static_cast<Direction>(p)) << "."
          << to_string(static_cast<Direction>(q)) << "=" << r.confusion[p][q] << "\n";
  return out.str();
}

Tensor<float> to_model_range(const Tensor<float>& video) {
  std::vector<float> v = video.to_vector();
  for (float& x : v) x = 2.f * x - 1.f;
  return Tensor<float>::from(video.shape(), std::move(v));
}

Tensor<float> from_model_range(const Tensor<float>& video) {
  std::vector<float> v = video.to_vector();
  for (float& x : v) x = (x + 1.f) * 0.5f;
  return Tensor<float>::from(video.shape(), std::move(v));
}

Trainer::Trainer(RunConfig cfg)
    : cfg_([&] {
        cfg.finalize();
        return cfg;
      }()),
      sched_(make_schedule(cfg_.schedule.steps, cfg_.schedule.beta1, cfg_.schedule.beta_last,
                           cfg_.schedule.kind)),
      net_(cfg_.model.unet) {}

TrainState Trainer::init_state() const {
  const std::uint64_t seed = cfg_.train.seed;
  TrainState s;
  s.params = init_model_params<float>(cfg_.model, derive(seed, kModelStream));
  s.ema = s.params.clone();
  s.rng = Rng(seed).split(kTrainStream).state();
  if (cfg_.codec.mode == CodecMode::learned) {
    Rng codec_rng(derive(seed, kCodecStream));
    init_codec_params(s.codec_params, cfg_.codec, codec_rng);
    const SyntheticDataset ds(cfg_.data, derive(seed, kCodecStream + 1), cfg_.model.max_tokens);
    const CodecTrainConfig tc{cfg_.train.codec_steps, 32, 2e-3, seed};
    const auto& d = cfg_.data;
    train_tiny_autoencoder(s.codec_params, cfg_.codec, tc, [&](int step) {
      std::vector<float> frames;
      const int videos = (tc.batch_frames + d.frames - 1) / d.frames;
      for (int i = 0; i < videos; ++i) {
        const auto item = ds.get(static_cast<std::int64_t>(step) * videos + i);
        const auto v = item.sample.video.data();
        frames.insert(frames.end(), v.begin(), v.end());
      }
      return to_model_range(Tensor<float>::from(
          {static_cast<std::int64_t>(videos) * d.frames, 3, d.height, d.width}, std::move(frames)));
    });
  }
  return s;
}

LatentCodec Trainer::codec(const TrainState& state) const {
  return LatentCodec(cfg_.codec, state.codec_params.clone());
}

Batch Trainer::make_batch(const TrainState& state, std::int64_t step) const {
  const SyntheticDataset ds(cfg_.data, derive(cfg_.train.seed, kDataStream), cfg_.model.max_tokens);
  const auto bsz = static_cast<std::int64_t>(cfg_.train.batch_size);
  const auto& d = cfg_.data;
  std::vector<float> pixels;
  Batch batch;
  for (std::int64_t i = 0; i < bsz; ++i) {
    auto item = ds.get(step * bsz + i);
    const auto v = item.sample.video.data();
    pixels.insert(pixels.end(), v.begin(), v.end());
    batch.tokens.push_back(std::move(item.text.token_ids));
  }
  const auto video = Tensor<float>::from({bsz, d.frames, 3, d.height, d.width}, std::move(pixels));
  batch.latents = codec(state).encode(to_model_range(video));
  return batch;
}

StepStats Trainer::train_step(TrainState& state, const Batch& batch) const {
  batch.latents.validate_finite("training batch");
  state.params.zero_grad();
  Rng rng(state.rng);
  const auto model = make_eps_model(net_, state.params);
  const auto null = null_condition(cfg_.model.max_tokens).token_ids;
  auto sample = training_loss(batch.latents, batch.tokens, sched_, model, rng,
                              cfg_.train.text_drop_p, null);
  StepStats stats;
  stats.step = state.step + 1;
  stats.loss = sample.loss.item();
  stats.timesteps = sample.timesteps;
  auto diagnose = [&](const std::string& what) {
    std::ostringstream msg;
    msg << what << " at step " << stats.step << " (loss=" << stats.loss
        << " grad_norm=" << stats.grad_norm << " t=";
    for (std::size_t i = 0; i < stats.timesteps.size(); ++i)
      msg << (i ? "," : "") << stats.timesteps[i];
    msg << ")";
    return NumericError(msg.str());
  };
  if (!std::isfinite(stats.loss)) throw diagnose("non-finite loss");
  sample.loss.backward();
  stats.grad_norm = grad_norm(state.params);
  if (!std::isfinite(stats.grad_norm)) throw diagnose("non-finite gradient");
  adam_step(state.params, state.adam, AdamConfig{cfg_.train.lr, 0.9, 0.999, 1e-8});
  ema_update(state.ema, state.params, ema_decay_at(cfg_.train.ema_decay, stats.step));
  state.params.zero_grad();
  state.rng = rng.state();
  state.step = stats.step;
  state.loss_history.push_back(stats.loss);
  return stats;
}

void Trainer::train(TrainState& state, const Hooks& hooks) const {
  const auto& t = cfg_.train;
  while (state.step < t.steps) {
    const StepStats stats = train_step(state, make_batch(state, state.step));
    if (hooks.on_step) hooks.on_step(state, stats);
    if (t.eval_every > 0 && state.step % t.eval_every == 0 && hooks.on_eval)
      hooks.on_eval(state, evaluate(sampling_weights(state), codec(state), t.eval_samples, t.seed,
                                    t.eval_guidance, t.eval_sample_steps));
    if (t.checkpoint_every > 0 && state.step % t.checkpoint_every == 0 && hooks.on_checkpoint)
      hooks.on_checkpoint(state);
  }
}

const ParamStore<float>& Trainer::sampling_weights(const TrainState& state) const {
  return cfg_.train.use_ema ? state.ema : state.params;
}

Tensor<float> Trainer::generate(const ParamStore<float>& weights, const LatentCodec& codec,
                                const std::vector<TokenIds>& prompts, int frames, int steps,
                                double guidance, std::uint64_t seed) const {
  if (prompts.empty()) throw ConfigError("generate: no prompts");
  if (frames < 1) throw ConfigError("generate: frames must be >= 1");
  const auto& d = cfg_.data;
  const int f = cfg_.codec.factor;
  const Shape shape = {static_cast<std::int64_t>(prompts.size()), frames,
                       cfg_.codec.latent_channels(), d.height / f, d.width / f};
  const std::vector<TokenIds> nulls(prompts.size(), null_condition(cfg_.model.max_tokens).token_ids);
  SamplerConfig sc{steps, guidance, seed, cfg_.sampler.variance, false};
  const auto model = make_eps_model(net_, weights);
  const auto result = sample(model, sched_, sc, prompts, nulls, shape);
  return from_model_range(codec.decode(result.latents));
}

EvalReport Trainer::evaluate(const ParamStore<float>& weights, const LatentCodec& codec,
                             int samples, std::uint64_t seed, double guidance, int steps) const {
  EvalReport report;
  const auto& specs = all_specs();
  double motion_sum = 0;
  for (int start = 0; start < samples; start += kEvalChunk) {
    const int count = std::min(kEvalChunk, samples - start);
    std::vector<TokenIds> prompts;
    for (int i = 0; i < count; ++i)
      prompts.push_back(tokenize(specs[(start + i) % specs.size()].caption(), cfg_.model.max_tokens));
    const auto videos = generate(weights, codec, prompts, cfg_.data.frames, steps, guidance,
                                 derive(seed, static_cast<std::uint64_t>(start / kEvalChunk)));
    const auto& s = videos.shape();
    const std::int64_t per_video = s[1] * s[2] * s[3] * s[4];
    const std::int64_t per_frame = s[2] * s[3] * s[4];
    for (int i = 0; i < count; ++i) {
      const auto data = videos.data().subspan(static_cast<std::size_t>(i * per_video),
                                              static_cast<std::size_t>(per_video));
      const auto video = Tensor<float>::from({s[1], s[2], s[3], s[4]}, {data.begin(), data.end()});
      const Direction want = specs[(start + i) % specs.size()].direction;
      const Direction got = centroid_probe(video);
      report.confusion[static_cast<int>(want)][static_cast<int>(got)]++;
      report.agree += want == got ? 1 : 0;
      double change = 0;
      for (std::int64_t f = 0; f + 1 < s[1]; ++f)
        for (std::int64_t j = 0; j < per_frame; ++j) {
          const auto a = std::clamp(data[f * per_frame + j], 0.f, 1.f);
          const auto b = std::clamp(data[(f + 1) * per_frame + j], 0.f, 1.f);
          change += std::abs(b - a);
        }
      motion_sum += s[1] > 1 ? change / static_cast<double>((s[1] - 1) * per_frame) : 0.0;
    }
  }
  report.samples = samples;
  report.agreement = samples > 0 ? static_cast<double>(report.agree) / samples : 0;
  report.motion = samples > 0 ? motion_sum / samples : 0;
  return report;
}

Checkpoint to_checkpoint(const RunConfig& cfg, const TrainState& state) {
  Checkpoint ckpt;
  std::ostringstream blob;
  blob << to_text(cfg);
  blob << "state.step = " << state.step << "\n";
  blob << "state.rng = " << Rng::kName << "\n";
  blob << "state.rng_key = " << state.rng.key << "\n";
  blob << "state.rng_counter = " << state.rng.counter << "\n";
  blob << "state.adam_step = " << state.adam.step << "\n";
  ckpt.config_text = blob.str();
  ckpt.vocabulary = vocabulary_list();
  const auto& entries = state.params.entries();
  for (const auto& [name, t] : entries) ckpt.tensors.push_back(StoredTensor::from(name, t));
  for (const auto& [name, t] : state.ema.entries())
    ckpt.tensors.push_back(StoredTensor::from("ema/" + name, t));
  for (std::size_t i = 0; i < state.adam.m.size(); ++i) {
    const auto& [name, t] = entries[i];
    ckpt.tensors.push_back(StoredTensor::from("adam.m/" + name, Tensor<float>::from(t.shape(), state.adam.m[i])));
    ckpt.tensors.push_back(StoredTensor::from("adam.v/" + name, Tensor<float>::from(t.shape(), state.adam.v[i])));
  }
  for (const auto& [name, t] : state.codec_params.entries())
    ckpt.tensors.push_back(StoredTensor::from(name, t));
  ckpt.tensors.push_back(StoredTensor::from(
      "train.loss_history", {static_cast<std::int64_t>(state.loss_history.size())}, state.loss_history));
  return ckpt;
}

namespace {

void fill_from(ParamStore<float>& store, const Checkpoint& ckpt, const std::string& prefix) {
  for (auto& [name, t] : store.entries()) {
    const auto& stored = ckpt.at(prefix + name);
    if (stored.dtype != DType::f32 || stored.shape != t.shape())
      throw CheckpointError(CheckpointError::Kind::format,
                            "checkpoint tensor " + prefix + name + " has shape " +
                                shape_str(stored.shape) + ", expected " + shape_str(t.shape()));
    std::copy(stored.f32.begin(), stored.f32.end(), t.mutable_data().begin());
  }
}

template <class N>
N state_value(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end())
    throw CheckpointError(CheckpointError::Kind::missing, "checkpoint config lacks " + key);
  std::istringstream in(it->second);
  N v{};
  in >> v;
  if (!in) throw CheckpointError(CheckpointError::Kind::format, "bad value for " + key);
  return v;
}

}  // namespace

Restored from_checkpoint(const Checkpoint& ckpt) {
  const auto kv = parse_key_values(ckpt.config_text);
  std::string config_text;
  for (const auto& [k, v] : kv)
    if (k.rfind("state.", 0) != 0) config_text += k + " = " + v + "\n";
  Restored out;
  out.config = parse_config(config_text);
  if (kv.count("state.rng") == 0 || kv.at("state.rng") != Rng::kName)
    throw CheckpointError(CheckpointError::Kind::format, "checkpoint was written with another RNG");
  TrainState& s = out.state;
  s.step = state_value<std::int64_t>(kv, "state.step");
  s.rng = {state_value<std::uint64_t>(kv, "state.rng_key"),
           state_value<std::uint64_t>(kv, "state.rng_counter")};
  s.adam.step = state_value<std::int64_t>(kv, "state.adam_step");
  s.params = init_model_params<float>(out.config.model, 0);
  fill_from(s.params, ckpt, "");
  s.ema = s.params.clone();
  fill_from(s.ema, ckpt, "ema/");
  if (ckpt.find("adam.m/" + s.params.entries().front().first) != nullptr) {
    for (const auto& [name, t] : s.params.entries()) {
      s.adam.m.push_back(ckpt.at("adam.m/" + name).f32);
      s.adam.v.push_back(ckpt.at("adam.v/" + name).f32);
    }
  }
  if (out.config.codec.mode == CodecMode::learned) {
    Rng unused(0);
    init_codec_params(s.codec_params, out.config.codec, unused);
    fill_from(s.codec_params, ckpt, "");
  }
  const auto& history = ckpt.at("train.loss_history");
  s.loss_history = history.f64;
  if (static_cast<std::int64_t>(s.loss_history.size()) != s.step)
    throw CheckpointError(CheckpointError::Kind::format, "loss history length differs from step");
  return out;
}

}  // namespace lshift
