#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "lshift/media.hpp"
#include "lshift/trainer.hpp"

namespace lshift {

namespace {

namespace fs = std::filesystem;

// Keys that may change between a checkpoint and the config used to resume it.
bool resumable_difference(const std::string& key) {
  return key == "steps" || key == "eval_every" || key == "checkpoint_every";
}

void check_resume_compatible(const RunConfig& wanted, const RunConfig& stored) {
  const auto a = parse_key_values(to_text(wanted));
  const auto b = parse_key_values(to_text(stored));
  for (const auto& [key, value] : a)
    if (!resumable_difference(key) && b.at(key) != value)
      throw ConfigKeyError(key, "config key '" + key + "' differs from the checkpoint (" + value +
                                    " vs " + b.at(key) + ")");
}

std::string checkpoint_name(std::int64_t step) {
  std::ostringstream name;
  name << "ckpt_" << std::setw(6) << std::setfill('0') << step << ".lsc";
  return name.str();
}

struct TrainArgs {
  std::string config;
  std::string out;
  std::string resume;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int print_every = 50;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a.config);
  if (a.seed_given) cfg.train.seed = a.seed;
  cfg.finalize();
  fs::create_directories(a.out);

  TrainState state;
  std::unique_ptr<Trainer> trainer;
  if (!a.resume.empty()) {
    Restored r = from_checkpoint(load_checkpoint(a.resume));
    check_resume_compatible(cfg, r.config);
    trainer = std::make_unique<Trainer>(cfg);
    state = std::move(r.state);
    out << "resumed from " << a.resume << " at step " << state.step << "\n";
  } else {
    trainer = std::make_unique<Trainer>(cfg);
    state = trainer->init_state();
  }

  std::ofstream metrics(fs::path(a.out) / "metrics.log",
                        a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw std::runtime_error("cannot write metrics.log in " + a.out);
  metrics << std::setprecision(9);
  std::ofstream eval_log(fs::path(a.out) / "eval.log", a.resume.empty() ? std::ios::trunc : std::ios::app);

  Trainer::Hooks hooks;
  hooks.on_step = [&](const TrainState&, const StepStats& s) {
    metrics << "step=" << s.step << " loss=" << s.loss << " grad_norm=" << s.grad_norm << "\n";
    if (a.print_every > 0 && s.step % a.print_every == 0)
      out << "step=" << s.step << " loss=" << s.loss << " grad_norm=" << s.grad_norm << std::endl;
  };
  hooks.on_checkpoint = [&](const TrainState& s) {
    const auto path = fs::path(a.out) / checkpoint_name(s.step);
    save_checkpoint(path.string(), to_checkpoint(trainer->config(), s));
    out << "checkpoint " << path.string() << std::endl;
  };
  hooks.on_eval = [&](const TrainState& s, const EvalReport& r) {
    std::istringstream lines(format_report(r));
    std::string line;
    while (std::getline(lines, line)) {
      eval_log << "step=" << s.step << " " << line << "\n";
      out << "eval step=" << s.step << " " << line << "\n";
    }
    eval_log.flush();
  };
  trainer->train(state, hooks);
  metrics.flush();
  const auto final_path = fs::path(a.out) / "final.lsc";
  save_checkpoint(final_path.string(), to_checkpoint(trainer->config(), state));
  out << "final checkpoint " << final_path.string() << " step=" << state.step << std::endl;
  return kExitOk;
}

struct SampleArgs {
  std::string ckpt;
  std::string prompt;
  std::string out;
  std::string format = "png";
  int frames = 0;  // 0: the training frame count
  int steps = 100;
  double guidance = 7.5;
  std::uint64_t seed = 0;
  int upscale = 1;
  bool image_mode = false;
  bool raw_weights = false;
};

int cmd_sample(const SampleArgs& a, std::ostream& out) {
  Restored r = from_checkpoint(load_checkpoint(a.ckpt));
  const Trainer trainer(r.config);
  const TokenIds prompt = tokenize(a.prompt, r.config.model.max_tokens);
  const int frames = a.image_mode ? 1 : (a.frames > 0 ? a.frames : r.config.data.frames);
  if (a.steps < 1 || a.steps > r.config.schedule.steps)
    throw ConfigError("--steps must lie in [1, " + std::to_string(r.config.schedule.steps) + "]");
  if (a.format != "png" && a.format != "ppm") throw ConfigError("--format must be png or ppm");
  const auto& weights = a.raw_weights ? r.state.params : r.state.ema;
  const Tensor<float> video =
      trainer.generate(weights, trainer.codec(r.state), {prompt}, frames, a.steps, a.guidance, a.seed);
  video.validate_finite("decoded video");

  fs::create_directories(a.out);
  const auto& s = video.shape();
  const std::int64_t per_frame = s[2] * s[3] * s[4];
  std::vector<Image8> images;
  for (std::int64_t f = 0; f < s[1]; ++f) {
    images.push_back(to_image(video.data().subspan(static_cast<std::size_t>(f * per_frame),
                                                   static_cast<std::size_t>(per_frame)),
                              static_cast<int>(s[3]), static_cast<int>(s[4]), a.upscale));
    std::ostringstream name;
    name << "frame_" << std::setw(3) << std::setfill('0') << f << "." << a.format;
    const auto path = fs::path(a.out) / name.str();
    write_file(path.string(), a.format == "png" ? encode_png(images.back()) : encode_ppm(images.back()));
    out << "wrote " << path.string() << "\n";
  }
  if (!a.image_mode) {
    const auto gif = fs::path(a.out) / "sample.gif";
    write_file(gif.string(), encode_gif(images));
    out << "wrote " << gif.string() << "\n";
  }
  const Direction probed = centroid_probe(video.reshape({s[1], s[2], s[3], s[4]}));
  out << "probe=" << to_string(probed) << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt;
  int samples = 40;
  std::uint64_t seed = 0;
  double guidance = 3.0;
  int steps = 100;
  bool raw_weights = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  Restored r = from_checkpoint(load_checkpoint(a.ckpt));
  const Trainer trainer(r.config);
  if (a.samples < 1) throw ConfigError("--samples must be >= 1");
  if (a.steps < 1 || a.steps > r.config.schedule.steps)
    throw ConfigError("--steps must lie in [1, " + std::to_string(r.config.schedule.steps) + "]");
  const auto& weights = a.raw_weights ? r.state.params : r.state.ema;
  out << "step=" << r.state.step << "\n";
  out << format_report(
      trainer.evaluate(weights, trainer.codec(r.state), a.samples, a.seed, a.guidance, a.steps));
  return kExitOk;
}

int cmd_shift_demo(int frames, int channels, int fold, std::ostream& out) {
  const ShiftPartition part = ShiftConfig{fold}.partition(channels);
  if (frames < 1) throw ConfigError("--frames must be >= 1");
  out << "channels: forward=" << part.forward << " stay=" << part.stay
      << " backward=" << part.backward << "\n";
  const auto rows = shift_provenance(frames);
  for (int i = 0; i < frames; ++i) {
    out << "frame " << i << ": [";
    for (int b = 0; b < 3; ++b) {
      const int src = rows[i][b];
      out << (b ? ", " : "") << (src < 0 ? std::string("pad") : "f" + std::to_string(src));
    }
    out << "]\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent video diffusion with a temporal shift module"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train on the synthetic corpus");
  train->add_option("--config", ta.config, "Config file (key = value lines)")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  auto* seed_opt = train->add_option("--seed", ta.seed, "Override the config seed");
  train->add_option("--resume", ta.resume, "Checkpoint to resume from");
  train->add_option("--print-every", ta.print_every, "Progress line interval (0 = quiet)");

  SampleArgs sa;
  auto* samp = app.add_subcommand("sample", "Generate a video or image from a prompt");
  samp->add_option("--ckpt", sa.ckpt, "Checkpoint")->required();
  samp->add_option("--prompt", sa.prompt, "Caption, e.g. \"a red square moving right\"")->required();
  samp->add_option("--out", sa.out, "Output directory")->required();
  samp->add_option("--frames", sa.frames, "Frame count (default: training frames)");
  samp->add_option("--steps", sa.steps, "Respaced sampling steps");
  samp->add_option("--guidance", sa.guidance, "Classifier-free guidance scale");
  samp->add_option("--seed", sa.seed, "Sampling seed");
  samp->add_option("--format", sa.format, "Frame format: png or ppm");
  samp->add_option("--upscale", sa.upscale, "Pixel repetition factor for written media");
  samp->add_flag("--image-mode", sa.image_mode, "Single-frame (frozen video) generation");
  samp->add_flag("--raw-weights", sa.raw_weights, "Use raw instead of EMA weights");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Probe motion faithfulness of sampled videos");
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  eval->add_option("--samples", ea.samples, "Number of sampled videos");
  eval->add_option("--seed", ea.seed, "Sampling seed");
  eval->add_option("--guidance", ea.guidance, "Classifier-free guidance scale");
  eval->add_option("--steps", ea.steps, "Respaced sampling steps");
  eval->add_flag("--raw-weights", ea.raw_weights, "Use raw instead of EMA weights");

  int demo_frames = 3, demo_channels = 3, demo_fold = 3;
  auto* demo = app.add_subcommand("shift-demo", "Print the temporal shift provenance grid");
  demo->add_option("--frames", demo_frames, "Frames");
  demo->add_option("--channels", demo_channels, "Channels");
  demo->add_option("--fold", demo_fold, "Fold");

  std::vector<std::string> argv_store = {"lshift"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*train) {
      ta.seed_given = seed_opt->count() > 0;
      return cmd_train(ta, out);
    }
    if (*samp) return cmd_sample(sa, out);
    if (*eval) return cmd_eval(ea, out);
    return cmd_shift_demo(demo_frames, demo_channels, demo_fold, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric divergence: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return e.kind() == CheckpointError::Kind::io ? kExitUsage : kExitCorrupt;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace lshift
