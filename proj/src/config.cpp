#include "lshift/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace lshift {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigKeyError(key, "config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

template <class N>
std::string format_number(N v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigKeyError(key, "config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<int> parse_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (v.empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  return out;
}

std::string format_list(const std::vector<int>& v) {
  if (v.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
};

template <class N, class Ref>
Field num(const char* key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return format_number<N>(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const std::string& k, const std::string& v) {
            ref(c) = parse_number<N>(k, v);
          }};
}

template <class Ref>
Field flag(const char* key, Ref ref) {
  return {key, [ref](const RunConfig& c) -> std::string { return ref(const_cast<RunConfig&>(c)) ? "true" : "false"; },
          [ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_bool(k, v); }};
}

template <class Ref>
Field list(const char* key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return format_list(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_list(k, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      num<int>("height", [](RunConfig& c) -> auto& { return c.data.height; }),
      num<int>("width", [](RunConfig& c) -> auto& { return c.data.width; }),
      num<int>("frames", [](RunConfig& c) -> auto& { return c.data.frames; }),
      num<int>("object_size", [](RunConfig& c) -> auto& { return c.data.object_size; }),
      num<int>("velocity", [](RunConfig& c) -> auto& { return c.data.velocity; }),
      {"codec",
       [](const RunConfig& c) -> std::string {
         return c.codec.mode == CodecMode::ortho ? "ortho" : "learned";
       },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "ortho") c.codec.mode = CodecMode::ortho;
         else if (v == "learned") c.codec.mode = CodecMode::learned;
         else throw ConfigKeyError(k, "config key 'codec': expected ortho or learned, got '" + v + "'");
       }},
      num<int>("codec_factor", [](RunConfig& c) -> auto& { return c.codec.factor; }),
      num<int>("latent_channels", [](RunConfig& c) -> auto& { return c.codec.learned_channels; }),
      num<int>("codec_hidden", [](RunConfig& c) -> auto& { return c.codec.hidden_channels; }),
      num<int>("base_channels", [](RunConfig& c) -> auto& { return c.model.unet.base_channels; }),
      list("channel_multipliers", [](RunConfig& c) -> auto& { return c.model.unet.channel_multipliers; }),
      num<int>("num_res_blocks", [](RunConfig& c) -> auto& { return c.model.unet.num_res_blocks; }),
      list("attention_levels", [](RunConfig& c) -> auto& { return c.model.unet.attention_levels; }),
      num<int>("heads", [](RunConfig& c) -> auto& { return c.model.unet.heads; }),
      num<int>("context_dim", [](RunConfig& c) -> auto& { return c.model.unet.context_dim; }),
      num<int>("fold", [](RunConfig& c) -> auto& { return c.model.unet.fold; }),
      flag("use_shift", [](RunConfig& c) -> auto& { return c.model.unet.use_shift; }),
      num<int>("mlp_ratio", [](RunConfig& c) -> auto& { return c.model.unet.mlp_ratio; }),
      num<int>("norm_groups", [](RunConfig& c) -> auto& { return c.model.unet.norm_groups; }),
      num<int>("max_tokens", [](RunConfig& c) -> auto& { return c.model.max_tokens; }),
      num<int>("diffusion_steps", [](RunConfig& c) -> auto& { return c.schedule.steps; }),
      num<double>("beta1", [](RunConfig& c) -> auto& { return c.schedule.beta1; }),
      num<double>("betaT", [](RunConfig& c) -> auto& { return c.schedule.beta_last; }),
      {"schedule", [](const RunConfig& c) { return c.schedule.kind; },
       [](RunConfig& c, const std::string&, const std::string& v) { c.schedule.kind = v; }},
      num<int>("sample_steps", [](RunConfig& c) -> auto& { return c.sampler.steps; }),
      num<double>("guidance_scale", [](RunConfig& c) -> auto& { return c.sampler.guidance_scale; }),
      {"variance",
       [](const RunConfig& c) -> std::string {
         return c.sampler.variance == ReverseVariance::posterior ? "posterior" : "beta";
       },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "posterior") c.sampler.variance = ReverseVariance::posterior;
         else if (v == "beta") c.sampler.variance = ReverseVariance::beta;
         else throw ConfigKeyError(k, "config key 'variance': expected posterior or beta, got '" + v + "'");
       }},
      num<std::int64_t>("steps", [](RunConfig& c) -> auto& { return c.train.steps; }),
      num<int>("batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }),
      num<double>("lr", [](RunConfig& c) -> auto& { return c.train.lr; }),
      num<double>("text_drop_p", [](RunConfig& c) -> auto& { return c.train.text_drop_p; }),
      num<double>("ema_decay", [](RunConfig& c) -> auto& { return c.train.ema_decay; }),
      num<std::uint64_t>("seed", [](RunConfig& c) -> auto& { return c.train.seed; }),
      num<std::int64_t>("eval_every", [](RunConfig& c) -> auto& { return c.train.eval_every; }),
      num<std::int64_t>("checkpoint_every", [](RunConfig& c) -> auto& { return c.train.checkpoint_every; }),
      num<int>("eval_samples", [](RunConfig& c) -> auto& { return c.train.eval_samples; }),
      num<double>("eval_guidance", [](RunConfig& c) -> auto& { return c.train.eval_guidance; }),
      num<int>("eval_sample_steps", [](RunConfig& c) -> auto& { return c.train.eval_sample_steps; }),
      flag("use_ema", [](RunConfig& c) -> auto& { return c.train.use_ema; }),
      num<int>("codec_steps", [](RunConfig& c) -> auto& { return c.train.codec_steps; }),
  };
  return table;
}

}  // namespace

void RunConfig::finalize() {
  codec.validate();
  model.unet.in_channels = codec.latent_channels();
  model.unet.validate();
  if (data.height % codec.factor != 0 || data.width % codec.factor != 0)
    throw ConfigError("frame size must be divisible by codec_factor");
  const int down = 1 << (model.unet.levels() - 1);
  if ((data.height / codec.factor) % down != 0 || (data.width / codec.factor) % down != 0)
    throw ConfigError("latent size must be divisible by 2^(levels-1)");
  if (model.max_tokens < 5) throw ConfigError("max_tokens must hold a 5-word caption");
  make_schedule(schedule.steps, schedule.beta1, schedule.beta_last, schedule.kind);
  if (sampler.steps < 1 || sampler.steps > schedule.steps)
    throw ConfigError("sample_steps must lie in [1, diffusion_steps]");
  if (sampler.guidance_scale < 0) throw ConfigError("guidance_scale must be >= 0");
  if (train.steps < 0 || train.batch_size < 1 || !(train.lr > 0))
    throw ConfigError("steps must be >= 0, batch_size >= 1 and lr > 0");
  if (!(train.ema_decay > 0 && train.ema_decay < 1)) throw ConfigError("ema_decay must lie in (0,1)");
  if (!(train.text_drop_p >= 0 && train.text_drop_p <= 1))
    throw ConfigError("text_drop_p must lie in [0,1]");
  if (train.eval_every < 0 || train.checkpoint_every < 0 || train.eval_samples < 1 ||
      train.eval_sample_steps < 1 || train.eval_sample_steps > schedule.steps ||
      train.eval_guidance < 0 || train.codec_steps < 0)
    throw ConfigError("invalid evaluation or checkpoint settings");
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigKeyError(t, "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (!out.emplace(key, trim(std::string_view(t).substr(eq + 1))).second)
      throw ConfigKeyError(key, "config key '" + key + "' given twice");
  }
  return out;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  for (const auto& [key, value] : parse_key_values(text)) {
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw ConfigKeyError(key, "unknown config key '" + key + "'");
    it->set(cfg, key, value);
  }
  cfg.finalize();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

}  // namespace lshift
