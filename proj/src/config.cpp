#include "dlow/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "dlow/errors.hpp"

namespace dlow {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  std::int64_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ArgumentError(cat("config key '", key, "': not an integer: '", value, "'"));
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ArgumentError(cat("config key '", key, "': not a number: '", value, "'"));
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ArgumentError(cat("config key '", key, "': expected true/false, got '", value, "'"));
}

std::vector<std::string> parse_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define DLOW_INT_FIELD(name)                                                                        \
  Field {                                                                                           \
    #name, [](TrainConfig& c, const std::string& k, const std::string& v) { c.name = parse_int(k, v); }, \
        [](const TrainConfig& c) { return std::to_string(c.name); }                                 \
  }
#define DLOW_DOUBLE_FIELD(name)                                                                          \
  Field {                                                                                                \
    #name, [](TrainConfig& c, const std::string& k, const std::string& v) { c.name = parse_double(k, v); }, \
        [](const TrainConfig& c) { return format_double(c.name); }                                       \
  }
#define DLOW_BOOL_FIELD(name)                                                                          \
  Field {                                                                                              \
    #name, [](TrainConfig& c, const std::string& k, const std::string& v) { c.name = parse_bool(k, v); }, \
        [](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); }                   \
  }
#define DLOW_STRING_FIELD(name)                                                                  \
  Field {                                                                                        \
    #name, [](TrainConfig& c, const std::string&, const std::string& v) { c.name = v; },         \
        [](const TrainConfig& c) { return c.name; }                                              \
  }
#define DLOW_LIST_FIELD(name)                                                                    \
  Field {                                                                                        \
    #name, [](TrainConfig& c, const std::string&, const std::string& v) { c.name = parse_list(v); }, \
        [](const TrainConfig& c) { return join(c.name); }                                        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DLOW_INT_FIELD(total_iterations),
      DLOW_DOUBLE_FIELD(learning_rate),
      DLOW_DOUBLE_FIELD(beta1),
      DLOW_DOUBLE_FIELD(beta2),
      DLOW_DOUBLE_FIELD(lambda_cyc),
      DLOW_DOUBLE_FIELD(lambda_identity),
      Field{"gan_loss",
            [](TrainConfig& c, const std::string& k, const std::string& v) {
              if (v == "least-squares") {
                c.gan_loss = GanLossKind::kLeastSquares;
              } else if (v == "log") {
                c.gan_loss = GanLossKind::kLog;
              } else {
                throw ArgumentError(cat("config key '", k, "': expected least-squares or log, got '", v, "'"));
              }
            },
            [](const TrainConfig& c) { return to_string(c.gan_loss); }},
      DLOW_INT_FIELD(batch_size),
      Field{"seed", [](TrainConfig& c, const std::string& k,
                       const std::string& v) { c.seed = static_cast<std::uint64_t>(parse_int(k, v)); },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
      Field{"z_mode",
            [](TrainConfig& c, const std::string& k, const std::string& v) {
              if (v == "curriculum") {
                c.z_mode = ZMode::kCurriculum;
              } else if (v == "uniform") {
                c.z_mode = ZMode::kUniform;
              } else if (v.rfind("fixed:", 0) == 0) {
                c.z_mode = ZMode::kFixed;
                c.z_fixed = parse_double(k, v.substr(6));
              } else {
                throw ArgumentError(cat("config key '", k, "': expected curriculum, uniform or fixed:<z>, got '", v, "'"));
              }
            },
            [](const TrainConfig& c) { return to_string(c.z_mode, c.z_fixed); }},
      DLOW_BOOL_FIELD(per_batch_z),
      DLOW_INT_FIELD(num_targets),
      DLOW_INT_FIELD(style_gen_cycle),
      DLOW_BOOL_FIELD(weight_target_reconstruction),
      DLOW_INT_FIELD(image_size),
      DLOW_INT_FIELD(crop_size),
      DLOW_BOOL_FIELD(flip),
      DLOW_STRING_FIELD(source_dir),
      DLOW_LIST_FIELD(target_dirs),
      DLOW_LIST_FIELD(target_names),
      DLOW_INT_FIELD(ngf),
      DLOW_INT_FIELD(ndf),
      DLOW_INT_FIELD(n_residual),
      DLOW_INT_FIELD(n_downsampling),
      DLOW_INT_FIELD(disc_layers),
      DLOW_BOOL_FIELD(condition_all_norms),
      DLOW_STRING_FIELD(experiment),
      DLOW_STRING_FIELD(run_dir),
      DLOW_INT_FIELD(log_every),
      DLOW_INT_FIELD(checkpoint_every),
  };
  return table;
}

}  // namespace

GeneratorOptions TrainConfig::generator_options() const {
  GeneratorOptions o;
  o.ngf = ngf;
  o.n_residual = n_residual;
  o.n_downsampling = n_downsampling;
  o.z_dim = num_targets;
  o.condition_all_norms = condition_all_norms;
  return o;
}

DiscriminatorOptions TrainConfig::discriminator_options() const {
  DiscriminatorOptions o;
  o.ndf = ndf;
  o.n_layers = disc_layers;
  return o;
}

ObjectiveConfig TrainConfig::objective_config() const {
  ObjectiveConfig o;
  o.lambda_cyc = lambda_cyc;
  o.lambda_identity = lambda_identity;
  o.gan_loss_kind = gan_loss;
  o.weight_target_reconstruction = weight_target_reconstruction;
  return o;
}

std::int64_t TrainConfig::style_period() const { return style_gen_cycle > 0 ? style_gen_cycle : num_targets + 1; }

void TrainConfig::validate() const {
  if (total_iterations < 1) throw ArgumentError("total_iterations must be >= 1");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (lambda_cyc < 0.0 || lambda_identity < 0.0) throw ArgumentError("loss weights must be non-negative");
  if (num_targets < 1) throw ArgumentError("num_targets must be >= 1");
  if (style_gen_cycle != 0 && style_gen_cycle < num_targets + 1) {
    throw ArgumentError(cat("style_gen_cycle must be 0 or >= num_targets + 1 (", num_targets + 1, ")"));
  }
  if (crop_size < 1 || crop_size > image_size) throw ArgumentError("crop_size must be in [1, image_size]");
  if (z_mode == ZMode::kFixed) DomainnessValue{z_fixed};
  if (!target_names.empty() && static_cast<std::int64_t>(target_names.size()) != num_targets) {
    throw ArgumentError("target_names must list num_targets names");
  }
}

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(config, key, value);
      return;
    }
  }
  throw ArgumentError(cat("unknown config key '", key, "'"));
}

std::vector<KeyValueLine> parse_key_values(const std::string& text) {
  std::istringstream in(text);
  std::vector<KeyValueLine> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ArgumentError(cat("config line ", line_no, ": expected key = value"));
    out.push_back({line_no, trim(line.substr(0, eq)), trim(line.substr(eq + 1))});
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(cat("cannot read config file ", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

TrainConfig parse_train_config(const std::string& text, TrainConfig base) {
  for (const auto& kv : parse_key_values(text)) {
    try {
      set_config_value(base, kv.key, kv.value);
    } catch (const ArgumentError& e) {
      throw ArgumentError(cat("config line ", kv.line, ": ", e.what()));
    }
  }
  return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  return parse_train_config(read_text_file(path), std::move(base));
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(config));
  return out;
}

std::string format_train_config(const TrainConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_entries(config)) out += k + " = " + v + "\n";
  return out;
}

std::string to_string(ZMode mode, double fixed_value) {
  switch (mode) {
    case ZMode::kCurriculum:
      return "curriculum";
    case ZMode::kUniform:
      return "uniform";
    case ZMode::kFixed:
      return "fixed:" + format_double(fixed_value);
  }
  return "?";
}

std::string to_string(GanLossKind kind) { return kind == GanLossKind::kLeastSquares ? "least-squares" : "log"; }

}  // namespace dlow
