#include "run_config.hpp"

#include "uae/error.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <map>

namespace uae::cli {

namespace {

using Values = std::vector<std::string>;

[[noreturn]] void bad_value(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::InvalidArgument, "config key '" + key + "': " + why);
}

double to_double(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  bad_value(key, "expected a number, got '" + s + "'");
}

long long to_int(const std::string& key, const std::string& s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) bad_value(key, "expected an integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  bad_value(key, "expected true or false, got '" + s + "'");
}

const std::string& single(const std::string& key, const Values& v) {
  if (v.size() != 1) bad_value(key, "expected one value");
  return v[0];
}

// Shortest text that reads back to the same double.
std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename It>
std::string list(It begin, It end) {
  std::string s = "[";
  for (It it = begin; it != end; ++it) s += (it == begin ? "" : ", ") + num(static_cast<double>(*it));
  return s + "]";
}

struct Field {
  std::string key;  // section.name, or name for top-level keys
  std::function<void(RunConfig&, const Values&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field real(std::string key, T RunConfig::*outer, double T::*member) {
  return {key,
          [=](RunConfig& c, const Values& v) { (c.*outer).*member = to_double(key, single(key, v)); },
          [=](const RunConfig& c) { return num((c.*outer).*member); }};
}

template <typename T>
Field integer(std::string key, T RunConfig::*outer, int T::*member) {
  return {key,
          [=](RunConfig& c, const Values& v) { (c.*outer).*member = static_cast<int>(to_int(key, single(key, v))); },
          [=](const RunConfig& c) { return std::to_string((c.*outer).*member); }};
}

// Fields of the augmentation spec nested in the training config.
Field aug_real(std::string key, double AugmentSpec::*member) {
  return {key, [=](RunConfig& c, const Values& v) { c.train.augment.*member = to_double(key, single(key, v)); },
          [=](const RunConfig& c) { return num(c.train.augment.*member); }};
}

Field fix_int(std::string key, int FixpointConfig::*member) {
  return {key,
          [=](RunConfig& c, const Values& v) { c.adareg.fixpoint.*member = static_cast<int>(to_int(key, single(key, v))); },
          [=](const RunConfig& c) { return std::to_string(c.adareg.fixpoint.*member); }};
}

Field weight(std::string key, double SimilarityWeights::*member) {
  return {key,
          [=](RunConfig& c, const Values& v) {
            if (!c.weights) c.weights = SimilarityWeights{};
            (*c.weights).*member = to_double(key, single(key, v));
          },
          [=](const RunConfig& c) { return c.weights ? num((*c.weights).*member) : std::string("auto"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back({"seed", [](RunConfig& c, const Values& v) {
                   const long long s = to_int("seed", single("seed", v));
                   if (s < 0) bad_value("seed", "must be >= 0");
                   c.seed = static_cast<std::uint64_t>(s);
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});

    f.push_back(real("train.learning_rate", &RunConfig::train, &TrainConfig::learning_rate));
    f.push_back(real("train.momentum", &RunConfig::train, &TrainConfig::momentum));
    f.push_back(integer("train.steps", &RunConfig::train, &TrainConfig::steps));
    f.push_back(integer("train.head_dim", &RunConfig::train, &TrainConfig::head_dim));
    f.push_back(real("train.tau_a", &RunConfig::train, &TrainConfig::tau_a));
    f.push_back(real("train.tau_s", &RunConfig::train, &TrainConfig::tau_s));
    f.push_back(real("train.tau_c", &RunConfig::train, &TrainConfig::tau_c));
    f.push_back(integer("train.n_pos_fine", &RunConfig::train, &TrainConfig::n_pos_fine));
    f.push_back(integer("train.n_neg_fine", &RunConfig::train, &TrainConfig::n_neg_fine));
    f.push_back(integer("train.n_fov_fine", &RunConfig::train, &TrainConfig::n_fov_fine));
    f.push_back(integer("train.n_pos_coarse", &RunConfig::train, &TrainConfig::n_pos_coarse));
    f.push_back(integer("train.n_neg_coarse", &RunConfig::train, &TrainConfig::n_neg_coarse));
    f.push_back(integer("train.n_sem_per_class", &RunConfig::train, &TrainConfig::n_sem_per_class));
    f.push_back(real("train.min_dist_fine", &RunConfig::train, &TrainConfig::min_dist_fine));
    f.push_back(real("train.min_dist_coarse", &RunConfig::train, &TrainConfig::min_dist_coarse));
    f.push_back(real("train.hard_fraction", &RunConfig::train, &TrainConfig::hard_fraction));

    f.push_back({"augment.bezier_control_points",
                 [](RunConfig& c, const Values& v) {
                   if (v.size() != 4) bad_value("augment.bezier_control_points", "expected 4 values");
                   for (std::size_t i = 0; i < 4; ++i) {
                     c.train.augment.bezier_control_points[i] = to_double("augment.bezier_control_points", v[i]);
                   }
                 },
                 [](const RunConfig& c) {
                   const auto& p = c.train.augment.bezier_control_points;
                   return list(p.begin(), p.end());
                 }});
    f.push_back(aug_real("augment.reverse_probability", &AugmentSpec::reverse_probability));
    f.push_back(aug_real("augment.rotation_deg", &AugmentSpec::rotation_deg));
    f.push_back(aug_real("augment.scale_min", &AugmentSpec::scale_min));
    f.push_back(aug_real("augment.scale_max", &AugmentSpec::scale_max));
    f.push_back(aug_real("augment.blur_sigma_min", &AugmentSpec::blur_sigma_min));
    f.push_back(aug_real("augment.blur_sigma_max", &AugmentSpec::blur_sigma_max));
    f.push_back(aug_real("augment.noise_sigma_min", &AugmentSpec::noise_sigma_min));
    f.push_back(aug_real("augment.noise_sigma_max", &AugmentSpec::noise_sigma_max));
    f.push_back({"augment.aggressive",
                 [](RunConfig& c, const Values& v) {
                   c.train.augment.aggressive = to_bool("augment.aggressive", single("augment.aggressive", v));
                 },
                 [](const RunConfig& c) { return std::string(c.train.augment.aggressive ? "true" : "false"); }});
    f.push_back({"augment.patch_size",
                 [](RunConfig& c, const Values& v) {
                   if (v.size() != 3) bad_value("augment.patch_size", "expected 3 values");
                   for (std::size_t i = 0; i < 3; ++i) {
                     c.train.augment.patch_size[i] = static_cast<int>(to_int("augment.patch_size", v[i]));
                   }
                 },
                 [](const RunConfig& c) {
                   const auto& p = c.train.augment.patch_size;
                   return list(p.begin(), p.end());
                 }});
    f.push_back(aug_real("augment.min_overlap", &AugmentSpec::min_overlap));
    f.push_back(aug_real("augment.max_shift_fraction", &AugmentSpec::max_shift_fraction));

    f.push_back(integer("adareg.grid_spacing", &RunConfig::adareg, &AdaRegConfig::grid_spacing));
    f.push_back(real("adareg.similarity_floor", &RunConfig::adareg, &AdaRegConfig::similarity_floor));
    f.push_back(real("adareg.trim_fraction", &RunConfig::adareg, &AdaRegConfig::trim_fraction));
    f.push_back({"adareg.margins",
                 [](RunConfig& c, const Values& v) {
                   c.adareg.margins.clear();
                   for (const auto& s : v) {
                     if (s.empty()) continue;  // `margins = []`
                     c.adareg.margins.push_back(static_cast<int>(to_int("adareg.margins", s)));
                   }
                 },
                 [](const RunConfig& c) { return list(c.adareg.margins.begin(), c.adareg.margins.end()); }});
    f.push_back({"adareg.matcher",
                 [](RunConfig& c, const Values& v) { c.adareg.matcher = parse_matcher(single("adareg.matcher", v)); },
                 [](const RunConfig& c) { return "\"" + std::string(to_string(c.adareg.matcher)) + "\""; }});
    f.push_back(real("adareg.body_threshold", &RunConfig::adareg, &AdaRegConfig::body_threshold));

    f.push_back(fix_int("fixpoint.L", &FixpointConfig::L));
    f.push_back({"fixpoint.tau_dis",
                 [](RunConfig& c, const Values& v) {
                   c.adareg.fixpoint.tau_dis = to_double("fixpoint.tau_dis", single("fixpoint.tau_dis", v));
                 },
                 [](const RunConfig& c) { return num(c.adareg.fixpoint.tau_dis); }});
    f.push_back(fix_int("fixpoint.max_iter", &FixpointConfig::max_iter));
    f.push_back(fix_int("fixpoint.min_points", &FixpointConfig::min_points));

    f.push_back(weight("weights.coarse", &SimilarityWeights::coarse));
    f.push_back(weight("weights.fine", &SimilarityWeights::fine));
    f.push_back(weight("weights.semantic", &SimilarityWeights::semantic));

    f.push_back({"phantom.dims",
                 [](RunConfig& c, const Values& v) {
                   if (v.size() != 3) bad_value("phantom.dims", "expected 3 values");
                   for (std::size_t i = 0; i < 3; ++i) c.phantom.dims[i] = static_cast<int>(to_int("phantom.dims", v[i]));
                 },
                 [](const RunConfig& c) { return list(c.phantom.dims.begin(), c.phantom.dims.end()); }});
    f.push_back(real("phantom.spacing", &RunConfig::phantom, &PhantomSpec::spacing));
    f.push_back(integer("phantom.num_organs", &RunConfig::phantom, &PhantomSpec::num_organs));
    f.push_back(real("phantom.organ_axis_min", &RunConfig::phantom, &PhantomSpec::organ_axis_min));
    f.push_back(real("phantom.organ_axis_max", &RunConfig::phantom, &PhantomSpec::organ_axis_max));
    f.push_back(real("phantom.organ_gap", &RunConfig::phantom, &PhantomSpec::organ_gap));
    f.push_back(real("phantom.organ_intensity_min", &RunConfig::phantom, &PhantomSpec::organ_intensity_min));
    f.push_back(real("phantom.organ_intensity_max", &RunConfig::phantom, &PhantomSpec::organ_intensity_max));
    f.push_back(real("phantom.body_intensity", &RunConfig::phantom, &PhantomSpec::body_intensity));
    f.push_back(real("phantom.texture_amplitude", &RunConfig::phantom, &PhantomSpec::texture_amplitude));
    f.push_back(real("phantom.texture_scale", &RunConfig::phantom, &PhantomSpec::texture_scale));
    f.push_back(integer("phantom.texture_blobs", &RunConfig::phantom, &PhantomSpec::texture_blobs));

    f.push_back({"suite.pairs",
                 [](RunConfig& c, const Values& v) { c.suite.pairs = to_bool("suite.pairs", single("suite.pairs", v)); },
                 [](const RunConfig& c) { return std::string(c.suite.pairs ? "true" : "false"); }});
    f.push_back(real("suite.max_rotation_deg", &RunConfig::suite, &SuiteSpec::max_rotation_deg));
    f.push_back(real("suite.max_translation_mm", &RunConfig::suite, &SuiteSpec::max_translation_mm));
    f.push_back({"suite.remap",
                 [](RunConfig& c, const Values& v) { c.suite.remap = parse_remap(single("suite.remap", v)); },
                 [](const RunConfig& c) { return "\"" + std::string(to_string(c.suite.remap)) + "\""; }});
    f.push_back(integer("suite.fov_margin", &RunConfig::suite, &SuiteSpec::fov_margin));
    return f;
  }();
  return all;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  train.augment.validate();
  adareg.validate();
  if (weights) weights->validate(weights->semantic > 0.0);
  phantom.validate();
  if (suite.max_rotation_deg < 0.0 || suite.max_translation_mm < 0.0 || suite.fov_margin < 0) {
    throw Error(ErrorCode::InvalidArgument, "suite ranges must be >= 0");
  }
}

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw Error(ErrorCode::InvalidArgument, source + ": " + e.what());
  }
  std::map<std::string, const Field*> by_key;
  for (const Field& f : fields()) by_key[f.key] = &f;

  RunConfig cfg;
  cfg.train.augment.seed = 0;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const std::string key = item.fullname();
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw Error(ErrorCode::InvalidArgument, source + ": unknown config key '" + key + "'");
    it->second->set(cfg, item.inputs);
  }
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
  return parse_run_config(in, path.string());
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out, section;
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    const std::string value = f.get(cfg);
    // `auto` weights are reported as a comment so the echo stays loadable.
    if (value == "auto") out += "# " + name + " = auto\n";
    else out += name + " = " + value + "\n";
  }
  return out;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace uae::cli
