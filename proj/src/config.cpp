#include "i2i/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "i2i/errors.hpp"

namespace i2i {

namespace {

using json = nlohmann::ordered_json;

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  void read(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
      out = v->get<double>();
    }
  }
  static_assert(std::is_same_v<std::size_t, std::uint64_t>);
  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + " must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::filesystem::path& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  /// Nested object, or nullptr when absent.
  const json* object(const std::string& key) { return take(key); }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key " + where(key));
    }
  }

  std::string where(const std::string& key = {}) const {
    const std::string p = key.empty() ? path_ : (path_.empty() ? key : path_ + "." + key);
    return "'" + (p.empty() ? std::string("<root>") : p) + "'";
  }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_image_shape(Reader& parent, const std::string& key, ImageShape& shape) {
  if (const json* j = parent.object(key)) {
    Reader r(*j, parent.child(key));
    r.read("channels", shape.channels);
    r.read("height", shape.height);
    r.read("width", shape.width);
    r.finish();
  }
}

void read_arch(const json& j, ArchConfig& a) {
  Reader r(j, "arch");
  read_image_shape(r, "x", a.x);
  read_image_shape(r, "y", a.y);
  r.read("code_channels", a.code_channels);
  r.read("code_dim", a.code_dim);
  r.read("base_filters", a.base_filters);
  r.read("encoder_res_blocks", a.encoder_res_blocks);
  r.read("generator_res_blocks", a.generator_res_blocks);
  r.read("specific_downsamples", a.specific_downsamples);
  r.read("disc_downsamples", a.disc_downsamples);
  r.finish();
}

void read_train(const json& j, TrainConfig& t) {
  Reader r(j, "train");
  r.read("steps", t.steps);
  r.read("batch_size", t.batch_size);
  r.read("learning_rate", t.learning_rate);
  r.read("adam_beta1", t.adam_beta1);
  r.read("adam_beta2", t.adam_beta2);
  r.read("adam_eps", t.adam_eps);
  r.read("lambda1", t.lambda1);
  r.read("lambda2", t.lambda2);
  r.read("lambda3", t.lambda3);
  r.read("mmd_sigma", t.mmd_sigma);
  std::array<bool, 2> explicit_alpha4{false, false};
  if (const json* alpha = r.object("alpha")) {
    Reader ra(*alpha, "train.alpha");
    for (std::size_t i = 0; i < 2; ++i) {
      const std::string key = "cycle" + std::to_string(i + 1);
      if (const json* c = ra.object(key)) {
        Reader rc(*c, ra.child(key));
        explicit_alpha4[i] = rc.has("alpha4");
        rc.read("alpha1", t.alpha[i].alpha1);
        rc.read("alpha2", t.alpha[i].alpha2);
        rc.read("alpha3", t.alpha[i].alpha3);
        rc.read("alpha4", t.alpha[i].alpha4);
        rc.finish();
      }
    }
    ra.finish();
  }
  if (r.has("beta")) {
    double beta = 1.0;
    r.read("beta", beta);
    if (!(beta >= 0.0)) throw ConfigError("'train.beta' must be >= 0");
    for (std::size_t i = 0; i < 2; ++i) {
      if (explicit_alpha4[i]) {
        throw ConfigError("'train.beta' and 'train.alpha.cycle" + std::to_string(i + 1) +
                          ".alpha4' both set; beta is the ratio alpha4/alpha1, give one of them");
      }
      if (!(t.alpha[i].alpha1 > 0.0)) throw ConfigError("'train.beta' needs alpha1 > 0 in every cycle");
      t.alpha[i].alpha4 = beta * t.alpha[i].alpha1;
    }
  }
  r.finish();
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  RunConfig c;
  Reader r(root, "");
  r.read("seed", c.train.seed);
  r.read("data_dir", c.data_dir);
  r.read("out_dir", c.out_dir);
  if (const json* j = r.object("arch")) read_arch(*j, c.train.arch);
  if (const json* j = r.object("train")) read_train(*j, c.train);
  if (const json* j = r.object("logging")) {
    Reader rl(*j, "logging");
    rl.read("checkpoint_every", c.checkpoint_every);
    rl.read("sample_every", c.sample_every);
    rl.read("log_wall_time", c.log_wall_time);
    rl.finish();
  }
  if (const json* j = r.object("eval")) {
    Reader re(*j, "eval");
    re.read("seed", c.eval.seed);
    re.read("projector_seed", c.eval.projector_seed);
    re.read("diversity_inputs", c.eval.diversity_inputs);
    re.read("diversity_k", c.eval.diversity_k);
    re.read("diversity_pairs", c.eval.diversity_pairs);
    re.read("fid_samples", c.eval.fid_samples);
    re.read("probe_specs", c.eval.probe_specs);
    re.finish();
  }
  r.finish();
  c.train.validate();
  if (c.eval.diversity_k < 2) throw ConfigError("'eval.diversity_k' must be >= 2");
  if (c.eval.diversity_inputs == 0 || c.eval.diversity_pairs == 0) {
    throw ConfigError("'eval.diversity_inputs' and 'eval.diversity_pairs' must be >= 1");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  const ArchConfig& a = t.arch;
  auto shape = [](const ImageShape& s) {
    return json{{"channels", s.channels}, {"height", s.height}, {"width", s.width}};
  };
  auto weights = [](const CycleWeights& w) {
    return json{{"alpha1", w.alpha1}, {"alpha2", w.alpha2}, {"alpha3", w.alpha3}, {"alpha4", w.alpha4}};
  };
  json j;
  j["seed"] = t.seed;
  j["data_dir"] = c.data_dir.string();
  j["out_dir"] = c.out_dir.string();
  j["arch"] = {{"x", shape(a.x)},
               {"y", shape(a.y)},
               {"code_channels", a.code_channels},
               {"code_dim", a.code_dim},
               {"base_filters", a.base_filters},
               {"encoder_res_blocks", a.encoder_res_blocks},
               {"generator_res_blocks", a.generator_res_blocks},
               {"specific_downsamples", a.specific_downsamples},
               {"disc_downsamples", a.disc_downsamples}};
  j["train"] = {{"steps", t.steps},
                {"batch_size", t.batch_size},
                {"learning_rate", t.learning_rate},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"lambda1", t.lambda1},
                {"lambda2", t.lambda2},
                {"lambda3", t.lambda3},
                {"mmd_sigma", t.mmd_sigma},
                {"alpha", {{"cycle1", weights(t.alpha[0])}, {"cycle2", weights(t.alpha[1])}}}};
  j["logging"] = {
      {"checkpoint_every", c.checkpoint_every}, {"sample_every", c.sample_every}, {"log_wall_time", c.log_wall_time}};
  j["eval"] = {{"seed", c.eval.seed},
               {"projector_seed", c.eval.projector_seed},
               {"diversity_inputs", c.eval.diversity_inputs},
               {"diversity_k", c.eval.diversity_k},
               {"diversity_pairs", c.eval.diversity_pairs},
               {"fid_samples", c.eval.fid_samples},
               {"probe_specs", c.eval.probe_specs}};
  return j.dump(2) + "\n";
}

}  // namespace i2i
