#include "margin_audit/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <openssl/evp.h>

#include "margin_audit/analysis.hpp"
#include "margin_audit/margin_table.hpp"

namespace margin_audit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(s);
  while (std::getline(in, cell, sep)) {
    cell = trim(cell);
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    return parse_real(v);
  } catch (const TableError&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<double> to_reals(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& c : split_list(v, ',')) out.push_back(to_real(key, c));
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& c : split_list(v, ',')) out.push_back(to_uint(key, c));
  return out;
}

std::string join_reals(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
  return s;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

ExperimentConfig config_from_map(const std::map<std::string, std::string>& entries) {
  ExperimentConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto& d = c.data;
  auto& m = c.model;
  auto& t = c.train;
  auto& g = c.margins;
  auto& a = c.analysis;
  auto& p = c.pseudo;
  const std::map<std::string, Setter> setters = {
      {"seed", [&](auto& k, auto& v) { c.seed = to_uint(k, v); }},
      {"out", [&](auto&, auto& v) { c.out = v; }},
      {"data.generator", [&](auto&, auto& v) { d.generator = v; }},
      {"data.n", [&](auto& k, auto& v) { d.n = to_uint(k, v); }},
      {"data.noise", [&](auto& k, auto& v) { d.noise = to_real(k, v); }},
      {"data.sigma", [&](auto& k, auto& v) { d.sigma = to_real(k, v); }},
      {"data.centers",
       [&](auto& k, auto& v) {
         d.centers.clear();
         for (const auto& pt : split_list(v, ';')) {
           const auto xy = to_reals(k, pt);
           if (xy.size() != 2) throw ConfigError(k + ": centers are 'x,y' pairs separated by ';'");
           d.centers.push_back({xy[0], xy[1]});
         }
       }},
      {"data.images", [&](auto&, auto& v) { d.images = v; }},
      {"data.labels", [&](auto&, auto& v) { d.labels = v; }},
      {"data.max_items", [&](auto& k, auto& v) { d.max_items = to_uint(k, v); }},
      {"data.split",
       [&](auto& k, auto& v) {
         const auto f = to_reals(k, v);
         if (f.size() != 3) throw ConfigError(k + ": expected three fractions");
         d.split = {f[0], f[1], f[2]};
       }},
      {"model.hidden", [&](auto& k, auto& v) { m.hidden = to_sizes(k, v); }},
      {"model.activation",
       [&](auto& k, auto& v) {
         try {
           m.activation = parse_activation(v);
         } catch (const ModelError& e) {
           throw ConfigError(k + ": " + e.what());
         }
       }},
      {"model.conv_kernel", [&](auto& k, auto& v) { m.conv_kernel = to_uint(k, v); }},
      {"model.conv_channels", [&](auto& k, auto& v) { m.conv_channels = to_uint(k, v); }},
      {"model.conv_stride", [&](auto& k, auto& v) { m.conv_stride = to_uint(k, v); }},
      {"model.image_channels", [&](auto& k, auto& v) { m.image_channels = to_uint(k, v); }},
      {"model.image_height", [&](auto& k, auto& v) { m.image_height = to_uint(k, v); }},
      {"model.image_width", [&](auto& k, auto& v) { m.image_width = to_uint(k, v); }},
      {"train.method", [&](auto&, auto& v) { t.method = v; }},
      {"train.epsilon", [&](auto& k, auto& v) { t.adv.epsilon = to_real(k, v); }},
      {"train.norm",
       [&](auto& k, auto& v) {
         try {
           t.adv.norm = parse_norm(v);
         } catch (const std::exception& e) {
           throw ConfigError(k + ": " + e.what());
         }
       }},
      {"train.steps", [&](auto& k, auto& v) { t.adv.steps = to_uint(k, v); }},
      {"train.step_size", [&](auto& k, auto& v) { t.adv.step_size = to_real(k, v); }},
      {"train.trades_beta", [&](auto& k, auto& v) { t.adv.trades_beta = to_real(k, v); }},
      {"train.optimizer",
       [&](auto& k, auto& v) {
         try {
           t.optimizer.method = parse_optimizer(v);
         } catch (const OptimizerError& e) {
           throw ConfigError(k + ": " + e.what());
         }
       }},
      {"train.learning_rate", [&](auto& k, auto& v) { t.optimizer.learning_rate = to_real(k, v); }},
      {"train.momentum", [&](auto& k, auto& v) { t.optimizer.momentum = to_real(k, v); }},
      {"train.epochs", [&](auto& k, auto& v) { t.optimizer.epochs = to_uint(k, v); }},
      {"train.batch_size", [&](auto& k, auto& v) { t.optimizer.batch_size = to_uint(k, v); }},
      {"train.decay_factor", [&](auto& k, auto& v) { t.optimizer.decay_factor = to_real(k, v); }},
      {"train.decay_every", [&](auto& k, auto& v) { t.optimizer.decay_every = to_uint(k, v); }},
      {"train.class_logit_scale", [&](auto& k, auto& v) { t.class_logit_scale = to_reals(k, v); }},
      {"margins.norm",
       [&](auto& k, auto& v) {
         try {
           g.norm = parse_norm(v);
         } catch (const std::exception& e) {
           throw ConfigError(k + ": " + e.what());
         }
       }},
      {"margins.tolerance", [&](auto& k, auto& v) { g.tolerance = to_real(k, v); }},
      {"margins.max_iterations", [&](auto& k, auto& v) { g.max_iterations = to_uint(k, v); }},
      {"margins.restarts", [&](auto& k, auto& v) { g.restarts = to_uint(k, v); }},
      {"margins.pgd_steps", [&](auto& k, auto& v) { g.pgd_steps = to_uint(k, v); }},
      {"margins.search_bound", [&](auto& k, auto& v) { g.search_bound = to_real(k, v); }},
      {"margins.overshoot", [&](auto& k, auto& v) { g.overshoot = to_real(k, v); }},
      {"analysis.epsilon", [&](auto& k, auto& v) { a.epsilon = to_real(k, v); }},
      {"analysis.epsilons", [&](auto& k, auto& v) { a.epsilons = to_reals(k, v); }},
      {"analysis.bins", [&](auto& k, auto& v) { a.bins = to_uint(k, v); }},
      {"analysis.population", [&](auto&, auto& v) { a.population = v; }},
      {"analysis.alphas", [&](auto& k, auto& v) { a.alphas = to_reals(k, v); }},
      {"analysis.subset_size", [&](auto& k, auto& v) { a.subset_size = to_uint(k, v); }},
      {"analysis.subsets", [&](auto& k, auto& v) { a.subsets = to_uint(k, v); }},
      {"analysis.pgd_steps", [&](auto& k, auto& v) { a.pgd_steps = to_uint(k, v); }},
      {"analysis.pgd_restarts", [&](auto& k, auto& v) { a.pgd_restarts = to_uint(k, v); }},
      {"analysis.pseudomargin", [&](auto& k, auto& v) { a.pseudomargin = to_bool(k, v); }},
      {"pseudo.hidden", [&](auto& k, auto& v) { p.net.hidden = to_sizes(k, v); }},
      {"pseudo.epochs", [&](auto& k, auto& v) { p.net.optimizer.epochs = to_uint(k, v); }},
      {"pseudo.learning_rate", [&](auto& k, auto& v) { p.net.optimizer.learning_rate = to_real(k, v); }},
      {"pseudo.batch_size", [&](auto& k, auto& v) { p.net.optimizer.batch_size = to_uint(k, v); }},
      {"pseudo.patience", [&](auto& k, auto& v) { p.net.patience = to_uint(k, v); }},
      {"pseudo.val_fraction", [&](auto& k, auto& v) { p.val_fraction = to_real(k, v); }},
  };
  for (const auto& [key, value] : entries) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, value);
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return config_from_map(parse_config_text(ss.str()));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ExperimentConfig::validate() const {
  const auto& d = data;
  if (d.generator == "two_moons") {
    if (d.n == 0 || d.n % 2 != 0) throw ConfigError("data.n must be positive and even for two_moons");
    if (!(d.noise >= 0.0)) throw ConfigError("data.noise must be non-negative");
  } else if (d.generator == "blobs") {
    if (d.centers.size() < 2) throw ConfigError("data.centers needs at least two centers");
    if (d.n < d.centers.size()) throw ConfigError("data.n must cover every center");
    if (!(d.sigma >= 0.0)) throw ConfigError("data.sigma must be non-negative");
  } else if (d.generator == "idx") {
    if (d.images.empty() || d.labels.empty()) throw ConfigError("idx data needs data.images and data.labels");
  } else {
    throw ConfigError("data.generator must be two_moons, blobs or idx");
  }
  double total = 0.0;
  for (double f : d.split) {
    if (!(f > 0.0)) throw ConfigError("data.split fractions must all be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("data.split fractions must sum to 1");

  if (model.hidden.size() > 4) throw ConfigError("model.hidden allows at most four layers");
  for (auto h : model.hidden) {
    if (h == 0) throw ConfigError("model.hidden widths must be positive");
  }
  if (model.conv_kernel > 0 && (model.image_height < model.conv_kernel || model.image_width < model.conv_kernel)) {
    throw ConfigError("model.conv_kernel needs model.image_height/width at least as large");
  }

  if (train.method != "standard" && train.method != "at" && train.method != "trades") {
    throw ConfigError("train.method must be standard, at or trades");
  }
  try {
    train.optimizer.validate();
    if (train.method != "standard") {
      auto adv = train.adv;
      adv.method = train.method == "trades" ? AdvMethod::Trades : AdvMethod::StandardAt;
      adv.validate();
    }
    margins.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  for (double s : train.class_logit_scale) {
    if (!(s > 0.0)) throw ConfigError("train.class_logit_scale factors must be positive");
  }

  const auto& a = analysis;
  if (!(a.epsilon > 0.0)) throw ConfigError("analysis.epsilon must be positive");
  for (double e : a.epsilons) {
    if (!(e > 0.0)) throw ConfigError("analysis.epsilons must be positive");
  }
  if (a.bins < 2) throw ConfigError("analysis.bins must be at least 2");
  if (a.population != "all" && a.population != "correct") {
    throw ConfigError("analysis.population must be all or correct");
  }
  for (double al : a.alphas) {
    if (!(al > 0.0 && al <= 1.0)) throw ConfigError("analysis.alphas must lie in (0, 1]");
  }
  if (a.subset_size < 2 || a.subsets < 1) throw ConfigError("analysis.subset_size ≥ 2 and analysis.subsets ≥ 1 required");
  if (a.pgd_steps < 1 || a.pgd_restarts < 1) throw ConfigError("analysis.pgd_steps and pgd_restarts must be ≥ 1");
  if (!(pseudo.val_fraction > 0.0 && pseudo.val_fraction < 1.0)) {
    throw ConfigError("pseudo.val_fraction must lie in (0, 1)");
  }
  if (pseudo.net.optimizer.epochs > 0) {
    try {
      pseudo.net.optimizer.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("pseudo: ") + e.what());
    }
  }
}

FeatureExtractorSpec ExperimentConfig::feature_spec(std::size_t input_width) const {
  FeatureExtractorSpec spec;
  spec.input_width = input_width;
  spec.hidden = model.hidden;
  spec.activations.assign(model.hidden.size(), model.activation);
  if (model.conv_kernel > 0) {
    ConvStage conv;
    conv.geometry.channels = model.image_channels;
    conv.geometry.height = model.image_height;
    conv.geometry.width = model.image_width;
    conv.geometry.kernel = model.conv_kernel;
    conv.geometry.out_channels = model.conv_channels;
    conv.geometry.stride = model.conv_stride;
    conv.activation = model.activation;
    spec.conv = conv;
  }
  return spec;
}

std::vector<double> ExperimentConfig::alpha_grid() const {
  return analysis.alphas.empty() ? default_alpha_grid() : analysis.alphas;
}

std::string ExperimentConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["seed"] = std::to_string(seed);
  kv["data.generator"] = data.generator;
  kv["data.n"] = std::to_string(data.n);
  kv["data.split"] = join_reals({data.split.begin(), data.split.end()});
  if (data.generator == "two_moons") kv["data.noise"] = format_real(data.noise);
  if (data.generator == "blobs") {
    std::string centers;
    for (std::size_t i = 0; i < data.centers.size(); ++i) {
      centers += (i ? ";" : "") + format_real(data.centers[i][0]) + "," + format_real(data.centers[i][1]);
    }
    kv["data.centers"] = centers;
    kv["data.sigma"] = format_real(data.sigma);
  }
  if (data.generator == "idx") {
    kv["data.images"] = data.images.string();
    kv["data.labels"] = data.labels.string();
    kv["data.max_items"] = std::to_string(data.max_items);
  }
  kv["model.hidden"] = join_sizes(model.hidden);
  kv["model.activation"] = std::string(activation_name(model.activation));
  if (model.conv_kernel > 0) {
    kv["model.conv"] = join_sizes({model.conv_kernel, model.conv_channels, model.conv_stride,
                                   model.image_channels, model.image_height, model.image_width});
  }
  kv["train.method"] = train.method;
  if (train.method != "standard") {
    kv["train.epsilon"] = format_real(train.adv.epsilon);
    kv["train.norm"] = std::string(norm_name(train.adv.norm));
    kv["train.steps"] = std::to_string(train.adv.steps);
    kv["train.step_size"] = format_real(train.adv.step_size);
    if (train.method == "trades") kv["train.trades_beta"] = format_real(train.adv.trades_beta);
  }
  const auto& o = train.optimizer;
  kv["train.optimizer"] = std::string(optimizer_name(o.method));
  kv["train.learning_rate"] = format_real(o.learning_rate);
  kv["train.momentum"] = format_real(o.momentum);
  kv["train.epochs"] = std::to_string(o.epochs);
  kv["train.batch_size"] = std::to_string(o.batch_size);
  kv["train.decay"] = format_real(o.decay_factor) + "/" + std::to_string(o.decay_every);
  kv["train.class_logit_scale"] = join_reals(train.class_logit_scale);
  kv["margins.norm"] = std::string(norm_name(margins.norm));
  kv["margins.tolerance"] = format_real(margins.tolerance);
  kv["margins.max_iterations"] = std::to_string(margins.max_iterations);
  kv["margins.restarts"] = std::to_string(margins.restarts);
  kv["margins.pgd_steps"] = std::to_string(margins.pgd_steps);
  kv["margins.search_bound"] = format_real(margins.search_bound);
  kv["margins.overshoot"] = format_real(margins.overshoot);
  kv["analysis.epsilon"] = format_real(analysis.epsilon);
  kv["analysis.epsilons"] = join_reals(analysis.epsilons);
  kv["analysis.bins"] = std::to_string(analysis.bins);
  kv["analysis.population"] = analysis.population;
  kv["analysis.alphas"] = join_reals(alpha_grid());
  kv["analysis.subset_size"] = std::to_string(analysis.subset_size);
  kv["analysis.subsets"] = std::to_string(analysis.subsets);
  kv["analysis.pgd"] = std::to_string(analysis.pgd_steps) + "/" + std::to_string(analysis.pgd_restarts);
  kv["analysis.pseudomargin"] = analysis.pseudomargin ? "true" : "false";
  if (analysis.pseudomargin) {
    kv["pseudo.hidden"] = join_sizes(pseudo.net.hidden);
    kv["pseudo.epochs"] = std::to_string(pseudo.net.optimizer.epochs);
    kv["pseudo.learning_rate"] = format_real(pseudo.net.optimizer.learning_rate);
    kv["pseudo.batch_size"] = std::to_string(pseudo.net.optimizer.batch_size);
    kv["pseudo.patience"] = std::to_string(pseudo.net.patience);
    kv["pseudo.val_fraction"] = format_real(pseudo.val_fraction);
  }
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string ExperimentConfig::hash() const { return sha256_hex(canonical()); }

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

}  // namespace margin_audit
