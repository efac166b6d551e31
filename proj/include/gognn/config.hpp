#ifndef GOGNN_CONFIG_HPP
#define GOGNN_CONFIG_HPP

// Experiment configuration files: one `key = value` per line, `#` comments.
//
//   format = gognn-config-v1
//   cfg.hidden_dim = 64        cfg.n_gcn = 3      cfg.use_gat = true
//   cfg.readout = sum          cfg.neighbor_mode = both
//   gog.hidden_dim = 64        gog.n_gcn = 3      gog.use_gat = true
//   gog.neighbor_mode = both
//   train.batch_size = 8       train.epochs = 30  train.margin = 0.5
//   train.lr = 0.001           train.beta1 = 0.9  train.beta2 = 0.999
//   train.eps = 1e-8           train.max_pairs_per_batch = 512
//   train.seed = 0             train.workers = 1
//
// Absent keys keep their defaults.

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "gognn/error.hpp"
#include "gognn/hgnn.hpp"
#include "gognn/io.hpp"
#include "gognn/siamese.hpp"

namespace gognn {

inline constexpr std::string_view kConfigFormat = "gognn-config-v1";

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key " + key + ": cannot parse \"" + v + "\"");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true or false, got \"" + v + "\"");
}

}  // namespace detail

inline ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>") {
  ExperimentConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto num = [](auto& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) {
      field = detail::parse_number<std::remove_reference_t<decltype(field)>>(k, v);
    };
  };
  auto flag = [](bool& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) { field = detail::parse_bool(k, v); };
  };
  std::map<std::string, Setter> setters{
      {"format",
       [](const std::string&, const std::string& v) {
         if (v != kConfigFormat) throw ConfigError("unsupported config format \"" + v + "\"");
       }},
      {"cfg.hidden_dim", num(c.model.cfg_stack.hidden_dim)},
      {"cfg.n_gcn", num(c.model.cfg_stack.n_gcn)},
      {"cfg.use_gat", flag(c.model.cfg_stack.use_gat)},
      {"cfg.readout", [&](const std::string&, const std::string& v) { c.model.cfg_stack.readout = parse_readout(v); }},
      {"cfg.neighbor_mode",
       [&](const std::string&, const std::string& v) { c.model.cfg_stack.neighbor_mode = parse_neighbor_mode(v); }},
      {"gog.hidden_dim", num(c.model.gog_stack.hidden_dim)},
      {"gog.n_gcn", num(c.model.gog_stack.n_gcn)},
      {"gog.use_gat", flag(c.model.gog_stack.use_gat)},
      {"gog.readout", [&](const std::string&, const std::string& v) { c.model.gog_stack.readout = parse_readout(v); }},
      {"gog.neighbor_mode",
       [&](const std::string&, const std::string& v) { c.model.gog_stack.neighbor_mode = parse_neighbor_mode(v); }},
      {"train.batch_size", num(c.train.batch_size)},
      {"train.epochs", num(c.train.epochs)},
      {"train.margin", num(c.train.margin)},
      {"train.lr", num(c.train.adam.lr)},
      {"train.beta1", num(c.train.adam.beta1)},
      {"train.beta2", num(c.train.adam.beta2)},
      {"train.eps", num(c.train.adam.eps)},
      {"train.max_pairs_per_batch", num(c.train.max_pairs_per_batch)},
      {"train.seed", num(c.train.seed)},
      {"train.workers", num(c.train.workers)},
  };

  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + ": unknown key \"" + key + "\"");
    try {
      it->second(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  c.model.gog_stack.input_dim = c.model.cfg_stack.hidden_dim;
  c.model.validate();
  c.train.validate();
  return c;
}

inline ExperimentConfig read_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path.string());
}

/// Renders a config in the file format; parse_config(render_config(c)) == c.
inline std::string render_config(const ExperimentConfig& c) {
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  const auto& m = c.model;
  const auto& t = c.train;
  os << "format = " << kConfigFormat << "\n"
     << "cfg.hidden_dim = " << m.cfg_stack.hidden_dim << "\n"
     << "cfg.n_gcn = " << m.cfg_stack.n_gcn << "\n"
     << "cfg.use_gat = " << b(m.cfg_stack.use_gat) << "\n"
     << "cfg.readout = " << to_string(m.cfg_stack.readout) << "\n"
     << "cfg.neighbor_mode = " << to_string(m.cfg_stack.neighbor_mode) << "\n"
     << "gog.hidden_dim = " << m.gog_stack.hidden_dim << "\n"
     << "gog.n_gcn = " << m.gog_stack.n_gcn << "\n"
     << "gog.use_gat = " << b(m.gog_stack.use_gat) << "\n"
     << "gog.readout = " << to_string(m.gog_stack.readout) << "\n"
     << "gog.neighbor_mode = " << to_string(m.gog_stack.neighbor_mode) << "\n"
     << "train.batch_size = " << t.batch_size << "\n"
     << "train.epochs = " << t.epochs << "\n"
     << "train.margin = " << format_double(t.margin) << "\n"
     << "train.lr = " << format_double(t.adam.lr) << "\n"
     << "train.beta1 = " << format_double(t.adam.beta1) << "\n"
     << "train.beta2 = " << format_double(t.adam.beta2) << "\n"
     << "train.eps = " << format_double(t.adam.eps) << "\n"
     << "train.max_pairs_per_batch = " << t.max_pairs_per_batch << "\n"
     << "train.seed = " << t.seed << "\n"
     << "train.workers = " << t.workers << "\n";
  return os.str();
}

}  // namespace gognn

#endif  // GOGNN_CONFIG_HPP
