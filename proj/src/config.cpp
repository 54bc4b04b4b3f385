#include "iman/config.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace iman {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::istringstream in(s);
  std::string cell;
  while (std::getline(in, cell, ',')) parts.push_back(trim(cell));
  return parts;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid numeric value for " + key + ": '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid integer value for " + key + ": '" + value + "'");
  }
}

std::array<double, kNumModalities> parse_rates(const std::string& key, const std::string& value) {
  const auto parts = split_list(value);
  if (parts.size() != kNumModalities)
    throw ConfigError(key + " needs " + std::to_string(kNumModalities) + " comma-separated rates");
  std::array<double, kNumModalities> rates{};
  for (std::size_t i = 0; i < kNumModalities; ++i) rates[i] = parse_double(key, parts[i]);
  return rates;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  constexpr const char* kScenarioPrefix = "sweep.scenario.";
  if (key.rfind("model.", 0) == 0) {
    if (!model.set(key.substr(6), value)) throw ConfigError("unknown config key: " + key);
    return;
  }
  if (key == "seed") {
    seed = parse_u64(key, value);
  } else if (key == "gradcheck.tol") {
    gradcheck_tol = parse_double(key, value);
  } else if (key == "train.batch_size") {
    train.batch_size = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "train.learning_rate") {
    train.learning_rate = parse_double(key, value);
  } else if (key == "train.weight_decay") {
    train.weight_decay = parse_double(key, value);
  } else if (key == "train.epochs") {
    train.epochs = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "train.warmup_fraction") {
    train.warmup_fraction = parse_double(key, value);
  } else if (key == "data.n_samples") {
    n_samples = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "data.signal_strength") {
    signal_strength = parse_double(key, value);
  } else if (key == "data.noise_scale") {
    noise_scale = parse_double(key, value);
  } else if (key == "data.train_frac") {
    train_frac = parse_double(key, value);
  } else if (key == "data.val_frac") {
    val_frac = parse_double(key, value);
  } else if (key == "data.test_frac") {
    test_frac = parse_double(key, value);
  } else if (key == "data.missing_rates") {
    data_missing_rates = parse_rates(key, value);
  } else if (key == "sweep.seeds") {
    sweep_seeds.clear();
    for (const auto& cell : split_list(value)) sweep_seeds.push_back(parse_u64(key, cell));
    if (sweep_seeds.empty()) throw ConfigError("sweep.seeds must not be empty");
  } else if (key.rfind(kScenarioPrefix, 0) == 0) {
    const std::string name = key.substr(std::string(kScenarioPrefix).size());
    if (name.empty()) throw ConfigError("scenario key needs a name: " + key);
    SweepScenario scenario;
    scenario.name = name;
    scenario.rates = parse_rates(key, value);
    const auto existing = std::find_if(scenarios.begin(), scenarios.end(),
                                       [&](const SweepScenario& s) { return s.name == name; });
    if (existing != scenarios.end())
      existing->rates = scenario.rates;
    else
      scenarios.push_back(std::move(scenario));
    std::sort(scenarios.begin(), scenarios.end(),
              [](const SweepScenario& a, const SweepScenario& b) { return a.name < b.name; });
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

std::vector<std::pair<std::string, std::string>> RunConfig::kv() const {
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("seed", std::to_string(seed));
  out.emplace_back("gradcheck.tol", format_double(gradcheck_tol));
  for (const auto& [k, v] : model.kv()) out.emplace_back("model." + k, v);
  out.emplace_back("train.batch_size", std::to_string(train.batch_size));
  out.emplace_back("train.learning_rate", format_double(train.learning_rate));
  out.emplace_back("train.weight_decay", format_double(train.weight_decay));
  out.emplace_back("train.epochs", std::to_string(train.epochs));
  out.emplace_back("train.warmup_fraction", format_double(train.warmup_fraction));
  out.emplace_back("data.n_samples", std::to_string(n_samples));
  out.emplace_back("data.signal_strength", format_double(signal_strength));
  out.emplace_back("data.noise_scale", format_double(noise_scale));
  out.emplace_back("data.train_frac", format_double(train_frac));
  out.emplace_back("data.val_frac", format_double(val_frac));
  out.emplace_back("data.test_frac", format_double(test_frac));
  {
    std::string rates;
    for (std::size_t i = 0; i < kNumModalities; ++i)
      rates += (i ? "," : "") + format_double(data_missing_rates[i]);
    out.emplace_back("data.missing_rates", rates);
  }
  {
    std::string seeds;
    for (std::size_t i = 0; i < sweep_seeds.size(); ++i)
      seeds += (i ? "," : "") + std::to_string(sweep_seeds[i]);
    out.emplace_back("sweep.seeds", seeds);
  }
  for (const auto& scenario : scenarios) {
    std::string rates;
    for (std::size_t i = 0; i < kNumModalities; ++i)
      rates += (i ? "," : "") + format_double(scenario.rates[i]);
    out.emplace_back("sweep.scenario." + scenario.name, rates);
  }
  std::sort(out.begin(), out.end());
  return out;
}

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec spec;
  spec.n_samples = n_samples;
  spec.image_shape = {model.image_channels, model.image_height, model.image_width};
  spec.ebv_dim = model.ebv_dim;
  spec.normal_dim = model.normal_dim;
  spec.signal_strength = signal_strength;
  spec.noise_scale = noise_scale;
  spec.train_frac = train_frac;
  spec.val_frac = val_frac;
  spec.test_frac = test_frac;
  spec.seed = Rng(seed).split("data").derive();
  return spec;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc = train;
  tc.seed = Rng(seed).split("shuffle").derive();
  return tc;
}

void RunConfig::write_resolved(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir + "/config.resolved", std::ios::binary);
  if (!out) throw IoError("cannot write " + dir + "/config.resolved");
  for (const auto& [key, value] : kv()) out << key << " = " << value << "\n";
}

}  // namespace iman
