#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "delta/error.hpp"
#include "delta/network.hpp"
#include "delta/synthetic.hpp"

namespace delta {

// Flat key=value run configuration. Every key is declared in the schema below;
// unknown keys are rejected. Precedence: flag > config file > default. The
// effective config echoes to run_config.txt and re-parses to the same values.
class RunConfig {
public:
  enum class Type { Int, Double, Str, Bool };

  RunConfig() {
    def("variant", "FULL", "network variant (FULL NPM NCM NCA NL NE NEH)");
    def_int("patch", 16, "patch size P");
    def_int("dim", 64, "token dimensionality D");
    def_int("heads", 4, "attention heads");
    def_int("ffn_mult", 2, "feed-forward expansion");
    def_int("prop_rows", 32, "propagation memory rows");
    def_int("height", 64, "raster height");
    def_int("width", 64, "raster width");
    def_int("dt_us", 50000, "temporal window length, microseconds");
    def_double("max_range", 50.0, "maximum LiDAR range, meters");
    def_int("lidar_period", 1, "LiDAR frame every k-th window");
    def_int("lidar_rows", 6, "LiDAR scan rows");
    def_int("objects", 4, "scene object count");
    def_double("speed_min", 1.0, "camera speed range low, m/s");
    def_double("speed_max", 4.0, "camera speed range high, m/s");
    def_double("contrast", 0.2, "event contrast threshold, log units");
    def_int("subframes", 10, "render sub-frames per window");
    def_int("sequences", 4, "sequences to generate");
    def_int("windows", 16, "windows per sequence");
    def_int("seed", 7, "master seed");
    def_double("lr", 3e-4, "initial learning rate");
    def_double("decay", 0.99, "per-epoch lr decay factor");
    def_int("epochs", 125, "training epochs");
    def_int("steps", 500, "optimizer step cap (0 = run all epochs)");
    def_int("batch", 4, "sequences advanced in lockstep");
    def_int("bptt", 4, "truncated backpropagation length T");
    def_int("crop", 0, "training crop size (0 = full frames)");
    def_int("warmup", 0, "eval: windows skipped before scoring");
    def("dataset", "", "dataset directory");
    def("eval_dataset", "", "held-out dataset directory (ablate; empty = dataset)");
    def("checkpoint", "", "checkpoint path");
    def("sequence", "", "sequence directory (infer)");
    def("out", "", "output directory");
    def_bool("force", false, "overwrite existing outputs");
  }

  void set(const std::string& key, const std::string& value) {
    Entry& e = find(key);
    switch (e.type) {
      case Type::Int:
        try {
          std::size_t pos = 0;
          e.i = std::stoll(value, &pos);
          if (pos != value.size()) throw std::invalid_argument(value);
        } catch (const std::exception&) {
          throw UsageError("config key " + key + " expects an integer, got '" + value + "'");
        }
        break;
      case Type::Double:
        try {
          std::size_t pos = 0;
          e.d = std::stod(value, &pos);
          if (pos != value.size()) throw std::invalid_argument(value);
        } catch (const std::exception&) {
          throw UsageError("config key " + key + " expects a number, got '" + value + "'");
        }
        break;
      case Type::Str:
        e.s = value;
        break;
      case Type::Bool:
        if (value == "true" || value == "1")
          e.b = true;
        else if (value == "false" || value == "0")
          e.b = false;
        else
          throw UsageError("config key " + key + " expects true/false, got '" + value + "'");
        break;
    }
  }

  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  long long get_int(const std::string& key) const { return find(key).i; }
  double get_double(const std::string& key) const { return find(key).d; }
  const std::string& get_str(const std::string& key) const { return find(key).s; }
  bool get_bool(const std::string& key) const { return find(key).b; }

  std::string echo() const {
    std::string out;
    char buf[64];
    for (const auto& e : entries_) {
      out += e.key + " = ";
      switch (e.type) {
        case Type::Int: out += std::to_string(e.i); break;
        case Type::Double:
          std::snprintf(buf, sizeof buf, "%.17g", e.d);
          out += buf;
          break;
        case Type::Str: out += e.s; break;
        case Type::Bool: out += e.b ? "true" : "false"; break;
      }
      out += "\n";
    }
    return out;
  }

  NetworkConfig network() const {
    NetworkConfig net;
    net.height = int(get_int("height"));
    net.width = int(get_int("width"));
    net.patch = int(get_int("patch"));
    net.dim = int(get_int("dim"));
    net.heads = int(get_int("heads"));
    net.ffn_mult = int(get_int("ffn_mult"));
    net.prop_rows = int(get_int("prop_rows"));
    net.dt_us = get_int("dt_us");
    net.max_range = get_double("max_range");
    net.variant = parse_variant(get_str("variant"));
    return net;
  }

  SceneConfig scene() const {
    SceneConfig sc;
    sc.seed = std::uint64_t(get_int("seed"));
    sc.height = int(get_int("height"));
    sc.width = int(get_int("width"));
    sc.dt_us = get_int("dt_us");
    sc.windows = int(get_int("windows"));
    sc.lidar_period = int(get_int("lidar_period"));
    sc.lidar_rows = int(get_int("lidar_rows"));
    sc.max_range = get_double("max_range");
    sc.objects = int(get_int("objects"));
    sc.speed_min = get_double("speed_min");
    sc.speed_max = get_double("speed_max");
    sc.contrast = get_double("contrast");
    sc.subframes = int(get_int("subframes"));
    return sc;
  }

  struct Entry {
    std::string key;
    Type type;
    std::string help;
    long long i = 0;
    double d = 0;
    std::string s;
    bool b = false;
  };
  const std::vector<Entry>& entries() const { return entries_; }

private:
  void def(const std::string& key, std::string v, std::string help) {
    entries_.push_back({key, Type::Str, std::move(help), 0, 0, std::move(v), false});
    index_[key] = entries_.size() - 1;
  }
  void def_int(const std::string& key, long long v, std::string help) {
    entries_.push_back({key, Type::Int, std::move(help), v, 0, "", false});
    index_[key] = entries_.size() - 1;
  }
  void def_double(const std::string& key, double v, std::string help) {
    entries_.push_back({key, Type::Double, std::move(help), 0, v, "", false});
    index_[key] = entries_.size() - 1;
  }
  void def_bool(const std::string& key, bool v, std::string help) {
    entries_.push_back({key, Type::Bool, std::move(help), 0, 0, "", v});
    index_[key] = entries_.size() - 1;
  }
  Entry& find(const std::string& key) {
    auto it = index_.find(key);
    if (it == index_.end()) throw UsageError("unknown config key: " + key);
    return entries_[it->second];
  }
  const Entry& find(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw UsageError("unknown config key: " + key);
    return entries_[it->second];
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

} // namespace delta
