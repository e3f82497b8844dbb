#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "delta/pipeline.hpp"

namespace {

struct PendingConfig {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides; // flag > file > default
};

void add_schema_options(CLI::App* cmd, PendingConfig& pending) {
  cmd->add_option("--config", pending.config_path, "config file (key = value lines, # comments)");
  delta::RunConfig schema;
  for (const auto& entry : schema.entries()) {
    std::string flag = "--" + entry.key;
    for (auto& ch : flag)
      if (ch == '_') ch = '-';
    const std::string key = entry.key;
    if (entry.type == delta::RunConfig::Type::Bool) {
      cmd->add_flag_function(
          flag,
          [&pending, key](std::int64_t count) {
            if (count > 0) pending.overrides.emplace_back(key, "true");
          },
          entry.help);
    } else {
      cmd->add_option_function<std::string>(
             flag,
             [&pending, key](const std::string& value) { pending.overrides.emplace_back(key, value); },
             entry.help)
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }
}

delta::RunConfig resolve(const PendingConfig& pending) {
  delta::RunConfig cfg;
  if (!pending.config_path.empty()) cfg.load_file(pending.config_path);
  for (const auto& [key, value] : pending.overrides) cfg.set(key, value);
  return cfg;
}

void print_metrics(const std::string& label, const delta::MetricReport& report) {
  std::printf("%s\n", label.c_str());
  std::printf("  %8s %10s %8s %8s %8s %6s %6s %6s %9s\n", "cutoff", "mean", "absrel", "rms",
              "rmslog", "d1", "d2", "d3", "pixels");
  for (const auto& c : report.cutoffs) {
    if (!c.has_metrics) {
      std::printf("  %7.6gm %10s %8s %8s %8s %6s %6s %6s %9zu\n", c.cutoff, "-", "-", "-", "-", "-",
                  "-", "-", c.count);
      continue;
    }
    std::printf("  %7.6gm %9.4fm %8.4f %8.4f %8.4f %6.3f %6.3f %6.3f %9zu\n", c.cutoff, c.mean,
                c.absrel, c.rms, c.rmslog, c.d1, c.d2, c.d3, c.count);
  }
}

int run_eval(const delta::RunConfig& cfg) {
  namespace fs = std::filesystem;
  const std::string dataset = cfg.get_str("dataset");
  const std::string out = cfg.get_str("out");
  if (dataset.empty()) throw delta::UsageError("eval needs --dataset");
  if (out.empty()) throw delta::UsageError("eval needs --out");
  delta::NetworkConfig net;
  auto store = delta::load_network(cfg, net);
  auto result = delta::evaluate(net, store, dataset, int(cfg.get_int("warmup")));
  fs::create_directories(out);
  delta::wire::write_file(out + "/metrics.csv", delta::metrics_csv(result.model));
  delta::wire::write_file(out + "/baseline_metrics.csv", delta::metrics_csv(result.baseline));
  delta::wire::write_file(out + "/run_config.txt", cfg.echo());
  std::printf("scored %zu windows\n", result.windows_scored);
  print_metrics("network", result.model);
  print_metrics("nearest-neighbor LiDAR baseline", result.baseline);
  return 0;
}

int run_ablate(const delta::RunConfig& cfg) {
  namespace fs = std::filesystem;
  const std::string out = cfg.get_str("out");
  if (out.empty()) throw delta::UsageError("ablate needs --out");
  if (cfg.get_str("dataset").empty()) throw delta::UsageError("ablate needs --dataset");
  fs::create_directories(out);
  const std::string eval_ds =
      cfg.get_str("eval_dataset").empty() ? cfg.get_str("dataset") : cfg.get_str("eval_dataset");
  std::string csv = "variant,cutoff_m,mean,absrel,rms,rmslog,d1,d2,d3,count\n";
  auto append_rows = [&](const std::string& name, const delta::MetricReport& report) {
    const std::string body = delta::metrics_csv(report);
    const auto first_line = body.find('\n') + 1;
    for (std::size_t pos = first_line; pos < body.size();) {
      const auto end = body.find('\n', pos);
      csv += name + "," + body.substr(pos, end - pos) + "\n";
      pos = end + 1;
    }
  };
  bool baseline_written = false;
  for (delta::Variant v :
       {delta::Variant::FULL, delta::Variant::NPM, delta::Variant::NCM, delta::Variant::NCA,
        delta::Variant::NL, delta::Variant::NE, delta::Variant::NEH}) {
    delta::RunConfig vcfg = cfg;
    vcfg.set("variant", delta::variant_name(v));
    vcfg.set("out", out + "/" + delta::variant_name(v));
    std::printf("ablate: training %s...\n", delta::variant_name(v));
    delta::ParamStore<float> store;
    auto train_result = delta::train_run(vcfg, store);
    delta::NetworkConfig net = vcfg.network();
    auto result = delta::evaluate(net, store, eval_ds, int(cfg.get_int("warmup")));
    if (!baseline_written) {
      append_rows("baseline", result.baseline);
      baseline_written = true;
    }
    append_rows(delta::variant_name(v), result.model);
    std::printf("ablate: %s final loss %.6g over %ld steps\n", delta::variant_name(v),
                train_result.final_loss, train_result.steps);
  }
  delta::wire::write_file(out + "/ablate.csv", csv);
  delta::wire::write_file(out + "/run_config.txt", cfg.echo());
  std::printf("wrote %s/ablate.csv\n", out.c_str());
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale LiDAR + event-camera depth densification"};
  app.require_subcommand(1);

  PendingConfig pending;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  CLI::App* train = app.add_subcommand("train", "train a network on a dataset");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint and the baseline");
  CLI::App* infer = app.add_subcommand("infer", "write depth predictions for one sequence");
  CLI::App* ablate = app.add_subcommand("ablate", "train and compare all variants");
  for (CLI::App* cmd : {gen, train, eval, infer, ablate}) add_schema_options(cmd, pending);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const delta::RunConfig cfg = resolve(pending);
    if (gen->parsed()) {
      delta::gen_dataset(cfg);
      std::printf("wrote %lld sequences to %s\n", cfg.get_int("sequences"),
                  cfg.get_str("out").c_str());
      return 0;
    }
    if (train->parsed()) {
      if (cfg.get_str("out").empty()) throw delta::UsageError("train needs --out");
      delta::ParamStore<float> store;
      auto result = delta::train_run(cfg, store);
      std::printf("trained %ld steps: loss %.6g -> %.6g, final lr %.3g\n", result.steps,
                  result.first_loss, result.final_loss, result.final_lr);
      std::printf("checkpoint: %s (%zu parameters)\n", result.checkpoint_path.c_str(),
                  delta::count_parameters(store));
      return 0;
    }
    if (eval->parsed()) return run_eval(cfg);
    if (infer->parsed()) {
      delta::infer_run(cfg);
      std::printf("wrote predictions to %s\n", cfg.get_str("out").c_str());
      return 0;
    }
    if (ablate->parsed()) return run_ablate(cfg);
    throw delta::UsageError("no subcommand");
  } catch (const delta::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
