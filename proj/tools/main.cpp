#include <cstdlib>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "commands.hpp"

namespace {

using namespace camil;
using namespace camil::cli;

using Command = int (*)(const RunConfig&, std::ostream&);

struct Subcommand {
  const char* name;
  const char* help;
  Command run;
};

constexpr Subcommand kCommands[] = {
    {"synth", "Generate a synthetic slide dataset", cmd_synth},
    {"pretrain", "Contrastive pretraining of the tile encoder", cmd_pretrain},
    {"train", "Cross-validated training of one variant", cmd_train},
    {"eval", "Evaluate a checkpoint on a dataset", cmd_eval},
    {"heatmap", "Attention heatmaps as PGM images", cmd_heatmap},
    {"ablate", "Cross-validate all five variants on identical folds", cmd_ablate},
    {"gradcheck", "Analytic versus numerical gradients for every variant", cmd_gradcheck},
};

std::uint64_t env_seed(const char* text) {
  const std::string s(text);
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used, 10);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || s.front() == '-') throw UsageError("CAMIL_SEED: not an integer: '" + s + "'");
  return v;
}

int run(int argc, char** argv) {
  CLI::App app{"Context-aware multiple-instance learning on synthetic slides"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  const std::vector<Field>& fs = fields();
  std::vector<std::string> raw(fs.size());
  std::vector<bool> flag_set(fs.size(), false);
  std::string config_path;
  std::vector<std::pair<CLI::App*, Command>> subs;
  std::vector<std::vector<CLI::Option*>> options;

  for (const Subcommand& c : kCommands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "JSON config file (keys are the long flag names)");
    std::vector<CLI::Option*> opts;
    for (std::size_t i = 0; i < fs.size(); ++i) {
      const std::string name = "--" + fs[i].key;
      if (fs[i].is_flag) {
        opts.push_back(sub->add_flag_callback(name, [&flag_set, i] { flag_set[i] = true; }, fs[i].help));
      } else {
        opts.push_back(sub->add_option(name, raw[i], fs[i].help));
      }
    }
    subs.emplace_back(sub, c.run);
    options.push_back(std::move(opts));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  for (std::size_t s = 0; s < subs.size(); ++s) {
    if (!subs[s].first->parsed()) continue;
    RunConfig cfg;
    cfg.threads = std::max(1u, std::thread::hardware_concurrency());
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    if (const char* env = std::getenv("CAMIL_SEED")) cfg.seed = env_seed(env);
    for (std::size_t i = 0; i < fs.size(); ++i) {
      if (options[s][i]->count() == 0) continue;
      fs[i].from_string(cfg, fs[i].is_flag ? (flag_set[i] ? "true" : "false") : raw[i]);
    }
    cfg.propagate_seed();
    return subs[s].second(cfg, std::cout);
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const camil::InvariantError& e) {
    std::cerr << fmt::format("invariant violated [{}]: {}\n", e.invariant(), e.what());
    return kExitInvariant;
  } catch (const std::invalid_argument& e) {  // UsageError, ArgumentError, ShapeError
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const camil::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const camil::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const camil::VersionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const camil::UndefinedMetricError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInvariant;
  }
}
