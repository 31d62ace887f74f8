#pragma once

// Command-line front end. Settings resolve in the order
// defaults -> preset -> config file -> --set / named flags.

#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "lode/cli/commands.hpp"

namespace lode::cli {

struct CommandFlags {
  std::string preset;
  std::string config_file;
  std::string out_dir;
  std::vector<std::string> sets;
  bool print_config = false;
  /// Named flags in the order they map onto config keys.
  std::vector<std::pair<std::string, std::optional<std::string>>> named;

  std::optional<std::string>& flag(const std::string& key) {
    named.emplace_back(key, std::nullopt);
    return named.back().second;
  }
};

inline Config resolve_config(const CommandFlags& f, const std::string& default_preset) {
  Config c = Config::defaults();
  const std::string preset = f.preset.empty() ? default_preset : f.preset;
  if (!preset.empty() && preset != "none") apply_preset(c, preset);
  if (!f.config_file.empty()) c.merge_file(f.config_file);
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw SpecError("--set expects key=value, got '" + s + "'");
    c.set(detail::trim(s.substr(0, eq)), s.substr(eq + 1), "--set");
  }
  for (const auto& [key, value] : f.named)
    if (value) c.set(key, *value, "--" + key);
  return c;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Latent ODE-RNN / ODE-LSTM experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  // Global flags are accepted before or after the command name.
  CommandFlags global;
  global.named.reserve(1);
  app.add_option("--preset", global.preset,
                 "Preset: desk-spiral, desk-timeseries, paper-spiral, paper-climate, paper-djia, lstm-carousel or none");
  app.add_option("--config", global.config_file, "Config file with key = value lines");
  app.add_option("--out-dir", global.out_dir, "Run directory (default $LODE_OUT_DIR/<command> or runs/<command>)");
  app.add_option("--set", global.sets, "Override any config key: key=value (repeatable)");
  app.add_flag("--print-config", global.print_config, "Print the resolved config and exit");
  app.add_option("--seed", global.flag("seed"), "Random seed");

  struct Sub {
    std::string name;
    std::string default_preset;
    CLI::App* app = nullptr;
    std::vector<std::pair<std::string, std::optional<std::string>>> named;
    int (*run)(const RunContext&) = nullptr;
  };
  // Reserved up front: CLI11 keeps pointers into each entry's flag slots.
  std::vector<Sub> subs;
  subs.reserve(4);
  subs.push_back({"spiral", "desk-spiral", nullptr, {}, cmd_spiral});
  subs.push_back({"timeseries", "desk-timeseries", nullptr, {}, cmd_timeseries});
  subs.push_back({"gradcheck", "", nullptr, {}, cmd_gradcheck});
  subs.push_back({"gradflow", "", nullptr, {}, cmd_gradflow});
  const char* help[] = {"Train the three variants on synthetic spirals",
                        "Windowed forecasting on a daily CSV series",
                        "Finite-difference check of every backward pass",
                        "Jacobian-norm sweep over recurrent cells"};
  for (std::size_t i = 0; i < subs.size(); ++i) {
    Sub& s = subs[i];
    s.app = app.add_subcommand(s.name, help[i]);
    s.app->fallthrough();
    s.named.reserve(16);
    auto flag = [&s](const std::string& key) -> std::optional<std::string>& {
      s.named.emplace_back(key, std::nullopt);
      return s.named.back().second;
    };
    if (s.name == "spiral" || s.name == "timeseries") {
      s.app->add_option("--variants", flag("variants"), "Comma list of variants or 'all'");
      s.app->add_option("--epochs", flag("epochs"), "Training epochs");
      s.app->add_option("--threads", flag("threads"), "Worker threads");
    }
    if (s.name == "timeseries") {
      s.app->add_option("--csv", flag("csv"), "Training CSV (or the whole series)");
      s.app->add_option("--csv-test", flag("csv_test"), "Separate test CSV");
      s.app->add_option("--schema", flag("schema"), "climate or stock");
      s.app->add_option("--ticker", flag("ticker"), "Ticker to keep (stock schema)");
      s.app->add_option("--repeats", flag("repeats"), "Repeats per window and variant");
      s.app->add_option("--windows", flag("windows"), "Comma list of seen/predict pairs");
    }
    if (s.name == "gradcheck") {
      s.app->add_option("--model", flag("gradcheck_model"), "all, cells, latent-ode-rnn, latent-ode-lstm");
      s.app->add_option("--tolerance", flag("tolerance"), "Maximum relative error");
    }
    if (s.name == "gradflow") {
      s.app->add_option("--cells", flag("cells"), "Comma list of rnn, lstm, ode-rnn, ode-lstm");
      s.app->add_option("--scales", flag("scales"), "Comma list of spectral radii");
      s.app->add_option("--lengths", flag("lengths"), "Comma list of chain lengths");
      s.app->add_flag("--carousel", flag("carousel"), "Saturate LSTM gates");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  for (Sub& s : subs) {
    if (!s.app->parsed()) continue;
    RunContext ctx;
    ctx.out = &out;
    ctx.err = &err;
    try {
      CommandFlags f = global;
      f.named.insert(f.named.end(), s.named.begin(), s.named.end());
      ctx.config = resolve_config(f, s.default_preset);
      if (f.print_config) {
        out << ctx.config.dump();
        return kExitOk;
      }
      ctx.run_dir = resolve_run_dir(f.out_dir, s.name);
      return s.run(ctx);
    } catch (const SpecError& e) {
      err << "error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const SchemaError& e) {
      err << "error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const TrainingDiverged& e) {
      err << "error: " << e.what() << '\n';
      return kExitDiverged;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
  }
  return kExitUsage;
}

}  // namespace lode::cli
