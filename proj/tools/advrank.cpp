#include <exception>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "advrank/experiment.hpp"

namespace {

int dispatch(const std::string& command, const std::string& config_path,
             const std::string& compare_path, bool resume) {
  nlohmann::json cfg = advrank::cfgdetail::load_json_file(config_path);
  if (command == "generate") {
    auto out = advrank::run_generate(advrank::GenerateConfig::parse(cfg));
    std::cout << "wrote " << out.dataset_path << "\nwrote " << out.manifest_path << "\n";
  } else if (command == "train") {
    auto out = advrank::run_train(advrank::TrainCommandConfig::parse(cfg), resume);
    std::cout << "wrote " << out.checkpoint_path << "\nwrote " << out.log_path << "\n"
              << "best epoch " << out.outcome.best_epoch << ", dev MRR " << out.outcome.best_dev_mrr
              << "\n";
  } else if (command == "eval") {
    auto out = advrank::run_eval(advrank::EvalCommandConfig::parse(cfg), compare_path);
    std::cout << "wrote " << out.report_json_path << "\nwrote " << out.report_text_path << "\n";
    if (!out.comparison_json_path.empty()) {
      std::cout << "wrote " << out.comparison_json_path << "\nwrote " << out.comparison_text_path
                << "\n";
    }
  } else {
    auto out = advrank::run_experiment(advrank::ExperimentConfig::parse(cfg));
    std::cout << "wrote " << out.report_json_path << "\nwrote " << out.report_text_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial cross-domain regularization for neural ranking"};
  app.require_subcommand(1);

  struct SubArgs {
    std::string config;
    std::string compare;
    bool resume = false;
  };
  std::map<std::string, SubArgs> args;
  for (const char* name : {"generate", "train", "eval", "experiment"}) {
    CLI::App* sub = app.add_subcommand(name);
    SubArgs& a = args[name];
    sub->add_option("--config", a.config, "JSON config file")->required();
    if (std::string(name) == "eval") {
      sub->add_option("--compare", a.compare, "baseline eval report to compare against");
    }
    if (std::string(name) == "train") {
      sub->add_flag("--resume", a.resume, "continue from the existing checkpoint");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "advrank: " << e.what() << "\n";
    return 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const SubArgs& a = args[command];
  try {
    return dispatch(command, a.config, a.compare, a.resume);
  } catch (const advrank::ConfigError& e) {
    std::cerr << "advrank: config error: " << e.what() << "\n";
    return 1;
  } catch (const advrank::DataError& e) {
    std::cerr << "advrank: data error: " << e.what() << "\n";
    return 2;
  } catch (const advrank::ShapeError& e) {
    std::cerr << "advrank: numeric error: " << e.what() << "\n";
    return 3;
  } catch (const advrank::NumericError& e) {
    std::cerr << "advrank: numeric error: " << e.what() << "\n";
    return 3;
  } catch (const advrank::Error& e) {
    std::cerr << "advrank: error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "advrank: unexpected error: " << e.what() << "\n";
    return 1;
  }
}
