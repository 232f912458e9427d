// metacl: meta-train, evaluate, ablate and sweep continual-learning representations.

#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "metacl/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Meta-learning representations for continual learning"};
  app.require_subcommand(1);

  metacl::CommandOptions opts;
  std::string config, out, objective;
  std::uint64_t seed = 0;
  std::vector<std::string> checkpoints;
  std::vector<double> lrs;

  const std::map<std::string, std::string> help = {
      {"train", "Meta-train one objective and write checkpoints plus a run log"},
      {"eval", "Compare checkpoints under the online and IID protocols"},
      {"ablation", "Train and compare the encoder-vs-initialization variants"},
      {"sweep", "Sweep the inner learning rate"}};
  for (const auto& [name, text] : help) {
    auto* sub = app.add_subcommand(name, text);
    sub->add_option("--config", config, "Run config file (default: built-in desk preset)");
    sub->add_option("--out", out, "Output directory (overrides out_dir)");
    sub->add_option("--seed", seed, "Root seed (overrides seed)");
    if (name == "train" || name == "sweep")
      sub->add_option("--objective", objective, "maml | mrcl | mrcl-truncated")
          ->check(CLI::IsMember({"maml", "mrcl", "mrcl-truncated"}));
    if (name == "eval") sub->add_option("--checkpoint", checkpoints, "Checkpoint files to compare")->required();
    if (name == "sweep") sub->add_option("--lrs", lrs, "Candidate inner learning rates");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : metacl::kExitConfig;
  }

  const auto& sub = *app.get_subcommands().front();
  if (!config.empty()) opts.config = config;
  if (!out.empty()) opts.out = out;
  if (sub.count("--seed")) opts.seed = seed;
  if (!objective.empty()) opts.objective = metacl::parse_objective(objective);
  for (const auto& c : checkpoints) opts.checkpoints.emplace_back(c);
  opts.lrs = lrs;
  return metacl::run_command(sub.get_name(), opts);
}
