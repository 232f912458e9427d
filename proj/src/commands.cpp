#include "metacl/commands.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "metacl/checkpoint.hpp"
#include "metacl/config.hpp"
#include "metacl/csv.hpp"
#include "metacl/eval.hpp"
#include "metacl/rng.hpp"
#include "metacl/sweep.hpp"

namespace metacl {

namespace fs = std::filesystem;

namespace {

std::ostream& err_stream(const CommandOptions& opts) { return opts.err ? *opts.err : std::cerr; }

RunConfig resolve_config(const CommandOptions& opts) {
  RunConfig cfg = opts.config ? load_run_config(*opts.config) : parse_run_config(default_config_text());
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out) cfg.out_dir = opts.out->string();
  if (!opts.lrs.empty()) cfg.sweep_lrs = opts.lrs;
  validate_run_config(cfg);
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec || !fs::is_directory(cfg.out_dir))
    throw ConfigError("cannot create output directory " + cfg.out_dir);
  return cfg;
}

std::ofstream open_out(const RunConfig& cfg, const std::string& name) {
  const fs::path p = fs::path(cfg.out_dir) / name;
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  return out;
}

Checkpoint make_checkpoint(const MetaState& state, const RunConfig& cfg, const MetaConfig& meta,
                           Objective objective) {
  Checkpoint c{state.params, {}};
  c.metadata["objective"] = std::string(objective_name(objective));
  c.metadata["partition"] = std::string(partition_mode_name(meta.partition));
  c.metadata["inner_lr"] = format_double(meta.inner_lr);
  c.metadata["meta_lr"] = format_double(meta.meta_lr);
  c.metadata["iteration"] = std::to_string(state.iteration);
  c.metadata["seed"] = std::to_string(cfg.seed);
  return c;
}

MetaState initial_state(const RunConfig& cfg) { return make_meta_state(init_params(model_config(cfg), init_seed(cfg))); }

MetaState train_logged(const RunConfig& cfg, const TaskDistribution& dist, const MetaConfig& meta,
                       Objective objective, const std::string& tag, bool periodic) {
  auto log = open_out(cfg, "run_log_" + tag + ".csv");
  write_run_log_header(log);
  TrainOptions topt;
  topt.log = &log;
  if (periodic && cfg.checkpoint_every > 0) {
    topt.checkpoint_every = cfg.checkpoint_every;
    topt.on_checkpoint = [&](const MetaState& s) {
      save_checkpoint(fs::path(cfg.out_dir) / (tag + "_iter" + std::to_string(s.iteration) + ".ckpt.json"),
                      make_checkpoint(s, cfg, meta, objective));
    };
  }
  return meta_train(initial_state(cfg), dist, meta, objective, meta.iterations, topt);
}

template <class F>
int guarded(const CommandOptions& opts, F&& body) {
  auto& err = err_stream(opts);
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DatasetError& e) {
    err << "dataset error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IncompatibleError& e) {
    err << "incompatible checkpoints: " << e.what() << '\n';
    return kExitIncompatible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUnexpected;
  }
}

}  // namespace

int cmd_meta_train(const CommandOptions& opts) {
  return guarded(opts, [&] {
    const RunConfig cfg = resolve_config(opts);
    const Objective objective = opts.objective.value_or(Objective::Mrcl);
    const Benchmark bench = make_benchmark(cfg);
    const MetaConfig meta = meta_config(cfg, objective);
    const std::string tag(objective_name(objective));
    const MetaState final_state = train_logged(cfg, bench.meta_train, meta, objective, tag, true);
    save_checkpoint(fs::path(cfg.out_dir) / (tag + "_final.ckpt.json"),
                    make_checkpoint(final_state, cfg, meta, objective));
  });
}

int cmd_eval(const CommandOptions& opts) {
  return guarded(opts, [&] {
    const RunConfig cfg = resolve_config(opts);
    if (opts.checkpoints.empty()) throw ConfigError("eval needs at least one --checkpoint");
    std::vector<NamedEncoder> encoders;
    std::set<std::string> names;
    for (const auto& path : opts.checkpoints) {
      Checkpoint c = load_checkpoint(path);
      std::string name = c.metadata.count("objective") ? c.metadata["objective"] : path.stem().string();
      if (!names.insert(name).second) name = path.filename().string();
      names.insert(name);
      double lr = EvalProtocol{}.head_lr;
      if (cfg.eval_head_lr) lr = *cfg.eval_head_lr;
      else if (c.metadata.count("inner_lr")) lr = std::stod(c.metadata["inner_lr"]);
      if (!encoders.empty() && !structurally_compatible(encoders.front().params, c.params))
        throw IncompatibleError(path.string() + " does not match " + opts.checkpoints.front().string());
      encoders.push_back({name, std::move(c.params), lr});
    }
    const Benchmark bench = make_benchmark(cfg);
    if (encoders.front().params.config() && !(*encoders.front().params.config() == model_config(cfg)))
      throw IncompatibleError("checkpoint architecture differs from the configured model");
    const Comparison cmp = compare_objectives(encoders, bench.meta_test, eval_protocol(cfg));

    const std::pair<const char*, EvalCurve EncoderReport::*> panels[] = {
        {"online_train", &EncoderReport::online_train},
        {"online_test", &EncoderReport::online_test},
        {"iid_train", &EncoderReport::iid_train},
        {"iid_test", &EncoderReport::iid_test}};
    for (const auto& [panel, member] : panels) {
      auto out = open_out(cfg, std::string(panel) + ".csv");
      write_curve_csv_header(out);
      for (const auto& r : cmp.reports) write_curve_rows(out, r.name, panel, r.*member);
    }
    auto summary = open_out(cfg, "summary.csv");
    write_summary_csv(summary, cmp);
  });
}

int cmd_ablation(const CommandOptions& opts) {
  return guarded(opts, [&] {
    const RunConfig cfg = resolve_config(opts);
    const Benchmark bench = make_benchmark(cfg);
    MetaConfig enc_only = meta_config(cfg, Objective::Mrcl);
    enc_only.partition = PartitionMode::EncoderOnly;
    MetaConfig full_init = enc_only;
    full_init.partition = PartitionMode::FullInit;

    const MetaState a = train_logged(cfg, bench.meta_train, enc_only, Objective::Mrcl, "ablation_encoder_only", false);
    const MetaState b = train_logged(cfg, bench.meta_train, full_init, Objective::Mrcl, "ablation_full_init", false);

    EvalProtocol protocol = eval_protocol(cfg);
    if (!cfg.eval_head_lr) protocol.head_lr = enc_only.inner_lr;
    struct Variant {
      const char* name;
      const MetaState* state;
      PartitionMode partition;
      bool update_encoder;
    };
    const Variant variants[] = {{"encoder_only", &a, PartitionMode::EncoderOnly, false},
                                {"full_init_updated_at_test", &b, PartitionMode::FullInit, true},
                                {"full_init_frozen_at_test", &b, PartitionMode::FullInit, false}};

    auto curves = open_out(cfg, "ablation.csv");
    write_curve_csv_header(curves);
    auto summary = open_out(cfg, "ablation_summary.csv");
    summary << "variant,partition,encoder_updated_at_test,final_train_acc,ci_halfwidth,encoder_changed\n";
    for (const auto& v : variants) {
      const auto r = evaluate_online(v.state->params, bench.meta_test, protocol,
                                     {protocol.test_samples_per_class, v.update_encoder});
      write_curve_rows(curves, v.name, "online_train", r.train);
      std::vector<ParamEntry> enc;
      for (const auto& e : v.state->params.entries())
        if (e.partition == Partition::Encoder) enc.push_back(e);
      const std::uint64_t before = ParamSet(std::move(enc)).checksum();
      bool changed = false;
      for (auto c : r.encoder_checksums) changed = changed || c != before;
      summary << v.name << ',' << partition_mode_name(v.partition) << ',' << (v.update_encoder ? 1 : 0) << ','
              << format_double(r.train.mean.back()) << ',' << format_double(r.train.ci_halfwidth.back()) << ','
              << (changed ? 1 : 0) << '\n';
    }
  });
}

int cmd_sweep(const CommandOptions& opts) {
  return guarded(opts, [&] {
    const RunConfig cfg = resolve_config(opts);
    const Objective objective = opts.objective.value_or(Objective::Mrcl);
    const Benchmark bench = make_benchmark(cfg);
    MetaConfig meta = meta_config(cfg, objective);
    meta.iterations = cfg.sweep_iterations;
    EvalProtocol protocol = eval_protocol(cfg);
    protocol.seed = derive_seed(cfg.seed, "sweep");
    protocol.tasks = cfg.sweep_tasks;
    const auto lrs = cfg.sweep_lrs.empty() ? default_lr_grid() : cfg.sweep_lrs;
    const SweepResult result =
        inner_lr_sweep(initial_state(cfg), bench.meta_train, bench.meta_test, meta, objective, lrs, protocol);
    const std::string tag(objective_name(objective));
    auto out = open_out(cfg, "sweep_" + tag + ".csv");
    out << "inner_lr,final_train_acc,final_test_acc,final_outer_loss\n";
    for (const auto& e : result.entries)
      out << format_double(e.inner_lr) << ',' << format_double(e.final_train_acc) << ','
          << format_double(e.final_test_acc) << ',' << format_double(e.final_outer_loss) << '\n';
    MetaConfig best = meta;
    best.inner_lr = result.best_lr;
    save_checkpoint(fs::path(cfg.out_dir) / ("sweep_" + tag + "_best.ckpt.json"),
                    make_checkpoint(result.entries.front().state, cfg, best, objective));
  });
}

int run_command(const std::string& name, const CommandOptions& opts) {
  if (name == "train") return cmd_meta_train(opts);
  if (name == "eval") return cmd_eval(opts);
  if (name == "ablation") return cmd_ablation(opts);
  if (name == "sweep") return cmd_sweep(opts);
  err_stream(opts) << "unknown command '" << name << "'\n";
  return kExitConfig;
}

}  // namespace metacl
