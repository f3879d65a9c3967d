#include "ossd/cli.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <future>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "ossd/errors.hpp"
#include "ossd/io.hpp"

namespace ossd {
namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << text;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct ScoreArgs {
  std::string embeddings;
  std::string kind;
  std::string model;
  std::string stats;
  int classes = 0;
  double temperature = 1.0;
  double epsilon = 0.05;
  std::string feature_source = "hidden";
  std::string entropy_scope = "all";
};

int cmd_score(const ScoreArgs& a, std::ostream& out) {
  const ScoreKind kind = parse_score_kind(a.kind, a.temperature);
  ScoreOptions opts;
  if (a.feature_source == "raw") {
    opts.feature_source = FeatureSource::Raw;
  } else if (a.feature_source != "hidden") {
    throw ConfigError("--feature-source must be hidden or raw");
  }
  if (a.entropy_scope == "foreground") {
    opts.entropy_foreground_only = true;
  } else if (a.entropy_scope != "all") {
    throw ConfigError("--entropy-scope must be all or foreground");
  }
  if (kind.needs_stats() && a.stats.empty()) throw ConfigError("score kind '" + a.kind + "' requires --stats");
  if (!kind.needs_stats() && !a.stats.empty()) throw ConfigError("--stats only applies to mahalanobis and euclidean");

  const EmbeddingMatrix emb = read_embeddings(a.embeddings);
  const auto rows = emb.row_vectors();

  std::optional<ClassifierParams> net;
  if (!a.model.empty()) net = load_model(a.model);
  const auto width = net ? static_cast<int>(net->num_outputs()) : static_cast<int>(emb.cols);
  int K = a.classes > 0 ? a.classes : (kind.id == ScoreKindId::Iac ? width - 1 : width);

  std::optional<ClassStats> stats;
  if (kind.needs_stats()) {
    const EmbeddingMatrix labeled = read_embeddings(a.stats);
    if (!labeled.labels) throw FormatError("--stats file needs a label column");
    const auto& labels = *labeled.labels;
    if (!net && a.classes <= 0) K = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<Eigen::VectorXd> feats;
    for (const auto& x : labeled.row_vectors()) {
      feats.push_back(net && opts.feature_source == FeatureSource::Hidden ? forward(*net, x).hidden : x);
    }
    stats = fit_class_stats(feats, labels, K, a.epsilon);
  }

  std::vector<double> scores;
  if (net) {
    scores = score_batch(kind, rows, *net, K, stats ? &*stats : nullptr, opts);
  } else {
    for (const auto& r : rows) scores.push_back(score_row(kind, r, K, stats ? &*stats : nullptr));
  }
  std::ostringstream buf;
  buf << "index,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) buf << i << ',' << format_real(scores[i]) << '\n';
  out << buf.str();
  return kExitOk;
}

int cmd_eval(const std::string& id_path, const std::string& ood_path, const std::string& kind, std::ostream& out) {
  const auto id_scores = read_score_file(id_path);
  const auto ood_scores = read_score_file(ood_path);
  const MetricReport r = evaluate_scores(id_scores, ood_scores);
  if (kind.empty()) {
    out << kMetricsHeader << '\n' << metrics_row(r) << '\n';
  } else {
    out << "kind," << kMetricsHeader << '\n' << kind << ',' << metrics_row(r) << '\n';
  }
  return kExitOk;
}

RunSpec resolve_spec(const std::string& config, const std::vector<std::string>& overrides) {
  RunSpec spec = config.empty() ? RunSpec{} : load_config(config);
  for (const auto& o : overrides) apply_override(spec, o);
  spec.scenario.validate();
  spec.train.validate();
  return spec;
}

struct SweepRun {
  Mode mode;
  std::uint64_t seed;
  std::string row;
  std::string error;
};

int cmd_sweep(const std::string& config, const std::vector<std::string>& overrides, const std::string& modes_arg,
              const std::string& seeds_arg, const std::string& out_dir, int jobs, std::ostream& out,
              std::ostream& err) {
  const RunSpec spec = resolve_spec(config, overrides);
  std::vector<Mode> modes;
  for (const auto& m : split_list(modes_arg)) modes.push_back(parse_mode(m));
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(seeds_arg)) {
    const auto v = parse_real(s);
    if (!v || *v < 0 || *v != static_cast<double>(static_cast<std::uint64_t>(*v))) {
      throw ConfigError("--seeds: not a nonnegative integer: '" + s + "'");
    }
    seeds.push_back(static_cast<std::uint64_t>(*v));
  }
  if (modes.empty()) throw ConfigError("--modes: need at least one mode");
  if (seeds.empty()) throw ConfigError("--seeds: need at least one seed");

  std::vector<SweepRun> runs;
  for (Mode m : modes)
    for (std::uint64_t s : seeds) runs.push_back({m, s, {}, {}});

  std::filesystem::create_directories(out_dir);
  auto execute = [&](SweepRun& run) {
    const auto dir = std::filesystem::path(out_dir) / (to_string(run.mode) + "_seed" + std::to_string(run.seed));
    try {
      std::filesystem::create_directories(dir);
      run.row = simulate_to_dir(spec, run.mode, run.seed, dir);
    } catch (const std::exception& e) {
      run.error = e.what();
    }
  };

  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1) {
    for (auto& run : runs) execute(run);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, runs.size()); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) execute(runs[i]);
      });
    }
    for (auto& t : pool) t.join();
  }

  std::ostringstream aggregate;
  std::ostringstream failures;
  bool failed = false;
  aggregate << kSummaryHeader << '\n';
  failures << "mode,seed,error\n";
  for (const auto& run : runs) {
    if (run.error.empty()) {
      aggregate << run.row << '\n';
    } else {
      failed = true;
      aggregate << to_string(run.mode) << ',' << run.seed << ",nan,nan,nan\n";
      std::string msg = run.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      failures << to_string(run.mode) << ',' << run.seed << ',' << msg << '\n';
      err << "run " << to_string(run.mode) << " seed " << run.seed << " failed: " << run.error << '\n';
    }
  }
  write_text(std::filesystem::path(out_dir) / "aggregate.csv", aggregate.str());
  if (failed) write_text(std::filesystem::path(out_dir) / "failures.csv", failures.str());
  out << aggregate.str();
  return failed ? kExitRunFailed : kExitOk;
}

void write_scenario(const RunSpec& spec, std::uint64_t seed, const std::filesystem::path& dir) {
  const Scenario s = generate_scenario(spec.scenario, seed);
  std::filesystem::create_directories(dir);
  auto to_matrix = [&](const std::vector<Instance>& insts, bool with_labels) {
    EmbeddingMatrix m;
    m.rows = insts.size();
    m.cols = static_cast<std::size_t>(spec.scenario.d);
    if (with_labels) m.labels.emplace();
    for (const auto& inst : insts) {
      for (Eigen::Index j = 0; j < inst.features.size(); ++j) m.values.push_back(inst.features[j]);
      if (with_labels) m.labels->push_back(inst.origin.is_id() ? inst.origin.index : -1);
    }
    return m;
  };
  const auto unlabeled = flatten(s.unlabeled);
  write_embeddings_csv(dir / "labeled.csv", to_matrix(flatten(s.labeled), true));
  write_embeddings_csv(dir / "unlabeled.csv", to_matrix(unlabeled, false));
  write_embeddings_csv(dir / "test.csv", to_matrix(s.test, true));
  write_embeddings_csv(dir / "probe.csv", to_matrix(s.probe, true));
  std::ostringstream truth;
  truth << "index,bag,bag_kind,origin,origin_index\n";
  std::size_t idx = 0;
  for (std::size_t b = 0; b < s.unlabeled.size(); ++b) {
    const std::string kind = to_string(bag_kind(s.unlabeled[b]));
    for (const auto& inst : s.unlabeled[b].instances) {
      const char* origin = inst.origin.is_id() ? "id" : (inst.origin.is_ood() ? "ood" : "background");
      truth << idx++ << ',' << b << ',' << kind << ',' << origin << ',' << inst.origin.index << '\n';
    }
  }
  write_text(dir / "unlabeled_truth.csv", truth.str());
}

}  // namespace

std::string metrics_row(const MetricReport& r) {
  return format_real(r.auroc) + ',' + format_real(r.fpr50) + ',' + format_real(r.fpr75) + ',' + format_real(r.fpr95);
}

std::string telemetry_csv(const Telemetry& telemetry) {
  std::ostringstream out;
  out << kTelemetryHeader << '\n';
  for (const auto& c : telemetry.rows) {
    out << c.iteration << ',' << c.n_pseudo_id << ',' << c.n_pseudo_ood << ',' << format_real(c.fp_rate) << ','
        << format_real(c.test_acc) << ',' << format_real(c.ood_auroc) << '\n';
  }
  return out.str();
}

std::string summary_row(Mode mode, std::uint64_t seed, const Telemetry& telemetry) {
  if (telemetry.rows.empty()) throw std::invalid_argument("summary_row: empty telemetry");
  const auto& last = telemetry.rows.back();
  return to_string(mode) + ',' + std::to_string(seed) + ',' + format_real(last.fp_rate) + ',' +
         format_real(last.test_acc) + ',' + format_real(last.ood_auroc);
}

std::string simulate_to_dir(const RunSpec& base, Mode mode, std::uint64_t seed, const std::filesystem::path& out_dir) {
  RunSpec spec = base;
  spec.train.seed = seed;
  const Scenario scenario = generate_scenario(spec.scenario, seed);
  const PipelineResult result = run_pipeline(mode, spec.train, scenario);

  const std::string row = summary_row(mode, seed, result.telemetry);
  write_text(out_dir / "telemetry.csv", telemetry_csv(result.telemetry));
  write_text(out_dir / "summary.csv", std::string(kSummaryHeader) + '\n' + row + '\n');
  write_text(out_dir / "config.txt", dump_config(spec));
  save_model(out_dir / "teacher.ossd", result.ts.teacher);
  if (result.offline_net) {
    save_model(out_dir / "offline_ood.ossd", *result.offline_net);
    const MetricReport r = probe_report(*result.offline_net, spec.scenario.K, scenario.probe, spec.train.score_kind,
                                        result.offline_stats ? &*result.offline_stats : nullptr,
                                        spec.train.score_options());
    write_text(out_dir / "ood_detector.csv", "kind," + std::string(kMetricsHeader) + '\n' +
                                                 to_string(spec.train.score_kind.id) + ',' + metrics_row(r) + '\n');
  }
  return row;
}

int report_exception(std::ostream& err) {
  try {
    throw;
  } catch (const CLI::ParseError& e) {
    err << "ossd: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "ossd: config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "ossd: data format error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const std::invalid_argument& e) {
    err << "ossd: invalid input: " << e.what() << '\n';
    return kExitFormat;
  } catch (const NumericalError& e) {
    err << "ossd: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "ossd: error: " << e.what() << '\n';
    return kExitRunFailed;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Open-set self-training simulator and OOD scoring toolkit", "ossd"};
  app.require_subcommand(1);

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "Score embeddings with an OOD score; emits index,score CSV");
  score_cmd->add_option("--embeddings,-e", score.embeddings, "Embedding file (CSV or OSSD binary)")->required();
  score_cmd->add_option("--kind,-k", score.kind, "msp | iac | energy | entropy | mahalanobis | euclidean")->required();
  score_cmd->add_option("--model,-m", score.model, "Model file; without it rows are probabilities/logits/features");
  score_cmd->add_option("--stats,-s", score.stats, "Labeled CSV used to fit class statistics (distance kinds)");
  score_cmd->add_option("--classes", score.classes, "Number of foreground classes K");
  score_cmd->add_option("--temperature,-T", score.temperature, "Energy temperature");
  score_cmd->add_option("--epsilon", score.epsilon, "Covariance shrinkage");
  score_cmd->add_option("--feature-source", score.feature_source, "hidden | raw (distance kinds with a model)");
  score_cmd->add_option("--entropy-scope", score.entropy_scope, "all | foreground");

  std::string id_path;
  std::string ood_path;
  std::string eval_kind;
  auto* eval_cmd = app.add_subcommand("eval", "AUROC and FPR@TNR{50,75,95} of ID vs OOD score files");
  eval_cmd->add_option("--id", id_path, "ID score file")->required();
  eval_cmd->add_option("--ood", ood_path, "OOD score file")->required();
  eval_cmd->add_option("--kind", eval_kind, "Optional label emitted as a leading kind column");

  std::string config;
  std::vector<std::string> overrides;
  std::string mode_name;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto* sim_cmd = app.add_subcommand("simulate", "Run one self-training pipeline and write telemetry");
  sim_cmd->add_option("--config,-c", config, "key=value config file");
  sim_cmd->add_option("--set", overrides, "key=value override (repeatable)");
  sim_cmd->add_option("--mode", mode_name, "baseline | offline | online")->required();
  sim_cmd->add_option("--seed", seed, "Run seed");
  sim_cmd->add_option("--out,-o", out_dir, "Output directory")->required();

  std::string modes_arg;
  std::string seeds_arg;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  auto* sweep_cmd = app.add_subcommand("sweep", "Run every (mode, seed) pair and aggregate final metrics");
  sweep_cmd->add_option("--config,-c", config, "key=value config file");
  sweep_cmd->add_option("--set", overrides, "key=value override (repeatable)");
  sweep_cmd->add_option("--modes", modes_arg, "Comma-separated modes")->required();
  sweep_cmd->add_option("--seeds", seeds_arg, "Comma-separated seeds")->required();
  sweep_cmd->add_option("--out,-o", out_dir, "Output directory")->required();
  sweep_cmd->add_option("--jobs,-j", jobs, "Concurrent runs");

  auto* gen_cmd = app.add_subcommand("export-scenario", "Write a generated scenario as CSV embeddings");
  gen_cmd->add_option("--config,-c", config, "key=value config file");
  gen_cmd->add_option("--set", overrides, "key=value override (repeatable)");
  gen_cmd->add_option("--seed", seed, "Scenario seed");
  gen_cmd->add_option("--out,-o", out_dir, "Output directory")->required();

  auto* keys_cmd = app.add_subcommand("config-keys", "Print the resolved default configuration");

  std::vector<std::string> argv_storage{"ossd"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "ossd: " << e.what() << '\n';
    if (e.get_exit_code() == 0) return kExitOk;
    return kExitUsage;
  }

  try {
    if (*score_cmd) return cmd_score(score, out);
    if (*eval_cmd) return cmd_eval(id_path, ood_path, eval_kind, out);
    if (*sim_cmd) {
      const Mode mode = parse_mode(mode_name);
      const RunSpec spec = resolve_spec(config, overrides);
      std::filesystem::create_directories(out_dir);
      out << kSummaryHeader << '\n' << simulate_to_dir(spec, mode, seed, out_dir) << '\n';
      return kExitOk;
    }
    if (*sweep_cmd) return cmd_sweep(config, overrides, modes_arg, seeds_arg, out_dir, jobs, out, err);
    if (*gen_cmd) {
      write_scenario(resolve_spec(config, overrides), seed, out_dir);
      return kExitOk;
    }
    if (*keys_cmd) {
      out << dump_config(RunSpec{});
      return kExitOk;
    }
  } catch (...) {
    return report_exception(err);
  }
  return kExitUsage;
}

}  // namespace ossd
