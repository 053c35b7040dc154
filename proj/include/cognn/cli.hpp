#pragma once

// Command-line surface: generate, train, eval, trace, bench.
// Exit codes: 0 success, 1 invalid input (flags, configs, files that parse
// badly), 2 filesystem failure. Results go to files; stdout gets one summary
// line per command.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cognn/checkpoint.hpp"
#include "cognn/config.hpp"
#include "cognn/datagen.hpp"
#include "cognn/harness.hpp"

namespace cognn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitIo = 2;

namespace detail {

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<std::size_t> parse_sizes(const std::string& list) {
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    item = cognn::detail::trim(item);
    try {
      out.push_back(cognn::detail::parse_number<std::size_t>("--sizes", item));
    } catch (const ConfigError&) {
      throw ValidationError("--sizes: '" + item + "' is not a non-negative integer");
    }
    if (out.back() == 0) throw ValidationError("--sizes: edge counts must be >= 1");
  }
  if (out.size() < 2) throw ValidationError("--sizes: need at least two comma-separated edge counts");
  return out;
}

inline std::string fmt(double x) {
  std::ostringstream s;
  s.precision(6);
  s << x;
  return s.str();
}

inline Dataset load_data(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("--data: no such directory " + dir.string());
  return load_dataset_dir(dir);
}

inline MetricEstimate evaluate_split(const CoGnnModel& m, const std::vector<Sample>& samples, std::size_t seeds) {
  return m.config.task == TaskKind::node_regression ? evaluate_mae(m, samples, seeds)
                                                    : evaluate_accuracy(m, samples, seeds);
}

inline const char* metric_name(const CoGnnModel& m) {
  return m.config.task == TaskKind::node_regression ? "mae" : "accuracy";
}

}  // namespace detail

/// Parses argv and runs one subcommand.
inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  CLI::App app{"Cooperative graph neural networks: data, training, evaluation, tracing"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string dataset, out_dir, config_path, data_dir, model_path, split_name = "test", out_file, sizes;
  std::uint64_t seed = 0;
  std::size_t graph_index = 0, eval_seeds = 10, reps = 5;

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset as JSON lines");
  gen->add_option("--dataset", dataset, "root-neighbors or cycles")
      ->required()
      ->check(CLI::IsMember({"root-neighbors", "cycles"}));
  gen->add_option("--seed", seed, "Generator seed (cycles are deterministic)")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train from a config file");
  tr->add_option("--config", config_path, "Run config (key = value lines)")->required();
  tr->add_option("--data", data_dir, "Dataset directory from `generate`")->required();
  tr->add_option("--out", out_dir, "Output directory for metrics.csv, model.ckpt, config.txt")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  ev->add_option("--model", model_path, "Checkpoint file")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--split", split_name, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  ev->add_option("--seeds", eval_seeds, "Fixed evaluation seeds (default: as trained, else 10)")->check(CLI::PositiveNumber);
  ev->add_option("--out", out_file, "Also write the result as JSON to this file");

  auto* trc = app.add_subcommand("trace", "Record actions and kept edges for one graph");
  trc->add_option("--model", model_path, "Checkpoint file")->required();
  trc->add_option("--graph-index", graph_index, "Index into the split")->required();
  trc->add_option("--out", out_file, "Trace CSV; kept edges go to <out>.edges.csv")->required();
  trc->add_option("--data", data_dir, "Dataset directory (default: the one the model was trained on)");
  trc->add_option("--split", split_name, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  trc->add_option("--seed", seed, "Gumbel noise seed");

  auto* bn = app.add_subcommand("bench", "Time one layer against edge count");
  bn->add_option("--config", config_path, "Run config giving the architecture")->required();
  bn->add_option("--sizes", sizes, "Comma-separated edge counts, e.g. 100,1000,10000")->required();
  bn->add_option("--out", out_file, "Bench CSV (default bench.csv)");
  bn->add_option("--reps", reps, "Timed repetitions per size")->check(CLI::PositiveNumber);
  bn->add_option("--seed", seed, "Graph and weight seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }

  try {
    if (gen->parsed()) {
      const fs::path dir = out_dir;
      detail::ensure_dir(dir);
      Dataset ds = dataset == "cycles" ? generate_cycles() : generate_root_neighbors(seed);
      const auto files = save_dataset_dir(dir, ds);
      const std::size_t n = ds.train.size() + ds.valid.size() + ds.test.size();
      out << "generate: " << dataset << " " << n << " graphs -> " << dir.string() << "\n";
    } else if (tr->parsed()) {
      if (!fs::exists(config_path)) throw IoError("--config: no such file " + config_path);
      RunConfig run = parse_config(config_path);
      Dataset ds = detail::load_data(data_dir);
      const fs::path dir = out_dir;
      detail::ensure_dir(dir);
      detail::write_text(dir / "config.txt", config_to_text(run));
      TrainResult res = train(run, ds);
      res.log.write_csv(dir / "metrics.csv", res.model.env.size());
      Metadata meta{{"data_dir", fs::absolute(data_dir).lexically_normal().string()},
                    {"task", to_string(run.task)},
                    {"best_epoch", std::to_string(res.best_epoch)},
                    {"eval_seeds", std::to_string(run.eval_seeds)}};
      save_checkpoint(dir / "model.ckpt", res.model, meta);
      std::string line = std::string("train: best_epoch=") + std::to_string(res.best_epoch) + " val_" +
                         detail::metric_name(res.model) + "=" + detail::fmt(res.best_val);
      if (!ds.test.empty()) {
        line += std::string(" test_") + detail::metric_name(res.model) + "=" +
                detail::fmt(detail::evaluate_split(res.model, ds.test, run.eval_seeds).mean);
      }
      out << line << " -> " << dir.string() << "\n";
    } else if (ev->parsed()) {
      Checkpoint ck = load_checkpoint(model_path);
      Dataset ds = detail::load_data(data_dir);
      const auto& samples = ds.split(split_from_string(split_name));
      if (ev->count("--seeds") == 0 && ck.metadata.contains("eval_seeds")) {
        eval_seeds = cognn::detail::parse_number<std::size_t>("eval_seeds", ck.metadata.at("eval_seeds"));
      }
      MetricEstimate m = detail::evaluate_split(ck.model, samples, eval_seeds);
      if (!out_file.empty()) {
        nlohmann::json j{{"split", split_name},
                         {"metric", detail::metric_name(ck.model)},
                         {"mean", m.mean},
                         {"stderr", m.stderr_},
                         {"per_seed", m.per_seed}};
        detail::write_text(out_file, j.dump(2) + "\n");
      }
      out << "eval: " << split_name << " " << detail::metric_name(ck.model) << "=" << detail::fmt(m.mean)
          << " stderr=" << detail::fmt(m.stderr_) << " seeds=" << m.per_seed.size() << "\n";
    } else if (trc->parsed()) {
      Checkpoint ck = load_checkpoint(model_path);
      if (data_dir.empty()) {
        auto it = ck.metadata.find("data_dir");
        if (it == ck.metadata.end()) throw ValidationError("--data: required, the checkpoint records no data directory");
        data_dir = it->second;
      }
      Dataset ds = detail::load_data(data_dir);
      const auto& samples = ds.split(split_from_string(split_name));
      if (graph_index >= samples.size()) {
        throw ValidationError("--graph-index: " + std::to_string(graph_index) + " out of range, the " + split_name +
                              " split has " + std::to_string(samples.size()) + " graphs");
      }
      Trace t = record_trace(ck.model, samples[graph_index].graph, Rng(seed).split("trace"));
      write_trace(t, out_file);
      std::size_t kept = 0;
      for (const auto& k : t.kept) kept += k.size();
      out << "trace: " << t.rows.size() << " rows, " << kept << " kept edges -> " << out_file << "\n";
    } else if (bn->parsed()) {
      if (!fs::exists(config_path)) throw IoError("--config: no such file " + config_path);
      RunConfig run = parse_config(config_path);
      const auto edge_counts = detail::parse_sizes(sizes);
      ModelConfig mc = run.model_config(run.env_dim, 1);
      BenchReport rep = run_bench(mc, edge_counts, seed, reps);
      const std::string path = out_file.empty() ? "bench.csv" : out_file;
      std::ostringstream csv;
      csv.precision(17);
      csv << "nodes,edges,predicted_cost,seconds\n";
      for (const auto& p : rep.points) csv << p.nodes << "," << p.edges << "," << p.predicted.total() << "," << p.seconds << "\n";
      detail::write_text(path, csv.str());
      out << "bench: " << rep.points.size() << " sizes slope=" << detail::fmt(rep.time_vs_edges.slope)
          << " s/edge r2=" << detail::fmt(rep.time_vs_edges.r2) << " -> " << path << "\n";
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

}  // namespace cognn::cli
