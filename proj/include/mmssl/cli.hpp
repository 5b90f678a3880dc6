#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmssl/datagen.hpp"
#include "mmssl/experiment.hpp"
#include "mmssl/serialize.hpp"
#include "mmssl/svg.hpp"
#include "mmssl/trainer.hpp"

namespace mmssl {

namespace clidetail {

inline bool use_color() { return std::getenv("NO_COLOR") == nullptr; }

inline std::string tag(const std::string& label) {
  if (use_color()) return "\033[36m[" + label + "]\033[0m ";
  return "[" + label + "] ";
}

inline nlohmann::ordered_json metrics_to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  auto& cm = j["confusion"] = nlohmann::ordered_json::array();
  for (int r = 0; r < m.confusion.rows; ++r) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int c = 0; c < m.confusion.cols; ++c) row.push_back(m.confusion(r, c));
    cm.push_back(std::move(row));
  }
  j["epoch"] = m.epoch;
  return j;
}

inline nlohmann::ordered_json epoch_to_json(const EpochRecord& er) {
  nlohmann::ordered_json j;
  j["epoch"] = er.epoch;
  j["l_cls"] = er.l_cls;
  j["l_pl"] = er.l_pl;
  j["l_con"] = er.l_con;
  j["l_recover"] = er.l_recover;
  j["l_all"] = er.l_all;
  j["tau"] = er.tau;
  j["sigma_u"] = er.sigma_u;
  j["accept_rate"] = er.accept_rate;
  if (er.eval)
    j["eval"] = metrics_to_json(*er.eval);
  else
    j["eval"] = nullptr;
  return j;
}

inline std::string metrics_jsonl(const RunRecord& record) {
  std::string out;
  for (const auto& er : record.epochs) out += epoch_to_json(er).dump() + "\n";
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::logic_error("median of empty set");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  return out + "\"";
}

// Number text identical to the JSON serialization, so CSV and JSONL agree to
// the exact decimal representation.
inline std::string json_num(double v) { return nlohmann::json(v).dump(); }

struct RunResult {
  RunRecord record;
  double wall_seconds = 0.0;
};

inline RunResult run_training(const ExperimentConfig& cfg, const Dataset& data, const std::string& outdir) {
  namespace fs = std::filesystem;
  fs::create_directories(outdir);
  if (data.classes != cfg.gen.classes || data.modalities != cfg.gen.modalities ||
      data.modality_dims != cfg.gen.modality_dims)
    throw ConfigError("dataset does not match config key 'gen' (classes/modalities/dims)");

  Dataset test = generate(cfg.gen, Split::test);
  if (cfg.eval_missing) apply_missing(test, cfg.gen);

  ModelParams params = init_model(cfg.model_config(), cfg.train.seed);
  AdamState adam = make_adam(params, cfg.train.lr);
  std::vector<PcaSubspace> subs;

  const auto t0 = std::chrono::steady_clock::now();
  RunRecord record = train(data, &test, params, adam, cfg.train, nullptr, &subs);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  write_text_file(outdir + "/metrics.jsonl", metrics_jsonl(record));

  nlohmann::ordered_json summary;
  summary["label"] = cfg.label;
  summary["seed"] = cfg.train.seed;
  summary["config"] = experiment_to_json(cfg);
  auto& fin = summary["final"] = metrics_to_json(record.final);
  fin["convergence_epoch"] = record.convergence_epoch;
  summary["timing"] = {{"wall_seconds", wall}};
  write_text_file(outdir + "/summary.json", summary.dump(2) + "\n");

  write_text_file(outdir + "/checkpoint.json", checkpoint_to_json(params, adam, subs).dump() + "\n");

  return RunResult{std::move(record), wall};
}

inline ExperimentConfig load_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_experiment(j);
}

}  // namespace clidetail

inline int cmd_generate(const std::string& config_path, const std::string& out_path, long seed_override) {
  ExperimentConfig cfg = clidetail::load_config(config_path);
  if (seed_override >= 0) cfg.gen.seed = static_cast<std::uint64_t>(seed_override);
  Dataset d = generate(cfg.gen);
  std::filesystem::path out(out_path);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  write_text_file(out_path, dataset_to_json(d).dump() + "\n");

  std::vector<long> class_counts(d.classes, 0);
  for (const auto& s : d.samples)
    if (s.label) ++class_counts[*s.label];
  std::cout << clidetail::tag("generate") << d.samples.size() << " samples, " << d.labeled_ids.size()
            << " labeled, " << d.unlabeled_ids.size() << " unlabeled\n";
  std::cout << clidetail::tag("generate") << "labeled class counts:";
  for (long c : class_counts) std::cout << " " << c;
  std::cout << "\n";
  for (int m = 0; m < d.modalities; ++m) {
    long missing = 0;
    for (int id : d.unlabeled_ids)
      if (!d.samples[id].available[m]) ++missing;
    const double frac = d.unlabeled_ids.empty() ? 0.0 : static_cast<double>(missing) / d.unlabeled_ids.size();
    std::cout << clidetail::tag("generate") << "modality " << m << " missing (unlabeled): " << frac << "\n";
  }
  return 0;
}

inline int cmd_train(const std::string& config_path, const std::string& data_path, const std::string& outdir,
                     long seed_override) {
  ExperimentConfig cfg = clidetail::load_config(config_path);
  if (seed_override >= 0) {
    cfg.gen.seed = static_cast<std::uint64_t>(seed_override);
    cfg.train.seed = static_cast<std::uint64_t>(seed_override);
  }
  Dataset data;
  try {
    data = dataset_from_json(nlohmann::json::parse(read_text_file(data_path)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset: invalid JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
  const auto result = clidetail::run_training(cfg, data, outdir);
  std::cout << clidetail::tag("train") << "final accuracy " << result.record.final.accuracy << " after "
            << cfg.train.epochs << " epochs (" << result.wall_seconds << " s)\n";
  if (cfg.gen.classes == 2)
    std::cout << clidetail::tag("train") << "abnormal class: precision " << result.record.final.precision[1]
              << ", recall " << result.record.final.recall[1] << ", f1 " << result.record.final.f1[1] << "\n";
  return 0;
}

inline int cmd_ablate(const std::string& config_path, const std::string& outdir, int jobs_override) {
  namespace fs = std::filesystem;
  ExperimentConfig base = clidetail::load_config(config_path);
  if (base.variants.empty()) throw ConfigError("config: missing key 'ablate.variants'");
  std::vector<std::uint64_t> seeds = base.ablate_seeds;
  if (seeds.empty()) seeds = {base.train.seed};
  fs::create_directories(outdir);

  // Shared data per seed; every variant of a seed trains on the same file.
  std::vector<Dataset> datasets;
  for (std::uint64_t seed : seeds) {
    GenConfig g = base.gen;
    g.seed = seed;
    datasets.push_back(generate(g));
    write_text_file(outdir + "/data_s" + std::to_string(seed) + ".json",
                    dataset_to_json(datasets.back()).dump() + "\n");
  }

  struct Job {
    int variant = 0, seed_idx = 0;
    std::string dir;
  };
  std::vector<Job> jobs;
  for (size_t v = 0; v < base.variants.size(); ++v)
    for (size_t s = 0; s < seeds.size(); ++s)
      jobs.push_back(Job{static_cast<int>(v), static_cast<int>(s),
                         outdir + "/" + base.variants[v].label + "_s" + std::to_string(seeds[s])});

  int workers = jobs_override > 0 ? jobs_override : base.jobs;
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));

  std::vector<nlohmann::ordered_json> rows(jobs.size());
  std::vector<std::string> failures;
  std::mutex mu;
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      try {
        ExperimentConfig cfg = apply_variant(base, base.variants[job.variant]);
        cfg.gen.seed = seeds[job.seed_idx];
        cfg.train.seed = seeds[job.seed_idx];
        const auto result = clidetail::run_training(cfg, datasets[job.seed_idx], job.dir);
        nlohmann::ordered_json row;
        row["variant"] = base.variants[job.variant].label;
        row["seed"] = seeds[job.seed_idx];
        row["accuracy"] = result.record.final.accuracy;
        for (int c = 0; c < static_cast<int>(result.record.final.recall.size()); ++c) {
          row["precision_" + std::to_string(c)] = result.record.final.precision[c];
          row["recall_" + std::to_string(c)] = result.record.final.recall[c];
          row["f1_" + std::to_string(c)] = result.record.final.f1[c];
        }
        row["convergence_epoch"] = result.record.convergence_epoch;
        std::lock_guard<std::mutex> lock(mu);
        rows[i] = std::move(row);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        failures.push_back(job.dir + ": " + e.what());
      }
    }
  };
  {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (!failures.empty()) {
    for (const auto& f : failures) std::cerr << "ablate: run failed: " << f << "\n";
    std::cerr << "ablate: partial results preserved in " << outdir << "\n";
    return 3;
  }

  // Metric names from the first row, in emission order.
  std::vector<std::string> metric_names;
  for (const auto& [key, value] : rows[0].items())
    if (key != "variant" && key != "seed") metric_names.push_back(key);

  nlohmann::ordered_json comparison;
  comparison["variants"] = nlohmann::ordered_json::array();
  for (const auto& v : base.variants) comparison["variants"].push_back(v.label);
  comparison["seeds"] = seeds;
  comparison["runs"] = rows;
  auto& medians = comparison["medians"] = nlohmann::ordered_json::object();
  for (size_t v = 0; v < base.variants.size(); ++v) {
    nlohmann::ordered_json entry;
    for (const auto& name : metric_names) {
      std::vector<double> vals;
      for (size_t s = 0; s < seeds.size(); ++s)
        vals.push_back(rows[v * seeds.size() + s].at(name).get<double>());
      entry[name] = clidetail::median(vals);
    }
    medians[base.variants[v].label] = std::move(entry);
  }
  write_text_file(outdir + "/comparison.json", comparison.dump(2) + "\n");

  // Wide CSV: one row per (metric, seed), one column per variant label, plus
  // a median row per metric.
  std::string csv = "metric,seed";
  for (const auto& v : base.variants) csv += "," + clidetail::csv_escape(v.label);
  csv += "\n";
  for (const auto& name : metric_names) {
    for (size_t s = 0; s < seeds.size(); ++s) {
      csv += name + "," + std::to_string(seeds[s]);
      for (size_t v = 0; v < base.variants.size(); ++v)
        csv += "," + clidetail::json_num(rows[v * seeds.size() + s].at(name).get<double>());
      csv += "\n";
    }
    csv += name + ",median";
    for (size_t v = 0; v < base.variants.size(); ++v)
      csv += "," + clidetail::json_num(comparison["medians"][base.variants[v].label][name].get<double>());
    csv += "\n";
  }
  write_text_file(outdir + "/comparison.csv", csv);

  std::cout << clidetail::tag("ablate") << jobs.size() << " runs complete, medians in " << outdir
            << "/comparison.csv\n";
  return 0;
}

inline int cmd_plot(const std::vector<std::string>& run_dirs, const std::string& outdir,
                    const std::string& metric) {
  namespace fs = std::filesystem;
  if (run_dirs.empty()) throw ConfigError("plot: no run directories given");

  struct Run {
    std::string label;
    std::vector<nlohmann::json> lines;
  };
  std::vector<Run> runs;
  for (const auto& dir : run_dirs) {
    const std::string path = dir + "/metrics.jsonl";
    if (!fs::exists(path)) throw ConfigError("plot: missing file " + path);
    Run run;
    run.label = fs::path(dir).filename().string();
    const std::string summary_path = dir + "/summary.json";
    if (fs::exists(summary_path)) {
      try {
        auto s = nlohmann::json::parse(read_text_file(summary_path));
        if (s.contains("label")) run.label = s["label"].get<std::string>() + "_s" +
                                             std::to_string(s.value("seed", 0ull));
      } catch (const nlohmann::json::exception&) {
      }
    }
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        run.lines.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("plot: bad JSONL in " + path + ": " + e.what());
      }
    }
    runs.push_back(std::move(run));
  }

  // Tidy CSV: run,epoch,metric,value with every scalar metric flattened.
  auto flatten = [](const nlohmann::json& rec, std::vector<std::pair<std::string, nlohmann::json>>& out) {
    for (const char* key : {"l_cls", "l_pl", "l_con", "l_recover", "l_all", "accept_rate"})
      if (rec.contains(key)) out.push_back({key, rec.at(key)});
    if (rec.contains("tau"))
      for (size_t c = 0; c < rec.at("tau").size(); ++c)
        out.push_back({"tau_" + std::to_string(c), rec.at("tau")[c]});
    if (rec.contains("sigma_u"))
      for (size_t c = 0; c < rec.at("sigma_u").size(); ++c)
        out.push_back({"sigma_u_" + std::to_string(c), rec.at("sigma_u")[c]});
    if (rec.contains("eval") && !rec.at("eval").is_null()) {
      const auto& ev = rec.at("eval");
      out.push_back({"accuracy", ev.at("accuracy")});
      for (size_t c = 0; c < ev.at("recall").size(); ++c) {
        out.push_back({"precision_" + std::to_string(c), ev.at("precision")[c]});
        out.push_back({"recall_" + std::to_string(c), ev.at("recall")[c]});
        out.push_back({"f1_" + std::to_string(c), ev.at("f1")[c]});
      }
    }
  };

  fs::create_directories(outdir);
  std::string csv = "run,epoch,metric,value\n";
  std::vector<ChartSeries> series;
  bool metric_seen = false;
  for (const auto& run : runs) {
    ChartSeries s;
    s.label = run.label;
    for (const auto& rec : run.lines) {
      const int epoch = rec.at("epoch").get<int>();
      std::vector<std::pair<std::string, nlohmann::json>> flat;
      flatten(rec, flat);
      for (const auto& [name, value] : flat) {
        csv += clidetail::csv_escape(run.label) + "," + std::to_string(epoch) + "," + name + "," +
               value.dump() + "\n";
        if (name == metric) {
          s.points.push_back({static_cast<double>(epoch), value.get<double>()});
          metric_seen = true;
        }
      }
    }
    series.push_back(std::move(s));
  }
  if (!metric_seen) throw ConfigError("plot: metric '" + metric + "' not present in any run");

  write_text_file(outdir + "/curves.csv", csv);
  write_text_file(outdir + "/curves.svg", render_line_chart(series, metric + " by epoch", "epoch", metric));
  std::cout << clidetail::tag("plot") << runs.size() << " run(s) -> " << outdir << "/curves.{csv,svg}\n";
  return 0;
}

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"class-balanced semi-supervised multimodal training testbed"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, metric = "accuracy";
  long seed = -1;
  int jobs = 0;
  std::vector<std::string> run_dirs;

  auto* gen = app.add_subcommand("generate", "synthesize a dataset file");
  gen->add_option("--config", config_path, "experiment config JSON")->required();
  gen->add_option("--out", out_path, "output dataset path")->required();
  gen->add_option("--seed", seed, "override the config seed");

  auto* train_cmd = app.add_subcommand("train", "run one training configuration");
  train_cmd->add_option("--config", config_path, "experiment config JSON")->required();
  train_cmd->add_option("--data", data_path, "dataset file")->required();
  train_cmd->add_option("--out", out_path, "output directory")->required();
  train_cmd->add_option("--seed", seed, "override the config seed");

  auto* ablate = app.add_subcommand("ablate", "run the configured variant grid");
  ablate->add_option("--config", config_path, "experiment config JSON")->required();
  ablate->add_option("--out", out_path, "output directory")->required();
  ablate->add_option("--jobs", jobs, "concurrent runs");

  auto* plot = app.add_subcommand("plot", "emit CSV + SVG curves from run directories");
  plot->add_option("runs", run_dirs, "run directories containing metrics.jsonl")->required();
  plot->add_option("--out", out_path, "output directory")->required();
  plot->add_option("--metric", metric, "metric for the SVG chart");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(gen)) return cmd_generate(config_path, out_path, seed);
    if (app.got_subcommand(train_cmd)) return cmd_train(config_path, data_path, out_path, seed);
    if (app.got_subcommand(ablate)) return cmd_ablate(config_path, out_path, jobs);
    if (app.got_subcommand(plot)) return cmd_plot(run_dirs, out_path, metric);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace mmssl
