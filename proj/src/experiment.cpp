#include "distill/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "distill/error.hpp"

namespace distill {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Interrupted {};

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << text;
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Pre-training ignores every distillation setting, so runs that differ only
// there can share one pre-training state.
std::string pretrain_key(const ExperimentConfig& c) {
  json t = to_json(c.train);
  for (const char* k : {"sharpening", "positive_fraction", "epochs_distill", "ema_alpha"}) t.erase(k);
  return fnv1a_hex(json{{"dataset", to_json(c.dataset)}, {"train", t}}.dump());
}

std::size_t selected_positives(const TrainConfig& c, const Dataset& d) {
  return static_cast<std::size_t>(std::ceil(c.positive_fraction * static_cast<double>(d.positive.size()) - 1e-9));
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

template <typename F>
void parallel_for(std::size_t n, int workers, F&& body) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

ordered_json run_json(const RunResult& r) {
  return {{"seed", r.seed},
          {"dir", r.dir.generic_string()},
          {"best_validation_auroc", r.best_validation_auroc},
          {"auroc", r.test.auroc},
          {"froc_score", r.test.froc.score}};
}

double mean_of(const std::vector<RunResult>& runs, bool froc) {
  double s = 0.0;
  for (const RunResult& r : runs) s += froc ? r.test.froc.score : r.test.auroc;
  return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

double sd_of(const std::vector<RunResult>& runs, bool froc) {
  if (runs.size() < 2) return 0.0;
  const double m = mean_of(runs, froc);
  double s = 0.0;
  for (const RunResult& r : runs) {
    const double d = (froc ? r.test.froc.score : r.test.auroc) - m;
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(runs.size() - 1));
}

}  // namespace

int worker_count() {
  const char* env = std::getenv("DISTILL_WORKERS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 256) {
    throw ConfigError(std::string("DISTILL_WORKERS must be an integer in [1, 256], got '") + env + "'");
  }
  return static_cast<int>(n);
}

std::string run_generate(const ExperimentConfig& config, const fs::path& dir) {
  const Dataset d = generate_dataset(config.dataset);
  save_dataset(d, dir);
  const std::string hash = config_hash(config);
  json snapshot = to_json(config);
  snapshot["config_hash"] = hash;
  write_text(dir / "config.json", snapshot.dump(2) + "\n");
  return hash;
}

RunResult run_train(const ExperimentConfig& config, std::uint64_t seed, const fs::path& dir,
                    const RunOptions& options) {
  ExperimentConfig cfg = config;
  cfg.train.seed = seed;
  cfg.seeds = {seed};
  cfg.sweep.reset();
  cfg.validate();
  const std::string hash = config_hash(cfg);
  const std::string key = pretrain_key(cfg);
  const TrainConfig& tc = cfg.train;
  auto log = [&](const std::string& m) {
    if (options.log) options.log(m);
  };

  fs::create_directories(dir);
  const fs::path state_path = dir / "state.bin";
  const fs::path pre_path = dir / "pretrain.state";
  std::optional<TrainState> resumed;
  if (options.resume && fs::exists(state_path)) {
    const json old = json::parse(read_text(dir / "config.json"), nullptr, false);
    if (old.is_discarded() || old.value("config_hash", std::string{}) != hash) {
      throw ConfigError("cannot resume " + dir.string() + ": its config differs from the current one");
    }
    resumed = load_train_state(state_path);
    log("resuming " + dir.string() + " after " + std::to_string(resumed->history.size()) + " epochs");
  } else {
    for (const char* stale : {"state.bin", "pretrain.state", "metrics.csv", "metrics.json", "best.ckpt", "froc.csv"}) {
      fs::remove(dir / stale);
    }
  }
  json snapshot = to_json(cfg);
  snapshot["config_hash"] = hash;
  write_text(dir / "config.json", snapshot.dump(2) + "\n");

  std::optional<Dataset> owned;
  if (!options.dataset) owned = generate_dataset(cfg.dataset);
  const Dataset& data = options.dataset ? *options.dataset : *owned;

  int epochs_this_call = 0;
  StageOptions so;
  so.on_epoch = [&](const TrainState& s) {
    save_train_state(s, dir / "state.bin.tmp");
    fs::rename(dir / "state.bin.tmp", state_path);
    write_text(dir / "metrics.csv", history_csv(s.history));
    const EpochRecord& r = s.history.back();
    std::ostringstream m;
    m << std::fixed << std::setprecision(4) << dir.generic_string() << " epoch " << r.epoch << " " << r.stage
      << " loss " << r.loss_total << " val_auroc " << r.val_auroc << " val_froc " << r.val_froc;
    log(m.str());
    if (options.stop_after_epochs > 0 && ++epochs_this_call >= options.stop_after_epochs) throw Interrupted{};
  };

  RunResult result;
  result.dir = dir;
  result.seed = seed;
  result.config_hash = hash;
  try {
    TrainState pre;
    const fs::path cache_state = options.pretrain_cache / "pretrain.state";
    const fs::path cache_key = options.pretrain_cache / "pretrain.key";
    if (resumed && resumed->stage == Stage::Distill) {
      pre = load_train_state(pre_path);
    } else if (resumed) {
      pre = run_pretrain(data, tc, so, std::move(*resumed));
      resumed.reset();
    } else if (!options.pretrain_cache.empty() && fs::exists(cache_state) && fs::exists(cache_key) &&
               read_text(cache_key) == key) {
      pre = load_train_state(cache_state);
      log("reusing pre-training from " + options.pretrain_cache.generic_string());
    } else {
      pre = run_pretrain(data, tc, so);
    }
    save_train_state(pre, pre_path);
    if (!options.pretrain_cache.empty() && !(fs::exists(cache_key) && read_text(cache_key) == key)) {
      fs::create_directories(options.pretrain_cache);
      save_train_state(pre, options.pretrain_cache / "pretrain.state.tmp");
      fs::rename(options.pretrain_cache / "pretrain.state.tmp", cache_state);
      write_text(cache_key, key);
    }

    const bool skip = tc.epochs_distill == 0 || selected_positives(tc, data) == 0;
    const TrainState final_state = skip ? pre : run_distill(data, tc, resumed ? *resumed : pre, so);
    save_train_state(final_state, state_path);
    write_text(dir / "metrics.csv", history_csv(final_state.history));

    result.best_validation_auroc = final_state.best_validation_auroc;
    result.test = evaluate_checkpoint(final_state.best_checkpoint, data.test);
    result.completed = true;
    save_checkpoint(final_state.best_checkpoint, dir / "best.ckpt");
    ordered_json out = {{"config_hash", hash},
                        {"seed", seed},
                        {"best_validation_auroc", final_state.best_validation_auroc}};
    const ordered_json report = ordered_json::parse(metrics_report_json(result.test));
    for (const auto& [k, v] : report.items()) out[k] = v;
    write_text(dir / "metrics.json", out.dump(2) + "\n");
    write_text(dir / "froc.csv", froc_curve_csv(result.test.froc));
  } catch (const Interrupted&) {
    log("stopped " + dir.string() + " after " + std::to_string(epochs_this_call) + " epochs");
  }
  return result;
}

SweepResult run_sweep(const ExperimentConfig& config, const fs::path& dir, const Logger& log) {
  config.validate();
  if (!config.sweep) throw ConfigError("sweep command needs a sweep section in the config");
  const SweepSpec& sweep = *config.sweep;
  const int workers = worker_count();
  std::mutex log_mutex;
  Logger safe_log;
  if (log) {
    safe_log = [&](const std::string& m) {
      std::lock_guard lock(log_mutex);
      log(m);
    };
  }

  SweepResult result;
  result.parameter = sweep.parameter;
  result.config_hash = config_hash(config);
  const Dataset data = generate_dataset(config.dataset);
  fs::create_directories(dir);

  std::vector<double> values = sweep.values;
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  const auto cache_of = [&](std::uint64_t seed) { return dir / "pretrain-cache" / ("seed-" + std::to_string(seed)); };

  // Baselines first: they fill the per-seed pre-training caches.
  result.baseline.resize(config.seeds.size());
  parallel_for(config.seeds.size(), workers, [&](std::size_t i) {
    ExperimentConfig c = config;
    c.train.positive_fraction = 0.0;
    RunOptions o;
    o.dataset = &data;
    o.pretrain_cache = cache_of(config.seeds[i]);
    o.log = safe_log;
    result.baseline[i] = run_train(c, config.seeds[i], dir / "baseline" / ("seed-" + std::to_string(config.seeds[i])), o);
  });

  result.rows.resize(values.size());
  const std::size_t n_seeds = config.seeds.size();
  for (std::size_t v = 0; v < values.size(); ++v) {
    result.rows[v].value = values[v];
    result.rows[v].runs.resize(n_seeds);
  }
  parallel_for(values.size() * n_seeds, workers, [&](std::size_t job) {
    const std::size_t v = job / n_seeds, s = job % n_seeds;
    ExperimentConfig c = config;
    apply_sweep_value(c.train, sweep.parameter, values[v]);
    RunOptions o;
    o.dataset = &data;
    o.pretrain_cache = cache_of(config.seeds[s]);
    o.log = safe_log;
    const fs::path run_dir = dir / (sweep.parameter + "=" + format_value(values[v])) /
                             ("seed-" + std::to_string(config.seeds[s]));
    result.rows[v].runs[s] = run_train(c, config.seeds[s], run_dir, o);
  });

  for (SweepRow& row : result.rows) {
    row.mean_auroc = mean_of(row.runs, false);
    row.mean_froc = mean_of(row.runs, true);
  }
  result.baseline_mean_auroc = mean_of(result.baseline, false);
  result.baseline_mean_froc = mean_of(result.baseline, true);

  std::ostringstream csv;
  csv << "parameter,value,auroc_mean,froc_mean,auroc_sd,froc_sd,seeds,config_hash\n" << std::setprecision(10);
  for (const SweepRow& row : result.rows) {
    csv << sweep.parameter << ',' << format_value(row.value) << ',' << row.mean_auroc << ',' << row.mean_froc << ','
        << sd_of(row.runs, false) << ',' << sd_of(row.runs, true) << ',' << row.runs.size() << ','
        << result.config_hash << '\n';
  }
  write_text(dir / "sweep.csv", csv.str());

  ordered_json j = {{"config_hash", result.config_hash}, {"parameter", sweep.parameter}};
  ordered_json base = {{"auroc_mean", result.baseline_mean_auroc}, {"froc_mean", result.baseline_mean_froc}};
  base["runs"] = ordered_json::array();
  for (const RunResult& r : result.baseline) base["runs"].push_back(run_json(r));
  j["baseline"] = base;
  j["rows"] = ordered_json::array();
  for (const SweepRow& row : result.rows) {
    ordered_json rj = {{"value", row.value}, {"auroc_mean", row.mean_auroc}, {"froc_mean", row.mean_froc}};
    rj["runs"] = ordered_json::array();
    for (const RunResult& r : row.runs) rj["runs"].push_back(run_json(r));
    j["rows"].push_back(rj);
  }
  write_text(dir / "sweep.json", j.dump(2) + "\n");
  return result;
}

namespace {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string svg_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                     double xmax, const std::vector<Series>& series) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  const double W = 640, H = 480, L = 70, R = 20, T = 40, B = 60;
  const double pw = W - L - R, ph = H - T - B;
  auto sx = [&](double x) { return L + pw * std::min(x, xmax) / xmax; };
  auto sy = [&](double y) { return T + ph * (1.0 - y); };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = xmax * i / 5.0, fy = i / 5.0;
    os << "<line x1=\"" << sx(fx) << "\" y1=\"" << T << "\" x2=\"" << sx(fx) << "\" y2=\"" << T + ph << "\" stroke=\"#ddd\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << sy(fy) << "\" x2=\"" << L + pw << "\" y2=\"" << sy(fy) << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << sx(fx) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">" << std::setprecision(3) << fx << std::setprecision(2) << "</text>\n";
    os << "<text x=\"" << L - 8 << "\" y=\"" << sy(fy) + 4 << "\" text-anchor=\"end\">" << fy << "</text>\n";
  }
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">" << xml_escape(xlabel) << "</text>\n";
  os << "<text transform=\"translate(18," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(ylabel) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = colors[i % std::size(colors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    double last_y = 0.0;
    for (const auto& [x, y] : series[i].points) {
      if (x > xmax) break;
      os << sx(x) << ',' << sy(last_y) << ' ' << sx(x) << ',' << sy(y) << ' ';
      last_y = y;
    }
    os << sx(xmax) << ',' << sy(last_y) << "\"/>\n";
    const double ly = T + ph - 14.0 * static_cast<double>(series.size() - i) - 6;
    os << "<line x1=\"" << L + pw - 190 << "\" y1=\"" << ly << "\" x2=\"" << L + pw - 170 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << L + pw - 165 << "\" y=\"" << ly + 4 << "\">" << xml_escape(series[i].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string run_label(const fs::path& dir) {
  fs::path p = dir;
  if (p.filename().empty()) p = p.parent_path();
  const std::string name = p.filename().string();
  if (name.rfind("seed-", 0) == 0 && p.has_parent_path()) return p.parent_path().filename().string() + "/" + name;
  return name;
}

}  // namespace

void run_report(const std::vector<fs::path>& run_dirs, const fs::path& out) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<std::string> missing;
  for (const fs::path& d : run_dirs) {
    if (!fs::is_directory(d)) {
      missing.push_back(d.string() + " (no such directory)");
    } else if (!fs::exists(d / "metrics.json")) {
      missing.push_back((d / "metrics.json").string() + " (run not finished)");
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing run results:";
    for (const std::string& m : missing) msg += "\n  " + m;
    throw ConfigError(msg);
  }

  std::vector<Series> froc, roc;
  std::ostringstream summary;
  summary << "run,config_hash,seed,best_validation_auroc,auroc,froc_score\n" << std::setprecision(10);
  for (const fs::path& d : run_dirs) {
    const json j = json::parse(read_text(d / "metrics.json"), nullptr, false);
    if (j.is_discarded()) throw std::runtime_error((d / "metrics.json").string() + " is not valid JSON");
    const std::string label = run_label(d);
    Series f{label, {}}, r{label, {}};
    for (const auto& p : j.at("curve")) f.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    for (const auto& p : j.at("roc")) r.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    froc.push_back(std::move(f));
    roc.push_back(std::move(r));
    summary << label << ',' << j.value("config_hash", std::string{}) << ',' << j.value("seed", 0ULL) << ','
            << j.value("best_validation_auroc", 0.0) << ',' << j.at("auroc").get<double>() << ','
            << j.at("froc_score").get<double>() << '\n';
  }
  fs::create_directories(out);
  write_text(out / "froc.svg", svg_plot("FROC", "false positive pixel ratio", "recall", 0.1, froc));
  write_text(out / "roc.svg", svg_plot("ROC", "false positive rate", "true positive rate", 1.0, roc));
  write_text(out / "summary.csv", summary.str());
}

}  // namespace distill
