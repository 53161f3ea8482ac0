#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "siesta/siesta.hpp"

namespace fs = std::filesystem;
using namespace siesta;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.path, "config file (key = value lines)");
  cmd->add_option("-s,--set", a.sets, "override, e.g. --set sleep.updates=6400")->take_all();
}

io::RunConfig resolve(const ConfigArgs& a, const std::string& out_override = {}) {
  auto overrides = a.sets;
  if (!out_override.empty()) overrides.push_back("output.dir=" + out_override);
  return io::load_config(a.path, overrides);
}

std::string summarize(const experiment::MetricsRecord& m) {
  std::ostringstream os;
  os << m.mode << ": final_alpha=" << m.final_alpha;
  if (m.mu) os << " mu=" << *m.mu;
  os << " U=" << m.total_updates << " M=" << m.peak_memory_bytes << " sleeps=" << m.sleeps;
  if (m.stopped_early) os << " (stopped at update cap)";
  return os.str();
}

template <typename T>
experiment::MetricsRecord run_once(const io::RunConfig& cfg) {
  const auto data = io::load_data<T>(cfg);
  auto m = experiment::run_experiment<T>(cfg.experiment, data.train, data.eval);
  io::emit_results(m, cfg, cfg.output_dir);
  return m;
}

experiment::MetricsRecord run_config(const io::RunConfig& cfg) {
  return cfg.precision == "double" ? run_once<double>(cfg) : run_once<float>(cfg);
}

template <typename T>
void fit_base(const io::RunConfig& cfg) {
  const auto data = io::load_data<T>(cfg);
  experiment::Experiment<T> ex(cfg.experiment, data.train, data.eval);
  ex.base_init();
  const auto ev = ex.evaluate();
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  ex.codec().save((out / "codec.spqc").string());
  io::save_checkpoint((out / "base.ckpt").string(), ex.network(), ex.head());
  io::Json j;
  j["base_alpha"] = ev.accuracy;
  j["base_updates"] = ex.base_updates();
  j["base_classes"] = ex.layout().base_classes;
  j["buffer_entries"] = ex.buffer().size();
  j["buffer_bytes"] = ex.buffer().total_bytes();
  j["codec_bytes"] = ex.codec().model_bytes();
  std::ofstream(out / "base.json") << j.dump(2) << "\n";
  std::ofstream(out / "config.txt") << io::echo_config(cfg);
  std::ofstream(out / "seeds.json") << io::seeds_json(io::seed_manifest(cfg)).dump(2) << "\n";
  std::cout << "base accuracy " << ev.accuracy << "% after " << ex.base_updates() << " updates; wrote " << out.string()
            << "\n";
}

// "key=v1,v2,v3" -> key, {v1, v2, v3}
std::pair<std::string, std::vector<std::string>> parse_vary(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--vary '" + s + "' is not key=v1,v2,...");
  std::vector<std::string> values;
  std::stringstream ss(s.substr(eq + 1));
  std::string v;
  while (std::getline(ss, v, ';')) values.push_back(v);
  if (values.size() == 1 && values.front().find(',') != std::string::npos && s.substr(0, eq) != "plan.class_order") {
    values.clear();
    std::stringstream cs(s.substr(eq + 1));
    while (std::getline(cs, v, ',')) values.push_back(v);
  }
  return {s.substr(0, eq), values};
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  return out;
}

void sweep(const ConfigArgs& a, const std::string& out, const std::vector<std::string>& vary) {
  const auto base = resolve(a, out);
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& v : vary) axes.push_back(parse_vary(v));
  std::vector<std::size_t> idx(axes.size(), 0);
  const fs::path root = base.output_dir;
  fs::create_directories(root);
  std::ofstream summary(root / "summary.csv");
  summary << "run";
  for (const auto& ax : axes) summary << "," << ax.first;
  summary << ",final_alpha,mu,U,M\n";
  std::size_t run = 0;
  while (true) {
    auto cfg = base;
    std::string name;
    for (std::size_t i = 0; i < axes.size(); ++i) {
      io::set_config_value(cfg, axes[i].first, axes[i].second[idx[i]]);
      name += (i ? "__" : "") + slug(axes[i].first + "=" + axes[i].second[idx[i]]);
    }
    if (name.empty()) name = "run";
    cfg.output_dir = (root / name).string();
    io::validate(cfg);
    const auto m = run_config(cfg);
    std::cout << name << " " << summarize(m) << "\n";
    summary << run++;
    for (std::size_t i = 0; i < axes.size(); ++i) summary << "," << axes[i].second[idx[i]];
    summary << "," << io::detail::csv_double(m.final_alpha) << "," << (m.mu ? io::detail::csv_double(*m.mu) : "") << ","
            << m.total_updates << "," << m.peak_memory_bytes << "\n";
    std::size_t k = 0;
    while (k < axes.size() && ++idx[k] == axes[k].second.size()) idx[k++] = 0;
    if (k == axes.size()) break;
  }
}

void stats(const std::vector<std::string>& runs) {
  if (runs.size() < 2) throw UsageError("stats needs at least two run directories");
  std::vector<io::PredictionFile> files;
  for (const auto& r : runs) {
    fs::path p = r;
    if (fs::is_directory(p)) p /= "predictions.csv";
    files.push_back(io::read_predictions(p));
  }
  for (std::size_t i = 1; i < files.size(); ++i) {
    if (files[i].truth != files[0].truth) throw DataError("stats: runs were evaluated on different ground truth");
  }
  io::Json j;
  j["runs"] = runs;
  std::vector<double> acc;
  for (const auto& f : files) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < f.truth.size(); ++i) ok += f.truth[i] == f.predictions[i];
    acc.push_back(f.truth.empty() ? 0.0 : 100.0 * static_cast<double>(ok) / static_cast<double>(f.truth.size()));
  }
  j["accuracy"] = acc;
  experiment::TestResult r;
  if (files.size() == 2) {
    j["test"] = "mcnemar";
    r = experiment::mcnemar_test(files[0].predictions, files[1].predictions, files[0].truth);
  } else {
    j["test"] = "cochran_q";
    std::vector<std::vector<int>> preds;
    for (const auto& f : files) preds.push_back(f.predictions);
    r = experiment::cochran_q_test(preds, files[0].truth);
  }
  j["statistic"] = r.statistic;
  j["p_value"] = r.p_value;
  std::cout << j.dump(2) << "\n";
}

void synth(const io::RunConfig& cfg, const fs::path& out) {
  const auto [train, eval] = io::synthetic_images(cfg);
  fs::create_directories(out);
  io::save_idx(train, (out / "train-images-idx3-ubyte").string(), (out / "train-labels-idx1-ubyte").string());
  io::save_idx(eval, (out / "eval-images-idx3-ubyte").string(), (out / "eval-labels-idx1-ubyte").string());
  std::cout << "wrote " << train.count() << " train and " << eval.count() << " eval images to " << out.string() << "\n";
}

void extract(const io::RunConfig& cfg, const fs::path& out) {
  const auto data = io::load_data<float>(cfg);
  fs::create_directories(out);
  io::save_features((out / "train.sfea").string(), data.train);
  io::save_features((out / "eval.sfea").string(), data.eval);
  std::cout << "wrote " << data.train.size() << " train and " << data.eval.size() << " eval feature tensors to "
            << out.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compute-bounded continual learning with wake/sleep consolidation"};
  app.require_subcommand(1);

  ConfigArgs fit_args, run_args, sweep_args, synth_args, extract_args, show_args;
  std::string fit_out, run_out, sweep_out, synth_out = "data", extract_out = "features";
  std::vector<std::string> vary, stat_runs;

  auto* fit_cmd = app.add_subcommand("fit-base", "fit PQ and the base model, save codec and checkpoint");
  add_config_options(fit_cmd, fit_args);
  fit_cmd->add_option("-o,--out", fit_out, "output directory (overrides output.dir)");

  auto* run_cmd = app.add_subcommand("run", "run one experiment and emit metrics");
  add_config_options(run_cmd, run_args);
  run_cmd->add_option("-o,--out", run_out, "output directory (overrides output.dir)");

  auto* sweep_cmd = app.add_subcommand("sweep", "run the cartesian product of --vary axes");
  add_config_options(sweep_cmd, sweep_args);
  sweep_cmd->add_option("-o,--out", sweep_out, "output root (overrides output.dir)");
  sweep_cmd->add_option("--vary", vary, "axis as key=v1,v2 (use ; to separate list-valued entries)")->take_all();

  auto* stats_cmd = app.add_subcommand("stats", "McNemar (2 runs) or Cochran's Q (3+ runs) on final predictions");
  stats_cmd->add_option("runs", stat_runs, "run directories or predictions.csv files")->required();

  auto* synth_cmd = app.add_subcommand("synth", "write the synthetic glyph dataset as IDX files");
  add_config_options(synth_cmd, synth_args);
  synth_cmd->add_option("-o,--out", synth_out, "output directory");

  auto* extract_cmd = app.add_subcommand("extract", "run the frozen extractor and write feature files");
  add_config_options(extract_cmd, extract_args);
  extract_cmd->add_option("-o,--out", extract_out, "output directory");

  auto* show_cmd = app.add_subcommand("show-config", "print the resolved configuration");
  add_config_options(show_cmd, show_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorCategory::usage);
  }

  try {
    if (*fit_cmd) {
      const auto cfg = resolve(fit_args, fit_out);
      cfg.precision == "double" ? fit_base<double>(cfg) : fit_base<float>(cfg);
    } else if (*run_cmd) {
      const auto cfg = resolve(run_args, run_out);
      std::cout << summarize(run_config(cfg)) << "\nwrote " << cfg.output_dir << "\n";
    } else if (*sweep_cmd) {
      sweep(sweep_args, sweep_out, vary);
    } else if (*stats_cmd) {
      stats(stat_runs);
    } else if (*synth_cmd) {
      synth(resolve(synth_args), synth_out);
    } else if (*extract_cmd) {
      extract(resolve(extract_args), extract_out);
    } else if (*show_cmd) {
      std::cout << io::echo_config(resolve(show_args));
    }
  } catch (const Error& e) {
    std::cerr << "error [" << category_name(e.category()) << "]: " << e.what() << "\n";
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
