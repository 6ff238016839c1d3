// crits command-line entry point: synth, train, search, explain, eval, report.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <openssl/evp.h>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crits/crits.hpp"

namespace fs = std::filesystem;

namespace {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw crits::Error(crits::Errc::IoError, "sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

/// Collects the resolved options and every produced artifact of one command,
/// then writes them as flat key=value lines.
class Manifest {
 public:
  Manifest(std::string command, const CLI::App& app) : command_(std::move(command)) {
    for (const CLI::Option* opt : app.get_options()) {
      if (opt->get_name() == "--help" || opt->get_lnames().empty()) continue;
      std::string value;
      if (opt->count() > 0) {
        for (const std::string& r : opt->results()) value += (value.empty() ? "" : ",") + r;
      } else {
        value = opt->get_default_str();
      }
      options_[opt->get_lnames().front()] = value;
    }
  }

  void input(const std::string& key, const std::string& path) {
    inputs_[key] = path + "@sha256:" + sha256_hex(crits::read_text_file(path));
  }

  /// Writes `content` to out/name and records its hash.
  void artifact(const fs::path& out, const std::string& name, std::string_view content) {
    crits::write_text_file((out / name).string(), content);
    artifacts_[name] = sha256_hex(content);
  }

  void write(const fs::path& out) const {
    std::string s = "command=" + command_ + "\n";
    for (const auto& [k, v] : options_) s += "option." + k + "=" + v + "\n";
    for (const auto& [k, v] : inputs_) s += "input." + k + "=" + v + "\n";
    for (const auto& [k, v] : artifacts_) s += "artifact." + k + "=sha256:" + v + "\n";
    crits::write_text_file((out / ("manifest_" + command_ + ".txt")).string(), s);
  }

 private:
  std::string command_;
  std::map<std::string, std::string> options_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> artifacts_;
};

crits::TimeSeriesDataset load_dataset(const std::string& path, const std::string& format) {
  if (!fs::exists(path)) throw crits::Error(crits::Errc::IoError, "no such file: " + path);
  const std::string text = crits::read_text_file(path);
  const bool ts = format == "ts" || (format == "auto" && fs::path(path).extension() == ".ts");
  crits::TimeSeriesDataset ds = ts ? crits::parse_ts(text) : crits::parse_csv(text);
  if (ds.name.empty()) ds.name = fs::path(path).stem().string();
  return ds;
}

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& what) {
  std::vector<std::size_t> out;
  for (std::string_view tok : crits::split(text, ',')) {
    double v = 0;
    if (!crits::parse_double(tok, v) || v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
      throw crits::Error(crits::Errc::BadParams, "bad " + what + " entry '" + std::string(tok) + "'");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<double> parse_real_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (std::string_view tok : crits::split(text, ',')) {
    double v = 0;
    if (!crits::parse_double(tok, v)) throw crits::Error(crits::Errc::BadParams, "bad " + what + " entry");
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> parse_names(const std::string& text) {
  std::vector<std::string> out;
  for (std::string_view tok : crits::split(text, ',')) {
    if (!crits::trim(tok).empty()) out.emplace_back(crits::trim(tok));
  }
  return out;
}

fs::path prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw crits::Error(crits::Errc::IoError, "cannot create output directory " + out + ": " + ec.message());
  return fs::path(out);
}

struct Common {
  std::string data;
  std::string format = "auto";
  std::string out = "crits_out";
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
};

void add_data_options(CLI::App* app, Common& c, bool data_required = true) {
  auto* d = app->add_option("--data", c.data, "Dataset file (.ts or CSV)");
  if (data_required) d->required();
  app->add_option("--format", c.format, "Dataset format")
      ->check(CLI::IsMember({"auto", "ts", "csv"}))
      ->capture_default_str();
  app->add_option("--test-fraction", c.test_fraction, "Stratified test split fraction")->capture_default_str();
}

void add_out_seed(CLI::App* app, Common& c) {
  app->add_option("--out", c.out, "Output directory")->capture_default_str();
  app->add_option("--seed", c.seed, "Master seed for all randomness")->capture_default_str();
}

struct Normalized {
  crits::Split split;
  crits::NormStats norm;
};

Normalized split_and_normalize(const crits::TimeSeriesDataset& ds, const Common& c) {
  Normalized n;
  n.split = crits::stratified_split(ds, c.test_fraction, crits::derive_seed(c.seed, {0}));
  n.norm = crits::fit_norm(n.split.train);
  n.split.train = crits::apply_norm(n.norm, n.split.train);
  n.split.test = crits::apply_norm(n.norm, n.split.test);
  return n;
}

crits::Explainer make_explainer(const std::string& name, const std::vector<crits::Series>& baselines,
                                double sg_noise, std::size_t sg_samples, std::size_t shap_samples) {
  if (name == "intrinsic") return crits::intrinsic_explainer();
  if (name == "gradient") return crits::gradient_explainer();
  if (name == "smoothgrad") return crits::smoothgrad_explainer(sg_noise, sg_samples);
  if (name == "gradshap") return crits::gradient_shap_explainer(baselines, shap_samples);
  if (name == "uniform") return crits::uniform_explainer();
  if (name == "random") return crits::random_explainer();
  throw crits::Error(crits::Errc::BadParams, "unknown explainer '" + name + "'");
}

/// Up to 16 training instances, drawn per seed, as GradientSHAP references.
std::vector<crits::Series> sample_baselines(const crits::TimeSeriesDataset& train, std::uint64_t seed) {
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  crits::Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min<std::size_t>(16, idx.size()));
  std::vector<crits::Series> out;
  for (std::size_t i : idx) out.push_back(train.instances[i]);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crits: interpretable convolutional rectifier classifiers for time series"};
  app.require_subcommand(1);

  Common common;

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic bump dataset and its ground-truth mask");
  std::size_t synth_n = 400, synth_m = 1, synth_T = 64, synth_bump_len = 8;
  double synth_snr = 3.0;
  add_out_seed(synth, common);
  synth->add_option("--n", synth_n, "Instance count (even)")->capture_default_str();
  synth->add_option("--channels", synth_m, "Channel count m")->capture_default_str();
  synth->add_option("--length", synth_T, "Series length T")->capture_default_str();
  synth->add_option("--bump-len", synth_bump_len, "Bump length")->capture_default_str();
  synth->add_option("--snr", synth_snr, "Bump amplitude relative to unit noise")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train a model and save it with its history");
  std::size_t kernel_len = 8, kernels = 8, batch = 32, epochs = 200, patience = 30;
  std::string hidden = "16";
  double lr = 1e-3;
  add_data_options(train, common);
  add_out_seed(train, common);
  train->add_option("--kernel-len", kernel_len, "Kernel length h")->capture_default_str();
  train->add_option("--kernels", kernels, "Kernel count K")->capture_default_str();
  train->add_option("--hidden", hidden, "Hidden layer widths, comma separated")->capture_default_str();
  train->add_option("--epochs", epochs, "Maximum epochs")->capture_default_str();
  train->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
  train->add_option("--batch", batch, "Mini-batch size")->capture_default_str();
  train->add_option("--patience", patience, "Early-stop patience in epochs (0 = off)")->capture_default_str();

  // search
  auto* search = app.add_subcommand("search", "Random hyperparameter search");
  std::size_t samples = 500, trials = 2, search_epochs = 200, threads = 1;
  double search_lr = 1e-3;
  add_data_options(search, common);
  add_out_seed(search, common);
  search->add_option("--samples", samples, "Configurations to sample")->capture_default_str();
  search->add_option("--trials", trials, "Trainings per configuration")->capture_default_str();
  search->add_option("--epochs", search_epochs, "Maximum epochs per training")->capture_default_str();
  search->add_option("--lr", search_lr, "Adam learning rate")->capture_default_str();
  search->add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();

  // explain
  auto* explain = app.add_subcommand("explain", "Explain dataset instances with one or more explainers");
  std::string model_path, explainer_list = "intrinsic", instance_list = "0";
  double sg_noise = 0.1;
  std::size_t sg_samples = 32, shap_samples = 32;
  add_data_options(explain, common);
  add_out_seed(explain, common);
  explain->add_option("--model", model_path, "Model file")->required();
  explain->add_option("--explainer", explainer_list, "intrinsic,gradient,smoothgrad,gradshap,uniform,random")
      ->capture_default_str();
  explain->add_option("--instances", instance_list, "Dataset row indices, comma separated")->capture_default_str();
  explain->add_option("--sg-noise", sg_noise, "SmoothGrad noise std")->capture_default_str();
  explain->add_option("--sg-samples", sg_samples, "SmoothGrad sample count")->capture_default_str();
  explain->add_option("--shap-samples", shap_samples, "GradientSHAP sample count")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Run the alignment / input-sensitivity / sparsity protocol");
  std::string eval_explainers = "intrinsic,smoothgrad,gradshap", noise_grid = "1e-5,1e-4,1e-3,1e-2,1e-1";
  double q = 0.1;
  std::size_t window = 0, eval_samples = 50, repetitions = 5;
  std::string eval_model;
  add_data_options(eval, common);
  add_out_seed(eval, common);
  eval->add_option("--model", eval_model, "Model file")->required();
  eval->add_option("--explainer", eval_explainers, "Explainers to evaluate")->capture_default_str();
  eval->add_option("--q", q, "Fraction of cells perturbed")->capture_default_str();
  eval->add_option("--window", window, "Swap/mean window (0 = kernel length)")->capture_default_str();
  eval->add_option("--noise-grid", noise_grid, "Input-sensitivity noise levels")->capture_default_str();
  eval->add_option("--samples", eval_samples, "Test instances per repetition")->capture_default_str();
  eval->add_option("--repetitions", repetitions, "Repetitions")->capture_default_str();
  eval->add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();
  eval->add_option("--sg-noise", sg_noise, "SmoothGrad noise std")->capture_default_str();
  eval->add_option("--sg-samples", sg_samples, "SmoothGrad sample count")->capture_default_str();
  eval->add_option("--shap-samples", shap_samples, "GradientSHAP sample count")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Render an eval report or saliency CSV as SVG");
  std::string report_in;
  report->add_option("--in", report_in, "eval_report.csv or a saliency CSV")->required();
  report->add_option("--out", common.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) {
      const fs::path out = prepare_out(common.out);
      Manifest manifest("synth", *synth);
      const crits::SynthData sd = crits::synth_bump(synth_n, synth_m, synth_T, synth_bump_len, synth_snr, common.seed);
      manifest.artifact(out, "synth.csv", crits::to_csv(sd.dataset));
      manifest.artifact(out, "synth_mask.csv", crits::mask_to_csv(sd.mask));
      manifest.write(out);
    } else if (train->parsed()) {
      const crits::TimeSeriesDataset ds = load_dataset(common.data, common.format);
      const fs::path out = prepare_out(common.out);
      Manifest manifest("train", *train);
      manifest.input("data", common.data);
      const Normalized n = split_and_normalize(ds, common);
      crits::ModelConfig mc{kernel_len, kernels, parse_size_list(hidden, "hidden"), ds.channels, ds.length,
                            crits::derive_seed(common.seed, {1})};
      crits::TrainConfig tc;
      tc.learning_rate = lr;
      tc.batch_size = batch;
      tc.epochs = epochs;
      tc.patience = patience;
      tc.seed = crits::derive_seed(common.seed, {2});
      const crits::TrainResult result = crits::train_model(mc, tc, n.split.train, n.split.test, &n.norm);
      manifest.artifact(out, "model.txt", crits::serialize_model(result.model));
      manifest.artifact(out, "history.csv", crits::history_to_csv(result.history));
      manifest.write(out);
      const crits::EpochRecord& best = result.history[result.best_epoch];
      std::cout << "best epoch " << best.epoch << ": test loss " << best.test_loss << ", test F1 " << best.test_f1
                << "\n";
    } else if (search->parsed()) {
      const crits::TimeSeriesDataset ds = load_dataset(common.data, common.format);
      const fs::path out = prepare_out(common.out);
      Manifest manifest("search", *search);
      manifest.input("data", common.data);
      const Normalized n = split_and_normalize(ds, common);
      crits::SearchSpace space;
      space.samples = samples;
      space.trials = trials;
      space.threads = threads;
      crits::TrainConfig tc;
      tc.epochs = search_epochs;
      tc.learning_rate = search_lr;
      const crits::SearchResult result =
          crits::random_search(space, tc, n.split.train, n.split.test, crits::derive_seed(common.seed, {3}));
      manifest.artifact(out, "search_log.csv", crits::search_log_to_csv(result));
      std::string best = "kernel_len=" + std::to_string(result.best_config.kernel_len) +
                          "\nkernel_count=" + std::to_string(result.best_config.kernel_count) + "\nhidden=";
      for (std::size_t i = 0; i < result.best_config.hidden_sizes.size(); ++i) {
        best += (i ? "," : "") + std::to_string(result.best_config.hidden_sizes[i]);
      }
      best += "\nmean_f1=" + crits::format_double(result.best_f1) + "\n";
      manifest.artifact(out, "best_config.txt", best);
      manifest.write(out);
    } else if (explain->parsed()) {
      const crits::CritsModel model = crits::load_model(model_path);
      const crits::TimeSeriesDataset ds = load_dataset(common.data, common.format);
      const fs::path out = prepare_out(common.out);
      Manifest manifest("explain", *explain);
      manifest.input("data", common.data);
      manifest.input("model", model_path);
      const crits::TimeSeriesDataset normalized = crits::apply_norm(model.norm, ds);
      const crits::Split split = crits::stratified_split(normalized, common.test_fraction, crits::derive_seed(common.seed, {0}));
      const auto baselines = sample_baselines(split.train, crits::derive_seed(common.seed, {4}));
      for (std::size_t idx : parse_size_list(instance_list, "instance")) {
        if (idx >= normalized.size()) {
          throw crits::Error(crits::Errc::BadParams, "instance " + std::to_string(idx) + " out of range");
        }
        const crits::Series& x = normalized.instances[idx];
        for (const std::string& name : parse_names(explainer_list)) {
          const crits::Explainer ex = make_explainer(name, baselines, sg_noise, sg_samples, shap_samples);
          const crits::SaliencyMap map = ex.relevance(ex.explain(model, x, crits::derive_seed(common.seed, {5, idx})), x);
          const std::string stem = "explain_" + std::to_string(idx) + "_" + name;
          manifest.artifact(out, stem + ".csv", crits::saliency_to_csv(map));
          manifest.artifact(out, stem + ".svg", crits::svg::heatmap(map, "instance " + std::to_string(idx) + ", " + name));
        }
      }
      manifest.write(out);
    } else if (eval->parsed()) {
      const crits::CritsModel model = crits::load_model(eval_model);
      const crits::TimeSeriesDataset ds = load_dataset(common.data, common.format);
      const fs::path out = prepare_out(common.out);
      Manifest manifest("eval", *eval);
      manifest.input("data", common.data);
      manifest.input("model", eval_model);
      const crits::TimeSeriesDataset normalized = crits::apply_norm(model.norm, ds);
      const crits::Split split = crits::stratified_split(normalized, common.test_fraction, crits::derive_seed(common.seed, {0}));
      const auto baselines = sample_baselines(split.train, crits::derive_seed(common.seed, {4}));
      std::vector<crits::Explainer> explainers;
      for (const std::string& name : parse_names(eval_explainers)) {
        explainers.push_back(make_explainer(name, baselines, sg_noise, sg_samples, shap_samples));
      }
      crits::ProtocolConfig pc;
      pc.dataset = ds.name;
      pc.samples = eval_samples;
      pc.repetitions = repetitions;
      pc.fraction = q;
      pc.window = window;
      pc.noise_grid = parse_real_list(noise_grid, "noise grid");
      pc.threads = threads;
      const crits::EvalReport rep = crits::run_protocol(model, explainers, split.test, crits::derive_seed(common.seed, {6}), pc);
      manifest.artifact(out, "eval_report.csv", crits::report_to_csv(rep));
      manifest.write(out);
    } else if (report->parsed()) {
      const std::string text = crits::read_text_file(report_in);
      const fs::path out = prepare_out(common.out);
      Manifest manifest("report", *report);
      manifest.input("in", report_in);
      if (text.find("explainer,dataset,metric,setting,repetition,value") != std::string::npos) {
        const auto records = crits::report_records_from_csv(text);
        for (const char* metric : {"alignment", "input_sensitivity", "sparsity"}) {
          manifest.artifact(out, std::string(metric) + ".svg", crits::svg::boxplot(records, metric));
        }
      } else {
        const crits::SaliencyMap map = crits::saliency_from_csv(text);
        const std::string stem = fs::path(report_in).stem().string();
        manifest.artifact(out, stem + ".svg", crits::svg::heatmap(map, stem));
      }
      manifest.write(out);
    }
  } catch (const std::exception& e) {
    std::cerr << "crits: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
