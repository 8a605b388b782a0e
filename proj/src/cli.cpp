#include "ser/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ser/analyze.hpp"
#include "ser/audio.hpp"
#include "ser/dsp.hpp"
#include "ser/error.hpp"
#include "ser/model.hpp"
#include "ser/train.hpp"

namespace ser::cli {

namespace fs = std::filesystem;
using Scalar = float;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) parts.push_back(trim(part));
  return parts;
}

}  // namespace

std::map<std::string, std::string> load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  std::map<std::string, std::string> flags;
  std::map<std::string, int> first_seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": empty key");
    if (auto it = first_seen.find(key); it != first_seen.end()) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": duplicate key '" + key +
                                             "' (first set on line " + std::to_string(it->second) + ")");
    }
    first_seen[key] = line_no;
    flags[key] = value;
  }
  return flags;
}

namespace {

struct ModelFlags {
  std::string variant = "s";
  std::string input = "spectrogram";
  std::optional<int> kernels;
  std::optional<int> fc_width;
  double dropout = 0.5;
  double lambda1 = 4.0;
  double lambda2 = 1.0;
  std::string center_metric = "l2";
  std::string decoder_hidden = "256";
  std::string fc_order = "bn-relu";
};

struct TrainFlags {
  int epochs = 50;
  int batch_size = 16;
  int patience = 10;
  double rho = 0.95;
  double epsilon = 1e-6;
};

struct DataFlags {
  std::string manifest;
  std::string features;
};

struct SelectFlags {
  std::string split = "test";
  int fold = 1;
};

void add_model_flags(CLI::App* app, ModelFlags& f, bool allow_all_variants) {
  app->add_option("--variant", f.variant,
                  allow_all_variants ? "s, s+a, s+c, s+a+c or all" : "s, s+a, s+c or s+a+c")
      ->capture_default_str();
  app->add_option("--input", f.input, "spectrogram or mfcc")->capture_default_str();
  app->add_option("--kernels", f.kernels, "kernels per conv path (default 200)");
  app->add_option("--fc-width", f.fc_width, "width of the embedding layer (default 64)");
  app->add_option("--dropout", f.dropout, "dropout rate in [0.25, 0.75]")->capture_default_str();
  app->add_option("--lambda1", f.lambda1, "center-loss weight")->capture_default_str();
  app->add_option("--lambda2", f.lambda2, "reconstruction-loss weight")->capture_default_str();
  app->add_option("--center-metric", f.center_metric, "l2 or l1")->capture_default_str();
  app->add_option("--decoder-hidden", f.decoder_hidden, "comma-separated decoder hidden widths")
      ->capture_default_str();
  app->add_option("--fc-order", f.fc_order, "bn-relu or relu-bn, inside both FC blocks")->capture_default_str();
}

void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--epochs", f.epochs)->capture_default_str();
  app->add_option("--batch-size", f.batch_size)->capture_default_str();
  app->add_option("--patience", f.patience, "epochs without validation improvement")->capture_default_str();
  app->add_option("--rho", f.rho, "Adadelta decay")->capture_default_str();
  app->add_option("--epsilon", f.epsilon, "Adadelta stabilizer")->capture_default_str();
}

void add_data_flags(CLI::App* app, DataFlags& f) {
  app->add_option("--manifest", f.manifest, "corpus manifest CSV")->required();
  app->add_option("--features", f.features, "SERF cache directory (default <manifest dir>/cache/<input>)");
}

void add_select_flags(CLI::App* app, SelectFlags& f) {
  app->add_option("--split", f.split, "test, validation, train or all")->capture_default_str();
  app->add_option("--fold", f.fold, "fold index 1..5")->capture_default_str();
}

model::ModelConfig make_config(const ModelFlags& f, model::Variant variant, std::uint64_t seed) {
  auto cfg = model::ModelConfig::defaults(dsp::parse_feature_kind(f.input), variant);
  if (f.kernels) cfg.kernels_per_path = *f.kernels;
  if (f.fc_width) cfg.fc_width = *f.fc_width;
  cfg.dropout_rate = f.dropout;
  cfg.lambda1 = f.lambda1;
  cfg.lambda2 = f.lambda2;
  if (f.center_metric == "l2") {
    cfg.center_metric = model::CenterMetric::L2;
  } else if (f.center_metric == "l1") {
    cfg.center_metric = model::CenterMetric::L1;
  } else {
    throw Error(ErrorCode::UsageError, "--center-metric must be l2 or l1");
  }
  if (f.fc_order != "bn-relu" && f.fc_order != "relu-bn") {
    throw Error(ErrorCode::UsageError, "--fc-order must be bn-relu or relu-bn");
  }
  cfg.fc_order = model::parse_fc_order(f.fc_order);
  cfg.decoder_hidden.clear();
  for (const auto& w : split(f.decoder_hidden, ',')) {
    if (w.empty()) continue;
    try {
      cfg.decoder_hidden.push_back(std::stoi(w));
    } catch (const std::exception&) {
      throw Error(ErrorCode::UsageError, "--decoder-hidden expects integers, got '" + w + "'");
    }
  }
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

train::TrainOptions make_options(const TrainFlags& f, std::uint64_t seed) {
  train::TrainOptions o;
  o.epochs = f.epochs;
  o.batch_size = f.batch_size;
  o.patience = f.patience;
  o.rho = f.rho;
  o.epsilon = f.epsilon;
  o.seed = seed;
  return o;
}

fs::path feature_dir(const DataFlags& d, dsp::FeatureKind kind) {
  if (!d.features.empty()) return d.features;
  return fs::path(d.manifest).parent_path() / "cache" / dsp::feature_kind_name(kind);
}

// Featurizes any entry whose SERF file is missing, then loads the cache.
train::FeatureStore ensure_features(const audio::CorpusManifest& manifest, dsp::FeatureKind kind,
                                    const fs::path& dir, std::ostream& err) {
  audio::CorpusManifest missing = manifest;
  missing.entries.clear();
  for (const auto& e : manifest.entries) {
    if (!fs::exists(train::feature_path(dir, e))) missing.entries.push_back(e);
  }
  if (!missing.entries.empty()) {
    err << "featurizing " << missing.entries.size() << " clips into " << dir.string() << "\n";
    train::build_feature_cache(missing, kind, dir);
  }
  return train::FeatureStore::load(dir, manifest);
}

std::vector<audio::DatasetEntry> select(const audio::CorpusManifest& manifest, const SelectFlags& f) {
  if (f.split == "all") return manifest.entries;
  const auto plans = train::make_fold_plans(manifest);
  if (f.fold < 1 || f.fold > static_cast<int>(plans.size())) {
    throw Error(ErrorCode::UsageError, "--fold must be in 1..5");
  }
  const auto& plan = plans[static_cast<std::size_t>(f.fold - 1)];
  if (f.split == "test") return train::select_entries(manifest, plan, train::Split::Test);
  if (f.split == "validation") return train::select_entries(manifest, plan, train::Split::Validation);
  if (f.split == "train") return train::select_entries(manifest, plan, train::Split::Train);
  throw Error(ErrorCode::UsageError, "--split must be test, validation, train or all");
}

class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : path_(path) {
    if (path.empty() || path == "-") {
      stream_ = &fallback;
      return;
    }
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
      std::error_code ec;
      fs::create_directories(parent, ec);
    }
    file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
    if (!*file_) throw Error(ErrorCode::IoError, "cannot write " + path);
    stream_ = file_.get();
  }
  std::ostream& stream() { return *stream_; }
  void close() {
    if (!file_) return;
    file_->close();
    if (!*file_) throw Error(ErrorCode::IoError, "failed writing " + path_);
  }

 private:
  std::string path_;
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_ = nullptr;
};

fs::path sidecar_path(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p.replace_extension(".json");
  return p;
}

void write_sidecar(const fs::path& checkpoint, const model::ModelConfig& cfg, const train::TrainOptions& opts,
                   int fold, int best_epoch) {
  auto j = nlohmann::ordered_json::object();
  j["model"] = nlohmann::ordered_json::parse(model::config_to_json(cfg));
  auto t = nlohmann::ordered_json::object();
  t["fold"] = fold;
  t["epochs"] = opts.epochs;
  t["batch_size"] = opts.batch_size;
  t["patience"] = opts.patience;
  t["rho"] = opts.rho;
  t["epsilon"] = opts.epsilon;
  t["seed"] = opts.seed;
  t["best_epoch"] = best_epoch;
  j["training"] = t;
  Output out(sidecar_path(checkpoint).string(), std::cout);
  out.stream() << j.dump(2) << '\n';
  out.close();
}

model::Model<Scalar> load_model(const fs::path& checkpoint) {
  std::ifstream in(sidecar_path(checkpoint));
  if (!in) throw Error(ErrorCode::FileNotFound, sidecar_path(checkpoint).string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, sidecar_path(checkpoint).string() + ": " + e.what());
  }
  if (!j.contains("model")) throw Error(ErrorCode::FormatError, "sidecar lacks a model section");
  model::Model<Scalar> m(model::config_from_json(j["model"].dump()));
  m.load_state(ag::load_checkpoint(checkpoint));
  return m;
}

void log_resolved(const CLI::App* sub, std::uint64_t seed, std::ostream& err) {
  err << "# " << sub->get_name() << "\n";
  for (const auto* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      if (opt->get_expected_max() > 1) {
        for (std::size_t i = 0; i < results.size(); ++i) value += (i ? "," : "") + results[i];
      } else {
        value = results.back();
      }
    } else {
      value = opt->get_default_str();
    }
    err << name << " = " << value << "\n";
  }
  err << "# seed fan-out: corpus/init/shuffle/dropout/tsne all derive from " << seed << "\n";
}

std::optional<std::string> find_config_arg(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

bool flag_given(const std::vector<std::string>& args, const std::string& key) {
  const std::string flag = "--" + key;
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

// Places config-file values ahead of the explicit flags so the latter win.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  const auto path = find_config_arg(args);
  if (!path || args.empty()) return args;
  std::vector<std::string> merged{args.front()};
  for (const auto& [key, value] : load_config(*path)) {
    if (flag_given(args, key)) continue;
    merged.push_back("--" + key);
    merged.push_back(value);
  }
  merged.insert(merged.end(), args.begin() + 1, args.end());
  return merged;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speech emotion recognition with joint softmax, center and reconstruction losses", "ser"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::uint64_t seed = 0;
  std::string config_path;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "master seed")->capture_default_str();
    sub->add_option("--config", config_path, "flat key = value file; explicit flags override it");
  };

  // synth
  audio::SynthOptions synth_opts;
  std::string synth_out, imbalance;
  auto* synth = app.add_subcommand("synth", "write a synthetic labelled corpus and manifest");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--per-class", synth_opts.per_class, "clips per class per session")->capture_default_str();
  synth->add_option("--sessions", synth_opts.sessions)->capture_default_str();
  synth->add_option("--imbalance", imbalance, "class percentages neutral,happiness,sadness,anger");
  synth->add_option("--total", synth_opts.total, "clip count when --imbalance is set")->capture_default_str();
  common(synth);

  // featurize
  std::string feat_input = "spectrogram", feat_manifest, feat_out;
  auto* featurize = app.add_subcommand("featurize", "cache one SERF feature file per manifest entry");
  featurize->add_option("--input", feat_input, "spectrogram or mfcc")->capture_default_str();
  featurize->add_option("--manifest", feat_manifest)->required();
  featurize->add_option("--out", feat_out, "cache directory")->required();
  common(featurize);

  // train
  ModelFlags train_model_flags;
  TrainFlags train_flags;
  DataFlags train_data;
  int train_fold = 1;
  std::string train_out, train_curve, train_report;
  auto* train_cmd = app.add_subcommand("train", "train one fold and write a SERC checkpoint");
  add_model_flags(train_cmd, train_model_flags, false);
  add_train_flags(train_cmd, train_flags);
  add_data_flags(train_cmd, train_data);
  train_cmd->add_option("--fold", train_fold, "fold index 1..5")->capture_default_str();
  train_cmd->add_option("--out", train_out, "checkpoint path (.serc); a .json sidecar is written next to it")
      ->required();
  train_cmd->add_option("--curve", train_curve, "training-curve CSV");
  train_cmd->add_option("--report", train_report, "test metrics CSV");
  common(train_cmd);

  // cv
  ModelFlags cv_model_flags;
  TrainFlags cv_flags;
  DataFlags cv_data;
  int jobs = 1;
  std::string cv_report = "-";
  auto* cv = app.add_subcommand("cv", "five-fold session-held-out cross-validation");
  add_model_flags(cv, cv_model_flags, true);
  add_train_flags(cv, cv_flags);
  add_data_flags(cv, cv_data);
  cv->add_option("--report", cv_report, "report CSV ('-' for stdout)")->capture_default_str();
  cv->add_option("--jobs", jobs, "folds trained concurrently")->capture_default_str();
  common(cv);

  // eval
  std::string eval_ckpt, eval_report = "-";
  DataFlags eval_data;
  SelectFlags eval_select;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt)->required();
  add_data_flags(eval, eval_data);
  add_select_flags(eval, eval_select);
  eval->add_option("--report", eval_report, "metrics CSV ('-' for stdout)")->capture_default_str();
  common(eval);

  // embed
  std::string embed_ckpt, embed_out;
  DataFlags embed_data;
  SelectFlags embed_select;
  int embed_per_class = 250;
  auto* embed = app.add_subcommand("embed", "export embeddings as label,e0,e1,...");
  embed->add_option("--checkpoint", embed_ckpt)->required();
  add_data_flags(embed, embed_data);
  add_select_flags(embed, embed_select);
  embed->add_option("--per-class", embed_per_class)->capture_default_str();
  embed->add_option("--out", embed_out)->required();
  common(embed);

  // tsne
  std::string tsne_in, tsne_out, tsne_kl;
  analyze::TsneConfig tsne_cfg;
  auto* tsne = app.add_subcommand("tsne", "exact 2-D t-SNE of an embedding CSV");
  tsne->add_option("--embeddings", tsne_in)->required();
  tsne->add_option("--out", tsne_out)->required();
  tsne->add_option("--perplexity", tsne_cfg.perplexity)->capture_default_str();
  tsne->add_option("--iterations", tsne_cfg.iterations)->capture_default_str();
  tsne->add_option("--learning-rate", tsne_cfg.learning_rate)->capture_default_str();
  tsne->add_option("--kl-trace", tsne_kl, "CSV of iteration,kl");
  common(tsne);

  // recon-report
  std::vector<std::string> recon_ckpts;
  DataFlags recon_data;
  SelectFlags recon_select;
  std::string recon_out = "-";
  auto* recon = app.add_subcommand("recon-report", "reconstruction MSE of decoder variants");
  recon->add_option("--checkpoint", recon_ckpts, "repeatable")->required()->multi_option_policy(
      CLI::MultiOptionPolicy::TakeAll);
  add_data_flags(recon, recon_data);
  add_select_flags(recon, recon_select);
  recon->add_option("--out", recon_out, "report CSV ('-' for stdout)")->capture_default_str();
  common(recon);

  try {
    std::vector<std::string> merged = merge_config(args);
    std::reverse(merged.begin(), merged.end());
    app.parse(merged);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  log_resolved(sub, seed, err);

  try {
    if (sub == synth) {
      synth_opts.seed = seed;
      if (!imbalance.empty()) {
        const auto parts = split(imbalance, ',');
        if (parts.size() != kNumClasses) throw Error(ErrorCode::UsageError, "--imbalance needs four percentages");
        std::array<double, kNumClasses> pct{};
        for (std::size_t i = 0; i < parts.size(); ++i) {
          try {
            pct[i] = std::stod(parts[i]);
          } catch (const std::exception&) {
            throw Error(ErrorCode::UsageError, "--imbalance: bad number '" + parts[i] + "'");
          }
        }
        synth_opts.imbalance_percent = pct;
      }
      const auto manifest = audio::synth_corpus(synth_opts, synth_out);
      err << "wrote " << manifest.entries.size() << " clips to " << synth_out << "\n";
    } else if (sub == featurize) {
      const auto manifest = audio::read_manifest(feat_manifest);
      train::build_feature_cache(manifest, dsp::parse_feature_kind(feat_input), feat_out);
      err << "cached " << manifest.entries.size() << " feature files in " << feat_out << "\n";
    } else if (sub == train_cmd) {
      const auto cfg = make_config(train_model_flags, model::parse_variant(train_model_flags.variant), seed);
      const auto opts = make_options(train_flags, seed);
      const auto manifest = audio::read_manifest(train_data.manifest);
      const auto store = ensure_features(manifest, cfg.input_kind, feature_dir(train_data, cfg.input_kind), err);
      const auto plans = train::make_fold_plans(manifest);
      if (train_fold < 1 || train_fold > static_cast<int>(plans.size())) {
        throw Error(ErrorCode::UsageError, "--fold must be in 1..5");
      }
      auto fitted = train::fit<Scalar>(cfg, plans[static_cast<std::size_t>(train_fold - 1)], manifest, store, opts);
      if (const auto parent = fs::path(train_out).parent_path(); !parent.empty()) {
        std::error_code ec;
        fs::create_directories(parent, ec);
      }
      ag::save_checkpoint(train_out, fitted.model.state());
      write_sidecar(train_out, cfg, opts, train_fold, fitted.metrics.best_epoch);
      if (!train_curve.empty()) {
        Output curve(train_curve, out);
        train::write_curve(curve.stream(), fitted.metrics.train_curve);
        curve.close();
      }
      if (!train_report.empty()) {
        Output report(train_report, out);
        train::write_report_header(report.stream());
        train::write_metrics_row(report.stream(), cfg.variant, cfg.input_kind, std::to_string(train_fold),
                                 fitted.metrics);
        report.close();
      }
      err << "fold " << train_fold << ": overall " << train::format_number(fitted.metrics.overall_accuracy)
          << ", class " << train::format_number(fitted.metrics.class_accuracy) << "\n";
    } else if (sub == cv) {
      std::vector<model::Variant> variants;
      if (cv_model_flags.variant == "all") {
        variants.assign(model::kAllVariants.begin(), model::kAllVariants.end());
      } else {
        variants.push_back(model::parse_variant(cv_model_flags.variant));
      }
      const auto opts = make_options(cv_flags, seed);
      const auto manifest = audio::read_manifest(cv_data.manifest);
      const auto kind = dsp::parse_feature_kind(cv_model_flags.input);
      const auto store = ensure_features(manifest, kind, feature_dir(cv_data, kind), err);
      std::vector<train::CvResult> results;
      for (auto v : variants) {
        const auto cfg = make_config(cv_model_flags, v, seed);
        results.push_back(train::cross_validate<Scalar>(cfg, manifest, store, opts, jobs));
        err << model::variant_name(v) << ": overall " << train::format_number(results.back().mean_overall)
            << ", class " << train::format_number(results.back().mean_class) << "\n";
      }
      Output report(cv_report, out);
      train::write_report_header(report.stream());
      for (const auto& r : results) train::write_report_rows(report.stream(), r);
      report.close();
    } else if (sub == eval) {
      auto m = load_model(eval_ckpt);
      const auto manifest = audio::read_manifest(eval_data.manifest);
      const auto kind = m.config().input_kind;
      const auto store = ensure_features(manifest, kind, feature_dir(eval_data, kind), err);
      const auto entries = select(manifest, eval_select);
      const auto metrics = train::evaluate(m, entries, store);
      Output report(eval_report, out);
      train::write_report_header(report.stream());
      train::write_metrics_row(report.stream(), m.config().variant, kind,
                               eval_select.split == "all" ? std::string("all") : std::to_string(eval_select.fold),
                               metrics);
      report.close();
    } else if (sub == embed) {
      auto m = load_model(embed_ckpt);
      const auto manifest = audio::read_manifest(embed_data.manifest);
      const auto kind = m.config().input_kind;
      const auto store = ensure_features(manifest, kind, feature_dir(embed_data, kind), err);
      const auto entries = select(manifest, embed_select);
      const auto set = analyze::export_embeddings(m, entries, store, embed_per_class, seed);
      for (const auto& w : set.warnings) err << "warning: " << w << "\n";
      Output o(embed_out, out);
      analyze::write_embeddings(o.stream(), set);
      o.close();
    } else if (sub == tsne) {
      std::ifstream in(tsne_in);
      if (!in) throw Error(ErrorCode::FileNotFound, tsne_in);
      const auto set = analyze::read_embeddings(in);
      tsne_cfg.seed = seed;
      const auto result = analyze::tsne2d(set, tsne_cfg);
      Output o(tsne_out, out);
      analyze::write_tsne(o.stream(), set, result.coordinates);
      o.close();
      if (!tsne_kl.empty()) {
        Output kl(tsne_kl, out);
        kl.stream() << "iteration,kl\n";
        for (std::size_t i = 0; i < result.kl.size(); ++i) {
          kl.stream() << i + 1 << ',' << train::format_number(result.kl[i]) << '\n';
        }
        kl.close();
      }
      err << "final KL " << train::format_number(result.kl.back()) << "\n";
    } else if (sub == recon) {
      const auto manifest = audio::read_manifest(recon_data.manifest);
      std::vector<model::Model<Scalar>> models;
      for (const auto& c : recon_ckpts) models.push_back(load_model(c));
      std::vector<analyze::ReconstructionRow> rows;
      const auto entries = select(manifest, recon_select);
      for (auto& m : models) {
        const auto kind = m.config().input_kind;
        const auto store = ensure_features(manifest, kind, feature_dir(recon_data, kind), err);
        model::Model<Scalar>* ptr = &m;
        const auto r = analyze::reconstruction_report<Scalar>(std::span<model::Model<Scalar>* const>(&ptr, 1),
                                                              entries, store);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      Output o(recon_out, out);
      analyze::write_reconstruction_report(o.stream(), rows);
      o.close();
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::UsageError ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace ser::cli
