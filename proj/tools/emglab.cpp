#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "emglab/harness.hpp"
#include "emglab/recording_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace emglab;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<std::string> model;
  std::optional<std::string> experiment;
  std::optional<int> subjects;
  std::optional<int> threads;
  std::optional<int> max_epochs;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("-c,--config", o.config_path, "TOML-style config file");
  cmd->add_option("--set", o.sets, "override a setting, e.g. --set synth.snr_db=25");
  cmd->add_option("--seed", o.seed, "base RNG seed (required here or in the config)");
  cmd->add_option("-o,--out", o.out_dir, "output directory");
  cmd->add_option("--model", o.model, "sdcnn | dcnn | cnnsc | ecnn");
  cmd->add_option("--experiment", o.experiment,
                  "in_domain | domain_divergent | out_of_domain");
  cmd->add_option("--subjects", o.subjects, "number of synthetic subjects");
  cmd->add_option("--threads", o.threads, "worker threads (0 = hardware)");
  cmd->add_option("--max-epochs", o.max_epochs, "training epoch cap");
}

harness::ExperimentConfig build_config(const CommonOpts& o) {
  harness::ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = harness::load_config(o.config_path);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    }
    harness::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.seed_set = true;
  }
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (o.model) cfg.model = models::model_kind_from_name(*o.model);
  if (o.experiment) cfg.experiment = harness::experiment_from_name(*o.experiment);
  if (o.subjects) cfg.subjects = *o.subjects;
  if (o.threads) cfg.threads = *o.threads;
  if (o.max_epochs) cfg.train.max_epochs = *o.max_epochs;
  if (!cfg.seed_set) {
    throw ConfigError("a seed is required: pass --seed or set run.seed in the config");
  }
  return cfg;
}

// Static dataset over all trials: trial 0 is the validation split everywhere.
struct SplitDataset {
  models::Dataset train, valid;
};

SplitDataset full_static_split(const harness::DatasetBundle& bundle) {
  std::vector<const dsp::FrameSequence*> train_seqs, valid_seqs;
  for (const auto& per_class : bundle.static_trials) {
    valid_seqs.push_back(&per_class[0]);
    for (std::size_t t = 1; t < per_class.size(); ++t) train_seqs.push_back(&per_class[t]);
  }
  return {harness::concat_sequences(train_seqs), harness::concat_sequences(valid_seqs)};
}

models::TrainedModel train_full_model(const harness::ExperimentConfig& cfg,
                                      const harness::DatasetBundle& bundle) {
  auto split = full_static_split(bundle);
  models::ModelSpec spec;
  spec.kind = cfg.model;
  spec.input_h = cfg.synth.grid_h;
  spec.input_w = cfg.synth.grid_w;
  spec.class_ids.resize(static_cast<std::size_t>(cfg.synth.num_classes));
  for (int c = 0; c < cfg.synth.num_classes; ++c) {
    spec.class_ids[static_cast<std::size_t>(c)] = c;
  }
  spec.triplet = cfg.triplet;
  spec.center = cfg.center;
  spec.ecnn = cfg.ecnn;
  models::TrainConfig tc = cfg.train;
  tc.learning_rate = cfg.resolved_learning_rate();
  tc.seed = derive_seed(cfg.seed, 0x9F00, static_cast<std::uint64_t>(cfg.model));
  return models::train(spec, split.train, split.valid, tc);
}

int cmd_synth(const harness::ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  synth::SynthConfig scfg = cfg.synth;
  scfg.seed = cfg.seed;
  Rng template_rng(derive_seed(cfg.seed, 0x7001));
  auto templates = synth::make_gesture_templates(scfg, template_rng);

  json manifest;
  manifest["schema_version"] = 1;
  manifest["seed"] = cfg.seed;
  manifest["config_hash"] = cfg.config_hash();
  manifest["num_classes"] = scfg.num_classes;
  manifest["trials_per_class"] = scfg.trials_per_class;
  json files = json::array();
  for (int c = 0; c < scfg.num_classes; ++c) {
    for (int t = 0; t < scfg.trials_per_class; ++t) {
      Rng rng(derive_seed(cfg.seed, 0x7100, static_cast<std::uint64_t>(c),
                          static_cast<std::uint64_t>(t)));
      auto rec = synth::synth_static_trial(templates[static_cast<std::size_t>(c)], scfg, rng);
      char name[64];
      std::snprintf(name, sizeof(name), "static_c%d_t%02d.emgrec", c, t);
      harness::save_recording(rec, (fs::path(cfg.out_dir) / name).string());
      files.push_back({{"path", name}, {"class", c}, {"trial", t}});
    }
  }
  manifest["static"] = std::move(files);

  const auto order = cfg.resolved_dynamic_order();
  Rng dyn_rng(derive_seed(cfg.seed, 0x7200));
  auto dyn = synth::synth_dynamic_sequence(templates, order, scfg, dyn_rng);
  harness::save_recording(dyn, (fs::path(cfg.out_dir) / "dynamic.emgrec").string());
  manifest["dynamic"] = {{"path", "dynamic.emgrec"}, {"order", order}};

  std::ofstream out(fs::path(cfg.out_dir) / "dataset.json");
  out << manifest.dump(2) << "\n";
  std::cout << "wrote " << scfg.num_classes * scfg.trials_per_class
            << " static trials and 1 dynamic sequence to " << cfg.out_dir << "\n";
  return 0;
}

int cmd_train(const harness::ExperimentConfig& cfg, const std::string& checkpoint) {
  auto bundle = harness::make_dataset(cfg, cfg.seed, false);
  auto model = train_full_model(cfg, bundle);
  const std::string path = checkpoint.empty()
                               ? (fs::path(cfg.out_dir) /
                                  (models::model_kind_name(cfg.model) + ".ckpt"))
                                     .string()
                               : checkpoint;
  fs::create_directories(fs::path(path).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(path).parent_path());
  models::save_checkpoint(model, path);
  std::cout << "trained " << models::model_kind_name(cfg.model) << " for "
            << model.log.epochs_run << " epochs (best epoch " << model.log.best_epoch
            << "), checkpoint: " << path << "\n";
  return 0;
}

int cmd_eval(const harness::ExperimentConfig& cfg) {
  auto result = harness::run_experiment(cfg);
  harness::emit_report(result, cfg.out_dir);
  std::cout << "experiment " << harness::experiment_name(cfg.experiment) << " / "
            << models::model_kind_name(cfg.model) << " over " << cfg.subjects
            << " subjects\n";
  std::ifstream summary(fs::path(cfg.out_dir) / "summary.txt");
  std::cout << summary.rdbuf();
  std::cout << "report: " << (fs::path(cfg.out_dir) / "report.json").string() << "\n";
  return 0;
}

int cmd_replay(const harness::ExperimentConfig& cfg,
               const std::vector<std::string>& checkpoints, const std::string& sequence) {
  if (checkpoints.empty()) throw ConfigError("replay needs at least one --checkpoint");
  std::vector<models::TrainedModel> trained;
  for (const auto& path : checkpoints) trained.push_back(models::load_checkpoint(path));

  dsp::FrameSequence dynamic;
  if (!sequence.empty()) {
    auto rec = harness::load_recording(sequence);
    dynamic = dsp::to_frames(dsp::preprocess(rec, cfg.filter),
                             cfg.frames.dynamic_increment_ms, cfg.synth.grid_h,
                             cfg.synth.grid_w, cfg.filter.mav_window_ms);
  } else {
    dynamic = harness::make_dataset(cfg, cfg.seed, true).dynamic;
  }

  auto result = harness::run_online_replay(cfg, trained, dynamic);
  harness::emit_replay(result, cfg, cfg.out_dir);
  if (result.reachable) {
    std::cout << "zero FPR first reached by " << result.first_model << " at "
              << result.common_rejection_rate * 100.0 << "% rejection\n";
  } else {
    std::cout << "no model reaches zero FPR at any rejection rate\n";
  }
  for (const auto& m : result.models) {
    std::printf("  %-6s threshold=%.6g rejection=%.2f%% fpr=%.4f active_acc=%.4f\n",
                m.model_name.c_str(), m.threshold, m.rejection_rate * 100.0, m.fpr,
                m.active_accuracy);
  }
  std::cout << "timelines in " << cfg.out_dir << "\n";
  return 0;
}

void write_projection_csv(const fs::path& path, const tensor::Tensor& points,
                          const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "x,y,label\n";
  char buf[96];
  for (int i = 0; i < points.dim(0); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d\n", points.at(i, 0), points.at(i, 1),
                  labels[static_cast<std::size_t>(i)]);
    out << buf;
  }
}

int cmd_project(const harness::ExperimentConfig& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("project needs --checkpoint");
  auto model = models::load_checkpoint(checkpoint);
  auto bundle = harness::make_dataset(cfg, cfg.seed, true);
  auto split = full_static_split(bundle);
  models::Dataset dynamic = harness::concat_sequences({&bundle.dynamic});

  fs::create_directories(cfg.out_dir);
  json meta;
  meta["schema_version"] = 1;
  meta["checkpoint"] = checkpoint;

  // learned embedding space, PCA fit on the training frames only
  {
    auto train_emb = model.net.embed(split.train.frames);
    auto dyn_emb = model.net.embed(dynamic.frames);
    auto pca = eval::pca_project(train_emb, {dyn_emb}, 2);
    write_projection_csv(fs::path(cfg.out_dir) / "embedding_train.csv",
                         pca.projections[0], split.train.labels);
    write_projection_csv(fs::path(cfg.out_dir) / "embedding_dynamic.csv",
                         pca.projections[1], dynamic.labels);
    meta["embedding_explained_variance"] = pca.explained_variance;
  }
  // raw input space (flattened frames)
  {
    const auto flatten = [](const models::Dataset& ds) {
      const int n = ds.frames.dim(0);
      const int d = ds.frames.dim(1) * ds.frames.dim(2);
      return ds.frames.reshaped({n, d});
    };
    auto pca = eval::pca_project(flatten(split.train), {flatten(dynamic)}, 2);
    write_projection_csv(fs::path(cfg.out_dir) / "input_train.csv", pca.projections[0],
                         split.train.labels);
    write_projection_csv(fs::path(cfg.out_dir) / "input_dynamic.csv", pca.projections[1],
                         dynamic.labels);
    meta["input_explained_variance"] = pca.explained_variance;
  }
  std::ofstream out(fs::path(cfg.out_dir) / "projection.json");
  out << meta.dump(2) << "\n";
  std::cout << "projections written to " << cfg.out_dir << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_path) {
  if (inputs.empty()) throw ConfigError("report needs at least one report.json input");
  std::string table =
      "experiment        model  acc_test acc_ref  d_kl    auroc   auprc   auarc\n";
  const auto fmt = [](const json& v) -> std::string {
    if (v.is_null()) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v.get<double>());
    return buf;
  };
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw DataError(path + " is not valid JSON: " + e.what());
    }
    const auto& mean = j.at("mean");
    char line[256];
    std::snprintf(line, sizeof(line), "%-17s %-6s %-8s %-8s %-7s %-7s %-7s %-7s\n",
                  j.at("experiment").get<std::string>().c_str(),
                  j.at("model").get<std::string>().c_str(),
                  fmt(mean.at("acc_test")).c_str(), fmt(mean.at("acc_ref")).c_str(),
                  fmt(mean.at("d_kl")).c_str(), fmt(mean.at("auroc")).c_str(),
                  fmt(mean.at("auprc")).c_str(), fmt(mean.at("auarc")).c_str());
    table += line;
  }
  if (out_path.empty()) {
    std::cout << table;
  } else {
    std::ofstream out(out_path);
    out << table;
    std::cout << "summary written to " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic HD-EMG metric-learning laboratory"};
  app.require_subcommand(1);

  CommonOpts synth_o, train_o, eval_o, replay_o, project_o;
  std::string train_checkpoint;
  std::vector<std::string> replay_checkpoints;
  std::string replay_sequence;
  std::string project_checkpoint;
  std::vector<std::string> report_inputs;
  std::string report_out;

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset as .emgrec files");
  add_common(synth_cmd, synth_o);
  auto* train_cmd = app.add_subcommand("train", "train one model on the static dataset");
  add_common(train_cmd, train_o);
  train_cmd->add_option("--checkpoint", train_checkpoint, "checkpoint output path");
  auto* eval_cmd = app.add_subcommand("eval", "run a LOOCV experiment and emit a report");
  add_common(eval_cmd, eval_o);
  auto* replay_cmd =
      app.add_subcommand("replay", "frame-by-frame rejection replay on a dynamic sequence");
  add_common(replay_cmd, replay_o);
  replay_cmd->add_option("--checkpoint", replay_checkpoints, "trained model checkpoint(s)");
  replay_cmd->add_option("--sequence", replay_sequence, ".emgrec dynamic sequence");
  auto* project_cmd = app.add_subcommand("project", "PCA projections of the feature spaces");
  add_common(project_cmd, project_o);
  project_cmd->add_option("--checkpoint", project_checkpoint, "trained model checkpoint");
  auto* report_cmd = app.add_subcommand("report", "merge report.json files into a summary table");
  report_cmd->add_option("--inputs", report_inputs, "report.json files")->required();
  report_cmd->add_option("-o,--out", report_out, "summary output file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) return cmd_synth(build_config(synth_o));
    if (train_cmd->parsed()) return cmd_train(build_config(train_o), train_checkpoint);
    if (eval_cmd->parsed()) return cmd_eval(build_config(eval_o));
    if (replay_cmd->parsed()) {
      return cmd_replay(build_config(replay_o), replay_checkpoints, replay_sequence);
    }
    if (project_cmd->parsed()) return cmd_project(build_config(project_o), project_checkpoint);
    if (report_cmd->parsed()) return cmd_report(report_inputs, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
