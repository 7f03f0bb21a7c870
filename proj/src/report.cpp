#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "emglab/harness.hpp"

namespace emglab::harness {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

json number_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

json curve_to_json(const eval::CurvePoints& c) {
  json pts = json::array();
  for (const auto& [x, y] : c.points) pts.push_back({x, y});
  return {{"auc", c.auc}, {"points", std::move(pts)}};
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["experiment"] = experiment_name(cfg.experiment);
  j["model"] = models::model_kind_name(cfg.model);
  j["seed"] = cfg.seed;
  j["subjects"] = cfg.subjects;
  j["threads"] = cfg.threads;
  j["out_dir"] = cfg.out_dir;
  j["synth"] = {{"num_classes", cfg.synth.num_classes},
                {"trials_per_class", cfg.synth.trials_per_class},
                {"trial_seconds", cfg.synth.trial_seconds},
                {"sample_rate_hz", cfg.synth.sample_rate_hz},
                {"grid_h", cfg.synth.grid_h},
                {"grid_w", cfg.synth.grid_w},
                {"noise_band_lo_hz", cfg.synth.noise_band_lo_hz},
                {"noise_band_hi_hz", cfg.synth.noise_band_hi_hz},
                {"snr_db", cfg.synth.snr_db},
                {"jitter", cfg.synth.inter_trial_amplitude_jitter},
                {"transition_ms", cfg.synth.transition_ms},
                {"rest_class", cfg.synth.rest_class},
                {"dynamic_order", cfg.resolved_dynamic_order()}};
  j["filter"] = {{"hp_cutoff_hz", cfg.filter.hp_cutoff_hz},
                 {"hp_order", cfg.filter.hp_order},
                 {"lp_cutoff_hz", cfg.filter.lp_cutoff_hz},
                 {"lp_order", cfg.filter.lp_order},
                 {"notch_hz", cfg.filter.notch_hz},
                 {"notch_q", cfg.filter.notch_q},
                 {"dc_window_ms", cfg.filter.dc_window_ms},
                 {"mav_window_ms", cfg.filter.mav_window_ms}};
  j["frames"] = {{"static_increment_ms", cfg.frames.static_increment_ms},
                 {"dynamic_increment_ms", cfg.frames.dynamic_increment_ms}};
  j["train"] = {{"learning_rate", cfg.resolved_learning_rate()},
                {"batch_size", cfg.train.batch_size},
                {"patience", cfg.train.patience},
                {"min_delta", cfg.train.min_delta},
                {"max_epochs", cfg.train.max_epochs},
                {"best_epoch_recall", cfg.train.best_epoch_recall}};
  j["triplet"] = {{"margin_alpha", cfg.triplet.margin_alpha},
                  {"batch_size", cfg.triplet.batch_size}};
  j["center"] = {{"tau", cfg.center.tau}, {"center_lr", cfg.center.center_lr}};
  j["ecnn"] = {{"lambda_kl", cfg.ecnn.lambda_kl},
               {"evidence_activation",
                cfg.ecnn.evidence_activation == models::EcnnConfig::Activation::relu
                    ? "relu"
                    : "softplus"}};
  j["eval"] = {{"kl_bins", cfg.eval.kl_bins},
               {"kl_eps", cfg.eval.kl_eps},
               {"calibration_bins", cfg.eval.calibration_bins},
               {"fpr_denominator",
                cfg.eval.fpr_denominator == eval::FprDenominator::all_incorrect
                    ? "all_incorrect"
                    : "accepted"}};
  return j;
}

json report_metrics(const RejectionReport& r) {
  json j;
  j["accuracy"] = r.accuracy;
  j["d_kl"] = r.d_kl_defined ? json(r.d_kl) : json(nullptr);
  j["auroc"] = r.curves_defined ? json(r.roc.auc) : json(nullptr);
  j["auprc"] = r.curves_defined ? json(r.prc.auc) : json(nullptr);
  j["auarc"] = r.arc.auc;
  j["num_records"] = r.num_records;
  j["num_positive"] = r.num_positive;
  return j;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("failed writing " + path.string());
}

void write_curve_csv(const fs::path& path, const eval::CurvePoints& curve,
                     const char* x_name, const char* y_name) {
  std::string body = std::string(x_name) + "," + y_name + "\n";
  char buf[96];
  for (const auto& [x, y] : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", x, y);
    body += buf;
  }
  write_text(path, body);
}

std::string format_metric(double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

void emit_report(const ExperimentResult& result, const std::string& out_dir) {
  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  fs::create_directories(dir / "curves", ec);
  if (!fs::exists(dir)) throw DataError("cannot create output directory " + out_dir);

  json j;
  j["schema_version"] = 1;
  j["experiment"] = experiment_name(result.cfg.experiment);
  j["model"] = models::model_kind_name(result.cfg.model);
  j["config_hash"] = result.cfg.config_hash();
  j["config"] = config_to_json(result.cfg);
  j["mean"] = {{"acc_test", number_or_null(result.mean.acc_test)},
               {"acc_ref", number_or_null(result.mean.acc_ref)},
               {"d_kl", number_or_null(result.mean.d_kl)},
               {"auroc", number_or_null(result.mean.auroc)},
               {"auprc", number_or_null(result.mean.auprc)},
               {"auarc", number_or_null(result.mean.auarc)}};

  json subjects = json::array();
  for (const auto& s : result.subjects) {
    json folds = json::array();
    for (const auto& f : s.folds) {
      folds.push_back({{"fold", f.fold},
                       {"test_accuracy", f.test_accuracy},
                       {"train_frames", f.train_frames},
                       {"test_frames", f.test_frames},
                       {"epochs_run", f.epochs_run},
                       {"best_epoch", f.best_epoch},
                       {"skipped_batches", f.skipped_batches}});
    }
    json sj;
    sj["seed"] = s.subject_seed;
    sj["acc_test"] = number_or_null(s.acc_test);
    sj["acc_ref"] = s.acc_ref_defined ? json(s.acc_ref) : json(nullptr);
    sj["metrics"] = report_metrics(s.report);
    sj["folds"] = std::move(folds);
    subjects.push_back(std::move(sj));
  }
  j["subjects"] = std::move(subjects);
  j["pooled"] = report_metrics(result.pooled);
  j["curves"] = {{"roc", result.pooled.curves_defined ? curve_to_json(result.pooled.roc)
                                                      : json(nullptr)},
                 {"prc", result.pooled.curves_defined ? curve_to_json(result.pooled.prc)
                                                      : json(nullptr)},
                 {"arc", curve_to_json(result.pooled.arc)},
                 {"calibration", curve_to_json(result.pooled.calibration)}};

  write_text(dir / "report.json", j.dump(2) + "\n");

  if (result.pooled.curves_defined) {
    write_curve_csv(dir / "curves" / "roc.csv", result.pooled.roc, "fpr", "tpr");
    write_curve_csv(dir / "curves" / "prc.csv", result.pooled.prc, "recall", "precision");
  }
  write_curve_csv(dir / "curves" / "arc.csv", result.pooled.arc, "rejection_rate",
                  "active_accuracy");
  write_curve_csv(dir / "curves" / "calibration.csv", result.pooled.calibration,
                  "confidence", "fraction_correct");

  // Table-style one-line summary.
  std::string table =
      "experiment        model  acc_test acc_ref  d_kl    auroc   auprc   auarc\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-17s %-6s %-8s %-8s %-7s %-7s %-7s %-7s\n",
                experiment_name(result.cfg.experiment).c_str(),
                models::model_kind_name(result.cfg.model).c_str(),
                format_metric(result.mean.acc_test).c_str(),
                format_metric(result.mean.acc_ref).c_str(),
                format_metric(result.mean.d_kl).c_str(),
                format_metric(result.mean.auroc).c_str(),
                format_metric(result.mean.auprc).c_str(),
                format_metric(result.mean.auarc).c_str());
  table += line;
  write_text(dir / "summary.txt", table);
}

void emit_replay(const ReplayResult& result, const ExperimentConfig& cfg,
                 const std::string& out_dir) {
  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::exists(dir)) throw DataError("cannot create output directory " + out_dir);

  json j;
  j["schema_version"] = 1;
  j["reachable"] = result.reachable;
  j["common_rejection_rate"] = result.common_rejection_rate;
  j["first_model"] = result.first_model;
  j["config"] = config_to_json(cfg);
  json models_j = json::array();
  for (const auto& m : result.models) {
    models_j.push_back({{"model", m.model_name},
                        {"threshold", m.threshold},
                        {"rejection_rate", m.rejection_rate},
                        {"fpr", m.fpr},
                        {"active_accuracy", m.active_accuracy},
                        {"reaches_zero_fpr", m.reaches_zero_fpr}});
  }
  j["models"] = std::move(models_j);
  write_text(dir / "replay.json", j.dump(2) + "\n");

  for (const auto& m : result.models) {
    const int c = m.scores.rank() == 2 ? m.scores.dim(1) : 0;
    std::string body = "t_ms,true_label,predicted,accepted";
    for (int k = 0; k < c; ++k) body += ",score_" + std::to_string(k);
    body += ",raw_conf\n";
    char buf[64];
    for (std::size_t i = 0; i < result.timestamps_ms.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", result.timestamps_ms[i]);
      body += buf;
      body += "," + std::to_string(result.true_labels[i]);
      body += "," + std::to_string(m.predicted[i]);
      body += m.accepted[i] ? ",1" : ",0";
      for (int k = 0; k < c; ++k) {
        std::snprintf(buf, sizeof(buf), ",%.17g",
                      m.scores_scaled[i * static_cast<std::size_t>(c) +
                                      static_cast<std::size_t>(k)]);
        body += buf;
      }
      std::snprintf(buf, sizeof(buf), ",%.17g\n", m.raw_confidence[i]);
      body += buf;
    }
    write_text(dir / ("timeline_" + m.model_name + ".csv"), body);
  }
}

}  // namespace emglab::harness
