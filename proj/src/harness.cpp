#include "emglab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace emglab::harness {

using eval::DomainTag;
using eval::PredictionRecord;
using models::Dataset;
using models::ModelKind;
using models::ModelSpec;
using models::TrainedModel;

std::string experiment_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::in_domain: return "in_domain";
    case ExperimentKind::domain_divergent: return "domain_divergent";
    case ExperimentKind::out_of_domain: return "out_of_domain";
    case ExperimentKind::online_replay: return "online_replay";
  }
  return "unknown";
}

ExperimentKind experiment_from_name(const std::string& name) {
  if (name == "in_domain") return ExperimentKind::in_domain;
  if (name == "domain_divergent") return ExperimentKind::domain_divergent;
  if (name == "out_of_domain") return ExperimentKind::out_of_domain;
  if (name == "online_replay") return ExperimentKind::online_replay;
  throw ConfigError("unknown experiment '" + name + "'");
}

double ExperimentConfig::resolved_learning_rate() const {
  if (train.learning_rate > 0.0) return train.learning_rate;
  switch (model) {
    case ModelKind::sdcnn:
    case ModelKind::dcnn:
      return 1e-3;
    case ModelKind::cnnsc:
    case ModelKind::ecnn:
      return 1e-4;
  }
  return 1e-3;
}

std::vector<int> ExperimentConfig::resolved_dynamic_order() const {
  if (!dynamic_order.empty()) return dynamic_order;
  std::vector<int> order;
  for (int c = 0; c < synth.num_classes; ++c) {
    if (c != synth.rest_class) order.push_back(c);
  }
  return order;
}

std::string ExperimentConfig::config_hash() const {
  std::ostringstream os;
  os << experiment_name(experiment) << '|' << models::model_kind_name(model) << '|'
     << synth.num_classes << '|' << synth.trials_per_class << '|' << synth.trial_seconds
     << '|' << synth.sample_rate_hz << '|' << synth.snr_db << '|'
     << synth.inter_trial_amplitude_jitter << '|' << synth.transition_ms << '|'
     << synth.rest_class << '|' << frames.static_increment_ms << '|'
     << frames.dynamic_increment_ms << '|' << resolved_learning_rate() << '|'
     << train.max_epochs << '|' << train.batch_size << '|' << triplet.margin_alpha << '|'
     << center.tau << '|' << ecnn.lambda_kl << '|' << seed << '|' << subjects;
  const std::string s = os.str();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::ostringstream hex;
  hex << std::hex << h;
  return hex.str();
}

void ExperimentConfig::validate() const {
  synth.validate();
  filter.validate(synth.sample_rate_hz);
  if (subjects < 1) throw ConfigError("subjects must be >= 1");
  if (train.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (train.patience < 1) throw ConfigError("patience must be >= 1");
  if (train.min_delta < 0.0) throw ConfigError("min_delta must be >= 0");
  if (triplet.margin_alpha <= 0.0) throw ConfigError("margin_alpha must be positive");
  if (eval.kl_bins < 2) throw ConfigError("kl_bins must be >= 2");
  if (eval.kl_eps <= 0.0) throw ConfigError("kl_eps must be positive");
  for (int c : dynamic_order) {
    if (c < 0 || c >= synth.num_classes || c == synth.rest_class) {
      throw ConfigError("dynamic_order entries must name active classes");
    }
  }
  if (frames.static_increment_ms <= 0.0 || frames.dynamic_increment_ms <= 0.0) {
    throw ConfigError("frame increments must be positive");
  }
}

// ---- utilities -------------------------------------------------------------------

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  unsigned n = threads > 0 ? static_cast<unsigned>(threads)
                           : std::max(1u, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, count));
  if (n <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n; ++t) {
    pool.emplace_back([&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

double accuracy_of(const std::vector<PredictionRecord>& records) {
  if (records.empty()) return 0.0;
  double correct = 0.0;
  for (const auto& r : records) correct += r.predicted == r.true_label ? 1.0 : 0.0;
  return correct / static_cast<double>(records.size());
}

models::Dataset concat_sequences(const std::vector<const dsp::FrameSequence*>& seqs) {
  return models::dataset_from_sequences(seqs);
}

// ---- dataset generation -------------------------------------------------------------

DatasetBundle make_dataset(const ExperimentConfig& cfg, std::uint64_t subject_seed,
                           bool with_dynamic) {
  DatasetBundle bundle;
  bundle.subject_seed = subject_seed;
  bundle.provenance = cfg.config_hash();

  synth::SynthConfig scfg = cfg.synth;
  scfg.seed = subject_seed;

  Rng template_rng(derive_seed(subject_seed, 0x7001));
  bundle.templates = synth::make_gesture_templates(scfg, template_rng);

  bundle.static_trials.resize(static_cast<std::size_t>(scfg.num_classes));
  for (int c = 0; c < scfg.num_classes; ++c) {
    auto& trials = bundle.static_trials[static_cast<std::size_t>(c)];
    trials.reserve(static_cast<std::size_t>(scfg.trials_per_class));
    for (int t = 0; t < scfg.trials_per_class; ++t) {
      Rng trial_rng(derive_seed(subject_seed, 0x7100, static_cast<std::uint64_t>(c),
                                static_cast<std::uint64_t>(t)));
      auto rec = synth::synth_static_trial(bundle.templates[static_cast<std::size_t>(c)],
                                           scfg, trial_rng);
      trials.push_back(dsp::to_frames(dsp::preprocess(rec, cfg.filter),
                                      cfg.frames.static_increment_ms, scfg.grid_h,
                                      scfg.grid_w, cfg.filter.mav_window_ms));
    }
  }

  if (with_dynamic) {
    const auto order = cfg.resolved_dynamic_order();
    Rng dyn_rng(derive_seed(subject_seed, 0x7200));
    auto rec = synth::synth_dynamic_sequence(bundle.templates, order, scfg, dyn_rng);
    bundle.dynamic = dsp::to_frames(dsp::preprocess(rec, cfg.filter),
                                    cfg.frames.dynamic_increment_ms, scfg.grid_h,
                                    scfg.grid_w, cfg.filter.mav_window_ms);
    bundle.ramp_windows_ms = synth::dynamic_ramp_windows_ms(order, scfg);
  }
  return bundle;
}

// ---- report building ------------------------------------------------------------------

RejectionReport build_report(const std::vector<PredictionRecord>& records,
                             eval::RelabelMode mode, const EvalParams& params) {
  RejectionReport report;
  report.num_records = records.size();
  const auto labels = eval::relabel(records, mode);
  std::vector<double> scores;
  scores.reserve(records.size());
  for (const auto& r : records) scores.push_back(r.confidence);

  std::size_t positives = 0;
  for (int l : labels) positives += static_cast<std::size_t>(l != 0);
  report.num_positive = positives;
  report.accuracy = static_cast<double>(positives) / static_cast<double>(labels.size());

  std::vector<double> correct_scores, incorrect_scores;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (labels[i] != 0 ? correct_scores : incorrect_scores).push_back(scores[i]);
  }
  if (!correct_scores.empty() && !incorrect_scores.empty()) {
    try {
      report.d_kl =
          eval::kl_divergence(correct_scores, incorrect_scores, params.kl_bins, params.kl_eps);
      report.d_kl_defined = true;
    } catch (const DataError&) {
      report.d_kl_defined = false;  // degenerate score range
    }
    report.roc = eval::roc_curve(labels, scores);
    report.prc = eval::pr_curve(labels, scores);
    report.curves_defined = true;
  }
  report.arc = eval::arc_curve(labels, scores);
  report.calibration = eval::calibration_curve(labels, scores, params.calibration_bins);
  return report;
}

// ---- shared experiment plumbing -----------------------------------------------------

namespace {

ModelSpec make_model_spec(const ExperimentConfig& cfg, std::vector<int> class_ids) {
  ModelSpec spec;
  spec.kind = cfg.model;
  spec.input_h = cfg.synth.grid_h;
  spec.input_w = cfg.synth.grid_w;
  spec.class_ids = std::move(class_ids);
  spec.triplet = cfg.triplet;
  spec.center = cfg.center;
  spec.ecnn = cfg.ecnn;
  return spec;
}

models::TrainConfig make_train_config(const ExperimentConfig& cfg, std::uint64_t subject_seed,
                                      int fold) {
  models::TrainConfig tc = cfg.train;
  tc.learning_rate = cfg.resolved_learning_rate();
  tc.seed = derive_seed(subject_seed, 0x9000 + static_cast<std::uint64_t>(fold),
                        static_cast<std::uint64_t>(cfg.model));
  return tc;
}

std::vector<PredictionRecord> predict_records(TrainedModel& model, const Dataset& ds,
                                              const std::vector<double>* timestamps,
                                              DomainTag tag) {
  auto bp = models::predict(model, ds.frames);
  std::vector<PredictionRecord> records(ds.size());
  const int c = model.num_classes();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& r = records[i];
    r.predicted = bp.predicted[i];
    r.true_label = ds.labels[i];
    r.confidence = bp.confidence[i];
    r.full_scores.assign(bp.scores.data() + i * static_cast<std::size_t>(c),
                         bp.scores.data() + (i + 1) * static_cast<std::size_t>(c));
    r.domain_tag = tag;
    r.timestamp_ms = timestamps ? (*timestamps)[i] : -1.0;
  }
  return records;
}

MetricSummary summarize(const std::vector<SubjectResult>& subjects) {
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  double acc_test = 0.0, acc_ref = 0.0, d_kl = 0.0, auroc = 0.0, auprc = 0.0, auarc = 0.0;
  double n_test = 0.0, n_ref = 0.0, n_kl = 0.0, n_curves = 0.0, n_arc = 0.0;
  for (const auto& s : subjects) {
    if (!std::isnan(s.acc_test)) {
      acc_test += s.acc_test;
      n_test += 1.0;
    }
    if (s.acc_ref_defined) {
      acc_ref += s.acc_ref;
      n_ref += 1.0;
    }
    if (s.report.d_kl_defined) {
      d_kl += s.report.d_kl;
      n_kl += 1.0;
    }
    if (s.report.curves_defined) {
      auroc += s.report.roc.auc;
      auprc += s.report.prc.auc;
      n_curves += 1.0;
    }
    auarc += s.report.arc.auc;
    n_arc += 1.0;
  }
  MetricSummary mean;
  mean.acc_test = n_test > 0.0 ? acc_test / n_test : nan;
  mean.acc_ref = n_ref > 0.0 ? acc_ref / n_ref : nan;
  mean.d_kl = n_kl > 0.0 ? d_kl / n_kl : nan;
  mean.auroc = n_curves > 0.0 ? auroc / n_curves : nan;
  mean.auprc = n_curves > 0.0 ? auprc / n_curves : nan;
  mean.auarc = n_arc > 0.0 ? auarc / n_arc : nan;
  return mean;
}

}  // namespace

// ---- per-trial LOOCV (experiments 1 and 2) -----------------------------------------

ExperimentResult run_loocv_per_trial(const ExperimentConfig& cfg) {
  cfg.validate();
  const int trials = cfg.synth.trials_per_class;
  if (trials < 3) throw ConfigError("per-trial LOOCV needs at least 3 trials per class");
  const bool with_dynamic = cfg.experiment == ExperimentKind::domain_divergent;
  const int classes = cfg.synth.num_classes;
  const int folds = trials - 1;

  ExperimentResult result;
  result.cfg = cfg;
  result.subjects.resize(static_cast<std::size_t>(cfg.subjects));

  std::vector<DatasetBundle> bundles(static_cast<std::size_t>(cfg.subjects));
  for (int s = 0; s < cfg.subjects; ++s) {
    bundles[static_cast<std::size_t>(s)] =
        make_dataset(cfg, cfg.seed + static_cast<std::uint64_t>(s), with_dynamic);
  }

  struct FoldOutput {
    FoldSummary summary;
    std::vector<PredictionRecord> test_records;
    std::vector<PredictionRecord> dynamic_records;
  };
  std::vector<FoldOutput> outputs(static_cast<std::size_t>(cfg.subjects) * folds);

  parallel_for(outputs.size(), cfg.threads, [&](std::size_t task) {
    const int s = static_cast<int>(task) / folds;
    const int fold = 1 + static_cast<int>(task) % folds;  // test trial index
    const auto& bundle = bundles[static_cast<std::size_t>(s)];

    std::vector<const dsp::FrameSequence*> train_seqs, valid_seqs, test_seqs;
    for (int c = 0; c < classes; ++c) {
      const auto& per_class = bundle.static_trials[static_cast<std::size_t>(c)];
      valid_seqs.push_back(&per_class[0]);
      test_seqs.push_back(&per_class[static_cast<std::size_t>(fold)]);
      for (int t = 1; t < trials; ++t) {
        if (t != fold) train_seqs.push_back(&per_class[static_cast<std::size_t>(t)]);
      }
    }
    Dataset train_set = concat_sequences(train_seqs);
    Dataset valid_set = concat_sequences(valid_seqs);
    Dataset test_set = concat_sequences(test_seqs);

    std::vector<int> class_ids(static_cast<std::size_t>(classes));
    std::iota(class_ids.begin(), class_ids.end(), 0);
    auto model = models::train(make_model_spec(cfg, class_ids), train_set, valid_set,
                               make_train_config(cfg, bundle.subject_seed, fold));

    FoldOutput& out = outputs[task];
    out.test_records = predict_records(model, test_set, nullptr, DomainTag::in_domain);
    out.summary.fold = fold;
    out.summary.test_accuracy = accuracy_of(out.test_records);
    out.summary.train_frames = static_cast<int>(train_set.size());
    out.summary.test_frames = static_cast<int>(test_set.size());
    out.summary.epochs_run = model.log.epochs_run;
    out.summary.best_epoch = model.log.best_epoch;
    for (int sk : model.log.skipped_batches) out.summary.skipped_batches += sk;

    if (with_dynamic) {
      Dataset dyn = concat_sequences({&bundle.dynamic});
      out.dynamic_records =
          predict_records(model, dyn, &bundle.dynamic.timestamps_ms, DomainTag::domain_divergent);
    }
  });

  for (int s = 0; s < cfg.subjects; ++s) {
    SubjectResult& subject = result.subjects[static_cast<std::size_t>(s)];
    subject.subject_seed = cfg.seed + static_cast<std::uint64_t>(s);
    for (int f = 0; f < folds; ++f) {
      auto& out = outputs[static_cast<std::size_t>(s) * folds + static_cast<std::size_t>(f)];
      subject.folds.push_back(out.summary);
      subject.static_records.insert(subject.static_records.end(), out.test_records.begin(),
                                    out.test_records.end());
      subject.dynamic_records.insert(subject.dynamic_records.end(),
                                     out.dynamic_records.begin(), out.dynamic_records.end());
    }
    if (with_dynamic) {
      subject.acc_test = accuracy_of(subject.dynamic_records);
      subject.acc_ref = accuracy_of(subject.static_records);
      subject.acc_ref_defined = true;
      subject.report = build_report(subject.dynamic_records, eval::RelabelMode::correctness,
                                    cfg.eval);
    } else {
      subject.acc_test = accuracy_of(subject.static_records);
      subject.report = build_report(subject.static_records, eval::RelabelMode::correctness,
                                    cfg.eval);
    }
  }

  for (const auto& subject : result.subjects) {
    const auto& primary = with_dynamic ? subject.dynamic_records : subject.static_records;
    result.pooled_records.insert(result.pooled_records.end(), primary.begin(), primary.end());
  }
  result.pooled = build_report(result.pooled_records, eval::RelabelMode::correctness, cfg.eval);
  result.mean = summarize(result.subjects);
  return result;
}

// ---- class-wise LOOCV (experiment 3) ---------------------------------------------------

ExperimentResult run_loocv_per_class(const ExperimentConfig& cfg) {
  cfg.validate();
  const int trials = cfg.synth.trials_per_class;
  const int classes = cfg.synth.num_classes;
  if (trials < 4) throw ConfigError("class-wise LOOCV needs at least 4 trials per class");
  if (classes < 3) throw ConfigError("class-wise LOOCV needs at least 3 classes");

  ExperimentResult result;
  result.cfg = cfg;
  result.subjects.resize(static_cast<std::size_t>(cfg.subjects));

  std::vector<DatasetBundle> bundles(static_cast<std::size_t>(cfg.subjects));
  for (int s = 0; s < cfg.subjects; ++s) {
    bundles[static_cast<std::size_t>(s)] =
        make_dataset(cfg, cfg.seed + static_cast<std::uint64_t>(s), false);
  }

  struct FoldOutput {
    FoldSummary summary;
    std::vector<PredictionRecord> reference_records;
    std::vector<PredictionRecord> ood_records;
  };
  std::vector<FoldOutput> outputs(static_cast<std::size_t>(cfg.subjects) * classes);

  parallel_for(outputs.size(), cfg.threads, [&](std::size_t task) {
    const int s = static_cast<int>(task) / classes;
    const int left_out = static_cast<int>(task) % classes;
    const auto& bundle = bundles[static_cast<std::size_t>(s)];

    std::vector<const dsp::FrameSequence*> train_seqs, valid_seqs, ref_seqs, ood_seqs;
    std::vector<int> class_ids;
    for (int c = 0; c < classes; ++c) {
      const auto& per_class = bundle.static_trials[static_cast<std::size_t>(c)];
      if (c == left_out) {
        for (int t = 0; t < trials; ++t) ood_seqs.push_back(&per_class[static_cast<std::size_t>(t)]);
        continue;
      }
      class_ids.push_back(c);
      valid_seqs.push_back(&per_class[0]);
      ref_seqs.push_back(&per_class[static_cast<std::size_t>(trials - 2)]);
      ref_seqs.push_back(&per_class[static_cast<std::size_t>(trials - 1)]);
      for (int t = 1; t < trials - 2; ++t) {
        train_seqs.push_back(&per_class[static_cast<std::size_t>(t)]);
      }
    }
    Dataset train_set = concat_sequences(train_seqs);
    Dataset valid_set = concat_sequences(valid_seqs);
    Dataset ref_set = concat_sequences(ref_seqs);
    Dataset ood_set = concat_sequences(ood_seqs);

    auto model = models::train(make_model_spec(cfg, class_ids), train_set, valid_set,
                               make_train_config(cfg, bundle.subject_seed, left_out));

    FoldOutput& out = outputs[task];
    out.reference_records = predict_records(model, ref_set, nullptr, DomainTag::in_domain);
    out.ood_records = predict_records(model, ood_set, nullptr, DomainTag::out_of_domain);
    out.summary.fold = left_out;
    out.summary.test_accuracy = accuracy_of(out.reference_records);
    out.summary.train_frames = static_cast<int>(train_set.size());
    out.summary.test_frames = static_cast<int>(ref_set.size() + ood_set.size());
    out.summary.epochs_run = model.log.epochs_run;
    out.summary.best_epoch = model.log.best_epoch;
    for (int sk : model.log.skipped_batches) out.summary.skipped_batches += sk;
  });

  for (int s = 0; s < cfg.subjects; ++s) {
    SubjectResult& subject = result.subjects[static_cast<std::size_t>(s)];
    subject.subject_seed = cfg.seed + static_cast<std::uint64_t>(s);
    std::vector<PredictionRecord> reference;
    for (int f = 0; f < classes; ++f) {
      auto& out = outputs[static_cast<std::size_t>(s) * classes + static_cast<std::size_t>(f)];
      subject.folds.push_back(out.summary);
      reference.insert(reference.end(), out.reference_records.begin(),
                       out.reference_records.end());
      subject.combined_records.insert(subject.combined_records.end(),
                                      out.reference_records.begin(),
                                      out.reference_records.end());
      subject.combined_records.insert(subject.combined_records.end(),
                                      out.ood_records.begin(), out.ood_records.end());
    }
    subject.static_records = std::move(reference);
    subject.acc_test = std::numeric_limits<double>::quiet_NaN();  // predictions on OOD are void
    subject.acc_ref = accuracy_of(subject.static_records);
    subject.acc_ref_defined = true;
    subject.report =
        build_report(subject.combined_records, eval::RelabelMode::domain_membership, cfg.eval);
  }

  for (const auto& subject : result.subjects) {
    result.pooled_records.insert(result.pooled_records.end(), subject.combined_records.begin(),
                                 subject.combined_records.end());
  }
  result.pooled =
      build_report(result.pooled_records, eval::RelabelMode::domain_membership, cfg.eval);
  result.mean = summarize(result.subjects);
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.experiment) {
    case ExperimentKind::in_domain:
    case ExperimentKind::domain_divergent:
      return run_loocv_per_trial(cfg);
    case ExperimentKind::out_of_domain:
      return run_loocv_per_class(cfg);
    case ExperimentKind::online_replay:
      throw ConfigError("online_replay runs through the replay entry point");
  }
  throw ConfigError("unknown experiment");
}

// ---- online replay -----------------------------------------------------------------

ReplayResult run_online_replay(const ExperimentConfig& cfg,
                               std::vector<TrainedModel>& trained,
                               const dsp::FrameSequence& dynamic) {
  if (trained.empty()) throw ConfigError("replay requires at least one model");
  if (dynamic.count() == 0) throw DataError("replay requires a nonempty dynamic sequence");

  ReplayResult result;
  result.timestamps_ms = dynamic.timestamps_ms;
  result.true_labels = dynamic.labels;
  const std::size_t n = dynamic.count();

  Dataset dyn = concat_sequences({&dynamic});

  struct ModelEval {
    models::BatchPrediction bp;
    std::vector<int> correct;          // 1 = correct prediction
    std::vector<double> sorted_scores;
    std::size_t incorrect_total = 0;
  };
  std::vector<ModelEval> evals;
  for (auto& model : trained) {
    ModelEval e;
    e.bp = models::predict(model, dyn.frames);
    e.correct.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      e.correct[i] = e.bp.predicted[i] == dyn.labels[i] ? 1 : 0;
      if (!e.correct[i]) e.incorrect_total += 1;
    }
    e.sorted_scores = e.bp.confidence;
    std::sort(e.sorted_scores.begin(), e.sorted_scores.end());
    evals.push_back(std::move(e));
  }

  const auto fpr_at = [&](const ModelEval& e, double threshold) {
    std::size_t accepted = 0, accepted_incorrect = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (e.bp.confidence[i] >= threshold) {
        accepted += 1;
        if (!e.correct[i]) accepted_incorrect += 1;
      }
    }
    if (cfg.eval.fpr_denominator == eval::FprDenominator::accepted) {
      return accepted == 0 ? 0.0
                           : static_cast<double>(accepted_incorrect) /
                                 static_cast<double>(accepted);
    }
    return e.incorrect_total == 0 ? 0.0
                                  : static_cast<double>(accepted_incorrect) /
                                        static_cast<double>(e.incorrect_total);
  };
  const auto threshold_at = [&](const ModelEval& e, int pct) {
    const std::size_t k = static_cast<std::size_t>(pct) * n / 100;
    return k == 0 ? -std::numeric_limits<double>::infinity() : e.sorted_scores[k];
  };

  int common_pct = -1;
  for (int pct = 0; pct <= 100 && common_pct < 0; ++pct) {
    const std::size_t k = static_cast<std::size_t>(pct) * n / 100;
    if (k >= n) break;  // all-rejected excluded
    for (std::size_t m = 0; m < evals.size(); ++m) {
      if (fpr_at(evals[m], threshold_at(evals[m], pct)) == 0.0) {
        common_pct = pct;
        result.first_model = models::model_kind_name(trained[m].spec.kind);
        break;
      }
    }
  }
  result.reachable = common_pct >= 0;
  result.common_rejection_rate = result.reachable ? common_pct / 100.0 : 0.0;
  const int applied_pct = result.reachable ? common_pct : 0;

  for (std::size_t m = 0; m < evals.size(); ++m) {
    const auto& e = evals[m];
    ReplayModelResult mr;
    mr.model_name = models::model_kind_name(trained[m].spec.kind);
    mr.threshold = threshold_at(e, applied_pct);
    mr.predicted = e.bp.predicted;
    mr.raw_confidence = e.bp.confidence;
    mr.scores = e.bp.scores;

    std::size_t rejected = 0, accepted = 0, accepted_correct = 0, accepted_incorrect = 0;
    mr.accepted.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const bool keep = e.bp.confidence[i] >= mr.threshold;
      mr.accepted[i] = keep ? 1 : 0;
      if (keep) {
        accepted += 1;
        accepted_correct += static_cast<std::size_t>(e.correct[i] != 0);
        accepted_incorrect += static_cast<std::size_t>(e.correct[i] == 0);
      } else {
        rejected += 1;
      }
    }
    mr.rejection_rate = static_cast<double>(rejected) / static_cast<double>(n);
    mr.fpr = fpr_at(e, mr.threshold);
    mr.reaches_zero_fpr = mr.fpr == 0.0;
    mr.active_accuracy = accepted == 0 ? 0.0
                                       : static_cast<double>(accepted_correct) /
                                             static_cast<double>(accepted);

    // min-max scaling across all score entries, visualization columns only
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < e.bp.scores.size(); ++i) {
      lo = std::min(lo, e.bp.scores[i]);
      hi = std::max(hi, e.bp.scores[i]);
    }
    mr.scores_scaled = e.bp.scores;
    const double span = hi - lo;
    for (std::size_t i = 0; i < mr.scores_scaled.size(); ++i) {
      mr.scores_scaled[i] = span > 0.0 ? (mr.scores_scaled[i] - lo) / span : 0.0;
    }
    result.models.push_back(std::move(mr));
  }
  return result;
}

}  // namespace emglab::harness
