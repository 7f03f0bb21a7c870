#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "emglab/dsp.hpp"
#include "emglab/eval.hpp"
#include "emglab/models.hpp"
#include "emglab/synth.hpp"

namespace emglab::harness {

enum class ExperimentKind { in_domain, domain_divergent, out_of_domain, online_replay };

std::string experiment_name(ExperimentKind kind);
ExperimentKind experiment_from_name(const std::string& name);

struct FrameParams {
  double static_increment_ms = 100.0;
  double dynamic_increment_ms = 1.0;
};

struct EvalParams {
  int kl_bins = 35;
  double kl_eps = 1e-10;
  int calibration_bins = 35;
  eval::FprDenominator fpr_denominator = eval::FprDenominator::all_incorrect;
};

struct ExperimentConfig {
  ExperimentConfig() { train.learning_rate = 0.0; }  // 0 => per-model default

  ExperimentKind experiment = ExperimentKind::in_domain;
  models::ModelKind model = models::ModelKind::sdcnn;
  synth::SynthConfig synth;
  dsp::FilterConfig filter;
  FrameParams frames;
  models::TrainConfig train;  // learning_rate 0 => per-model default
  models::TripletConfig triplet;
  models::CenterLossConfig center;
  models::EcnnConfig ecnn;
  EvalParams eval;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;  // the CLI requires an explicit seed
  int subjects = 5;       // synthetic stand-ins for the per-user protocol
  int threads = 0;        // 0 => hardware concurrency
  std::vector<int> dynamic_order;  // empty => active classes ascending

  double resolved_learning_rate() const;
  std::vector<int> resolved_dynamic_order() const;
  std::string config_hash() const;
  void validate() const;
};

// ---- config file + overrides -------------------------------------------------

// Minimal TOML-style file: [section] headers, key = value lines with strings,
// numbers, booleans and flat arrays, # comments. Keys map to "section.key".
std::map<std::string, std::string> parse_config_file(const std::string& path);

// Applies one "section.key" setting to the config; unknown keys are config errors.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

ExperimentConfig load_config(const std::string& path);

// ---- datasets ------------------------------------------------------------------

struct DatasetBundle {
  std::vector<std::vector<dsp::FrameSequence>> static_trials;  // [class][trial]
  dsp::FrameSequence dynamic;
  std::vector<synth::GestureTemplate> templates;
  std::vector<std::pair<double, double>> ramp_windows_ms;
  std::uint64_t subject_seed = 0;
  std::string provenance;
};

DatasetBundle make_dataset(const ExperimentConfig& cfg, std::uint64_t subject_seed,
                           bool with_dynamic);

// ---- experiment results ----------------------------------------------------------

struct RejectionReport {
  double accuracy = 0.0;  // of the relabeled records (acc or domain fraction)
  double d_kl = 0.0;
  bool d_kl_defined = false;
  eval::CurvePoints roc, prc, arc, calibration;
  bool curves_defined = false;  // both classes present
  std::size_t num_records = 0;
  std::size_t num_positive = 0;
};

RejectionReport build_report(const std::vector<eval::PredictionRecord>& records,
                             eval::RelabelMode mode, const EvalParams& params);

struct FoldSummary {
  int fold = 0;
  double test_accuracy = 0.0;
  int train_frames = 0;
  int test_frames = 0;
  int epochs_run = 0;
  int best_epoch = -1;
  int skipped_batches = 0;
};

struct SubjectResult {
  std::uint64_t subject_seed = 0;
  std::vector<FoldSummary> folds;
  std::vector<eval::PredictionRecord> static_records;   // LOOCV test predictions
  std::vector<eval::PredictionRecord> dynamic_records;  // experiment 2 only
  std::vector<eval::PredictionRecord> combined_records; // experiment 3: ref + OOD
  double acc_test = 0.0;  // experiment-specific headline accuracy
  double acc_ref = 0.0;   // static reference accuracy (experiments 2-3)
  bool acc_ref_defined = false;
  RejectionReport report;  // on the experiment's primary record set
};

struct MetricSummary {
  double acc_test = 0.0, acc_ref = 0.0, d_kl = 0.0, auroc = 0.0, auprc = 0.0,
         auarc = 0.0;
};

struct ExperimentResult {
  ExperimentConfig cfg;
  std::vector<SubjectResult> subjects;
  MetricSummary mean;           // averaged over subjects (paper-style)
  RejectionReport pooled;       // curves over all subjects' records pooled
  std::vector<eval::PredictionRecord> pooled_records;
};

// Experiments 1-2: per-trial leave-one-out CV (trial 0 held out for
// validation in every fold).
ExperimentResult run_loocv_per_trial(const ExperimentConfig& cfg);

// Experiment 3: class-wise folds with 50/50 in/out-of-domain test trials.
ExperimentResult run_loocv_per_class(const ExperimentConfig& cfg);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// ---- online replay ----------------------------------------------------------------

struct ReplayModelResult {
  std::string model_name;
  double threshold = 0.0;
  double rejection_rate = 0.0;  // actual rejected fraction at the threshold
  double fpr = 0.0;
  double active_accuracy = 0.0;
  bool reaches_zero_fpr = false;
  std::vector<int> predicted;
  std::vector<char> accepted;
  std::vector<double> raw_confidence;
  emglab::tensor::Tensor scores;         // [N, C] raw scores
  emglab::tensor::Tensor scores_scaled;  // [N, C] min-max scaled per model
};

struct ReplayResult {
  bool reachable = false;
  double common_rejection_rate = 0.0;  // scanned rate where the first model hits FPR 0
  std::string first_model;
  std::vector<double> timestamps_ms;
  std::vector<int> true_labels;
  std::vector<ReplayModelResult> models;
};

ReplayResult run_online_replay(const ExperimentConfig& cfg,
                               std::vector<models::TrainedModel>& trained,
                               const dsp::FrameSequence& dynamic);

// ---- report emission -----------------------------------------------------------

// report.json, curves/*.csv, summary.txt under out_dir.
void emit_report(const ExperimentResult& result, const std::string& out_dir);

// replay.json + timeline_<model>.csv under out_dir.
void emit_replay(const ReplayResult& result, const ExperimentConfig& cfg,
                 const std::string& out_dir);

// ---- small utilities ----------------------------------------------------------

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

double accuracy_of(const std::vector<eval::PredictionRecord>& records);

models::Dataset concat_sequences(const std::vector<const dsp::FrameSequence*>& seqs);

}  // namespace emglab::harness
