#pragma once

#include <cstdint>
#include <vector>

#include "emglab/dsp.hpp"
#include "emglab/rng.hpp"

namespace emglab::synth {

// Spatial contraction pattern of one gesture class on the electrode grid.
struct GestureTemplate {
  int class_id = 0;
  int height = 4;
  int width = 16;
  std::vector<double> activation;  // H*W, in [0,1]
  double amplitude = 1.0;          // volts at activation == 1
};

struct SynthConfig {
  int num_classes = 6;
  int trials_per_class = 10;
  double trial_seconds = 5.0;       // static hold; also dynamic hold/rest duration
  double sample_rate_hz = 1000.0;
  int grid_h = 4;
  int grid_w = 16;
  double noise_band_lo_hz = 20.0;
  double noise_band_hi_hz = 300.0;
  double snr_db = 30.0;             // measurement noise relative to full-scale amplitude
  double inter_trial_amplitude_jitter = 0.1;
  double transition_ms = 200.0;     // dynamic cross-fade duration
  int rest_class = 3;
  std::uint64_t seed = 0;

  int channels() const { return grid_h * grid_w; }
  void validate() const;
};

// One template per class; active classes get 1-3 Gaussian blobs at
// class-specific locations, the rest class a near-zero map. Pairwise map
// correlation stays below 0.9 (resampled up to 100 times).
std::vector<GestureTemplate> make_gesture_templates(const SynthConfig& cfg, Rng& rng);

// Steady-state contraction: per channel, a band-limited noise carrier scaled
// by template intensity and a per-trial amplitude jitter, plus measurement
// noise set by snr_db. Constant label track.
dsp::EmgRecording synth_static_trial(const GestureTemplate& tpl, const SynthConfig& cfg,
                                     Rng& rng);

// rest -> ramp -> gesture -> ramp -> rest -> ... with linear cross-fade of
// template intensities over transition_ms; labels switch at ramp midpoints.
dsp::EmgRecording synth_dynamic_sequence(const std::vector<GestureTemplate>& templates,
                                         const std::vector<int>& order,
                                         const SynthConfig& cfg, Rng& rng);

// Pearson correlation between two activation maps (test/diagnostic helper).
double template_correlation(const GestureTemplate& a, const GestureTemplate& b);

// Cross-fade windows of a dynamic sequence in milliseconds, in order.
std::vector<std::pair<double, double>> dynamic_ramp_windows_ms(const std::vector<int>& order,
                                                               const SynthConfig& cfg);

}  // namespace emglab::synth
