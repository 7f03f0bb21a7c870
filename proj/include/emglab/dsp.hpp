#pragma once

#include <cstddef>
#include <vector>

#include "emglab/errors.hpp"

namespace emglab::dsp {

// Multichannel raw EMG time series, channel-major storage.
struct EmgRecording {
  double sample_rate_hz = 1000.0;
  int channels = 0;
  std::size_t length = 0;               // samples per channel (T)
  std::vector<double> samples;          // channels * T, row per channel
  std::vector<int> labels;              // optional per-sample class ids; empty = none

  EmgRecording() = default;
  EmgRecording(int num_channels, std::size_t num_samples, double fs)
      : sample_rate_hz(fs),
        channels(num_channels),
        length(num_samples),
        samples(static_cast<std::size_t>(num_channels) * num_samples, 0.0) {}

  double* channel(int c) { return samples.data() + static_cast<std::size_t>(c) * length; }
  const double* channel(int c) const {
    return samples.data() + static_cast<std::size_t>(c) * length;
  }
  double& at(int c, std::size_t t) { return channel(c)[t]; }
  double at(int c, std::size_t t) const { return channel(c)[t]; }
  bool has_labels() const { return !labels.empty(); }
  double duration_ms() const { return 1000.0 * static_cast<double>(length) / sample_rate_hz; }
};

struct FilterConfig {
  double hp_cutoff_hz = 20.0;
  int hp_order = 1;
  double lp_cutoff_hz = 300.0;
  int lp_order = 3;                      // Butterworth
  double notch_hz = 60.0;
  double notch_q = 30.0;
  double dc_window_ms = 100.0;
  double mav_window_ms = 100.0;

  void validate(double sample_rate_hz) const;
};

// Time-ordered H x W muscle-activity maps with per-frame labels.
struct FrameSequence {
  int height = 0;
  int width = 0;
  std::vector<double> frames;            // N * H * W
  std::vector<double> timestamps_ms;
  std::vector<int> labels;               // -1 when the recording had no label track
  double increment_ms = 0.0;

  std::size_t count() const { return timestamps_ms.size(); }
  std::size_t frame_stride() const { return static_cast<std::size_t>(height) * width; }
  const double* frame(std::size_t i) const { return frames.data() + i * frame_stride(); }
};

// ---- cascaded IIR sections --------------------------------------------------

// Direct form II transposed biquad; first-order sections set the z^-2 taps to 0.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;             // normalized (a0 == 1)
};

Biquad design_first_order_lowpass(double fs, double fc);
Biquad design_first_order_highpass(double fs, double fc);
Biquad design_biquad_lowpass(double fs, double fc, double q);
Biquad design_notch(double fs, double fc, double q);

// Butterworth low-pass of arbitrary order as first-order + biquad sections.
std::vector<Biquad> design_butterworth_lowpass(double fs, double fc, int order);

// High-pass cascade (order repeats of the first-order section) followed by the
// Butterworth low-pass.
std::vector<Biquad> design_bandpass(double fs, const FilterConfig& cfg);

// Causal filtering with zero initial state, in place over one channel buffer.
void apply_cascade(const std::vector<Biquad>& sections, double* x, std::size_t n);

// ---- pipeline stages ----------------------------------------------------------

EmgRecording apply_bandpass(const EmgRecording& rec, const FilterConfig& cfg);
EmgRecording apply_notch(const EmgRecording& rec, const FilterConfig& cfg);

// Subtract the trailing dc_window_ms moving average (window truncated at the
// recording start).
EmgRecording remove_dc(const EmgRecording& rec, const FilterConfig& cfg);

// Trailing mean absolute value over mav_window_ms, truncated at the start.
EmgRecording mav_envelope(const EmgRecording& rec, const FilterConfig& cfg);

// Sample the MAV envelope at full-window ends every increment_ms and map
// channel c to grid cell (c / grid_w, c % grid_w). The recording must already
// be MAV-processed; frame count is 1 + floor((T_ms - mav_window_ms)/increment_ms).
FrameSequence to_frames(const EmgRecording& rec, double increment_ms, int grid_h,
                        int grid_w, double mav_window_ms);

// bandpass -> notch -> remove_dc -> mav_envelope
EmgRecording preprocess(const EmgRecording& rec, const FilterConfig& cfg);

}  // namespace emglab::dsp
