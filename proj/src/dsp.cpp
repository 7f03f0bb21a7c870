#include "emglab/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace emglab::dsp {

namespace {

std::size_t window_samples(double window_ms, double fs) {
  const double w = window_ms * fs / 1000.0;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(w)));
}

}  // namespace

void FilterConfig::validate(double sample_rate_hz) const {
  const double nyquist = sample_rate_hz / 2.0;
  if (sample_rate_hz <= 0.0) throw ConfigError("sample rate must be positive");
  if (!(hp_cutoff_hz > 0.0 && hp_cutoff_hz < lp_cutoff_hz)) {
    throw ConfigError("require 0 < hp_cutoff < lp_cutoff");
  }
  if (lp_cutoff_hz >= nyquist) {
    throw ConfigError("low-pass cutoff " + std::to_string(lp_cutoff_hz) +
                      " Hz is at or above Nyquist " + std::to_string(nyquist) + " Hz");
  }
  if (notch_hz >= nyquist) {
    throw ConfigError("notch frequency " + std::to_string(notch_hz) +
                      " Hz is at or above Nyquist " + std::to_string(nyquist) + " Hz");
  }
  if (notch_q <= 0.0) throw ConfigError("notch quality factor must be positive");
  if (dc_window_ms <= 0.0 || mav_window_ms <= 0.0) {
    throw ConfigError("window lengths must be positive");
  }
  if (hp_order < 1 || lp_order < 1) throw ConfigError("filter orders must be >= 1");
}

// ---- section design (bilinear transform with frequency pre-warping) ----------

Biquad design_first_order_lowpass(double fs, double fc) {
  const double k = std::tan(M_PI * fc / fs);
  Biquad s;
  s.b0 = k / (1.0 + k);
  s.b1 = s.b0;
  s.a1 = (k - 1.0) / (k + 1.0);
  return s;
}

Biquad design_first_order_highpass(double fs, double fc) {
  const double k = std::tan(M_PI * fc / fs);
  Biquad s;
  s.b0 = 1.0 / (1.0 + k);
  s.b1 = -s.b0;
  s.a1 = (k - 1.0) / (k + 1.0);
  return s;
}

Biquad design_biquad_lowpass(double fs, double fc, double q) {
  const double w0 = 2.0 * M_PI * fc / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double cw = std::cos(w0);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = (1.0 - cw) / 2.0 / a0;
  s.b1 = (1.0 - cw) / a0;
  s.b2 = s.b0;
  s.a1 = -2.0 * cw / a0;
  s.a2 = (1.0 - alpha) / a0;
  return s;
}

Biquad design_notch(double fs, double fc, double q) {
  const double w0 = 2.0 * M_PI * fc / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double cw = std::cos(w0);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = 1.0 / a0;
  s.b1 = -2.0 * cw / a0;
  s.b2 = 1.0 / a0;
  s.a1 = -2.0 * cw / a0;
  s.a2 = (1.0 - alpha) / a0;
  return s;
}

std::vector<Biquad> design_butterworth_lowpass(double fs, double fc, int order) {
  std::vector<Biquad> sections;
  if (order % 2 == 1) sections.push_back(design_first_order_lowpass(fs, fc));
  for (int j = 1; j <= order / 2; ++j) {
    const double q = 1.0 / (2.0 * std::sin((2.0 * j - 1.0) * M_PI / (2.0 * order)));
    sections.push_back(design_biquad_lowpass(fs, fc, q));
  }
  return sections;
}

std::vector<Biquad> design_bandpass(double fs, const FilterConfig& cfg) {
  std::vector<Biquad> sections;
  for (int i = 0; i < cfg.hp_order; ++i) {
    sections.push_back(design_first_order_highpass(fs, cfg.hp_cutoff_hz));
  }
  auto lp = design_butterworth_lowpass(fs, cfg.lp_cutoff_hz, cfg.lp_order);
  sections.insert(sections.end(), lp.begin(), lp.end());
  return sections;
}

void apply_cascade(const std::vector<Biquad>& sections, double* x, std::size_t n) {
  for (const auto& s : sections) {
    double z1 = 0.0, z2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double in = x[i];
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      x[i] = out;
    }
  }
}

// ---- pipeline stages ----------------------------------------------------------

namespace {

EmgRecording filtered_copy(const EmgRecording& rec, const std::vector<Biquad>& sections) {
  EmgRecording out = rec;
  for (int c = 0; c < out.channels; ++c) {
    apply_cascade(sections, out.channel(c), out.length);
  }
  return out;
}

}  // namespace

EmgRecording apply_bandpass(const EmgRecording& rec, const FilterConfig& cfg) {
  cfg.validate(rec.sample_rate_hz);
  return filtered_copy(rec, design_bandpass(rec.sample_rate_hz, cfg));
}

EmgRecording apply_notch(const EmgRecording& rec, const FilterConfig& cfg) {
  cfg.validate(rec.sample_rate_hz);
  return filtered_copy(rec, {design_notch(rec.sample_rate_hz, cfg.notch_hz, cfg.notch_q)});
}

EmgRecording remove_dc(const EmgRecording& rec, const FilterConfig& cfg) {
  const std::size_t w = window_samples(cfg.dc_window_ms, rec.sample_rate_hz);
  EmgRecording out = rec;
  for (int c = 0; c < rec.channels; ++c) {
    const double* x = rec.channel(c);
    double* y = out.channel(c);
    double running = 0.0;
    for (std::size_t t = 0; t < rec.length; ++t) {
      running += x[t];
      if (t >= w) running -= x[t - w];
      const double count = static_cast<double>(std::min<std::size_t>(t + 1, w));
      y[t] = x[t] - running / count;
    }
  }
  return out;
}

EmgRecording mav_envelope(const EmgRecording& rec, const FilterConfig& cfg) {
  const std::size_t w = window_samples(cfg.mav_window_ms, rec.sample_rate_hz);
  EmgRecording out = rec;
  for (int c = 0; c < rec.channels; ++c) {
    const double* x = rec.channel(c);
    double* y = out.channel(c);
    double running = 0.0;
    for (std::size_t t = 0; t < rec.length; ++t) {
      running += std::fabs(x[t]);
      if (t >= w) running -= std::fabs(x[t - w]);
      const double count = static_cast<double>(std::min<std::size_t>(t + 1, w));
      y[t] = running / count;
    }
  }
  return out;
}

FrameSequence to_frames(const EmgRecording& rec, double increment_ms, int grid_h,
                        int grid_w, double mav_window_ms) {
  if (rec.channels != grid_h * grid_w) {
    throw ConfigError("channel count " + std::to_string(rec.channels) +
                      " does not match grid " + std::to_string(grid_h) + "x" +
                      std::to_string(grid_w));
  }
  if (increment_ms <= 0.0) throw ConfigError("frame increment must be positive");

  const std::size_t w = window_samples(mav_window_ms, rec.sample_rate_hz);
  const std::size_t inc = window_samples(increment_ms, rec.sample_rate_hz);

  FrameSequence seq;
  seq.height = grid_h;
  seq.width = grid_w;
  seq.increment_ms = increment_ms;
  if (rec.length < w) return seq;  // no full window available

  const std::size_t n = 1 + (rec.length - w) / inc;
  seq.frames.resize(n * seq.frame_stride());
  seq.timestamps_ms.resize(n);
  seq.labels.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t end = (w - 1) + k * inc;  // window-end sample index
    double* frame = seq.frames.data() + k * seq.frame_stride();
    for (int c = 0; c < rec.channels; ++c) frame[c] = rec.at(c, end);
    seq.timestamps_ms[k] = 1000.0 * static_cast<double>(end) / rec.sample_rate_hz;
    seq.labels[k] = rec.has_labels() ? rec.labels[end] : -1;
  }
  return seq;
}

EmgRecording preprocess(const EmgRecording& rec, const FilterConfig& cfg) {
  return mav_envelope(remove_dc(apply_notch(apply_bandpass(rec, cfg), cfg), cfg), cfg);
}

}  // namespace emglab::dsp
