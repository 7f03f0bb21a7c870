#include "emglab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace emglab::synth {

namespace {

constexpr double kRestAmplitudeFraction = 0.04;  // <= 5% of active amplitude
constexpr int kFilterWarmupSamples = 500;

double map_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> sample_active_map(int class_index, int num_active, int grid_h,
                                      int grid_w, Rng& rng) {
  std::vector<double> map(static_cast<std::size_t>(grid_h) * grid_w, 0.0);
  // Primary blob anchored in a class-specific column slot so argmax locations
  // stay distinct; secondary blobs may land anywhere.
  const double slot_w = static_cast<double>(grid_w) / std::max(1, num_active);
  const int blobs = 1 + rng.uniform_int(3);
  for (int bi = 0; bi < blobs; ++bi) {
    double cx, cy, peak;
    if (bi == 0) {
      cx = (class_index + 0.5) * slot_w + rng.uniform(-0.25, 0.25) * slot_w;
      cy = rng.uniform(0.0, grid_h - 1.0);
      peak = 1.0;
    } else {
      cx = rng.uniform(0.0, grid_w - 1.0);
      cy = rng.uniform(0.0, grid_h - 1.0);
      peak = rng.uniform(0.25, 0.6);
    }
    const double sigma = rng.uniform(1.0, 1.8);
    for (int r = 0; r < grid_h; ++r) {
      for (int c = 0; c < grid_w; ++c) {
        const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
        map[static_cast<std::size_t>(r) * grid_w + c] +=
            peak * std::exp(-d2 / (2.0 * sigma * sigma));
      }
    }
  }
  const double mx = *std::max_element(map.begin(), map.end());
  for (double& v : map) v = std::min(1.0, v / mx);
  return map;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_classes < 2) throw ConfigError("synth requires num_classes >= 2");
  if (trials_per_class < 1) throw ConfigError("synth requires trials_per_class >= 1");
  if (trial_seconds <= 0.0 || sample_rate_hz <= 0.0) {
    throw ConfigError("synth durations and sample rate must be positive");
  }
  if (!std::isfinite(snr_db)) throw ConfigError("snr_db must be finite");
  if (transition_ms < 0.0) throw ConfigError("transition_ms must be >= 0");
  if (rest_class < 0 || rest_class >= num_classes) {
    throw ConfigError("rest_class must name one of the classes");
  }
}

std::vector<GestureTemplate> make_gesture_templates(const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  const int num_active = cfg.num_classes - 1;
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<GestureTemplate> templates(cfg.num_classes);
    int active_index = 0;
    for (int k = 0; k < cfg.num_classes; ++k) {
      GestureTemplate& t = templates[static_cast<std::size_t>(k)];
      t.class_id = k;
      t.height = cfg.grid_h;
      t.width = cfg.grid_w;
      if (k == cfg.rest_class) {
        t.activation.assign(static_cast<std::size_t>(cfg.channels()), 1.0);
        t.amplitude = kRestAmplitudeFraction;
      } else {
        t.activation = sample_active_map(active_index++, num_active, cfg.grid_h,
                                         cfg.grid_w, rng);
        t.amplitude = 1.0;
      }
    }
    bool ok = true;
    for (int i = 0; i < cfg.num_classes && ok; ++i) {
      for (int j = i + 1; j < cfg.num_classes && ok; ++j) {
        if (i == cfg.rest_class || j == cfg.rest_class) continue;
        if (map_correlation(templates[i].activation, templates[j].activation) >= 0.9) {
          ok = false;
        }
      }
    }
    if (ok) return templates;
  }
  throw GenerationError("could not generate templates with pairwise correlation < 0.9 "
                        "in 100 attempts");
}

namespace {

// Unit-RMS band-limited noise carrier, steady state (warmup discarded).
std::vector<double> make_carrier(std::size_t n, const SynthConfig& cfg, Rng& rng) {
  dsp::FilterConfig band;
  band.hp_cutoff_hz = cfg.noise_band_lo_hz;
  band.lp_cutoff_hz = cfg.noise_band_hi_hz;
  std::vector<double> x(n + kFilterWarmupSamples);
  for (double& v : x) v = rng.normal();
  dsp::apply_cascade(dsp::design_bandpass(cfg.sample_rate_hz, band), x.data(), x.size());
  std::vector<double> out(x.begin() + kFilterWarmupSamples, x.end());
  double rms = 0.0;
  for (double v : out) rms += v * v;
  rms = std::sqrt(rms / static_cast<double>(out.size()));
  if (rms > 0.0) {
    for (double& v : out) v /= rms;
  }
  return out;
}

}  // namespace

dsp::EmgRecording synth_static_trial(const GestureTemplate& tpl, const SynthConfig& cfg,
                                     Rng& rng) {
  cfg.validate();
  const std::size_t n =
      static_cast<std::size_t>(std::llround(cfg.trial_seconds * cfg.sample_rate_hz));
  dsp::EmgRecording rec(cfg.channels(), n, cfg.sample_rate_hz);
  rec.labels.assign(n, tpl.class_id);

  const double jitter =
      1.0 + rng.uniform(-cfg.inter_trial_amplitude_jitter, cfg.inter_trial_amplitude_jitter);
  const double noise_rms = std::pow(10.0, -cfg.snr_db / 20.0);  // full scale == 1 V

  for (int c = 0; c < rec.channels; ++c) {
    const double gain = tpl.amplitude * jitter * tpl.activation[static_cast<std::size_t>(c)];
    auto carrier = make_carrier(n, cfg, rng);
    double* y = rec.channel(c);
    for (std::size_t t = 0; t < n; ++t) {
      y[t] = gain * carrier[t] + noise_rms * rng.normal();
    }
  }
  return rec;
}

std::vector<std::pair<double, double>> dynamic_ramp_windows_ms(const std::vector<int>& order,
                                                               const SynthConfig& cfg) {
  std::vector<std::pair<double, double>> ramps;
  const double hold = cfg.trial_seconds * 1000.0;
  const double rest = cfg.trial_seconds * 1000.0;
  const double ramp = cfg.transition_ms;
  double t = rest;
  for (std::size_t i = 0; i < order.size(); ++i) {
    ramps.emplace_back(t, t + ramp);  // rest -> gesture
    t += ramp + hold;
    ramps.emplace_back(t, t + ramp);  // gesture -> rest
    t += ramp + rest;
  }
  return ramps;
}

dsp::EmgRecording synth_dynamic_sequence(const std::vector<GestureTemplate>& templates,
                                         const std::vector<int>& order,
                                         const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  if (order.empty()) throw ConfigError("dynamic sequence order must be nonempty");
  for (int cid : order) {
    if (cid < 0 || cid >= static_cast<int>(templates.size())) {
      throw ConfigError("dynamic order names unknown class " + std::to_string(cid));
    }
  }

  struct Segment {
    int from_class, to_class;  // equal => hold, else ramp
    std::size_t samples;
  };
  const auto sec_samples = [&](double s) {
    return static_cast<std::size_t>(std::llround(s * cfg.sample_rate_hz));
  };
  const std::size_t hold_n = sec_samples(cfg.trial_seconds);
  const std::size_t ramp_n = sec_samples(cfg.transition_ms / 1000.0);
  const int rest = cfg.rest_class;

  std::vector<Segment> segments;
  segments.push_back({rest, rest, hold_n});
  for (int cid : order) {
    segments.push_back({rest, cid, ramp_n});
    segments.push_back({cid, cid, hold_n});
    segments.push_back({cid, rest, ramp_n});
    segments.push_back({rest, rest, hold_n});
  }

  std::size_t total = 0;
  for (const auto& s : segments) total += s.samples;

  dsp::EmgRecording rec(cfg.channels(), total, cfg.sample_rate_hz);
  rec.labels.assign(total, rest);

  // Blended per-channel intensity over time, then one carrier per channel.
  const int channels = cfg.channels();
  std::vector<double> weight_a(total), weight_b(total);
  std::vector<int> seg_a(total), seg_b(total);
  std::size_t pos = 0;
  for (const auto& s : segments) {
    // Per-hold amplitude jitter; ramps blend the neighboring gains.
    for (std::size_t i = 0; i < s.samples; ++i) {
      const double u =
          s.samples > 1 ? static_cast<double>(i) / static_cast<double>(s.samples) : 0.0;
      seg_a[pos + i] = s.from_class;
      seg_b[pos + i] = s.to_class;
      if (s.from_class == s.to_class) {
        weight_a[pos + i] = 1.0;
        weight_b[pos + i] = 0.0;
      } else {
        weight_a[pos + i] = 1.0 - u;
        weight_b[pos + i] = u;
      }
      rec.labels[pos + i] = (u < 0.5) ? s.from_class : s.to_class;
    }
    pos += s.samples;
  }

  // Per-class gains with one jitter draw per class occurrence is overkill for
  // a single sequence; one draw per class keeps the blend continuous.
  std::vector<double> class_gain(templates.size());
  for (std::size_t k = 0; k < templates.size(); ++k) {
    class_gain[k] = templates[k].amplitude *
                    (1.0 + rng.uniform(-cfg.inter_trial_amplitude_jitter,
                                       cfg.inter_trial_amplitude_jitter));
  }

  const double noise_rms = std::pow(10.0, -cfg.snr_db / 20.0);
  for (int c = 0; c < channels; ++c) {
    auto carrier = make_carrier(total, cfg, rng);
    double* y = rec.channel(c);
    for (std::size_t t = 0; t < total; ++t) {
      const auto& ta = templates[static_cast<std::size_t>(seg_a[t])];
      const auto& tb = templates[static_cast<std::size_t>(seg_b[t])];
      const double intensity =
          weight_a[t] * class_gain[static_cast<std::size_t>(seg_a[t])] *
              ta.activation[static_cast<std::size_t>(c)] +
          weight_b[t] * class_gain[static_cast<std::size_t>(seg_b[t])] *
              tb.activation[static_cast<std::size_t>(c)];
      y[t] = intensity * carrier[t] + noise_rms * rng.normal();
    }
  }
  return rec;
}

double template_correlation(const GestureTemplate& a, const GestureTemplate& b) {
  return map_correlation(a.activation, b.activation);
}

}  // namespace emglab::synth
