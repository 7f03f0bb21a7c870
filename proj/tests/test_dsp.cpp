#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "emglab/dsp.hpp"
#include "emglab/rng.hpp"

using namespace emglab;
using namespace emglab::dsp;

namespace {

EmgRecording sinusoid(double freq_hz, double fs, double seconds, int channels = 1) {
  const std::size_t n = static_cast<std::size_t>(seconds * fs);
  EmgRecording rec(channels, n, fs);
  for (int c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < n; ++t) {
      rec.at(c, t) = std::sin(2.0 * M_PI * freq_hz * static_cast<double>(t) / fs);
    }
  }
  return rec;
}

// Steady-state amplitude via RMS over the trailing window (unit sinusoid in).
double steady_state_amplitude(const EmgRecording& rec, std::size_t tail) {
  double acc = 0.0;
  for (std::size_t t = rec.length - tail; t < rec.length; ++t) {
    acc += rec.at(0, t) * rec.at(0, t);
  }
  return std::sqrt(2.0 * acc / static_cast<double>(tail));
}

double attenuation_db(double amplitude) { return -20.0 * std::log10(amplitude); }

}  // namespace

TEST_CASE("bandpass frequency response") {
  FilterConfig cfg;
  SUBCASE("100 Hz passes with < 3 dB attenuation") {
    auto out = apply_bandpass(sinusoid(100.0, 1000.0, 4.0), cfg);
    CHECK(attenuation_db(steady_state_amplitude(out, 2000)) < 3.0);
  }
  SUBCASE("1 Hz is attenuated > 15 dB") {
    auto out = apply_bandpass(sinusoid(1.0, 1000.0, 8.0), cfg);
    CHECK(attenuation_db(steady_state_amplitude(out, 2000)) > 15.0);
  }
  SUBCASE("zero input stays zero") {
    EmgRecording zero(2, 1000, 1000.0);
    auto out = apply_bandpass(zero, cfg);
    for (std::size_t t = 0; t < out.length; ++t) {
      CHECK(out.at(0, t) == 0.0);
      CHECK(out.at(1, t) == 0.0);
    }
  }
  SUBCASE("cutoff at or above Nyquist is a config error") {
    FilterConfig bad = cfg;
    bad.lp_cutoff_hz = 600.0;
    CHECK_THROWS_AS(apply_bandpass(sinusoid(10.0, 1000.0, 0.5), bad), ConfigError);
  }
}

TEST_CASE("notch frequency response") {
  FilterConfig cfg;
  SUBCASE("60 Hz is removed by >= 25 dB") {
    auto out = apply_notch(sinusoid(60.0, 1000.0, 6.0), cfg);
    CHECK(attenuation_db(steady_state_amplitude(out, 1000)) >= 25.0);
  }
  SUBCASE("100 Hz passes with < 1 dB attenuation") {
    auto out = apply_notch(sinusoid(100.0, 1000.0, 6.0), cfg);
    CHECK(attenuation_db(steady_state_amplitude(out, 1000)) < 1.0);
  }
  SUBCASE("zero input stays zero") {
    EmgRecording zero(1, 500, 1000.0);
    auto out = apply_notch(zero, cfg);
    for (std::size_t t = 0; t < out.length; ++t) CHECK(out.at(0, t) == 0.0);
  }
}

TEST_CASE("remove_dc") {
  FilterConfig cfg;  // 100 ms window
  SUBCASE("constant signal vanishes once the window is full") {
    EmgRecording rec(1, 1000, 1000.0);
    for (std::size_t t = 0; t < rec.length; ++t) rec.at(0, t) = 5.0;
    auto out = remove_dc(rec, cfg);
    for (std::size_t t = 100; t < out.length; ++t) CHECK(std::fabs(out.at(0, t)) < 1e-12);
  }
  SUBCASE("zero-mean fast sinusoid is nearly unchanged") {
    auto rec = sinusoid(50.0, 1000.0, 2.0);
    auto out = remove_dc(rec, cfg);
    double rms_in = 0.0, rms_out = 0.0;
    for (std::size_t t = 100; t < rec.length; ++t) {
      rms_in += rec.at(0, t) * rec.at(0, t);
      rms_out += out.at(0, t) * out.at(0, t);
    }
    CHECK(std::sqrt(rms_out / rms_in) > 0.95);
  }
  SUBCASE("step transient decays to zero within the window") {
    EmgRecording rec(1, 600, 1000.0);
    const std::size_t t0 = 300;
    for (std::size_t t = t0; t < rec.length; ++t) rec.at(0, t) = 1.0;
    auto out = remove_dc(rec, cfg);
    CHECK(out.at(0, t0) == doctest::Approx(1.0 - 1.0 / 100.0));
    for (std::size_t t = t0 + 100; t < rec.length; ++t) {
      CHECK(std::fabs(out.at(0, t)) < 1e-12);
    }
  }
}

TEST_CASE("mav_envelope") {
  FilterConfig cfg;
  SUBCASE("constant +2 and -2 both give 2") {
    for (double v : {2.0, -2.0}) {
      EmgRecording rec(1, 400, 1000.0);
      for (std::size_t t = 0; t < rec.length; ++t) rec.at(0, t) = v;
      auto out = mav_envelope(rec, cfg);
      for (std::size_t t = 0; t < out.length; ++t) {
        CHECK(out.at(0, t) == doctest::Approx(2.0));
      }
    }
  }
  SUBCASE("unit sinusoid with window much longer than the period gives 2/pi") {
    FilterConfig wide = cfg;
    wide.mav_window_ms = 1000.0;  // 50 periods of a 50 Hz tone
    auto out = mav_envelope(sinusoid(50.0, 1000.0, 3.0), wide);
    CHECK(out.at(0, out.length - 1) == doctest::Approx(2.0 / M_PI).epsilon(0.01 * M_PI / 2.0));
  }
  SUBCASE("output is nonnegative and bounded by the window max") {
    Rng rng(5);
    EmgRecording rec(1, 500, 1000.0);
    for (std::size_t t = 0; t < rec.length; ++t) rec.at(0, t) = rng.normal();
    auto out = mav_envelope(rec, cfg);
    for (std::size_t t = 0; t < out.length; ++t) {
      CHECK(out.at(0, t) >= 0.0);
      double mx = 0.0;
      const std::size_t lo = t >= 99 ? t - 99 : 0;
      for (std::size_t u = lo; u <= t; ++u) mx = std::max(mx, std::fabs(rec.at(0, u)));
      CHECK(out.at(0, t) <= mx + 1e-12);
    }
  }
}

TEST_CASE("to_frames") {
  SUBCASE("channel index maps to row-major grid cells") {
    EmgRecording rec(64, 200, 1000.0);
    for (int c = 0; c < 64; ++c) {
      for (std::size_t t = 0; t < rec.length; ++t) rec.at(c, t) = static_cast<double>(c);
    }
    auto seq = to_frames(rec, 100.0, 4, 16, 100.0);
    REQUIRE(seq.count() == 2);
    const double* frame = seq.frame(0);
    for (int r = 0; r < 4; ++r) {
      for (int col = 0; col < 16; ++col) {
        CHECK(frame[r * 16 + col] == doctest::Approx(r * 16 + col));
      }
    }
  }
  SUBCASE("frame counts follow 1 + floor((T_ms - mav_ms)/increment_ms)") {
    EmgRecording rec(1, 1000, 1000.0);
    CHECK(to_frames(rec, 100.0, 1, 1, 100.0).count() == 10);
    CHECK(to_frames(rec, 1.0, 1, 1, 100.0).count() == 901);
    EmgRecording rec5(1, 5000, 1000.0);
    CHECK(to_frames(rec5, 100.0, 1, 1, 100.0).count() == 50);
    EmgRecording small(1, 50, 1000.0);
    CHECK(to_frames(small, 100.0, 1, 1, 100.0).count() == 0);
  }
  SUBCASE("labels are sampled at the window end") {
    EmgRecording rec(1, 300, 1000.0);
    rec.labels.assign(300, 0);
    for (std::size_t t = 150; t < 300; ++t) rec.labels[t] = 4;
    auto seq = to_frames(rec, 100.0, 1, 1, 100.0);
    REQUIRE(seq.count() == 3);
    CHECK(seq.labels[0] == 0);  // ends at sample 99
    CHECK(seq.labels[1] == 4);  // ends at sample 199
    CHECK(seq.labels[2] == 4);
  }
  SUBCASE("channel/grid mismatch is a config error") {
    EmgRecording rec(60, 200, 1000.0);
    CHECK_THROWS_AS(to_frames(rec, 100.0, 4, 16, 100.0), ConfigError);
  }
}

TEST_CASE("filters are causal") {
  // Changing the future must not change the past.
  Rng rng(17);
  EmgRecording a(1, 400, 1000.0);
  for (std::size_t t = 0; t < a.length; ++t) a.at(0, t) = rng.normal();
  EmgRecording b = a;
  for (std::size_t t = 300; t < b.length; ++t) b.at(0, t) += 10.0;

  FilterConfig cfg;
  const auto check_prefix = [&](const EmgRecording& fa, const EmgRecording& fb) {
    for (std::size_t t = 0; t < 300; ++t) CHECK(fa.at(0, t) == fb.at(0, t));
  };
  check_prefix(apply_bandpass(a, cfg), apply_bandpass(b, cfg));
  check_prefix(apply_notch(a, cfg), apply_notch(b, cfg));
  check_prefix(remove_dc(a, cfg), remove_dc(b, cfg));
  check_prefix(mav_envelope(a, cfg), mav_envelope(b, cfg));
}

TEST_CASE("stages commute with channel permutation") {
  Rng rng(29);
  EmgRecording rec(3, 256, 1000.0);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t t = 0; t < rec.length; ++t) rec.at(c, t) = rng.normal();
  }
  EmgRecording swapped = rec;
  for (std::size_t t = 0; t < rec.length; ++t) {
    std::swap(swapped.at(0, t), swapped.at(2, t));
  }
  FilterConfig cfg;
  auto out = preprocess(rec, cfg);
  auto out_swapped = preprocess(swapped, cfg);
  for (std::size_t t = 0; t < rec.length; ++t) {
    CHECK(out.at(0, t) == out_swapped.at(2, t));
    CHECK(out.at(2, t) == out_swapped.at(0, t));
    CHECK(out.at(1, t) == out_swapped.at(1, t));
  }
}
