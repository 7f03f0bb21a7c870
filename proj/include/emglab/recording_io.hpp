#pragma once

#include <string>

#include "emglab/dsp.hpp"

namespace emglab::harness {

// .emgrec container: "EMGR" magic, u32 version, f64 sample rate, u32 channels,
// u64 samples-per-channel, u32 flags (bit0 = label track), then channel-major
// little-endian float32 samples, then u16 label ids. Round-trips with
// load_recording bit-exactly at float32 resolution.
void save_recording(const dsp::EmgRecording& rec, const std::string& path);

dsp::EmgRecording load_recording(const std::string& path);

}  // namespace emglab::harness
