#include "emglab/recording_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace emglab::harness {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'G', 'R'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagLabels = 1u;

struct Header {
  double sample_rate_hz;
  std::uint32_t channels;
  std::uint64_t samples;
  std::uint32_t flags;
};

}  // namespace

void save_recording(const dsp::EmgRecording& rec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open recording for writing: " + path);

  Header h{rec.sample_rate_hz, static_cast<std::uint32_t>(rec.channels),
           static_cast<std::uint64_t>(rec.length),
           rec.has_labels() ? kFlagLabels : 0u};
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  out.write(reinterpret_cast<const char*>(&h.sample_rate_hz), sizeof(double));
  out.write(reinterpret_cast<const char*>(&h.channels), sizeof(std::uint32_t));
  out.write(reinterpret_cast<const char*>(&h.samples), sizeof(std::uint64_t));
  out.write(reinterpret_cast<const char*>(&h.flags), sizeof(std::uint32_t));

  std::vector<float> buf(rec.samples.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(rec.samples[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));

  if (rec.has_labels()) {
    std::vector<std::uint16_t> labels(rec.labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (rec.labels[i] < 0 || rec.labels[i] > std::numeric_limits<std::uint16_t>::max()) {
        throw DataError("label id out of the 16-bit range at sample " + std::to_string(i));
      }
      labels[i] = static_cast<std::uint16_t>(rec.labels[i]);
    }
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size() * sizeof(std::uint16_t)));
  }
  if (!out) throw DataError("failed writing recording: " + path);
}

dsp::EmgRecording load_recording(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open recording: " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("bad recording magic in " + path, 0);
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kVersion) {
    throw ParseError("unsupported recording version in " + path, 4);
  }
  Header h{};
  in.read(reinterpret_cast<char*>(&h.sample_rate_hz), sizeof(double));
  in.read(reinterpret_cast<char*>(&h.channels), sizeof(std::uint32_t));
  in.read(reinterpret_cast<char*>(&h.samples), sizeof(std::uint64_t));
  in.read(reinterpret_cast<char*>(&h.flags), sizeof(std::uint32_t));
  if (!in) throw ParseError("truncated recording header in " + path, 8);
  if (h.sample_rate_hz <= 0.0 || h.channels == 0) {
    throw ParseError("invalid recording header in " + path, 8);
  }

  const std::size_t header_bytes = 4 + 4 + 8 + 4 + 8 + 4;
  dsp::EmgRecording rec(static_cast<int>(h.channels), h.samples, h.sample_rate_hz);
  const std::size_t count = static_cast<std::size_t>(h.channels) * h.samples;
  std::vector<float> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float)) {
    throw ParseError("truncated sample payload in " + path,
                     header_bytes + static_cast<std::size_t>(in.gcount()));
  }
  for (std::size_t i = 0; i < count; ++i) rec.samples[i] = static_cast<double>(buf[i]);

  if (h.flags & kFlagLabels) {
    std::vector<std::uint16_t> labels(h.samples);
    in.read(reinterpret_cast<char*>(labels.data()),
            static_cast<std::streamsize>(h.samples * sizeof(std::uint16_t)));
    if (static_cast<std::size_t>(in.gcount()) != h.samples * sizeof(std::uint16_t)) {
      throw ParseError("truncated label track in " + path,
                       header_bytes + count * sizeof(float) +
                           static_cast<std::size_t>(in.gcount()));
    }
    rec.labels.assign(labels.begin(), labels.end());
  }
  return rec;
}

}  // namespace emglab::harness
