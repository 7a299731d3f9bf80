#include "anim3d/audio.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <string>

#include "anim3d/container.hpp"
#include "anim3d/errors.hpp"

namespace anim3d {

namespace {

constexpr int kNumBins = kFftSize / 2 + 1;

double htkMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double htkHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// 80 x 401 triangular filterbank, peaks on an even HTK-mel grid over
/// 0..8000 Hz, each filter scaled by 2 / (its Hz bandwidth).
Eigen::MatrixXd melFilterbank() {
  Eigen::VectorXd edges(kNumMels + 2);
  const double mel_hi = htkMel(kAudioRate / 2.0);
  for (int i = 0; i < kNumMels + 2; ++i)
    edges(i) = htkHz(mel_hi * static_cast<double>(i) / (kNumMels + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(kNumMels, kNumBins);
  for (int m = 0; m < kNumMels; ++m) {
    const double lo = edges(m), mid = edges(m + 1), hi = edges(m + 2);
    const double norm = 2.0 / (hi - lo);
    for (int k = 0; k < kNumBins; ++k) {
      const double f = static_cast<double>(k) * kAudioRate / kFftSize;
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        w = (hi - f) / (hi - mid);
      fb(m, k) = w * norm;
    }
  }
  return fb;
}

struct DftTables {
  Eigen::MatrixXd cos_t;  // 401 x 800
  Eigen::MatrixXd sin_t;
  Eigen::VectorXd hann;  // periodic, length 800
};

const DftTables& dftTables() {
  static const DftTables t = [] {
    DftTables tables;
    tables.cos_t.resize(kNumBins, kFftSize);
    tables.sin_t.resize(kNumBins, kFftSize);
    for (int k = 0; k < kNumBins; ++k)
      for (int n = 0; n < kFftSize; ++n) {
        const double ang = 2.0 * M_PI * k * n / kFftSize;
        tables.cos_t(k, n) = std::cos(ang);
        tables.sin_t(k, n) = std::sin(ang);
      }
    tables.hann.resize(kFftSize);
    for (int n = 0; n < kFftSize; ++n)
      tables.hann(n) = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / kFftSize);
    return tables;
  }();
  return t;
}

double sinc(double x) { return x == 0.0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x); }

std::uint32_t readU32(const std::string& b, size_t off) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + off, 4);
  return v;
}

std::uint16_t readU16(const std::string& b, size_t off) {
  std::uint16_t v;
  std::memcpy(&v, b.data() + off, 2);
  return v;
}

}  // namespace

Waveform readWav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw SchemaError("'" + path.string() + "': not a RIFF/WAVE file");

  int format = 0, channels = 0, bits = 0;
  double rate = 0;
  size_t data_off = 0, data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t chunk_len = readU32(bytes, pos + 4);
    const size_t body = pos + 8;
    if (body + chunk_len > bytes.size())
      throw SchemaError("'" + path.string() + "': truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (chunk_len < 16) throw SchemaError("'" + path.string() + "': fmt chunk too short");
      format = readU16(bytes, body);
      channels = readU16(bytes, body + 2);
      rate = readU32(bytes, body + 4);
      bits = readU16(bytes, body + 14);
    } else if (id == "data") {
      data_off = body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  if (rate <= 0 || channels <= 0) throw SchemaError("'" + path.string() + "': missing fmt chunk");
  if (data_off == 0) throw SchemaError("'" + path.string() + "': missing data chunk");

  Waveform wave;
  wave.sample_rate = rate;
  if (format == 1 && bits == 16) {
    const size_t n = data_len / (2 * static_cast<size_t>(channels));
    wave.samples.resize(static_cast<Eigen::Index>(n));
    for (size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (int c = 0; c < channels; ++c) {
        std::int16_t s;
        std::memcpy(&s, bytes.data() + data_off + (i * channels + c) * 2, 2);
        acc += static_cast<double>(s) / 32768.0;
      }
      wave.samples(static_cast<Eigen::Index>(i)) = acc / channels;
    }
  } else if (format == 3 && bits == 32) {
    const size_t n = data_len / (4 * static_cast<size_t>(channels));
    wave.samples.resize(static_cast<Eigen::Index>(n));
    for (size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (int c = 0; c < channels; ++c) {
        float s;
        std::memcpy(&s, bytes.data() + data_off + (i * channels + c) * 4, 4);
        acc += static_cast<double>(s);
      }
      wave.samples(static_cast<Eigen::Index>(i)) = acc / channels;
    }
  } else {
    throw SchemaError("'" + path.string() + "': unsupported format (want 16-bit PCM or 32-bit float), got format " +
                      std::to_string(format) + " with " + std::to_string(bits) + " bits");
  }
  if (!wave.samples.allFinite())
    throw ValidationError("'" + path.string() + "': non-finite samples");
  return wave;
}

void writeWav(const Waveform& wave, const std::filesystem::path& path) {
  const Eigen::Index n = wave.samples.size();
  const std::uint32_t data_len = static_cast<std::uint32_t>(n) * 2;
  std::string out;
  out.reserve(44 + data_len);

  auto u32 = [&out](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&out](std::uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); };

  out.append("RIFF");
  u32(36 + data_len);
  out.append("WAVE");
  out.append("fmt ");
  u32(16);
  u16(1);  // PCM
  u16(1);  // mono
  const std::uint32_t rate = static_cast<std::uint32_t>(std::llround(wave.sample_rate));
  u32(rate);
  u32(rate * 2);  // byte rate
  u16(2);         // block align
  u16(16);        // bits
  out.append("data");
  u32(data_len);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double clamped = std::clamp(wave.samples(i), -1.0, 1.0);
    const std::int16_t s = static_cast<std::int16_t>(std::lround(clamped * 32767.0));
    out.append(reinterpret_cast<const char*>(&s), 2);
  }
  atomicWriteFile(path, out);
}

Waveform resample(const Waveform& wave, double target_rate) {
  if (target_rate <= 0) throw ArgumentError("resample: target rate must be positive");
  if (wave.samples.size() == 0) throw ArgumentError("resample: empty waveform");
  if (wave.sample_rate == target_rate) return wave;

  const double ratio = target_rate / wave.sample_rate;
  const double cutoff = std::min(1.0, ratio);
  const double half_width = 32.0 / cutoff;  // in source samples
  const Eigen::Index in_n = wave.samples.size();
  const Eigen::Index out_n = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::llround(static_cast<double>(in_n) * ratio)));

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_n);
  for (Eigen::Index i = 0; i < out_n; ++i) {
    const double center = static_cast<double>(i) / ratio;
    const Eigen::Index k_lo =
        std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::ceil(center - half_width)));
    const Eigen::Index k_hi = std::min<Eigen::Index>(
        in_n - 1, static_cast<Eigen::Index>(std::floor(center + half_width)));
    double acc = 0, wsum = 0;
    for (Eigen::Index k = k_lo; k <= k_hi; ++k) {
      const double t = static_cast<double>(k) - center;
      const double w =
          cutoff * sinc(cutoff * t) * (0.5 + 0.5 * std::cos(M_PI * t / half_width));
      acc += w * wave.samples(k);
      wsum += w;
    }
    out.samples(i) = (wsum != 0.0) ? acc / wsum : 0.0;
  }
  return out;
}

MelGram melSpectrogram(const Waveform& wave) {
  if (wave.sample_rate != kAudioRate)
    throw ArgumentError("melSpectrogram: expected 16000 Hz input, got " +
                        std::to_string(wave.sample_rate));
  const Eigen::Index len = wave.samples.size();
  if (len == 0) throw ArgumentError("melSpectrogram: empty waveform");

  const Eigen::Index n_frames = 1 + len / kHopSize;
  const DftTables& tables = dftTables();
  static const Eigen::MatrixXd fb = melFilterbank();

  auto reflect = [len](Eigen::Index idx) -> Eigen::Index {
    if (len == 1) return 0;
    const Eigen::Index period = 2 * (len - 1);
    idx = ((idx % period) + period) % period;
    return idx < len ? idx : period - idx;
  };

  Eigen::MatrixXd windowed(kFftSize, n_frames);
  for (Eigen::Index f = 0; f < n_frames; ++f) {
    const Eigen::Index start = f * kHopSize - kFftSize / 2;
    for (int n = 0; n < kFftSize; ++n)
      windowed(n, f) = wave.samples(reflect(start + n)) * tables.hann(n);
  }

  const Eigen::MatrixXd re = tables.cos_t * windowed;  // 401 x S
  const Eigen::MatrixXd im = tables.sin_t * windowed;
  const Eigen::MatrixXd mag = (re.array().square() + im.array().square()).sqrt();

  MelGram mel;
  mel.frames = (fb * mag).transpose().array().max(kMelFloor).log();
  return mel;
}

std::vector<AudioWindow> frameWindows(const MelGram& mel, double fps, Eigen::Index n_frames) {
  if (fps <= 0) throw ArgumentError("frameWindows: fps must be positive");
  if (n_frames < 1) throw ArgumentError("frameWindows: need at least one frame");
  if (mel.frames.cols() != kNumMels) throw ArgumentError("frameWindows: MelGram must have 80 bins");

  std::vector<AudioWindow> out;
  out.reserve(static_cast<size_t>(n_frames));
  const Eigen::Index n_rows = mel.frames.rows();
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const double time = static_cast<double>(t) / fps;
    const Eigen::Index c = static_cast<Eigen::Index>(std::llround(time / mel.hop_seconds));
    AudioWindow w;
    w.center_time = time;
    w.values.setConstant(kWindowRows, kNumMels, kLogMelFloor);
    for (int r = 0; r < kWindowRows; ++r) {
      const Eigen::Index src = c - kWindowRows / 2 + r;
      if (src >= 0 && src < n_rows) w.values.row(r) = mel.frames.row(src);
    }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace anim3d
