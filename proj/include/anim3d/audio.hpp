#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <vector>

namespace anim3d {

inline constexpr double kAudioRate = 16000.0;
inline constexpr int kFftSize = 800;
inline constexpr int kHopSize = 200;
inline constexpr int kNumMels = 80;
inline constexpr double kMelFloor = 1e-5;
inline constexpr double kHopSeconds = 0.0125;
inline constexpr int kWindowRows = 16;
inline const double kLogMelFloor = std::log(kMelFloor);

struct Waveform {
  Eigen::VectorXd samples;  // in [-1, 1]
  double sample_rate = kAudioRate;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Log-mel energies, one row per hop of 12.5 ms.
struct MelGram {
  Eigen::MatrixXd frames;  // S x 80
  double hop_seconds = kHopSeconds;
  double origin_time = 0.0;  // time of row 0 (reflect-centered, so 0)
};

/// 0.2 s slice of a MelGram centered on one video frame.
struct AudioWindow {
  Eigen::MatrixXd values;  // 16 x 80
  double center_time = 0.0;
};

/// Reads a RIFF/WAVE file: 16-bit PCM or 32-bit IEEE float, any channel
/// count (channels averaged to mono).
Waveform readWav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM.
void writeWav(const Waveform& wave, const std::filesystem::path& path);

/// Band-limited windowed-sinc resampling; bit-exact pass-through when the
/// rates already match. Output length = round(len * target / source).
Waveform resample(const Waveform& wave, double target_rate);

/// Hann-windowed STFT (window 800, hop 200, reflect-centered) -> magnitude
/// -> 80 triangular HTK-mel filters on 0..8000 Hz, area-normalized
/// (2 / bandwidth) -> natural log clamped at 1e-5 from below.
/// Requires a 16 kHz waveform; output has 1 + floor(len/200) rows.
MelGram melSpectrogram(const Waveform& wave);

/// Rows [c-8, c+8) around c = round((t/fps)/0.0125) for each video frame t;
/// out-of-range rows are filled with the log floor.
std::vector<AudioWindow> frameWindows(const MelGram& mel, double fps, Eigen::Index n_frames);

}  // namespace anim3d
