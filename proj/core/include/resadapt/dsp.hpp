#pragma once

#include <complex>
#include <string>
#include <vector>

#include "resadapt/rng.hpp"
#include "resadapt/tensor.hpp"
#include "resadapt/wav.hpp"

namespace resadapt {

// One extracted sample: 64 log-mel rows, normalized per sample.
struct FeatureSample {
  Tensor mel;  // [64, n_frames]
  std::int64_t n_frames = 0;
  std::string label;
  std::string corpus_id;
};

// Periodic Hann window of length n.
std::vector<float> hann_window(int n);

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& x);

// Returns a clip unchanged if it is at most max_seconds long; otherwise a
// contiguous window of exactly max_seconds starting at a uniformly random
// offset drawn from rng.
AudioClip chunk(const AudioClip& clip, double max_seconds, Rng& rng);

// Magnitude spectrogram [n_fft/2+1, n_frames]: Hann-windowed frames at
// the given hop, no center padding. n_frames = floor((n-512)/256)+1 for
// the defaults; clips shorter than one window are zero-padded to exactly
// one frame.
Tensor stft_magnitude(const AudioClip& clip, int n_fft = 512, int hop = 256);

double hz_to_mel(double f);
double mel_to_hz(double m);

// Triangular mel filterbank [n_mels, n_fft/2+1] with centers equally
// spaced on the HTK mel scale between f_min and f_max. No normalization.
Tensor mel_filterbank(int n_mels = 64, int n_fft = 512, int sample_rate = 16000,
                      double f_min = 0.0, double f_max = 8000.0);

// Power spectrum -> filterbank -> ln(x + 1e-10) -> per-sample
// standardization (mean 0, std 1; std floored at 1e-8). spec is
// [n_bins, T], bank is [n_mels, n_bins]; result is [n_mels, T].
Tensor log_mel_normalize(const Tensor& spec, const Tensor& bank);

// Full pipeline for one clip: chunk to max_seconds, then
// stft -> mel -> log -> normalize.
Tensor extract_features(const AudioClip& clip, Rng& rng,
                        double max_seconds = 5.0);

// Feature cache: <base>.f32 holds the matrix as little-endian float32,
// row-major with 64 rows; <base>.json is a sidecar
// {n_mels, n_frames, source_path, label}.
void save_feature(const std::string& base_path, const Tensor& mel,
                  const std::string& source_path, const std::string& label);
FeatureSample load_feature(const std::string& base_path);
bool feature_exists(const std::string& base_path);

}  // namespace resadapt
