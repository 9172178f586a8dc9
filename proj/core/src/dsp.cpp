#include "resadapt/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace resadapt {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

std::vector<float> hann_window(int n) {
  std::vector<float> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] = static_cast<float>(
        0.5 - 0.5 * std::cos(2.0 * kPi * i / n));  // periodic form
  return w;
}

void fft_radix2(std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_radix2: size must be a power of two");
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = x[i + k];
        const std::complex<double> v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

AudioClip chunk(const AudioClip& clip, double max_seconds, Rng& rng) {
  const std::int64_t limit =
      static_cast<std::int64_t>(max_seconds * clip.sample_rate);
  const std::int64_t n = static_cast<std::int64_t>(clip.samples.size());
  if (n <= limit) return clip;
  const std::int64_t offset = rng.uniform_int(0, n - limit);
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.assign(clip.samples.begin() + offset,
                     clip.samples.begin() + offset + limit);
  return out;
}

Tensor stft_magnitude(const AudioClip& clip, int n_fft, int hop) {
  if (clip.samples.empty())
    throw std::invalid_argument("stft_magnitude: empty clip");
  std::vector<float> samples = clip.samples;
  if (static_cast<int>(samples.size()) < n_fft)
    samples.resize(static_cast<std::size_t>(n_fft), 0.0f);  // one full frame
  const std::int64_t n = static_cast<std::int64_t>(samples.size());
  const std::int64_t n_frames = (n - n_fft) / hop + 1;
  const std::int64_t n_bins = n_fft / 2 + 1;
  const std::vector<float> window = hann_window(n_fft);

  Tensor out({n_bins, n_frames});
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(n_fft));
  for (std::int64_t f = 0; f < n_frames; ++f) {
    const std::int64_t start = f * hop;
    for (int i = 0; i < n_fft; ++i)
      buf[static_cast<std::size_t>(i)] = {
          static_cast<double>(samples[static_cast<std::size_t>(start + i)]) *
              window[static_cast<std::size_t>(i)],
          0.0};
    fft_radix2(buf);
    for (std::int64_t b = 0; b < n_bins; ++b)
      out.data[static_cast<std::size_t>(b * n_frames + f)] =
          static_cast<float>(std::abs(buf[static_cast<std::size_t>(b)]));
  }
  return out;
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }

double mel_to_hz(double m) {
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

Tensor mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_min,
                      double f_max) {
  if (n_mels < 1) throw std::invalid_argument("mel_filterbank: n_mels < 1");
  if (f_max > sample_rate / 2.0)
    throw std::invalid_argument("mel_filterbank: f_max above Nyquist");
  const std::int64_t n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(f_min), mel_hi = hz_to_mel(f_max);
  // n_mels + 2 edge points equally spaced in mel; triangle m spans
  // edges m-1 .. m+1 with its peak at edge m.
  std::vector<double> hz(static_cast<std::size_t>(n_mels + 2));
  for (int m = 0; m < n_mels + 2; ++m)
    hz[static_cast<std::size_t>(m)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (n_mels + 1));

  Tensor bank({n_mels, n_bins});
  const double bin_hz = static_cast<double>(sample_rate) / n_fft;
  for (int m = 0; m < n_mels; ++m) {
    const double left = hz[static_cast<std::size_t>(m)];
    const double center = hz[static_cast<std::size_t>(m + 1)];
    const double right = hz[static_cast<std::size_t>(m + 2)];
    for (std::int64_t b = 0; b < n_bins; ++b) {
      const double f = b * bin_hz;
      double v = 0.0;
      if (f >= left && f <= center && center > left)
        v = (f - left) / (center - left);
      else if (f > center && f <= right && right > center)
        v = (right - f) / (right - center);
      bank.data[static_cast<std::size_t>(m * n_bins + b)] =
          static_cast<float>(v);
    }
  }
  return bank;
}

Tensor log_mel_normalize(const Tensor& spec, const Tensor& bank) {
  if (spec.rank() != 2 || bank.rank() != 2)
    throw std::invalid_argument("log_mel_normalize: matrices expected");
  const std::int64_t n_bins = spec.shape[0], n_frames = spec.shape[1];
  const std::int64_t n_mels = bank.shape[0];
  if (bank.shape[1] != n_bins)
    throw std::invalid_argument("log_mel_normalize: bank/spec bin mismatch");

  Tensor mel({n_mels, n_frames});
  for (std::int64_t m = 0; m < n_mels; ++m) {
    for (std::int64_t t = 0; t < n_frames; ++t) {
      double acc = 0.0;
      for (std::int64_t b = 0; b < n_bins; ++b) {
        const double mag = spec.data[static_cast<std::size_t>(b * n_frames + t)];
        acc += static_cast<double>(
                   bank.data[static_cast<std::size_t>(m * n_bins + b)]) *
               mag * mag;  // power spectrum
      }
      mel.data[static_cast<std::size_t>(m * n_frames + t)] =
          static_cast<float>(std::log(acc + 1e-10));
    }
  }
  // per-sample standardization over all cells
  double sum = 0.0;
  for (const float v : mel.data) sum += v;
  const double mean = sum / static_cast<double>(mel.data.size());
  double sq = 0.0;
  for (const float v : mel.data) {
    const double d = v - mean;
    sq += d * d;
  }
  const double std_dev =
      std::max(std::sqrt(sq / static_cast<double>(mel.data.size())), 1e-8);
  for (float& v : mel.data)
    v = static_cast<float>((v - mean) / std_dev);
  return mel;
}

Tensor extract_features(const AudioClip& clip, Rng& rng, double max_seconds) {
  const AudioClip windowed = chunk(clip, max_seconds, rng);
  const Tensor spec = stft_magnitude(windowed);
  static const Tensor bank = mel_filterbank();
  return log_mel_normalize(spec, bank);
}

void save_feature(const std::string& base_path, const Tensor& mel,
                  const std::string& source_path, const std::string& label) {
  if (mel.rank() != 2)
    throw std::invalid_argument("save_feature: matrix expected");
  {
    std::ofstream f(base_path + ".f32", std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write feature file: " + base_path + ".f32");
    // float32 little-endian row-major; this build targets LE hosts
    f.write(reinterpret_cast<const char*>(mel.data.data()),
            static_cast<std::streamsize>(mel.data.size() * sizeof(float)));
  }
  nlohmann::json sidecar{{"n_mels", mel.shape[0]},
                         {"n_frames", mel.shape[1]},
                         {"source_path", source_path},
                         {"label", label}};
  std::ofstream f(base_path + ".json", std::ios::trunc);
  if (!f) throw DataError("cannot write sidecar: " + base_path + ".json");
  f << sidecar.dump(2) << "\n";
}

FeatureSample load_feature(const std::string& base_path) {
  std::ifstream jf(base_path + ".json");
  if (!jf) throw DataError("missing feature sidecar: " + base_path + ".json");
  nlohmann::json sidecar;
  try {
    jf >> sidecar;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed sidecar " + base_path + ".json: " + e.what());
  }
  FeatureSample fs;
  const std::int64_t n_mels = sidecar.at("n_mels").get<std::int64_t>();
  fs.n_frames = sidecar.at("n_frames").get<std::int64_t>();
  fs.label = sidecar.at("label").get<std::string>();

  std::ifstream f(base_path + ".f32", std::ios::binary);
  if (!f) throw DataError("missing feature file: " + base_path + ".f32");
  fs.mel = Tensor({n_mels, fs.n_frames});
  f.read(reinterpret_cast<char*>(fs.mel.data.data()),
         static_cast<std::streamsize>(fs.mel.data.size() * sizeof(float)));
  if (f.gcount() !=
      static_cast<std::streamsize>(fs.mel.data.size() * sizeof(float)))
    throw DataError("truncated feature file: " + base_path + ".f32");
  return fs;
}

bool feature_exists(const std::string& base_path) {
  return std::filesystem::exists(base_path + ".f32") &&
         std::filesystem::exists(base_path + ".json");
}

}  // namespace resadapt
