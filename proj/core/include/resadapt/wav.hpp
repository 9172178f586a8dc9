#pragma once

#include <string>
#include <vector>

#include "resadapt/common.hpp"

namespace resadapt {

// Mono 16 kHz audio, amplitudes in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 16000;
};

// Reads a RIFF/WAVE file. Accepts mono PCM16 or IEEE float32 at 16 kHz
// only; anything else is rejected with an error naming the offending
// property (no silent resampling or downmixing). PCM16 is scaled by
// 1/32768, so -32768 -> -1.0 and +32767 -> 32767/32768.
AudioClip load_wav(const std::string& path);

// Writes mono PCM16 at the clip's sample rate. Values are clamped to
// [-1, 1] and rounded to the nearest integer sample.
void save_wav_pcm16(const std::string& path, const AudioClip& clip);

}  // namespace resadapt
