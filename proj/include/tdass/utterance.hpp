#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdass/errors.hpp"
#include "tdass/tensor.hpp"

namespace tdass {

enum class Split : std::uint8_t { Train, Val, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw InputError("unknown split '" + s + "'");
}

/// Phoneme ids plus the ground-truth log-mel frames (frames x n_mels) of one recording.
struct Utterance {
  std::string id;
  int speaker = 0;
  std::vector<std::uint16_t> phonemes;
  Tensor mel;
  Split split = Split::Train;

  std::size_t n_frames() const { return mel.dim(0); }
  std::size_t n_mels() const { return mel.dim(1); }

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

}  // namespace tdass
