#pragma once

#include <string>
#include <vector>

#include "tdass/checkpoint.hpp"
#include "tdass/corpus.hpp"
#include "tdass/dsp.hpp"
#include "tdass/model.hpp"

namespace tdass {

struct McdRow {
  std::string utt_id;
  int speaker = 0;
  double mcd_db = 0.0;
  bool truncated = false;
};

/// Free-running synthesis of one utterance with the checkpoint's x-vector setting. Without a stop
/// token the frame budget is the ground-truth frame count.
inline InferenceOutput synthesize(const Checkpoint& ckpt, const Corpus& corpus, const Utterance& utt) {
  const TdassModel model(ckpt.config);
  const Tensor xv = ckpt.run.use_xvector ? corpus.xvector(utt.speaker) : Tensor::zeros({ckpt.config.xvector_dim});
  return model.infer(ckpt.params, utt.phonemes, xv, utt.n_frames());
}

/// MCD of synthesized vs ground-truth MFCCs for every utterance of `split`, restricted to
/// `speaker` when it is non-negative.
inline std::vector<McdRow> evaluate_mcd(const Checkpoint& ckpt, const Corpus& corpus, Split split, int speaker) {
  std::vector<McdRow> rows;
  for (const auto& u : corpus.utterances) {
    if (u.split != split || (speaker >= 0 && u.speaker != speaker)) continue;
    InferenceOutput synth = synthesize(ckpt, corpus, u);
    rows.push_back({u.id, u.speaker, mcd(mfcc(synth.mel), mfcc(u.mel)), synth.truncated});
  }
  return rows;
}

inline double mean_mcd(const std::vector<McdRow>& rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.mcd_db;
  return s / static_cast<double>(rows.size());
}

inline std::string mcd_report_csv(const std::vector<McdRow>& rows) {
  std::string s = "utt_id,speaker,mcd_db\n";
  for (const auto& r : rows) s += r.utt_id + "," + std::to_string(r.speaker) + "," + format_double(r.mcd_db) + "\n";
  return s;
}

}  // namespace tdass
