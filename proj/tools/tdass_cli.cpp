#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "tdass/tdass.hpp"

namespace fs = std::filesystem;
using namespace tdass;

namespace {

constexpr std::uint32_t kDefaultSeed = 42;

// --seed wins, then TDASS_SEED, then 42.
std::uint32_t resolve_seed(const std::optional<std::uint32_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("TDASS_SEED")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0') throw ConfigError("TDASS_SEED must be a non-negative integer");
    return static_cast<std::uint32_t>(v);
  }
  return kDefaultSeed;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_bytes(path, text);
}

struct SynthArgs {
  std::string out;
  std::optional<std::uint32_t> seed;
  std::string speakers;
};

int run_synth(const SynthArgs& a) {
  SyntheticCorpusConfig cfg;
  cfg.seed = resolve_seed(a.seed);
  if (!a.speakers.empty()) apply_speaker_spec(cfg, a.speakers);
  const Corpus corpus = synth_corpus(cfg, a.out);
  std::cout << "wrote " << corpus.utterances.size() << " utterances for " << corpus.speakers().size()
            << " speakers to " << a.out << "\n";
  return 0;
}

struct PretrainArgs {
  std::string data, out;
  int exclude = -1;
  std::size_t steps = 200;
  std::optional<std::uint32_t> seed;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
};

void apply_overrides(TrainConfig& cfg, const std::optional<double>& lr, const std::optional<std::size_t>& batch) {
  if (lr) cfg.optimizer.learning_rate = *lr;
  if (batch) cfg.batch_size = *batch;
}

int run_pretrain(const PretrainArgs& a) {
  const Corpus corpus = load_corpus(a.data);
  TrainConfig cfg = TrainConfig::toy();
  cfg.steps = a.steps;
  cfg.seed = resolve_seed(a.seed);
  cfg.target_speaker = a.exclude;
  apply_overrides(cfg, a.lr, a.batch);
  const ModelConfig model = ModelConfig::toy(corpus.n_phonemes, corpus.n_mels);
  if (model.xvector_dim != corpus.xvector_dim) throw ConfigError("corpus x-vector width does not match the model");
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = pretrain(corpus, model, cfg);
  save_checkpoint(r.checkpoint, a.out);
  write_text(a.out + ".trace.csv", trace_csv(r.trace));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "pretrain: " << cfg.steps << " steps";
  if (!r.trace.empty()) std::cout << ", final batch L_GLS " << format_double(r.trace.back().loss.l_gls);
  std::cout << " (" << secs << " s)\n";
  return 0;
}

struct FinetuneArgs {
  std::string data, ckpt, out;
  int target = -1;
  std::size_t budget = 30;
  std::size_t steps = 200;
  std::optional<std::uint32_t> seed;
  bool no_classifier = false;
  bool no_xvector = false;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
};

int run_finetune(const FinetuneArgs& a) {
  const Corpus corpus = load_corpus(a.data);
  const Checkpoint pre = load_checkpoint(a.ckpt);
  TrainConfig cfg = TrainConfig::toy();
  cfg.steps = a.steps;
  cfg.seed = resolve_seed(a.seed);
  cfg.target_speaker = a.target;
  cfg.budget = a.budget;
  cfg.use_classifier = !a.no_classifier;
  cfg.use_xvector = !a.no_xvector;
  apply_overrides(cfg, a.lr, a.batch);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = finetune(pre, corpus, cfg);
  save_checkpoint(r.checkpoint, a.out);
  write_text(a.out + ".trace.csv", trace_csv(r.trace));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "finetune: target L_GLS " << format_double(r.target_gls_before) << " -> "
            << format_double(r.target_gls_after) << " (" << secs << " s)\n";
  return 0;
}

struct EvalArgs {
  std::string data, ckpt, split = "test", report;
  int speaker = -2;
};

int run_eval(const EvalArgs& a) {
  const Corpus corpus = load_corpus(a.data);
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  // Default: the checkpoint's target speaker, or every speaker for a pretrain checkpoint.
  const int speaker = a.speaker != -2 ? a.speaker : ckpt.run.target_speaker;
  const auto rows = evaluate_mcd(ckpt, corpus, parse_split(a.split), speaker);
  if (rows.empty()) throw DataError("no utterances to evaluate");
  write_text(a.report, mcd_report_csv(rows));
  std::size_t truncated = 0;
  for (const auto& r : rows) truncated += r.truncated;
  std::cout << "mean MCD " << format_double(mean_mcd(rows)) << " dB over " << rows.size() << " utterances";
  if (truncated) std::cout << " (" << truncated << " truncated)";
  std::cout << "\n";
  return 0;
}

int run_gradcheck(const std::optional<std::uint32_t>& seed_flag) {
  const std::uint32_t seed = resolve_seed(seed_flag);
  GradcheckReport report = run_primitive_gradchecks(seed);
  for (auto& e : run_model_gradchecks(seed).entries) report.entries.push_back(e);
  for (const auto& e : report.entries) {
    std::cout << "  " << e.name << ": " << e.cases << " cases, max rel err " << e.max_rel_error
              << " (worst entry " << e.max_entry_error << ")\n";
  }
  std::cout << "max relative error " << report.max_rel_error() << (report.passed() ? " (ok)" : " (FAILED)") << "\n";
  return report.passed() ? 0 : 1;
}

struct PlotArgs {
  std::string data, utt, ckpt, out;
};

int run_plot(const PlotArgs& a) {
  const Corpus corpus = load_corpus(a.data);
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Utterance& u = corpus.find(a.utt);
  const InferenceOutput synth = synthesize(ckpt, corpus, u);
  if (synth.truncated) warn("inference for " + u.id + " ended before attention reached the last phoneme");
  write_text(a.out, mel_comparison_pgm(u.mel, synth.mel));
  fs::path csv = a.out;
  csv.replace_extension(".csv");
  write_text(csv, mel_comparison_csv(u.mel, synth.mel, synth.truncated));
  std::cout << "wrote " << a.out << " and " << csv.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tdass: target-dependent adaptive speaker synthesis on a toy corpus"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth-data", "generate the synthetic multi-speaker corpus");
  c_synth->add_option("--out", synth.out, "output directory (must be empty or absent)")->required();
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--speakers", synth.speakers, "train counts per speaker, e.g. 120,120,40 or 120:1.0,40:2.0");

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "train P and G on every speaker except one");
  c_pre->add_option("--data", pre.data)->required();
  c_pre->add_option("--exclude-speaker", pre.exclude)->required();
  c_pre->add_option("--steps", pre.steps)->required();
  c_pre->add_option("--out", pre.out)->required();
  c_pre->add_option("--seed", pre.seed);
  c_pre->add_option("--lr", pre.lr);
  c_pre->add_option("--batch-size", pre.batch);

  FinetuneArgs fine;
  auto* c_fine = app.add_subcommand("finetune", "adapt to a target speaker with the speaker classifier");
  c_fine->add_option("--data", fine.data)->required();
  c_fine->add_option("--ckpt", fine.ckpt)->required();
  c_fine->add_option("--target", fine.target)->required();
  c_fine->add_option("--budget", fine.budget, "target utterances: 30, 100, 300, 500 or any count")->required();
  c_fine->add_option("--steps", fine.steps)->required();
  c_fine->add_option("--out", fine.out)->required();
  c_fine->add_option("--seed", fine.seed);
  c_fine->add_flag("--no-classifier", fine.no_classifier);
  c_fine->add_flag("--no-xvector", fine.no_xvector);
  c_fine->add_option("--lr", fine.lr);
  c_fine->add_option("--batch-size", fine.batch);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval-mcd", "mel-cepstral distortion of free-running synthesis");
  c_eval->add_option("--data", eval.data)->required();
  c_eval->add_option("--ckpt", eval.ckpt)->required();
  c_eval->add_option("--split", eval.split)->check(CLI::IsMember({"train", "val", "test"}));
  c_eval->add_option("--report", eval.report)->required();
  c_eval->add_option("--speaker", eval.speaker, "-1 for all speakers; default is the checkpoint's target");

  std::optional<std::uint32_t> gc_seed;
  auto* c_gc = app.add_subcommand("gradcheck", "central-difference check of all gradients");
  c_gc->add_option("--seed", gc_seed);

  PlotArgs plot;
  auto* c_plot = app.add_subcommand("plot-mel", "ground truth vs synthesized mel as PGM and CSV");
  c_plot->add_option("--data", plot.data)->required();
  c_plot->add_option("--utt", plot.utt)->required();
  c_plot->add_option("--ckpt", plot.ckpt)->required();
  c_plot->add_option("--out", plot.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_pre) return run_pretrain(pre);
    if (*c_fine) return run_finetune(fine);
    if (*c_eval) return run_eval(eval);
    if (*c_gc) return run_gradcheck(gc_seed);
    if (*c_plot) return run_plot(plot);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
