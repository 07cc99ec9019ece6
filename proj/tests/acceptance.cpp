// Acceptance run: one PASS/FAIL line per criterion. Exit status is 0 when every criterion was
// evaluated, whatever the verdicts; --strict turns any FAIL into exit 1.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>

#include "tdass/tdass.hpp"

using namespace tdass;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct CliRun {
  int status = -1;
  std::string output;
};

class Cli {
 public:
  Cli(std::string binary, fs::path log) : binary_(std::move(binary)), log_(std::move(log)) {}

  CliRun run(const std::string& args) const {
    const std::string cmd = binary_ + " " + args + " 2>&1";
    CliRun r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) throw Error("could not start " + binary_);
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
    const int raw = ::pclose(p);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    append_file(log_, "$ " + cmd + "\n" + r.output);
    return r;
  }

  // Runs and throws with the captured output when the command fails.
  std::string must(const std::string& args) const {
    CliRun r = run(args);
    if (r.status != 0) throw Error("`tdass " + args + "` exited " + std::to_string(r.status) + ":\n" + r.output);
    return r.output;
  }

 private:
  static void append_file(const fs::path& p, const std::string& s) {
    std::string prev = fs::exists(p) ? read_file_bytes(p) : std::string();
    write_file_bytes(p, prev + s);
  }

  std::string binary_;
  fs::path log_;
};

double capture_double(const std::string& text, const std::string& pattern) {
  std::smatch m;
  if (!std::regex_search(text, m, std::regex(pattern))) throw Error("no match for /" + pattern + "/ in:\n" + text);
  return std::stod(m[1].str());
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// ---------------------------------------------------------------------------------------------

Verdict gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport prim = run_primitive_gradchecks(42, 20);
  const GradcheckReport model = run_model_gradchecks(42, 20);
  const double secs = seconds_since(t0);
  double model_entry = 0.0;
  for (const auto& e : model.entries) model_entry = std::max(model_entry, e.max_entry_error);
  const bool ok = prim.passed() && model.passed() && secs < 60.0;
  return {ok, "primitives " + fmt(prim.max_rel_error()) + ", model " + fmt(model.max_rel_error()) +
                  " per tensor (elementwise " + fmt(model_entry) + "), " + fmt(secs) + " s"};
}

Verdict routing() {
  const auto t0 = std::chrono::steady_clock::now();
  const RoutingReport r = grl_routing_check(42, {1, 1, 0, 0}, 0.5);
  const double secs = seconds_since(t0);
  const bool ok = r.per_sample_p_error <= 1e-12 && r.c_error <= 1e-12 && r.g_classifier_max == 0.0 && secs < 5.0;
  return {ok, "theta_P " + fmt(r.per_sample_p_error) + ", theta_C " + fmt(r.c_error) + ", " + fmt(secs) + " s"};
}

Verdict update_rule() {
  const double all_target = update_rule_check(42, {1, 1, 1, 1}, 0.5).max_error;
  const double mixed = update_rule_check(42, {1, 1, 0, 0}, 0.5).max_error;
  return {all_target <= 1e-12 && mixed <= 1e-10, "all-target " + fmt(all_target) + ", mixed " + fmt(mixed)};
}

Verdict schedule() {
  const double l0 = lambda_schedule(0.0), lh = lambda_schedule(0.5), l1 = lambda_schedule(1.0);
  bool increasing = true;
  for (int i = 1; i <= 100; ++i) increasing = increasing && lambda_schedule(i / 100.0) > lambda_schedule((i - 1) / 100.0);
  const bool ok = l0 == 0.0 && std::abs(lh - 0.986614) <= 1e-6 && std::abs(l1 - 0.999909) <= 1e-6 && increasing;
  char buf[96];
  std::snprintf(buf, sizeof buf, "lambda(0)=%g lambda(0.5)=%.6f lambda(1)=%.6f", l0, lh, l1);
  return {ok, std::string(buf) + (increasing ? ", increasing" : ", NOT increasing")};
}

double brute_dtw(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), m = b.dim(0);
  std::function<double(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> double {
    const double d = frame_distance(a, i, b, j);
    if (i == n - 1 && j == m - 1) return d;
    double best = std::numeric_limits<double>::infinity();
    if (i + 1 < n) best = std::min(best, go(i + 1, j));
    if (j + 1 < m) best = std::min(best, go(i, j + 1));
    if (i + 1 < n && j + 1 < m) best = std::min(best, go(i + 1, j + 1));
    return d + best;
  };
  return go(0, 0);
}

Verdict properties() {
  Rng rng(42);
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  auto random = [&](std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (auto& v : t.data()) v = g(rng);
    return t;
  };

  double softmax_err = 0.0;
  for (int c = 0; c < 20; ++c) {
    Tape tape;
    const Tensor s = softmax_last(tape.constant(random(5, 2 + c % 4))).value();
    for (std::size_t i = 0; i < s.dim(0); ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < s.dim(1); ++j) row += s.at(i, j);
      softmax_err = std::max(softmax_err, std::abs(row - 1.0));
    }
  }

  bool ce_ok = true;
  {
    Tape tape;
    const ClassifierLosses confident =
        loss_cls(tape.constant(Tensor::matrix({{0, 1}, {1, 0}})), SpeakerLabelBatch{{1, 0}});
    ce_ok = confident.target.value().item() == 0.0 && confident.non_target.value().item() == 0.0;
    for (int c = 0; c < 20; ++c) {
      const double p = u(rng);
      const ClassifierLosses l = loss_cls(tape.constant(Tensor::matrix({{1 - p, p}, {p, 1 - p}})), SpeakerLabelBatch{{1, 0}});
      ce_ok = ce_ok && l.target.value().item() > 0.0 && l.non_target.value().item() > 0.0;
    }
  }

  double mcd_identity = 0.0, mcd_asym = 0.0;
  for (int c = 0; c < 10; ++c) {
    const Tensor a = random(3 + c, 13), b = random(4 + c % 3, 13);
    mcd_identity = std::max(mcd_identity, mcd(a, a));
    mcd_asym = std::max(mcd_asym, std::abs(mcd(a, b) - mcd(b, a)));
  }
  Tensor z({1, 13}), e({1, 13});
  e.at(0, 1) = 1.0;
  const double unit = mcd(z, e);

  double dtw_err = 0.0;
  for (std::size_t n = 1; n <= 6; ++n) {
    for (std::size_t m = 1; m <= 6; ++m) {
      const Tensor a = random(n, 3), b = random(m, 3);
      dtw_err = std::max(dtw_err, std::abs(dtw_align(a, b).cost - brute_dtw(a, b)));
    }
  }

  const bool ok = softmax_err <= 1e-9 && ce_ok && mcd_identity == 0.0 && mcd_asym <= 1e-9 &&
                  std::abs(unit - 6.141851) <= 1e-6 && dtw_err <= 1e-12;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", unit);
  return {ok, "softmax " + fmt(softmax_err) + ", CE " + (ce_ok ? "ok" : "bad") + ", MCD identity " + fmt(mcd_identity) +
                  " symmetry " + fmt(mcd_asym) + " unit " + buf + " dB, DTW vs brute force " + fmt(dtw_err)};
}

struct PipelineRun {
  double gls_before = 0.0;
  double gls_after = 0.0;
  double seconds = 0.0;
  std::string pretrain_trace, finetune_trace, finetune_ckpt;
};

PipelineRun pipeline(const Cli& cli, const fs::path& dir) {
  PipelineRun r;
  const auto t0 = std::chrono::steady_clock::now();
  cli.must("synth-data --seed 42 --speakers 120,120,40 --out " + q(dir / "data"));
  cli.must("pretrain --seed 42 --data " + q(dir / "data") + " --exclude-speaker 2 --steps 200 --out " +
           q(dir / "pre.ckpt"));
  const std::string out = cli.must("finetune --seed 42 --data " + q(dir / "data") + " --ckpt " + q(dir / "pre.ckpt") +
                                   " --target 2 --budget 30 --steps 200 --out " + q(dir / "tdass.ckpt"));
  r.seconds = seconds_since(t0);
  r.gls_before = capture_double(out, R"(target L_GLS (\S+) ->)");
  r.gls_after = capture_double(out, R"(-> (\S+))");
  r.pretrain_trace = read_file_bytes(dir / "pre.ckpt.trace.csv");
  r.finetune_trace = read_file_bytes(dir / "tdass.ckpt.trace.csv");
  r.finetune_ckpt = read_file_bytes(dir / "tdass.ckpt");
  return r;
}

Verdict end_to_end(const Cli& cli, const fs::path& work) {
  const PipelineRun a = pipeline(cli, work / "run_a");
  const PipelineRun b = pipeline(cli, work / "run_b");
  const bool same = a.pretrain_trace == b.pretrain_trace && a.finetune_trace == b.finetune_trace &&
                    a.finetune_ckpt == b.finetune_ckpt;
  const double ratio = a.gls_after / a.gls_before;
  const bool ok = ratio < 0.5 && a.seconds < 600.0 && same;
  return {ok, "target L_GLS " + fmt(a.gls_before) + " -> " + fmt(a.gls_after) + " (ratio " + fmt(ratio) +
                  ", need < 0.5), " + fmt(a.seconds) + " s, repeat " + (same ? "bitwise identical" : "DIFFERS")};
}

double eval_mean(const Cli& cli, const fs::path& data, const fs::path& ckpt, const fs::path& report) {
  const std::string out = cli.must("eval-mcd --data " + q(data) + " --ckpt " + q(ckpt) + " --report " + q(report));
  return capture_double(out, R"(mean MCD (\S+) dB)");
}

Verdict direction(const Cli& cli, const fs::path& work) {
  const fs::path dir = work / "run_a";
  cli.must("finetune --seed 42 --data " + q(dir / "data") + " --ckpt " + q(dir / "pre.ckpt") +
           " --target 2 --budget 30 --steps 200 --no-classifier --out " + q(dir / "plain.ckpt"));
  const double with = eval_mean(cli, dir / "data", dir / "tdass.ckpt", dir / "tdass_mcd.csv");
  const double without = eval_mean(cli, dir / "data", dir / "plain.ckpt", dir / "plain_mcd.csv");
  return {with <= without, "test MCD with classifier " + fmt(with) + " dB, without " + fmt(without) + " dB"};
}

Verdict ablation(const Cli& cli, const fs::path& work, bool full_budgets) {
  const fs::path dir = work / "ablation";
  std::vector<int> budgets{30, 100};
  if (full_budgets) budgets.insert(budgets.end(), {300, 500});
  const std::string speakers = full_budgets ? "120,120,520" : "120,120,140";
  cli.must("synth-data --seed 42 --speakers " + speakers + " --out " + q(dir / "data"));
  cli.must("pretrain --seed 42 --data " + q(dir / "data") + " --exclude-speaker 2 --steps 200 --out " +
           q(dir / "pre.ckpt"));
  const std::vector<std::pair<std::string, std::string>> arms{
      {"tdass", ""}, {"no_xvector", " --no-xvector"}, {"no_classifier", " --no-classifier"},
      {"plain", " --no-classifier --no-xvector"}};
  std::string detail;
  bool ok = true;
  for (int budget : budgets) {
    detail += (detail.empty() ? "" : "; ") + std::string("budget ") + std::to_string(budget) + ":";
    for (const auto& [name, flags] : arms) {
      const std::string stem = name + "_" + std::to_string(budget);
      cli.must("finetune --seed 42 --data " + q(dir / "data") + " --ckpt " + q(dir / "pre.ckpt") +
               " --target 2 --steps 200 --budget " + std::to_string(budget) + flags + " --out " +
               q(dir / (stem + ".ckpt")));
      const fs::path report = dir / (stem + "_mcd.csv");
      const double m = eval_mean(cli, dir / "data", dir / (stem + ".ckpt"), report);
      std::istringstream in(read_file_bytes(report));
      std::string line;
      std::getline(in, line);
      std::size_t rows = 0;
      while (std::getline(in, line)) rows += !line.empty();
      ok = ok && line.empty() && rows == 20;
      detail += " " + name + " " + fmt(m);
    }
  }
  return {ok, detail + " dB (20 test rows each)"};
}

Verdict round_trips(const fs::path& work) {
  const fs::path dir = work / "roundtrip";
  SyntheticCorpusConfig cfg;
  cfg.train_utterances = {10, 10, 8};
  cfg.val_per_speaker = 1;
  cfg.test_per_speaker = 2;
  const Corpus corpus = synth_corpus(cfg, dir / "data");
  TrainConfig tc = TrainConfig::toy();
  tc.steps = 2;
  tc.budget = 5;
  const Checkpoint pre = pretrain(corpus, ModelConfig::toy(), tc).checkpoint;
  const Checkpoint fine = finetune(pre, corpus, tc).checkpoint;
  save_checkpoint(fine, dir / "fine.ckpt");
  const std::string bytes = read_file_bytes(dir / "fine.ckpt");
  bool ok = serialize_checkpoint(load_checkpoint(dir / "fine.ckpt")) == bytes;

  const Corpus loaded = load_corpus(dir / "data");
  ok = ok && loaded == corpus && manifest_complete(dir / "data");
  for (const auto& u : loaded.utterances) {
    ok = ok && encode_utterance(u) == read_file_bytes(dir / "data" / utterance_relative_path(u));
  }

  std::size_t loud = 0, tried = 0;
  for (std::size_t cut : {std::size_t{2}, std::size_t{9}, bytes.size() / 3, bytes.size() - 1}) {
    ++tried;
    write_file_bytes(dir / "bad.ckpt", bytes.substr(0, cut));
    Checkpoint held = pre;
    try {
      held = load_checkpoint(dir / "bad.ckpt");
    } catch (const FormatError&) {
      loud += held == pre;
    }
  }
  ++tried;
  write_file_bytes(dir / "bad.ckpt", bytes + "?");
  try {
    load_checkpoint(dir / "bad.ckpt");
  } catch (const FormatError&) {
    ++loud;
  }
  const fs::path victim = dir / "data" / utterance_relative_path(corpus.utterances[0]);
  const std::string utt = read_file_bytes(victim);
  write_file_bytes(victim, utt.substr(0, utt.size() - 3));
  ++tried;
  try {
    load_corpus(dir / "data");
  } catch (const FormatError&) {
    ++loud;
  }
  ok = ok && loud == tried;
  return {ok, std::string("checkpoint and ") + std::to_string(corpus.utterances.size()) + " utterance files byte-identical, " +
                  std::to_string(loud) + "/" + std::to_string(tried) + " corruptions rejected"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tdass acceptance run"};
  std::string cli_path;
  std::string work_arg;
  bool strict = false, keep = false, full_budgets = false;
  app.add_option("--cli", cli_path, "path to the tdass binary")->required();
  app.add_option("--work", work_arg, "scratch directory (default: fresh temp dir, removed afterwards)");
  app.add_flag("--strict", strict, "exit 1 if any criterion fails");
  app.add_flag("--keep", keep, "keep the scratch directory");
  app.add_flag("--full-budgets", full_budgets, "also run the ablation at budgets 300 and 500");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = work_arg.empty()
                            ? fs::temp_directory_path() / ("tdass_acceptance_" + std::to_string(::getpid()))
                            : fs::path(work_arg);
  fs::remove_all(work);
  fs::create_directories(work);
  const Cli cli(cli_path, work / "cli.log");

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient checks", gradients},
      {"reversal routing", routing},
      {"update rule", update_rule},
      {"lambda schedule", schedule},
      {"loss and metric properties", properties},
      {"end-to-end toy run", [&] { return end_to_end(cli, work); }},
      {"classifier vs no classifier", [&] { return direction(cli, work); }},
      {"ablation arms", [&] { return ablation(cli, work, full_budgets); }},
      {"round trips", [&] { return round_trips(work); }},
  };

  int failed = 0, errored = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
      ++errored;
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria pass" << std::endl;
  if (!keep) fs::remove_all(work);
  if (errored) return 2;
  return strict && failed ? 1 : 0;
}
