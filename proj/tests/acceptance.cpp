// Acceptance suite: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exit status 0 only when every criterion passes.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "svq/checkpoint.hpp"
#include "svq/config.hpp"
#include "svq/metrics.hpp"
#include "svq/pipeline.hpp"
#include "svq/util.hpp"
#include "svq/verify.hpp"

namespace fs = std::filesystem;
using namespace svq;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// Folds a list of checks into one outcome, keeping failing details.
Outcome combine(const std::vector<CheckResult>& checks) {
  Outcome o;
  double worst = 0.0;
  std::ostringstream fails;
  for (const auto& c : checks) {
    worst = std::max(worst, c.max_error);
    if (!c.pass) {
      o.pass = false;
      fails << " [" << c.name << ": " << c.detail << "]";
    }
  }
  o.detail = std::to_string(checks.size()) + " checks, max error " + fmt(worst) + fails.str();
  return o;
}

Outcome within(Outcome o, double seconds, double limit) {
  o.detail += ", " + fmt(seconds, 3) + " s (limit " + fmt(limit, 4) + " s)";
  if (seconds >= limit) o.pass = false;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

constexpr std::uint64_t kSeed = 2024;

Outcome gradient_suite() {
  const auto start = Clock::now();
  std::vector<CheckResult> checks;
  for (const auto& op : op_cases()) checks.push_back(check_op_gradient(op, kSeed, 10, 1e-5, 1e-4));
  for (std::uint64_t s = 0; s < 5; ++s) {
    checks.push_back(check_svq_objective_gradient(kSeed + s, 1e-3));
    checks.push_back(check_pretrain_objective_gradient(kSeed + s, 1e-3));
  }
  return within(combine(checks), seconds_since(start), 60.0);
}

Outcome quantizer_oracle() {
  const auto start = Clock::now();
  const CheckResult r = check_nearest_code_oracle(kSeed, 1000);
  return within({r.pass, r.detail}, seconds_since(start), 10.0);
}

Outcome straight_through_contract() {
  return combine({check_straight_through_contract(kSeed), check_stop_gradient_routing(kSeed)});
}

Outcome loss_hand_values() {
  const CheckResult r = check_loss_hand_values();
  return {r.pass, r.detail};
}

Outcome mask_laws() {
  const CheckResult r = check_mask_laws(kSeed, 200);
  return {r.pass, r.detail};
}

// Shared by criteria 6 to 8: the default stage-1 run.
struct Stage1 {
  RunConfig config;
  TrainingData data;
  std::optional<TokenizerRun> run;
  double seconds = 0.0;
};

Outcome stage1_learning(Stage1& s) {
  const auto start = Clock::now();
  s.run = train_tokenizer(s.config, s.data, &std::cerr);
  s.seconds = seconds_since(start);
  const std::vector<double> ma = moving_average(s.run->log.column("L_TOKEN"), 10);
  if (ma.size() < 10) return {false, "fewer than 10 steps logged"};
  const double at10 = ma[9];
  const double best = *std::min_element(ma.begin() + 9, ma.end());
  const double util = s.run->final_utilization;
  Outcome o;
  o.pass = best <= 0.5 * at10 && util >= 0.6;
  o.detail = "L_TOKEN MA10 " + fmt(at10) + " at step 10 -> min " + fmt(best) + " (ratio " + fmt(best / at10) +
             ", need <= 0.5); utilization " + fmt(util) + " over " + std::to_string(s.data.corpus.size()) +
             " clips (need >= 0.6); M=" + std::to_string(s.config.codebook_size) + ", " +
             std::to_string(s.config.tokenizer_steps) + " steps";
  return within(o, s.seconds, 600.0);
}

Outcome semantic_codes(const Stage1& s, const std::vector<SyntheticClip>& held_out) {
  const FrozenTokenizer random = FrozenTokenizer::from_model(initial_tokenizer(s.config, s.data));
  const double mi_random = semantic_code_mi(random, held_out);
  const double mi_trained = semantic_code_mi(s.run->tokenizer, held_out);
  const double ratio = mi_trained / mi_random;
  return {ratio >= 3.0, "MI trained " + fmt(mi_trained) + " nats vs random init " + fmt(mi_random) +
                            " nats, ratio " + fmt(ratio) + " (need >= 3) over " + std::to_string(held_out.size()) +
                            " held-out clips"};
}

Outcome mvm_ablation(const Stage1& s, const std::vector<SyntheticClip>& held_out) {
  const auto start = Clock::now();
  double with_sum = 0.0, without_sum = 0.0;
  std::ostringstream per_seed;
  for (std::uint64_t k = 0; k < 3; ++k) {
    RunConfig c = s.config;
    c.seed = s.config.seed + k;
    double acc[2] = {0.0, 0.0};
    for (int mvm = 1; mvm >= 0; --mvm) {
      std::cerr << "ablation seed " << c.seed << (mvm ? " with" : " without") << " MVM\n";
      const PretrainRun run = pretrain(c, s.data, s.run->tokenizer, mvm == 1, &std::cerr);
      acc[mvm] = evaluate_multichoice(run.model, s.data.vocab, held_out, c.eval_seed).accuracy;
    }
    with_sum += acc[1];
    without_sum += acc[0];
    per_seed << " seed " << c.seed << ": " << fmt(acc[1]) << " vs " << fmt(acc[0]) << ";";
  }
  Outcome o;
  o.pass = with_sum / 3.0 >= without_sum / 3.0;
  o.detail = "multichoice mean with MVM " + fmt(with_sum / 3.0) + " vs without " + fmt(without_sum / 3.0) + " (" +
             std::to_string(s.config.pretrain_steps) + " steps each;" + per_seed.str() + " " +
             std::to_string(held_out.size()) + " held-out clips)";
  return within(o, seconds_since(start), 1800.0);
}

// Writes every artifact of one tokenizer + pretrain run into dir.
void full_pipeline(const RunConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  const TrainingData data = make_training_data(config);
  const TokenizerRun tok = train_tokenizer(config, data);
  tok.log.write((dir / "tokenizer_metrics.csv").string());
  write_checkpoint((dir / "tokenizer.ckpt").string(), make_tokenizer_checkpoint(tok.tokenizer, tok.vocab));
  const std::string before = slurp(dir / "tokenizer.ckpt");
  const FrozenTokenizer frozen = load_tokenizer(read_checkpoint((dir / "tokenizer.ckpt").string()));
  const PretrainRun pre = pretrain(config, data, frozen, true);
  pre.log.write((dir / "pretrain_metrics.csv").string());
  write_checkpoint((dir / "vlm.ckpt").string(),
                   make_vlm_checkpoint(pre.model, data.vocab,
                                       tokenizer_fingerprint(frozen.config(), data.vocab.hash())));
  if (slurp(dir / "tokenizer.ckpt") != before) throw std::runtime_error("pretraining modified the tokenizer");
}

Outcome determinism(const RunConfig& base) {
  RunConfig c = base;
  c.tokenizer_steps = 100;
  c.pretrain_steps = 20;
  const fs::path root = fs::temp_directory_path() / "svq_acceptance_determinism";
  fs::remove_all(root);
  Outcome o;
  try {
    full_pipeline(c, root / "a");
    full_pipeline(c, root / "b");
    std::ostringstream diffs;
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(root / "a")) {
      ++files;
      const fs::path other = root / "b" / entry.path().filename();
      if (slurp(entry.path()) != slurp(other)) diffs << " " << entry.path().filename().string() << " differs;";
    }
    o.pass = files == 4 && diffs.str().empty();
    o.detail = std::to_string(files) + " files byte-identical across two runs (" + std::to_string(c.tokenizer_steps) +
               " tokenizer + " + std::to_string(c.pretrain_steps) + " pretrain steps); tokenizer checkpoint untouched" +
               " by pretraining" + diffs.str();
  } catch (const std::exception& e) {
    o = {false, e.what()};
  }
  fs::remove_all(root);
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](int id, const std::string& name, const std::function<Outcome()>& run) {
    std::cerr << "== criterion " << id << ": " << name << "\n";
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << std::endl;
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "quantizer oracle", quantizer_oracle);
  report(3, "straight-through contract", straight_through_contract);
  report(4, "loss hand values", loss_hand_values);
  report(5, "mask laws", mask_laws);

  Stage1 stage1;
  stage1.data = make_training_data(stage1.config);
  const std::vector<SyntheticClip> held_out = make_eval_corpus(stage1.config);
  report(6, "stage-1 learning", [&] { return stage1_learning(stage1); });
  const auto needs_stage1 = [&](const std::function<Outcome()>& f) {
    return [&, f] { return stage1.run ? f() : Outcome{false, "stage-1 run unavailable"}; };
  };
  report(7, "semantic codes", needs_stage1([&] { return semantic_codes(stage1, held_out); }));
  report(8, "MVM ablation", needs_stage1([&] { return mvm_ablation(stage1, held_out); }));
  report(9, "determinism", [&] { return determinism(stage1.config); });

  std::cout << (9 - failures) << "/9 criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
