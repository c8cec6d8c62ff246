// Command-line driver: train-tokenizer, pretrain, eval, verify, plot.
// Exit codes: 0 ok, 1 verification failure or aborted run, 2 configuration error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "svq/checkpoint.hpp"
#include "svq/config.hpp"
#include "svq/metrics.hpp"
#include "svq/pipeline.hpp"
#include "svq/plot.hpp"
#include "svq/verify.hpp"

namespace fs = std::filesystem;
using namespace svq;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
};

RunConfig load_config(const Globals& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : RunConfig::load(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.validate();
  return c;
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

Vocabulary checkpoint_vocabulary(const Checkpoint& c) { return Vocabulary::from_words(c.vocabulary); }

int cmd_train_tokenizer(const Globals& g) {
  const RunConfig config = load_config(g);
  const TrainingData data = make_training_data(config);
  std::cout << "corpus " << data.corpus.size() << " clips, vocabulary K=" << data.vocab.content_size() << "\n";
  const TokenizerRun run = train_tokenizer(config, data, &std::cout);
  ensure_parent(config.tokenizer_checkpoint);
  ensure_parent(config.tokenizer_metrics);
  write_checkpoint(config.tokenizer_checkpoint, make_tokenizer_checkpoint(run.tokenizer, run.vocab));
  run.log.write(config.tokenizer_metrics);
  std::cout << "wrote " << config.tokenizer_checkpoint << " and " << config.tokenizer_metrics << "\n";
  return kOk;
}

int cmd_pretrain(const Globals& g, bool no_mvm, const std::string& tokenizer_path) {
  const RunConfig config = load_config(g);
  const std::string path = tokenizer_path.empty() ? config.tokenizer_checkpoint : tokenizer_path;
  const Checkpoint ckpt = read_checkpoint(path);
  const FrozenTokenizer tokenizer = load_tokenizer(ckpt);
  const Vocabulary tokenizer_vocab = checkpoint_vocabulary(ckpt);
  const TrainingData data = make_training_data(config);
  check_tokenizer_compatible(config, tokenizer, data.vocab, tokenizer_vocab);
  const PretrainRun run = pretrain(config, data, tokenizer, !no_mvm, &std::cout);
  ensure_parent(config.vlm_checkpoint);
  ensure_parent(config.pretrain_metrics);
  write_checkpoint(config.vlm_checkpoint,
                   make_vlm_checkpoint(run.model, data.vocab,
                                       tokenizer_fingerprint(tokenizer.config(), tokenizer_vocab.hash())));
  run.log.write(config.pretrain_metrics);
  std::cout << "wrote " << config.vlm_checkpoint << " and " << config.pretrain_metrics << "\n";
  return kOk;
}

int cmd_eval(const Globals& g, const std::string& task, const std::string& checkpoint, const std::string& corpus_path,
             std::int64_t seed) {
  const RunConfig config = load_config(g);
  const Checkpoint ckpt = read_checkpoint(checkpoint.empty() ? config.vlm_checkpoint : checkpoint);
  const VlmModel model = load_vlm(ckpt);
  const Vocabulary vocab = checkpoint_vocabulary(ckpt);
  const auto clips = corpus_path.empty() ? make_eval_corpus(config) : read_corpus(corpus_path);
  const std::uint64_t s = seed >= 0 ? static_cast<std::uint64_t>(seed) : config.eval_seed;
  const EvalReport report =
      task == "matching" ? evaluate_matching(model, vocab, clips, s) : evaluate_multichoice(model, vocab, clips, s);
  std::cout << report.to_text() << "\n";
  return kOk;
}

int cmd_verify(bool inject_fault, std::uint64_t seed) {
  VerifyOptions options;
  options.seed = seed;
  options.inject_faulty_op = inject_fault;
  const VerifyReport report = run_verification(options);
  std::cout << report.to_text();
  return report.all_pass() ? kOk : kFailure;
}

int cmd_plot(const Globals& g, std::vector<std::string> inputs, const std::string& out_dir) {
  const RunConfig config = load_config(g);
  if (inputs.empty()) {
    for (const auto& p : {config.tokenizer_metrics, config.pretrain_metrics}) {
      if (fs::exists(p)) inputs.push_back(p);
    }
    if (inputs.empty()) throw ConfigError("no metrics files found; run training first or pass CSV paths");
  }
  fs::create_directories(out_dir);
  for (const auto& in : inputs) {
    const MetricsLog log = MetricsLog::read(in);
    const fs::path out = fs::path(out_dir) / (fs::path(in).stem().string() + ".svg");
    std::ofstream(out) << render_metrics_svg(log, fs::path(in).filename().string());
    std::cout << "wrote " << out.string() << "\n";
  }
  return kOk;
}

int cmd_export_corpus(const Globals& g, const std::string& which, const std::string& out) {
  const RunConfig config = load_config(g);
  ensure_parent(out);
  write_corpus(out, which == "eval" ? make_eval_corpus(config) : make_training_data(config).corpus);
  std::cout << "wrote " << out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic VQ video tokenizer and masked video modeling pretraining"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config_path, "key = value configuration file");
  app.add_option("-s,--set", g.overrides, "override one configuration key (key=value), repeatable");

  auto* train = app.add_subcommand("train-tokenizer", "stage 1: train the semantic VQ tokenizer");

  auto* pre = app.add_subcommand("pretrain", "stage 2: pretrain with labels from the frozen tokenizer");
  bool no_mvm = false;
  std::string tokenizer_path;
  pre->add_flag("--no-mvm", no_mvm, "drop masked video modeling (ablation)");
  pre->add_option("--tokenizer", tokenizer_path, "tokenizer checkpoint (default: config tokenizer_checkpoint)");

  auto* eval = app.add_subcommand("eval", "zero-shot matching or multiple-choice accuracy on held-out clips");
  std::string task, checkpoint, corpus_path;
  std::int64_t seed = -1;
  eval->add_option("--task", task, "matching or multichoice")->required()->check(CLI::IsMember({"matching", "multichoice"}));
  eval->add_option("--checkpoint", checkpoint, "model checkpoint (default: config vlm_checkpoint)");
  eval->add_option("--corpus", corpus_path, "held-out corpus file (default: generated from eval_size/eval_seed)");
  eval->add_option("--seed", seed, "evaluation seed (default: config eval_seed)");

  auto* verify = app.add_subcommand("verify", "run every oracle check");
  bool inject_fault = false;
  std::uint64_t verify_seed = 2024;
  verify->add_flag("--inject-fault", inject_fault, "add an op with a wrong backward rule (negative control)");
  verify->add_option("--seed", verify_seed, "seed for random check instances");

  auto* plot = app.add_subcommand("plot", "render metrics CSVs as SVG loss curves");
  std::vector<std::string> inputs;
  std::string out_dir = "runs/plots";
  plot->add_option("inputs", inputs, "metrics CSV files (default: the configured ones)");
  plot->add_option("--out", out_dir, "output directory");

  auto* exporter = app.add_subcommand("export-corpus", "write the training or held-out corpus as JSON lines");
  std::string which = "train", export_path;
  exporter->add_option("--which", which, "train or eval")->check(CLI::IsMember({"train", "eval"}));
  exporter->add_option("--out", export_path, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (train->parsed()) return cmd_train_tokenizer(g);
    if (pre->parsed()) return cmd_pretrain(g, no_mvm, tokenizer_path);
    if (eval->parsed()) return cmd_eval(g, task, checkpoint, corpus_path, seed);
    if (verify->parsed()) return cmd_verify(inject_fault, verify_seed);
    if (plot->parsed()) return cmd_plot(g, inputs, out_dir);
    if (exporter->parsed()) return cmd_export_corpus(g, which, export_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const MetricsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return kFailure;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kConfigError;
}
