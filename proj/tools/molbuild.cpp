// molbuild command-line entry point.
//
// Exit codes: 0 ok, 1 internal error, 2 configuration error, 3 data error
// (unreadable or unparseable inputs, checkpoint mismatch), 4 numeric failure,
// 5 training stopped by the oracle budget.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "json.hpp"
#include "molbuild/fingerprint.hpp"
#include "molbuild/policy.hpp"
#include "molbuild/rewards.hpp"
#include "molbuild/run_config.hpp"
#include "molbuild/sampler.hpp"
#include "molbuild/smiles.hpp"
#include "molbuild/trainer.hpp"

namespace fs = std::filesystem;
using namespace molbuild;

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumeric = 4, kBudget = 5 };

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_resolved(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "config.resolved.ini", cfg.resolved());
  write_text(dir / "config.digest", hex64(cfg.digest()) + "\n");
}

std::vector<MolecularGraph> read_molecules(const fs::path& path, bool strict) {
  if (path.empty()) throw ConfigError("no molecule file given");
  if (!fs::exists(path)) throw DataError("missing file " + path.string());
  auto file = read_molecule_file(path);
  for (const auto& e : file.errors) std::cerr << path.string() << ":" << e.line << ": " << e.message << "\n";
  if (strict && !file.errors.empty())
    throw DataError(path.string() + ":" + std::to_string(file.errors.front().line) + ": " +
                    file.errors.front().message);
  std::vector<MolecularGraph> out;
  for (auto& r : file.records) out.push_back(std::move(r.graph));
  return out;
}

ScaffoldSplit load_split(const RunConfig& cfg) {
  if (cfg.split.empty()) throw ConfigError("data.split is not set");
  std::ifstream in(cfg.split);
  if (!in) throw DataError("missing split file " + cfg.split);
  return read_split(in);
}

std::vector<MolecularGraph> parse_all(const std::vector<std::string>& smiles) {
  std::vector<MolecularGraph> out;
  for (const auto& s : smiles) out.push_back(parse_smiles(s));
  return out;
}

Fold parse_fold(const std::string& name) {
  if (name == "train") return Fold::Train;
  if (name == "val") return Fold::Val;
  if (name == "test") return Fold::Test;
  throw ConfigError("fold must be train, val or test");
}

Policy make_policy(const RunConfig& cfg, const std::string& checkpoint) {
  Policy p(cfg.model, cfg.model_seed);
  if (!checkpoint.empty()) {
    if (!fs::exists(checkpoint)) throw DataError("missing checkpoint " + checkpoint);
    load_checkpoint(checkpoint, p.params(), p.config().digest());
  }
  return p;
}

void write_json_line(std::ostream& out, const nlohmann::json& j) { out << j.dump() << "\n"; }

// ---- commands -----------------------------------------------------------------

struct SplitArgs {
  std::string input, out, config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> test_count, val_count;
  std::optional<double> cutoff;
};

int cmd_split(const SplitArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  SplitOptions opts = cfg.split_options;
  if (a.seed) opts.seed = *a.seed;
  if (a.test_count) opts.test_count = *a.test_count;
  if (a.val_count) opts.val_count = *a.val_count;
  if (a.cutoff) opts.cutoff = *a.cutoff;
  auto mols = read_molecules(a.input.empty() ? cfg.corpus : a.input, cfg.strict);
  auto split = make_split(mols, opts);
  std::ostringstream text;
  write_split(text, split);
  write_text(a.out, text.str());
  std::cout << "scaffolds " << split.scaffolds.size() << "\nclusters " << split.cluster_count << "\ntrain "
            << split.fold_size(Fold::Train) << "\nval " << split.fold_size(Fold::Val) << "\ntest "
            << split.fold_size(Fold::Test) << "\n";
  return kOk;
}

int cmd_pretrain(const std::string& config, const std::string& corpus_override, const std::string& out_override) {
  auto cfg = RunConfig::load(config);
  if (!out_override.empty()) cfg.output_dir = out_override;
  fs::path dir = cfg.output_dir;
  write_resolved(cfg, dir);
  auto mols = read_molecules(corpus_override.empty() ? cfg.pretrain_corpus : corpus_override, cfg.strict);
  // Keep held-out scaffolds out of pre-training when a split exists.
  if (!cfg.split.empty() && fs::exists(cfg.split)) {
    std::set<std::string> held_out;
    for (const auto& e : load_split(cfg).scaffolds)
      if (e.fold != Fold::Train) held_out.insert(e.smiles);
    std::erase_if(mols, [&](const MolecularGraph& m) {
      auto s = murcko_scaffold(m);
      return !s.empty() && held_out.count(write_smiles(s));
    });
    std::cerr << "pre-training on " << mols.size() << " molecules outside the held-out folds\n";
  }
  auto corpus = teacher_trajectories(mols, cfg.env);
  Policy policy(cfg.model, cfg.model_seed);
  std::ofstream log(dir / "pretrain_metrics.jsonl");
  auto res = pretrain_mle(policy, corpus, cfg.env, cfg.pretrain,
                          [&](int epoch, double nll) { write_json_line(log, {{"epoch", epoch}, {"nll", nll}}); });
  save_checkpoint(dir / "pretrained.ckpt", policy.params(), policy.config().digest());
  nlohmann::json summary = {{"steps", res.steps}, {"final_nll", res.final_nll}, {"oracle_calls", 0}};
  write_text(dir / "pretrain_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return kOk;
}

int cmd_train(const std::string& config, const std::string& init, std::optional<std::int64_t> budget,
              const std::string& out_override) {
  auto cfg = RunConfig::load(config);
  if (budget) cfg.train.oracle_budget = *budget;
  if (!out_override.empty()) cfg.output_dir = out_override;
  cfg.train.validate();
  fs::path dir = cfg.output_dir;
  write_resolved(cfg, dir);

  auto split = load_split(cfg);
  auto train_starts = parse_all(split.fold_smiles(Fold::Train));
  auto val_starts = parse_all(split.fold_smiles(Fold::Val));
  Policy policy = make_policy(cfg, init);

  OracleMeter meter;
  RewardFunction fn(cfg.reward, meter);
  RewardFn reward = [&fn](const MolecularGraph& c, const MolecularGraph& s, OraclePhase p) { return fn(c, s, p); };

  std::ofstream log(dir / "metrics.jsonl");
  const auto digest = policy.config().digest();
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    write_json_line(log, metrics_json(m, cfg.log_wall_time));
    log.flush();
    if (cfg.checkpoint_every > 0 && m.epoch % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", m.epoch);
      save_checkpoint(dir / name, policy.params(), digest);
    }
  };
  hooks.on_best = [&](const EpochMetrics&, const Policy& p) { save_checkpoint(dir / "best.ckpt", p.params(), digest); };

  auto res = train_policy(policy, train_starts, val_starts, reward, meter, cfg.env, cfg.train, hooks);
  // The trainer restores the best parameters, so both files hold them.
  save_checkpoint(dir / "best.ckpt", policy.params(), digest);
  save_checkpoint(dir / "final.ckpt", policy.params(), digest);
  nlohmann::json summary = {{"stop_reason", stop_reason_name(res.reason)},
                            {"message", res.message},
                            {"epochs", res.log.size()},
                            {"train_oracle_calls", meter.count(OraclePhase::Train)},
                            {"eval_oracle_calls", meter.count(OraclePhase::Eval)},
                            {"best_epoch", res.best_epoch},
                            {"best_val", std::isfinite(res.best_val) ? nlohmann::json(res.best_val) : nlohmann::json()}};
  write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  if (res.reason == StopReason::Numeric) return kNumeric;
  if (res.reason == StopReason::Budget) return kBudget;
  return kOk;
}

std::vector<MolecularGraph> resolve_starts(const RunConfig& cfg, const std::string& starts, const std::string& fold) {
  if (!starts.empty()) return read_molecules(starts, cfg.strict);
  return parse_all(load_split(cfg).fold_smiles(parse_fold(fold)));
}

int cmd_generate(const std::string& config, const std::string& checkpoint, const std::string& starts,
                 const std::string& fold, const std::string& out) {
  auto cfg = RunConfig::load(config);
  auto policy = make_policy(cfg, checkpoint);
  auto set = generate(policy, resolve_starts(cfg, starts, fold), cfg.env, cfg.eval);
  std::ostringstream text;
  for (std::size_t i = 0; i < set.starts.size(); ++i)
    for (const auto& t : set.completions[i])
      text << write_smiles(set.starts[i]) << "\t" << write_smiles(t.final_graph) << "\t" << format_trajectory(t)
           << "\n";
  write_text(out, text.str());
  std::cout << "generated " << set.starts.size() << " starts, oracle_calls 0\n";
  return kOk;
}

int cmd_evaluate(const std::string& config, const std::string& checkpoint, const std::string& starts,
                 const std::string& fold, const std::string& out_override) {
  auto cfg = RunConfig::load(config);
  if (!out_override.empty()) cfg.output_dir = out_override;
  fs::path dir = cfg.output_dir;
  write_resolved(cfg, dir);
  auto policy = make_policy(cfg, checkpoint);
  OracleMeter meter;
  RewardFunction fn(cfg.reward, meter);
  RewardFn reward = [&fn](const MolecularGraph& c, const MolecularGraph& s, OraclePhase p) { return fn(c, s, p); };
  auto res = evaluate(policy, resolve_starts(cfg, starts, fold), cfg.env, reward, meter, cfg.eval);
  std::ostringstream records;
  records << "# start\tbest\treward\tsuccess\tvalid\tpreserved\n";
  for (const auto& r : res.records)
    records << r.start_index << "\t" << (r.best.empty() ? "" : write_smiles(r.best)) << "\t" << r.reward << "\t"
            << r.success << "\t" << r.valid << "\t" << r.preserved << "\n";
  write_text(dir / "eval_records.tsv", records.str());
  auto summary = summary_json(res.summary);
  write_text(dir / "eval_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return kOk;
}

int cmd_grad_check(const std::string& config, int cases, std::uint64_t seed, double tolerance) {
  auto cfg = config.empty() ? RunConfig{} : RunConfig::load(config);
  std::vector<MolecularGraph> pool;
  if (!cfg.pretrain_corpus.empty()) pool = read_molecules(cfg.pretrain_corpus, cfg.strict);
  else if (!cfg.corpus.empty()) pool = read_molecules(cfg.corpus, cfg.strict);
  else
    for (const char* s : {"CCO", "c1ccccc1O", "CC(=O)N", "C1CCNCC1", "OCCN", "FC(F)Cl"}) pool.push_back(parse_smiles(s));
  Rng rng = Rng::substream(seed, "grad-check");
  Policy policy(cfg.model, seed);
  for (auto& [name, t] : policy.params().items())
    for (auto& x : t.values()) x += 0.3 * rng.normal();
  std::vector<Trajectory> trajs;
  for (int i = 0; i < cases; ++i) trajs.push_back(decompose(pool[rng.index(pool.size())]));
  GradCheckOptions opts;
  opts.seed = seed;
  auto r = check_score_gradients(policy, trajs, cfg.env, opts);
  std::cout << "checked " << r.checked << " coordinates, skipped " << r.skipped_kinks << " kinks, max rel error "
            << r.max_rel_error << " at " << r.worst << "\n";
  if (!(r.max_rel_error < tolerance)) {
    std::cout << "FAIL (tolerance " << tolerance << ")\n";
    return kNumeric;
  }
  std::cout << "PASS\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"molbuild: scaffold-conditioned molecule construction with policy-gradient fine-tuning"};
  app.require_subcommand(1);

  SplitArgs split;
  auto* sc_split = app.add_subcommand("split-data", "Cluster-based scaffold split");
  sc_split->add_option("--input", split.input, "Molecule file");
  sc_split->add_option("--seed", split.seed);
  sc_split->add_option("--test-count", split.test_count);
  sc_split->add_option("--val-count", split.val_count);
  sc_split->add_option("--cutoff", split.cutoff, "Butina similarity cutoff");
  sc_split->add_option("--config", split.config);
  sc_split->add_option("--out", split.out, "Split file to write")->required();

  std::string config, checkpoint, corpus, out, starts, fold = "test", init;
  std::optional<std::int64_t> budget;
  int cases = 25;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;

  auto* sc_pre = app.add_subcommand("pretrain", "Teacher-forced pre-training");
  sc_pre->add_option("--config", config)->required();
  sc_pre->add_option("--corpus", corpus);
  sc_pre->add_option("--out", out);

  auto* sc_train = app.add_subcommand("train", "Policy-gradient fine-tuning");
  sc_train->add_option("--config", config)->required();
  sc_train->add_option("--init", init, "Starting checkpoint");
  sc_train->add_option("--budget", budget, "Training oracle-call budget");
  sc_train->add_option("--out", out);

  auto* sc_gen = app.add_subcommand("generate", "Generate completions without scoring");
  sc_gen->add_option("--config", config)->required();
  sc_gen->add_option("--checkpoint", checkpoint);
  sc_gen->add_option("--starts", starts, "Start molecule file (default: split fold)");
  sc_gen->add_option("--fold", fold);
  sc_gen->add_option("--out", out)->required();

  auto* sc_eval = app.add_subcommand("evaluate", "Generate, then score in a separate pass");
  sc_eval->add_option("--config", config)->required();
  sc_eval->add_option("--checkpoint", checkpoint);
  sc_eval->add_option("--starts", starts);
  sc_eval->add_option("--fold", fold);
  sc_eval->add_option("--out", out);

  auto* sc_grad = app.add_subcommand("grad-check", "Finite-difference gradient check of the policy");
  sc_grad->add_option("--config", config);
  sc_grad->add_option("--cases", cases);
  sc_grad->add_option("--seed", seed);
  sc_grad->add_option("--tolerance", tolerance);

  std::int64_t be_budget = 0, be_cost = 0;
  auto* sc_be = app.add_subcommand("break-even", "Instances needed to amortise a training budget");
  sc_be->add_option("budget", be_budget)->required();
  sc_be->add_option("cost", be_cost, "Oracle calls per instance")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*sc_split) return cmd_split(split);
    if (*sc_pre) return cmd_pretrain(config, corpus, out);
    if (*sc_train) return cmd_train(config, init, budget, out);
    if (*sc_gen) return cmd_generate(config, checkpoint, starts, fold, out);
    if (*sc_eval) return cmd_evaluate(config, checkpoint, starts, fold, out);
    if (*sc_grad) return cmd_grad_check(config, cases, seed, tolerance);
    if (*sc_be) {
      if (be_cost <= 0) throw ConfigError("cost must be positive");
      std::cout << break_even(be_budget, be_cost) << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const SmilesError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
