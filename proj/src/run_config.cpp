#include "molbuild/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <vector>

namespace molbuild {

namespace {

struct Key {
  std::string section;
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) throw ConfigError("bad value for " + key + ": '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + text + "'");
}

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

std::string fmt(bool b) { return b ? "true" : "false"; }

template <class T>
std::string fmt_int(T x) {
  return std::to_string(x);
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    auto str = [&](std::string sec, std::string name, auto access) {
      k.push_back({sec, name, [=](RunConfig& c, const std::string& v) { access(c) = v; },
                   [=](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); }});
    };
    auto num = [&](std::string sec, std::string name, auto access) {
      std::string full = sec + "." + name;
      k.push_back({sec, name,
                   [=](RunConfig& c, const std::string& v) {
                     auto& ref = access(c);
                     using T = std::remove_reference_t<decltype(ref)>;
                     ref = parse_number<T>(full, v);
                   },
                   [=](const RunConfig& c) {
                     auto& ref = access(const_cast<RunConfig&>(c));
                     using T = std::remove_reference_t<decltype(ref)>;
                     if constexpr (std::is_floating_point_v<T>) return fmt(ref);
                     else return fmt_int(ref);
                   }});
    };
    auto flag = [&](std::string sec, std::string name, auto access) {
      std::string full = sec + "." + name;
      k.push_back({sec, name, [=](RunConfig& c, const std::string& v) { access(c) = parse_bool(full, v); },
                   [=](const RunConfig& c) { return fmt(access(const_cast<RunConfig&>(c))); }});
    };

    str("data", "corpus", [](RunConfig& c) -> std::string& { return c.corpus; });
    str("data", "split", [](RunConfig& c) -> std::string& { return c.split; });
    str("data", "pretrain_corpus", [](RunConfig& c) -> std::string& { return c.pretrain_corpus; });
    flag("data", "strict", [](RunConfig& c) -> bool& { return c.strict; });
    num("data", "seed", [](RunConfig& c) -> std::uint64_t& { return c.split_options.seed; });
    num("data", "test_count", [](RunConfig& c) -> std::size_t& { return c.split_options.test_count; });
    num("data", "val_count", [](RunConfig& c) -> std::size_t& { return c.split_options.val_count; });
    num("data", "cutoff", [](RunConfig& c) -> double& { return c.split_options.cutoff; });
    num("data", "radius", [](RunConfig& c) -> int& { return c.split_options.radius; });
    num("data", "n_bits", [](RunConfig& c) -> std::size_t& { return c.split_options.n_bits; });

    num("model", "d", [](RunConfig& c) -> int& { return c.model.d; });
    num("model", "layers", [](RunConfig& c) -> int& { return c.model.layers; });
    num("model", "heads", [](RunConfig& c) -> int& { return c.model.heads; });
    num("model", "max_degree", [](RunConfig& c) -> int& { return c.model.max_degree; });
    num("model", "ffn_mult", [](RunConfig& c) -> int& { return c.model.ffn_mult; });
    num("model", "seed", [](RunConfig& c) -> std::uint64_t& { return c.model_seed; });

    num("env", "max_atoms", [](RunConfig& c) -> int& { return c.env.max_atoms; });
    num("env", "min_added_atoms", [](RunConfig& c) -> int& { return c.env.min_added_atoms; });
    num("env", "step_budget", [](RunConfig& c) -> int& { return c.env.step_budget; });

    num("pretrain", "max_steps", [](RunConfig& c) -> int& { return c.pretrain.max_steps; });
    num("pretrain", "batch_size", [](RunConfig& c) -> int& { return c.pretrain.batch_size; });
    num("pretrain", "lr", [](RunConfig& c) -> double& { return c.pretrain.lr; });
    num("pretrain", "clip_norm", [](RunConfig& c) -> double& { return c.pretrain.clip_norm; });
    num("pretrain", "target_nll", [](RunConfig& c) -> double& { return c.pretrain.target_nll; });
    num("pretrain", "seed", [](RunConfig& c) -> std::uint64_t& { return c.pretrain.seed; });

    num("train", "batch", [](RunConfig& c) -> int& { return c.train.batch; });
    num("train", "group", [](RunConfig& c) -> int& { return c.train.group; });
    num("train", "lr", [](RunConfig& c) -> double& { return c.train.lr; });
    num("train", "clip_norm", [](RunConfig& c) -> double& { return c.train.clip_norm; });
    num("train", "entropy_coef", [](RunConfig& c) -> double& { return c.train.entropy_coef; });
    flag("train", "grouping", [](RunConfig& c) -> bool& { return c.train.grouping; });
    num("train", "baseline_decay", [](RunConfig& c) -> double& { return c.train.baseline_decay; });
    num("train", "max_epochs", [](RunConfig& c) -> int& { return c.train.max_epochs; });
    num("train", "oracle_budget", [](RunConfig& c) -> std::int64_t& { return c.train.oracle_budget; });
    num("train", "patience", [](RunConfig& c) -> int& { return c.train.patience; });
    num("train", "val_every", [](RunConfig& c) -> int& { return c.train.val_every; });
    flag("train", "mixed_starts", [](RunConfig& c) -> bool& { return c.train.mixed_starts; });
    num("train", "seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    num("train", "threads", [](RunConfig& c) -> int& { return c.train.threads; });
    num("train", "checkpoint_every", [](RunConfig& c) -> int& { return c.checkpoint_every; });
    flag("train", "log_wall_time", [](RunConfig& c) -> bool& { return c.log_wall_time; });

    k.push_back({"reward", "aggregator",
                 [](RunConfig& c, const std::string& v) { c.reward.aggregator = parse_aggregator(v); },
                 [](const RunConfig& c) { return aggregator_name(c.reward.aggregator); }});
    for (const char* slot : {"gsk3b", "jnk3", "qed", "sa"}) {
      std::string s = slot;
      k.push_back({"reward", s, [s](RunConfig& c, const std::string& v) { c.reward.bindings[s] = v; },
                   [s](const RunConfig& c) {
                     auto it = c.reward.bindings.find(s);
                     return it == c.reward.bindings.end() ? std::string() : it->second;
                   }});
    }
    num("reward", "threshold_gsk3b", [](RunConfig& c) -> double& { return c.reward.thresholds.gsk3b; });
    num("reward", "threshold_jnk3", [](RunConfig& c) -> double& { return c.reward.thresholds.jnk3; });
    num("reward", "threshold_qed", [](RunConfig& c) -> double& { return c.reward.thresholds.qed; });
    num("reward", "threshold_sa", [](RunConfig& c) -> double& { return c.reward.thresholds.sa; });
    flag("reward", "cleave_requires_new", [](RunConfig& c) -> bool& { return c.reward.cleave_requires_new; });
    k.push_back({"reward", "logp_table",
                 [](RunConfig& c, const std::string& v) { c.reward.logp_table = v; },
                 [](const RunConfig& c) { return c.reward.logp_table.string(); }});

    k.push_back({"eval", "mode",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "greedy") c.eval.mode = EvalMode::Greedy;
                   else if (v == "sample") c.eval.mode = EvalMode::Sample;
                   else throw ConfigError("eval.mode must be greedy or sample");
                 },
                 [](const RunConfig& c) { return std::string(c.eval.mode == EvalMode::Greedy ? "greedy" : "sample"); }});
    num("eval", "samples", [](RunConfig& c) -> int& { return c.eval.samples; });
    num("eval", "seed", [](RunConfig& c) -> std::uint64_t& { return c.eval.seed; });

    str("output", "dir", [](RunConfig& c) -> std::string& { return c.output_dir; });
    return k;
  }();
  return table;
}

}  // namespace

RunConfig RunConfig::parse(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("key outside a section: " + section);
    if (section == "weights") {
      for (const auto& [name, value] : body) {
        find_component(name);
        c.reward.weights[name] = parse_number<double>("weights." + name, value.data());
      }
      continue;
    }
    bool known_section = false;
    for (const auto& k : keys()) known_section = known_section || k.section == section;
    if (!known_section) throw ConfigError("unknown config section: [" + section + "]");
    for (const auto& [name, value] : body) {
      const Key* key = nullptr;
      for (const auto& k : keys())
        if (k.section == section && k.name == name) key = &k;
      if (!key) throw ConfigError("unknown config key: " + section + "." + name);
      key->set(c, value.data());
    }
  }
  c.model.validate();
  c.train.validate();
  c.reward.validate();
  if (c.env.max_atoms < 1 || c.env.min_added_atoms < 0 || c.env.step_budget < 0)
    throw ConfigError("env sizes must be non-negative and max_atoms positive");
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse(in);
}

std::string RunConfig::resolved() const {
  std::ostringstream out;
  std::string section;
  for (const auto& k : keys()) {
    if (k.section != section) {
      if (!section.empty()) out << "\n";
      section = k.section;
      out << "[" << section << "]\n";
    }
    out << k.name << " = " << k.get(*this) << "\n";
  }
  if (!reward.weights.empty()) {
    out << "\n[weights]\n";
    for (const auto& [name, w] : reward.weights) out << name << " = " << fmt(w) << "\n";
  }
  return out.str();
}

std::uint64_t RunConfig::digest() const { return fnv1a64(resolved()); }

}  // namespace molbuild
