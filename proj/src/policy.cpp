#include "molbuild/policy.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace molbuild {

void PolicyConfig::validate() const {
  if (d < 1 || layers < 0 || heads < 1 || max_degree < 1 || ffn_mult < 1)
    throw std::invalid_argument("policy sizes must be positive");
  if (d % heads != 0) throw std::invalid_argument("latent dim must be divisible by the head count");
}

std::uint64_t PolicyConfig::digest() const {
  std::ostringstream s;
  s << "policy/v1 d=" << d << " layers=" << layers << " heads=" << heads << " max_degree=" << max_degree
    << " ffn_mult=" << ffn_mult << " vocab=" << kVocabSize << " edges=" << kEdgeTypes;
  return fnv1a64(s.str());
}

namespace {

Tensor gaussian(Rng& rng, int rows, int cols, double stddev) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::from(rows, cols, std::move(v));
}

}  // namespace

Policy::Policy(PolicyConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::substream(seed, "policy-init");
  const int d = config_.d;
  const double w = 1.0 / std::sqrt(static_cast<double>(d));
  params_.add("embed.atom", gaussian(rng, kVocabSize, d, 1.0));
  params_.add("embed.degree", gaussian(rng, config_.max_degree + 1, d, 1.0));
  params_.add("embed.sel0", gaussian(rng, 2, d, 1.0));
  params_.add("embed.sel1", gaussian(rng, 2, d, 1.0));
  params_.add("embed.virtual", gaussian(rng, 1, d, 1.0));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* m : {"attn.q", "attn.k", "attn.v", "attn.o"}) params_.add(p + m, gaussian(rng, d, d, w));
    params_.add(p + "attn.edge_bias", Tensor::zeros(config_.heads, kEdgeTypes));
    params_.add(p + "attn.rezero", Tensor::zeros(1, 1));
    const int hidden = config_.ffn_mult * d;
    params_.add(p + "ffn.w1", gaussian(rng, d, hidden, w));
    params_.add(p + "ffn.b1", Tensor::zeros(1, hidden));
    params_.add(p + "ffn.w2", gaussian(rng, hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden))));
    params_.add(p + "ffn.b2", Tensor::zeros(1, d));
    params_.add(p + "ffn.rezero", Tensor::zeros(1, 1));
  }
  auto head = [&](const std::string& name, int in, int out) {
    params_.add(name + ".w1", gaussian(rng, in, d, 1.0 / std::sqrt(static_cast<double>(in))));
    params_.add(name + ".b1", Tensor::zeros(1, d));
    params_.add(name + ".w2", Tensor::zeros(d, out));
    params_.add(name + ".b2", Tensor::zeros(1, out));
  };
  head("head0.virtual", d, kLevel0Fixed);
  head("head0.atom", d, 1);
  head("head1.atom", d, 1);
  head("head2", 3 * d, kLevel2Size);
}

Policy Policy::clone() const {
  Policy p(*this);
  p.params_ = params_.clone();
  return p;
}

std::vector<int> edge_types(const MolecularGraph& g) {
  const int n = g.atom_count();
  const int m = n + 1;
  std::vector<int> t(static_cast<std::size_t>(m) * m, 0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      int& e = t[static_cast<std::size_t>(i) * m + j];
      if (i == j) e = kEdgeSelf;
      else if (i == n || j == n) e = kEdgeVirtual;
    }
  }
  for (const auto& b : g.bonds()) {
    t[static_cast<std::size_t>(b.u) * m + b.v] = b.order;
    t[static_cast<std::size_t>(b.v) * m + b.u] = b.order;
  }
  return t;
}

Tensor Policy::input_embeddings(Tape& tape, const EnvState& state) const {
  if (state.done()) throw ContractError("encode on a finished state");
  const auto& g = state.graph;
  const int n = g.atom_count();
  std::vector<int> tokens(n), degrees(n), flag0(n, 0), flag1(n, 0);
  for (int a = 0; a < n; ++a) {
    tokens[a] = g.atom(a).id();
    degrees[a] = std::min(g.degree(a), config_.max_degree);
  }
  if (int u = state.selected_atom(); u >= 0) flag0[u] = 1;
  if (state.phase == Phase::Level2) flag1[state.level1_choice] = 1;

  Tensor atoms = add(tape, gather_rows(tape, params_.get("embed.atom"), tokens),
                     gather_rows(tape, params_.get("embed.degree"), degrees));
  atoms = add(tape, atoms, gather_rows(tape, params_.get("embed.sel0"), flag0));
  atoms = add(tape, atoms, gather_rows(tape, params_.get("embed.sel1"), flag1));
  Tensor virt = add(tape, params_.get("embed.virtual"),
                    gather_rows(tape, params_.get("embed.sel0"), {state.pending_add() ? 1 : 0}));
  return concat_rows(tape, {atoms, virt});
}

Tensor Policy::encode(Tape& tape, const EnvState& state) const {
  Tensor x = input_embeddings(tape, state);
  const int m = x.rows();
  const int dk = config_.d / config_.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  const auto types = edge_types(state.graph);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Tensor q = matmul(tape, x, params_.get(p + "attn.q"));
    Tensor k = matmul(tape, x, params_.get(p + "attn.k"));
    Tensor v = matmul(tape, x, params_.get(p + "attn.v"));
    std::vector<Tensor> heads;
    for (int h = 0; h < config_.heads; ++h) {
      Tensor qh = slice_cols(tape, q, h * dk, (h + 1) * dk);
      Tensor kh = slice_cols(tape, k, h * dk, (h + 1) * dk);
      Tensor vh = slice_cols(tape, v, h * dk, (h + 1) * dk);
      Tensor s = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv);
      s = add(tape, s, gather_grid(tape, params_.get(p + "attn.edge_bias"), h, types, m));
      heads.push_back(matmul(tape, softmax_rows(tape, s), vh));
    }
    Tensor att = matmul(tape, concat_cols(tape, heads), params_.get(p + "attn.o"));
    x = add(tape, x, scale_by(tape, att, params_.get(p + "attn.rezero")));
    Tensor hid = relu(tape, add_row(tape, matmul(tape, x, params_.get(p + "ffn.w1")), params_.get(p + "ffn.b1")));
    Tensor f = add_row(tape, matmul(tape, hid, params_.get(p + "ffn.w2")), params_.get(p + "ffn.b2"));
    x = add(tape, x, scale_by(tape, f, params_.get(p + "ffn.rezero")));
  }
  return x;
}

Tensor Policy::mlp(Tape& tape, const std::string& prefix, const Tensor& x) const {
  Tensor h = relu(tape, add_row(tape, matmul(tape, x, params_.get(prefix + ".w1")), params_.get(prefix + ".b1")));
  return add_row(tape, matmul(tape, h, params_.get(prefix + ".w2")), params_.get(prefix + ".b2"));
}

Tensor Policy::level_logits(Tape& tape, const EnvState& state, const Tensor& latents) const {
  const int n = state.graph.atom_count();
  if (latents.rows() != n + 1 || latents.cols() != config_.d)
    throw ContractError("latents do not match the state");
  std::vector<int> atom_rows(n);
  for (int a = 0; a < n; ++a) atom_rows[a] = a;
  switch (state.phase) {
    case Phase::Level0: {
      Tensor virt = gather_rows(tape, latents, {n});
      Tensor fixed = mlp(tape, "head0.virtual", virt);
      Tensor per_atom = transpose(tape, mlp(tape, "head0.atom", gather_rows(tape, latents, atom_rows)));
      return concat_cols(tape, {fixed, per_atom});
    }
    case Phase::Level1:
      return transpose(tape, mlp(tape, "head1.atom", gather_rows(tape, latents, atom_rows)));
    case Phase::Level2: {
      int u = state.selected_atom();
      int first = u >= 0 ? u : n;
      Tensor rows = gather_rows(tape, latents, {n, first, state.level1_choice});
      Tensor flat = concat_cols(tape, {gather_rows(tape, rows, {0}), gather_rows(tape, rows, {1}),
                                       gather_rows(tape, rows, {2})});
      return mlp(tape, "head2", flat);
    }
    case Phase::Done: break;
  }
  throw ContractError("level_logits on a finished state");
}

std::vector<double> Policy::action_log_probs(const EnvState& state, const EnvConfig& env) const {
  auto mask = legal_mask(state, env);
  std::vector<double> out(mask.legal.size(), -std::numeric_limits<double>::infinity());
  if (mask.legal_count() == 1) {
    out[mask.first_legal()] = 0.0;
    return out;
  }
  Tape tape(false);
  Tensor logits = level_logits(tape, state, encode(tape, state));
  return masked_log_softmax(tape, logits, mask.legal).values();
}

TrajectoryScore Policy::score(Tape& tape, const Trajectory& t, const EnvConfig& env, bool with_entropy) const {
  TrajectoryScore out;
  std::vector<Tensor> terms, entropies;
  EnvState s = seed_state(t.start);
  for (const auto& action : t.actions) {
    if (s.done()) throw ContractError("action after episode end");
    double step = 0.0;
    for (int sub : action.sub_actions()) {
      auto mask = legal_mask(s, env);
      if (sub < 0 || sub >= static_cast<int>(mask.legal.size()) || !mask.legal[sub])
        throw ContractError("trajectory action is illegal at replay");
      if (mask.legal_count() > 1) {
        Tensor logits = level_logits(tape, s, encode(tape, s));
        Tensor lp = pick(tape, masked_log_softmax(tape, logits, mask.legal), 0, sub);
        step += lp.item();
        terms.push_back(lp);
        if (with_entropy) entropies.push_back(masked_entropy(tape, logits, mask.legal));
        ++out.decisions;
      }
      s = apply(s, sub, env);
    }
    out.step_logprobs.push_back(step);
  }
  out.logprob = terms.empty() ? Tensor::scalar(0.0) : sum(tape, concat_cols(tape, terms));
  out.entropy = entropies.empty() ? Tensor::scalar(0.0) : sum(tape, concat_cols(tape, entropies));
  return out;
}

GradCheckResult check_score_gradients(Policy& policy, const std::vector<Trajectory>& trajectories,
                                      const EnvConfig& env, const GradCheckOptions& options) {
  if (trajectories.empty()) throw std::invalid_argument("no trajectories to check");
  auto loss = [&](Tape& tape) {
    std::vector<Tensor> parts;
    for (const auto& t : trajectories) {
      auto sc = policy.score(tape, t, env, true);
      parts.push_back(sub(tape, sc.logprob, scale(tape, sc.entropy, 0.1)));
    }
    return sum(tape, concat_cols(tape, parts));
  };
  return gradcheck(policy.params(), loss, options);
}

}  // namespace molbuild
