#include "hmmerge/merging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include "hmmerge/errors.hpp"

namespace hmmerge {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Terms {
  double ll = 0.0;
  double prior = 0.0;
};

Terms& operator+=(Terms& a, const Terms& b) {
  a.ll += b.ll;
  a.prior += b.prior;
  return a;
}

// Likelihood and parameter-prior contribution of one multinomial.
Terms multinomial_terms(std::span<const double> counts, std::span<const double> alphas, ObjectiveKind objective) {
  Terms t;
  if (counts.empty()) return t;
  switch (objective) {
    case ObjectiveKind::structure_posterior:
      t.ll = dirichlet_log_marginal(counts, alphas);
      break;
    case ObjectiveKind::joint_map: {
      auto theta = map_estimate_row(counts, alphas);
      for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] > 0.0) t.ll += counts[i] * std::log(theta[i]);
      t.prior = dirichlet_log_density(theta, alphas);
      break;
    }
    case ObjectiveKind::likelihood: {
      double n = 0.0;
      for (double c : counts) n += c;
      for (double c : counts)
        if (c > 0.0) t.ll += c * std::log(c / n);
      break;
    }
  }
  return t;
}

bool same_term_config(const PriorConfig& a, const PriorConfig& b) {
  return a.alpha_t == b.alpha_t && a.alpha_e == b.alpha_e && a.alpha_is_total == b.alpha_is_total &&
         a.scope == b.scope && a.objective == b.objective && a.empirical_emission_prior == b.empirical_emission_prior;
}

StatePair normalized(StatePair p) {
  if (p.first > p.second) std::swap(p.first, p.second);
  return p;
}

}  // namespace

void SearchConfig::validate() const {
  if (lookahead < 1) throw ConfigError("lookahead must be at least 1");
  if (beam_width < 1) throw ConfigError("beam width must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (warmup < 0) throw ConfigError("warm-up must be non-negative");
  if (reparse_interval && *reparse_interval < 1) throw ConfigError("reparse interval must be at least 1");
  if (count_decay && !(*count_decay > 0.0 && *count_decay <= 1.0))
    throw ConfigError("count decay must lie in (0, 1]");
}

void write_trace(std::ostream& out, const std::vector<MergeStep>& trace) {
  for (const auto& s : trace)
    out << "step " << s.step << " merge " << s.pair.first << ' ' << s.pair.second << " delta " << s.delta
        << " objective " << s.objective << " states " << s.states << '\n';
}

// ---------------------------------------------------------------------------
// MergeState bookkeeping

MergeState::MergeState(Alphabet alphabet) : alphabet_(std::move(alphabet)) {}

const std::vector<StateId>& MergeState::alive_states() const {
  if (!alive_list_) {
    std::vector<StateId> ids;
    ids.reserve(alive_count_);
    for (std::size_t q = 0; q < rows_.size(); ++q)
      if (rows_[q].alive) ids.push_back(static_cast<StateId>(q));
    alive_list_ = std::move(ids);
  }
  return *alive_list_;
}

bool MergeState::alive(StateId q) const {
  return q >= 0 && static_cast<std::size_t>(q) < rows_.size() && rows_[static_cast<std::size_t>(q)].alive;
}

void MergeState::disallow(StatePair pair) { disallowed_.insert(normalized(pair)); }

void MergeState::invalidate() {
  cache_.reset();
  alive_list_.reset();
}

void MergeState::recount_totals() {
  total_transitions_ = initial_.size();
  total_emissions_ = 0;
  alive_count_ = 0;
  for (const auto& r : rows_) {
    if (!r.alive) continue;
    ++alive_count_;
    total_transitions_ += r.out.size();
    total_emissions_ += r.emit.size();
  }
}

void MergeState::add_chain(const Sequence& x, double weight) {
  StateId prev = kInitial;
  for (SymbolId s : x) {
    auto id = static_cast<StateId>(rows_.size());
    rows_.emplace_back();
    rows_.back().emit[s] = weight;
    rows_.back().in.insert(prev);
    out_row(prev)[id] += weight;
    prev = id;
  }
  out_row(prev)[kFinal] += weight;
  recount_totals();
  invalidate();
}

void MergeState::add_path(const Sequence& x, const std::vector<StateId>& path, double weight) {
  if (path.size() != x.size()) throw InvalidPair("path length does not match the sample");
  StateId prev = kInitial;
  for (std::size_t t = 0; t < x.size(); ++t) {
    StateId q = path[t];
    if (!alive(q)) throw InvalidPair("path visits a dead state");
    auto& r = rows_[static_cast<std::size_t>(q)];
    if (out_row(prev).count(q) == 0) r.in.insert(prev);
    out_row(prev)[q] += weight;
    r.emit[x[t]] += weight;
    prev = q;
  }
  out_row(prev)[kFinal] += weight;
  recount_totals();
  invalidate();
}

void MergeState::record_sample(const Sequence& x, double weight, bool count_as_seen) {
  samples_.emplace_back(x, weight);
  if (count_as_seen) samples_seen_ += static_cast<std::size_t>(std::llround(weight));
}

void MergeState::scale_counts(double factor) {
  for (auto& [to, c] : initial_) c *= factor;
  for (auto& r : rows_) {
    for (auto& [to, c] : r.out) c *= factor;
    for (auto& [s, c] : r.emit) c *= factor;
  }
  for (auto& [x, w] : samples_) w *= factor;
  invalidate();
}

// ---------------------------------------------------------------------------
// Scoring

namespace {

struct RowEvaluator {
  const PriorConfig& config;
  std::size_t alphabet_size;
  const std::vector<double>* broad_emission_alphas;

  Terms transitions(const TransitionRow& out, std::size_t num_states) const {
    std::vector<double> counts;
    counts.reserve(out.size());
    for (const auto& [to, c] : out) counts.push_back(c);
    if (config.scope == ParameterScope::broad) {
      if (counts.empty()) return {};
      counts.resize(num_states + 1, 0.0);
    }
    return multinomial_terms(counts, symmetric_alphas(config.alpha_t, counts.size(), config.alpha_is_total),
                             config.objective);
  }

  Terms emissions(const EmissionRow& emit) const {
    if (config.scope == ParameterScope::narrow) {
      std::vector<double> counts;
      counts.reserve(emit.size());
      for (const auto& [s, c] : emit) counts.push_back(c);
      return multinomial_terms(counts, symmetric_alphas(config.alpha_e, counts.size(), config.alpha_is_total),
                               config.objective);
    }
    if (emit.empty()) return {};
    std::vector<double> counts(alphabet_size, 0.0);
    for (const auto& [s, c] : emit) counts[static_cast<std::size_t>(s)] = c;
    return multinomial_terms(counts, *broad_emission_alphas, config.objective);
  }

  Terms state(const MergeState::Row& row, std::size_t num_states) const {
    Terms t = transitions(row.out, num_states);
    t += emissions(row.emit);
    return t;
  }
};

std::vector<double> emission_weights(const MergeState& s, const PriorConfig& config) {
  const std::size_t sigma = s.alphabet().size();
  if (config.scope != ParameterScope::broad) return {};
  if (!config.empirical_emission_prior) return symmetric_alphas(config.alpha_e, sigma, config.alpha_is_total);
  std::vector<double> freq(sigma, 1.0);
  double total = static_cast<double>(sigma);
  for (StateId q : s.alive_states())
    for (const auto& [sym, c] : s.state(q).emit) {
      freq[static_cast<std::size_t>(sym)] += c;
      total += c;
    }
  const double weight = config.alpha_is_total ? config.alpha_e : config.alpha_e * static_cast<double>(sigma);
  for (auto& f : freq) f = weight * f / total;
  return freq;
}

}  // namespace

double MergeState::global_prior(const PriorConfig& config, std::size_t states, std::size_t transitions,
                                std::size_t emissions) const {
  if (config.objective == ObjectiveKind::likelihood) return 0.0;
  return structure_log_prior(config, states, transitions, emissions, alphabet_.size());
}

const MergeState::CachedScore& MergeState::ensure_cache(const PriorConfig& config) const {
  if (cache_ && same_term_config(cache_->config, config)) return *cache_;
  CachedScore c;
  c.config = config;
  auto weights = emission_weights(*this, config);
  RowEvaluator eval{config, alphabet_.size(), &weights};
  c.terms.assign(2 * rows_.size(), 0.0);
  Terms total = eval.transitions(initial_, alive_count_);
  c.initial_term = total.ll;
  double initial_prior = total.prior;
  for (std::size_t q = 0; q < rows_.size(); ++q) {
    if (!rows_[q].alive) continue;
    Terms t = eval.state(rows_[q], alive_count_);
    c.terms[2 * q] = t.ll;
    c.terms[2 * q + 1] = t.prior;
    total += t;
  }
  c.sum = total.ll;
  c.terms.push_back(initial_prior);
  c.terms.push_back(total.prior);
  cache_ = std::move(c);
  return *cache_;
}

Score MergeState::score(const PriorConfig& config) const {
  const auto& c = ensure_cache(config);
  Score s;
  s.lambda = config.lambda;
  s.log_likelihood = c.sum;
  s.log_prior = c.terms.back() + global_prior(config, alive_count_, total_transitions_, total_emissions_);
  return s;
}

MergeCandidate MergeState::score_merge(StatePair pair, const PriorConfig& config) const {
  pair = normalized(pair);
  const auto [a, b] = pair;
  if (a == b || !alive(a) || !alive(b)) throw InvalidPair("invalid merge pair (" + std::to_string(a) + ", " +
                                                          std::to_string(b) + ")");
  const auto& c = ensure_cache(config);
  const Row& ra = rows_[static_cast<std::size_t>(a)];
  const Row& rb = rows_[static_cast<std::size_t>(b)];

  Row merged;
  for (const auto* r : {&ra, &rb}) {
    for (const auto& [t, cnt] : r->out) merged.out[(t == b) ? a : t] += cnt;
    for (const auto& [s, cnt] : r->emit) merged.emit[s] += cnt;
  }
  std::set<StateId> preds;
  for (const auto* r : {&ra, &rb})
    for (StateId p : r->in)
      if (p != a && p != b) preds.insert(p);

  MergeCandidate cand;
  cand.pair = pair;
  cand.affected = {a, b};
  cand.affected.insert(cand.affected.end(), preds.begin(), preds.end());

  const std::size_t new_states = alive_count_ - 1;
  long long new_transitions = static_cast<long long>(total_transitions_) - static_cast<long long>(ra.out.size()) -
                              static_cast<long long>(rb.out.size()) + static_cast<long long>(merged.out.size());
  const long long new_emissions = static_cast<long long>(total_emissions_) -
                                  static_cast<long long>(ra.emit.size()) - static_cast<long long>(rb.emit.size()) +
                                  static_cast<long long>(merged.emit.size());

  auto redirected = [&](StateId p) {
    TransitionRow row = p == kInitial ? initial_ : rows_[static_cast<std::size_t>(p)].out;
    auto it = row.find(b);
    if (it != row.end()) {
      double moved = it->second;
      row.erase(it);
      row[a] += moved;
    }
    return row;
  };

  auto weights = emission_weights(*this, config);
  RowEvaluator eval{config, alphabet_.size(), &weights};
  double ll_after = 0.0, prior_after = 0.0;
  if (config.scope == ParameterScope::narrow) {
    Terms removed{c.terms[2 * static_cast<std::size_t>(a)] + c.terms[2 * static_cast<std::size_t>(b)],
                  c.terms[2 * static_cast<std::size_t>(a) + 1] + c.terms[2 * static_cast<std::size_t>(b) + 1]};
    Terms added = eval.state(merged, new_states);
    for (StateId p : preds) {
      TransitionRow row = redirected(p);
      const auto& before = p == kInitial ? initial_ : rows_[static_cast<std::size_t>(p)].out;
      new_transitions -= static_cast<long long>(before.size()) - static_cast<long long>(row.size());
      if (p == kInitial) {
        removed += Terms{c.initial_term, c.terms[c.terms.size() - 2]};
        added += eval.transitions(row, new_states);
      } else {
        removed += Terms{c.terms[2 * static_cast<std::size_t>(p)], c.terms[2 * static_cast<std::size_t>(p) + 1]};
        Row pr = rows_[static_cast<std::size_t>(p)];
        pr.out = std::move(row);
        added += eval.state(pr, new_states);
      }
    }
    ll_after = c.sum - removed.ll + added.ll;
    prior_after = c.terms.back() - removed.prior + added.prior;
  } else {
    // Broad priors depend on |Q|, so every row is re-evaluated.
    Terms total;
    {
      TransitionRow row = preds.count(kInitial) ? redirected(kInitial) : initial_;
      new_transitions -= static_cast<long long>(initial_.size()) - static_cast<long long>(row.size());
      total += eval.transitions(row, new_states);
    }
    for (StateId q : alive_states()) {
      if (q == b) continue;
      if (q == a) {
        total += eval.state(merged, new_states);
        continue;
      }
      if (preds.count(q)) {
        Row pr = rows_[static_cast<std::size_t>(q)];
        pr.out = redirected(q);
        new_transitions -= static_cast<long long>(rows_[static_cast<std::size_t>(q)].out.size()) -
                           static_cast<long long>(pr.out.size());
        total += eval.state(pr, new_states);
      } else {
        total += eval.state(rows_[static_cast<std::size_t>(q)], new_states);
      }
    }
    ll_after = total.ll;
    prior_after = total.prior;
  }

  const Score before = score(config);
  double global_after = 0.0;
  try {
    global_after = global_prior(config, new_states, static_cast<std::size_t>(new_transitions),
                                static_cast<std::size_t>(new_emissions));
  } catch (const DegenerateBernoulli&) {
    cand.objective_delta = kNegInf;
    return cand;
  }
  const double after = config.lambda * (global_after + prior_after) + ll_after;
  cand.objective_delta = after - before.objective();
  return cand;
}

// ---------------------------------------------------------------------------
// Merging

void MergeState::merge(StatePair pair) {
  pair = normalized(pair);
  const auto [a, b] = pair;
  if (a == b || !alive(a) || !alive(b)) throw InvalidPair("invalid merge pair (" + std::to_string(a) + ", " +
                                                          std::to_string(b) + ")");
  Row& ra = rows_[static_cast<std::size_t>(a)];
  Row& rb = rows_[static_cast<std::size_t>(b)];

  std::set<StateId> preds;
  for (const auto* r : {&ra, &rb})
    for (StateId p : r->in)
      if (p != a && p != b) preds.insert(p);

  for (StateId p : preds) {
    auto& row = out_row(p);
    auto it = row.find(b);
    if (it == row.end()) continue;
    double moved = it->second;
    row.erase(it);
    row[a] += moved;
  }

  TransitionRow merged_out;
  for (const auto* r : {&ra, &rb})
    for (const auto& [t, cnt] : r->out) merged_out[(t == b) ? a : t] += cnt;
  for (const auto& [t, cnt] : rb.out) {
    if (t == a || t == b || t == kFinal) continue;
    auto& in = rows_[static_cast<std::size_t>(t)].in;
    in.erase(b);
    in.insert(a);
  }
  for (const auto& [s, cnt] : rb.emit) ra.emit[s] += cnt;
  ra.out = std::move(merged_out);
  ra.in = preds;
  if (ra.out.count(a)) ra.in.insert(a);

  rb = Row{};
  rb.alive = false;

  for (auto it = disallowed_.begin(); it != disallowed_.end();) {
    if (it->first == b || it->second == b)
      it = disallowed_.erase(it);
    else
      ++it;
  }

  // Update cached terms for the affected rows only.
  std::optional<CachedScore> cache = std::move(cache_);
  invalidate();
  recount_totals();
  if (cache && cache->config.scope == ParameterScope::narrow) {
    auto weights = emission_weights(*this, cache->config);
    RowEvaluator eval{cache->config, alphabet_.size(), &weights};
    auto set_terms = [&](StateId q) {
      Terms t = eval.state(rows_[static_cast<std::size_t>(q)], alive_count_);
      cache->terms[2 * static_cast<std::size_t>(q)] = t.ll;
      cache->terms[2 * static_cast<std::size_t>(q) + 1] = t.prior;
    };
    set_terms(a);
    cache->terms[2 * static_cast<std::size_t>(b)] = 0.0;
    cache->terms[2 * static_cast<std::size_t>(b) + 1] = 0.0;
    double initial_prior = cache->terms[cache->terms.size() - 2];
    for (StateId p : preds) {
      if (p == kInitial) {
        Terms t = eval.transitions(initial_, alive_count_);
        cache->initial_term = t.ll;
        initial_prior = t.prior;
      } else {
        set_terms(p);
      }
    }
    double ll = cache->initial_term, prior = initial_prior;
    for (std::size_t q = 0; q < rows_.size(); ++q) {
      ll += cache->terms[2 * q];
      prior += cache->terms[2 * q + 1];
    }
    cache->sum = ll;
    cache->terms[cache->terms.size() - 2] = initial_prior;
    cache->terms.back() = prior;
    cache_ = std::move(cache);
  }
}

// ---------------------------------------------------------------------------
// Export and refresh

MergeState::Export MergeState::export_ml() const {
  Export ex;
  const auto& ids = alive_states();
  ex.ids = ids;
  std::map<StateId, StateId> dense;
  for (std::size_t k = 0; k < ids.size(); ++k) dense[ids[k]] = static_cast<StateId>(k);
  auto map_id = [&](StateId q) { return q < 0 ? q : dense.at(q); };
  ex.hmm = Hmm(alphabet_, ids.size());
  ex.counts = ViterbiCounts(ids.size());
  auto fill = [&](StateId from, const TransitionRow& row) {
    double total = 0.0;
    for (const auto& [to, c] : row) total += c;
    for (const auto& [to, c] : row) {
      ex.hmm.set_transition(map_id(from), map_id(to), total > 0.0 ? c / total : 1.0 / static_cast<double>(row.size()));
      ex.counts.transitions(map_id(from))[map_id(to)] = c;
    }
  };
  fill(kInitial, initial_);
  for (StateId q : ids) {
    const Row& r = rows_[static_cast<std::size_t>(q)];
    fill(q, r.out);
    double total = 0.0;
    for (const auto& [s, c] : r.emit) total += c;
    for (const auto& [s, c] : r.emit) {
      ex.hmm.set_emission(map_id(q), s, total > 0.0 ? c / total : 1.0 / static_cast<double>(r.emit.size()));
      ex.counts.emit[static_cast<std::size_t>(map_id(q))][s] = c;
    }
  }
  return ex;
}

MergeState::Export MergeState::export_model(const PriorConfig& config) const {
  Export ex = export_ml();
  if (config.objective == ObjectiveKind::joint_map) ex.hmm = map_estimates(ex.counts, config, ex.hmm);
  return ex;
}

void MergeState::refresh() {
  Export ex = export_ml();
  ViterbiCounts fresh(ex.ids.size());
  std::vector<std::string> failures;
  for (const auto& [x, w] : samples_) {
    auto path = viterbi_path(ex.hmm, x);
    if (!path) {
      failures.push_back(join(alphabet_.decode(x)));
      continue;
    }
    StateId prev = kInitial;
    for (std::size_t t = 0; t < x.size(); ++t) {
      fresh.add_transition(prev, path->states[t], w);
      fresh.add_emission(path->states[t], x[t], w);
      prev = path->states[t];
    }
    fresh.add_transition(prev, kFinal, w);
  }
  if (!failures.empty()) throw UnparseableSample(std::move(failures));

  auto internal = [&](StateId k) { return k < 0 ? k : ex.ids[static_cast<std::size_t>(k)]; };
  initial_.clear();
  for (auto& r : rows_) {
    r.out.clear();
    r.emit.clear();
    r.in.clear();
  }
  for (const auto& [to, c] : fresh.initial)
    if (c > 0.0) initial_[internal(to)] = c;
  for (std::size_t k = 0; k < ex.ids.size(); ++k) {
    Row& r = rows_[static_cast<std::size_t>(ex.ids[k])];
    for (const auto& [to, c] : fresh.trans[k])
      if (c > 0.0) r.out[internal(to)] = c;
    for (const auto& [s, c] : fresh.emit[k])
      if (c > 0.0) r.emit[s] = c;
    if (r.emit.empty()) r.alive = false;
  }
  for (const auto& [to, c] : initial_)
    if (to >= 0) rows_[static_cast<std::size_t>(to)].in.insert(kInitial);
  for (std::size_t q = 0; q < rows_.size(); ++q) {
    if (!rows_[q].alive) continue;
    for (const auto& [to, c] : rows_[q].out)
      if (to >= 0) rows_[static_cast<std::size_t>(to)].in.insert(static_cast<StateId>(q));
  }
  for (auto it = disallowed_.begin(); it != disallowed_.end();) {
    if (!alive(it->first) || !alive(it->second))
      it = disallowed_.erase(it);
    else
      ++it;
  }
  recount_totals();
  invalidate();
}

std::vector<long long> MergeState::fingerprint() const {
  std::vector<long long> fp;
  auto push_row = [&](StateId from, const TransitionRow& row) {
    fp.push_back(-1000 - from);
    for (const auto& [to, c] : row) fp.push_back(to);
  };
  push_row(kInitial, initial_);
  for (StateId q : alive_states()) {
    const Row& r = rows_[static_cast<std::size_t>(q)];
    push_row(q, r.out);
    fp.push_back(-5);
    for (const auto& [s, c] : r.emit) fp.push_back(s);
  }
  return fp;
}

// ---------------------------------------------------------------------------
// Free operations

MergeState build_initial_model(const Corpus& corpus) { return build_initial_model(corpus, corpus.alphabet()); }

MergeState build_initial_model(const Corpus& corpus, const Alphabet& alphabet) {
  if (corpus.empty()) throw EmptyCorpus();
  MergeState state(alphabet);
  for (const auto& [s, mult] : corpus.distinct()) {
    Sequence x = alphabet.encode(s);
    state.add_chain(x, static_cast<double>(mult));
    state.record_sample(x, static_cast<double>(mult));
  }
  return state;
}

MergeState incorporate_samples(MergeState state, const Corpus& new_samples, const SearchConfig& search) {
  if (search.count_decay && *search.count_decay < 1.0) state.scale_counts(*search.count_decay);
  for (const auto& s : new_samples.samples) {
    Sequence x = state.alphabet().encode(s);
    std::optional<Path> path;
    if (state.num_states() > 0 || !state.initial().empty()) {
      auto ex = state.export_ml();
      path = viterbi_path(ex.hmm, x);
      if (path)
        for (auto& q : path->states) q = ex.ids[static_cast<std::size_t>(q)];
    }
    if (path)
      state.add_path(x, path->states, 1.0);
    else
      state.add_chain(x, 1.0);
    state.record_sample(x, 1.0);
  }
  return state;
}

LoopCheck merge_creates_loop(const MergeState& state, StatePair pair) {
  pair = normalized(pair);
  const auto [a, b] = pair;
  auto map_id = [&](StateId t) { return t == b ? a : t; };
  auto successors = [&](StateId q, std::vector<StateId>& out) {
    out.clear();
    auto collect = [&](const MergeState::Row& r) {
      for (const auto& [t, c] : r.out)
        if (t != kFinal) out.push_back(map_id(t));
    };
    collect(state.state(q));
    if (q == a) collect(state.state(b));
  };
  LoopCheck result;
  std::vector<StateId> succ;
  successors(a, succ);
  std::vector<StateId> stack;
  std::set<StateId> seen;
  for (StateId t : succ) {
    if (t == a)
      result.self_loop = true;
    else if (seen.insert(t).second)
      stack.push_back(t);
  }
  while (!stack.empty() && !result.cycle) {
    StateId q = stack.back();
    stack.pop_back();
    successors(q, succ);
    for (StateId t : succ) {
      if (t == a) {
        result.cycle = true;
        break;
      }
      if (seen.insert(t).second) stack.push_back(t);
    }
  }
  return result;
}

std::vector<MergeCandidate> candidate_merges(const MergeState& state, const SearchConfig& search,
                                             bool same_emission_only) {
  std::vector<MergeCandidate> out;
  const auto& ids = state.alive_states();
  const bool same_emissions = same_emission_only || search.single_output;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      StatePair p{ids[i], ids[j]};
      if (state.disallowed().count(p)) continue;
      if (same_emissions) {
        const auto& ea = state.state(p.first).emit;
        const auto& eb = state.state(p.second).emit;
        if (ea.size() != eb.size() ||
            !std::equal(ea.begin(), ea.end(), eb.begin(), [](const auto& x, const auto& y) { return x.first == y.first; }))
          continue;
      }
      if (search.forbid_loops) {
        auto loop = merge_creates_loop(state, p);
        if (loop.cycle || (loop.self_loop && !search.allow_self_loops)) continue;
      }
      MergeCandidate c;
      c.pair = p;
      out.push_back(std::move(c));
    }
  }
  return out;
}

MergeState merge_states(MergeState state, StatePair pair) {
  state.merge(pair);
  return state;
}

MergeCandidate score_candidate(const MergeState& state, StatePair pair, const PriorConfig& config) {
  return state.score_merge(pair, config);
}

namespace {

bool improves(double objective, double best) {
  return objective >= best - 1e-9 * std::max(1.0, std::abs(best));
}

// Scored candidates sorted by decreasing delta; ties keep ascending pair order.
std::vector<MergeCandidate> ranked_candidates(const MergeState& state, const PriorConfig& config,
                                              const SearchConfig& search, bool same_emission_only) {
  auto cands = candidate_merges(state, search, same_emission_only);
  std::vector<MergeCandidate> scored;
  scored.reserve(cands.size());
  for (const auto& c : cands) {
    auto s = state.score_merge(c.pair, config);
    if (std::isfinite(s.objective_delta)) scored.push_back(std::move(s));
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const MergeCandidate& x, const MergeCandidate& y) { return x.objective_delta > y.objective_delta; });
  return scored;
}

void apply_step(MergeState& state, const MergeCandidate& cand, const PriorConfig& config, const SearchConfig& search,
                int& merges_since_refresh) {
  state.merge(cand.pair);
  if (search.reparse_interval && ++merges_since_refresh >= *search.reparse_interval) {
    state.refresh();
    merges_since_refresh = 0;
  }
  MergeStep step;
  step.step = static_cast<int>(state.trace().size()) + 1;
  step.pair = cand.pair;
  step.delta = cand.objective_delta;
  step.objective = state.score(config).objective();
  step.states = state.num_states();
  state.push_trace(step);
}

}  // namespace

MergeState best_first_merge(MergeState state, const PriorConfig& config, const SearchConfig& search,
                            bool same_emission_only) {
  config.validate();
  search.validate();
  MergeState best = state;
  double best_objective = state.score(config).objective();
  int stall = 0;
  int merges_since_refresh = 0;
  for (;;) {
    auto cands = candidate_merges(state, search, same_emission_only);
    std::optional<MergeCandidate> chosen;
    for (const auto& c : cands) {
      auto s = state.score_merge(c.pair, config);
      if (!std::isfinite(s.objective_delta)) continue;
      if (!chosen || s.objective_delta > chosen->objective_delta) chosen = std::move(s);
    }
    if (!chosen) break;
    apply_step(state, *chosen, config, search, merges_since_refresh);
    const double objective = state.score(config).objective();
    if (improves(objective, best_objective)) {
      best = state;
      best_objective = objective;
      stall = 0;
    } else if (++stall >= search.lookahead) {
      break;
    }
  }
  return best;
}

MergeState beam_merge(MergeState state, const PriorConfig& config, const SearchConfig& search,
                      bool same_emission_only) {
  config.validate();
  search.validate();
  const auto width = static_cast<std::size_t>(search.beam_width);
  MergeState best = state;
  double best_objective = state.score(config).objective();
  // frontier[0] follows the best-first trajectory
  double lane_best = best_objective;
  bool lane_alive = true;
  int lane_stall = 0;
  std::vector<MergeState> frontier{std::move(state)};
  int stall = 0;
  int merges_since_refresh = 0;
  for (;;) {
    std::vector<std::pair<double, MergeState>> pool;
    std::optional<MergeState> lane_child;
    for (std::size_t e = 0; e < frontier.size(); ++e) {
      const auto& model = frontier[e];
      auto ranked = ranked_candidates(model, config, search, same_emission_only);
      if (ranked.size() > width) ranked.resize(width);
      for (std::size_t k = 0; k < ranked.size(); ++k) {
        MergeState child = model;
        // Later siblings may not repeat an earlier sibling's merge in a different order.
        for (std::size_t j = 0; j < k; ++j) child.disallow(ranked[j].pair);
        int local = merges_since_refresh;
        apply_step(child, ranked[k], config, search, local);
        if (e == 0 && k == 0 && lane_alive) lane_child = child;
        pool.emplace_back(child.score(config).objective(), std::move(child));
      }
    }
    if (pool.empty()) break;
    std::stable_sort(pool.begin(), pool.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    std::vector<MergeState> next;
    std::vector<std::vector<long long>> seen;
    if (lane_child) {
      seen.push_back(lane_child->fingerprint());
      next.push_back(*lane_child);
    } else {
      lane_alive = false;
    }
    for (auto& [objective, model] : pool) {
      if (next.size() == width) break;
      auto fp = model.fingerprint();
      if (std::find(seen.begin(), seen.end(), fp) != seen.end()) continue;
      seen.push_back(std::move(fp));
      next.push_back(std::move(model));
    }
    ++merges_since_refresh;
    if (search.reparse_interval && merges_since_refresh >= *search.reparse_interval) merges_since_refresh = 0;
    bool improved = false;
    for (const auto& m : next) {
      const double o = m.score(config).objective();
      if (improves(o, best_objective)) {
        best = m;
        best_objective = o;
        improved = true;
      }
    }
    if (lane_alive) {
      const double o = next.front().score(config).objective();
      if (improves(o, lane_best)) {
        lane_best = o;
        lane_stall = 0;
      } else if (++lane_stall >= search.lookahead) {
        lane_alive = false;
      }
    }
    stall = improved ? 0 : stall + 1;
    if (stall >= search.lookahead && !lane_alive) break;
    frontier = std::move(next);
  }
  return best;
}

namespace {

MergeState run_search(MergeState state, const PriorConfig& config, const SearchConfig& search,
                      bool same_emission_only) {
  if (search.beam_width > 1) return beam_merge(std::move(state), config, search, same_emission_only);
  return best_first_merge(std::move(state), config, search, same_emission_only);
}

}  // namespace

MergeState batch_merge(const Corpus& corpus, const PriorConfig& config, const SearchConfig& search) {
  MergeState state = build_initial_model(corpus);
  PriorConfig scheduled = config;
  scheduled.lambda = lambda_schedule(state.samples_seen(), config);
  return run_search(std::move(state), scheduled, search, false);
}

MergeState online_merge(const Corpus& stream, const PriorConfig& config, const SearchConfig& search) {
  return online_merge(stream, stream.alphabet(), config, search);
}

MergeState online_merge(const Corpus& stream, const Alphabet& alphabet, const PriorConfig& config,
                        const SearchConfig& search) {
  config.validate();
  search.validate();
  MergeState state(alphabet);
  if (stream.empty()) return state;
  PriorConfig scheduled = config;
  const auto batch = static_cast<std::size_t>(search.batch_size);
  for (std::size_t start = 0; start < stream.size(); start += batch) {
    Corpus chunk;
    for (std::size_t i = start; i < std::min(stream.size(), start + batch); ++i)
      chunk.samples.push_back(stream.samples[i]);
    state = incorporate_samples(std::move(state), chunk, search);
    if (state.samples_seen() < static_cast<std::size_t>(search.warmup)) continue;
    scheduled.lambda = lambda_schedule(state.samples_seen(), config);
    state = run_search(std::move(state), scheduled, search, search.same_emission_phase);
  }
  scheduled.lambda = lambda_schedule(state.samples_seen(), config);
  return run_search(std::move(state), scheduled, search, false);
}

MergeState refresh_counts(MergeState state) {
  state.refresh();
  return state;
}

}  // namespace hmmerge
