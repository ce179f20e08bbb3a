#include "hmmerge/hmm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "hmmerge/errors.hpp"
#include "log_math.hpp"

namespace hmmerge {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool valid_symbol(const std::string& s) {
  if (s.empty()) return false;
  return std::none_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

std::string join(const Sample& sample) {
  std::string out;
  for (const auto& s : sample) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Alphabet

Alphabet::Alphabet(const std::vector<std::string>& symbols) {
  for (const auto& s : symbols) add(s);
}

SymbolId Alphabet::add(const std::string& symbol) {
  if (auto it = index_.find(symbol); it != index_.end()) return it->second;
  if (!valid_symbol(symbol)) throw FormatError("invalid symbol '" + symbol + "'");
  auto id = static_cast<SymbolId>(symbols_.size());
  symbols_.push_back(symbol);
  index_.emplace(symbol, id);
  return id;
}

std::optional<SymbolId> Alphabet::find(std::string_view symbol) const {
  if (auto it = index_.find(std::string(symbol)); it != index_.end()) return it->second;
  return std::nullopt;
}

SymbolId Alphabet::at(std::string_view symbol) const {
  if (auto id = find(symbol)) return *id;
  throw UnknownSymbol(std::string(symbol));
}

Sequence Alphabet::encode(const Sample& sample) const {
  Sequence out;
  out.reserve(sample.size());
  for (const auto& s : sample) out.push_back(at(s));
  return out;
}

std::optional<Sequence> Alphabet::try_encode(const Sample& sample) const {
  Sequence out;
  out.reserve(sample.size());
  for (const auto& s : sample) {
    auto id = find(s);
    if (!id) return std::nullopt;
    out.push_back(*id);
  }
  return out;
}

Sample Alphabet::decode(const Sequence& sequence) const {
  Sample out;
  out.reserve(sequence.size());
  for (auto id : sequence) out.push_back(symbol(id));
  return out;
}

// ---------------------------------------------------------------------------
// Hmm

Hmm::Hmm(Alphabet alphabet, std::size_t num_states)
    : alphabet_(std::move(alphabet)), trans_(num_states), emit_(num_states) {}

const TransitionRow& Hmm::transitions(StateId from) const {
  if (from == kInitial) return initial_;
  return trans_.at(static_cast<std::size_t>(from));
}

TransitionRow& Hmm::row(StateId from) {
  if (from == kInitial) return initial_;
  return trans_.at(static_cast<std::size_t>(from));
}

const EmissionRow& Hmm::emissions(StateId state) const { return emit_.at(static_cast<std::size_t>(state)); }

void Hmm::set_transition(StateId from, StateId to, double prob) {
  set_transition_log(from, to, prob > 0.0 ? std::log(prob) : kNegInf);
}

void Hmm::set_emission(StateId state, SymbolId symbol, double prob) {
  set_emission_log(state, symbol, prob > 0.0 ? std::log(prob) : kNegInf);
}

void Hmm::set_transition_log(StateId from, StateId to, double logprob) {
  if (from == kFinal) throw FormatError("the final state has no outgoing transitions");
  if (to == kInitial) throw FormatError("the initial state has no incoming transitions");
  if (to >= 0 && static_cast<std::size_t>(to) >= trans_.size())
    throw FormatError("transition target " + std::to_string(to) + " out of range");
  auto& r = row(from);
  if (logprob == kNegInf)
    r.erase(to);
  else
    r[to] = logprob;
}

void Hmm::set_emission_log(StateId state, SymbolId symbol, double logprob) {
  if (state < 0) throw FormatError("sentinel states do not emit");
  if (symbol < 0 || static_cast<std::size_t>(symbol) >= alphabet_.size())
    throw FormatError("emission symbol out of range");
  auto& r = emit_.at(static_cast<std::size_t>(state));
  if (logprob == kNegInf)
    r.erase(symbol);
  else
    r[symbol] = logprob;
}

double Hmm::transition_logprob(StateId from, StateId to) const {
  const auto& r = transitions(from);
  auto it = r.find(to);
  return it == r.end() ? kNegInf : it->second;
}

double Hmm::emission_logprob(StateId state, SymbolId symbol) const {
  const auto& r = emissions(state);
  auto it = r.find(symbol);
  return it == r.end() ? kNegInf : it->second;
}

std::size_t Hmm::num_transitions() const {
  std::size_t n = initial_.size();
  for (const auto& r : trans_) n += r.size();
  return n;
}

std::size_t Hmm::num_emissions() const {
  std::size_t n = 0;
  for (const auto& r : emit_) n += r.size();
  return n;
}

void Hmm::validate(double tolerance) const {
  auto check_row = [&](const auto& r, const std::string& what) {
    if (r.empty()) return;
    double sum = 0.0;
    for (const auto& [k, lp] : r) {
      if (!(lp <= 0.0)) throw FormatError(what + " has a probability above one");
      sum += std::exp(lp);
    }
    if (std::abs(sum - 1.0) > tolerance)
      throw FormatError(what + " sums to " + std::to_string(sum) + " instead of 1");
  };
  if (initial_.empty()) throw FormatError("initial state has no outgoing transitions");
  check_row(initial_, "transitions from I");
  for (std::size_t q = 0; q < trans_.size(); ++q) {
    check_row(trans_[q], "transitions from " + std::to_string(q));
    check_row(emit_[q], "emissions of " + std::to_string(q));
  }
}

bool Hmm::approx_equal(const Hmm& other, double tolerance) const {
  if (!(alphabet_ == other.alphabet_) || num_states() != other.num_states()) return false;
  auto same = [&](const auto& a, const auto& b) {
    if (a.size() != b.size()) return false;
    for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
      if (ia->first != ib->first) return false;
      if (std::abs(std::exp(ia->second) - std::exp(ib->second)) > tolerance) return false;
    }
    return true;
  };
  if (!same(initial_, other.initial_)) return false;
  for (std::size_t q = 0; q < trans_.size(); ++q)
    if (!same(trans_[q], other.trans_[q]) || !same(emit_[q], other.emit_[q])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// ViterbiCounts and Corpus

void ViterbiCounts::add(const ViterbiCounts& other, double weight) {
  if (other.num_states() > num_states()) {
    trans.resize(other.num_states());
    emit.resize(other.num_states());
  }
  for (const auto& [to, c] : other.initial) initial[to] += weight * c;
  for (std::size_t q = 0; q < other.num_states(); ++q) {
    for (const auto& [to, c] : other.trans[q]) trans[q][to] += weight * c;
    for (const auto& [s, c] : other.emit[q]) emit[q][s] += weight * c;
  }
}

double ViterbiCounts::total() const {
  double t = 0.0;
  for (const auto& [to, c] : initial) t += c;
  for (std::size_t q = 0; q < num_states(); ++q) {
    for (const auto& [to, c] : trans[q]) t += c;
    for (const auto& [s, c] : emit[q]) t += c;
  }
  return t;
}

std::vector<std::pair<Sample, std::size_t>> Corpus::distinct() const {
  std::vector<std::pair<Sample, std::size_t>> out;
  std::map<Sample, std::size_t> where;
  for (const auto& s : samples) {
    auto [it, inserted] = where.emplace(s, out.size());
    if (inserted)
      out.emplace_back(s, 1);
    else
      ++out[it->second].second;
  }
  return out;
}

Alphabet Corpus::alphabet() const {
  Alphabet a;
  for (const auto& s : samples)
    for (const auto& sym : s) a.add(sym);
  return a;
}

std::size_t Corpus::max_length() const {
  std::size_t m = 0;
  for (const auto& s : samples) m = std::max(m, s.size());
  return m;
}

std::size_t Corpus::total_symbols() const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.size();
  return n;
}

// ---------------------------------------------------------------------------
// Forward, Viterbi, parsing

double string_log_prob(const Hmm& hmm, const Sequence& x) {
  const std::size_t n = hmm.num_states();
  if (x.empty()) return hmm.transition_logprob(kInitial, kFinal);
  std::vector<double> alpha(n, kNegInf), next(n, kNegInf);
  for (const auto& [to, lp] : hmm.transitions(kInitial)) {
    if (to == kFinal) continue;
    alpha[static_cast<std::size_t>(to)] = lp + hmm.emission_logprob(to, x[0]);
  }
  for (std::size_t t = 1; t < x.size(); ++t) {
    std::fill(next.begin(), next.end(), kNegInf);
    for (std::size_t q = 0; q < n; ++q) {
      if (alpha[q] == kNegInf) continue;
      for (const auto& [to, lp] : hmm.transitions(static_cast<StateId>(q))) {
        if (to == kFinal) continue;
        auto& slot = next[static_cast<std::size_t>(to)];
        slot = detail::log_add(slot, alpha[q] + lp);
      }
    }
    for (std::size_t q = 0; q < n; ++q)
      if (next[q] != kNegInf) next[q] += hmm.emission_logprob(static_cast<StateId>(q), x[t]);
    std::swap(alpha, next);
  }
  double total = kNegInf;
  for (std::size_t q = 0; q < n; ++q) {
    if (alpha[q] == kNegInf) continue;
    total = detail::log_add(total, alpha[q] + hmm.transition_logprob(static_cast<StateId>(q), kFinal));
  }
  return total;
}

double string_log_prob(const Hmm& hmm, const Sample& x) {
  return string_log_prob(hmm, hmm.alphabet().encode(x));
}

double string_log_prob_or_zero(const Hmm& hmm, const Sample& x) {
  auto seq = hmm.alphabet().try_encode(x);
  return seq ? string_log_prob(hmm, *seq) : kNegInf;
}

std::optional<Path> viterbi_path(const Hmm& hmm, const Sequence& x) {
  const std::size_t n = hmm.num_states();
  const std::size_t len = x.size();
  if (len == 0) {
    double lp = hmm.transition_logprob(kInitial, kFinal);
    if (lp == kNegInf) return std::nullopt;
    return Path{{}, lp};
  }
  // completion[t][q]: best log probability of emitting x[t..] from q at time t and exiting.
  std::vector<std::vector<double>> completion(len, std::vector<double>(n, kNegInf));
  for (std::size_t q = 0; q < n; ++q) {
    auto sq = static_cast<StateId>(q);
    completion[len - 1][q] = hmm.emission_logprob(sq, x[len - 1]) + hmm.transition_logprob(sq, kFinal);
  }
  for (std::size_t t = len - 1; t-- > 0;) {
    for (std::size_t q = 0; q < n; ++q) {
      auto sq = static_cast<StateId>(q);
      double e = hmm.emission_logprob(sq, x[t]);
      if (e == kNegInf) continue;
      double best = kNegInf;
      for (const auto& [to, lp] : hmm.transitions(sq)) {
        if (to == kFinal) continue;
        best = std::max(best, lp + completion[t + 1][static_cast<std::size_t>(to)]);
      }
      completion[t][q] = e + best;
    }
  }
  // Forward pass picks the smallest state among (near-)maximal continuations.
  auto pick = [&](const TransitionRow& row, std::size_t t) -> std::pair<StateId, double> {
    double best = kNegInf;
    for (const auto& [to, lp] : row)
      if (to != kFinal) best = std::max(best, lp + completion[t][static_cast<std::size_t>(to)]);
    if (best == kNegInf) return {kFinal, kNegInf};
    const double eps = 1e-12 * std::max(1.0, std::abs(best));
    for (const auto& [to, lp] : row)  // rows are ordered by state id
      if (to != kFinal && lp + completion[t][static_cast<std::size_t>(to)] >= best - eps) return {to, best};
    return {kFinal, kNegInf};
  };
  Path path;
  auto [q, total] = pick(hmm.transitions(kInitial), 0);
  if (total == kNegInf) return std::nullopt;
  path.logprob = total;
  path.states.push_back(q);
  for (std::size_t t = 1; t < len; ++t) {
    q = pick(hmm.transitions(q), t).first;
    path.states.push_back(q);
  }
  return path;
}

std::optional<Path> viterbi_path(const Hmm& hmm, const Sample& x) {
  return viterbi_path(hmm, hmm.alphabet().encode(x));
}

bool parses(const Hmm& hmm, const Sample& x) {
  auto seq = hmm.alphabet().try_encode(x);
  if (!seq) return false;
  const std::size_t n = hmm.num_states();
  if (seq->empty()) return hmm.transitions(kInitial).count(kFinal) > 0;
  std::vector<char> live(n, 0), next(n, 0);
  for (const auto& [to, lp] : hmm.transitions(kInitial))
    if (to != kFinal && hmm.emissions(to).count((*seq)[0])) live[static_cast<std::size_t>(to)] = 1;
  for (std::size_t t = 1; t < seq->size(); ++t) {
    std::fill(next.begin(), next.end(), 0);
    for (std::size_t q = 0; q < n; ++q) {
      if (!live[q]) continue;
      for (const auto& [to, lp] : hmm.transitions(static_cast<StateId>(q)))
        if (to != kFinal && hmm.emissions(to).count((*seq)[t])) next[static_cast<std::size_t>(to)] = 1;
    }
    std::swap(live, next);
  }
  for (std::size_t q = 0; q < n; ++q)
    if (live[q] && hmm.transitions(static_cast<StateId>(q)).count(kFinal)) return true;
  return false;
}

ViterbiCounts viterbi_counts(const Hmm& hmm, const Corpus& corpus) {
  ViterbiCounts counts(hmm.num_states());
  std::vector<std::string> failures;
  for (const auto& [s, mult] : corpus.distinct()) {
    auto seq = hmm.alphabet().try_encode(s);
    auto path = seq ? viterbi_path(hmm, *seq) : std::nullopt;
    if (!path) {
      failures.push_back(join(s));
      continue;
    }
    const double w = static_cast<double>(mult);
    StateId prev = kInitial;
    for (std::size_t t = 0; t < path->states.size(); ++t) {
      StateId q = path->states[t];
      counts.add_transition(prev, q, w);
      counts.add_emission(q, (*seq)[t], w);
      prev = q;
    }
    counts.add_transition(prev, kFinal, w);
  }
  if (!failures.empty()) throw UnparseableSample(std::move(failures));
  return counts;
}

// ---------------------------------------------------------------------------
// Estimation

Hmm ml_estimates(const ViterbiCounts& counts, const Hmm& structure) {
  const std::size_t n = structure.num_states();
  auto count_of = [](const auto& row, auto key) {
    auto it = row.find(key);
    return it == row.end() ? 0.0 : it->second;
  };
  auto trans_count = [&](StateId from, StateId to) {
    if (from != kInitial && static_cast<std::size_t>(from) >= counts.num_states()) return 0.0;
    return count_of(counts.transitions(from), to);
  };
  auto emit_count = [&](StateId q, SymbolId s) {
    if (static_cast<std::size_t>(q) >= counts.num_states()) return 0.0;
    return count_of(counts.emit[static_cast<std::size_t>(q)], s);
  };

  std::vector<StateId> remap(n, kFinal);
  StateId next_id = 0;
  for (std::size_t q = 0; q < n; ++q) {
    auto sq = static_cast<StateId>(q);
    double tt = 0.0, et = 0.0;
    for (const auto& [to, lp] : structure.transitions(sq)) tt += trans_count(sq, to);
    for (const auto& [s, lp] : structure.emissions(sq)) et += emit_count(sq, s);
    if (tt > 0.0 && et > 0.0) remap[q] = next_id++;
  }
  Hmm out(structure.alphabet(), static_cast<std::size_t>(next_id));
  auto fill_row = [&](StateId from, StateId new_from) {
    double total = 0.0;
    std::vector<std::pair<StateId, double>> kept;
    for (const auto& [to, lp] : structure.transitions(from)) {
      StateId target = to == kFinal ? kFinal : remap[static_cast<std::size_t>(to)];
      if (to != kFinal && target == kFinal) continue;
      double c = trans_count(from, to);
      if (c <= 0.0) continue;
      kept.emplace_back(target, c);
      total += c;
    }
    for (const auto& [target, c] : kept) out.set_transition(new_from, target, c / total);
  };
  fill_row(kInitial, kInitial);
  for (std::size_t q = 0; q < n; ++q) {
    if (remap[q] == kFinal) continue;
    auto sq = static_cast<StateId>(q);
    fill_row(sq, remap[q]);
    double total = 0.0;
    for (const auto& [s, lp] : structure.emissions(sq)) total += emit_count(sq, s);
    for (const auto& [s, lp] : structure.emissions(sq)) {
      double c = emit_count(sq, s);
      if (c > 0.0) out.set_emission(remap[q], s, c / total);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

template <class Row>
typename Row::key_type draw(const Row& row, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  double acc = 0.0;
  typename Row::key_type last{};
  for (const auto& [key, lp] : row) {
    acc += std::exp(lp);
    last = key;
    if (r < acc) return key;
  }
  return last;  // rounding slack at the top of the cumulative sum
}

}  // namespace

Sample sample(const Hmm& hmm, std::mt19937_64& rng, std::size_t max_length) {
  Sample out;
  if (hmm.transitions(kInitial).empty()) throw EmptyModel();
  StateId q = draw(hmm.transitions(kInitial), rng);
  while (q != kFinal) {
    if (out.size() >= max_length) throw MaxLengthExceeded(max_length);
    const auto& em = hmm.emissions(q);
    const auto& tr = hmm.transitions(q);
    if (em.empty() || tr.empty()) throw EmptyModel();
    out.push_back(hmm.alphabet().symbol(draw(em, rng)));
    q = draw(tr, rng);
  }
  return out;
}

Sample sample(const Hmm& hmm, std::uint64_t seed, std::size_t max_length) {
  std::mt19937_64 rng(seed);
  return sample(hmm, rng, max_length);
}

std::size_t sampling_length_cap(std::size_t longest) { return 10 * std::max<std::size_t>(longest, 100); }

// ---------------------------------------------------------------------------
// Pruning

namespace {

Hmm restrict_to(const Hmm& hmm, const std::vector<char>& keep) {
  const std::size_t n = hmm.num_states();
  std::vector<StateId> remap(n, kFinal);
  StateId next_id = 0;
  for (std::size_t q = 0; q < n; ++q)
    if (keep[q]) remap[q] = next_id++;
  Hmm out(hmm.alphabet(), static_cast<std::size_t>(next_id));
  auto copy_row = [&](StateId from, StateId new_from) {
    std::vector<std::pair<StateId, double>> kept;
    double total = 0.0;
    for (const auto& [to, lp] : hmm.transitions(from)) {
      if (to != kFinal && !keep[static_cast<std::size_t>(to)]) continue;
      kept.emplace_back(to == kFinal ? kFinal : remap[static_cast<std::size_t>(to)], std::exp(lp));
      total += std::exp(lp);
    }
    for (const auto& [to, p] : kept) out.set_transition(new_from, to, p / total);
  };
  copy_row(kInitial, kInitial);
  for (std::size_t q = 0; q < n; ++q) {
    if (!keep[q]) continue;
    auto sq = static_cast<StateId>(q);
    copy_row(sq, remap[q]);
    double total = 0.0;
    for (const auto& [s, lp] : hmm.emissions(sq)) total += std::exp(lp);
    for (const auto& [s, lp] : hmm.emissions(sq)) out.set_emission(remap[q], s, std::exp(lp) / total);
  }
  return out;
}

std::vector<char> useful_states(const Hmm& hmm) {
  const std::size_t n = hmm.num_states();
  std::vector<char> keep(n, 0);
  for (std::size_t q = 0; q < n; ++q) keep[q] = !hmm.emissions(static_cast<StateId>(q)).empty();
  for (;;) {
    std::vector<char> fwd(n, 0), bwd(n, 0);
    std::vector<StateId> stack;
    for (const auto& [to, lp] : hmm.transitions(kInitial))
      if (to != kFinal && keep[static_cast<std::size_t>(to)] && !fwd[static_cast<std::size_t>(to)]) {
        fwd[static_cast<std::size_t>(to)] = 1;
        stack.push_back(to);
      }
    while (!stack.empty()) {
      StateId q = stack.back();
      stack.pop_back();
      for (const auto& [to, lp] : hmm.transitions(q))
        if (to != kFinal && keep[static_cast<std::size_t>(to)] && !fwd[static_cast<std::size_t>(to)]) {
          fwd[static_cast<std::size_t>(to)] = 1;
          stack.push_back(to);
        }
    }
    std::vector<std::vector<StateId>> preds(n);
    for (std::size_t q = 0; q < n; ++q) {
      if (!keep[q]) continue;
      for (const auto& [to, lp] : hmm.transitions(static_cast<StateId>(q))) {
        if (to == kFinal) {
          if (!bwd[q]) {
            bwd[q] = 1;
            stack.push_back(static_cast<StateId>(q));
          }
        } else if (keep[static_cast<std::size_t>(to)]) {
          preds[static_cast<std::size_t>(to)].push_back(static_cast<StateId>(q));
        }
      }
    }
    while (!stack.empty()) {
      StateId q = stack.back();
      stack.pop_back();
      for (StateId p : preds[static_cast<std::size_t>(q)])
        if (!bwd[static_cast<std::size_t>(p)]) {
          bwd[static_cast<std::size_t>(p)] = 1;
          stack.push_back(p);
        }
    }
    bool changed = false;
    for (std::size_t q = 0; q < n; ++q) {
      char k = keep[q] && fwd[q] && bwd[q];
      if (k != keep[q]) changed = true;
      keep[q] = k;
    }
    if (!changed) return keep;
  }
}

}  // namespace

Hmm trim(const Hmm& hmm) {
  Hmm out = restrict_to(hmm, useful_states(hmm));
  if (out.transitions(kInitial).empty()) throw EmptyModel();
  return out;
}

Hmm prune(const Hmm& hmm, const ViterbiCounts& expected_counts, double threshold) {
  if (threshold < 0.0) throw ConfigError("prune threshold must be non-negative");
  if (threshold == 0.0) return hmm;
  Hmm cut(hmm.alphabet(), hmm.num_states());
  auto count_of = [](const auto& row, auto key) {
    auto it = row.find(key);
    return it == row.end() ? 0.0 : it->second;
  };
  auto copy_row = [&](StateId from) {
    const TransitionRow empty;
    const auto& crow = (from == kInitial || static_cast<std::size_t>(from) < expected_counts.num_states())
                           ? expected_counts.transitions(from)
                           : empty;
    for (const auto& [to, lp] : hmm.transitions(from))
      if (count_of(crow, to) >= threshold) cut.set_transition_log(from, to, lp);
  };
  copy_row(kInitial);
  for (std::size_t q = 0; q < hmm.num_states(); ++q) {
    auto sq = static_cast<StateId>(q);
    copy_row(sq);
    const EmissionRow empty;
    const auto& crow = q < expected_counts.num_states() ? expected_counts.emit[q] : empty;
    for (const auto& [s, lp] : hmm.emissions(sq))
      if (count_of(crow, s) >= threshold) cut.set_emission_log(sq, s, lp);
  }
  return trim(cut);
}

}  // namespace hmmerge
