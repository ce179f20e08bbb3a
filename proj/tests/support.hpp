#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "hmmerge/hmm.hpp"

namespace testing_support {

using namespace hmmerge;

inline Corpus corpus(std::initializer_list<const char*> lines) {
  Corpus c;
  for (const char* l : lines) {
    Sample s;
    for (const char* p = l; *p; ++p)
      if (*p != ' ') s.emplace_back(1, *p);
    c.samples.push_back(std::move(s));
  }
  return c;
}

inline Sample chars(const std::string& s) {
  Sample out;
  for (char ch : s) out.emplace_back(1, ch);
  return out;
}

// q0 emits a; q1 emits a/b evenly; I->q0, q0->q1, q1->q0 | F.
inline Hmm fig1_hmm() {
  Hmm h(Alphabet({"a", "b"}), 2);
  h.set_transition(kInitial, 0, 1.0);
  h.set_emission(0, 0, 1.0);
  h.set_transition(0, 1, 1.0);
  h.set_emission(1, 0, 0.5);
  h.set_emission(1, 1, 0.5);
  h.set_transition(1, 0, 0.5);
  h.set_transition(1, kFinal, 0.5);
  return h;
}

inline Hmm chain_hmm(const Sample& x) {
  Alphabet a;
  for (const auto& s : x) a.add(s);
  Hmm h(a, x.size());
  StateId prev = kInitial;
  for (std::size_t i = 0; i < x.size(); ++i) {
    h.set_transition(prev, static_cast<StateId>(i), 1.0);
    h.set_emission(static_cast<StateId>(i), a.at(x[i]), 1.0);
    prev = static_cast<StateId>(i);
  }
  h.set_transition(prev, kFinal, 1.0);
  return h;
}

inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t k) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> v(k);
  double t = 0.0;
  for (auto& x : v) t += (x = u(rng));
  for (auto& x : v) x /= t;
  return v;
}

// Random sparse model: every row non-empty, some elements absent.
inline Hmm random_hmm(std::mt19937_64& rng, std::size_t n, std::size_t sigma, double density = 0.6) {
  std::vector<std::string> syms;
  for (std::size_t s = 0; s < sigma; ++s) syms.push_back(std::string(1, static_cast<char>('a' + s)));
  Hmm h(Alphabet(syms), n);
  std::bernoulli_distribution keep(density);
  auto row = [&](StateId from, bool allow_final) {
    std::vector<StateId> targets;
    for (std::size_t j = 0; j < n; ++j)
      if (keep(rng)) targets.push_back(static_cast<StateId>(j));
    if (allow_final && (keep(rng) || targets.empty())) targets.push_back(kFinal);
    if (targets.empty()) targets.push_back(0);
    auto p = random_simplex(rng, targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) h.set_transition(from, targets[i], p[i]);
  };
  row(kInitial, false);
  for (std::size_t q = 0; q < n; ++q) {
    row(static_cast<StateId>(q), true);
    std::vector<SymbolId> em;
    for (std::size_t s = 0; s < sigma; ++s)
      if (keep(rng)) em.push_back(static_cast<SymbolId>(s));
    if (em.empty()) em.push_back(static_cast<SymbolId>(rng() % sigma));
    auto p = random_simplex(rng, em.size());
    for (std::size_t i = 0; i < em.size(); ++i) h.set_emission(static_cast<StateId>(q), em[i], p[i]);
  }
  return h;
}

inline Sequence random_sequence(std::mt19937_64& rng, std::size_t len, std::size_t sigma) {
  Sequence x(len);
  for (auto& s : x) s = static_cast<SymbolId>(rng() % sigma);
  return x;
}

struct Enumerated {
  double total = 0.0;  // probability space
  double best = 0.0;
  std::size_t paths = 0;  // paths with nonzero probability
  std::vector<StateId> argmax;
};

// Explicit sum over all |Q|^len state sequences.
inline Enumerated enumerate_paths(const Hmm& h, const Sequence& x) {
  Enumerated e;
  const std::size_t n = h.num_states();
  std::vector<StateId> path(x.size(), 0);
  std::function<void(std::size_t)> rec = [&](std::size_t t) {
    if (t == x.size()) {
      double p = 1.0;
      StateId prev = kInitial;
      for (std::size_t i = 0; i < x.size(); ++i) {
        p *= std::exp(h.transition_logprob(prev, path[i])) * std::exp(h.emission_logprob(path[i], x[i]));
        prev = path[i];
      }
      p *= std::exp(h.transition_logprob(prev, kFinal));
      if (p > 0.0) {
        ++e.paths;
        e.total += p;
        if (p > e.best) {
          e.best = p;
          e.argmax = path;
        }
      }
      return;
    }
    for (std::size_t q = 0; q < n; ++q) {
      path[t] = static_cast<StateId>(q);
      rec(t + 1);
    }
  };
  rec(0);
  return e;
}

}  // namespace testing_support
