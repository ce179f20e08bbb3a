#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "hmmerge/errors.hpp"
#include "hmmerge/experiments.hpp"
#include "hmmerge/merging.hpp"
#include "support.hpp"

using namespace hmmerge;
using namespace testing_support;

namespace {

double full_objective(const MergeState& s, const PriorConfig& pc) {
  auto ex = s.export_ml();
  return objective_score(ex.hmm, ex.counts, pc).objective();
}

// Cycle through `q` in an exported model, by DFS from its successors.
bool on_cycle(const Hmm& h, StateId q) {
  std::vector<StateId> stack;
  std::set<StateId> seen;
  for (const auto& [t, lp] : h.transitions(q))
    if (t >= 0) stack.push_back(t);
  while (!stack.empty()) {
    StateId v = stack.back();
    stack.pop_back();
    if (v == q) return true;
    if (!seen.insert(v).second) continue;
    for (const auto& [t, lp] : h.transitions(v))
      if (t >= 0) stack.push_back(t);
  }
  return false;
}

std::vector<PriorConfig> scoring_configs() {
  std::vector<PriorConfig> out;
  for (auto scope : {ParameterScope::narrow, ParameterScope::broad})
    for (auto kind : {StructurePriorKind::description_length, StructurePriorKind::bernoulli,
                      StructurePriorKind::description_length_single_output, StructurePriorKind::none}) {
      PriorConfig pc;
      pc.scope = scope;
      pc.structure = kind;
      pc.lambda = 0.7;
      pc.effective_sample_target.reset();
      pc.expected_transitions = 1.5;
      out.push_back(pc);
    }
  PriorConfig joint;
  joint.objective = ObjectiveKind::joint_map;
  joint.alpha_is_total = false;
  joint.alpha_t = joint.alpha_e = 1.5;
  joint.effective_sample_target.reset();
  out.push_back(joint);
  joint.scope = ParameterScope::broad;
  out.push_back(joint);
  PriorConfig lik;
  lik.objective = ObjectiveKind::likelihood;
  out.push_back(lik);
  PriorConfig emp;
  emp.scope = ParameterScope::broad;
  emp.empirical_emission_prior = true;
  out.push_back(emp);
  return out;
}

}  // namespace

TEST_SUITE("merging") {
  TEST_CASE("initial model from samples") {
    MergeState s = build_initial_model(corpus({"ab", "abab"}));
    CHECK(s.num_states() == 6);
    Hmm h = s.to_hmm();
    CHECK(std::exp(h.transition_logprob(kInitial, 0)) == doctest::Approx(0.5));
    MergeState dup = build_initial_model(corpus({"ab", "ab"}));
    CHECK(dup.num_states() == 2);
    CHECK(string_log_prob(dup.to_hmm(), chars("ab")) == doctest::Approx(0.0));
    CHECK_THROWS_AS(build_initial_model(Corpus{}), EmptyCorpus);
    MergeState empty_sample = build_initial_model(corpus({"", "a"}));
    CHECK(std::exp(string_log_prob(empty_sample.to_hmm(), Sample{})) == doctest::Approx(0.5));
  }

  TEST_CASE("merge adds counts and redirects transitions") {
    MergeState s = build_initial_model(corpus({"ac", "ac", "bc"}));
    s.merge({1, 3});
    CHECK(s.state(1).out.at(kFinal) == 3.0);
    CHECK(s.state(2).out.count(1) == 1);
    CHECK_FALSE(s.alive(3));
    CHECK_THROWS_AS(s.merge({1, 3}), InvalidPair);
    CHECK_THROWS_AS(s.merge({1, 1}), InvalidPair);

    MergeState loop = build_initial_model(corpus({"ab"}));
    loop.merge({0, 1});
    CHECK(loop.state(0).out.at(0) == 1.0);
    CHECK(loop.state(0).in.count(0) == 1);
  }

  TEST_CASE("walkthrough likelihoods") {
    auto w = fig3_walkthrough();
    REQUIRE(w.steps.size() == 5);
    const double expect[] = {-0.602, -0.602, -0.602, -0.829, -0.829};
    for (int i = 0; i < 5; ++i) CHECK(std::abs(w.steps[i].log10_likelihood - expect[i]) < 1e-3);
    CHECK(w.one_state_log10 == doctest::Approx(w.one_state_oracle_log10).epsilon(1e-12));
    CHECK(w.search_result.num_states() == 2);
  }

  TEST_CASE("likelihood-only search stops at the last lossless merge") {
    PriorConfig pc;
    pc.objective = ObjectiveKind::likelihood;
    SearchConfig sc;
    sc.lookahead = 1;
    MergeState s = best_first_merge(build_initial_model(corpus({"ab", "abab"})), pc, sc);
    CHECK(s.num_states() <= 4);
    auto ex = s.export_ml();
    double ll = 0.0;
    for (const auto& x : corpus({"ab", "abab"}).samples) ll += string_log_prob(ex.hmm, x);
    CHECK(ll / std::log(10.0) == doctest::Approx(-0.60206).epsilon(1e-4));
  }

  TEST_CASE("candidate generation and filters") {
    MergeState s = build_initial_model(corpus({"ab", "ab a"}));
    CHECK(s.num_states() == 5);
    CHECK(candidate_merges(s, SearchConfig{}).size() == 10);
    MergeState four = build_initial_model(corpus({"abcd"}));
    CHECK(candidate_merges(four, SearchConfig{}).size() == 6);
    SearchConfig so;
    so.single_output = true;
    MergeState three = build_initial_model(corpus({"aab"}));
    auto c = candidate_merges(three, so);
    REQUIRE(c.size() == 1);
    CHECK(c[0].pair == StatePair{0, 1});
    SearchConfig nl;
    nl.forbid_loops = true;
    MergeState chain = build_initial_model(corpus({"abab"}));
    std::set<StatePair> pairs;
    for (auto& k : candidate_merges(chain, nl)) pairs.insert(k.pair);
    // on a single chain only neighbours merge without a cycle, and they make a self-loop
    CHECK(pairs == std::set<StatePair>{{0, 1}, {1, 2}, {2, 3}});
    nl.allow_self_loops = false;
    CHECK(candidate_merges(chain, nl).empty());
    MergeState two = build_initial_model(corpus({"ab", "cd"}));
    CHECK(candidate_merges(two, nl).size() == 4);
    chain.disallow({0, 3});
    pairs.clear();
    for (auto& k : candidate_merges(chain, SearchConfig{})) pairs.insert(k.pair);
    CHECK(pairs.count({0, 3}) == 0);
  }

  TEST_CASE("loop check agrees with a DFS oracle on the merged graph") {
    for (const auto* sample : {"case1", "case2"}) {
      MergeState s = build_initial_model(minimal_sample(sample));
      // a few merges in, to get non-trivial graphs
      s.merge({0, 2});
      s.merge({1, 3});
      for (StateId a : s.alive_states())
        for (StateId b : s.alive_states()) {
          if (a >= b) continue;
          auto lc = merge_creates_loop(s, {a, b});
          MergeState m = s;
          m.merge({a, b});
          auto ex = m.export_ml();
          const StateId dense = static_cast<StateId>(
              std::find(ex.ids.begin(), ex.ids.end(), a) - ex.ids.begin());
          const bool self = ex.hmm.transitions(dense).count(dense) > 0;
          CHECK(lc.self_loop == self);
          CHECK((lc.cycle || lc.self_loop) == on_cycle(ex.hmm, dense));
        }
    }
  }

  TEST_CASE("incremental scoring equals full recomputation") {
    std::vector<Corpus> corpora{minimal_sample("case1"), minimal_sample("case2"), minimal_sample("fig3"),
                                corpus({"", "a", "ab", "abb"})};
    for (const auto& pc : scoring_configs()) {
      for (const auto& c : corpora) {
        MergeState s = build_initial_model(c);
        for (int step = 0; step < 3; ++step) {
          CHECK(std::abs(s.score(pc).objective() - full_objective(s, pc)) <= 1e-9);
          const double base = full_objective(s, pc);
          std::optional<StatePair> next;
          double best = -1e300;
          for (auto& k : candidate_merges(s, SearchConfig{})) {
            auto scored = s.score_merge(k.pair, pc);
            MergeState m = s;
            m.merge(k.pair);
            double after;
            try {
              after = full_objective(m, pc);
            } catch (const DegenerateBernoulli&) {
              CHECK(std::isinf(scored.objective_delta));
              continue;
            }
            CHECK(std::abs(scored.objective_delta - (after - base)) <= 1e-9);
            if (scored.objective_delta > best) {
              best = scored.objective_delta;
              next = k.pair;
            }
          }
          if (!next) break;
          s.merge(*next);
        }
      }
    }
  }

  TEST_CASE("affected set holds the pair and predecessors") {
    MergeState s = build_initial_model(minimal_sample("case1"));
    for (auto& k : candidate_merges(s, SearchConfig{})) {
      auto c = s.score_merge(k.pair, PriorConfig{});
      std::set<StateId> aff(c.affected.begin(), c.affected.end());
      CHECK(aff.count(k.pair.first));
      CHECK(aff.count(k.pair.second));
      for (StateId q : {k.pair.first, k.pair.second})
        for (StateId p : s.state(q).in)
          if (p != kInitial) CHECK(aff.count(p));
    }
  }

  TEST_CASE("refreshed counts") {
    MergeState init = build_initial_model(corpus({"ab", "abab"}));
    MergeState r = refresh_counts(init);
    CHECK(r.fingerprint() == init.fingerprint());
    CHECK(r.export_ml().counts.total() == init.export_ml().counts.total());

    MergeState s = init;
    for (StatePair p : std::vector<StatePair>{{0, 2}, {1, 3}, {1, 5}, {0, 4}}) s.merge(p);
    auto optimistic = s.export_ml().counts;
    auto exact = refresh_counts(s).export_ml().counts;
    CHECK(optimistic.initial == exact.initial);
    CHECK(optimistic.trans == exact.trans);
    CHECK(optimistic.emit == exact.emit);

    // rerouting: after the merge "ab" prefers the heavier branch
    MergeState f = build_initial_model(corpus({"ab", "aab", "aab"}));
    f.merge({0, 3});
    auto opt = f.export_ml();
    MergeState g = refresh_counts(f);
    auto ref = g.export_ml();
    CHECK(opt.counts.trans != ref.counts.trans);
    CHECK(g.num_states() < f.num_states());
    CHECK(std::abs(g.score(PriorConfig{}).objective() - full_objective(g, PriorConfig{})) <= 1e-9);
  }

  TEST_CASE("reparse interval keeps the model consistent") {
    SearchConfig sc = default_search();
    sc.reparse_interval = 1;
    MergeState s = online_merge(minimal_sample("case1"), default_prior(), sc);
    auto ex = s.export_ml();
    CHECK(language_equal(ex.hmm, case_study_target("case1"), 100, 3));
  }

  TEST_CASE("merging only generalizes") {
    const Corpus c = minimal_sample("case1");
    MergeState s = build_initial_model(c);
    PriorConfig pc = default_prior();
    pc.effective_sample_target.reset();
    pc.lambda = 1.0;
    std::mt19937_64 rng(3);
    for (int step = 0; step < 8; ++step) {
      auto cands = candidate_merges(s, SearchConfig{});
      if (cands.empty()) break;
      StatePair best = cands.front().pair;
      double bd = -1e300;
      for (auto& k : cands) {
        double d = s.score_merge(k.pair, pc).objective_delta;
        if (d > bd) bd = d, best = k.pair;
      }
      Hmm before = s.to_hmm();
      s.merge(best);
      Hmm after = s.to_hmm();
      for (const auto& x : c.samples) CHECK(parses(after, x));
      for (int i = 0; i < 100; ++i) CHECK(parses(after, sample(before, rng)));
    }
  }

  TEST_CASE("best-first reaches the minimal model for {ab, abab}") {
    PriorConfig pc;
    pc.effective_sample_target.reset();
    SearchConfig sc;
    MergeState s = best_first_merge(build_initial_model(corpus({"ab", "abab"})), pc, sc);
    CHECK(s.num_states() == 2);
    std::vector<StatePair> seq;
    for (auto& t : s.trace()) seq.push_back(t.pair);
    CHECK(seq == std::vector<StatePair>{{0, 2}, {1, 3}, {1, 5}, {0, 4}});
    // tiny prior weight: no merge accepted on a single sample
    PriorConfig tiny = pc;
    tiny.lambda = 1e-3;
    MergeState one = best_first_merge(build_initial_model(corpus({"a"})), tiny, sc);
    CHECK(one.num_states() == 1);
  }

  TEST_CASE("beam search") {
    PriorConfig pc;
    pc.effective_sample_target.reset();
    SearchConfig w1;
    w1.beam_width = 1;
    const MergeState init = build_initial_model(corpus({"ab", "abab"}));
    MergeState a = best_first_merge(init, pc, w1);
    MergeState b = beam_merge(init, pc, w1);
    CHECK(a.fingerprint() == b.fingerprint());
    REQUIRE(a.trace().size() == b.trace().size());
    for (std::size_t i = 0; i < a.trace().size(); ++i) CHECK(a.trace()[i].pair == b.trace()[i].pair);

    PriorConfig cs = default_prior();
    cs.effective_sample_target.reset();
    cs.lambda = 0.16;
    SearchConfig w3;
    w3.beam_width = 3;
    const MergeState c1 = build_initial_model(minimal_sample("case1"));
    const double bf = best_first_merge(c1, cs, SearchConfig{}).score(cs).objective();
    const double bm = beam_merge(c1, cs, w3).score(cs).objective();
    CHECK(bm >= bf - 1e-9);

    // permuted merge orders give one structure
    MergeState p = init, q = init;
    p.merge({0, 2});
    p.merge({1, 3});
    q.merge({1, 3});
    q.merge({0, 2});
    CHECK(p.fingerprint() == q.fingerprint());
  }

  TEST_CASE("on-line induction") {
    MergeState empty = online_merge(Corpus{}, Alphabet({"a"}), default_prior(), default_search());
    CHECK(empty.num_states() == 0);

    MergeState s = build_initial_model(corpus({"ab"}));
    s = incorporate_samples(s, corpus({"ab"}));
    CHECK(s.num_states() == 2);
    CHECK(s.samples_seen() == 2);
    s = incorporate_samples(s, corpus({"abab"}));
    CHECK(s.num_states() == 6);

    MergeState d = incorporate_samples(build_initial_model(corpus({"ab"})), corpus({"ab"}),
                                       SearchConfig{.count_decay = 0.5});
    CHECK(d.initial().at(0) == doctest::Approx(1.5));

    auto run1 = online_merge(minimal_sample("case2"), default_prior(), default_search());
    auto run2 = online_merge(minimal_sample("case2"), default_prior(), default_search());
    REQUIRE(run1.trace().size() == run2.trace().size());
    for (std::size_t i = 0; i < run1.trace().size(); ++i) {
      CHECK(run1.trace()[i].pair == run2.trace()[i].pair);
      CHECK(run1.trace()[i].objective == run2.trace()[i].objective);
    }
    CHECK(language_equal(run1.to_hmm(), case_study_target("case2"), 100, 1));
  }

  TEST_CASE("trace format") {
    std::ostringstream out;
    write_trace(out, {MergeStep{1, {0, 2}, 0.5, -3.25, 5}});
    CHECK(out.str() == "step 1 merge 0 2 delta 0.5 objective -3.25 states 5\n");
  }

  TEST_CASE("search config validation") {
    SearchConfig sc;
    sc.lookahead = 0;
    CHECK_THROWS_AS(sc.validate(), ConfigError);
    SearchConfig d;
    d.count_decay = 1.5;
    CHECK_THROWS_AS(d.validate(), ConfigError);
  }
}
