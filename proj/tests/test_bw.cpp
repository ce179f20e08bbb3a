#include <random>
#include <sstream>

#include "doctest.h"
#include "hmmerge/baum_welch.hpp"
#include "hmmerge/errors.hpp"
#include "hmmerge/experiments.hpp"
#include "support.hpp"

using namespace hmmerge;
using namespace testing_support;

TEST_SUITE("baum-welch") {
  TEST_CASE("random initialization") {
    Alphabet a({"a", "b", "c"});
    Hmm h = random_init(4, a, 7);
    h.validate(1e-9);
    CHECK(h.transitions(kInitial).size() == 4);
    CHECK(h.transitions(kInitial).count(kFinal) == 0);
    for (StateId q = 0; q < 4; ++q) {
      CHECK(h.transitions(q).size() == 5);
      CHECK(h.emissions(q).size() == 3);
    }
    CHECK(random_init(4, a, 7).approx_equal(h, 0.0));
    CHECK_FALSE(random_init(4, a, 8).approx_equal(h, 1e-6));
  }

  TEST_CASE("expected counts on a chain") {
    const Hmm h = chain_hmm(chars("abc"));
    auto fb = forward_backward(h, h.alphabet().encode(chars("abc")));
    CHECK(fb.log_likelihood == doctest::Approx(0.0));
    CHECK(fb.expected.initial.at(0) == doctest::Approx(1.0));
    CHECK(fb.expected.trans[0].at(1) == doctest::Approx(1.0));
    CHECK(fb.expected.trans[2].at(kFinal) == doctest::Approx(1.0));
    CHECK(fb.expected.emit[1].at(1) == doctest::Approx(1.0));
  }

  TEST_CASE("expected counts split over tied paths") {
    // I -> {0,1} evenly, both emit a, both end
    Hmm h(Alphabet({"a"}), 2);
    h.set_transition(kInitial, 0, 0.5);
    h.set_transition(kInitial, 1, 0.5);
    for (StateId q = 0; q < 2; ++q) {
      h.set_emission(q, 0, 1.0);
      h.set_transition(q, kFinal, 1.0);
    }
    auto fb = forward_backward(h, Sequence{0});
    CHECK(fb.expected.initial.at(0) == doctest::Approx(0.5));
    CHECK(fb.expected.initial.at(1) == doctest::Approx(0.5));
    CHECK(fb.log_likelihood == doctest::Approx(0.0));

    const Hmm f = fig1_hmm();
    auto fb1 = forward_backward(f, f.alphabet().encode(chars("abaa")));
    CHECK(fb1.expected.trans[1].at(0) == doctest::Approx(1.0));
    CHECK(fb1.expected.trans[1].at(kFinal) == doctest::Approx(1.0));
    CHECK(fb1.expected.emit[1].at(1) == doctest::Approx(1.0));
    CHECK_THROWS_AS(forward_backward(f, f.alphabet().encode(chars("b"))), ZeroProbabilitySample);
  }

  TEST_CASE("posteriors and likelihood agree with enumeration") {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 60; ++i) {
      const Hmm h = random_hmm(rng, 2 + rng() % 3, 2 + rng() % 2);
      const Sequence x = random_sequence(rng, 1 + rng() % 5, h.alphabet().size());
      auto e = enumerate_paths(h, x);
      if (e.total == 0.0) {
        CHECK_THROWS_AS(forward_backward(h, x), ZeroProbabilitySample);
        continue;
      }
      auto fb = forward_backward(h, x);
      CHECK(fb.log_likelihood == doctest::Approx(std::log(e.total)).epsilon(1e-10));
      CHECK(fb.log_likelihood == doctest::Approx(string_log_prob(h, x)).epsilon(1e-10));
      for (const auto& row : fb.posteriors) {
        double s = 0.0;
        for (double p : row) s += p;
        CHECK(std::abs(s - 1.0) <= 1e-10);
      }
    }
  }

  TEST_CASE("EM never decreases the likelihood") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
      Alphabet a({"a", "b"});
      const Hmm init = random_init(2 + rng() % 3, a, rng());
      Corpus c;
      for (int k = 0; k < 6; ++k) c.samples.push_back(a.decode(random_sequence(rng, 1 + rng() % 6, 2)));
      BwConfig cfg;
      cfg.max_iters = 30;
      cfg.tol = 1e-300;
      auto r = bw_train(init, c, cfg);
      for (std::size_t k = 1; k < r.log_likelihoods.size(); ++k)
        CHECK(r.log_likelihoods[k] >= r.log_likelihoods[k - 1] - 1e-9);
    }
  }

  TEST_CASE("a chain is a fixed point") {
    const Hmm h = chain_hmm(chars("ab"));
    BwConfig cfg;
    auto r = bw_train(h, corpus({"ab"}), cfg);
    CHECK(r.iterations == 1);
    CHECK(r.hmm.approx_equal(h, 1e-12));
  }

  TEST_CASE("reestimate keeps rows with no mass") {
    const Hmm h = fig1_hmm();
    ViterbiCounts zero(2);
    CHECK(reestimate(h, zero).approx_equal(h, 1e-15));
  }

  TEST_CASE("restarts and configuration") {
    BwConfig cfg;
    cfg.restarts = 3;
    cfg.max_iters = 20;
    const Hmm target = case_study_target("case1");
    auto rows = bw_experiment(minimal_sample("case1"), Corpus{}, cfg, &target, 20);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].seed == 1);
    CHECK(rows[2].seed == 3);
    CHECK(std::isnan(rows[0].test_ll));
    CHECK(rows[0].parse_in <= 20);
    std::ostringstream out;
    write_restart_report(out, rows);
    CHECK(out.str().rfind("restart,seed,iters,train_ll,test_ll,states_after_prune,parse_in,parse_out\n", 0) == 0);

    BwConfig m;
    m.states_multiplier = 1.5;
    CHECK(m.states_for(5) == 8);
    BwConfig bad;
    bad.restarts = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}
