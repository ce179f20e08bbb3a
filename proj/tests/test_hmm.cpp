#include <map>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "hmmerge/errors.hpp"
#include "hmmerge/hmm.hpp"
#include "hmmerge/io.hpp"
#include "support.hpp"

using namespace hmmerge;
using namespace testing_support;

TEST_SUITE("hmm") {
  TEST_CASE("alphabet encodes and rejects bad symbols") {
    Alphabet a({"x", "y"});
    CHECK(a.size() == 2);
    CHECK(a.at("y") == 1);
    CHECK_THROWS_AS(a.at("z"), UnknownSymbol);
    CHECK_FALSE(a.try_encode({"x", "z"}).has_value());
    CHECK(a.decode(a.encode({"y", "x"})) == Sample{"y", "x"});
    CHECK_THROWS_AS(a.add("has space"), InputError);
    CHECK_THROWS_AS(a.add(""), InputError);
  }

  TEST_CASE("forward probability on the simple example") {
    const Hmm h = fig1_hmm();
    CHECK(std::exp(string_log_prob(h, chars("abaa"))) == doctest::Approx(0.0625).epsilon(1e-14));
    CHECK(std::isinf(string_log_prob(h, chars("b"))));
    CHECK_THROWS_AS(string_log_prob(h, chars("c")), UnknownSymbol);
    CHECK(std::isinf(string_log_prob_or_zero(h, chars("c"))));
  }

  TEST_CASE("deterministic chain has log probability zero") {
    const Hmm h = chain_hmm(chars("ab"));
    CHECK(string_log_prob(h, chars("ab")) == doctest::Approx(0.0));
    auto p = viterbi_path(h, chars("ab"));
    REQUIRE(p);
    CHECK(p->states == std::vector<StateId>{0, 1});
    CHECK(p->logprob == doctest::Approx(0.0));
  }

  TEST_CASE("viterbi path on the simple example") {
    auto p = viterbi_path(fig1_hmm(), chars("abaa"));
    REQUIRE(p);
    CHECK(p->states == std::vector<StateId>{0, 1, 0, 1});
    CHECK(p->logprob == doctest::Approx(std::log(0.0625)));
    CHECK_FALSE(viterbi_path(fig1_hmm(), chars("bb")).has_value());
  }

  TEST_CASE("viterbi ties go to the lexicographically smallest path") {
    // two identical parallel states
    Hmm h(Alphabet({"a"}), 3);
    h.set_transition(kInitial, 1, 0.5);
    h.set_transition(kInitial, 2, 0.5);
    h.set_transition(1, 0, 1.0);
    h.set_transition(2, 0, 1.0);
    h.set_transition(0, kFinal, 1.0);
    for (StateId q = 0; q < 3; ++q) h.set_emission(q, 0, 1.0);
    auto p = viterbi_path(h, Sample{"a", "a"});
    REQUIRE(p);
    CHECK(p->states == std::vector<StateId>{1, 0});
  }

  TEST_CASE("forward equals brute-force path sum on random models") {
    std::mt19937_64 rng(20240611);
    int checked = 0;
    for (int inst = 0; inst < 240; ++inst) {
      const std::size_t n = 1 + rng() % 5, sigma = 1 + rng() % 3, len = rng() % 7;
      const Hmm h = random_hmm(rng, n, sigma);
      const Sequence x = random_sequence(rng, len, sigma);
      const auto e = enumerate_paths(h, x);
      const double lp = string_log_prob(h, x);
      if (e.total == 0.0) {
        CHECK(std::isinf(lp));
        CHECK_FALSE(viterbi_path(h, x).has_value());
        continue;
      }
      ++checked;
      CHECK(std::abs(lp - std::log(e.total)) <= 1e-12);
      auto v = viterbi_path(h, x);
      REQUIRE(v);
      CHECK(v->logprob <= lp + 1e-12);
      CHECK(std::abs(v->logprob - std::log(e.best)) <= 1e-12);
      if (e.paths == 1) CHECK(std::abs(v->logprob - lp) <= 1e-12);
      if (e.paths > 1) CHECK(v->logprob < lp);
      CHECK(parses(h, x.empty() ? Sample{} : h.alphabet().decode(x)));
    }
    CHECK(checked >= 100);
  }

  TEST_CASE("viterbi counts on the two-sample chain model") {
    Hmm m0(Alphabet({"a", "b"}), 6);
    m0.set_transition(kInitial, 0, 0.5);
    m0.set_transition(kInitial, 2, 0.5);
    const char* e = "ababab";
    for (StateId q = 0; q < 6; ++q) m0.set_emission(q, e[q] == 'a' ? 0 : 1, 1.0);
    m0.set_transition(0, 1, 1.0);
    m0.set_transition(1, kFinal, 1.0);
    for (StateId q = 2; q < 5; ++q) m0.set_transition(q, q + 1, 1.0);
    m0.set_transition(5, kFinal, 1.0);
    const Corpus c = corpus({"ab", "abab"});
    auto counts = viterbi_counts(m0, c);
    CHECK(counts.initial.at(0) == 1.0);
    CHECK(counts.initial.at(2) == 1.0);
    for (std::size_t q = 0; q < 6; ++q) {
      double t = 0.0, em = 0.0;
      for (auto& [to, v] : counts.trans[q]) t += v;
      for (auto& [s, v] : counts.emit[q]) em += v;
      CHECK(t == 1.0);
      CHECK(em == 1.0);
    }
    double total = 0.0;
    for (const auto& s : c.samples) total += string_log_prob(m0, s);
    CHECK(total / std::log(10.0) == doctest::Approx(-0.60206).epsilon(1e-5));
    CHECK(viterbi_counts(m0, Corpus{}).total() == 0.0);
    CHECK_THROWS_AS(viterbi_counts(m0, corpus({"ba"})), UnparseableSample);
  }

  TEST_CASE("minimal (ab)+ model counts and estimates") {
    Hmm m4(Alphabet({"a", "b"}), 2);
    m4.set_transition(kInitial, 0, 1.0);
    m4.set_transition(0, 1, 1.0);
    m4.set_transition(1, 0, 0.5);
    m4.set_transition(1, kFinal, 0.5);
    m4.set_emission(0, 0, 1.0);
    m4.set_emission(1, 1, 1.0);
    const Corpus c = corpus({"ab", "abab"});
    auto counts = viterbi_counts(m4, c);
    CHECK(counts.trans[1].at(kFinal) == 2.0);
    CHECK(counts.trans[1].at(0) == 1.0);
    Hmm ml = ml_estimates(counts, m4);
    CHECK(std::exp(ml.transition_logprob(1, kFinal)) == doctest::Approx(2.0 / 3.0));
    double total = 0.0;
    for (const auto& s : c.samples) total += string_log_prob(ml, s);
    CHECK(total / std::log(10.0) == doctest::Approx(-0.829304).epsilon(1e-5));
  }

  TEST_CASE("ml estimates from counts") {
    Hmm s(Alphabet({"a"}), 3);
    s.set_transition(kInitial, 0, 1.0);
    s.set_transition(0, 1, 0.5);
    s.set_transition(0, 2, 0.5);
    s.set_transition(1, kFinal, 1.0);
    s.set_transition(2, kFinal, 1.0);
    for (StateId q = 0; q < 3; ++q) s.set_emission(q, 0, 1.0);
    ViterbiCounts c(3);
    c.add_transition(kInitial, 0, 3);
    c.add_transition(0, 1, 2);
    c.add_transition(0, 2, 1);
    c.add_transition(1, kFinal, 2);
    c.add_transition(2, kFinal, 1);
    for (StateId q = 0; q < 3; ++q) c.add_emission(q, 0, q == 0 ? 3 : (q == 1 ? 2 : 1));
    Hmm ml = ml_estimates(c, s);
    CHECK(std::exp(ml.transition_logprob(0, 1)) == doctest::Approx(2.0 / 3.0));
    CHECK(std::exp(ml.transition_logprob(0, 2)) == doctest::Approx(1.0 / 3.0));
    ml.validate(1e-9);

    // a state without counts is dropped
    ViterbiCounts d(3);
    d.add_transition(kInitial, 0, 5);
    d.add_transition(0, 1, 5);
    d.add_transition(1, kFinal, 5);
    d.add_emission(0, 0, 5);
    d.add_emission(1, 0, 5);
    Hmm dropped = ml_estimates(d, s);
    CHECK(dropped.num_states() == 2);
    CHECK(std::exp(dropped.transition_logprob(0, 1)) == doctest::Approx(1.0));
  }

  TEST_CASE("sampling: determinism, chains, case language and length distribution") {
    const Hmm chain = chain_hmm(chars("ab"));
    for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(sample(chain, seed) == chars("ab"));
    const Hmm f1 = fig1_hmm();
    CHECK(sample(f1, 99) == sample(f1, 99));
    std::mt19937_64 rng(4);
    int len2 = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i)
      if (sample(f1, rng).size() == 2) ++len2;
    const double sd = std::sqrt(draws * 0.25);
    CHECK(std::abs(len2 - draws * 0.5) <= 3 * sd);

    // looping model exceeds the guard
    Hmm loop(Alphabet({"a"}), 1);
    loop.set_transition(kInitial, 0, 1.0);
    loop.set_transition(0, 0, 0.999999);
    loop.set_transition(0, kFinal, 0.000001);
    loop.set_emission(0, 0, 1.0);
    CHECK_THROWS_AS(sample(loop, 1, 10), MaxLengthExceeded);
    CHECK(sampling_length_cap(5) == 1000);
    CHECK(sampling_length_cap(300) == 3000);
  }

  TEST_CASE("sampled strings match a regular language") {
    Hmm h(Alphabet({"a", "b", "c"}), 6);
    h.set_transition(kInitial, 0, 0.5);
    h.set_transition(kInitial, 3, 0.5);
    for (StateId base : {0, 3}) {
      const SymbolId edge = base == 0 ? 0 : 1;
      h.set_emission(base, edge, 1.0);
      h.set_emission(base + 1, 2, 1.0);
      h.set_emission(base + 2, edge, 1.0);
      h.set_transition(base, base + 1, 0.5);
      h.set_transition(base, base + 2, 0.5);
      h.set_transition(base + 1, base + 1, 0.5);
      h.set_transition(base + 1, base + 2, 0.5);
      h.set_transition(base + 2, kFinal, 1.0);
    }
    const std::regex lang("ac*a|bc*b");
    std::mt19937_64 rng(11);
    bool all = true;
    for (int i = 0; i < 10000; ++i) {
      std::string s;
      for (const auto& t : sample(h, rng)) s += t;
      all = all && std::regex_match(s, lang);
    }
    CHECK(all);
  }

  TEST_CASE("sampling frequencies of a finite-support model (chi-square)") {
    Hmm m0(Alphabet({"a", "b"}), 6);
    m0.set_transition(kInitial, 0, 0.5);
    m0.set_transition(kInitial, 2, 0.5);
    const char* e = "ababab";
    for (StateId q = 0; q < 6; ++q) m0.set_emission(q, e[q] == 'a' ? 0 : 1, 1.0);
    m0.set_transition(0, 1, 1.0);
    m0.set_transition(1, kFinal, 1.0);
    for (StateId q = 2; q < 5; ++q) m0.set_transition(q, q + 1, 1.0);
    m0.set_transition(5, kFinal, 1.0);
    std::map<std::string, int> freq;
    std::mt19937_64 rng(2);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) freq[join(sample(m0, rng))]++;
    REQUIRE(freq.size() == 2);
    double chi2 = 0.0;
    for (auto& [s, n] : freq) chi2 += (n - draws / 2.0) * (n - draws / 2.0) / (draws / 2.0);
    CHECK(chi2 < 6.635);  // 1 dof, p = 0.01
  }

  TEST_CASE("prune removes low-count elements and useless states") {
    Hmm h(Alphabet({"a", "b"}), 3);
    h.set_transition(kInitial, 0, 1.0);
    h.set_transition(0, 1, 0.99999);
    h.set_transition(0, 2, 0.00001);
    h.set_transition(1, kFinal, 1.0);
    h.set_transition(2, kFinal, 1.0);
    h.set_emission(0, 0, 1.0);
    h.set_emission(1, 1, 1.0);
    h.set_emission(2, 1, 1.0);
    ViterbiCounts c(3);
    c.add_transition(kInitial, 0, 1);
    c.add_transition(0, 1, 0.99999);
    c.add_transition(0, 2, 0.00001);
    c.add_transition(1, kFinal, 0.99999);
    c.add_transition(2, kFinal, 0.00001);
    c.add_emission(0, 0, 1);
    c.add_emission(1, 1, 0.99999);
    c.add_emission(2, 1, 0.00001);
    Hmm p = prune(h, c, 1e-3);
    CHECK(p.num_states() == 2);
    CHECK(std::exp(p.transition_logprob(0, 1)) == doctest::Approx(1.0));
    p.validate(1e-9);
    CHECK(prune(h, c, 0.0).approx_equal(h, 1e-12));
    CHECK_THROWS_AS(prune(h, c, -1.0), ConfigError);
    CHECK_THROWS_AS(prune(h, c, 10.0), EmptyModel);
  }

  TEST_CASE("trim drops unreachable and dead-end states") {
    Hmm h(Alphabet({"a"}), 4);
    h.set_transition(kInitial, 0, 1.0);
    h.set_transition(0, kFinal, 0.5);
    h.set_transition(0, 1, 0.5);  // 1 never reaches F
    h.set_transition(1, 1, 1.0);
    h.set_transition(2, kFinal, 1.0);  // 2 unreachable
    h.set_transition(3, kFinal, 1.0);
    for (StateId q = 0; q < 4; ++q) h.set_emission(q, 0, 1.0);
    Hmm t = trim(h);
    CHECK(t.num_states() == 1);
    CHECK(std::exp(t.transition_logprob(0, kFinal)) == doctest::Approx(1.0));
  }

  TEST_CASE("empty sample is the direct initial-to-final transition") {
    Hmm h(Alphabet({"a"}), 1);
    h.set_transition(kInitial, kFinal, 0.5);
    h.set_transition(kInitial, 0, 0.5);
    h.set_transition(0, kFinal, 1.0);
    h.set_emission(0, 0, 1.0);
    CHECK(std::exp(string_log_prob(h, Sample{})) == doctest::Approx(0.5));
    CHECK(parses(h, Sample{}));
    auto p = viterbi_path(h, Sample{});
    REQUIRE(p);
    CHECK(p->states.empty());
  }

  TEST_CASE("validate rejects rows that do not sum to one") {
    Hmm h(Alphabet({"a"}), 1);
    h.set_transition(kInitial, 0, 0.7);
    h.set_transition(0, kFinal, 1.0);
    h.set_emission(0, 0, 1.0);
    CHECK_THROWS_AS(h.validate(), FormatError);
  }
}

TEST_SUITE("io") {
  TEST_CASE("model text round trip") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
      const Hmm h = random_hmm(rng, 1 + rng() % 5, 1 + rng() % 3);
      std::stringstream ss;
      write_hmm(ss, h);
      const Hmm back = read_hmm(ss);
      CHECK(back.approx_equal(h, 1e-9));
    }
  }

  TEST_CASE("model reader errors") {
    std::istringstream bad1("states: 1\n");
    CHECK_THROWS_AS(read_hmm(bad1), FormatError);
    std::istringstream bad2("alphabet: a\nstates: 1\ntrans I 0 1\ntrans 0 F 0.5\nemit 0 a 1\n");
    CHECK_THROWS_AS(read_hmm(bad2), FormatError);
    std::istringstream bad3("alphabet: a\nstates: 1\ntrans I 3 1\n");
    CHECK_THROWS_AS(read_hmm(bad3), FormatError);
    std::istringstream ok("# comment\nalphabet: a\nstates: 1\ntrans I 0 1\ntrans 0 F 1\nemit 0 a 1\n");
    CHECK(read_hmm(ok).num_states() == 1);
    CHECK_THROWS_AS(read_hmm_file("/nonexistent/model.hmm"), InputError);
  }

  TEST_CASE("corpus reader: comments, empty samples, multiplicity") {
    std::istringstream in("a b\n# skip\n\na b\n");
    Corpus c = read_corpus(in);
    REQUIRE(c.size() == 3);
    CHECK(c.samples[1].empty());
    auto d = c.distinct();
    REQUIRE(d.size() == 2);
    CHECK(d[0].second == 2);
    std::ostringstream out;
    write_corpus(out, c);
    CHECK(out.str() == "a b\n\na b\n");
  }

  TEST_CASE("dot export names every state and edge") {
    std::ostringstream out;
    write_dot(out, fig1_hmm(), "fig");
    const std::string s = out.str();
    CHECK(s.find("digraph") != std::string::npos);
    CHECK(s.find("s1 -> F") != std::string::npos);
    CHECK(s.find("I -> s0") != std::string::npos);
  }
}
