#include "hmmerge/io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hmmerge/errors.hpp"

namespace hmmerge {

namespace {

std::string trim_copy(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

StateId parse_state(const std::string& tok, std::size_t n, std::size_t line) {
  if (tok == "I") return kInitial;
  if (tok == "F") return kFinal;
  try {
    std::size_t pos = 0;
    long v = std::stol(tok, &pos);
    if (pos == tok.size() && v >= 0 && static_cast<std::size_t>(v) < n) return static_cast<StateId>(v);
  } catch (const std::exception&) {
  }
  throw FormatError("line " + std::to_string(line) + ": bad state '" + tok + "'");
}

double parse_prob(const std::string& tok, std::size_t line) {
  try {
    std::size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos == tok.size() && v >= 0.0 && v <= 1.0 + 1e-9) return v;
  } catch (const std::exception&) {
  }
  throw FormatError("line " + std::to_string(line) + ": bad probability '" + tok + "'");
}

std::string state_token(StateId q) {
  if (q == kInitial) return "I";
  if (q == kFinal) return "F";
  return std::to_string(q);
}

}  // namespace

Hmm read_hmm(std::istream& in) {
  std::optional<Alphabet> alphabet;
  std::optional<std::size_t> states;
  std::optional<Hmm> hmm;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim_copy(raw);
    if (line.empty() || line[0] == '#') continue;
    auto toks = split(line);
    if (!alphabet) {
      if (toks[0] != "alphabet:") throw FormatError("line " + std::to_string(line_no) + ": expected 'alphabet:'");
      alphabet.emplace();
      for (std::size_t i = 1; i < toks.size(); ++i) {
        if (alphabet->find(toks[i])) throw FormatError("duplicate symbol '" + toks[i] + "'");
        alphabet->add(toks[i]);
      }
      continue;
    }
    if (!states) {
      if (toks.size() != 2 || toks[0] != "states:")
        throw FormatError("line " + std::to_string(line_no) + ": expected 'states: <N>'");
      try {
        long v = std::stol(toks[1]);
        if (v < 0) throw FormatError("negative state count");
        states = static_cast<std::size_t>(v);
      } catch (const std::invalid_argument&) {
        throw FormatError("line " + std::to_string(line_no) + ": bad state count");
      }
      hmm.emplace(*alphabet, *states);
      continue;
    }
    if (toks[0] == "trans" && toks.size() == 4) {
      StateId from = parse_state(toks[1], *states, line_no);
      StateId to = parse_state(toks[2], *states, line_no);
      if (from == kFinal || to == kInitial)
        throw FormatError("line " + std::to_string(line_no) + ": illegal sentinel transition");
      hmm->set_transition(from, to, parse_prob(toks[3], line_no));
    } else if (toks[0] == "emit" && toks.size() == 4) {
      StateId q = parse_state(toks[1], *states, line_no);
      if (q < 0) throw FormatError("line " + std::to_string(line_no) + ": sentinels do not emit");
      auto sym = alphabet->find(toks[2]);
      if (!sym) throw FormatError("line " + std::to_string(line_no) + ": symbol not in alphabet");
      hmm->set_emission(q, *sym, parse_prob(toks[3], line_no));
    } else {
      throw FormatError("line " + std::to_string(line_no) + ": unrecognized '" + line + "'");
    }
  }
  if (!hmm) throw FormatError("model file is missing its header");
  hmm->validate(1e-6);
  return *hmm;
}

Hmm read_hmm_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return read_hmm(in);
}

void write_hmm(std::ostream& out, const Hmm& hmm) {
  out << "alphabet:";
  for (const auto& s : hmm.alphabet().symbols()) out << ' ' << s;
  out << "\nstates: " << hmm.num_states() << '\n';
  out << std::setprecision(17);
  auto write_row = [&](StateId from) {
    for (const auto& [to, lp] : hmm.transitions(from))
      out << "trans " << state_token(from) << ' ' << state_token(to) << ' ' << std::exp(lp) << '\n';
  };
  write_row(kInitial);
  for (std::size_t q = 0; q < hmm.num_states(); ++q) write_row(static_cast<StateId>(q));
  for (std::size_t q = 0; q < hmm.num_states(); ++q)
    for (const auto& [s, lp] : hmm.emissions(static_cast<StateId>(q)))
      out << "emit " << q << ' ' << hmm.alphabet().symbol(s) << ' ' << std::exp(lp) << '\n';
}

void write_hmm_file(const std::filesystem::path& path, const Hmm& hmm) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_hmm(out, hmm);
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string raw;
  while (std::getline(in, raw)) {
    std::string line = trim_copy(raw);
    if (!line.empty() && line[0] == '#') continue;
    corpus.samples.push_back(split(line));
  }
  return corpus;
}

Corpus read_corpus_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return read_corpus(in);
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& s : corpus.samples) out << join(s) << '\n';
}

void write_dot(std::ostream& out, const Hmm& hmm, const std::string& name) {
  out << "digraph \"" << name << "\" {\n  rankdir=LR;\n";
  out << "  I [shape=point];\n  F [shape=doublecircle,label=\"\"];\n";
  out << std::setprecision(3);
  for (std::size_t q = 0; q < hmm.num_states(); ++q) {
    out << "  s" << q << " [label=\"" << q;
    for (const auto& [s, lp] : hmm.emissions(static_cast<StateId>(q)))
      out << "\\n" << hmm.alphabet().symbol(s) << ' ' << std::exp(lp);
    out << "\"];\n";
  }
  auto node = [](StateId q) { return q == kInitial ? std::string("I") : q == kFinal ? std::string("F") : "s" + std::to_string(q); };
  auto edges = [&](StateId from) {
    for (const auto& [to, lp] : hmm.transitions(from))
      out << "  " << node(from) << " -> " << node(to) << " [label=\"" << std::exp(lp) << "\"];\n";
  };
  edges(kInitial);
  for (std::size_t q = 0; q < hmm.num_states(); ++q) edges(static_cast<StateId>(q));
  out << "}\n";
}

}  // namespace hmmerge
