#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "hmmerge/hmm.hpp"

namespace hmmerge {

// Model text format:
//   alphabet: <sym> <sym> ...
//   states: <N>
//   trans <from> <to> <prob>     (I and F name the sentinels)
//   emit <state> <sym> <prob>
// '#' starts a comment line.

Hmm read_hmm(std::istream& in);
Hmm read_hmm_file(const std::filesystem::path& path);
void write_hmm(std::ostream& out, const Hmm& hmm);
void write_hmm_file(const std::filesystem::path& path, const Hmm& hmm);

/// One sample per line, whitespace-separated symbols; a blank line is the empty string.
Corpus read_corpus(std::istream& in);
Corpus read_corpus_file(const std::filesystem::path& path);
void write_corpus(std::ostream& out, const Corpus& corpus);

void write_dot(std::ostream& out, const Hmm& hmm, const std::string& name = "hmm");

}  // namespace hmmerge
