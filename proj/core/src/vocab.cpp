#include "ctxst/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "ctxst/error.hpp"

namespace ctxst {

const std::vector<std::string>& Vocabulary::special_forms() {
  static const std::vector<std::string> forms = {"<pad>",  "<sos>",  "<eos>", "<unk>",
                                                 "[SpkA]", "[SpkB]", "[SEP]"};
  return forms;
}

Vocabulary::Vocabulary() {
  for (const std::string& s : special_forms()) {
    index_.emplace(s, static_cast<int>(tokens_.size()));
    tokens_.push_back(s);
  }
}

std::vector<std::string> Vocabulary::split_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& lines, std::size_t max_size) {
  require(max_size >= static_cast<std::size_t>(n_special),
          "vocabulary: max_size " + std::to_string(max_size) + " cannot hold the " +
              std::to_string(n_special) + " special tokens");
  // std::map keeps keys sorted, which supplies the lexicographic tie-break
  // for free once entries are re-sorted by count.
  std::map<std::string, std::size_t> counts;
  for (const std::string& line : lines)
    for (const std::string& tok : split_tokens(line)) ++counts[tok];

  Vocabulary v;
  std::vector<std::pair<std::string, std::size_t>> entries;
  entries.reserve(counts.size());
  for (const auto& [tok, n] : counts)
    if (!v.contains(tok)) entries.emplace_back(tok, n);
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [tok, n] : entries) {
    if (v.size() >= max_size) break;
    v.add(tok);
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_id : it->second;
}

const std::string& Vocabulary::token(int id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(),
          "vocabulary: id " + std::to_string(id) + " out of range [0, " +
              std::to_string(tokens_.size()) + ")");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.count(token) != 0;
}

int Vocabulary::add(const std::string& token) {
  require(!token.empty(), "vocabulary: empty token");
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(token);
  return id;
}

std::vector<int> Vocabulary::encode(const std::string& line) const {
  return encode_tokens(split_tokens(line));
}

std::vector<int> Vocabulary::encode_tokens(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "vocabulary: cannot open " + path + " for writing");
  for (const std::string& t : tokens_) out << t << '\n';
  require(out.good(), "vocabulary: write to " + path + " failed");
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "vocabulary: cannot open " + path);
  Vocabulary v;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    if (line_no < n_special) {
      require(line == special_forms()[static_cast<std::size_t>(line_no)],
              "vocabulary: line " + std::to_string(line_no) + " of " + path +
                  " is not the expected special token");
    } else {
      require(!v.contains(line), "vocabulary: duplicate token in " + path);
      v.add(line);
    }
    ++line_no;
  }
  require(line_no >= n_special, "vocabulary: " + path + " is missing special tokens");
  return v;
}

}  // namespace ctxst
