#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace ctxst {

/// Word-level vocabulary with a fixed block of special tokens at ids 0..6.
/// Persistence is line oriented: the token on line k has id k, so two saves
/// of the same vocabulary are byte identical.
class Vocabulary {
 public:
  static constexpr int pad_id = 0;
  static constexpr int sos_id = 1;
  static constexpr int eos_id = 2;
  static constexpr int unk_id = 3;
  static constexpr int spk_a_id = 4;
  static constexpr int spk_b_id = 5;
  static constexpr int sep_id = 6;
  static constexpr int n_special = 7;

  static const std::vector<std::string>& special_forms();

  Vocabulary();  // specials only

  /// Counts whitespace tokens over the lines and assigns ids 7.. in order of
  /// descending frequency, ties broken by byte-wise lexicographic order,
  /// stopping once the vocabulary (specials included) reaches max_size.
  /// Tokens spelled like a special form keep their reserved id.
  static Vocabulary build(const std::vector<std::string>& lines,
                          std::size_t max_size = static_cast<std::size_t>(-1));

  int id(const std::string& token) const;  // unk_id when absent
  const std::string& token(int id) const;  // fails when out of range
  bool contains(const std::string& token) const;
  std::size_t size() const { return tokens_.size(); }

  int add(const std::string& token);  // appends if new, returns id either way

  std::vector<int> encode(const std::string& line) const;
  std::vector<int> encode_tokens(const std::vector<std::string>& tokens) const;
  std::string decode(const std::vector<int>& ids) const;  // space joined

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  static std::vector<std::string> split_tokens(const std::string& line);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace ctxst
