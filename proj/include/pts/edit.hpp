// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pts/corpus.hpp"

namespace pts {

// A token inside an evolving hypothesis. source_record >= 0 means the token
// was copied from that table record; -1 means generated (or a frame symbol).
struct EditToken {
  std::string text;
  int vocab_id = Vocab::kUnk;
  int source_record = -1;

  bool operator==(const EditToken& o) const { return text == o.text; }
};

// Bounded token sequence framed by <bos>/<eos>. All edit operations preserve
// the frame; interior tokens are the hypothesis proper.
struct EditSequence {
  std::vector<EditToken> tokens;

  static EditSequence empty_frame() {
    EditSequence s;
    s.tokens.push_back(EditToken{"<bos>", Vocab::kBos, -1});
    s.tokens.push_back(EditToken{"</eos>", Vocab::kEos, -1});
    return s;
  }

  static EditSequence from_interior(const std::vector<EditToken>& interior) {
    EditSequence s = empty_frame();
    s.tokens.insert(s.tokens.begin() + 1, interior.begin(), interior.end());
    return s;
  }

  int length() const { return static_cast<int>(tokens.size()); }
  int interior_length() const { return length() - 2; }

  std::vector<int> vocab_ids() const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(t.vocab_id);
    return ids;
  }

  std::vector<std::string> interior_texts() const {
    std::vector<std::string> out;
    for (int i = 1; i + 1 < length(); ++i) out.push_back(tokens[i].text);
    return out;
  }

  bool same_tokens(const EditSequence& o) const {
    if (length() != o.length()) return false;
    for (int i = 0; i < length(); ++i)
      if (tokens[i].text != o.tokens[i].text) return false;
    return true;
  }
};

inline EditToken make_placeholder() { return EditToken{"<plh>", Vocab::kPlh, -1}; }

inline EditToken copied_token(const std::string& text, int record_index, const Vocab& vocab) {
  return EditToken{text, vocab.id(text), record_index};
}

inline EditToken generated_token(const std::string& text, const Vocab& vocab) {
  return EditToken{text, vocab.id(text), -1};
}

// Frame a plain token sequence (used for references and corrupted inputs).
inline EditSequence frame_tokens(const std::vector<std::string>& toks, const Vocab& vocab) {
  std::vector<EditToken> interior;
  interior.reserve(toks.size());
  for (const auto& t : toks) interior.push_back(generated_token(t, vocab));
  return EditSequence::from_interior(interior);
}

// Positions (into the framed sequence) of placeholder tokens.
inline std::vector<int> placeholder_positions(const EditSequence& s) {
  std::vector<int> out;
  for (int i = 1; i + 1 < s.length(); ++i)
    if (s.tokens[i].vocab_id == Vocab::kPlh && s.tokens[i].text == "<plh>") out.push_back(i);
  return out;
}

}  // namespace pts
