// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "pts/mat.hpp"

namespace pts {

// One linearized table cell: value token, its key, and the token's position
// within the value counted from both ends (1-based).
struct Record {
  std::string value_token;
  std::string key_token;
  int pos_fwd = 1;
  int pos_bwd = 1;

  bool operator==(const Record& o) const = default;
};

struct TableInstance {
  std::vector<std::pair<std::string, std::vector<std::string>>> table;  // ordered key -> value tokens
  std::vector<Record> records;
  std::vector<std::string> description;
  std::vector<std::string> plan_tokens;
  std::vector<int> plan_pointers;  // indices into records
  bool has_plan = false;
};

inline std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

// ---- linearization ----

inline std::vector<Record> linearize_table(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& pairs) {
  if (pairs.empty()) throw std::runtime_error("empty input table");
  std::vector<Record> records;
  for (const auto& [key, value] : pairs) {
    if (key.empty()) throw std::runtime_error("empty input table");
    if (value.empty()) throw std::runtime_error("empty input table");
    const int m = static_cast<int>(value.size());
    for (int i = 0; i < m; ++i)
      records.push_back(Record{value[i], key, i + 1, m - i});
  }
  return records;
}

// ---- stopwords ----

// Default list shipped as data/stopwords.txt; kept in sync by a test.
inline const std::vector<std::string>& default_stopwords_list() {
  static const std::vector<std::string> words = {
      ".",     ",",    ";",    ":",     "!",    "?",     "''",   "``",  "\"",  "'",
      "-",     "--",   "-lrb-", "-rrb-", "a",   "an",    "the",  "is",  "was", "are",
      "were",  "be",   "been", "am",    "and",  "or",    "but",  "of",  "in",  "on",
      "at",    "to",   "for",  "from",  "by",   "with",  "as",   "that", "this", "it",
      "its",   "his",  "her",  "he",    "she",  "they",  "them", "their", "who",
      "which", "whom", "not",  "no",    "also", "than",  "then", "there", "here",
      "had",   "has",  "have", "s",     "one",  "two",   "after", "before", "during",
      "into",  "over", "under",
  };
  return words;
}

inline std::unordered_set<std::string> default_stopwords() {
  const auto& w = default_stopwords_list();
  return {w.begin(), w.end()};
}

inline std::unordered_set<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::unordered_set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

inline void write_stopwords(const std::string& path, const std::vector<std::string>& words) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const auto& w : words) out << w << '\n';
}

// ---- plan annotation ----

// Heuristic content-plan annotation: keep every description token that is not
// a stopword and occurs among the record value tokens, in description order.
// Each kept token points at the earliest unused matching record; once all
// matching records are used, reuse the earliest one.
inline std::pair<std::vector<std::string>, std::vector<int>> annotate_plan(
    const std::vector<Record>& records, const std::vector<std::string>& description,
    const std::unordered_set<std::string>& stopwords) {
  std::unordered_map<std::string, std::vector<int>> by_value;
  for (int i = 0; i < static_cast<int>(records.size()); ++i)
    by_value[records[i].value_token].push_back(i);

  std::vector<std::string> tokens;
  std::vector<int> pointers;
  std::vector<char> used(records.size(), 0);
  for (const auto& tok : description) {
    if (stopwords.count(tok)) continue;
    auto it = by_value.find(tok);
    if (it == by_value.end()) continue;
    int chosen = -1;
    for (int idx : it->second) {
      if (!used[idx]) {
        chosen = idx;
        break;
      }
    }
    if (chosen < 0) chosen = it->second.front();
    used[chosen] = 1;
    tokens.push_back(tok);
    pointers.push_back(chosen);
  }
  return {tokens, pointers};
}

// ---- vocabulary ----

struct Vocab {
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPlh = 2;
  static constexpr int kUnk = 3;
  static constexpr int kPad = 4;
  static constexpr int kReserved = 5;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  Vocab() {
    for (const char* t : {"<bos>", "</eos>", "<plh>", "<unk>", "<pad>"}) push(t);
  }

  int push(const std::string& tok) {
    const int id = static_cast<int>(id_to_token.size());
    id_to_token.push_back(tok);
    token_to_id.emplace(tok, id);
    return id;
  }

  int size() const { return static_cast<int>(id_to_token.size()); }

  int id(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const { return id_to_token.at(id); }

  bool operator==(const Vocab& o) const { return id_to_token == o.id_to_token; }
};

// Most frequent tokens kept up to max_size (reserved symbols included in the
// budget); ties broken lexicographically.
inline Vocab build_vocab(const std::vector<std::vector<std::string>>& token_streams, int max_size) {
  if (max_size < Vocab::kReserved)
    throw std::runtime_error("build_vocab: max_size smaller than reserved symbol count");
  std::unordered_map<std::string, long long> counts;
  for (const auto& stream : token_streams)
    for (const auto& tok : stream) ++counts[tok];
  std::vector<std::pair<std::string, long long>> items(counts.begin(), counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, cnt] : items) {
    if (v.size() >= max_size) break;
    if (!v.token_to_id.count(tok)) v.push(tok);
  }
  return v;
}

inline Vocab vocab_from_instances(const std::vector<TableInstance>& corpus, int max_size) {
  std::vector<std::vector<std::string>> streams;
  for (const auto& inst : corpus) {
    streams.push_back(inst.description);
    std::vector<std::string> values;
    for (const auto& r : inst.records) values.push_back(r.value_token);
    streams.push_back(std::move(values));
  }
  return build_vocab(streams, max_size);
}

inline Vocab key_vocab_from_instances(const std::vector<TableInstance>& corpus, int max_size) {
  std::vector<std::vector<std::string>> streams;
  for (const auto& inst : corpus) {
    std::vector<std::string> keys;
    for (const auto& [key, value] : inst.table) keys.push_back(key);
    streams.push_back(std::move(keys));
  }
  return build_vocab(streams, max_size);
}

// Vocab file: one token per line, id = line number; reserved symbols first.
inline void save_vocab(const Vocab& v, std::ostream& out) {
  for (const auto& t : v.id_to_token) out << t << '\n';
}

inline void save_vocab_file(const Vocab& tokens, const Vocab& keys, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "#tokens " << tokens.size() << '\n';
  save_vocab(tokens, out);
  out << "#keys " << keys.size() << '\n';
  save_vocab(keys, out);
}

inline std::pair<Vocab, Vocab> load_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  auto read_section = [&in, &path](const std::string& tag) {
    std::string header;
    if (!std::getline(in, header) || header.rfind("#" + tag + " ", 0) != 0)
      throw std::runtime_error("corrupt vocab file " + path);
    const int n = std::stoi(header.substr(tag.size() + 2));
    Vocab v;
    for (int i = 0; i < n; ++i) {
      std::string line;
      if (!std::getline(in, line)) throw std::runtime_error("corrupt vocab file " + path);
      if (i < Vocab::kReserved) {
        if (line != v.id_to_token[i]) throw std::runtime_error("corrupt vocab file " + path);
      } else {
        v.push(line);
      }
    }
    return v;
  };
  Vocab tokens = read_section("tokens");
  Vocab keys = read_section("keys");
  return {tokens, keys};
}

// ---- dataset I/O (JSONL) ----

inline nlohmann::json instance_to_json(const TableInstance& inst) {
  nlohmann::json j;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [key, value] : inst.table)
    table.push_back(nlohmann::json::array({key, join_tokens(value)}));
  j["table"] = std::move(table);
  j["description"] = join_tokens(inst.description);
  if (inst.has_plan) {
    j["plan_tokens"] = inst.plan_tokens;
    j["plan_pointers"] = inst.plan_pointers;
  }
  return j;
}

inline TableInstance instance_from_json(const nlohmann::json& j) {
  TableInstance inst;
  if (!j.contains("table") || !j.contains("description"))
    throw std::runtime_error("dataset record missing table or description");
  for (const auto& pair : j.at("table")) {
    const std::string key = pair.at(0).get<std::string>();
    const auto value = split_tokens(pair.at(1).get<std::string>());
    inst.table.emplace_back(key, value);
  }
  inst.records = linearize_table(inst.table);
  inst.description = split_tokens(j.at("description").get<std::string>());
  if (j.contains("plan_tokens")) {
    inst.plan_tokens = j.at("plan_tokens").get<std::vector<std::string>>();
    inst.plan_pointers = j.at("plan_pointers").get<std::vector<int>>();
    if (inst.plan_tokens.size() != inst.plan_pointers.size())
      throw std::runtime_error("dataset record has mismatched plan fields");
    for (size_t i = 0; i < inst.plan_pointers.size(); ++i) {
      const int p = inst.plan_pointers[i];
      if (p < 0 || p >= static_cast<int>(inst.records.size()))
        throw std::runtime_error("dataset record has out-of-range plan pointer");
      if (inst.records[p].value_token != inst.plan_tokens[i])
        throw std::runtime_error("dataset record plan token does not match pointed record");
    }
    inst.has_plan = true;
  }
  return inst;
}

inline void save_dataset(const std::vector<TableInstance>& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const auto& inst : corpus) out << instance_to_json(inst).dump() << '\n';
}

inline std::vector<TableInstance> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<TableInstance> corpus;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      corpus.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": invalid dataset line: " + e.what());
    }
  }
  return corpus;
}

// ---- synthetic corpus ----

struct SynthOptions {
  bool duplicate_distractors = false;  // add an article title repeating the name
};

namespace synth {

inline const std::vector<std::string>& first_names() {
  static const std::vector<std::string> v = {
      "alice", "bruno", "carla", "dmitri", "elena",  "felix",  "grace",  "henrik",
      "ines",  "jonas", "keiko", "lucas",  "maren",  "nadia",  "otto",   "paula",
      "quinn", "rosa",  "stefan", "tomas", "ursula", "viktor", "wanda",  "yusuf"};
  return v;
}

inline const std::vector<std::string>& last_names() {
  static const std::vector<std::string> v = {
      "almeida", "bergstrom", "castillo", "dubois",  "eriksen", "fontaine", "garrido",
      "hansen",  "ibarra",    "jansen",   "kovacs",  "lindqvist", "moretti", "novak",
      "oliveira", "petrov",   "quispe",   "romano",  "silva",   "takeda",  "ueda",
      "vasquez", "weber",     "zhang"};
  return v;
}

inline const std::vector<std::string>& occupations() {
  static const std::vector<std::string> v = {"actress", "lawyer",  "singer",   "painter",
                                             "pianist", "engineer", "journalist", "footballer",
                                             "chemist", "novelist", "architect", "historian"};
  return v;
}

inline const std::vector<std::string>& nationalities() {
  static const std::vector<std::string> v = {"american", "brazilian", "french",  "german",
                                             "italian",  "canadian",  "japanese", "spanish",
                                             "english",  "dutch"};
  return v;
}

inline const std::vector<std::string>& months() {
  static const std::vector<std::string> v = {"january", "february", "march",     "april",
                                             "may",     "june",     "july",      "august",
                                             "september", "october", "november", "december"};
  return v;
}

}  // namespace synth

// Deterministic templated biographies over random name / birth date /
// occupation / nationality fields. Four sentence templates; the last one is
// deliberately long so the corpus spans short and long targets.
inline std::vector<TableInstance> generate_synthetic_corpus(uint64_t seed, int n,
                                                            SynthOptions opts = {}) {
  if (n < 1) throw std::runtime_error("generate_synthetic_corpus: n must be >= 1");
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto stop = default_stopwords();
  std::set<std::pair<int, int>> used_names;
  std::vector<TableInstance> corpus;
  corpus.reserve(n);
  while (static_cast<int>(corpus.size()) < n) {
    const int fi = rng.uniform_int(static_cast<int>(synth::first_names().size()));
    const int li = rng.uniform_int(static_cast<int>(synth::last_names().size()));
    // keep tables unique so an overfit model maps each table to one output
    if (used_names.count({fi, li})) continue;
    if (used_names.size() + 1 >= synth::first_names().size() * synth::last_names().size())
      used_names.clear();
    used_names.insert({fi, li});

    const std::string first = synth::first_names()[fi];
    const std::string last = synth::last_names()[li];
    const std::string day = std::to_string(1 + rng.uniform_int(28));
    const std::string month = synth::months()[rng.uniform_int(12)];
    const std::string year = std::to_string(1900 + rng.uniform_int(100));
    const std::string occ = synth::occupations()[rng.uniform_int(static_cast<int>(synth::occupations().size()))];
    const std::string nat = synth::nationalities()[rng.uniform_int(static_cast<int>(synth::nationalities().size()))];

    TableInstance inst;
    inst.table = {
        {"name", {first, last}},
        {"birth_date", {day, month, year}},
        {"occupation", {occ}},
        {"nationality", {nat}},
    };
    if (opts.duplicate_distractors)
      inst.table.emplace_back("article_title", std::vector<std::string>{first, last});
    inst.records = linearize_table(inst.table);

    const int tmpl = rng.uniform_int(4);
    std::string text;
    switch (tmpl) {
      case 0:
        text = first + " " + last + " is a " + nat + " " + occ + " .";
        break;
      case 1:
        text = first + " " + last + " -lrb- born " + day + " " + month + " " + year +
               " -rrb- is a " + nat + " " + occ + " .";
        break;
      case 2:
        text = "born on " + day + " " + month + " " + year + " , " + first + " " + last +
               " became a " + occ + " known across " + nat + " circles .";
        break;
      case 3:
        text = first + " " + last + " -lrb- born " + day + " " + month + " " + year +
               " -rrb- is a " + nat + " " + occ + " . raised far from home , " + first +
               " trained for years as a young " + occ + " and first found wide acclaim in " +
               year + " . critics still describe " + last + " as the most devoted " + nat +
               " " + occ + " of that era , and admirers gather every " + month +
               " to honor the long career .";
        break;
      default: break;
    }
    inst.description = split_tokens(text);
    auto [toks, ptrs] = annotate_plan(inst.records, inst.description, stop);
    inst.plan_tokens = std::move(toks);
    inst.plan_pointers = std::move(ptrs);
    inst.has_plan = true;
    corpus.push_back(std::move(inst));
  }
  return corpus;
}

}  // namespace pts
