#pragma once

// Nested-NER corpus model: sentences of pre-tokenized text with inclusive
// (start, end, label) span annotations, plus JSONL I/O, validation,
// subsampling, synthetic generation and summary statistics.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "eiou/common.hpp"

namespace eiou {

using json = nlohmann::json;

struct SpanAnnotation {
  int start = 0;
  int end = 0;  // inclusive
  std::string label;

  auto operator<=>(const SpanAnnotation&) const = default;
};

struct Sentence {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<SpanAnnotation> entities;

  int length() const { return static_cast<int>(tokens.size()); }
  bool operator==(const Sentence&) const = default;
};

class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw ConfigError("label set is empty");
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
        throw ConfigError("duplicate label '" + names_[i] + "'");
      }
    }
  }

  int size() const { return static_cast<int>(names_.size()); }
  bool empty() const { return names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  bool contains(const std::string& label) const { return index_.count(label) != 0; }

  int index(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) throw ConfigError("unknown label '" + label + "'");
    return it->second;
  }

  bool operator==(const LabelSet& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

struct Corpus {
  std::vector<Sentence> sentences;
  LabelSet labels;

  std::size_t size() const { return sentences.size(); }
  bool operator==(const Corpus& other) const {
    return sentences == other.sentences && labels == other.labels;
  }
};

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string sentence_id;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

namespace detail {

// Checks one sentence against the data-model invariants. Labels are only
// checked when `labels` is non-null.
inline std::vector<std::string> sentence_problems(const Sentence& s, const LabelSet* labels) {
  std::vector<std::string> out;
  if (s.tokens.empty()) out.emplace_back("empty token list");
  std::set<std::tuple<int, int, std::string>> seen;
  for (const auto& e : s.entities) {
    const std::string span =
        "(" + std::to_string(e.start) + "," + std::to_string(e.end) + "," + e.label + ")";
    if (e.start > e.end) out.push_back("start > end in " + span);
    if (e.start < 0 || e.end >= s.length()) {
      out.push_back("span " + span + " out of range for " + std::to_string(s.length()) +
                    " tokens");
    }
    if (labels != nullptr && !labels->contains(e.label)) {
      out.push_back("label not in label set in " + span);
    }
    if (!seen.emplace(e.start, e.end, e.label).second) {
      out.push_back("duplicate annotation " + span);
    }
  }
  return out;
}

}  // namespace detail

inline ValidationReport validate(const Corpus& corpus) {
  ValidationReport report;
  if (corpus.labels.empty()) report.violations.push_back({"", "label set is empty"});
  for (const auto& s : corpus.sentences) {
    for (auto& msg : detail::sentence_problems(s, &corpus.labels)) {
      report.violations.push_back({s.id, std::move(msg)});
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// JSONL I/O
//
// One record per line:
//   {"id": "...", "tokens": [...], "entities": [{"start": 0, "end": 1, "label": "X"}]}
// "end" is inclusive. An optional first-line {"labels": [...]} record fixes
// label order; otherwise labels are the sorted distinct labels in the file.

inline json sentence_to_json(const Sentence& s) {
  json entities = json::array();
  for (const auto& e : s.entities) {
    entities.push_back({{"start", e.start}, {"end", e.end}, {"label", e.label}});
  }
  return {{"id", s.id}, {"tokens", s.tokens}, {"entities", entities}};
}

inline std::string to_jsonl(const Corpus& corpus) {
  std::ostringstream out;
  out << json{{"labels", corpus.labels.names()}}.dump() << '\n';
  for (const auto& s : corpus.sentences) out << sentence_to_json(s).dump() << '\n';
  return out.str();
}

inline void write_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << to_jsonl(corpus);
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Corpus parse_jsonl(std::istream& in, const std::string& source = "<stream>") {
  Corpus corpus;
  std::vector<std::string> header;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) -> IoError {
    return IoError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw fail(std::string("malformed JSON: ") + e.what());
    }
    if (!rec.is_object()) throw fail("record is not an object");
    if (rec.contains("labels") && !rec.contains("tokens")) {
      if (!corpus.sentences.empty() || !header.empty()) {
        throw fail("label header must be the first record");
      }
      try {
        header = rec.at("labels").get<std::vector<std::string>>();
      } catch (const json::exception& e) {
        throw fail(std::string("bad label header: ") + e.what());
      }
      continue;
    }
    Sentence s;
    try {
      s.id = rec.contains("id") ? rec.at("id").get<std::string>()
                                : std::to_string(corpus.sentences.size());
      s.tokens = rec.at("tokens").get<std::vector<std::string>>();
      if (rec.contains("entities")) {
        for (const auto& e : rec.at("entities")) {
          s.entities.push_back(
              {e.at("start").get<int>(), e.at("end").get<int>(), e.at("label").get<std::string>()});
        }
      }
    } catch (const json::exception& e) {
      throw fail(std::string("bad record: ") + e.what());
    }
    auto problems = detail::sentence_problems(s, nullptr);
    if (!problems.empty()) throw fail(problems.front());
    corpus.sentences.push_back(std::move(s));
  }
  if (corpus.sentences.empty()) throw IoError(source + ": no sentences");

  if (header.empty()) {
    std::set<std::string> distinct;
    for (const auto& s : corpus.sentences) {
      for (const auto& e : s.entities) distinct.insert(e.label);
    }
    if (distinct.empty()) throw IoError(source + ": no labels (add a {\"labels\": [...]} header)");
    header.assign(distinct.begin(), distinct.end());
  }
  try {
    corpus.labels = LabelSet(header);
  } catch (const ConfigError& e) {
    throw IoError(source + ": " + e.what());
  }
  for (const auto& s : corpus.sentences) {
    for (const auto& e : s.entities) {
      if (!corpus.labels.contains(e.label)) {
        throw IoError(source + ": sentence '" + s.id + "' uses label '" + e.label +
                      "' missing from the header");
      }
    }
  }
  return corpus;
}

inline Corpus load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_jsonl(in, path);
}

// ---------------------------------------------------------------------------
// Subsampling

// Uniformly keeps floor(fraction * N) sentences (at least one), in original order.
inline Corpus subsample(const Corpus& corpus, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("subsample fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  const std::size_t n = corpus.sentences.size();
  const auto want = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::size_t> keep;
  keep.reserve(want);
  std::mt19937_64 rng(seed);
  std::sample(idx.begin(), idx.end(), std::back_inserter(keep), want, rng);
  Corpus out;
  out.labels = corpus.labels;
  out.sentences.reserve(keep.size());
  for (auto i : keep) out.sentences.push_back(corpus.sentences[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

struct SynthConfig {
  int num_classes = 5;
  double zipf_exponent = 1.5;
  double nesting_prob = 0.2;
  double entities_per_sentence_mean = 2.0;
  int sentence_len_min = 8;
  int sentence_len_max = 20;
  int entity_len_cap = 5;
  int lexicon_size = 8;   // words per class and per role
  int filler_size = 200;
  int num_sentences = 1000;
  int max_entities = -1;  // hard cap per sentence; -1 means none
  std::uint64_t seed = 42;

  void check() const {
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (!(zipf_exponent > 0.0)) throw ConfigError("zipf_exponent must be > 0");
    if (!(nesting_prob >= 0.0 && nesting_prob <= 1.0)) {
      throw ConfigError("nesting_prob must lie in [0, 1]");
    }
    if (!(entities_per_sentence_mean > 0.0)) {
      throw ConfigError("entities_per_sentence_mean must be > 0");
    }
    if (sentence_len_min < 1) throw ConfigError("sentence_len_min must be >= 1");
    if (sentence_len_max < sentence_len_min) {
      throw ConfigError("sentence_len_max must be >= sentence_len_min");
    }
    if (entity_len_cap < 1) throw ConfigError("entity_len_cap must be >= 1");
    if (lexicon_size < 1) throw ConfigError("lexicon_size must be >= 1");
    if (filler_size < 1) throw ConfigError("filler_size must be >= 1");
    if (num_sentences < 0) throw ConfigError("num_sentences must be >= 0");
  }
};

inline void to_json(json& j, const SynthConfig& c) {
  j = json{{"num_classes", c.num_classes},
           {"zipf_exponent", c.zipf_exponent},
           {"nesting_prob", c.nesting_prob},
           {"entities_per_sentence_mean", c.entities_per_sentence_mean},
           {"sentence_len_min", c.sentence_len_min},
           {"sentence_len_max", c.sentence_len_max},
           {"entity_len_cap", c.entity_len_cap},
           {"lexicon_size", c.lexicon_size},
           {"filler_size", c.filler_size},
           {"num_sentences", c.num_sentences},
           {"max_entities", c.max_entities},
           {"seed", c.seed}};
}

inline void from_json(const json& j, SynthConfig& c) {
  SynthConfig d;
  c.num_classes = j.value("num_classes", d.num_classes);
  c.zipf_exponent = j.value("zipf_exponent", d.zipf_exponent);
  c.nesting_prob = j.value("nesting_prob", d.nesting_prob);
  c.entities_per_sentence_mean = j.value("entities_per_sentence_mean", d.entities_per_sentence_mean);
  c.sentence_len_min = j.value("sentence_len_min", d.sentence_len_min);
  c.sentence_len_max = j.value("sentence_len_max", d.sentence_len_max);
  c.entity_len_cap = j.value("entity_len_cap", d.entity_len_cap);
  c.lexicon_size = j.value("lexicon_size", d.lexicon_size);
  c.filler_size = j.value("filler_size", d.filler_size);
  c.num_sentences = j.value("num_sentences", d.num_sentences);
  c.max_entities = j.value("max_entities", d.max_entities);
  c.seed = j.value("seed", d.seed);
}

inline std::string synth_label_name(int cls, int num_classes) {
  const int width = static_cast<int>(std::to_string(std::max(num_classes - 1, 0)).size());
  std::string digits = std::to_string(cls);
  return "T" + std::string(static_cast<std::size_t>(width) - digits.size(), '0') + digits;
}

namespace detail {

inline bool disjoint(int s0, int e0, int s1, int e1) { return e0 < s1 || e1 < s0; }
inline bool contains(int outer_s, int outer_e, int s, int e) { return outer_s <= s && e <= outer_e; }

// True when [s, e] is laminar (disjoint or nested) with every existing span
// and does not repeat one.
inline bool laminar_with(const std::vector<std::pair<int, int>>& spans, int s, int e) {
  for (auto [os, oe] : spans) {
    if (os == s && oe == e) return false;
    if (!(disjoint(os, oe, s, e) || contains(os, oe, s, e) || contains(s, e, os, oe))) return false;
  }
  return true;
}

}  // namespace detail

// Generates a corpus whose class frequencies follow a Zipf law. Entity tokens
// come from per-class lexicons split by role (begin / inside / end / single),
// fillers elsewhere. Spans are either disjoint or strictly nested.
inline Corpus synthesize(const SynthConfig& cfg) {
  cfg.check();
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> class_weights(static_cast<std::size_t>(cfg.num_classes));
  for (int c = 0; c < cfg.num_classes; ++c) {
    class_weights[static_cast<std::size_t>(c)] = std::pow(c + 1.0, -cfg.zipf_exponent);
  }
  std::discrete_distribution<int> class_dist(class_weights.begin(), class_weights.end());
  std::poisson_distribution<int> count_dist(cfg.entities_per_sentence_mean);
  std::uniform_int_distribution<int> len_dist(cfg.sentence_len_min, cfg.sentence_len_max);
  std::uniform_int_distribution<int> filler_dist(0, cfg.filler_size - 1);
  std::uniform_int_distribution<int> lex_dist(0, cfg.lexicon_size - 1);
  std::bernoulli_distribution nest_dist(cfg.nesting_prob);
  constexpr int kAttempts = 16;

  Corpus corpus;
  std::vector<std::string> names;
  for (int c = 0; c < cfg.num_classes; ++c) names.push_back(synth_label_name(c, cfg.num_classes));
  corpus.labels = LabelSet(names);

  auto uniform = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  for (int n = 0; n < cfg.num_sentences; ++n) {
    const int len = len_dist(rng);
    int count = count_dist(rng);
    if (cfg.max_entities >= 0) count = std::min(count, cfg.max_entities);

    std::vector<std::pair<int, int>> spans;
    std::vector<int> classes;
    for (int k = 0; k < count; ++k) {
      const int cls = class_dist(rng);
      const bool nest = !spans.empty() && nest_dist(rng);
      for (int attempt = 0; attempt < kAttempts; ++attempt) {
        int s = 0;
        int e = 0;
        if (nest) {
          std::vector<std::size_t> hosts;
          for (std::size_t h = 0; h < spans.size(); ++h) {
            if (spans[h].second - spans[h].first + 1 >= 3) hosts.push_back(h);
          }
          if (hosts.empty()) break;
          auto [hs, he] = spans[hosts[static_cast<std::size_t>(
              uniform(0, static_cast<int>(hosts.size()) - 1))]];
          s = uniform(hs + 1, he - 1);
          e = uniform(s, std::min(he - 1, s + cfg.entity_len_cap - 1));
        } else {
          const int elen = uniform(1, std::min(cfg.entity_len_cap, len));
          s = uniform(0, len - elen);
          e = s + elen - 1;
          bool clear = true;
          for (auto [os, oe] : spans) clear = clear && detail::disjoint(os, oe, s, e);
          if (!clear) continue;
        }
        if (!detail::laminar_with(spans, s, e)) continue;
        spans.emplace_back(s, e);
        classes.push_back(cls);
        break;
      }
    }

    Sentence sent;
    sent.id = "syn-" + std::to_string(n);
    sent.tokens.resize(static_cast<std::size_t>(len));
    for (auto& tok : sent.tokens) tok = "w" + std::to_string(filler_dist(rng));

    // Paint outer spans first so nested spans overwrite their interior.
    std::vector<std::size_t> order(spans.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return spans[a].second - spans[a].first > spans[b].second - spans[b].first;
    });
    for (auto idx : order) {
      auto [s, e] = spans[idx];
      const std::string& label = names[static_cast<std::size_t>(classes[idx])];
      for (int t = s; t <= e; ++t) {
        const char role = s == e ? 's' : (t == s ? 'b' : (t == e ? 'e' : 'i'));
        sent.tokens[static_cast<std::size_t>(t)] =
            label + "_" + role + std::to_string(lex_dist(rng));
      }
      sent.entities.push_back({s, e, label});
    }
    std::sort(sent.entities.begin(), sent.entities.end());
    corpus.sentences.push_back(std::move(sent));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Statistics

struct ClassRow {
  std::string label;
  std::size_t count = 0;
  double ratio = 0.0;
};

struct CorpusStats {
  std::vector<ClassRow> classes;  // label-set order
  std::size_t num_sentences = 0;
  std::size_t num_entities = 0;
  std::map<int, std::size_t> sentence_length_hist;
  std::map<int, std::size_t> entity_length_hist;
};

inline CorpusStats class_stats(const Corpus& corpus) {
  CorpusStats st;
  st.num_sentences = corpus.sentences.size();
  for (const auto& name : corpus.labels.names()) st.classes.push_back({name, 0, 0.0});
  for (const auto& s : corpus.sentences) {
    ++st.sentence_length_hist[s.length()];
    for (const auto& e : s.entities) {
      ++st.classes[static_cast<std::size_t>(corpus.labels.index(e.label))].count;
      ++st.entity_length_hist[e.end - e.start + 1];
      ++st.num_entities;
    }
  }
  if (st.num_entities > 0) {
    for (auto& row : st.classes) {
      row.ratio = static_cast<double>(row.count) / static_cast<double>(st.num_entities);
    }
  }
  return st;
}

inline std::string stats_tsv(const CorpusStats& st) {
  std::ostringstream out;
  out.precision(17);
  out << "label\tcount\tratio\n";
  for (const auto& row : st.classes) out << row.label << '\t' << row.count << '\t' << row.ratio << '\n';
  return out.str();
}

inline json stats_json(const CorpusStats& st) {
  json classes = json::array();
  for (const auto& row : st.classes) {
    classes.push_back({{"label", row.label}, {"count", row.count}, {"ratio", row.ratio}});
  }
  auto hist = [](const std::map<int, std::size_t>& h) {
    json out = json::array();
    for (auto [len, n] : h) out.push_back({{"length", len}, {"count", n}});
    return out;
  };
  return {{"sentences", st.num_sentences},
          {"entities", st.num_entities},
          {"classes", classes},
          {"sentence_length_histogram", hist(st.sentence_length_hist)},
          {"entity_length_histogram", hist(st.entity_length_hist)}};
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kPad = 1;

  Vocabulary() : tokens_{"<unk>", "<pad>"} { rebuild_index(); }

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 2) throw ConfigError("vocabulary must hold UNK and PAD");
    rebuild_index();
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int index(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 2; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Tokens with frequency >= min_freq, ordered by (frequency desc, token asc).
inline Vocabulary build_vocab(const Corpus& corpus, int min_freq) {
  if (min_freq < 1) throw ConfigError("min_freq must be >= 1");
  std::map<std::string, std::size_t> freq;
  for (const auto& s : corpus.sentences) {
    for (const auto& t : s.tokens) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : freq) {
    if (n >= static_cast<std::size_t>(min_freq)) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{"<unk>", "<pad>"};
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocabulary(std::move(tokens));
}

}  // namespace eiou
