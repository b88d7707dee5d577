#include <gtest/gtest.h>

#include <sstream>

#include "eiou/corpus.hpp"

using namespace eiou;

namespace {

Corpus parse(const std::string& text) {
  std::istringstream in(text);
  return parse_jsonl(in, "mem");
}

// One single-token entity per sentence, `counts[k]` sentences for label k.
Corpus corpus_with_counts(const std::vector<std::string>& labels, const std::vector<int>& counts) {
  Corpus c;
  c.labels = LabelSet(labels);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    for (int n = 0; n < counts[k]; ++n) {
      c.sentences.push_back({labels[k] + std::to_string(n), {"x", "y"}, {{0, 0, labels[k]}}});
    }
  }
  return c;
}

bool has_nested_pair(const Sentence& s) {
  for (const auto& a : s.entities)
    for (const auto& b : s.entities)
      if (&a != &b && a.start <= b.start && b.end <= a.end && !(a.start == b.start && a.end == b.end)) return true;
  return false;
}

}  // namespace

TEST(LoadJsonl, ReadsSingleRecord) {
  auto c = parse(R"({"tokens":["a","b"],"entities":[{"start":0,"end":1,"label":"X"}]})" "\n");
  ASSERT_EQ(c.sentences.size(), 1u);
  EXPECT_EQ(c.sentences[0].entities.size(), 1u);
  EXPECT_EQ(c.labels.names(), std::vector<std::string>{"X"});
  EXPECT_EQ(c.sentences[0].entities[0], (SpanAnnotation{0, 1, "X"}));
}

TEST(LoadJsonl, EmptyInputHasNoSentences) {
  try {
    parse("");
    FAIL() << "expected an error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("no sentences"), std::string::npos);
  }
}

TEST(LoadJsonl, OutOfRangeSpanNamesLine) {
  const std::string text =
      R"({"tokens":["a","b"],"entities":[]})" "\n"
      R"({"tokens":["a","b"],"entities":[{"start":2,"end":2,"label":"X"}]})" "\n";
  try {
    parse(text);
    FAIL() << "expected an error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("mem:2:"), std::string::npos) << e.what();
  }
}

TEST(LoadJsonl, MalformedLineAndEmptyTokens) {
  EXPECT_THROW(parse("{\"tokens\": [\n"), IoError);
  EXPECT_THROW(parse(R"({"tokens":[],"entities":[]})"), IoError);
}

TEST(LoadJsonl, HeaderFixesLabelOrder) {
  auto c = parse(R"({"labels":["Z","A"]})" "\n" R"({"id":"s","tokens":["a"],"entities":[{"start":0,"end":0,"label":"A"}]})");
  EXPECT_EQ(c.labels.names(), (std::vector<std::string>{"Z", "A"}));
  EXPECT_EQ(c.labels.index("A"), 1);
  EXPECT_THROW(parse(R"({"labels":["Z"]})" "\n" R"({"tokens":["a"],"entities":[{"start":0,"end":0,"label":"A"}]})"),
               IoError);
}

TEST(LoadJsonl, WriteThenReadRoundTrips) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SynthConfig cfg;
    cfg.num_sentences = 50;
    cfg.seed = seed;
    cfg.nesting_prob = 0.5;
    const Corpus c = synthesize(cfg);
    EXPECT_EQ(parse(to_jsonl(c)), c);
  }
}

TEST(Validate, ReportsViolations) {
  Corpus c = corpus_with_counts({"X"}, {2});
  EXPECT_TRUE(validate(c).ok());

  c.sentences[0].entities.push_back({0, 0, "X"});
  EXPECT_EQ(validate(c).violations.size(), 1u);

  c = corpus_with_counts({"X"}, {1});
  c.sentences[0].entities = {{1, 0, "X"}};
  auto r = validate(c);
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].sentence_id, "X0");
}

TEST(Subsample, FullFractionIsIdentity) {
  auto c = corpus_with_counts({"A", "B"}, {5, 7});
  EXPECT_EQ(subsample(c, 1.0, 9), c);
}

TEST(Subsample, OnePercentOfFifteenThousand) {
  auto c = corpus_with_counts({"A"}, {15000});
  EXPECT_EQ(subsample(c, 0.01, 1).size(), 150u);
  EXPECT_EQ(subsample(c, 1e-6, 1).size(), 1u);
}

TEST(Subsample, DeterministicPerSeed) {
  SynthConfig cfg;
  cfg.num_sentences = 300;
  auto c = synthesize(cfg);
  EXPECT_EQ(to_jsonl(subsample(c, 0.3, 5)), to_jsonl(subsample(c, 0.3, 5)));
  auto other = subsample(c, 0.3, 6);
  EXPECT_EQ(other.size(), subsample(c, 0.3, 5).size());
  EXPECT_EQ(other.labels, c.labels);
}

TEST(Subsample, RejectsBadFraction) {
  auto c = corpus_with_counts({"A"}, {3});
  EXPECT_THROW(subsample(c, 0.0, 1), ConfigError);
  EXPECT_THROW(subsample(c, 1.5, 1), ConfigError);
}

TEST(Synthesize, ZeroEntityCap) {
  SynthConfig cfg;
  cfg.max_entities = 0;
  cfg.num_sentences = 100;
  for (const auto& s : synthesize(cfg).sentences) EXPECT_TRUE(s.entities.empty());
}

TEST(Synthesize, LongTailRankingFollowsClassId) {
  SynthConfig cfg;
  cfg.num_classes = 5;
  cfg.zipf_exponent = 1.5;
  cfg.num_sentences = 10000;
  cfg.seed = 7;
  const auto st = class_stats(synthesize(cfg));
  for (std::size_t c = 1; c < st.classes.size(); ++c) {
    EXPECT_GT(st.classes[c - 1].count, st.classes[c].count) << "class " << c;
  }
}

TEST(Synthesize, FullNestingProducesNestedPairs) {
  SynthConfig cfg;
  cfg.nesting_prob = 1.0;
  cfg.entities_per_sentence_mean = 3.0;
  cfg.num_sentences = 500;
  int multi = 0;
  for (const auto& s : synthesize(cfg).sentences) {
    if (s.entities.size() >= 2) {
      ++multi;
      EXPECT_TRUE(has_nested_pair(s)) << s.id;
    }
  }
  EXPECT_GT(multi, 50);
}

TEST(Synthesize, NoPartialOverlapsAndValid) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.nesting_prob = 0.6;
    cfg.num_sentences = 200;
    const auto c = synthesize(cfg);
    EXPECT_TRUE(validate(c).ok());
    for (const auto& s : c.sentences) {
      for (const auto& a : s.entities) {
        for (const auto& b : s.entities) {
          const bool disjoint = a.end < b.start || b.end < a.start;
          const bool nested = (a.start <= b.start && b.end <= a.end) || (b.start <= a.start && a.end <= b.end);
          EXPECT_TRUE(disjoint || nested);
        }
      }
    }
  }
}

TEST(Synthesize, DeterministicAndChecksConfig) {
  SynthConfig cfg;
  cfg.num_sentences = 100;
  EXPECT_EQ(synthesize(cfg), synthesize(cfg));
  cfg.sentence_len_max = cfg.sentence_len_min - 1;
  EXPECT_THROW(synthesize(cfg), ConfigError);
  cfg = SynthConfig{};
  cfg.entity_len_cap = 0;
  EXPECT_THROW(synthesize(cfg), ConfigError);
}

TEST(ClassStats, GeniaShapedRatios) {
  auto c = corpus_with_counts({"Protein", "DNA", "Cell type", "Cell line", "RNA"}, {607, 181, 127, 68, 17});
  auto st = class_stats(c);
  EXPECT_NEAR(st.classes[0].ratio, 0.607, 1e-12);
  EXPECT_NEAR(st.classes[4].ratio, 0.017, 1e-12);
  double sum = 0;
  for (auto& r : st.classes) sum += r.ratio;
  EXPECT_NEAR(sum, 1.0, 1e-9);
  EXPECT_EQ(st.num_entities, 1000u);
}

TEST(ClassStats, ZeroEntitiesAndSimpleRatio) {
  Corpus empty = corpus_with_counts({"A"}, {0});
  empty.sentences.push_back({"s", {"a"}, {}});
  auto st = class_stats(empty);
  EXPECT_EQ(st.classes[0].count, 0u);
  EXPECT_EQ(st.classes[0].ratio, 0.0);

  auto st2 = class_stats(corpus_with_counts({"A", "B"}, {3, 1}));
  EXPECT_DOUBLE_EQ(st2.classes[0].ratio, 0.75);
  EXPECT_DOUBLE_EQ(st2.classes[1].ratio, 0.25);
  EXPECT_EQ(st2.entity_length_hist.at(1), 4u);
  EXPECT_EQ(stats_tsv(st2), "label\tcount\tratio\nA\t3\t0.75\nB\t1\t0.25\n");
}

TEST(BuildVocab, FrequencyThresholdAndOrdering) {
  Corpus c;
  c.labels = LabelSet({"X"});
  c.sentences.push_back({"0", {"a", "a", "b", "a", "c", "c"}, {}});
  auto v = build_vocab(c, 2);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<unk>", "<pad>", "a", "c"}));
  auto all = build_vocab(c, 1);
  EXPECT_EQ(all.tokens(), (std::vector<std::string>{"<unk>", "<pad>", "a", "c", "b"}));
  EXPECT_EQ(all.index("zzz"), Vocabulary::kUnk);

  Corpus tie;
  tie.labels = LabelSet({"X"});
  tie.sentences.push_back({"0", {"q", "p", "r"}, {}});
  EXPECT_EQ(build_vocab(tie, 1).tokens(), (std::vector<std::string>{"<unk>", "<pad>", "p", "q", "r"}));
  EXPECT_THROW(build_vocab(tie, 0), ConfigError);
}
