#pragma once

// Synthetic languages and task data. Each language owns a disjoint slice of
// the vocabulary; shared specials (pad/cls/sep/mask/unk) live below every
// slice. Task generators plant an exact rule connecting tokens to labels, and
// each generator ships its inverse — a rule-based decoder used as a test
// oracle — so Bayes-optimal accuracy is 100% by construction.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "skillnet/model.hpp"
#include "skillnet/skills.hpp"

namespace skillnet {

inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kSepId = 2;
inline constexpr int kMaskId = 3;
inline constexpr int kUnkId = 4;
inline constexpr int kNumSpecials = 5;

// One synthetic language: a contiguous content-token range plus grammar
// parameters. The range is partitioned into functional sub-ranges used by the
// task generators (markers, entity triggers, payloads, fillers).
struct LanguageSpec {
  std::string tag;        // "en", "zh", ...
  int begin = 0, end = 0; // content ids in [begin, end)
  double zipf_s = 1.1;    // unigram profile: p(rank r) ∝ 1/(r+2)^s
  int min_sentence_len = 4;
  int max_sentence_len = 10;
  uint64_t seed = 0;

  static constexpr int kMarkers = 8;   // class / relation / question markers
  static constexpr int kTriggers = 4;  // entity-type triggers
  static constexpr int kPayload = 16;  // entity / answer payload tokens

  int size() const { return end - begin; }
  int marker(int k) const { return begin + k; }
  int trigger(int e) const { return begin + kMarkers + e; }
  int payload_begin() const { return begin + kMarkers + kTriggers; }
  int payload_end() const { return payload_begin() + kPayload; }
  int filler_begin() const { return payload_end(); }
  int filler_end() const { return end; }

  bool contains(int id) const { return id >= begin && id < end; }
  bool is_marker(int id) const { return id >= begin && id < begin + kMarkers; }
  bool is_trigger(int id) const { return id >= begin + kMarkers && id < payload_begin(); }
  bool is_payload(int id) const { return id >= payload_begin() && id < payload_end(); }

  void validate() const {
    if (begin < kNumSpecials) throw ConfigError("language range overlaps special tokens");
    if (size() < kMarkers + kTriggers + kPayload + 8)
      throw ConfigError("language '" + tag + "' range too small (" + std::to_string(size()) + ")");
    if (min_sentence_len < 2 || max_sentence_len < min_sentence_len)
      throw ConfigError("bad sentence length bounds for '" + tag + "'");
  }

  // Unigram distribution over the content range (rank = id - begin).
  std::vector<double> unigram_probs() const {
    std::vector<double> p(static_cast<size_t>(size()));
    double z = 0.0;
    for (int r = 0; r < size(); ++r) {
      p[static_cast<size_t>(r)] = 1.0 / std::pow(static_cast<double>(r + 2), zipf_s);
      z += p[static_cast<size_t>(r)];
    }
    for (double& v : p) v /= z;
    return p;
  }
};

inline std::vector<LanguageSpec> default_languages(int tokens_per_language = 64) {
  std::vector<LanguageSpec> out;
  const std::vector<std::string> tags = {"en", "zh", "de", "es"};
  for (size_t i = 0; i < tags.size(); ++i) {
    LanguageSpec l;
    l.tag = tags[i];
    l.begin = kNumSpecials + static_cast<int>(i) * tokens_per_language;
    l.end = l.begin + tokens_per_language;
    l.seed = 1000 + static_cast<uint64_t>(i);
    l.validate();
    out.push_back(l);
  }
  return out;
}

inline int default_vocab_size(const std::vector<LanguageSpec>& langs) {
  int v = kNumSpecials;
  for (const auto& l : langs) v = std::max(v, l.end);
  return v;
}

inline const LanguageSpec& language_by_tag(const std::vector<LanguageSpec>& langs,
                                           const std::string& tag) {
  for (const auto& l : langs)
    if (l.tag == tag) return l;
  throw ConfigError("no LanguageSpec for language '" + tag + "'");
}

// ---------------------------------------------------------------------------
// Token names: bijective text form "<tag>:<rank>" for content, fixed names
// for specials. Unknown ids fail loudly.
// ---------------------------------------------------------------------------

inline std::string token_name(int id, const std::vector<LanguageSpec>& langs) {
  switch (id) {
    case kPadId: return "[pad]";
    case kClsId: return "[cls]";
    case kSepId: return "[sep]";
    case kMaskId: return "[mask]";
    case kUnkId: return "[unk]";
    default: break;
  }
  for (const auto& l : langs)
    if (l.contains(id)) return l.tag + ":" + std::to_string(id - l.begin);
  throw IoError("token id " + std::to_string(id) + " outside every language range");
}

inline int token_id(const std::string& name, const std::vector<LanguageSpec>& langs) {
  if (name == "[pad]") return kPadId;
  if (name == "[cls]") return kClsId;
  if (name == "[sep]") return kSepId;
  if (name == "[mask]") return kMaskId;
  if (name == "[unk]") return kUnkId;
  const auto colon = name.find(':');
  if (colon == std::string::npos) throw IoError("malformed token name '" + name + "'");
  const LanguageSpec& l = language_by_tag(langs, name.substr(0, colon));
  const int rank = std::stoi(name.substr(colon + 1));
  if (rank < 0 || rank >= l.size()) throw IoError("token rank out of range in '" + name + "'");
  return l.begin + rank;
}

inline std::string detokenize(const std::vector<int>& ids, const std::vector<LanguageSpec>& langs) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token_name(ids[i], langs);
  }
  return out;
}

inline std::vector<int> tokenize(const std::string& text, const std::vector<LanguageSpec>& langs) {
  std::vector<int> out;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t space = text.find(' ', pos);
    if (space == std::string::npos) space = text.size();
    if (space > pos) out.push_back(token_id(text.substr(pos, space - pos), langs));
    pos = space + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus generation (pre-training data)
// ---------------------------------------------------------------------------

using Document = std::vector<std::vector<int>>;  // sentences of token ids

namespace detail_synth {

// Inverse-CDF sampler over an explicit categorical distribution.
class Categorical {
 public:
  explicit Categorical(const std::vector<double>& probs) : cdf_(probs) {
    double acc = 0.0;
    for (double& v : cdf_) {
      acc += v;
      v = acc;
    }
    if (!cdf_.empty()) cdf_.back() = 1.0;
  }
  int sample(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<int>(std::min<size_t>(static_cast<size_t>(it - cdf_.begin()),
                                             cdf_.size() - 1));
  }

 private:
  std::vector<double> cdf_;
};

inline std::vector<int> grammar_sentence(const LanguageSpec& lang, const Categorical& cat,
                                         Rng& rng) {
  const int len = rng.uniform_int(lang.min_sentence_len, lang.max_sentence_len);
  std::vector<int> s(static_cast<size_t>(len));
  for (int& t : s) t = lang.begin + cat.sample(rng);
  return s;
}

}  // namespace detail_synth

inline std::vector<Document> generate_corpus(const LanguageSpec& lang, int num_docs,
                                             uint64_t seed) {
  if (num_docs < 1) throw ContractError("generate_corpus: num_docs must be >= 1");
  lang.validate();
  Rng rng(mix_seeds(lang.seed, seed));
  const detail_synth::Categorical cat(lang.unigram_probs());
  std::vector<Document> docs(static_cast<size_t>(num_docs));
  for (auto& doc : docs) {
    const int sentences = rng.uniform_int(3, 8);
    doc.reserve(static_cast<size_t>(sentences));
    for (int s = 0; s < sentences; ++s) doc.push_back(detail_synth::grammar_sentence(lang, cat, rng));
  }
  return docs;
}

// ---------------------------------------------------------------------------
// Task examples
// ---------------------------------------------------------------------------

struct Example {
  std::vector<int> tokens_a;
  std::vector<int> tokens_b;           // empty for single-segment tasks
  int label = -1;                      // classification-style gold label
  std::vector<int> tags;               // BIO ids aligned with tokens_a
  int span_start = -1, span_end = -1;  // answer span, indices into tokens_b

  uint64_t fingerprint() const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](int v) {
      h ^= static_cast<uint64_t>(v) + 0x9e3779b97f4a7c15ull;
      h *= 1099511628211ull;
    };
    for (int t : tokens_a) mix(t);
    mix(-7);
    for (int t : tokens_b) mix(t);
    return h;
  }
};

struct TaskDataset {
  std::string task_id;
  TaskType type = TaskType::SequenceClassification;
  std::string language;
  int num_classes = 2;
  std::vector<Example> train, dev;
};

namespace detail_synth {

inline int filler_token(const LanguageSpec& lang, Rng& rng) {
  return rng.uniform_int(lang.filler_begin(), lang.filler_end() - 1);
}

inline std::vector<int> filler_sentence(const LanguageSpec& lang, Rng& rng, int len) {
  std::vector<int> s(static_cast<size_t>(len));
  for (int& t : s) t = filler_token(lang, rng);
  return s;
}

// Balanced label sequence: floor(n/c) or ceil(n/c) occurrences per class,
// shuffled. Keeps class balance within one example of uniform.
inline std::vector<int> balanced_labels(int n, int c, Rng& rng) {
  std::vector<int> labels(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = i % c;
  rng.shuffle(labels);
  return labels;
}

}  // namespace detail_synth

// Pair classification: each segment carries exactly one marker token; the
// label is the circular distance between the two marker indices.
inline Example make_pair_example(const LanguageSpec& lang, int num_classes, int label, Rng& rng) {
  Example ex;
  const int i = rng.uniform_int(0, num_classes - 1);
  const int j = (i + label) % num_classes;
  const int len_a = rng.uniform_int(lang.min_sentence_len, lang.max_sentence_len);
  const int len_b = rng.uniform_int(lang.min_sentence_len, lang.max_sentence_len);
  ex.tokens_a = detail_synth::filler_sentence(lang, rng, len_a);
  ex.tokens_b = detail_synth::filler_sentence(lang, rng, len_b);
  ex.tokens_a[static_cast<size_t>(rng.uniform_int(0, len_a - 1))] = lang.marker(i);
  ex.tokens_b[static_cast<size_t>(rng.uniform_int(0, len_b - 1))] = lang.marker(j);
  ex.label = label;
  return ex;
}

inline int oracle_pair_label(const LanguageSpec& lang, const Example& ex, int num_classes) {
  auto find_marker = [&](const std::vector<int>& toks) {
    for (int t : toks)
      if (lang.is_marker(t)) return t - lang.begin;
    return -1;
  };
  const int i = find_marker(ex.tokens_a), j = find_marker(ex.tokens_b);
  if (i < 0 || j < 0) return -1;
  return ((j - i) % num_classes + num_classes) % num_classes;
}

// Single-segment classification: the label is the index of the one class
// marker present in the sentence.
inline Example make_classification_example(const LanguageSpec& lang, int label, Rng& rng) {
  Example ex;
  const int len = rng.uniform_int(lang.min_sentence_len, lang.max_sentence_len);
  ex.tokens_a = detail_synth::filler_sentence(lang, rng, len);
  ex.tokens_a[static_cast<size_t>(rng.uniform_int(0, len - 1))] = lang.marker(label);
  ex.label = label;
  return ex;
}

inline int oracle_classification_label(const LanguageSpec& lang, const Example& ex) {
  for (int t : ex.tokens_a)
    if (lang.is_marker(t)) return t - lang.begin;
  return -1;
}

// BIO tag ids for `entity_types` types: 0 = O, then per type e: B = 1+2e,
// I = 2+2e.
inline int bio_b(int e) { return 1 + 2 * e; }
inline int bio_i(int e) { return 2 + 2 * e; }
inline int bio_num_tags(int entity_types) { return 1 + 2 * entity_types; }

// Tagging: a trigger token announces an entity; the following run of
// payload-range tokens is the entity of the trigger's type. Everything else
// (fillers and the trigger itself) is O.
inline Example make_tagging_example(const LanguageSpec& lang, int entity_types, Rng& rng) {
  Example ex;
  const int filler_chunks = rng.uniform_int(2, 4);
  const int entities = rng.uniform_int(1, 2);
  std::vector<int> entity_at(static_cast<size_t>(entities));
  for (int& p : entity_at) p = rng.uniform_int(0, filler_chunks - 1);
  std::sort(entity_at.begin(), entity_at.end());
  for (int chunk = 0, e = 0; chunk < filler_chunks; ++chunk) {
    const int flen = rng.uniform_int(1, 3);
    for (int k = 0; k < flen; ++k) {
      ex.tokens_a.push_back(detail_synth::filler_token(lang, rng));
      ex.tags.push_back(0);
    }
    while (e < entities && entity_at[static_cast<size_t>(e)] == chunk) {
      const int type = rng.uniform_int(0, entity_types - 1);
      ex.tokens_a.push_back(lang.trigger(type));
      ex.tags.push_back(0);
      const int plen = rng.uniform_int(1, 3);
      for (int k = 0; k < plen; ++k) {
        ex.tokens_a.push_back(lang.payload_begin() + rng.uniform_int(0, LanguageSpec::kPayload - 1));
        ex.tags.push_back(k == 0 ? bio_b(type) : bio_i(type));
      }
      ++e;
    }
  }
  return ex;
}

inline std::vector<int> oracle_tagging_tags(const LanguageSpec& lang, const Example& ex) {
  std::vector<int> tags(ex.tokens_a.size(), 0);
  for (size_t i = 0; i < ex.tokens_a.size(); ++i) {
    if (!lang.is_trigger(ex.tokens_a[i])) continue;
    const int type = ex.tokens_a[i] - lang.trigger(0);
    size_t j = i + 1;
    bool first = true;
    while (j < ex.tokens_a.size() && lang.is_payload(ex.tokens_a[j])) {
      tags[j] = first ? bio_b(type) : bio_i(type);
      first = false;
      ++j;
    }
  }
  return tags;
}

// Span extraction: the context is a run of (marker, payload-span) groups with
// distinct markers; the question names one marker; the answer is that
// marker's payload span.
inline Example make_span_example(const LanguageSpec& lang, Rng& rng) {
  Example ex;
  const int groups = rng.uniform_int(2, 3);
  std::vector<int> marker_ids(static_cast<size_t>(LanguageSpec::kMarkers));
  for (int k = 0; k < LanguageSpec::kMarkers; ++k) marker_ids[static_cast<size_t>(k)] = k;
  rng.shuffle(marker_ids);
  const int target_group = rng.uniform_int(0, groups - 1);
  for (int g = 0; g < groups; ++g) {
    ex.tokens_b.push_back(lang.marker(marker_ids[static_cast<size_t>(g)]));
    const int plen = rng.uniform_int(1, 3);
    if (g == target_group) {
      ex.span_start = static_cast<int>(ex.tokens_b.size());
      ex.span_end = ex.span_start + plen - 1;
    }
    for (int k = 0; k < plen; ++k)
      ex.tokens_b.push_back(lang.payload_begin() + rng.uniform_int(0, LanguageSpec::kPayload - 1));
  }
  const int qlen = rng.uniform_int(3, 5);
  ex.tokens_a = detail_synth::filler_sentence(lang, rng, qlen);
  ex.tokens_a[static_cast<size_t>(rng.uniform_int(0, qlen - 1))] =
      lang.marker(marker_ids[static_cast<size_t>(target_group)]);
  return ex;
}

inline std::pair<int, int> oracle_span(const LanguageSpec& lang, const Example& ex) {
  int question_marker = -1;
  for (int t : ex.tokens_a)
    if (lang.is_marker(t)) question_marker = t;
  if (question_marker < 0) return {-1, -1};
  for (size_t i = 0; i < ex.tokens_b.size(); ++i) {
    if (ex.tokens_b[i] != question_marker) continue;
    size_t j = i + 1;
    while (j < ex.tokens_b.size() && lang.is_payload(ex.tokens_b[static_cast<size_t>(j)])) ++j;
    if (j == i + 1) return {-1, -1};
    return {static_cast<int>(i + 1), static_cast<int>(j - 1)};
  }
  return {-1, -1};
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

namespace detail_synth {

inline Example draw_example(TaskType family, const LanguageSpec& lang, int num_classes, int label,
                            Rng& rng) {
  switch (family) {
    case TaskType::SequencePairClassification:
      return make_pair_example(lang, num_classes, label, rng);
    case TaskType::SequenceClassification:
      return make_classification_example(lang, label, rng);
    case TaskType::TokenClassification:
      return make_tagging_example(lang, (num_classes - 1) / 2, rng);
    case TaskType::SpanExtraction:
      return make_span_example(lang, rng);
    default:
      throw ContractError("unsupported synthetic task family '" + task_type_name(family) + "'");
  }
}

inline std::vector<Example> generate_split(TaskType family, const LanguageSpec& lang,
                                           int num_classes, int n, uint64_t seed,
                                           std::unordered_set<uint64_t>& seen) {
  Rng rng(seed);
  const bool labeled = family == TaskType::SequencePairClassification ||
                       family == TaskType::SequenceClassification;
  std::vector<int> labels = labeled ? balanced_labels(n, num_classes, rng) : std::vector<int>();
  std::vector<Example> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int label = labeled ? labels[static_cast<size_t>(i)] : -1;
    // Redraw on fingerprint collision so splits stay exactly disjoint.
    for (int attempt = 0;; ++attempt) {
      Example ex = draw_example(family, lang, num_classes, label, rng);
      if (seen.insert(ex.fingerprint()).second) {
        out.push_back(std::move(ex));
        break;
      }
      if (attempt > 200)
        throw ContractError("could not draw a fresh example after 200 attempts; "
                            "dataset too large for the example space");
    }
  }
  return out;
}

}  // namespace detail_synth

struct SplitSizes {
  int train = 0;
  int dev = 0;
};

inline TaskDataset generate_task_dataset(TaskType family, const LanguageSpec& lang,
                                         const std::string& task_id, int num_classes,
                                         SplitSizes sizes, uint64_t seed) {
  lang.validate();
  if (sizes.train < 1 || sizes.dev < 1) throw ContractError("split sizes must be >= 1");
  if (family == TaskType::SequencePairClassification ||
      family == TaskType::SequenceClassification) {
    if (num_classes < 2 || num_classes > LanguageSpec::kMarkers)
      throw ConfigError("num_classes " + std::to_string(num_classes) + " outside [2, " +
                        std::to_string(LanguageSpec::kMarkers) + "]");
  }
  if (family == TaskType::TokenClassification) {
    const int types = (num_classes - 1) / 2;
    if (num_classes != bio_num_tags(types) || types < 1 || types > LanguageSpec::kTriggers)
      throw ConfigError("tagging num_classes must be 1+2*types with types in [1, " +
                        std::to_string(LanguageSpec::kTriggers) + "]");
  }
  TaskDataset ds;
  ds.task_id = task_id;
  ds.type = family;
  ds.language = lang.tag;
  ds.num_classes = num_classes;
  std::unordered_set<uint64_t> seen;
  ds.dev = detail_synth::generate_split(family, lang, num_classes, sizes.dev,
                                        mix_seeds(seed, 2), seen);
  ds.train = detail_synth::generate_split(family, lang, num_classes, sizes.train,
                                          mix_seeds(seed, 1), seen);
  return ds;
}

// ---------------------------------------------------------------------------
// Packing examples into model batches
// ---------------------------------------------------------------------------

// [cls] a [sep] for single-segment, [cls] a [sep] b [sep] for pairs; pads to
// `t`. Throws if truncation would cut labeled structure (gold span or tags).
inline Batch make_batch(const std::vector<Example>& examples, const TaskSpec& spec, int64_t t) {
  if (examples.empty()) throw ContractError("make_batch: empty example list");
  Batch b;
  b.task_id = spec.task_id;
  b.batch_size = static_cast<int64_t>(examples.size());
  b.seq_len = t;
  const size_t n = static_cast<size_t>(b.batch_size * t);
  b.token_ids.assign(n, kPadId);
  b.attn_mask.assign(n, 0.0);
  b.segment_ids.assign(n, 0);
  const bool tagging = spec.task_type == TaskType::TokenClassification;
  if (tagging) b.tag_labels.assign(n, -1);

  for (size_t e = 0; e < examples.size(); ++e) {
    const Example& ex = examples[e];
    const size_t base = e * static_cast<size_t>(t);
    size_t pos = 0;
    auto put = [&](int tok, int seg) {
      if (pos >= static_cast<size_t>(t))
        throw ContractError("example " + std::to_string(e) + " does not fit in seq_len " +
                            std::to_string(t));
      b.token_ids[base + pos] = tok;
      b.attn_mask[base + pos] = 1.0;
      b.segment_ids[base + pos] = seg;
      ++pos;
    };
    put(kClsId, 0);
    const size_t a_offset = pos;
    for (int tok : ex.tokens_a) put(tok, 0);
    put(kSepId, 0);
    const size_t b_offset = pos;
    if (!ex.tokens_b.empty()) {
      for (int tok : ex.tokens_b) put(tok, 1);
      put(kSepId, 1);
    }

    switch (spec.task_type) {
      case TaskType::SequenceClassification:
      case TaskType::SequencePairClassification:
      case TaskType::Nsp:
        if (ex.label < 0 || ex.label >= spec.num_classes)
          throw LabelError("example " + std::to_string(e) + " label " + std::to_string(ex.label) +
                           " out of range");
        b.class_labels.push_back(ex.label);
        break;
      case TaskType::TokenClassification: {
        if (ex.tags.size() != ex.tokens_a.size())
          throw LabelError("example " + std::to_string(e) + ": tags misaligned with tokens");
        for (size_t i = 0; i < ex.tags.size(); ++i)
          b.tag_labels[base + a_offset + i] = ex.tags[i];
        break;
      }
      case TaskType::SpanExtraction: {
        if (ex.span_start < 0 || ex.span_end < ex.span_start ||
            ex.span_end >= static_cast<int>(ex.tokens_b.size()))
          throw LabelError("example " + std::to_string(e) + ": bad span");
        b.span_start.push_back(static_cast<int>(b_offset) + ex.span_start);
        b.span_end.push_back(static_cast<int>(b_offset) + ex.span_end);
        break;
      }
      case TaskType::Mlm:
        throw ContractError("mlm batches are built by make_mlm_batch");
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Pre-training batches
// ---------------------------------------------------------------------------

// Masked-token prediction over corpus sentences: 15% of content positions are
// selected; of those 80% become [mask], 10% a random content token, 10% stay.
inline Batch make_mlm_batch(const std::vector<Document>& corpus, const LanguageSpec& lang,
                            int batch_size, int64_t t, Rng& rng,
                            const std::string& task_id = "mlm") {
  if (corpus.empty()) throw ContractError("make_mlm_batch: empty corpus");
  Batch b;
  b.task_id = task_id;
  b.batch_size = batch_size;
  b.seq_len = t;
  const size_t n = static_cast<size_t>(batch_size) * static_cast<size_t>(t);
  b.token_ids.assign(n, kPadId);
  b.attn_mask.assign(n, 0.0);
  b.segment_ids.assign(n, 0);
  for (int e = 0; e < batch_size; ++e) {
    const Document& doc = corpus[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(corpus.size()) - 1))];
    std::vector<int> stream;
    size_t s = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(doc.size()) - 1));
    while (stream.size() + 2 < static_cast<size_t>(t) && s < doc.size()) {
      for (int tok : doc[s]) {
        if (stream.size() + 2 >= static_cast<size_t>(t)) break;
        stream.push_back(tok);
      }
      ++s;
    }
    const size_t base = static_cast<size_t>(e) * static_cast<size_t>(t);
    size_t pos = 0;
    auto put = [&](int tok) {
      b.token_ids[base + pos] = tok;
      b.attn_mask[base + pos] = 1.0;
      ++pos;
    };
    put(kClsId);
    for (int tok : stream) put(tok);
    put(kSepId);
    for (size_t i = 1; i + 1 < pos; ++i) {  // content positions only
      if (!rng.bernoulli(0.15)) continue;
      const int original = b.token_ids[base + i];
      b.mlm_positions.push_back(static_cast<int>(base + i));
      b.mlm_targets.push_back(original);
      const double u = rng.uniform();
      if (u < 0.8)
        b.token_ids[base + i] = kMaskId;
      else if (u < 0.9)
        b.token_ids[base + i] = rng.uniform_int(lang.begin, lang.end - 1);
      // else keep the original token
    }
  }
  if (b.mlm_positions.empty()) {
    // Degenerate draw (possible on tiny batches): force one masked position.
    b.mlm_positions.push_back(1);
    b.mlm_targets.push_back(b.token_ids[1]);
    b.token_ids[1] = kMaskId;
  }
  return b;
}

// Next-sentence prediction pairs: label 0 = consecutive sentences of one
// document, label 1 = second sentence replaced by one from another document.
inline Batch make_nsp_batch(const std::vector<Document>& corpus, int batch_size, int64_t t,
                            Rng& rng, const std::string& task_id = "nsp") {
  if (corpus.size() < 2) throw ContractError("make_nsp_batch: need at least 2 documents");
  std::vector<Example> examples;
  examples.reserve(static_cast<size_t>(batch_size));
  for (int e = 0; e < batch_size; ++e) {
    const int di = rng.uniform_int(0, static_cast<int>(corpus.size()) - 1);
    const Document& doc = corpus[static_cast<size_t>(di)];
    const int si = rng.uniform_int(0, static_cast<int>(doc.size()) - 2);
    Example ex;
    ex.tokens_a = doc[static_cast<size_t>(si)];
    if (rng.bernoulli(0.5)) {
      ex.tokens_b = doc[static_cast<size_t>(si + 1)];
      ex.label = 0;
    } else {
      int dj = rng.uniform_int(0, static_cast<int>(corpus.size()) - 2);
      if (dj >= di) ++dj;  // a genuinely different document
      const Document& other = corpus[static_cast<size_t>(dj)];
      ex.tokens_b = other[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(other.size()) - 1))];
      ex.label = 1;
    }
    auto clip = [&](std::vector<int>& v) {
      const size_t cap = (static_cast<size_t>(t) - 3) / 2;
      if (v.size() > cap) v.resize(cap);
    };
    clip(ex.tokens_a);
    clip(ex.tokens_b);
    examples.push_back(std::move(ex));
  }
  TaskSpec nsp_spec;
  nsp_spec.task_id = task_id;
  nsp_spec.task_type = TaskType::Nsp;
  nsp_spec.num_classes = 2;
  return make_batch(examples, nsp_spec, t);
}

// ---------------------------------------------------------------------------
// Line-delimited serialization (one JSON record per example)
// ---------------------------------------------------------------------------

inline void save_dataset(const std::filesystem::path& path, const TaskDataset& ds) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  nlohmann::json header = {{"task_id", ds.task_id},
                           {"type", task_type_name(ds.type)},
                           {"language", ds.language},
                           {"num_classes", ds.num_classes}};
  os << header.dump() << "\n";
  auto emit = [&os](const Example& ex, const char* split) {
    nlohmann::json j = {{"split", split}, {"tokens_a", ex.tokens_a}};
    if (!ex.tokens_b.empty()) j["tokens_b"] = ex.tokens_b;
    if (ex.label >= 0) j["label"] = ex.label;
    if (!ex.tags.empty()) j["tags"] = ex.tags;
    if (ex.span_start >= 0) j["span"] = {ex.span_start, ex.span_end};
    os << j.dump() << "\n";
  };
  for (const Example& ex : ds.train) emit(ex, "train");
  for (const Example& ex : ds.dev) emit(ex, "dev");
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline TaskDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty dataset file '" + path.string() + "'");
  nlohmann::json header = nlohmann::json::parse(line);
  TaskDataset ds;
  ds.task_id = header.at("task_id").get<std::string>();
  ds.type = task_type_from_name(header.at("type").get<std::string>());
  ds.language = header.at("language").get<std::string>();
  ds.num_classes = header.at("num_classes").get<int>();
  size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, true);
    Example ex;
    ex.tokens_a = j.at("tokens_a").get<std::vector<int>>();
    if (j.contains("tokens_b")) ex.tokens_b = j.at("tokens_b").get<std::vector<int>>();
    if (j.contains("label")) ex.label = j.at("label").get<int>();
    if (j.contains("tags")) ex.tags = j.at("tags").get<std::vector<int>>();
    if (j.contains("span")) {
      ex.span_start = j.at("span").at(0).get<int>();
      ex.span_end = j.at("span").at(1).get<int>();
    }
    const std::string split = j.at("split").get<std::string>();
    if (split == "train")
      ds.train.push_back(std::move(ex));
    else if (split == "dev")
      ds.dev.push_back(std::move(ex));
    else
      throw IoError("unknown split '" + split + "' at line " + std::to_string(lineno));
  }
  return ds;
}

}  // namespace skillnet
