#pragma once

// Sequence ingestion: vocabulary construction, encoding, bag-of-words,
// time-series discretization/windowing, on-disk formats and a synthetic
// Markov-mixture generator used as a test fixture.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "seqnd/common.hpp"

namespace seqnd {

enum class Label { Normal, Novel, Unlabeled };

inline std::string to_string(Label l) {
  switch (l) {
    case Label::Normal: return "normal";
    case Label::Novel: return "novel";
    default: return "unlabeled";
  }
}

inline Label parse_label(std::string_view s) {
  if (s == "normal") return Label::Normal;
  if (s == "novel") return Label::Novel;
  if (s == "unlabeled") return Label::Unlabeled;
  throw InvalidArgument("unknown label '" + std::string(s) + "'");
}

/// Token-string <-> id mapping. Ids 0,1,2 are reserved for UNK, BOS and EOS;
/// retained tokens follow contiguously in lexicographic order.
class Vocabulary {
public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kReserved = 3;

  Vocabulary() : Vocabulary(std::vector<std::string>{}, 1) {}

  Vocabulary(const std::vector<std::string>& words, std::size_t min_frequency)
      : min_frequency_(min_frequency) {
    id_to_word_ = {"<unk>", "<s>", "</s>"};
    for (const auto& w : words) {
      if (w == "<unk>" || w == "<s>" || w == "</s>")
        throw InvalidArgument("token '" + w + "' collides with a reserved token");
      if (word_to_id_.count(w)) throw InvalidArgument("duplicate vocabulary entry '" + w + "'");
      word_to_id_.emplace(w, static_cast<TokenId>(id_to_word_.size()));
      id_to_word_.push_back(w);
    }
    word_to_id_.emplace("<unk>", kUnk);
    word_to_id_.emplace("<s>", kBos);
    word_to_id_.emplace("</s>", kEos);
  }

  std::size_t size() const noexcept { return id_to_word_.size(); }
  std::size_t min_frequency() const noexcept { return min_frequency_; }
  TokenId unk_id() const noexcept { return kUnk; }
  TokenId bos_id() const noexcept { return kBos; }
  TokenId eos_id() const noexcept { return kEos; }

  TokenId id(const std::string& word) const {
    auto it = word_to_id_.find(word);
    return it == word_to_id_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& word) const { return word_to_id_.count(word) > 0; }

  const std::string& word(TokenId id) const {
    if (id >= id_to_word_.size()) throw InvalidArgument("token id " + std::to_string(id) + " out of range");
    return id_to_word_[id];
  }

  /// Non-reserved words in id order.
  std::vector<std::string> words() const {
    return {id_to_word_.begin() + kReserved, id_to_word_.end()};
  }

private:
  std::unordered_map<std::string, TokenId> word_to_id_;
  std::vector<std::string> id_to_word_;
  std::size_t min_frequency_ = 1;
};

struct LabeledSequence {
  std::string id;
  std::vector<TokenId> tokens;
  Label label = Label::Unlabeled;
  int component = -1;  // generating component, synthetic data only
};

/// A labeled sequence of raw token strings, prior to encoding.
struct RawSequence {
  std::string id;
  std::vector<std::string> tokens;
  Label label = Label::Unlabeled;
};

struct Corpus {
  Vocabulary vocabulary;
  std::vector<LabeledSequence> sequences;

  std::size_t size() const noexcept { return sequences.size(); }

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.tokens.size();
    return n;
  }

  /// Throws if ids are duplicated, a sequence is empty or holds an id
  /// outside the vocabulary.
  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& s : sequences) {
      if (!seen.insert(s.id).second) throw InvalidArgument("duplicate sequence id '" + s.id + "'");
      if (s.tokens.empty()) throw InvalidArgument("sequence '" + s.id + "' is empty");
      for (TokenId t : s.tokens)
        if (t >= vocabulary.size())
          throw InvalidArgument("sequence '" + s.id + "' holds out-of-vocabulary id " + std::to_string(t));
    }
  }

  Corpus subset(const std::vector<std::size_t>& idx) const {
    Corpus out{vocabulary, {}};
    out.sequences.reserve(idx.size());
    for (auto i : idx) out.sequences.push_back(sequences.at(i));
    return out;
  }

  Corpus with_label(Label l) const {
    Corpus out{vocabulary, {}};
    for (const auto& s : sequences)
      if (s.label == l) out.sequences.push_back(s);
    return out;
  }
};

inline Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& raw_docs,
                                   std::size_t min_frequency) {
  if (raw_docs.empty()) throw InvalidArgument("empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : raw_docs)
    for (const auto& tok : doc) ++counts[tok];
  std::vector<std::string> kept;
  for (const auto& [tok, c] : counts)
    if (c >= min_frequency && tok != "<unk>" && tok != "<s>" && tok != "</s>") kept.push_back(tok);
  return Vocabulary(kept, min_frequency);
}

inline std::vector<TokenId> encode(const std::vector<std::string>& raw_tokens, const Vocabulary& vocab) {
  if (raw_tokens.empty()) throw InvalidArgument("cannot encode an empty token list");
  std::vector<TokenId> out;
  out.reserve(raw_tokens.size());
  for (const auto& t : raw_tokens) out.push_back(vocab.id(t));
  return out;
}

inline std::vector<std::string> decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(vocab.word(id));
  return out;
}

inline std::vector<double> bag_of_words(const std::vector<TokenId>& tokens, std::size_t vocab_size) {
  std::vector<double> bag(vocab_size, 0.0);
  for (TokenId t : tokens) bag.at(t) += 1.0;
  return bag;
}

/// Lowercase, then split on runs of non-alphanumeric characters.
inline std::vector<std::string> tokenize_text(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

// ---------------------------------------------------------------------------
// Time series

struct BinConfig {
  double low = 0.0;
  double high = 100.0;
  double bin_width = 0.1;
  std::size_t window_length = 40;

  void validate() const {
    if (!(low < high)) throw InvalidArgument("bin config requires low < high");
    if (!(bin_width > 0.0)) throw InvalidArgument("bin width must be positive");
  }

  std::size_t num_bins() const {
    validate();
    // Snap ratios within rounding of an integer ((100-0)/0.1 = 1000.0000000000001).
    double r = (high - low) / bin_width;
    double nearest = std::round(r);
    if (std::abs(r - nearest) < 1e-9 * std::max(1.0, nearest)) r = nearest;
    return static_cast<std::size_t>(std::ceil(r));
  }

  std::size_t bin_index(double v) const {
    if (v >= high) return num_bins() - 1;
    double r = (v - low) / bin_width;
    // 0.3/0.1 evaluates to 2.9999999999999996; a value on a bin edge must
    // not drop into the previous bin.
    double nearest = std::round(r);
    if (std::abs(r - nearest) < 1e-9 * std::max(1.0, nearest)) r = nearest;
    return std::min(static_cast<std::size_t>(std::floor(r)), num_bins() - 1);
  }
};

inline std::vector<std::string> discretize_time_series(const std::vector<double>& values, const BinConfig& cfg) {
  cfg.validate();
  std::vector<std::string> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = values[i];
    if (!(v >= cfg.low && v <= cfg.high)) {
      std::ostringstream msg;
      msg << "value " << v << " at index " << i << " outside [" << cfg.low << ", " << cfg.high << "]";
      throw InvalidArgument(msg.str());
    }
    out.push_back("bin_" + std::to_string(cfg.bin_index(v)));
  }
  return out;
}

/// Non-overlapping windows; the trailing remainder is dropped. A window is
/// Novel iff it contains at least one anomalous point.
inline std::vector<RawSequence> windowize(const std::vector<std::string>& symbols,
                                          const std::vector<bool>& point_is_anomaly,
                                          std::size_t window_length) {
  if (window_length < 1) throw InvalidArgument("window length must be >= 1");
  if (symbols.size() != point_is_anomaly.size())
    throw InvalidArgument("symbols and point labels differ in length");
  std::vector<RawSequence> out;
  const std::size_t count = symbols.size() / window_length;
  for (std::size_t w = 0; w < count; ++w) {
    RawSequence seq;
    seq.id = "w" + std::to_string(w);
    const auto begin = w * window_length;
    seq.tokens.assign(symbols.begin() + static_cast<std::ptrdiff_t>(begin),
                      symbols.begin() + static_cast<std::ptrdiff_t>(begin + window_length));
    bool novel = std::any_of(point_is_anomaly.begin() + static_cast<std::ptrdiff_t>(begin),
                             point_is_anomaly.begin() + static_cast<std::ptrdiff_t>(begin + window_length),
                             [](bool b) { return b; });
    seq.label = novel ? Label::Novel : Label::Normal;
    out.push_back(std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic Markov mixtures

struct MarkovChain {
  std::vector<double> initial;                 // over generator symbols
  std::vector<std::vector<double>> transition;  // row-stochastic
};

struct MixtureGenerator {
  std::size_t num_symbols = 0;
  std::vector<MarkovChain> components;
  std::vector<double> mixture_weights;
  double perturbation_rate = 0.0;

  void validate() const {
    if (components.empty()) throw InvalidArgument("mixture needs at least one component");
    if (mixture_weights.size() != components.size())
      throw InvalidArgument("one mixture weight per component required");
    if (perturbation_rate < 0.0 || perturbation_rate > 1.0)
      throw InvalidArgument("perturbation rate must lie in [0,1]");
    auto check_row = [](const std::vector<double>& row, std::size_t n, const char* what) {
      if (row.size() != n) throw InvalidArgument(std::string(what) + " has wrong width");
      double s = 0.0;
      for (double p : row) {
        if (p < 0.0) throw InvalidArgument(std::string(what) + " has a negative entry");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-9) throw InvalidArgument(std::string(what) + " does not sum to 1");
    };
    check_row(mixture_weights, components.size(), "mixture weights");
    for (const auto& c : components) {
      check_row(c.initial, num_symbols, "initial distribution");
      if (c.transition.size() != num_symbols) throw InvalidArgument("transition matrix has wrong height");
      for (const auto& row : c.transition) check_row(row, num_symbols, "transition row");
    }
  }

  /// Copy of component `c` with each transition row mixed with uniform noise.
  MarkovChain perturbed(std::size_t c) const {
    MarkovChain out = components.at(c);
    const double u = 1.0 / static_cast<double>(num_symbols);
    for (auto& row : out.transition)
      for (double& p : row) p = (1.0 - perturbation_rate) * p + perturbation_rate * u;
    return out;
  }

  static std::string symbol_name(std::size_t j) { return "w" + std::to_string(j); }
};

/// Generator with `m` components, each owning `exclusive` private symbols and
/// sharing `shared` common ones. Rows are Dirichlet(concentration) draws
/// restricted to the component's support.
inline MixtureGenerator make_block_mixture(std::size_t m, std::size_t exclusive, std::size_t shared,
                                           double concentration, double perturbation_rate,
                                           std::uint64_t seed) {
  if (m == 0 || exclusive + shared == 0) throw InvalidArgument("empty block mixture");
  MixtureGenerator gen;
  gen.num_symbols = m * exclusive + shared;
  gen.perturbation_rate = perturbation_rate;
  gen.mixture_weights.assign(m, 1.0 / static_cast<double>(m));
  Rng rng(seed);
  std::gamma_distribution<double> gamma(concentration, 1.0);
  auto dirichlet_on = [&](const std::vector<std::size_t>& support) {
    std::vector<double> row(gen.num_symbols, 0.0);
    double s = 0.0;
    for (auto j : support) {
      row[j] = gamma(rng) + 1e-12;
      s += row[j];
    }
    for (auto j : support) row[j] /= s;
    return row;
  };
  for (std::size_t c = 0; c < m; ++c) {
    std::vector<std::size_t> support;
    for (std::size_t j = 0; j < exclusive; ++j) support.push_back(c * exclusive + j);
    for (std::size_t j = 0; j < shared; ++j) support.push_back(m * exclusive + j);
    MarkovChain chain;
    chain.initial = dirichlet_on(support);
    for (std::size_t j = 0; j < gen.num_symbols; ++j) chain.transition.push_back(dirichlet_on(support));
    gen.components.push_back(std::move(chain));
  }
  gen.validate();
  return gen;
}

namespace detail {
inline std::vector<TokenId> sample_chain(const MarkovChain& chain, std::size_t len, Rng& rng) {
  std::vector<TokenId> out;
  out.reserve(len);
  std::size_t cur = sample_discrete(rng, chain.initial);
  out.push_back(static_cast<TokenId>(cur + Vocabulary::kReserved));
  while (out.size() < len) {
    cur = sample_discrete(rng, chain.transition[cur]);
    out.push_back(static_cast<TokenId>(cur + Vocabulary::kReserved));
  }
  return out;
}
}  // namespace detail

/// Normal sequences come from the mixture components, novel ones from
/// perturbed copies; the generating component is kept in `component`.
/// Symbol j becomes the word "w<j>" with id j+3.
inline Corpus generate_synthetic_mixture(const MixtureGenerator& gen, std::size_t n_normal, std::size_t n_novel,
                                         std::size_t min_len, std::size_t max_len, std::uint64_t seed) {
  gen.validate();
  if (min_len < 1 || min_len > max_len) throw InvalidArgument("invalid sequence length range");
  std::vector<std::string> words;
  for (std::size_t j = 0; j < gen.num_symbols; ++j) words.push_back(MixtureGenerator::symbol_name(j));
  // Vocabulary sorts retained words; build it from an explicit list so id == j + 3.
  Corpus corpus{Vocabulary(words, 1), {}};
  Rng rng(seed);
  std::vector<MarkovChain> novel_chains;
  for (std::size_t c = 0; c < gen.components.size(); ++c) novel_chains.push_back(gen.perturbed(c));

  auto draw = [&](bool novel, std::size_t idx) {
    std::size_t c = sample_discrete(rng, gen.mixture_weights);
    std::size_t len = min_len + uniform_index(rng, max_len - min_len + 1);
    LabeledSequence s;
    s.id = (novel ? "novel_" : "normal_") + std::to_string(idx);
    s.tokens = detail::sample_chain(novel ? novel_chains[c] : gen.components[c], len, rng);
    s.label = novel ? Label::Novel : Label::Normal;
    s.component = static_cast<int>(c);
    corpus.sequences.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < n_normal; ++i) draw(false, i);
  for (std::size_t i = 0; i < n_novel; ++i) draw(true, i);
  return corpus;
}

// ---------------------------------------------------------------------------
// Files

inline std::vector<std::vector<std::string>> read_sequence_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open sequence file '" + path + "'");
  std::vector<std::vector<std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = split_whitespace(line);
    if (toks.empty()) throw InvalidArgument(path + ":" + std::to_string(lineno) + ": empty sequence");
    out.push_back(std::move(toks));
  }
  return out;
}

inline std::vector<Label> read_label_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open label file '" + path + "'");
  std::vector<Label> out;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = split_whitespace(line);
    if (toks.size() != 1) throw InvalidArgument(path + ": expected one label per line");
    out.push_back(parse_label(toks[0]));
  }
  return out;
}

inline void write_sequence_file(const std::string& path, const std::vector<std::vector<std::string>>& seqs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  for (const auto& s : seqs) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
    out << '\n';
  }
}

inline void write_label_file(const std::string& path, const std::vector<Label>& labels) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  for (auto l : labels) out << to_string(l) << '\n';
}

inline std::vector<double> read_time_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open time series '" + path + "'");
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (split_whitespace(line).empty()) continue;
    try {
      out.push_back(std::stod(line));
    } catch (const std::exception&) {
      throw InvalidArgument(path + ":" + std::to_string(lineno) + ": not a number");
    }
  }
  return out;
}

/// Anomaly sidecar: a JSON array of point indices (or {"anomalies": [...]}).
inline std::vector<bool> read_anomaly_sidecar(const std::string& path, std::size_t series_length) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open anomaly sidecar '" + path + "'");
  auto doc = nlohmann::json::parse(in);
  const auto& arr = doc.is_object() ? doc.at("anomalies") : doc;
  std::vector<bool> out(series_length, false);
  for (const auto& v : arr) {
    auto i = v.get<std::size_t>();
    if (i >= series_length) throw InvalidArgument("anomaly index " + std::to_string(i) + " beyond series end");
    out[i] = true;
  }
  return out;
}

/// Encodes raw sequences with `vocab`; labels default to Unlabeled.
inline Corpus encode_corpus(const std::vector<std::vector<std::string>>& raw, const Vocabulary& vocab,
                            const std::vector<Label>& labels = {}) {
  if (!labels.empty() && labels.size() != raw.size())
    throw InvalidArgument("label count " + std::to_string(labels.size()) + " differs from sequence count " +
                          std::to_string(raw.size()));
  Corpus c{vocab, {}};
  for (std::size_t i = 0; i < raw.size(); ++i) {
    LabeledSequence s;
    s.id = "s" + std::to_string(i);
    s.tokens = encode(raw[i], vocab);
    s.label = labels.empty() ? Label::Unlabeled : labels[i];
    c.sequences.push_back(std::move(s));
  }
  return c;
}

inline nlohmann::json to_json(const Vocabulary& v) {
  return {{"min_frequency", v.min_frequency()}, {"words", v.words()}};
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  return Vocabulary(j.at("words").get<std::vector<std::string>>(), j.at("min_frequency").get<std::size_t>());
}

inline nlohmann::json to_json(const Corpus& c) {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& s : c.sequences) {
    nlohmann::json js = {{"id", s.id}, {"tokens", s.tokens}, {"label", to_string(s.label)}};
    if (s.component >= 0) js["component"] = s.component;
    seqs.push_back(std::move(js));
  }
  return {{"vocabulary", to_json(c.vocabulary)}, {"sequences", std::move(seqs)}};
}

inline Corpus corpus_from_json(const nlohmann::json& j) {
  Corpus c{vocabulary_from_json(j.at("vocabulary")), {}};
  for (const auto& js : j.at("sequences")) {
    LabeledSequence s;
    s.id = js.at("id").get<std::string>();
    s.tokens = js.at("tokens").get<std::vector<TokenId>>();
    s.label = parse_label(js.value("label", std::string("unlabeled")));
    s.component = js.value("component", -1);
    c.sequences.push_back(std::move(s));
  }
  c.validate();
  return c;
}

}  // namespace seqnd
