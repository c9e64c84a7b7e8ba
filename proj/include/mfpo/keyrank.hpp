#pragma once

// Keyword selection over a multipartite word graph.
//
// Candidate words become nodes; words sharing a stem form a topic group and
// are never connected. Every cross-topic ordered pair (i, j) carries
//   theta = sum over occurrence pairs of 1 / (1 + |l_i - l_j|^phi)
//   mu    = theta + gamma * cos(v_i, v_j)
//   tau   = mu * (1 + context_boost)
//   kappa = exp(-lambda * first_position(i))
//   omega = max(0, tau * kappa)
// and words are scored by the damped fixed point
//   r(i) = (1 - d) + d * sum_j omega_ij * r(j) / sum_m omega_jm.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mfpo/error.hpp"
#include "mfpo/rng.hpp"
#include "mfpo/sample.hpp"

namespace mfpo::keyrank {

struct Params {
  double phi = 1.0;        ///< positional decay exponent, > 0
  double gamma = 0.5;      ///< semantic weight, >= 0
  double lambda = 0.01;    ///< first-position decay rate, >= 0
  double damping = 0.85;   ///< in (0, 1)
  double rho = 0.1;        ///< contextual boost strength, >= 0; 0 disables
  int context_window = 2;  ///< topics co-occurring within this many positions are context neighbors
  double tol = 1e-8;
  int max_iter = 200;
  std::size_t k = 3;
  bool include_prompt = false;  ///< rank over prompt + chosen instead of chosen only

  void validate() const {
    if (!(phi > 0)) throw ValidationError("phi must be > 0");
    if (!(gamma >= 0)) throw ValidationError("gamma must be >= 0");
    if (!(lambda >= 0)) throw ValidationError("lambda must be >= 0");
    if (!(damping > 0 && damping < 1)) throw ValidationError("damping must lie in (0, 1)");
    if (!(rho >= 0)) throw ValidationError("rho must be >= 0");
    if (context_window < 0) throw ValidationError("context window must be >= 0");
    if (!(tol > 0)) throw ValidationError("tol must be > 0");
    if (max_iter <= 0) throw ValidationError("max_iter must be positive");
  }
};

// ---------------------------------------------------------------------------
// Candidates

inline const std::unordered_set<std::string>& default_stoplist() {
  static const std::unordered_set<std::string> words = {
      "a",     "an",    "the",   "and",   "or",    "but",   "if",    "then",  "of",    "in",    "on",
      "at",    "to",    "for",   "from",  "by",    "with",  "without", "about", "as",  "into",  "onto",
      "over",  "under", "is",    "are",   "was",   "were",  "be",    "been",  "being", "am",    "it",
      "its",   "this",  "that",  "these", "those", "there", "here",  "i",     "you",   "he",    "she",
      "we",    "they",  "them",  "his",   "her",   "their", "our",   "my",    "your",  "me",    "us",
      "what",  "which", "who",   "whom",  "whose", "where", "when",  "why",   "how",   "do",    "does",
      "did",   "has",   "have",  "had",   "can",   "could", "will",  "would", "should", "may", "might",
      "must",  "not",   "no",    "yes",   "so",    "such",  "very",  "also",  "just",  "than", "too",
      "some",  "any",   "all",   "each",  "both",  "one",   "image", "picture", "photo", "shown", "shows",
      "see",   "seen",  "visible", "appears"};
  return words;
}

/// Lowercases and strips leading/trailing ASCII punctuation. Empty when the
/// remainder is not purely alphabetic.
inline std::string normalize_word(std::string_view raw) {
  std::size_t b = 0, e = raw.size();
  while (b < e && std::ispunct(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && std::ispunct(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string w;
  for (std::size_t i = b; i < e; ++i) {
    const auto c = static_cast<unsigned char>(raw[i]);
    if (!std::isalpha(c)) return {};
    w += static_cast<char>(std::tolower(c));
  }
  return w;
}

/// Minimal plural stripping; enough to group "car"/"cars", "berry"/"berries".
inline std::string stem(std::string_view w) {
  std::string s(w);
  auto ends = [&](std::string_view suf) { return s.size() >= suf.size() && s.ends_with(suf); };
  if (s.size() > 4 && ends("ies")) return s.substr(0, s.size() - 3) + "y";
  if (ends("sses")) return s.substr(0, s.size() - 2);
  if (s.size() > 3 && ends("s") && !ends("ss") && !ends("us") && !ends("is")) return s.substr(0, s.size() - 1);
  return s;
}

struct Candidate {
  std::string word;
  std::vector<int> positions;  ///< 1-based, sorted, nonempty
  std::size_t topic = 0;
};

struct CandidateSet {
  std::vector<Candidate> candidates;    ///< in order of first occurrence
  std::vector<std::string> topic_keys;  ///< stem per topic, in order of first occurrence
};

inline CandidateSet extract_candidates(const Tokens& tokens,
                                       const std::unordered_set<std::string>& stoplist = default_stoplist()) {
  if (tokens.empty()) throw ValidationError("keyword extraction needs a nonempty token sequence");
  CandidateSet out;
  std::map<std::string, std::size_t> by_word, by_topic;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto w = normalize_word(tokens[i]);
    if (w.empty() || stoplist.contains(w)) continue;
    const int pos = static_cast<int>(i) + 1;
    if (auto it = by_word.find(w); it != by_word.end()) {
      out.candidates[it->second].positions.push_back(pos);
      continue;
    }
    const auto key = stem(w);
    auto [t, inserted] = by_topic.try_emplace(key, out.topic_keys.size());
    if (inserted) out.topic_keys.push_back(key);
    by_word.emplace(w, out.candidates.size());
    out.candidates.push_back({w, {pos}, t->second});
  }
  if (out.candidates.empty()) throw ValidationError("no candidates");
  return out;
}

// ---------------------------------------------------------------------------
// Edge components

inline double positional_affinity(std::span<const int> pos_i, std::span<const int> pos_j, double phi) {
  if (!(phi > 0)) throw ValidationError("phi must be > 0");
  if (pos_i.empty() || pos_j.empty()) throw ValidationError("position sets must be nonempty");
  // Fixed summation order so that swapping the arguments is bit-exact.
  if (std::lexicographical_compare(pos_j.begin(), pos_j.end(), pos_i.begin(), pos_i.end())) std::swap(pos_i, pos_j);
  double theta = 0.0;
  for (int a : pos_i)
    for (int b : pos_j) theta += 1.0 / (1.0 + std::pow(std::abs(static_cast<double>(a - b)), phi));
  return theta;
}

inline double semantic_similarity(std::span<const double> v_i, std::span<const double> v_j) {
  if (v_i.size() != v_j.size()) throw ValidationError("embedding dimensions differ");
  double dot = 0, ni = 0, nj = 0;
  for (std::size_t k = 0; k < v_i.size(); ++k) {
    dot += v_i[k] * v_j[k];
    ni += v_i[k] * v_i[k];
    nj += v_j[k] * v_j[k];
  }
  if (ni == 0 || nj == 0) throw ValidationError("cosine similarity of a zero vector is undefined");
  return std::clamp(dot / (std::sqrt(ni) * std::sqrt(nj)), -1.0, 1.0);
}

struct EdgeWeight {
  double theta = 0;
  double sim = 0;
  double mu = 0;
  double tau = 0;
  double kappa = 1;
  double omega = 0;
};

inline EdgeWeight compose_edge(double theta, double sim, double gamma, double lambda, int first_pos_i,
                               double context_boost) {
  if (!(gamma >= 0) || !(lambda >= 0) || first_pos_i < 1 || !(context_boost >= 0)) {
    throw ValidationError("compose_edge: gamma, lambda, context_boost must be >= 0 and first position >= 1");
  }
  EdgeWeight e;
  e.theta = theta;
  e.sim = sim;
  e.mu = theta + gamma * sim;
  e.tau = e.mu * (1.0 + context_boost);
  e.kappa = std::exp(-lambda * first_pos_i);
  e.omega = std::max(0.0, e.tau * e.kappa);
  return e;
}

// ---------------------------------------------------------------------------
// Embeddings

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<double> embed(std::string_view word) const = 0;
};

/// Hashed character n-gram counts of "<word>". Deterministic, model-free,
/// and never the zero vector for a nonempty word.
class HashedNgramEmbedding final : public EmbeddingProvider {
 public:
  explicit HashedNgramEmbedding(std::size_t dim = 64, std::size_t n = 3) : dim_(dim), n_(n) {
    if (dim_ == 0 || n_ == 0) throw ValidationError("embedding dim and n must be positive");
  }

  std::vector<double> embed(std::string_view word) const override {
    const std::string padded = "<" + std::string(word) + ">";
    std::vector<double> v(dim_, 0.0);
    const std::size_t n = std::min(n_, padded.size());
    for (std::size_t i = 0; i + n <= padded.size(); ++i) {
      v[rng::fnv1a(std::string_view(padded).substr(i, n)) % dim_] += 1.0;
    }
    return v;
  }

 private:
  std::size_t dim_;
  std::size_t n_;
};

/// Lookup table provider, mainly for tests and hand-built vocabularies.
class TableEmbedding final : public EmbeddingProvider {
 public:
  explicit TableEmbedding(std::map<std::string, std::vector<double>, std::less<>> table) : table_(std::move(table)) {}
  std::vector<double> embed(std::string_view word) const override {
    auto it = table_.find(word);
    if (it == table_.end()) throw ValidationError("no embedding for '" + std::string(word) + "'");
    return it->second;
  }

 private:
  std::map<std::string, std::vector<double>, std::less<>> table_;
};

// ---------------------------------------------------------------------------
// Graph

class WordGraph {
 public:
  /// Builds from explicit final weights. `omega` is n x n row-major;
  /// entries between nodes of the same topic must be zero.
  static WordGraph from_weights(std::vector<Candidate> nodes, std::vector<double> omega) {
    WordGraph g;
    g.nodes_ = std::move(nodes);
    g.omega_ = std::move(omega);
    g.check();
    return g;
  }

  static WordGraph build(const CandidateSet& cs, const EmbeddingProvider& embedder, const Params& p) {
    p.validate();
    const std::size_t n = cs.candidates.size();
    const std::size_t topics = cs.topic_keys.size();

    // Topic-level context neighborhoods from positional co-occurrence.
    std::vector<std::set<std::size_t>> ctx(topics);
    for (const auto& a : cs.candidates)
      for (const auto& b : cs.candidates) {
        if (a.topic == b.topic) continue;
        for (int la : a.positions)
          for (int lb : b.positions)
            if (std::abs(la - lb) <= p.context_window) ctx[a.topic].insert(b.topic);
      }

    std::vector<std::vector<double>> vec(n);
    for (std::size_t i = 0; i < n; ++i) vec[i] = embedder.embed(cs.candidates[i].word);

    WordGraph g;
    g.nodes_ = cs.candidates;
    g.omega_.assign(n * n, 0.0);
    g.edges_.assign(n * n, EdgeWeight{});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto ti = cs.candidates[i].topic, tj = cs.candidates[j].topic;
        if (ti == tj) continue;
        std::size_t shared = 0;
        for (auto t : ctx[ti])
          if (t != tj && ctx[tj].contains(t)) ++shared;
        const double boost = topics > 1 ? p.rho * static_cast<double>(shared) / static_cast<double>(topics - 1) : 0.0;
        const double theta = positional_affinity(cs.candidates[i].positions, cs.candidates[j].positions, p.phi);
        const double sim = semantic_similarity(vec[i], vec[j]);
        const auto e = compose_edge(theta, sim, p.gamma, p.lambda, cs.candidates[i].positions.front(), boost);
        g.edges_[i * n + j] = e;
        g.omega_[i * n + j] = e.omega;
      }
    }
    g.check();
    return g;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Candidate>& nodes() const noexcept { return nodes_; }
  double omega(std::size_t i, std::size_t j) const { return omega_.at(i * size() + j); }
  std::span<const double> omega() const noexcept { return omega_; }
  /// Component breakdown; only populated for graphs made by build().
  const EdgeWeight* edge(std::size_t i, std::size_t j) const {
    return edges_.empty() ? nullptr : &edges_.at(i * size() + j);
  }
  bool adjacent(std::size_t i, std::size_t j) const { return nodes_[i].topic != nodes_[j].topic; }

 private:
  WordGraph() = default;

  void check() const {
    const std::size_t n = nodes_.size();
    if (omega_.size() != n * n) throw ValidationError("weight matrix does not match node count");
    for (std::size_t i = 0; i < n; ++i) {
      const auto& pos = nodes_[i].positions;
      if (pos.empty() || !std::is_sorted(pos.begin(), pos.end())) {
        throw ValidationError("node '" + nodes_[i].word + "' needs a nonempty sorted position set");
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double w = omega_[i * n + j];
        if (!std::isfinite(w) || w < 0) throw ValidationError("edge weights must be finite and >= 0");
        if (nodes_[i].topic == nodes_[j].topic && w != 0) {
          throw ValidationError("edge inside topic group ('" + nodes_[i].word + "', '" + nodes_[j].word + "')");
        }
      }
    }
  }

  std::vector<Candidate> nodes_;
  std::vector<double> omega_;
  std::vector<EdgeWeight> edges_;
};

// ---------------------------------------------------------------------------
// Ranking

struct RankResult {
  std::vector<double> scores;  ///< parallel to graph.nodes()
  int iterations = 0;
  bool converged = false;
  std::vector<std::size_t> order;  ///< all node indices, best first
};

/// Score descending, then earliest first occurrence, then word.
inline std::vector<std::size_t> ranking_order(const std::vector<Candidate>& nodes, std::span<const double> scores) {
  std::vector<std::size_t> order(nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (nodes[a].positions.front() != nodes[b].positions.front())
      return nodes[a].positions.front() < nodes[b].positions.front();
    return nodes[a].word < nodes[b].word;
  });
  return order;
}

inline RankResult rank(const WordGraph& g, double damping, double tol, int max_iter) {
  if (!(damping > 0 && damping < 1)) throw ValidationError("damping must lie in (0, 1)");
  if (!(tol > 0) || max_iter <= 0) throw ValidationError("tol must be > 0 and max_iter positive");
  const std::size_t n = g.size();
  const double base = 1.0 - damping;

  std::vector<double> out_mass(n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t m = 0; m < n; ++m)
      if (g.adjacent(j, m)) out_mass[j] += g.omega(j, m);

  RankResult res;
  res.scores.assign(n, base);
  std::vector<double> next(n);
  for (int it = 1; it <= max_iter; ++it) {
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (!g.adjacent(i, j) || out_mass[j] == 0.0) continue;
        acc += g.omega(i, j) * res.scores[j] / out_mass[j];
      }
      next[i] = base + damping * acc;
      if (!std::isfinite(next[i]) || next[i] < 0) throw Error("rank: score left the finite nonnegative range");
      delta = std::max(delta, std::abs(next[i] - res.scores[i]));
    }
    res.scores.swap(next);
    res.iterations = it;
    if (delta < tol) {
      res.converged = true;
      break;
    }
  }
  res.order = ranking_order(g.nodes(), res.scores);
  return res;
}

inline std::vector<Keyword> top_k(const WordGraph& g, const RankResult& r, std::size_t k) {
  std::vector<Keyword> out;
  for (std::size_t i = 0; i < std::min(k, r.order.size()); ++i) {
    out.push_back({g.nodes()[r.order[i]].word, r.scores[r.order[i]]});
  }
  return out;
}

/// Top-K keywords of a sample's chosen response (optionally prefixed by the
/// prompt).
inline std::vector<Keyword> select_keywords(const PreferenceSample& sample, const Params& p,
                                            const EmbeddingProvider& embedder,
                                            const std::unordered_set<std::string>& stoplist = default_stoplist()) {
  p.validate();
  Tokens source;
  if (p.include_prompt) source = sample.prompt();
  source.insert(source.end(), sample.chosen().begin(), sample.chosen().end());
  const auto cs = extract_candidates(source, stoplist);
  const auto g = WordGraph::build(cs, embedder, p);
  return top_k(g, rank(g, p.damping, p.tol, p.max_iter), p.k);
}

inline std::vector<Keyword> select_keywords(const PreferenceSample& sample, const Params& p = {}) {
  return select_keywords(sample, p, HashedNgramEmbedding{});
}

}  // namespace mfpo::keyrank
