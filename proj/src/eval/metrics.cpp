#include "retgen/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace retgen {

namespace {

std::set<std::string> content_set(const Words& words, const StopwordList& stop) {
  std::set<std::string> out;
  for (const auto& w : words) {
    if (!stop.contains(w)) out.insert(w);
  }
  return out;
}

using NgramCounts = std::map<std::vector<std::string>, long>;

NgramCounts ngrams(const Words& words, int n) {
  NgramCounts out;
  if (static_cast<int>(words.size()) < n) return out;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    ++out[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i),
                                   words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

struct BleuCounts {
  std::vector<long> matched;
  std::vector<long> total;
  long hyp_len = 0;
  long ref_len = 0;
};

void accumulate_bleu(const Words& hyp, const std::vector<Words>& refs, int max_order, BleuCounts& c) {
  if (refs.empty()) throw Error("bleu: instance has no references");
  c.hyp_len += static_cast<long>(hyp.size());
  // Closest reference length; ties go to the shorter reference.
  long best = static_cast<long>(refs.front().size());
  for (const auto& r : refs) {
    const long len = static_cast<long>(r.size());
    const long d = std::labs(len - static_cast<long>(hyp.size()));
    const long bd = std::labs(best - static_cast<long>(hyp.size()));
    if (d < bd || (d == bd && len < best)) best = len;
  }
  c.ref_len += best;
  for (int n = 1; n <= max_order; ++n) {
    const NgramCounts h = ngrams(hyp, n);
    NgramCounts max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, cnt] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], cnt);
    }
    for (const auto& [g, cnt] : h) {
      auto it = max_ref.find(g);
      c.matched[n - 1] += std::min(cnt, it == max_ref.end() ? 0L : it->second);
      c.total[n - 1] += cnt;
    }
  }
}

BleuStats finish_bleu(const BleuCounts& c, int max_order) {
  BleuStats s;
  s.hyp_length = c.hyp_len;
  s.ref_length = c.ref_len;
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < max_order; ++n) {
    const double p = c.total[n] > 0 ? static_cast<double>(c.matched[n]) / static_cast<double>(c.total[n]) : 0.0;
    s.precisions.push_back(p);
    if (p <= 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  s.brevity_penalty = c.hyp_len >= c.ref_len || c.hyp_len == 0
                          ? (c.hyp_len == 0 ? 0.0 : 1.0)
                          : std::exp(1.0 - static_cast<double>(c.ref_len) / static_cast<double>(c.hyp_len));
  s.score = zero ? 0.0 : s.brevity_penalty * std::exp(log_sum / max_order);
  return s;
}

}  // namespace

std::optional<double> kmr(const Words& hypothesis, const Words& context, const std::vector<Words>& documents,
                          const StopwordList& stopwords) {
  if (documents.empty()) throw Error("kmr: at least one document is required");
  const auto y = content_set(hypothesis, stopwords);
  const auto x = content_set(context, stopwords);
  std::optional<double> best;
  for (const auto& doc : documents) {
    std::size_t keywords = 0;
    std::size_t hit = 0;
    for (const auto& w : content_set(doc, stopwords)) {
      if (x.count(w)) continue;
      ++keywords;
      if (y.count(w)) ++hit;
    }
    if (keywords == 0) continue;
    const double r = static_cast<double>(hit) / static_cast<double>(keywords);
    best = best ? std::max(*best, r) : r;
  }
  return best;
}

MeanWithCount mean_defined(const std::vector<std::optional<double>>& values) {
  MeanWithCount m;
  double sum = 0.0;
  for (const auto& v : values) {
    if (!v) {
      ++m.undefined;
      continue;
    }
    sum += *v;
    ++m.count;
  }
  m.mean = m.count ? sum / static_cast<double>(m.count) : 0.0;
  return m;
}

BleuStats bleu(const std::vector<Words>& hypotheses, const std::vector<std::vector<Words>>& references,
               int max_order) {
  if (hypotheses.empty()) throw Error("bleu: empty hypothesis list");
  if (hypotheses.size() != references.size()) throw Error("bleu: hypotheses and reference sets are not aligned");
  if (max_order < 1) throw Error("bleu: max_order must be >= 1");
  BleuCounts c{std::vector<long>(max_order, 0), std::vector<long>(max_order, 0)};
  for (std::size_t i = 0; i < hypotheses.size(); ++i) accumulate_bleu(hypotheses[i], references[i], max_order, c);
  return finish_bleu(c, max_order);
}

double bleu_max_pooled(const std::vector<Words>& hypotheses, const std::vector<std::vector<Words>>& references,
                       int max_order) {
  if (hypotheses.empty()) throw Error("bleu: empty hypothesis list");
  if (hypotheses.size() != references.size()) throw Error("bleu: hypotheses and reference sets are not aligned");
  double total = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    if (references[i].empty()) throw Error("bleu: instance has no references");
    double best = 0.0;
    for (const auto& ref : references[i]) {
      BleuCounts c{std::vector<long>(max_order, 0), std::vector<long>(max_order, 0)};
      accumulate_bleu(hypotheses[i], {ref}, max_order, c);
      best = std::max(best, finish_bleu(c, max_order).score);
    }
    total += best;
  }
  return total / static_cast<double>(hypotheses.size());
}

std::optional<double> distinct_n(const std::vector<Words>& hypotheses, int n) {
  if (n < 1) throw Error("distinct_n: n must be >= 1");
  NgramCounts all;
  long total = 0;
  for (const auto& h : hypotheses) {
    for (const auto& [g, cnt] : ngrams(h, n)) {
      all[g] += cnt;
      total += cnt;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(all.size()) / static_cast<double>(total);
}

std::optional<double> entropy_n(const std::vector<Words>& hypotheses, int n) {
  if (n < 1) throw Error("entropy_n: n must be >= 1");
  NgramCounts all;
  long total = 0;
  for (const auto& h : hypotheses) {
    for (const auto& [g, cnt] : ngrams(h, n)) {
      all[g] += cnt;
      total += cnt;
    }
  }
  if (total == 0) return std::nullopt;
  double e = 0.0;
  for (const auto& [g, cnt] : all) {
    const double p = static_cast<double>(cnt) / static_cast<double>(total);
    e -= p * std::log(p);
  }
  return e;
}

RecallStats recall_at_k(const DualEncoder& encoder, const DocumentStore& docs, const std::vector<CorpusExample>& data,
                        int k, RetrievalMode mode, const EmbeddingIndex* index) {
  std::optional<EmbeddingIndex> fresh;
  if (!index || mode == RetrievalMode::kExhaustive) {
    fresh = EmbeddingIndex::build(embed_documents(docs, encoder), index ? index->config() : LshConfig{}, 0);
    index = &*fresh;
  }
  RecallStats r;
  std::size_t hits = 0;
  for (const auto& ex : data) {
    if (ex.oracle_doc < 0 || ex.oracle_doc >= static_cast<int>(docs.size())) {
      ++r.skipped;
      continue;
    }
    const auto res = index->retrieve(encoder.query_vector(ex.context), k, mode);
    ++r.count;
    if (std::find(res.ids.begin(), res.ids.end(), ex.oracle_doc) != res.ids.end()) ++hits;
  }
  r.recall = r.count ? static_cast<double>(hits) / static_cast<double>(r.count) : 0.0;
  return r;
}

void EvalReport::add(std::string metric, std::optional<double> value, std::size_t count, std::size_t undefined) {
  entries.push_back(Entry{std::move(metric), value, count, undefined});
}

const EvalReport::Entry* EvalReport::find(const std::string& metric) const {
  for (const auto& e : entries) {
    if (e.metric == metric) return &e;
  }
  return nullptr;
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  for (const auto& [k, v] : config) out << "# " << k << " " << v << "\n";
  out << "metric\tvalue\tcount\tundefined\n";
  for (const auto& e : entries) {
    out << e.metric << "\t";
    if (e.value) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.10g", *e.value);
      out << buf;
    } else {
      out << "undefined";
    }
    out << "\t" << e.count << "\t" << e.undefined << "\n";
  }
  return out.str();
}

}  // namespace retgen
