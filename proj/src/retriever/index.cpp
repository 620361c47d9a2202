#include "retgen/retriever/index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace retgen {

RetrievalMode parse_retrieval_mode(const std::string& s) {
  if (s == "lsh") return RetrievalMode::kLsh;
  if (s == "exhaustive") return RetrievalMode::kExhaustive;
  throw Error("unknown retrieval mode '" + s + "' (expected lsh or exhaustive)");
}

std::string to_string(RetrievalMode m) { return m == RetrievalMode::kLsh ? "lsh" : "exhaustive"; }

void normalize(RetrievalResult& r) {
  r.probs.resize(r.scores.size());
  if (r.scores.empty()) return;
  const double m = *std::max_element(r.scores.begin(), r.scores.end());
  double z = 0.0;
  for (std::size_t i = 0; i < r.scores.size(); ++i) z += (r.probs[i] = std::exp(r.scores[i] - m));
  for (double& p : r.probs) p /= z;
}

RetrievalResult top_k(const Tensor& embeddings, const RowVector& query, std::span<const int> candidates, int k) {
  if (query.size() != embeddings.cols()) {
    throw ShapeError("retrieve: query dim " + std::to_string(query.size()) + " vs index dim " +
                     std::to_string(embeddings.cols()));
  }
  std::vector<std::pair<double, int>> scored;
  scored.reserve(candidates.size());
  for (int id : candidates) scored.emplace_back(embeddings.row(id).dot(query), id);
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  auto better = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
  RetrievalResult r;
  for (std::size_t i = 0; i < take; ++i) {
    r.ids.push_back(scored[i].second);
    r.scores.push_back(scored[i].first);
  }
  normalize(r);
  return r;
}

EmbeddingIndex EmbeddingIndex::build(Tensor embeddings, const LshConfig& config, long snapshot_step) {
  if (config.tables < 1) throw Error("build_index: tables (L) must be >= 1");
  if (config.bits < 1 || config.bits > 32) throw Error("build_index: bits (b) must be in [1, 32]");
  if (config.probes < 1) throw Error("build_index: probes must be >= 1");
  if (embeddings.rows() == 0) throw Error("build_index: empty document store");
  EmbeddingIndex idx;
  idx.config_ = config;
  idx.snapshot_step_ = snapshot_step;
  idx.embeddings_ = std::move(embeddings);
  idx.max_norm_ = idx.embeddings_.rowwise().norm().maxCoeff();
  Rng rng(mix_seed(config.seed, 101));
  idx.hyperplanes_ = random_normal(static_cast<Index>(config.tables) * config.bits, idx.dim() + 1, 1.0, rng);

  idx.signatures_.assign(config.tables, std::vector<std::uint32_t>(idx.size()));
  for (int d = 0; d < idx.size(); ++d) {
    RowVector aug(idx.dim() + 1);
    const RowVector h = idx.embeddings_.row(d);
    if (idx.max_norm_ > 0.0) {
      aug.head(idx.dim()) = h / idx.max_norm_;
      aug(idx.dim()) = std::sqrt(std::max(0.0, 1.0 - h.squaredNorm() / (idx.max_norm_ * idx.max_norm_)));
    } else {
      aug.setZero();
      aug(idx.dim()) = 1.0;
    }
    for (int t = 0; t < config.tables; ++t) idx.signatures_[t][d] = idx.hash(aug, t, nullptr);
  }
  idx.rebuild_buckets();
  return idx;
}

void EmbeddingIndex::rebuild_buckets() {
  buckets_.assign(config_.tables, {});
  for (int t = 0; t < config_.tables; ++t) {
    for (int d = 0; d < size(); ++d) buckets_[t][signatures_[t][d]].push_back(d);
  }
}

std::uint32_t EmbeddingIndex::hash(const RowVector& augmented, int table, RowVector* margins) const {
  std::uint32_t sig = 0;
  const auto planes = hyperplanes_.middleRows(static_cast<Index>(table) * config_.bits, config_.bits);
  const RowVector proj = augmented * planes.transpose();
  for (int b = 0; b < config_.bits; ++b) {
    if (proj(b) >= 0.0) sig |= (1u << b);
  }
  if (margins) *margins = proj.cwiseAbs();
  return sig;
}

int EmbeddingIndex::table_count(int doc) const {
  int n = 0;
  for (int t = 0; t < config_.tables; ++t) {
    auto it = buckets_[t].find(signatures_[t][doc]);
    if (it != buckets_[t].end() && std::find(it->second.begin(), it->second.end(), doc) != it->second.end()) ++n;
  }
  return n;
}

std::vector<int> EmbeddingIndex::candidates(const RowVector& query) const {
  if (query.size() != dim()) {
    throw ShapeError("lsh: query dim " + std::to_string(query.size()) + " vs index dim " + std::to_string(dim()));
  }
  RowVector aug = RowVector::Zero(dim() + 1);
  const double n = query.norm();
  if (n > 0.0) aug.head(dim()) = query / n;
  std::vector<char> seen(size(), 0);
  RowVector margins;
  std::vector<int> order(config_.bits);
  for (int t = 0; t < config_.tables; ++t) {
    const std::uint32_t sig = hash(aug, t, &margins);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return margins(a) < margins(b); });
    for (int p = 0; p < std::min(config_.probes, config_.bits + 1); ++p) {
      const std::uint32_t probe = p == 0 ? sig : sig ^ (1u << order[p - 1]);
      auto it = buckets_[t].find(probe);
      if (it == buckets_[t].end()) continue;
      for (int d : it->second) seen[d] = 1;
    }
  }
  std::vector<int> out;
  for (int d = 0; d < size(); ++d) {
    if (seen[d]) out.push_back(d);
  }
  return out;
}

RetrievalResult EmbeddingIndex::retrieve(const RowVector& query, int k, RetrievalMode mode) const {
  if (k < 1) throw Error("retrieve: K must be >= 1");
  if (k > size()) {
    throw Error("retrieve: K=" + std::to_string(k) + " exceeds the " + std::to_string(size()) + " indexed documents");
  }
  if (mode == RetrievalMode::kLsh) {
    const std::vector<int> cand = candidates(query);
    if (static_cast<int>(cand.size()) >= k) return top_k(embeddings_, query, cand, k);
  }
  std::vector<int> all(size());
  std::iota(all.begin(), all.end(), 0);
  return top_k(embeddings_, query, all, k);
}

namespace {
constexpr std::string_view kIndexMagic = "RETGENIX";
constexpr std::uint32_t kIndexVersion = 1;
}  // namespace

void EmbeddingIndex::save(const std::filesystem::path& path, const Json& meta) const {
  BinaryWriter w;
  w.raw(kIndexMagic.data(), kIndexMagic.size());
  w.u32(kIndexVersion);
  w.str(meta.is_null() ? "{}" : meta.dump());
  w.u32(static_cast<std::uint32_t>(dim()));
  w.u32(static_cast<std::uint32_t>(config_.tables));
  w.u32(static_cast<std::uint32_t>(config_.bits));
  w.u32(static_cast<std::uint32_t>(config_.probes));
  w.u64(config_.seed);
  w.i64(snapshot_step_);
  w.tensor(embeddings_);
  w.tensor(hyperplanes_);
  for (const auto& table : signatures_) {
    for (std::uint32_t s : table) w.u32(s);
  }
  write_file_atomic(path, w.bytes());
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path, Json* meta) {
  BinaryReader r(read_file(path));
  r.expect_magic(kIndexMagic);
  if (const auto v = r.u32(); v != kIndexVersion) throw Error("unsupported index version " + std::to_string(v));
  Json m = Json::parse(r.str());
  if (meta) *meta = m;
  EmbeddingIndex idx;
  const auto dim = static_cast<Index>(r.u32());
  idx.config_.tables = static_cast<int>(r.u32());
  idx.config_.bits = static_cast<int>(r.u32());
  idx.config_.probes = static_cast<int>(r.u32());
  idx.config_.seed = r.u64();
  idx.snapshot_step_ = r.i64();
  idx.embeddings_ = r.tensor();
  idx.hyperplanes_ = r.tensor();
  if (idx.embeddings_.cols() != dim || idx.hyperplanes_.cols() != dim + 1 ||
      idx.hyperplanes_.rows() != static_cast<Index>(idx.config_.tables) * idx.config_.bits) {
    throw Error("index file '" + path.string() + "' has inconsistent shapes");
  }
  idx.max_norm_ = idx.embeddings_.rows() ? idx.embeddings_.rowwise().norm().maxCoeff() : 0.0;
  idx.signatures_.assign(idx.config_.tables, std::vector<std::uint32_t>(idx.size()));
  for (auto& table : idx.signatures_) {
    for (auto& s : table) s = r.u32();
  }
  if (!r.done()) throw Error("trailing bytes in index file '" + path.string() + "'");
  idx.rebuild_buckets();
  return idx;
}

bool EmbeddingIndex::operator==(const EmbeddingIndex& o) const {
  return config_.tables == o.config_.tables && config_.bits == o.config_.bits && config_.probes == o.config_.probes &&
         config_.seed == o.config_.seed && snapshot_step_ == o.snapshot_step_ && embeddings_ == o.embeddings_ &&
         hyperplanes_ == o.hyperplanes_ && signatures_ == o.signatures_;
}

Tensor embed_documents(const DocumentStore& docs, const DualEncoder& encoder) {
  Tensor out(static_cast<Index>(docs.size()), encoder.dim());
  for (std::size_t i = 0; i < docs.size(); ++i) out.row(static_cast<Index>(i)) = encoder.document_vector(docs[i].tokens);
  return out;
}

EmbeddingIndex build_index(const DocumentStore& docs, const DualEncoder& encoder, const LshConfig& config,
                           long snapshot_step) {
  if (docs.empty()) throw Error("build_index: empty document store");
  return EmbeddingIndex::build(embed_documents(docs, encoder), config, snapshot_step);
}

RetrievalResult retrieve_fresh(const EmbeddingIndex& index, const DualEncoder& encoder, const DocumentStore& docs,
                               std::span<const int> query, int k, RetrievalMode mode) {
  const RowVector hx = encoder.query_vector(query);
  const RetrievalResult stale = index.retrieve(hx, k, mode);
  Tensor fresh(static_cast<Index>(stale.ids.size()), encoder.dim());
  for (std::size_t i = 0; i < stale.ids.size(); ++i) {
    fresh.row(static_cast<Index>(i)) = encoder.document_vector(docs[stale.ids[i]].tokens);
  }
  std::vector<int> rows(stale.ids.size());
  std::iota(rows.begin(), rows.end(), 0);
  RetrievalResult local = top_k(fresh, hx, rows, k);
  // Map local row numbers back to document indices, then restore the
  // ascending-id tie order.
  std::vector<std::pair<double, int>> scored;
  for (std::size_t i = 0; i < local.ids.size(); ++i) scored.emplace_back(local.scores[i], stale.ids[local.ids[i]]);
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  RetrievalResult out;
  for (const auto& [s, id] : scored) {
    out.ids.push_back(id);
    out.scores.push_back(s);
  }
  normalize(out);
  return out;
}

bool refresh_if_due(IndexSlot& slot, const DocumentStore& docs, const DualEncoder& encoder, long current_step,
                    int period) {
  if (period < 1) throw Error("refresh_if_due: period M must be >= 1");
  auto current = slot.load();
  if (current && current_step - current->snapshot_step() < period) return false;
  const LshConfig config = current ? current->config() : LshConfig{};
  slot.store(build_index(docs, encoder, config, current_step));
  return true;
}

}  // namespace retgen
