#pragma once

// Two-domain rating data: TSV ingestion, overlap bookkeeping, chronological
// histories and the cold-start split.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dmcdr/error.hpp"
#include "dmcdr/rng.hpp"

namespace dmcdr {

struct RatingRange {
  double min = 0.0;
  double max = 5.0;
};

struct RatingRecord {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

// Ordered id set with a bijective index map onto 0..n-1 (first-seen order).
class IdIndex {
 public:
  int insert(const std::string& id) {
    auto [it, inserted] = index_.try_emplace(id, static_cast<int>(ids_.size()));
    if (inserted) ids_.push_back(id);
    return it->second;
  }

  int index_of(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? -1 : it->second;
  }

  bool contains(const std::string& id) const { return index_.contains(id); }
  const std::string& id_of(int k) const { return ids_.at(static_cast<std::size_t>(k)); }
  int size() const { return static_cast<int>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, int> index_;
};

// Observer notified on every per-user record access; used to audit leakage.
using RecordAccessObserver = std::function<void(int user_index)>;

class DomainData {
 public:
  DomainData() = default;

  // Records must already be deduplicated; input order is kept as file order.
  explicit DomainData(std::vector<RatingRecord> records) : records_(std::move(records)) {
    for (std::size_t k = 0; k < records_.size(); ++k) {
      const int u = users_.insert(records_[k].user_id);
      items_.insert(records_[k].item_id);
      if (static_cast<std::size_t>(u) >= by_user_.size()) by_user_.resize(u + 1);
      by_user_[u].push_back(static_cast<int>(k));
    }
  }

  const IdIndex& users() const { return users_; }
  const IdIndex& items() const { return items_; }
  const std::vector<RatingRecord>& records() const { return records_; }
  int num_users() const { return users_.size(); }
  int num_items() const { return items_.size(); }
  std::size_t num_records() const { return records_.size(); }

  // Records of one user, in file order. Notifies the access observer.
  std::vector<const RatingRecord*> records_of(int user_index) const {
    if (observer_) observer_(user_index);
    std::vector<const RatingRecord*> out;
    if (user_index < 0 || static_cast<std::size_t>(user_index) >= by_user_.size()) return out;
    out.reserve(by_user_[user_index].size());
    for (int k : by_user_[user_index]) out.push_back(&records_[k]);
    return out;
  }

  void set_access_observer(RecordAccessObserver obs) const { observer_ = std::move(obs); }

 private:
  std::vector<RatingRecord> records_;
  IdIndex users_;
  IdIndex items_;
  std::vector<std::vector<int>> by_user_;
  mutable RecordAccessObserver observer_;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

template <class T>
bool parse_number(std::string_view text, T& out) {
  std::istringstream in{std::string(text)};
  in >> out;
  return !in.fail() && (in >> std::ws).eof();
}

}  // namespace detail

// Parse TSV `user \t item \t rating \t timestamp`. Duplicate (user, item)
// pairs keep the record with the latest timestamp (later line on ties).
inline DomainData parse_ratings(std::istream& in, RatingRange range = {}) {
  struct Kept {
    RatingRecord rec;
    std::size_t position;
  };
  std::vector<Kept> kept;
  std::unordered_map<std::string, std::size_t> pair_slot;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 4) {
      throw ParseError("expected 4 tab-separated fields, got " + std::to_string(fields.size()),
                       line_no);
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError("empty user or item id", line_no);
    RatingRecord rec{std::string(fields[0]), std::string(fields[1]), 0.0, 0};
    if (!detail::parse_number(fields[2], rec.rating)) {
      throw ParseError("unparsable rating '" + std::string(fields[2]) + "'", line_no);
    }
    if (!detail::parse_number(fields[3], rec.timestamp)) {
      throw ParseError("unparsable timestamp '" + std::string(fields[3]) + "'", line_no);
    }
    if (!std::isfinite(rec.rating) || rec.rating < range.min || rec.rating > range.max) {
      throw ValidationError("line " + std::to_string(line_no) + ": rating " +
                            std::string(fields[2]) + " outside [" + std::to_string(range.min) +
                            ", " + std::to_string(range.max) + "]");
    }
    if (rec.timestamp < 0) {
      throw ValidationError("line " + std::to_string(line_no) + ": negative timestamp");
    }

    std::string key = rec.user_id;
    key.push_back('\t');
    key += rec.item_id;
    auto [it, fresh] = pair_slot.try_emplace(std::move(key), kept.size());
    if (fresh) {
      kept.push_back({std::move(rec), line_no});
    } else if (rec.timestamp >= kept[it->second].rec.timestamp) {
      kept[it->second] = {std::move(rec), line_no};
    }
  }

  std::stable_sort(kept.begin(), kept.end(),
                   [](const Kept& a, const Kept& b) { return a.position < b.position; });
  std::vector<RatingRecord> records;
  records.reserve(kept.size());
  for (auto& k : kept) records.push_back(std::move(k.rec));
  return DomainData(std::move(records));
}

inline DomainData load_ratings(const std::string& path, RatingRange range = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open ratings file '" + path + "'");
  try {
    return parse_ratings(in, range);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline void write_ratings(std::ostream& out, const DomainData& data) {
  out.precision(17);
  for (const auto& r : data.records()) {
    out << r.user_id << '\t' << r.item_id << '\t' << r.rating << '\t' << r.timestamp << '\n';
  }
}

// Users present in both domains, in source-domain index order.
inline std::vector<std::string> overlapping_users(const DomainData& source,
                                                  const DomainData& target) {
  std::vector<std::string> out;
  for (const auto& id : source.users().ids()) {
    if (target.users().contains(id)) out.push_back(id);
  }
  return out;
}

struct ColdStartSplit {
  std::vector<std::string> overlap_train;
  std::vector<std::string> cold_start_test;
  double fraction = 0.0;
  std::uint64_t seed = 0;

  bool is_test(const std::string& user_id) const {
    return std::find(cold_start_test.begin(), cold_start_test.end(), user_id) !=
           cold_start_test.end();
  }
};

// Randomly hold out round(fraction * |overlap|) overlapping users as the
// cold-start test set. Deterministic in (inputs, seed).
inline ColdStartSplit split_cold_start(const DomainData& source, const DomainData& target,
                                       double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("cold-start fraction must lie in (0, 1), got " + std::to_string(fraction));
  }
  auto overlap = overlapping_users(source, target);
  if (overlap.empty()) throw DataError("no overlapping users");

  CounterRng rng(seed, 0x5B117);
  rng.shuffle(overlap);
  const auto n_test =
      static_cast<std::size_t>(std::lround(fraction * static_cast<double>(overlap.size())));

  ColdStartSplit split;
  split.fraction = fraction;
  split.seed = seed;
  split.cold_start_test.assign(overlap.begin(), overlap.begin() + n_test);
  split.overlap_train.assign(overlap.begin() + n_test, overlap.end());
  // Report in source index order so manifests are stable and readable.
  auto by_source = [&](const std::string& a, const std::string& b) {
    return source.users().index_of(a) < source.users().index_of(b);
  };
  std::sort(split.cold_start_test.begin(), split.cold_start_test.end(), by_source);
  std::sort(split.overlap_train.begin(), split.overlap_train.end(), by_source);
  return split;
}

inline void write_split_manifest(std::ostream& out, const ColdStartSplit& split) {
  for (const auto& u : split.overlap_train) out << u << "\ttrain\n";
  for (const auto& u : split.cold_start_test) out << u << "\ttest\n";
}

struct History {
  std::string user_id;
  std::vector<int> item_indices;  // source-domain item indices, oldest first
  int max_len = 0;
};

// Chronological source history, keeping the most recent max_len items.
// Timestamp ties keep file order.
inline History build_history(const std::string& user_id, const DomainData& source, int max_len) {
  if (max_len <= 0) throw ConfigError("max history length must be positive");
  const int u = source.users().index_of(user_id);
  if (u < 0) throw DataError("empty history: user '" + user_id + "' not in source domain");
  auto recs = source.records_of(u);
  if (recs.empty()) throw DataError("empty history: user '" + user_id + "'");
  std::stable_sort(recs.begin(), recs.end(), [](const RatingRecord* a, const RatingRecord* b) {
    return a->timestamp < b->timestamp;
  });
  const std::size_t n = recs.size();
  const std::size_t keep = std::min<std::size_t>(n, static_cast<std::size_t>(max_len));
  History h{user_id, {}, max_len};
  h.item_indices.reserve(keep);
  for (std::size_t k = n - keep; k < n; ++k) {
    h.item_indices.push_back(source.items().index_of(recs[k]->item_id));
  }
  return h;
}

// One target-domain rating of an overlapping training user.
struct TrainExample {
  int user = 0;     // source-domain user index (row of the user table)
  int history = 0;  // index into TrainingSet::histories
  int item = 0;     // target-domain item index
  double rating = 0.0;
};

struct TrainingSet {
  std::vector<std::vector<int>> histories;
  std::vector<TrainExample> examples;
  std::size_t excluded_empty_history = 0;
};

// Held-out ratings of a cold-start user.
struct TestCase {
  std::string user_id;
  int user = 0;
  std::vector<int> history;
  std::vector<std::pair<int, double>> ratings;  // (target item index, rating)
};

// Target ratings of training users only: test users' target records are never
// requested, which the access observer on `target` can verify.
inline TrainingSet build_training_set(const DomainData& source, const DomainData& target,
                                      const ColdStartSplit& split, int max_len) {
  TrainingSet ts;
  for (const auto& uid : split.overlap_train) {
    const int su = source.users().index_of(uid);
    if (su < 0 || source.records_of(su).empty()) {
      ++ts.excluded_empty_history;
      continue;
    }
    const int hist = static_cast<int>(ts.histories.size());
    ts.histories.push_back(build_history(uid, source, max_len).item_indices);
    for (const RatingRecord* r : target.records_of(target.users().index_of(uid))) {
      ts.examples.push_back({su, hist, target.items().index_of(r->item_id), r->rating});
    }
  }
  return ts;
}

inline std::vector<TestCase> build_test_cases(const DomainData& source, const DomainData& target,
                                              const ColdStartSplit& split, int max_len) {
  std::vector<TestCase> cases;
  for (const auto& uid : split.cold_start_test) {
    const int su = source.users().index_of(uid);
    if (su < 0 || source.records_of(su).empty()) continue;
    TestCase tc{uid, su, build_history(uid, source, max_len).item_indices, {}};
    for (const RatingRecord* r : target.records_of(target.users().index_of(uid))) {
      tc.ratings.emplace_back(target.items().index_of(r->item_id), r->rating);
    }
    if (!tc.ratings.empty()) cases.push_back(std::move(tc));
  }
  return cases;
}

struct DomainStats {
  int users = 0;
  int items = 0;
  std::size_t ratings = 0;
};

struct ScenarioStats {
  DomainStats source;
  DomainStats target;
  std::size_t overlap = 0;
};

inline ScenarioStats scenario_stats(const DomainData& source, const DomainData& target) {
  return {{source.num_users(), source.num_items(), source.num_records()},
          {target.num_users(), target.num_items(), target.num_records()},
          overlapping_users(source, target).size()};
}

}  // namespace dmcdr
