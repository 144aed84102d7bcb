#pragma once

// Episodic dataset with per-space nearest-neighbour indices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "core.hpp"

namespace sgim {

struct Neighbor {
  std::size_t record = 0;
  double distance = 0.0;
};

class EpisodicMemory {
 public:
  EpisodicMemory() = default;
  explicit EpisodicMemory(std::vector<OutcomeSpace> spaces) : spaces_(std::move(spaces)) {
    index_.resize(spaces_.size());
    displacements_.resize(spaces_.size());
    p95_.assign(spaces_.size(), 0.0);
  }

  const std::vector<OutcomeSpace>& spaces() const { return spaces_; }
  const OutcomeSpace& space(SpaceId id) const { return spaces_.at(static_cast<std::size_t>(id.value)); }
  std::size_t size() const { return records_.size(); }
  const EpisodeRecord& at(std::size_t i) const { return records_.at(i); }
  const std::vector<EpisodeRecord>& records() const { return records_; }

  /// Number of indexed outcomes in a space.
  std::size_t index_size(SpaceId id) const { return index_.at(static_cast<std::size_t>(id.value)).size(); }
  bool has_data(SpaceId id) const { return index_size(id) > 0; }

  /// Appends a record and returns its id. Throws (memory unchanged) when the
  /// record is malformed.
  std::size_t record(EpisodeRecord rec) {
    validate(rec);
    const std::size_t id = records_.size();
    if (!rec.failed) {
      for (std::size_t s = 0; s < spaces_.size(); ++s)
        if (rec.reached[s]) index_[s].push_back({*rec.reached[s], id});
    }
    for (const auto& step : rec.steps) {
      for (std::size_t s = 0; s < spaces_.size() && s < step.before.size() && s < step.after.size(); ++s) {
        if (!step.before[s] || !step.after[s]) continue;
        const double d = distance(*step.before[s], *step.after[s]);
        if (d > 0.0) displacements_[s].push_back(d);
      }
    }
    if (!rec.steps.empty())
      for (std::size_t s = 0; s < spaces_.size(); ++s) p95_[s] = percentile95(displacements_[s]);
    records_.push_back(std::move(rec));
    return id;
  }

  /// Up to k records sorted by distance of their reached outcome in `space`
  /// to `value`; ties go to the earlier episode.
  std::vector<Neighbor> nearest(SpaceId space, std::span<const double> value, std::size_t k) const {
    if (k == 0) throw Error("nearest: k must be at least 1");
    const auto& idx = index_.at(static_cast<std::size_t>(space.value));
    std::vector<Neighbor> all;
    all.reserve(idx.size());
    for (const auto& e : idx) all.push_back({e.record, squared_distance(e.value, value)});
    auto cmp = [](const Neighbor& a, const Neighbor& b) {
      return a.distance < b.distance || (a.distance == b.distance && a.record < b.record);
    };
    const std::size_t n = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), cmp);
    all.resize(n);
    for (auto& nb : all) nb.distance = std::sqrt(nb.distance);
    return all;
  }

  /// Calls fn(record id, reached value) for every indexed outcome of a space,
  /// in insertion order.
  template <class Fn>
  void for_each_in(SpaceId space, Fn&& fn) const {
    for (const auto& e : index_.at(static_cast<std::size_t>(space.value))) fn(e.record, e.value);
  }

  /// 95th percentile of nonzero one-primitive displacements in a space; 0
  /// when nothing moved yet.
  double reach(SpaceId space) const { return p95_.at(static_cast<std::size_t>(space.value)); }

  static double percentile95(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto pos = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size()))) - 1;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(pos), v.end());
    return v[pos];
  }

 private:
  struct Entry {
    Vec value;
    std::size_t record;
  };

  void validate(const EpisodeRecord& rec) const {
    if (rec.episode != records_.size()) throw Error("record: episode id must equal the record count");
    if (rec.reached.size() != spaces_.size()) throw Error("record: one reached entry per space required");
    if (rec.goal.space.value < 0 || static_cast<std::size_t>(rec.goal.space.value) >= spaces_.size())
      throw Error("record: unknown goal space");
    if (rec.lc.empty()) throw Error("record: empty controllable sequence");
    if (!rec.failed && rec.action.empty()) throw Error("record: empty action");
    for (const auto& p : rec.action.primitives)
      if (!p.within_bounds()) throw Error("record: primitive out of bounds");
    for (std::size_t s = 0; s < spaces_.size(); ++s) {
      if (!rec.reached[s]) continue;
      if (!spaces_[s].contains(*rec.reached[s])) throw Error("record: reached outcome outside its space");
    }
    if (!(rec.competence >= -1.0 && rec.competence <= 0.0)) throw Error("record: competence outside [-1,0]");
  }

  std::vector<OutcomeSpace> spaces_;
  std::vector<EpisodeRecord> records_;
  std::vector<std::vector<Entry>> index_;
  std::vector<std::vector<double>> displacements_;
  std::vector<double> p95_;
};

}  // namespace sgim
