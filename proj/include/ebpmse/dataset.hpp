#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ebpmse/error.hpp"

namespace ebpmse {

using AreaId = long long;
using UnitId = long long;

// One row of the unit-level input. Sampled units carry y; population units
// that were not sampled carry covariates only.
struct UnitRecord {
  AreaId area_id = 0;
  UnitId unit_id = 0;
  bool sampled = false;
  std::optional<double> y;
  std::vector<double> x;  // first entry is 1 for the intercept
  std::optional<double> unit_weight;
  std::optional<double> area_weight;
  double variance_scale = 1.0;

  friend bool operator==(const UnitRecord&, const UnitRecord&) = default;
};

// All units of one small area. Rows of x and v are ordered sampled units
// first (matching y and w), then nonsampled units.
struct Area {
  AreaId id = 0;
  bool sampled = false;
  std::optional<double> weight;  // area-level survey weight w_i
  std::vector<UnitId> unit_ids;
  Eigen::MatrixXd x;
  Eigen::VectorXd v;
  Eigen::VectorXd y;  // length n
  Eigen::VectorXd w;  // length n, or empty when unit weights are absent

  Eigen::Index n() const noexcept { return y.size(); }
  Eigen::Index N() const noexcept { return x.rows(); }
  Eigen::Index nonsampled() const noexcept { return N() - n(); }
  bool has_unit_weights() const noexcept { return w.size() == n() && n() > 0; }
};

class SampleDataset {
 public:
  SampleDataset() = default;

  explicit SampleDataset(std::vector<Area> areas) : areas_(std::move(areas)) {
    validate();
  }

  static SampleDataset from_records(const std::vector<UnitRecord>& records) {
    if (records.empty()) throw ValidationError("dataset has no records");
    std::vector<Area> areas;
    std::map<AreaId, std::size_t> index;
    std::set<std::pair<AreaId, UnitId>> seen;
    // Two passes keep sampled rows ahead of nonsampled rows inside an area.
    struct Pending {
      std::vector<const UnitRecord*> s, ns;
    };
    std::vector<Pending> pending;
    const std::size_t p = records.front().x.size();
    for (std::size_t r = 0; r < records.size(); ++r) {
      const auto& rec = records[r];
      const std::string where = "record " + std::to_string(r + 1) + ": ";
      if (!seen.emplace(rec.area_id, rec.unit_id).second)
        throw ValidationError(where + "duplicate (area_id, unit_id) = (" +
                              std::to_string(rec.area_id) + ", " +
                              std::to_string(rec.unit_id) + ")");
      if (rec.x.size() != p || p == 0)
        throw ValidationError(where + "covariate vector length differs from first record");
      if (!(rec.variance_scale > 0.0) || !std::isfinite(rec.variance_scale))
        throw ValidationError(where + "variance_scale must be positive");
      if (rec.sampled && !rec.y) throw ValidationError(where + "sampled unit without y");
      if (!rec.sampled && rec.y) throw ValidationError(where + "y given for a nonsampled unit");
      if (rec.y && !std::isfinite(*rec.y)) throw ValidationError(where + "y is not finite");
      if (rec.unit_weight && !(*rec.unit_weight > 0.0))
        throw ValidationError(where + "unit weight must be positive");
      if (rec.area_weight && !(*rec.area_weight > 0.0))
        throw ValidationError(where + "area weight must be positive");
      auto [it, inserted] = index.emplace(rec.area_id, areas.size());
      if (inserted) {
        areas.emplace_back();
        areas.back().id = rec.area_id;
        pending.emplace_back();
      }
      auto& area = areas[it->second];
      if (rec.area_weight) {
        if (area.weight && *area.weight != *rec.area_weight)
          throw ValidationError(where + "inconsistent area weight within area " +
                                std::to_string(rec.area_id));
        area.weight = rec.area_weight;
      }
      (rec.sampled ? pending[it->second].s : pending[it->second].ns).push_back(&rec);
    }
    for (std::size_t a = 0; a < areas.size(); ++a) {
      auto& area = areas[a];
      const auto& s = pending[a].s;
      const auto& ns = pending[a].ns;
      const auto N = static_cast<Eigen::Index>(s.size() + ns.size());
      area.sampled = !s.empty();
      area.x.resize(N, static_cast<Eigen::Index>(p));
      area.v.resize(N);
      area.y.resize(static_cast<Eigen::Index>(s.size()));
      std::size_t weighted = 0;
      for (auto* rec : s) weighted += rec->unit_weight.has_value();
      if (weighted != 0 && weighted != s.size())
        throw ValidationError("area " + std::to_string(area.id) +
                              ": unit weights present for some sampled units only");
      if (weighted) area.w.resize(static_cast<Eigen::Index>(s.size()));
      Eigen::Index row = 0;
      for (auto* rec : s) {
        area.unit_ids.push_back(rec->unit_id);
        for (std::size_t c = 0; c < p; ++c) area.x(row, static_cast<Eigen::Index>(c)) = rec->x[c];
        area.v(row) = rec->variance_scale;
        area.y(row) = *rec->y;
        if (weighted) area.w(row) = *rec->unit_weight;
        ++row;
      }
      for (auto* rec : ns) {
        area.unit_ids.push_back(rec->unit_id);
        for (std::size_t c = 0; c < p; ++c) area.x(row, static_cast<Eigen::Index>(c)) = rec->x[c];
        area.v(row) = rec->variance_scale;
        ++row;
      }
    }
    return SampleDataset(std::move(areas));
  }

  std::vector<UnitRecord> to_records() const {
    std::vector<UnitRecord> out;
    for (const auto& area : areas_) {
      for (Eigen::Index j = 0; j < area.N(); ++j) {
        UnitRecord rec;
        rec.area_id = area.id;
        rec.unit_id = area.unit_ids[static_cast<std::size_t>(j)];
        rec.sampled = j < area.n();
        if (rec.sampled) {
          rec.y = area.y(j);
          if (area.has_unit_weights()) rec.unit_weight = area.w(j);
        }
        rec.x.resize(static_cast<std::size_t>(area.x.cols()));
        for (Eigen::Index c = 0; c < area.x.cols(); ++c)
          rec.x[static_cast<std::size_t>(c)] = area.x(j, c);
        rec.area_weight = area.weight;
        rec.variance_scale = area.v(j);
        out.push_back(std::move(rec));
      }
    }
    return out;
  }

  const std::vector<Area>& areas() const noexcept { return areas_; }
  const Area& area(std::size_t index) const { return areas_.at(index); }
  std::size_t size() const noexcept { return areas_.size(); }
  Eigen::Index p() const noexcept { return areas_.empty() ? 0 : areas_.front().x.cols(); }

  std::optional<std::size_t> find(AreaId id) const {
    for (std::size_t i = 0; i < areas_.size(); ++i)
      if (areas_[i].id == id) return i;
    return std::nullopt;
  }

  std::size_t index_of(AreaId id) const {
    if (auto i = find(id)) return *i;
    throw MissingPopulationError(id);
  }

  std::vector<std::size_t> sampled_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < areas_.size(); ++i)
      if (areas_[i].sampled) out.push_back(i);
    return out;
  }

  Eigen::Index total_sampled() const noexcept {
    Eigen::Index n = 0;
    for (const auto& a : areas_) n += a.n();
    return n;
  }

  // Same covariates and design, different sampled responses (bootstrap data).
  SampleDataset with_responses(const std::vector<Eigen::VectorXd>& y) const {
    SampleDataset copy = *this;
    for (std::size_t i = 0; i < areas_.size(); ++i) {
      if (y[i].size() != areas_[i].n())
        throw ValidationError("with_responses: length mismatch");
      copy.areas_[i].y = y[i];
    }
    return copy;
  }

  friend bool operator==(const SampleDataset& a, const SampleDataset& b) {
    if (a.areas_.size() != b.areas_.size()) return false;
    for (std::size_t i = 0; i < a.areas_.size(); ++i) {
      const auto& l = a.areas_[i];
      const auto& r = b.areas_[i];
      if (l.id != r.id || l.sampled != r.sampled || l.weight != r.weight ||
          l.unit_ids != r.unit_ids || l.x.rows() != r.x.rows() || l.x.cols() != r.x.cols() ||
          l.x != r.x || l.v != r.v || l.y.size() != r.y.size() || l.y != r.y ||
          l.w.size() != r.w.size() || l.w != r.w)
        return false;
    }
    return true;
  }

 private:
  void validate() const {
    if (areas_.empty()) throw ValidationError("dataset has no areas");
    const auto p = areas_.front().x.cols();
    std::set<AreaId> ids;
    for (const auto& a : areas_) {
      const std::string where = "area " + std::to_string(a.id) + ": ";
      if (!ids.insert(a.id).second) throw ValidationError(where + "duplicate area id");
      if (a.x.cols() != p) throw ValidationError(where + "covariate dimension mismatch");
      if (a.v.size() != a.N()) throw ValidationError(where + "variance scale length mismatch");
      if (a.n() > a.N()) throw ValidationError(where + "more sampled units than population units");
      if (static_cast<Eigen::Index>(a.unit_ids.size()) != a.N())
        throw ValidationError(where + "unit id count mismatch");
      if (a.sampled != (a.n() > 0))
        throw ValidationError(where + "sampled flag disagrees with sample size");
      if (a.w.size() != 0 && a.w.size() != a.n())
        throw ValidationError(where + "unit weight length mismatch");
      for (Eigen::Index j = 0; j < a.v.size(); ++j)
        if (!(a.v(j) > 0.0)) throw ValidationError(where + "variance_scale must be positive");
      for (Eigen::Index j = 0; j < a.w.size(); ++j)
        if (!(a.w(j) > 0.0)) throw ValidationError(where + "unit weight must be positive");
      if (a.weight && !(*a.weight > 0.0)) throw ValidationError(where + "area weight must be positive");
    }
  }

  std::vector<Area> areas_;
};

}  // namespace ebpmse
