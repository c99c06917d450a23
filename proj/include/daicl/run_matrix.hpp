#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "daicl/train.hpp"
#include "daicl/variant.hpp"

namespace daicl::bench {

struct Cell {
  Variant variant = Variant::NoIcl;
  std::string scenario;
  std::uint64_t seed = 0;
  double metric = 0.0;
  bool failed = false;
  std::string error;
};

struct Aggregate {
  Variant variant = Variant::NoIcl;
  std::string scenario;
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
  std::optional<double> p_vs_baseline;  // Welch, two-sided; absent for the baseline itself
  bool significant = false;              // p < 0.05 and mean above the baseline
};

class RunMatrix {
 public:
  void add(Cell c) { cells_.push_back(std::move(c)); }
  const std::vector<Cell>& cells() const { return cells_; }

  std::vector<std::string> scenarios() const;  // first-seen order
  std::vector<Variant> variants() const;
  std::vector<double> metrics(Variant v, const std::string& scenario) const;  // successful cells
  std::vector<Aggregate> aggregates(Variant baseline = Variant::NoIcl) const;

 private:
  std::vector<Cell> cells_;
};

struct Scenario {
  std::string name;
  train::TaskData data;
};

using Progress = std::function<void(const Cell&)>;

// Trains and evaluates (on target_test) every variant x scenario x seed. Failed cells are
// recorded with their error message instead of aborting the matrix.
RunMatrix run_matrix(std::span<const Scenario> scenarios, std::span<const Variant> variants,
                     std::span<const std::uint64_t> seeds, ModelKind kind,
                     const train::TrainConfig& cfg, const Progress& progress = {});

std::string render_csv(const RunMatrix& m);
nlohmann::json render_json(const RunMatrix& m);
// Rows are variants, columns scenarios plus an average; cells read "mean±std" in percent
// with a dagger when significantly above the baseline row.
std::string render_table(const RunMatrix& m);

}  // namespace daicl::bench
