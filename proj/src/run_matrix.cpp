#include "daicl/run_matrix.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "daicl/common.hpp"
#include "daicl/stats.hpp"

namespace daicl::bench {

namespace {

std::string pct(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", 100.0 * mean, 100.0 * std);
  return buf;
}

}  // namespace

std::vector<std::string> RunMatrix::scenarios() const {
  std::vector<std::string> out;
  for (const auto& c : cells_)
    if (std::find(out.begin(), out.end(), c.scenario) == out.end()) out.push_back(c.scenario);
  return out;
}

std::vector<Variant> RunMatrix::variants() const {
  std::vector<Variant> out;
  for (const auto& c : cells_)
    if (std::find(out.begin(), out.end(), c.variant) == out.end()) out.push_back(c.variant);
  return out;
}

std::vector<double> RunMatrix::metrics(Variant v, const std::string& scenario) const {
  std::vector<double> out;
  for (const auto& c : cells_)
    if (c.variant == v && c.scenario == scenario && !c.failed) out.push_back(c.metric);
  return out;
}

std::vector<Aggregate> RunMatrix::aggregates(Variant baseline) const {
  std::vector<Aggregate> out;
  for (const auto& s : scenarios()) {
    const auto base = metrics(baseline, s);
    for (auto v : variants()) {
      Aggregate a;
      a.variant = v;
      a.scenario = s;
      const auto xs = metrics(v, s);
      a.n = xs.size();
      a.mean = stats::mean(xs);
      a.std = stats::sample_std(xs);
      if (v != baseline && xs.size() >= 2 && base.size() >= 2) {
        a.p_vs_baseline = stats::welch_t_test(base, xs).p;
        a.significant = *a.p_vs_baseline < 0.05 && a.mean > stats::mean(base);
      }
      out.push_back(std::move(a));
    }
  }
  return out;
}

RunMatrix run_matrix(std::span<const Scenario> scenarios, std::span<const Variant> variants,
                     std::span<const std::uint64_t> seeds, ModelKind kind,
                     const train::TrainConfig& cfg, const Progress& progress) {
  RunMatrix m;
  for (const auto& sc : scenarios) {
    for (auto v : variants) {
      for (auto seed : seeds) {
        Cell c;
        c.variant = v;
        c.scenario = sc.name;
        c.seed = seed;
        try {
          train::TrainConfig run = cfg;
          run.seed = seed;
          const auto res = train::train(v, kind, sc.data, run);
          c.metric = train::evaluate(res, v, kind, sc.data, sc.data.target_test, run).metric;
        } catch (const std::exception& e) {
          c.failed = true;
          c.error = e.what();
        }
        if (progress) progress(c);
        m.add(std::move(c));
      }
    }
  }
  return m;
}

std::string render_csv(const RunMatrix& m) {
  std::ostringstream out;
  out << "variant,scenario,seed,metric\n";
  char buf[64];
  for (const auto& c : m.cells()) {
    out << to_string(c.variant) << ',' << c.scenario << ',' << c.seed << ',';
    if (c.failed) {
      out << "nan\n";
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", c.metric);
      out << buf << '\n';
    }
  }
  return out.str();
}

nlohmann::json render_json(const RunMatrix& m) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : m.cells()) {
    nlohmann::json j{{"variant", std::string(to_string(c.variant))},
                     {"scenario", c.scenario},
                     {"seed", c.seed},
                     {"failed", c.failed}};
    if (c.failed) j["error"] = c.error;
    else j["metric"] = c.metric;
    cells.push_back(std::move(j));
  }
  nlohmann::json aggs = nlohmann::json::array();
  for (const auto& a : m.aggregates()) {
    nlohmann::json j{{"variant", std::string(to_string(a.variant))},
                     {"scenario", a.scenario},
                     {"n", a.n},
                     {"mean", a.mean},
                     {"std", a.std},
                     {"significant", a.significant}};
    j["p_vs_no_icl"] = a.p_vs_baseline ? nlohmann::json(*a.p_vs_baseline) : nlohmann::json(nullptr);
    aggs.push_back(std::move(j));
  }
  return {{"cells", cells}, {"aggregates", aggs}};
}

std::string render_table(const RunMatrix& m) {
  const auto scen = m.scenarios();
  const auto aggs = m.aggregates();
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"Variant"};
  for (const auto& s : scen) header.push_back(s);
  header.push_back("Ave.");
  rows.push_back(header);
  for (auto v : m.variants()) {
    std::vector<std::string> row{std::string(to_string(v))};
    double sum = 0.0;
    for (const auto& s : scen) {
      auto it = std::find_if(aggs.begin(), aggs.end(),
                             [&](const Aggregate& a) { return a.variant == v && a.scenario == s; });
      if (it == aggs.end() || it->n == 0) {
        row.push_back("-");
        continue;
      }
      row.push_back(pct(it->mean, it->std) + (it->significant ? "†" : ""));
      sum += it->mean;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", scen.empty() ? 0.0 : 100.0 * sum / static_cast<double>(scen.size()));
    row.push_back(buf);
    rows.push_back(std::move(row));
  }
  // "†" is 3 bytes but one column wide.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> w(header.size(), 0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], width(r[i]));
  std::ostringstream out;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    for (std::size_t i = 0; i < rows[ri].size(); ++i) {
      out << (i ? "  " : "") << rows[ri][i] << std::string(w[i] - width(rows[ri][i]), ' ');
    }
    out << '\n';
    if (ri == 0) {
      std::size_t total = 0;
      for (auto x : w) total += x + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

}  // namespace daicl::bench
