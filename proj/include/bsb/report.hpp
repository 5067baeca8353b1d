#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bsb/membership.hpp"

namespace bsb {

// One measurement row per (dataset, model family, Bayesian flag). Percent
// fields are in [0, 100].
struct ResultRow {
  std::string dataset;
  std::string model;
  bool bayesian = false;
  double test_accuracy = 0.0;
  double hsj_efficacy = 0.0;
  double boundary_efficacy = 0.0;
  double mi_accuracy = 0.0;
  double mi_auc = 0.0;
  double queries_mean_hsj = 0.0;
  double queries_mean_boundary = 0.0;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

// Half-up rounding to `decimals` places for display. Aggregates are
// computed on unrounded values and only rounded here.
double round_half_up(double value, int decimals = 2);

struct MiAggregate {
  std::string dataset;
  bool bayesian = false;
  double mean_mi_accuracy = 0.0;
};

// Mean MI accuracy grouped by (dataset, bayesian), in first-seen dataset
// order with the Bayesian group first.
std::vector<MiAggregate> aggregate_mi_by_variant(std::span<const ResultRow> rows);

struct AdvAggregate {
  std::string dataset;
  double mean_hsj = 0.0;
  double mean_boundary = 0.0;
};

std::vector<AdvAggregate> aggregate_adv_by_dataset(std::span<const ResultRow> rows);

inline constexpr const char* kResultsHeader =
    "dataset,model,bayesian,test_acc,hsj_pct,boundary_pct,mi_acc,mi_auc,q_hsj,q_boundary";

// Rows sorted by (dataset, model, bayesian); two decimals, four for AUC.
std::string format_results_csv(std::vector<ResultRow> rows);
std::vector<ResultRow> parse_results_csv(const std::string& text);

void emit_csv(std::span<const ResultRow> rows, const std::filesystem::path& path);
std::vector<ResultRow> load_results_csv(const std::filesystem::path& path);

struct NamedRoc {
  std::string name;
  RocCurve roc;
};

// Unit-square ROC plot: axes labelled FPR/TPR, a dashed chance diagonal, and
// one polyline plus legend entry (with AUC) per curve.
std::string render_roc_svg(std::span<const NamedRoc> curves, const std::string& title = "");
void emit_roc_svg(std::span<const NamedRoc> curves, const std::filesystem::path& path,
                  const std::string& title = "");

RocCurve load_roc_csv(const std::filesystem::path& path);

}  // namespace bsb
