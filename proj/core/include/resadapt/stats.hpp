#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resadapt/common.hpp"

namespace resadapt {

// Unweighted average recall: mean of per-class recalls over the classes
// that actually occur in labels.
double uar(const std::vector<std::int64_t>& predictions,
           const std::vector<std::int64_t>& labels, std::int64_t n_classes);

// alpha / n_comparisons.
double bonferroni(double alpha, int n_comparisons);

// Inverse standard normal CDF (Acklam's rational approximation,
// |relative error| < 1.15e-9 over (0,1)).
double normal_quantile(double p);

// Violation ratio of "A stochastically dominates B" on a uniform quantile
// grid: integral of (qA - qB)^2 where qA < qB, divided by the squared
// 2-Wasserstein distance. Returns 0.5 when the distance is zero.
double eps_w2(const std::vector<double>& scores_a,
              const std::vector<double>& scores_b, int grid_points = 1000);

struct AsoResult {
  double eps_min = 0.5;        // upper confidence bound, clamped to [0,1]
  double point_estimate = 0.5; // eps_w2 on the full samples
  double alpha_used = 0.05;
  int n_bootstrap = 1000;
  bool dominant() const { return eps_min < 0.5; }
};

// Almost Stochastic Order test: point estimate plus a one-sided (1-alpha)
// upper confidence bound from the bootstrap standard deviation.
AsoResult aso(const std::vector<double>& scores_a,
              const std::vector<double>& scores_b, double alpha,
              int n_bootstrap = 1000, int grid_points = 1000,
              std::uint64_t seed = 0);

// One line of the JSONL score file.
struct ScoreRecord {
  std::string model_id;
  std::string corpus_id;
  std::uint64_t seed = 0;
  double dev_uar = 0.0;
  double test_uar = 0.0;
};

void append_score(const std::string& path, const ScoreRecord& record);
std::vector<ScoreRecord> load_scores(const std::string& path);

// Test-UAR samples of one (model, corpus) pair, in file order.
std::vector<double> collect_scores(const std::vector<ScoreRecord>& records,
                                   const std::string& model_id,
                                   const std::string& corpus_id);

struct DominanceMatrix {
  std::vector<std::string> model_ids;    // order of first appearance
  std::vector<double> cells;             // row-major eps_min means
  double at(std::size_t i, std::size_t j) const {
    return cells[i * model_ids.size() + j];
  }
};

// Pairwise mean eps_min over the common corpus set, with alpha Bonferroni-
// adjusted by the number of corpora. Every model must cover the same
// corpora; the diagonal is 0.5 by the identical-distribution convention.
DominanceMatrix dominance_matrix(const std::vector<ScoreRecord>& records,
                                 double alpha, int n_bootstrap = 1000,
                                 std::uint64_t seed = 0);

void save_dominance_csv(const DominanceMatrix& matrix,
                        const std::string& path);

}  // namespace resadapt
