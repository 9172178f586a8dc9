#include "resadapt/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "resadapt/rng.hpp"

namespace resadapt {

double uar(const std::vector<std::int64_t>& predictions,
           const std::vector<std::int64_t>& labels, std::int64_t n_classes) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw std::invalid_argument("uar: empty or mismatched inputs");
  std::vector<std::int64_t> correct(static_cast<std::size_t>(n_classes), 0);
  std::vector<std::int64_t> total(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int64_t y = labels[i];
    if (y < 0 || y >= n_classes)
      throw std::invalid_argument("uar: label out of range");
    if (predictions[i] < 0 || predictions[i] >= n_classes)
      throw std::invalid_argument("uar: prediction out of range");
    ++total[static_cast<std::size_t>(y)];
    if (predictions[i] == y) ++correct[static_cast<std::size_t>(y)];
  }
  double sum = 0.0;
  int present = 0;
  for (std::int64_t c = 0; c < n_classes; ++c) {
    if (total[static_cast<std::size_t>(c)] == 0) continue;  // absent class
    sum += static_cast<double>(correct[static_cast<std::size_t>(c)]) /
           static_cast<double>(total[static_cast<std::size_t>(c)]);
    ++present;
  }
  return sum / present;
}

double bonferroni(double alpha, int n_comparisons) {
  if (n_comparisons < 1)
    throw std::invalid_argument("bonferroni: n_comparisons < 1");
  return alpha / n_comparisons;
}

double normal_quantile(double p) {
  if (p <= 0.0 || p >= 1.0)
    throw std::invalid_argument("normal_quantile: p must be in (0,1)");
  // Acklam's algorithm: rational approximations on three regions.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
            c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r +
            a[5]) *
           q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r +
            1.0);
  }
  const double q = std::sqrt(-2.0 * std::log(1.0 - p));
  return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
           c[5]) /
         ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
}

namespace {

// Empirical quantile at level t of a sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double t) {
  const std::size_t n = sorted.size();
  const double scaled = t * static_cast<double>(n);
  std::size_t k = static_cast<std::size_t>(std::ceil(scaled));
  if (k < 1) k = 1;
  if (k > n) k = n;
  return sorted[k - 1];
}

double eps_w2_sorted(const std::vector<double>& sorted_a,
                     const std::vector<double>& sorted_b, int grid_points) {
  double violation = 0.0, total = 0.0;
  for (int i = 0; i < grid_points; ++i) {
    const double t = (i + 0.5) / grid_points;
    const double qa = quantile_sorted(sorted_a, t);
    const double qb = quantile_sorted(sorted_b, t);
    const double d = qa - qb;
    total += d * d;
    if (qa < qb) violation += d * d;
  }
  if (total == 0.0) return 0.5;  // identical distributions on the grid
  return violation / total;
}

}  // namespace

double eps_w2(const std::vector<double>& scores_a,
              const std::vector<double>& scores_b, int grid_points) {
  if (scores_a.size() < 2 || scores_b.size() < 2)
    throw std::invalid_argument("eps_w2: need >= 2 scores per side");
  if (grid_points < 1) throw std::invalid_argument("eps_w2: empty grid");
  std::vector<double> a = scores_a, b = scores_b;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return eps_w2_sorted(a, b, grid_points);
}

AsoResult aso(const std::vector<double>& scores_a,
              const std::vector<double>& scores_b, double alpha,
              int n_bootstrap, int grid_points, std::uint64_t seed) {
  if (scores_a.size() < 2 || scores_b.size() < 2)
    throw std::invalid_argument("aso: need >= 2 scores per side");
  if (alpha <= 0.0 || alpha >= 1.0)
    throw std::invalid_argument("aso: alpha must be in (0,1)");

  AsoResult result;
  result.alpha_used = alpha;
  result.n_bootstrap = n_bootstrap;

  std::vector<double> a = scores_a, b = scores_b;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());

  // zero-distance convention: identical empirical distributions
  double distance = 0.0;
  for (int i = 0; i < grid_points; ++i) {
    const double t = (i + 0.5) / grid_points;
    const double d = quantile_sorted(a, t) - quantile_sorted(b, t);
    distance += d * d;
  }
  if (distance == 0.0) {
    result.eps_min = 0.5;
    result.point_estimate = 0.5;
    return result;
  }

  result.point_estimate = eps_w2_sorted(a, b, grid_points);

  // bootstrap standard deviation of the violation ratio
  Rng root(seed);
  std::vector<double> resampled;
  resampled.reserve(static_cast<std::size_t>(n_bootstrap));
  std::vector<double> ra(a.size()), rb(b.size());
  for (int i = 0; i < n_bootstrap; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    for (auto& v : ra)
      v = a[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(a.size()) - 1))];
    for (auto& v : rb)
      v = b[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(b.size()) - 1))];
    std::sort(ra.begin(), ra.end());
    std::sort(rb.begin(), rb.end());
    resampled.push_back(eps_w2_sorted(ra, rb, grid_points));
  }
  double mean = 0.0;
  for (const double e : resampled) mean += e;
  mean /= resampled.size();
  double var = 0.0;
  for (const double e : resampled) var += (e - mean) * (e - mean);
  var /= resampled.size();
  const double stddev = std::sqrt(var);

  const double bound =
      result.point_estimate + normal_quantile(1.0 - alpha) * stddev;
  result.eps_min = std::clamp(bound, 0.0, 1.0);
  return result;
}

void append_score(const std::string& path, const ScoreRecord& record) {
  nlohmann::json j{{"model_id", record.model_id},
                   {"corpus_id", record.corpus_id},
                   {"seed", record.seed},
                   {"dev_uar", record.dev_uar},
                   {"test_uar", record.test_uar}};
  std::ofstream f(path, std::ios::app);
  if (!f) throw DataError("cannot append to score file: " + path);
  f << j.dump() << "\n";
}

std::vector<ScoreRecord> load_scores(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open score file: " + path);
  std::vector<ScoreRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": malformed score line: " + e.what());
    }
    ScoreRecord r;
    r.model_id = j.at("model_id").get<std::string>();
    r.corpus_id = j.at("corpus_id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.dev_uar = j.at("dev_uar").get<double>();
    r.test_uar = j.at("test_uar").get<double>();
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<double> collect_scores(const std::vector<ScoreRecord>& records,
                                   const std::string& model_id,
                                   const std::string& corpus_id) {
  std::vector<double> out;
  for (const auto& r : records)
    if (r.model_id == model_id && r.corpus_id == corpus_id)
      out.push_back(r.test_uar);
  return out;
}

DominanceMatrix dominance_matrix(const std::vector<ScoreRecord>& records,
                                 double alpha, int n_bootstrap,
                                 std::uint64_t seed) {
  DominanceMatrix matrix;
  std::vector<std::string> corpora;
  for (const auto& r : records) {
    if (std::find(matrix.model_ids.begin(), matrix.model_ids.end(),
                  r.model_id) == matrix.model_ids.end())
      matrix.model_ids.push_back(r.model_id);
    if (std::find(corpora.begin(), corpora.end(), r.corpus_id) ==
        corpora.end())
      corpora.push_back(r.corpus_id);
  }
  if (matrix.model_ids.empty())
    throw DataError("dominance_matrix: no score records");

  // every model must cover the same corpus set
  for (const auto& model : matrix.model_ids)
    for (const auto& corpus : corpora)
      if (collect_scores(records, model, corpus).size() < 2)
        throw DataError("dominance_matrix: model " + model +
                        " has fewer than 2 scores on corpus " + corpus);

  const double adjusted =
      bonferroni(alpha, static_cast<int>(corpora.size()));
  const std::size_t m = matrix.model_ids.size();
  matrix.cells.assign(m * m, 0.5);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;  // diagonal stays at the 0.5 convention
      double mean = 0.0;
      for (const auto& corpus : corpora) {
        const auto sa = collect_scores(records, matrix.model_ids[i], corpus);
        const auto sb = collect_scores(records, matrix.model_ids[j], corpus);
        const std::string pair_key =
            matrix.model_ids[i] + "|" + matrix.model_ids[j] + "|" + corpus;
        const std::uint64_t pair_seed =
            fnv1a64(pair_key.data(), pair_key.size(), seed);
        mean += aso(sa, sb, adjusted, n_bootstrap, 1000, pair_seed).eps_min;
      }
      matrix.cells[i * m + j] = mean / corpora.size();
    }
  }
  return matrix;
}

void save_dominance_csv(const DominanceMatrix& matrix,
                        const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write dominance matrix: " + path);
  f << "model";
  for (const auto& id : matrix.model_ids) f << ',' << id;
  f << '\n';
  const std::size_t m = matrix.model_ids.size();
  for (std::size_t i = 0; i < m; ++i) {
    f << matrix.model_ids[i];
    for (std::size_t j = 0; j < m; ++j) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", matrix.at(i, j));
      f << ',' << buf;
    }
    f << '\n';
  }
}

}  // namespace resadapt
