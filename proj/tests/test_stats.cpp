// Evaluation statistics: UAR, Bonferroni correction, the normal quantile,
// the stochastic-order test, score files, and the dominance matrix.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "resadapt/common.hpp"
#include "resadapt/rng.hpp"
#include "resadapt/stats.hpp"

using namespace resadapt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "resadapt-stats-tests";
  fs::create_directories(dir);
  return dir;
}

std::vector<double> normal_sample(double mean, double sd, int n,
                                  std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (double& v : out) v = rng.normal(mean, sd);
  return out;
}

}  // namespace

TEST_CASE("uar averages per-class recall over the classes present") {
  CHECK(uar({0, 1, 2}, {0, 1, 2}, 3) == 1.0);
  // Hand confusion matrix: class a recall 1/2, class b recall 1.
  CHECK(uar({0, 1, 1, 1}, {0, 0, 1, 1}, 2) == doctest::Approx(0.75));
  // Classes absent from the labels do not drag the mean down.
  CHECK(uar({0, 0, 1}, {0, 0, 1}, 5) == 1.0);
  // Always-predict-one-class on a two-class problem scores 0.5.
  CHECK(uar({1, 1, 1, 1}, {0, 0, 1, 1}, 2) == doctest::Approx(0.5));

  SUBCASE("chance level for random predictions is 1/C") {
    const std::int64_t C = 17;
    Rng rng(12);
    std::vector<std::int64_t> labels, preds;
    for (int i = 0; i < 20000; ++i) {
      labels.push_back(rng.uniform_int(0, C - 1));
      preds.push_back(rng.uniform_int(0, C - 1));
    }
    CHECK(uar(preds, labels, C) ==
          doctest::Approx(1.0 / static_cast<double>(C)).epsilon(0.15));
  }
  SUBCASE("input validation") {
    CHECK_THROWS_AS((void)uar({}, {}, 2), std::invalid_argument);
    CHECK_THROWS_AS((void)uar({0}, {0, 1}, 2), std::invalid_argument);
    CHECK_THROWS_AS((void)uar({0, 2}, {0, 1}, 2), std::invalid_argument);
    CHECK_THROWS_AS((void)uar({0, 1}, {0, -1}, 2), std::invalid_argument);
  }
}

TEST_CASE("bonferroni divides alpha by the comparison count") {
  CHECK(std::abs(bonferroni(0.05, 26) - 0.0019231) < 1e-7);
  CHECK(std::abs(bonferroni(0.05, 260) - 0.0001923) < 1e-7);
  CHECK(bonferroni(0.05, 1) == 0.05);
  CHECK_THROWS_AS((void)bonferroni(0.05, 0), std::invalid_argument);
}

TEST_CASE("normal quantile matches tabulated values") {
  CHECK(std::abs(normal_quantile(0.5)) < 1e-12);
  CHECK(std::abs(normal_quantile(0.975) - 1.959964) < 1e-5);
  CHECK(std::abs(normal_quantile(0.95) - 1.6448536) < 1e-5);
  CHECK(std::abs(normal_quantile(0.9999) - 3.7190165) < 1e-5);
  // Symmetry and monotonicity.
  for (const double p : {0.01, 0.1, 0.3, 0.45}) {
    CHECK(std::abs(normal_quantile(p) + normal_quantile(1.0 - p)) < 1e-9);
    CHECK(normal_quantile(p) < normal_quantile(p + 0.05));
  }
  CHECK_THROWS_AS((void)normal_quantile(0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)normal_quantile(1.0), std::invalid_argument);
}

TEST_CASE("eps_w2 violation ratio behaves at the extremes") {
  const std::vector<double> low{0.1, 0.2, 0.15, 0.25};
  const std::vector<double> high{0.7, 0.8, 0.75, 0.85};

  // No overlap: the higher sample dominates without violation.
  CHECK(eps_w2(high, low) == 0.0);
  CHECK(eps_w2(low, high) == 1.0);
  // Identical distributions have zero distance: convention 0.5.
  CHECK(eps_w2(low, low) == 0.5);

  SUBCASE("antisymmetry for overlapping samples") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto a = normal_sample(0.6, 0.1, 9, 100 + trial);
      const auto b = normal_sample(0.55, 0.12, 11, 200 + trial);
      const double ab = eps_w2(a, b);
      const double ba = eps_w2(b, a);
      CHECK(std::abs(ab + ba - 1.0) < 1e-9);
      CHECK(ab >= 0.0);
      CHECK(ab <= 1.0);
    }
  }
  SUBCASE("partial overlap lands strictly between the extremes") {
    const std::vector<double> a{0.4, 0.5, 0.6, 0.7};
    const std::vector<double> b{0.35, 0.55, 0.58, 0.72};
    const double e = eps_w2(a, b);
    CHECK(e > 0.0);
    CHECK(e < 1.0);
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS((void)eps_w2({0.1}, low), std::invalid_argument);
    CHECK_THROWS_AS((void)eps_w2(low, high, 0), std::invalid_argument);
  }
}

TEST_CASE("aso reports dominance with a bootstrap-corrected bound") {
  const std::vector<double> low{0.50, 0.52, 0.48, 0.51, 0.49};
  const std::vector<double> high{0.70, 0.72, 0.68, 0.71, 0.69};

  SUBCASE("identical samples short-circuit to 0.5") {
    const AsoResult r = aso(low, low, 0.05, 200);
    CHECK(r.point_estimate == 0.5);
    CHECK(r.eps_min == 0.5);
    CHECK_FALSE(r.dominant());
  }
  SUBCASE("strict dominance clamps to zero / one") {
    const AsoResult r = aso(high, low, 0.05, 200);
    CHECK(r.point_estimate == 0.0);
    CHECK(r.eps_min == 0.0);  // every resample dominates too
    CHECK(r.dominant());
    const AsoResult rev = aso(low, high, 0.05, 200);
    CHECK(rev.point_estimate == 1.0);
    CHECK(rev.eps_min == 1.0);
    CHECK_FALSE(rev.dominant());
  }
  SUBCASE("results are deterministic in the seed") {
    const auto a = normal_sample(0.62, 0.05, 10, 1);
    const auto b = normal_sample(0.58, 0.05, 10, 2);
    const AsoResult r1 = aso(a, b, 0.05, 500, 1000, 42);
    const AsoResult r2 = aso(a, b, 0.05, 500, 1000, 42);
    CHECK(r1.eps_min == r2.eps_min);
    CHECK(r1.point_estimate == r2.point_estimate);
    CHECK(r1.alpha_used == 0.05);
    CHECK(r1.n_bootstrap == 500);
  }
  SUBCASE("the bound is conservative: eps_min >= point estimate") {
    const auto a = normal_sample(0.62, 0.05, 12, 3);
    const auto b = normal_sample(0.60, 0.06, 12, 4);
    const AsoResult r = aso(a, b, 0.05, 300, 1000, 7);
    CHECK(r.eps_min >= r.point_estimate);
    CHECK(r.eps_min <= 1.0);
    CHECK(r.eps_min >= 0.0);
  }
  SUBCASE("clearly separated normals dominate in most seeded trials") {
    int dominant = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const auto a = normal_sample(0.7, 0.02, 10, 1000 + trial);
      const auto b = normal_sample(0.5, 0.02, 10, 2000 + trial);
      if (aso(a, b, 0.05, 300, 1000, static_cast<std::uint64_t>(trial))
              .dominant())
        ++dominant;
    }
    CHECK(dominant >= 18);
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS((void)aso({0.5}, low, 0.05), std::invalid_argument);
    CHECK_THROWS_AS((void)aso(low, high, 0.0), std::invalid_argument);
    CHECK_THROWS_AS((void)aso(low, high, 1.0), std::invalid_argument);
  }
}

TEST_CASE("score files round trip through jsonl") {
  const std::string path = (temp_dir() / "scores.jsonl").string();
  fs::remove(path);

  const std::vector<ScoreRecord> records{
      {"scratch", "corpusA", 0, 0.75, 0.70},
      {"scratch", "corpusA", 1, 0.80, 0.72},
      {"adapters", "corpusA", 0, 0.78, 0.74},
      {"scratch", "corpusB", 0, 0.60, 0.55},
  };
  for (const auto& r : records) append_score(path, r);
  const auto back = load_scores(path);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].model_id == records[i].model_id);
    CHECK(back[i].corpus_id == records[i].corpus_id);
    CHECK(back[i].seed == records[i].seed);
    CHECK(back[i].dev_uar == records[i].dev_uar);
    CHECK(back[i].test_uar == records[i].test_uar);
  }

  SUBCASE("collect_scores filters by model and corpus in file order") {
    CHECK(collect_scores(back, "scratch", "corpusA") ==
          std::vector<double>{0.70, 0.72});
    CHECK(collect_scores(back, "adapters", "corpusA") ==
          std::vector<double>{0.74});
    CHECK(collect_scores(back, "scratch", "corpusC").empty());
  }
  SUBCASE("malformed lines are reported with their line number") {
    const std::string bad = (temp_dir() / "bad.jsonl").string();
    std::ofstream out(bad);
    out << R"({"model_id":"m","corpus_id":"c","seed":0,)"
        << R"("dev_uar":0.5,"test_uar":0.5})" << "\n";
    out << "not json at all\n";
    out.close();
    CHECK_THROWS_WITH_AS((void)load_scores(bad), doctest::Contains(":2"),
                         DataError);
  }
  SUBCASE("missing score files raise a data error") {
    CHECK_THROWS_AS((void)load_scores((temp_dir() / "none.jsonl").string()),
                    DataError);
  }
}

TEST_CASE("dominance matrix compares models pairwise over shared corpora") {
  // Three models, two corpora, three seeds each. "good" strictly beats
  // "weak" everywhere; "mid" overlaps nothing from above or below it.
  std::vector<ScoreRecord> records;
  const char* corpora[] = {"c1", "c2"};
  for (const char* corpus : corpora)
    for (std::uint64_t s = 0; s < 3; ++s) {
      records.push_back({"good", corpus, s, 0.9, 0.90 + 0.01 * s});
      records.push_back({"mid", corpus, s, 0.7, 0.70 + 0.01 * s});
      records.push_back({"weak", corpus, s, 0.5, 0.50 + 0.01 * s});
    }

  const DominanceMatrix m = dominance_matrix(records, 0.05, 200, 9);
  REQUIRE(m.model_ids == std::vector<std::string>{"good", "mid", "weak"});
  REQUIRE(m.cells.size() == 9);
  for (std::size_t i = 0; i < 3; ++i) CHECK(m.at(i, i) == 0.5);
  // Strict separation: zero violation one way, total violation the other.
  CHECK(m.at(0, 1) == 0.0);
  CHECK(m.at(0, 2) == 0.0);
  CHECK(m.at(1, 2) == 0.0);
  CHECK(m.at(1, 0) == 1.0);
  CHECK(m.at(2, 0) == 1.0);
  CHECK(m.at(2, 1) == 1.0);

  SUBCASE("deterministic in the seed") {
    const DominanceMatrix m2 = dominance_matrix(records, 0.05, 200, 9);
    CHECK(m2.cells == m.cells);
  }
  SUBCASE("a model missing a corpus is an error") {
    std::vector<ScoreRecord> partial = records;
    partial.push_back({"extra", "c1", 0, 0.6, 0.6});
    partial.push_back({"extra", "c1", 1, 0.6, 0.61});
    CHECK_THROWS_WITH_AS((void)dominance_matrix(partial, 0.05, 50),
                         doctest::Contains("extra"), DataError);
  }
  SUBCASE("single scores per pair are rejected") {
    const std::vector<ScoreRecord> lone{{"a", "c", 0, 0.5, 0.5},
                                        {"b", "c", 0, 0.6, 0.6}};
    CHECK_THROWS_AS((void)dominance_matrix(lone, 0.05, 50), DataError);
  }
  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS((void)dominance_matrix({}, 0.05, 50), DataError);
  }

  SUBCASE("csv export is square and reimports numerically") {
    const std::string path = (temp_dir() / "dominance.csv").string();
    save_dominance_csv(m, path);
    std::ifstream in(path);
    std::string header;
    REQUIRE(std::getline(in, header));
    CHECK(header == "model,good,mid,weak");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::size_t pos = line.find(',');
      const std::string name = line.substr(0, pos);
      CHECK(name == m.model_ids[static_cast<std::size_t>(rows)]);
      // Parse the three cells and compare against the matrix.
      std::vector<double> cells;
      std::string rest = line.substr(pos + 1);
      std::size_t start = 0;
      while (start <= rest.size()) {
        std::size_t comma = rest.find(',', start);
        if (comma == std::string::npos) comma = rest.size();
        cells.push_back(std::stod(rest.substr(start, comma - start)));
        start = comma + 1;
      }
      REQUIRE(cells.size() == 3);
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(std::abs(cells[j] -
                       m.at(static_cast<std::size_t>(rows), j)) < 1e-6);
      ++rows;
    }
    CHECK(rows == 3);
  }
}
