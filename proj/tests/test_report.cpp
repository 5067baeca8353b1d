#include <doctest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <filesystem>
#include <sstream>

#include "bsb/report.hpp"
#include "checks.hpp"

using namespace bsb;
namespace pt = boost::property_tree;

namespace {

std::size_t count_polylines(const pt::ptree& svg, const std::string& cls) {
  std::size_t n = 0;
  for (const auto& [name, node] : svg) {
    if (name == "polyline" && node.get<std::string>("<xmlattr>.class", "") == cls) ++n;
  }
  return n;
}

std::vector<std::string> legend_texts(const pt::ptree& svg) {
  std::vector<std::string> out;
  for (const auto& [name, node] : svg) {
    if (name == "text" && node.data().find("AUC") != std::string::npos) out.push_back(node.data());
  }
  return out;
}

pt::ptree parse_svg(const std::string& text) {
  std::istringstream in(text);
  pt::ptree tree;
  pt::read_xml(in, tree);
  return tree.get_child("svg");
}

}  // namespace

TEST_CASE("half-up rounding") {
  CHECK(round_half_up(72.005) == 72.01);
  CHECK(round_half_up(63.2) == 63.2);
  CHECK(round_half_up(1.2345, 3) == 1.235);
  CHECK(round_half_up(0.49999, 0) == 0.0);
}

TEST_CASE("aggregation reproduces the reference tables") {
  const auto rows = check::reference_rows();
  const auto mi = aggregate_mi_by_variant(rows);
  REQUIRE(mi.size() == 4);
  CHECK(mi[0].dataset == "mnist");
  CHECK(mi[0].bayesian);
  CHECK(round_half_up(mi[0].mean_mi_accuracy) == 69.05);
  CHECK(round_half_up(mi[1].mean_mi_accuracy) == 63.20);
  CHECK(mi[2].dataset == "cifar10");
  CHECK(round_half_up(mi[2].mean_mi_accuracy) == 72.01);
  CHECK(round_half_up(mi[3].mean_mi_accuracy) == 65.48);

  const auto adv = aggregate_adv_by_dataset(rows);
  REQUIRE(adv.size() == 2);
  CHECK(round_half_up(adv[0].mean_hsj) == 60.0);
  CHECK(round_half_up(adv[0].mean_boundary) == 58.5);
  CHECK(round_half_up(adv[1].mean_hsj) == 77.0);
  CHECK(round_half_up(adv[1].mean_boundary) == 76.75);

  const std::vector<ResultRow> one{rows[2]};
  CHECK(aggregate_mi_by_variant(one)[0].mean_mi_accuracy == 62.49);
}

TEST_CASE("results csv") {
  CHECK(format_results_csv({}) == std::string(kResultsHeader) + "\n");

  ResultRow r;
  r.dataset = "synth";
  r.model = "lenet5";
  r.test_accuracy = 97.125;
  r.mi_auc = 0.61234;
  const std::string one = format_results_csv({r});
  CHECK(std::count(one.begin(), one.end(), '\n') == 2);
  CHECK(one.find("synth,lenet5,false,97.13,0.00,0.00,0.00,0.6123,0.00,0.00\n") != std::string::npos);

  // Rows already at display precision survive a parse exactly; any rows give
  // byte-identical text after one emit/parse cycle.
  auto rows = check::reference_rows();
  for (auto& row : rows) row.mi_auc = 0.5;
  CHECK(parse_results_csv(format_results_csv(rows)).size() == rows.size());
  auto sorted = parse_results_csv(format_results_csv(rows));
  CHECK(format_results_csv(sorted) == format_results_csv(rows));
  for (const auto& row : rows) CHECK(std::find(sorted.begin(), sorted.end(), row) != sorted.end());

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::vector<ResultRow> random_rows(check::pick(rng, 0, 6));
    for (auto& row : random_rows) {
      row.dataset = check::pick(rng, 0, 1) ? "mnist" : "synth";
      row.model = check::pick(rng, 0, 1) ? "lenet5" : "resnet-small";
      row.bayesian = check::pick(rng, 0, 1);
      row.test_accuracy = check::pick_real(rng, 0, 100);
      row.hsj_efficacy = check::pick_real(rng, 0, 100);
      row.mi_auc = check::pick_real(rng, 0, 1);
      row.queries_mean_hsj = check::pick_real(rng, 0, 5000);
    }
    const std::string text = format_results_csv(random_rows);
    CHECK(format_results_csv(parse_results_csv(text)) == text);
  }

  const auto path = std::filesystem::temp_directory_path() / "bsb_results.csv";
  emit_csv(sorted, path);
  CHECK(load_results_csv(path) == sorted);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(parse_results_csv("nope\n"), FormatError);
  CHECK_THROWS_AS(parse_results_csv(std::string(kResultsHeader) + "\na,b,maybe,1,2,3,4,5,6,7\n"),
                  FormatError);
  CHECK_THROWS_AS(parse_results_csv(std::string(kResultsHeader) + "\na,b,true,1,2,x,4,5,6,7\n"),
                  FormatError);
  CHECK_THROWS_AS(parse_results_csv(std::string(kResultsHeader) + "\na,b,true,1,2\n"), FormatError);
}

TEST_CASE("roc svg") {
  RocCurve diag{{{0, 0}, {1, 1}}, 0.5};
  const std::vector<NamedRoc> single{{"chance <model>", diag}};
  pt::ptree svg = parse_svg(render_roc_svg(single, "a & b"));
  CHECK(count_polylines(svg, "chance") == 1);
  CHECK(count_polylines(svg, "roc") == 1);
  auto legends = legend_texts(svg);
  REQUIRE(legends.size() == 1);
  CHECK(legends[0] == "chance <model> (AUC 0.5000)");

  std::vector<NamedRoc> four;
  for (int i = 0; i < 4; ++i) {
    std::vector<double> s{0.9, 0.4 + 0.1 * i, 0.3, 0.2};
    std::vector<int> l{1, 0, 1, 0};
    four.push_back({"m" + std::to_string(i), roc_curve(s, l)});
  }
  const std::string text = render_roc_svg(four);
  pt::ptree svg4 = parse_svg(text);
  CHECK(count_polylines(svg4, "roc") == 4);
  CHECK(count_polylines(svg4, "chance") == 1);
  CHECK(text.find("FPR") != std::string::npos);
  CHECK(text.find("TPR") != std::string::npos);

  const std::vector<NamedRoc> invalid{{"bad", RocCurve{{{0, 0}, {0.5, 1.2}, {1, 1}}, 0.5}}};
  const auto path = std::filesystem::temp_directory_path() / "bsb_invalid.svg";
  std::filesystem::remove(path);
  CHECK_THROWS_AS(emit_roc_svg(invalid, path), ValidationError);
  CHECK_FALSE(std::filesystem::exists(path));
}
