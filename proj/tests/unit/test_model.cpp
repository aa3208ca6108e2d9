#include "bamd/errors.hpp"
#include "bamd/model.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bamd;
using Eigen::Index;
using model::Coding;

namespace {

model::RawGenotypeTable table(std::vector<std::vector<std::string>> calls) {
  model::RawGenotypeTable t;
  for (std::size_t i = 0; i < calls.size(); ++i) t.ids.push_back("i" + std::to_string(i));
  for (std::size_t j = 0; j < calls.front().size(); ++j) t.snp_names.push_back("S" + std::to_string(j));
  t.calls = std::move(calls);
  return t;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("letter calls encode by allele order") {
    const auto e = model::encode_genotypes(table({{"CC", "AT"}, {"GC", "TT"}, {"GG", "NA"}, {"CG", "AA"}}));
    const auto& g = e.genotypes;
    CHECK(g.codes(0, 0) == -1);
    CHECK(g.codes(1, 0) == 0);
    CHECK(g.codes(2, 0) == 1);
    CHECK(g.codes(3, 0) == 0);
    CHECK(g.codes(1, 1) == 1);
    CHECK(g.codes(3, 1) == -1);
    CHECK(g.is_missing(2, 1));
    CHECK(g.codes(2, 1) == 0);
    CHECK(g.alleles[0].calls[1] == "GC");
    CHECK(e.warnings.empty());
    const auto back = model::decode_genotypes(g);
    CHECK(back.calls[0][0] == "CC");
    CHECK(back.calls[2][1] == model::kMissingCall);
  }

  TEST_CASE("pre-coded and monomorphic columns") {
    const auto e = model::encode_genotypes(table({{"-1", "GG"}, {"1", "GG"}, {"0", "NA"}}));
    CHECK(e.genotypes.codes(0, 0) == -1);
    CHECK(e.genotypes.codes(0, 1) == 1);
    REQUIRE(e.warnings.size() == 1);
    CHECK(e.warnings[0].find("monomorphic") != std::string::npos);
  }

  TEST_CASE("bad calls are data errors") {
    CHECK_THROWS_AS(model::encode_genotypes(table({{"AC"}, {"AG"}, {"CC"}})), DataError);
    CHECK_THROWS_AS(model::encode_genotypes(table({{"A"}, {"AA"}})), DataError);
    CHECK_THROWS_AS(model::encode_genotypes(table({{"NA"}, {"NA"}})), DataError);
    CHECK_THROWS_AS(model::encode_genotypes(table({{"2"}, {"1"}})), DataError);
  }

  TEST_CASE("design coding") {
    model::CodeMatrix c(3, 1);
    c << -1, 0, 1;
    const auto signed_z = model::snp_design(c, Coding::Signed);
    CHECK(signed_z.cols() == 1);
    CHECK(signed_z(0, 0) == -1.0);
    const auto ad = model::snp_design(c, Coding::AdditiveDominance);
    REQUIRE(ad.cols() == 2);
    CHECK(ad.col(0).transpose() == Eigen::RowVector3d(-1, 0, 1));
    CHECK(ad.col(1).transpose() == Eigen::RowVector3d(0, 1, 0));
    CHECK(model::parse_coding("ad") == Coding::AdditiveDominance);
    CHECK_THROWS_AS(model::parse_coding("dominant"), UsageError);
  }

  TEST_CASE("prior hyperparameters must be positive") {
    CHECK_NOTHROW(model::default_priors().validate());
    model::PriorHyperparams p;
    p.c = 0.0;
    CHECK_THROWS_AS(p.validate(), UsageError);
  }

  TEST_CASE("imputation weights are validated") {
    CHECK_THROWS_AS(model::ImputationPrior::from_weights(1, 1, {{0.5, 0.5, 0.1}}), DataError);
    CHECK_THROWS_AS(model::ImputationPrior::from_weights(1, 1, {{-0.1, 0.6, 0.5}}), DataError);
    CHECK_THROWS_AS(model::ImputationPrior::from_weights(1, 2, {{0.2, 0.3, 0.5}}), DataError);
    const auto p = model::ImputationPrior::from_weights(1, 1, {{0.25, 0.25, 0.5}});
    CHECK(p.weights(0, 0)[2] == 0.5);
    const auto u = model::ImputationPrior::uniform();
    CHECK(u.weights(4, 7)[0] == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("validation catches broken datasets") {
    const Index n = 6;
    auto codes = testing::random_codes(n, 2, 1);
    model::MaskMatrix mask = model::MaskMatrix::Constant(n, 2, false);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(n, 1);
    const Eigen::MatrixXd r = Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(n, 0, 1);
    CHECK(model::validate_dataset(testing::make_dataset(codes, mask, y, x, r)).ok());

    auto all_missing = mask;
    all_missing.col(1).setConstant(true);
    CHECK_FALSE(model::validate_dataset(testing::make_dataset(codes, all_missing, y, x, r)).ok());

    Eigen::MatrixXd not_pd = r;
    not_pd(0, 1) = not_pd(1, 0) = 1.0;
    CHECK_FALSE(model::validate_dataset(testing::make_dataset(codes, mask, y, x, not_pd)).ok());

    Eigen::MatrixXd collinear(n, 2);
    collinear << x, 2.0 * x;
    CHECK_FALSE(model::validate_dataset(testing::make_dataset(codes, mask, y, collinear, r)).ok());

    Eigen::VectorXd bad_y = y;
    bad_y[2] = std::nan("");
    const auto rep = model::validate_dataset(testing::make_dataset(codes, mask, bad_y, x, r));
    CHECK_FALSE(rep.ok());
    CHECK_THROWS_AS(model::require_valid(rep), DataError);

    auto heavy = mask;
    heavy.topRows(2).setConstant(true);
    const auto warn = model::validate_dataset(testing::make_dataset(codes, heavy, y, x, r));
    CHECK(warn.ok());
    CHECK_FALSE(warn.warnings.empty());
  }

  TEST_CASE("assembly orders phenotypes by genotype id and builds family columns") {
    const auto e = model::encode_genotypes(table({{"AA"}, {"AC"}, {"CC"}, {"AC"}}));
    model::PhenotypeTable p{{"i3", "i0", "i2", "i1"}, {3.0, 0.0, 2.0, 1.0}, {"b", "a", "b", "a"}};
    const auto d = model::assemble_dataset(e, p, pedigree::RelationshipMatrix::identity(e.genotypes.ids), Coding::Signed);
    CHECK(d.phenotypes == Eigen::Vector4d(0, 1, 2, 3));
    REQUIRE(d.design_names.size() == 2);
    CHECK(d.design_names[0] == "family_a");
    CHECK(d.design(1, 0) == 1.0);
    CHECK(d.design(2, 1) == 1.0);

    model::PhenotypeTable plain{{"i0", "i1", "i2", "i3"}, {0, 1, 2, 3}, {}};
    const auto d2 = model::assemble_dataset(e, plain, pedigree::RelationshipMatrix::identity(e.genotypes.ids), Coding::Signed);
    CHECK(d2.design_names == std::vector<std::string>{"intercept"});

    model::PhenotypeTable short_table{{"i0", "i1"}, {0, 1}, {}};
    CHECK_THROWS_AS(model::assemble_dataset(e, short_table, pedigree::RelationshipMatrix::identity(e.genotypes.ids),
                                            Coding::Signed),
                    DataError);
  }

  TEST_CASE("csv readers") {
    const auto g = model::parse_genotype_csv("id,S1,S2\na,AA,NA\nb,AC,1\n", "mem");
    CHECK(g.calls[0][1] == model::kMissingCall);
    CHECK(model::format_genotype_csv(g) == "id,S1,S2\na,AA,NA\nb,AC,1\n");
    CHECK_THROWS_AS(model::parse_phenotype_csv("id,value\na,\n", "mem"), DataError);
    const auto p = model::parse_phenotype_csv("id,value,family\na,1.5,F1\n", "mem");
    CHECK(p.families[0] == "F1");
  }

  TEST_CASE("missing cell bookkeeping") {
    model::GenotypeMatrix g;
    g.codes = model::CodeMatrix::Zero(3, 2);
    g.missing = model::MaskMatrix::Constant(3, 2, false);
    g.missing(2, 0) = g.missing(0, 1) = g.missing(1, 1) = true;
    CHECK(g.missing_count() == 3);
    CHECK(g.missing_fraction() == doctest::Approx(0.5));
    CHECK(g.column_missing_fraction(1) == doctest::Approx(2.0 / 3.0));
    const auto cells = g.missing_cells();
    REQUIRE(cells.size() == 3);
    CHECK(cells[0] == std::pair<Index, Index>{2, 0});
    CHECK(cells[1] == std::pair<Index, Index>{0, 1});
  }
}
