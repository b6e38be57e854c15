#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "hardspot/expression.hpp"
#include "hardspot/search_space.hpp"

using namespace hardspot;

namespace {

// Brute-force count over the raw product, independent of Space's enumerator.
std::uint64_t brute_force_count(const SpaceSpec& spec) {
  std::vector<expr::Expression> constraints;
  for (const auto& c : spec.constraints) constraints.push_back(expr::Expression::parse(c));
  std::vector<double> values(spec.params.size());
  std::uint64_t count = 0;
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == spec.params.size()) {
      bool ok = true;
      for (const auto& c : constraints) {
        ok = ok && c.evaluate_bool([&](std::size_t slot) -> expr::Value {
          const auto& name = c.identifiers()[slot];
          for (std::size_t p = 0; p < spec.params.size(); ++p) {
            if (spec.params[p].name != name) continue;
            if (spec.params[p].kind == ParamKind::categorical) {
              return spec.params[p].levels[static_cast<std::size_t>(values[p])];
            }
            return values[p];
          }
          throw std::logic_error("unknown name");
        });
      }
      count += ok ? 1 : 0;
      return;
    }
    const auto& p = spec.params[i];
    for (std::uint64_t k = 0; k < p.cardinality(); ++k) {
      values[i] = p.kind == ParamKind::categorical ? static_cast<double>(k) : p.lo + static_cast<double>(k);
      rec(i + 1);
    }
  };
  rec(0);
  return count;
}

}  // namespace

TEST(Validate, AcceptsIntegerRowsAndColumns) {
  SpaceSpec s{{ParamSpec::integer("rows", 5, 25), ParamSpec::integer("cols", 5, 25)}, {}};
  EXPECT_TRUE(validate_space(s).empty());
  EXPECT_EQ(Space(s).count_discrete(), 21u * 21u);
}

TEST(Validate, RejectsEmptyCategorical) {
  SpaceSpec s{{ParamSpec::categorical("a", {})}, {}};
  try {
    Space space(s);
    FAIL() << "expected SpaceError";
  } catch (const SpaceError& e) {
    EXPECT_NE(std::string(e.what()).find("empty categorical"), std::string::npos);
  }
}

TEST(Validate, RejectsUndeclaredConstraintName) {
  SpaceSpec s{{ParamSpec::integer("a", 0, 3)}, {"foo > 1"}};
  EXPECT_FALSE(validate_space(s).empty());
  EXPECT_THROW(Space{s}, SpaceError);
}

TEST(Validate, RejectsInfeasibleConstraints) {
  SpaceSpec s{{ParamSpec::integer("a", 0, 3)}, {"a > 7"}};
  EXPECT_THROW(Space{s}, SpaceError);
}

TEST(Count, DagReasoningUnconstrained) {
  EXPECT_EQ(Space(spaces::dag_reasoning()).count_discrete(), 6480u);
}

TEST(Count, SingleCategorical) {
  SpaceSpec s{{ParamSpec::categorical("c", {"x", "y", "z"})}, {}};
  EXPECT_EQ(Space(s).count_discrete(), 3u);
}

TEST(Count, DagReasoningWithConstraintsMatchesBruteForce) {
  for (const char* c : {"!(depth > 8 && children > 3)", "depth * children <= 24"}) {
    auto spec = spaces::dag_reasoning({c});
    EXPECT_EQ(Space(spec).count_discrete(), brute_force_count(spec)) << c;
  }
  // Values from the independent oracle script.
  EXPECT_EQ(Space(spaces::dag_reasoning({"!(depth > 8 && children > 3)"})).count_discrete(), 6000u);
  EXPECT_EQ(Space(spaces::dag_reasoning({"depth * children <= 24"})).count_discrete(), 5040u);
}

TEST(Count, GridDiscreteProjection) {
  // 2 tasks x 21 x 21 x (islands_min <= islands_max: 55)
  EXPECT_EQ(Space(spaces::grid_reasoning()).count_discrete(), 2u * 24255u);
}

TEST(Sample, BinaryParamIsUniform) {
  Space space(SpaceSpec{{ParamSpec::integer("b", 0, 1)}, {}});
  Rng rng(11);
  int ones = 0;
  for (int k = 0; k < 10000; ++k) ones += space.sample_uniform(rng).values[0] == 1.0 ? 1 : 0;
  EXPECT_NEAR(ones / 10000.0, 0.5, 0.02);
}

TEST(Sample, ConstrainedDrawsNeverViolate) {
  Space space(spaces::dag_reasoning({"!(depth > 8 && children > 3)"}));
  const auto d = *space.index_of("depth");
  const auto c = *space.index_of("children");
  Rng rng(12);
  for (int k = 0; k < 10000; ++k) {
    auto id = space.sample_uniform(rng);
    ASSERT_FALSE(id.values[d] > 8 && id.values[c] > 3);
    ASSERT_TRUE(space.satisfies(id));
  }
}

TEST(Sample, ContinuousMean) {
  Space space(SpaceSpec{{ParamSpec::continuous("p", 0.0, 1.0)}, {}});
  Rng rng(13);
  double sum = 0.0;
  for (int k = 0; k < 10000; ++k) sum += space.sample_uniform(rng).values[0];
  EXPECT_NEAR(sum / 10000.0, 0.5, 0.02);
}

TEST(Sample, GridConstraintHolds) {
  Space space(spaces::grid_reasoning());
  Rng rng(14);
  for (int k = 0; k < 2000; ++k) {
    auto id = space.sample_uniform(rng);
    ASSERT_LE(id.values[*space.index_of("islands_min")], id.values[*space.index_of("islands_max")]);
  }
}

TEST(Encode, CategoricalIsOneHot) {
  Space space(SpaceSpec{{ParamSpec::categorical("c", {"x", "y", "z"})}, {}});
  // level index 1 is the second level
  EXPECT_EQ(space.encode_features(TemplateId{{1.0}}), (std::vector<double>{0, 1, 0}));
}

TEST(Encode, IntegerPassesThrough) {
  Space space(SpaceSpec{{ParamSpec::integer("depth", 2, 10)}, {}});
  EXPECT_EQ(space.encode_features(TemplateId{{7.0}}), (std::vector<double>{7.0}));
}

TEST(Encode, DeterministicAndInjective) {
  Space space(spaces::dag_reasoning({"depth * children <= 24"}));
  std::set<std::vector<double>> seen;
  std::size_t n = 0;
  space.enumerate_discrete(100000, [&](const TemplateId& id) {
    auto a = space.encode_features(id);
    EXPECT_EQ(a, space.encode_features(id));
    seen.insert(a);
    ++n;
    return true;
  });
  EXPECT_EQ(seen.size(), n);
  EXPECT_EQ(n, 5040u);
}

TEST(Json, TemplateRoundTrip) {
  Space space(spaces::grid_reasoning());
  Rng rng(15);
  for (int k = 0; k < 100; ++k) {
    auto id = space.sample_uniform(rng);
    EXPECT_EQ(space.from_json(space.to_json(id)), id);
  }
  EXPECT_THROW(space.from_json(nlohmann::json{{"task", "nope"}}), SpaceError);
}

TEST(Json, SpecRoundTrip) {
  auto spec = spaces::grid_reasoning();
  auto back = space_spec_from_json(space_spec_to_json(spec));
  EXPECT_EQ(space_spec_to_json(back), space_spec_to_json(spec));
}

TEST(Expression, OperatorsAndErrors) {
  auto e = expr::Expression::parse("a * 2 + 1 >= 7 && !(b == \"x\")");
  auto eval = [&](double a, std::string b) {
    return e.evaluate_bool([&](std::size_t slot) -> expr::Value {
      return e.identifiers()[slot] == "a" ? expr::Value(a) : expr::Value(b);
    });
  };
  EXPECT_TRUE(eval(3, "y"));
  EXPECT_FALSE(eval(2, "y"));
  EXPECT_FALSE(eval(3, "x"));
  EXPECT_THROW(expr::Expression::parse("a +"), expr::ExpressionError);
  EXPECT_THROW(expr::Expression::parse("(a"), expr::ExpressionError);
}
