#include "catch_amalgamated.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "rubricforge/grpo.hpp"
#include "rubricforge/grpo_serde.hpp"

#include "support/oracles.hpp"

using namespace rforge;

namespace {

RolloutGroup make_group(const std::vector<double>& rewards, std::size_t tokens,
                        std::mt19937_64& rng, double current_offset = 0.0,
                        double reference_offset = 0.0) {
  std::uniform_real_distribution<double> logprob(-3.0, -0.1);
  RolloutGroup group;
  group.question_id = "q";
  for (double reward : rewards) {
    RolloutResponse response;
    response.reward = reward;
    for (std::size_t t = 0; t < tokens; ++t) {
      const double base = logprob(rng);
      response.logprobs_behavior.push_back(base);
      response.logprobs_current.push_back(base + current_offset);
      response.logprobs_reference.push_back(base + reference_offset);
    }
    group.responses.push_back(std::move(response));
  }
  return group;
}

}  // namespace

TEST_CASE("advantages: equal rewards normalize to zero") {
  auto adv = normalize_advantages(std::vector<double>{5, 5, 5, 5}, 1e-6);
  for (double a : adv.values) CHECK(a == 0.0);
}

TEST_CASE("advantages: two-point group at the eps->0 limit") {
  auto adv = normalize_advantages(std::vector<double>{1, 0}, 1e-15);
  CHECK(adv.values[0] == Catch::Approx(1.0).epsilon(1e-9));
  CHECK(adv.values[1] == Catch::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("advantages: three-point group against direct formula") {
  // mean 4, popstd sqrt(8/3): (2-4)/1.63299 = -1.224744...
  auto adv = normalize_advantages(std::vector<double>{2, 4, 6}, 1e-15);
  CHECK(adv.values[0] == Catch::Approx(-1.22474487).margin(1e-5));
  CHECK(adv.values[1] == Catch::Approx(0.0).margin(1e-12));
  CHECK(adv.values[2] == Catch::Approx(1.22474487).margin(1e-5));
}

TEST_CASE("advantages: contract errors") {
  CHECK_THROWS_AS(normalize_advantages(std::vector<double>{1.0}, 1e-6), ContractError);
  CHECK_THROWS_AS(normalize_advantages(std::vector<double>{1.0, 2.0}, 0.0), ContractError);
}

TEST_CASE("advantages: shift invariance and scaling keep ranking") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> reward(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-10.0, 10.0);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int round = 0; round < 2000; ++round) {
    const std::size_t g = 2 + rng() % 15;
    std::vector<double> rewards(g);
    for (double& r : rewards) r = reward(rng);

    const double c = shift(rng);
    std::vector<double> shifted = rewards;
    for (double& r : shifted) r += c;
    auto base = normalize_advantages(rewards, 1e-6);
    auto moved = normalize_advantages(shifted, 1e-6);
    for (std::size_t i = 0; i < g; ++i)
      CHECK(moved.values[i] ==
            Catch::Approx(base.values[i]).epsilon(1e-12).margin(1e-12));

    const double s = scale(rng);
    std::vector<double> scaled = rewards;
    for (double& r : scaled) r *= s;
    auto stretched = normalize_advantages(scaled, 1e-6);
    for (std::size_t i = 0; i < g; ++i)
      for (std::size_t j = 0; j < g; ++j)
        CHECK((base.values[i] < base.values[j]) ==
              (stretched.values[i] < stretched.values[j]));
  }
}

TEST_CASE("importance ratio examples") {
  std::vector<double> a{-1.0, -2.0, -0.5};
  CHECK(importance_ratio(a, a).value == 1.0);
  CHECK_FALSE(importance_ratio(a, a).clamped);

  // sums -10 vs -10.5 -> e^{0.5}
  std::vector<double> current{-4.0, -6.0};
  std::vector<double> behavior{-4.5, -6.0};
  CHECK(importance_ratio(current, behavior).value ==
        Catch::Approx(std::exp(0.5)).margin(1e-5));

  std::vector<double> far_current{-700.0};
  std::vector<double> far_behavior{-800.0};
  auto clamped = importance_ratio(far_current, far_behavior);
  CHECK(clamped.clamped);
  CHECK(clamped.value == Catch::Approx(std::exp(30.0)));

  std::vector<double> mismatched{-1.0};
  CHECK_THROWS_AS(importance_ratio(a, mismatched), ContractError);
}

TEST_CASE("clipped term examples and min property") {
  CHECK(clipped_term(1.0, 2.5, 0.2) == 2.5);
  CHECK(clipped_term(1.5, 1.0, 0.2) == Catch::Approx(1.2));
  CHECK(clipped_term(1.5, -1.0, 0.2) == Catch::Approx(-1.5));

  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> rho_dist(0.0, 3.0);
  std::uniform_real_distribution<double> adv_dist(-2.0, 2.0);
  for (int round = 0; round < 10000; ++round) {
    const double rho = rho_dist(rng);
    const double adv = adv_dist(rng);
    const double term = clipped_term(rho, adv, 0.2);
    CHECK(term <= rho * adv + 1e-15);
    if (rho >= 0.8 && rho <= 1.2) CHECK(term == rho * adv);
  }
}

TEST_CASE("kl penalty examples and nonnegativity") {
  std::vector<double> same{-1.0, -2.0};
  CHECK(kl_penalty(same, same) == 0.0);

  std::vector<double> current{-1.0};
  std::vector<double> reference{-1.5};
  CHECK(kl_penalty(current, reference) ==
        Catch::Approx(std::exp(-0.5) + 0.5 - 1.0).margin(1e-6));

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> logprob(-8.0, 0.0);
  for (int round = 0; round < 100000; ++round) {
    const std::size_t tokens = 1 + rng() % 6;
    std::vector<double> cur(tokens);
    std::vector<double> ref(tokens);
    for (std::size_t t = 0; t < tokens; ++t) {
      cur[t] = logprob(rng);
      ref[t] = logprob(rng);
    }
    CHECK(kl_penalty(cur, ref) >= 0.0);
  }
}

TEST_CASE("objective: zero advantages and zero KL give zero") {
  std::mt19937_64 rng(19);
  RolloutGroup group = make_group({1, 1, 1, 1}, 4, rng);
  for (auto& r : group.responses) {
    r.logprobs_current = r.logprobs_behavior;
    r.logprobs_reference = r.logprobs_behavior;
  }
  GrpoConfig config;
  config.group_size = 4;
  auto breakdown = grpo_objective(group, config);
  CHECK(breakdown.objective == 0.0);
  CHECK(breakdown.surrogate_mean == 0.0);
  CHECK(breakdown.kl_mean == 0.0);
}

TEST_CASE("objective: equal rewards reduce to the KL term") {
  std::mt19937_64 rng(23);
  RolloutGroup group = make_group({2, 2, 2}, 3, rng, 0.0, -0.4);
  for (auto& r : group.responses) r.logprobs_current = r.logprobs_behavior;
  GrpoConfig config;
  config.group_size = 3;
  auto breakdown = grpo_objective(group, config);

  double kl_sum = 0.0;
  for (const auto& r : group.responses)
    kl_sum += kl_penalty(r.logprobs_current, r.logprobs_reference);
  CHECK(breakdown.objective ==
        Catch::Approx(-config.kl_beta * kl_sum / 3.0).margin(1e-12));
}

TEST_CASE("objective: hand-composed two-response group") {
  std::mt19937_64 rng(29);
  RolloutGroup group = make_group({1, 0}, 2, rng);
  for (auto& r : group.responses) {
    r.logprobs_current = r.logprobs_behavior;   // rho = 1
    r.logprobs_reference = r.logprobs_current;  // no KL
  }
  GrpoConfig config;
  config.group_size = 2;
  config.advantage_epsilon = 1e-15;
  auto breakdown = grpo_objective(group, config);
  CHECK(breakdown.per_response[0].clipped == Catch::Approx(1.0).epsilon(1e-9));
  CHECK(breakdown.per_response[1].clipped == Catch::Approx(-1.0).epsilon(1e-9));
  CHECK(breakdown.objective == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("objective: group size must match config") {
  std::mt19937_64 rng(31);
  RolloutGroup group = make_group({1, 0}, 2, rng);
  GrpoConfig config;
  config.group_size = 8;
  CHECK_THROWS_AS(grpo_objective(group, config), ContractError);
}

TEST_CASE("analytic gradient matches central finite differences") {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> reward(0.0, 1.0);
  std::uniform_real_distribution<double> logprob(-3.0, -0.1);
  GrpoConfig config;
  config.group_size = 4;

  // Per-response log-ratio targets place rho at ~0.73, 0.96, 1.04, 1.38:
  // clearly inside or outside the clip window, never on its boundary.
  const double offsets[] = {-0.08, -0.0025, 0.0025, 0.08};

  int checked = 0;
  for (int round = 0; round < 50; ++round) {
    RolloutGroup group;
    group.question_id = "grad";
    for (int i = 0; i < 4; ++i) {
      RolloutResponse response;
      response.reward = reward(rng);
      for (int t = 0; t < 4; ++t) {
        const double base = logprob(rng);
        response.logprobs_behavior.push_back(base);
        response.logprobs_current.push_back(base + offsets[(i + round) % 4]);
        response.logprobs_reference.push_back(base - 0.2);
      }
      group.responses.push_back(std::move(response));
    }
    // Verify the fixture really is boundary-free.
    bool boundary = false;
    for (const auto& r : group.responses) {
      const double rho = importance_ratio(r.logprobs_current, r.logprobs_behavior).value;
      boundary = boundary || std::abs(rho - (1.0 - config.clip_epsilon)) < 0.05 ||
                 std::abs(rho - (1.0 + config.clip_epsilon)) < 0.05;
    }
    REQUIRE_FALSE(boundary);
    ++checked;

    const std::size_t target = rng() % group.responses.size();
    auto grad = grpo_objective_grad_current(group, config, target);
    for (std::size_t t = 0; t < group.responses[target].logprobs_current.size(); ++t) {
      auto objective_at = [&](double x) {
        RolloutGroup probe = group;
        probe.responses[target].logprobs_current[t] = x;
        return grpo_objective(probe, config).objective;
      };
      const double fd = oracles::central_difference(
          objective_at, group.responses[target].logprobs_current[t], 1e-5);
      CHECK(grad[t] == Catch::Approx(fd).epsilon(1e-4).margin(1e-10));
    }
  }
  CHECK(checked == 50);
}

TEST_CASE("rollout group JSON round trip") {
  std::mt19937_64 rng(41);
  RolloutGroup group = make_group({0.25, 0.5, 1.0}, 3, rng, 0.1, -0.1);
  group.question_id = "inst-42";
  json encoded = rollout_group_to_json(group);
  RolloutGroup decoded = rollout_group_from_json(encoded);
  CHECK(decoded.question_id == group.question_id);
  REQUIRE(decoded.responses.size() == group.responses.size());
  for (std::size_t i = 0; i < group.responses.size(); ++i) {
    CHECK(decoded.responses[i].reward == group.responses[i].reward);
    CHECK(decoded.responses[i].logprobs_current == group.responses[i].logprobs_current);
  }
  CHECK_THROWS_AS(rollout_group_from_json(json{{"question_id", "x"}}), ValidationError);
}
