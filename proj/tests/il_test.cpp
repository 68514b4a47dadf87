#include "latoracle/il/aggrevate.hpp"

#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "brute_force.hpp"

namespace latoracle::il {
namespace {

SyntheticTask small_task(double noise, double coverage, std::uint32_t k = 3) {
    SyntheticTask cfg;
    cfg.noise_rate = noise;
    cfg.coverage = coverage;
    cfg.candidates = k;
    return cfg;
}

TabularPolicy trained_bc(const SyntheticTask& cfg, std::span<const Example> corpus, int epochs = 20) {
    TabularPolicy pol(cfg.num_actions(), 1.0);
    behavioral_cloning(pol, corpus, epochs);
    return pol;
}

TEST(SyntheticTask, ValidatesConfig) {
    SyntheticTask cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.target_vocab = 4;
    EXPECT_THROW(cfg.validate(), InputError);
    cfg = {};
    cfg.noise_rate = 1.0;
    EXPECT_THROW(cfg.validate(), InputError);
    cfg = {};
    cfg.coverage = 0.0;
    EXPECT_THROW(cfg.validate(), InputError);
    cfg = {};
    cfg.min_length = 9;
    EXPECT_THROW(cfg.validate(), InputError);
    EXPECT_THROW(generate_task(SyntheticTask{}, 0, 1), InputError);
}

TEST(SyntheticTask, SubstitutionMapIsInjective) {
    SyntheticTask cfg;
    const auto map = substitution_map(cfg);
    ASSERT_EQ(map.size(), cfg.source_vocab);
    const std::set<TokenId> image(map.begin(), map.end());
    EXPECT_EQ(image.size(), map.size());
    for (auto t : map) {
        EXPECT_GE(t, 1u);
        EXPECT_LE(t, cfg.target_vocab);
    }
}

TEST(SyntheticTask, ReferenceIsSubstitutionOfSource) {
    const auto cfg = small_task(0.3, 1.0);
    const auto map = substitution_map(cfg);
    for (const auto& ex : generate_task(cfg, 50, 3)) {
        ASSERT_EQ(ex.source.size(), ex.reference.size());
        EXPECT_GE(ex.source.size(), cfg.min_length);
        EXPECT_LE(ex.source.size(), cfg.max_length);
        for (std::size_t t = 0; t < ex.source.size(); ++t) EXPECT_EQ(ex.reference[t], map[ex.source[t]]);
    }
}

TEST(SyntheticTask, SingleCandidateLatticeIsTheReferencePath) {
    const auto cfg = small_task(0.0, 1.0, 1);
    for (const auto& ex : generate_task(cfg, 20, 5)) {
        const auto paths = testing::enumerate_paths(ex.lattice);
        ASSERT_EQ(paths.size(), 1u);
        EXPECT_EQ(paths[0].tokens, ex.reference);
    }
}

TEST(SyntheticTask, FullCoverageCrossProductCount) {
    auto cfg = small_task(0.0, 1.0, 3);
    cfg.min_length = cfg.max_length = 4;
    for (const auto& ex : generate_task(cfg, 10, 7)) {
        const auto paths = testing::enumerate_paths(ex.lattice);
        EXPECT_EQ(paths.size(), 81u);
        const bool has_ref =
            std::any_of(paths.begin(), paths.end(), [&](const auto& p) { return p.tokens == ex.reference; });
        EXPECT_TRUE(has_ref);
        EXPECT_TRUE(reference_in_lattice(ex));
    }
}

TEST(SyntheticTask, HalfCoverageFrequencyMatchesExpectation) {
    auto cfg = small_task(0.0, 0.5, 3);
    cfg.min_length = cfg.max_length = 4;
    const auto corpus = generate_task(cfg, 1000, 11);
    const double hits =
        static_cast<double>(std::count_if(corpus.begin(), corpus.end(), reference_in_lattice));
    // Binomial(1000, 1/16): sd ~ 7.7 examples.
    const double expected = 1000.0 * std::pow(0.5, 4);
    EXPECT_NEAR(hits, expected, 4.0 * std::sqrt(expected * (1.0 - 1.0 / 16.0)));
}

TEST(SyntheticTask, NoisedPositionIsTheCheapestWrongCandidate) {
    const auto cfg = small_task(0.3, 1.0);
    std::size_t noised = 0;
    for (const auto& ex : generate_task(cfg, 200, 13)) {
        const auto best = best_model_path(ex.lattice).tokens;
        ASSERT_EQ(best.size(), ex.reference.size());
        for (std::size_t t = 0; t < best.size(); ++t) {
            if (ex.noise[t] != kBos) {
                ++noised;
                EXPECT_NE(ex.noise[t], ex.reference[t]);
                EXPECT_EQ(best[t], ex.noise[t]);
            } else {
                EXPECT_EQ(best[t], ex.reference[t]);
            }
        }
    }
    EXPECT_GT(noised, 0u);
}

TEST(SyntheticTask, DeterministicUnderSeed) {
    const auto cfg = small_task(0.3, 0.7);
    const auto a = generate_task(cfg, 30, 21);
    const auto b = generate_task(cfg, 30, 21);
    const auto c = generate_task(cfg, 30, 22);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].source, b[i].source);
        EXPECT_EQ(a[i].noise, b[i].noise);
        const auto& ta = a[i].lattice.transitions();
        const auto& tb = b[i].lattice.transitions();
        ASSERT_EQ(ta.size(), tb.size());
        for (std::size_t e = 0; e < ta.size(); ++e) {
            EXPECT_EQ(ta[e].labels, tb[e].labels);
            EXPECT_EQ(ta[e].model_cost, tb[e].model_cost);
        }
        differs = differs || a[i].source != c[i].source;
    }
    EXPECT_TRUE(differs);
    // Example i does not depend on how many examples are drawn.
    EXPECT_EQ(generate_task(cfg, 5, 21)[4].source, a[4].source);
}

TEST(TabularPolicy, MissingKeysReadAsZero) {
    TabularPolicy pol(5, 1.0);
    const SourceSeq src{0, 1};
    EXPECT_EQ(pol.q_values(src, TokenSeq{}), std::vector<double>(5, 0.0));
    EXPECT_EQ(pol.end_token(), 5u);
    EXPECT_THROW(TabularPolicy(1, 1.0), InputError);
    EXPECT_THROW(TabularPolicy(5, 0.0), InputError);
}

TEST(TabularPolicy, KeyUsesNextSourceTokenAndLastTarget) {
    const SourceSeq src{3, 4};
    EXPECT_EQ(TabularPolicy::key(src, TokenSeq{}), (TabularPolicy::Key{3, kBos}));
    EXPECT_EQ(TabularPolicy::key(src, TokenSeq{7}), (TabularPolicy::Key{4, 7}));
    EXPECT_EQ(TabularPolicy::key(src, TokenSeq{7, 9}), (TabularPolicy::Key{kEndOfSource, 9}));
}

TEST(TabularPolicy, UpdateAveragesContributionsPerEntry) {
    TabularPolicy pol(3, 0.5);
    const SourceSeq src{0};
    std::vector<QGradient> g{{src, {}, {{0, 1.0}, {2, -2.0}}}, {src, {}, {{0, 3.0}}}};
    pol.update(g);
    const auto q = pol.q_values(src, TokenSeq{});
    EXPECT_DOUBLE_EQ(q[0], -0.5 * 2.0);
    EXPECT_DOUBLE_EQ(q[1], 0.0);
    EXPECT_DOUBLE_EQ(q[2], 1.0);
    std::vector<QGradient> bad{{src, {}, {{3, 1.0}}}};
    EXPECT_THROW(pol.update(bad), InputError);
}

TEST(Softmax, SumsToOneAndMatchesNll) {
    const std::vector<double> q{1.0, -2.0, 0.5, 3.0};
    const auto p = softmax(q);
    double sum = 0.0;
    for (double v : p) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-15);
    for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(token_nll(q, i), -std::log(p[i]), 1e-12);
    EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0}), 1u);
}

TEST(RollIn, ZeroTableRepeatsFirstToken) {
    TabularPolicy pol(9, 1.0);
    const SourceSeq src{2, 5, 1};
    EXPECT_EQ(roll_in(pol, src), TokenSeq(6, 1));
}

TEST(RollIn, LengthCapIsTwiceSource) {
    TabularPolicy pol(9, 1.0);
    EXPECT_LE(roll_in(pol, SourceSeq{4}).size(), 2u);
    EXPECT_TRUE(roll_in(pol, SourceSeq{}).empty());
}

TEST(RollIn, StopsAtEndTokenAndAppliesNoise) {
    TabularPolicy pol(4, 1.0);
    const SourceSeq src{0, 1};
    // Push the end token to the top of the row read after two tokens.
    std::vector<QGradient> g{{src, {1, 2}, {{3, -1.0}}}};
    pol.update(g);
    EXPECT_EQ(roll_in(pol, src, TokenSeq{kBos, 2}), (TokenSeq{1, 2}));
    EXPECT_EQ(roll_in(pol, src, TokenSeq{3, kBos}), (TokenSeq{3, 1, 1, 1}));
}

TEST(BehavioralCloning, ZeroEpochsLeavesPolicyUnchanged) {
    const auto cfg = small_task(0.0, 1.0);
    const auto corpus = generate_task(cfg, 50, 1);
    TabularPolicy pol(cfg.num_actions(), 1.0);
    const auto before = pol;
    const auto nll = behavioral_cloning(pol, corpus, 0);
    EXPECT_EQ(nll.size(), 1u);
    EXPECT_TRUE(pol == before);
    EXPECT_THROW(behavioral_cloning(pol, std::span<const Example>{}, 1), InputError);
}

TEST(BehavioralCloning, NllNonIncreasingAndNoiselessConverges) {
    const auto cfg = small_task(0.0, 1.0);
    const auto train = generate_task(cfg, 300, 1);
    const auto heldout = generate_task(cfg, 200, 1001);
    TabularPolicy pol(cfg.num_actions(), 1.0);
    const auto nll = behavioral_cloning(pol, train, 20);
    ASSERT_EQ(nll.size(), 21u);
    EXPECT_NEAR(nll.front(), std::log(static_cast<double>(cfg.num_actions())), 1e-12);
    for (std::size_t e = 1; e < nll.size(); ++e) EXPECT_LE(nll[e], nll[e - 1]) << "epoch " << e;
    EXPECT_DOUBLE_EQ(student_bleu(pol, heldout), 1.0);
    for (const auto& ex : heldout) EXPECT_EQ(roll_in(pol, ex.source, ex.noise), ex.reference);
}

TEST(BehavioralCloning, NoisyHeldOutBleuStrictlyBetweenZeroAndOne) {
    const auto cfg = small_task(0.3, 1.0);
    const auto train = generate_task(cfg, 300, 2);
    const auto heldout = generate_task(cfg, 200, 1002);
    const auto pol = trained_bc(cfg, train);
    const double bleu = student_bleu(pol, heldout);
    EXPECT_GT(bleu, 0.0);
    EXPECT_LT(bleu, 1.0);
}

TEST(Exploration, BetaZeroIsArgmax) {
    auto rng = make_rng(1);
    const std::vector<double> q{0.1, 2.0, -1.0, 2.0};
    const auto s = ExplorationStrategy::mixture(0.0);
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(select_action(s, q, rng), 2u);
    EXPECT_EQ(select_action(ExplorationStrategy::student_argmax(), q, rng), 2u);
    EXPECT_THROW(ExplorationStrategy::mixture(1.5), InputError);
    EXPECT_THROW(select_action(s, std::vector<double>{}, rng), InputError);
}

TEST(Exploration, BetaOneIsUniformByChiSquare) {
    auto rng = make_rng(2);
    const std::vector<double> q{0.0, 5.0, 1.0, -2.0, 0.5, 0.0, 3.0, 1.0, 0.0, 2.0};
    constexpr int kDraws = 10000;
    std::vector<int> counts(q.size(), 0);
    for (int i = 0; i < kDraws; ++i)
        ++counts[action_index(select_action(ExplorationStrategy::mixture(1.0), q, rng))];
    const double expected = static_cast<double>(kDraws) / static_cast<double>(q.size());
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 9 degrees of freedom, 0.999 quantile.
    EXPECT_LT(chi2, 27.88);
}

TEST(Exploration, UniformStrategyCoversAllActions) {
    auto rng = make_rng(3);
    const std::vector<double> q(6, 0.0);
    std::set<TokenId> seen;
    for (int i = 0; i < 500; ++i) seen.insert(select_action(ExplorationStrategy::uniform(), q, rng));
    EXPECT_EQ(seen.size(), 6u);
}

TEST(Exploration, MixtureArgmaxFrequency) {
    auto rng = make_rng(4);
    std::vector<double> q(33, 0.0);
    q[7] = 1.0;
    constexpr int kDraws = 20000;
    int hits = 0;
    for (int i = 0; i < kDraws; ++i) hits += select_action(ExplorationStrategy::mixture(0.1), q, rng) == 8u;
    const double expected = 0.9 + 0.1 / 33.0;
    const double sd = std::sqrt(expected * (1.0 - expected) / kDraws);
    EXPECT_NEAR(hits / static_cast<double>(kDraws), expected, 4.0 * sd);
}

TEST(Exploration, PositionSamplingIsUniform) {
    auto rng = make_rng(5);
    constexpr int kDraws = 10000;
    std::vector<int> counts(7, 0);
    for (int i = 0; i < kDraws; ++i) ++counts[sample_position(7, rng)];
    const double p = 1.0 / 7.0;
    const double sd = std::sqrt(p * (1.0 - p) / kDraws);
    for (int c : counts) EXPECT_NEAR(c / static_cast<double>(kDraws), p, 3.0 * sd);
    EXPECT_THROW(sample_position(0, rng), InputError);
}

TEST(SigmoidCalibration, SymmetricRange) {
    const auto c = sigmoid_calibrate(-10.0, 10.0);
    EXPECT_DOUBLE_EQ(c.offset, 0.0);
    EXPECT_NEAR(c.scale, std::log(19.0) / 10.0, 1e-15);
    EXPECT_NEAR(c.scale, 0.29444, 1e-5);
    EXPECT_DOUBLE_EQ(c(0.0), 0.5);
    EXPECT_NEAR(c(10.0), 0.95, 1e-12);
    EXPECT_NEAR(c(-10.0), 0.05, 1e-12);
}

TEST(SigmoidCalibration, EndpointsAndDegenerateRange) {
    const auto c = sigmoid_calibrate(-1.5, 4.0);
    EXPECT_NEAR(c(-1.5), 0.05, 1e-12);
    EXPECT_NEAR(c(4.0), 0.95, 1e-12);
    const auto d = sigmoid_calibrate(0.0, 0.0);
    EXPECT_DOUBLE_EQ(d.scale, 1.0);
    EXPECT_DOUBLE_EQ(d.offset, 0.0);
    EXPECT_THROW(sigmoid_calibrate(1.0, 0.0), InputError);
}

TEST(LossTerm, GatedAndBounded) {
    const auto c = sigmoid_calibrate(-3.0, 3.0);
    EXPECT_EQ(loss_term(1.0, 0.4, false, c), 0.0);
    EXPECT_EQ(loss_gradient(1.0, 0.4, false, c), 0.0);
    auto rng = make_rng(6);
    std::uniform_real_distribution<double> q(-10.0, 10.0), delta(-1.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const double v = c(q(rng));
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        const double dl = delta(rng);
        const double l = loss_term(q(rng), dl, true, c);
        EXPECT_GE(l, 0.0);
        EXPECT_LT(l, dl >= 0.0 ? 1.0 : 4.0);
    }
}

TEST(LossTerm, GradientMatchesCentralDifferences) {
    auto rng = make_rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int checked = 0;
    for (int i = 0; i < 50; ++i) {
        const double lo = -5.0 + u(rng), hi = 5.0 + u(rng);
        const auto c = sigmoid_calibrate(lo, hi);
        const double q = 4.0 * u(rng), delta = u(rng);
        const double h = 1e-5;
        const double fd = (loss_term(q + h, delta, true, c) - loss_term(q - h, delta, true, c)) / (2 * h);
        const double g = loss_gradient(q, delta, true, c);
        if (std::abs(g) < 1e-8) continue;
        EXPECT_NEAR(fd, g, 1e-6 * std::abs(g)) << "instance " << i;
        ++checked;
    }
    EXPECT_GE(checked, 45);
}

TEST(LossTerm, OneStepMovesSigmaTowardDelta) {
    const auto c = sigmoid_calibrate(-2.0, 2.0);
    const SourceSeq src{0, 1};
    for (double delta : {-0.3, 0.1, 0.9}) {
        TabularPolicy pol(4, 0.5);
        const double q0 = pol.q_values(src, TokenSeq{})[1];
        std::vector<QGradient> g{{src, {}, {{1, loss_gradient(q0, delta, true, c)}}}};
        pol.update(g);
        const double q1 = pol.q_values(src, TokenSeq{})[1];
        EXPECT_LT(std::abs(c(q1) - delta), std::abs(c(q0) - delta)) << "delta " << delta;
    }
}

TEST(Aggrevate, RejectsBadInput) {
    const auto cfg = small_task(0.3, 1.0);
    const auto corpus = generate_task(cfg, 5, 1);
    const auto oracles = make_oracles(corpus);
    TabularPolicy pol(cfg.num_actions(), 1.0);
    AggrevateConfig ac;
    EXPECT_THROW(aggrevate_train(pol, std::span<const Example>{}, std::span<const Oracle>{}, ac), InputError);
    EXPECT_THROW(aggrevate_train(pol, corpus, std::span<const Oracle>(oracles).first(3), ac), InputError);
    ac.passes = 0;
    EXPECT_THROW(aggrevate_train(pol, corpus, oracles, ac), InputError);
}

TEST(Aggrevate, PerfectStudentHasZeroLossAndStaysPerfect) {
    const auto cfg = small_task(0.0, 1.0);
    const auto train = generate_task(cfg, 200, 3);
    const auto heldout = generate_task(cfg, 100, 1003);
    auto pol = trained_bc(cfg, train);
    ASSERT_DOUBLE_EQ(student_bleu(pol, heldout), 1.0);
    const auto before = pol;
    AggrevateConfig ac;
    ac.iterations = 5;
    const auto res = aggrevate_train(pol, train, make_oracles(train), ac, heldout);
    ASSERT_EQ(res.iterations.size(), 5u);
    for (const auto& it : res.iterations) {
        EXPECT_DOUBLE_EQ(it.ratio, 0.0);
        EXPECT_DOUBLE_EQ(it.loss, 0.0);
        EXPECT_DOUBLE_EQ(it.b_s, 1.0);
        EXPECT_DOUBLE_EQ(it.heldout_bleu, 1.0);
        EXPECT_LE(it.b_o, 1.0);
    }
    // Every indicator is zero, so no loss term reaches the policy.
    EXPECT_TRUE(pol == before);
}

TEST(Aggrevate, FromScratchOracleMissesReferenceOnlyOnLinearCostTies) {
    // Unclipped bigram rewards let a path that repeats a matched n-gram tie
    // with the reference; the lexicographic tie-break may then pick it.
    const auto cfg = small_task(0.0, 1.0);
    std::size_t misses = 0;
    for (const auto& ex : generate_task(cfg, 200, 3)) {
        const auto r = Oracle(ex.lattice).decode(ex.reference, ThetaParams{});
        const NGramIndex idx(ex.reference, 2);
        const double ref_cost = linear_bleu_cost(ex.reference, idx, ThetaParams{});
        EXPECT_NEAR(r.linear_cost, ref_cost, 1e-9);
        if (r.full_hyp != ex.reference) {
            ++misses;
            EXPECT_LT(r.full_hyp, ex.reference);
        }
    }
    EXPECT_GT(misses, 0u);
    EXPECT_LT(misses, 20u);
}

TEST(Aggrevate, UntrainedStudentIsMostlyBeatenByOracle) {
    const auto cfg = small_task(0.3, 1.0);
    const auto train = generate_task(cfg, 300, 4);
    TabularPolicy pol(cfg.num_actions(), 1.0);
    AggrevateConfig ac;
    ac.iterations = 1;
    const auto res = aggrevate_train(pol, train, make_oracles(train), ac);
    EXPECT_GT(res.iterations[0].ratio, 0.9);
}

TEST(Aggrevate, RecordsAreConsistentWithAggregates) {
    const auto cfg = small_task(0.3, 0.7);
    const auto train = generate_task(cfg, 200, 5);
    auto pol = trained_bc(cfg, train, 5);
    AggrevateConfig ac;
    ac.iterations = 3;
    const auto res = aggrevate_train(pol, train, make_oracles(train), ac);
    for (const auto& it : res.iterations) {
        const auto again = summarize(it.iteration, it.records);
        EXPECT_EQ(again.b_s, it.b_s);
        EXPECT_EQ(again.b_o, it.b_o);
        EXPECT_EQ(again.b_oe, it.b_oe);
        EXPECT_EQ(again.ratio, it.ratio);
        EXPECT_EQ(again.loss, it.loss);
        EXPECT_GE(it.ratio, 0.0);
        EXPECT_LE(it.ratio, 1.0);
        for (const auto& r : it.records) {
            if (r.skipped) continue;
            EXPECT_GE(r.delta, -1.0);
            EXPECT_LE(r.delta, 1.0);
            EXPECT_EQ(r.indicator, r.bleu_oe > r.bleu_s);
            if (!r.indicator) {
                EXPECT_EQ(r.loss, 0.0);
            }
            // sigma is in (0, 1), so the squared gap stays below 1 unless
            // the reward-to-go is negative.
            EXPECT_GE(r.loss, 0.0);
            EXPECT_LT(r.loss, r.delta >= 0.0 ? 1.0 : 4.0);
        }
    }
}

TEST(Aggrevate, IndependentOfJobCount) {
    const auto cfg = small_task(0.3, 1.0);
    const auto train = generate_task(cfg, 150, 6);
    const auto oracles = make_oracles(train);
    auto a = trained_bc(cfg, train, 5);
    auto b = a;
    AggrevateConfig ac;
    ac.iterations = 3;
    ac.jobs = 1;
    const auto ra = aggrevate_train(a, train, oracles, ac);
    ac.jobs = 4;
    const auto rb = aggrevate_train(b, train, oracles, ac);
    EXPECT_TRUE(a == b);
    for (std::size_t j = 0; j < ra.iterations.size(); ++j) {
        EXPECT_EQ(ra.iterations[j].b_oe, rb.iterations[j].b_oe);
        EXPECT_EQ(ra.iterations[j].loss, rb.iterations[j].loss);
    }
}

TEST(Aggrevate, FixedCalibrationIsKept) {
    const auto cfg = small_task(0.3, 1.0);
    const auto train = generate_task(cfg, 50, 7);
    TabularPolicy pol(cfg.num_actions(), 1.0);
    AggrevateConfig ac;
    ac.iterations = 2;
    ac.calibration = SigmoidCalibration{2.0, 0.25};
    const auto res = aggrevate_train(pol, train, make_oracles(train), ac);
    EXPECT_EQ(res.calibration.scale, 2.0);
    EXPECT_EQ(res.calibration.offset, 0.25);
}

TEST(Aggrevate, PerStepAndAveragedUpdatesBothRun) {
    const auto cfg = small_task(0.3, 1.0);
    const auto train = generate_task(cfg, 100, 8);
    const auto oracles = make_oracles(train);
    auto a = trained_bc(cfg, train, 5);
    auto b = a;
    AggrevateConfig ac;
    ac.iterations = 2;
    aggrevate_train(a, train, oracles, ac);
    ac.per_step = true;
    ac.passes = 2;
    aggrevate_train(b, train, oracles, ac);
    EXPECT_FALSE(a == b);
}

}  // namespace
}  // namespace latoracle::il
