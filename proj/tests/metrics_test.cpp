#include <gtest/gtest.h>

#include <functional>

#include "cuedseq/core/rng.hpp"
#include "cuedseq/metrics.hpp"
#include "support/oracles.hpp"

using namespace cuedseq;
using cuedseq::testing::all_sequences;
using cuedseq::testing::naive_distance;
using cuedseq::testing::Seq;

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy({1, 2, 3}, {1, 2, 3}), 1.0);
  EXPECT_EQ(accuracy({0, 0}, {1, 1}), 0.0);
  EXPECT_EQ(accuracy({1, 2, 3, 4}, {1, 2, 3, 0}), 0.75);
  EXPECT_THROW(accuracy({}, {}), std::invalid_argument);
  EXPECT_THROW(accuracy({1}, {1, 2}), std::invalid_argument);
}

TEST(EditOps, Examples) {
  EXPECT_EQ(edit_ops(Seq{1, 2, 3}, Seq{1, 2, 3}), (EditCounts{0, 0, 0, 3}));
  EXPECT_EQ(edit_ops(Seq{1, 2, 3}, Seq{1, 9, 3}), (EditCounts{0, 0, 1, 3}));
  EXPECT_EQ(edit_ops(Seq{1, 2}, Seq{1, 2, 3, 4}), (EditCounts{2, 0, 0, 2}));
  EXPECT_EQ(edit_ops(Seq{1}, Seq{7, 8, 9}), (EditCounts{2, 0, 1, 1}));
  EXPECT_EQ(edit_ops(Seq{}, Seq{4, 4}), (EditCounts{2, 0, 0, 0}));
  EXPECT_EQ(edit_ops(Seq{4, 4}, Seq{}), (EditCounts{0, 2, 0, 2}));
}

TEST(EditOps, TieBreakPrefersSubstitutionThenDeletion) {
  // [a,b] -> [b]: one deletion whichever symbol is removed
  EXPECT_EQ(edit_ops(Seq{1, 2}, Seq{2}), (EditCounts{0, 1, 0, 2}));
  // [a,b] -> [c]: distance 2, either sub+del; never ins+2 dels
  auto c = edit_ops(Seq{1, 2}, Seq{3});
  EXPECT_EQ(c, (EditCounts{0, 1, 1, 2}));
}

TEST(EditOps, ExhaustiveAgainstNaiveRecursion) {
  const auto seqs = all_sequences(6, 4);
  Rng rng(1);
  // every pair up to length 3, plus a large random sample up to length 6
  for (const auto& a : seqs) {
    if (a.size() > 3) continue;
    for (const auto& b : seqs) {
      if (b.size() > 3) continue;
      auto c = edit_ops(a, b);
      ASSERT_EQ(c.errors(), naive_distance(a, 0, b, 0));
      ASSERT_LE(c.deletions + c.substitutions, a.size());
      ASSERT_EQ(c.ref_length, a.size());
      ASSERT_EQ(c.insertions + a.size(), c.deletions + b.size());
    }
  }
  for (int trial = 0; trial < 20000; ++trial) {
    const auto& a = seqs[rng.below(seqs.size())];
    const auto& b = seqs[rng.below(seqs.size())];
    auto c = edit_ops(a, b);
    ASSERT_EQ(c.errors(), naive_distance(a, 0, b, 0));
    ASSERT_EQ(c.insertions + a.size(), c.deletions + b.size());
  }
}

TEST(PhoneErrorRate, Examples) {
  std::vector<std::pair<Seq, Seq>> same{{{1, 2}, {1, 2}}, {{3}, {3}}};
  auto r = phone_error_rate(same);
  EXPECT_EQ(r.te, 0.0);
  EXPECT_EQ(r.tc, 1.0);

  auto one_sub = phone_error_rate(std::vector<std::pair<Seq, Seq>>{{{1, 2, 3}, {1, 5, 3}}});
  EXPECT_NEAR(one_sub.te, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(one_sub.tc, 1.0 - one_sub.te);

  auto many_ins = phone_error_rate(std::vector<std::pair<Seq, Seq>>{{{1}, {7, 8, 9}}});
  EXPECT_EQ(many_ins.te, 3.0);
  EXPECT_EQ(many_ins.tc, -2.0);

  EXPECT_THROW(phone_error_rate(std::vector<std::pair<Seq, Seq>>{{{}, {1}}}), std::invalid_argument);
}

TEST(PhoneErrorRate, MicroIsOrderInvariantAndZeroIffExact) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<Seq, Seq>> pairs;
    bool all_exact = true;
    for (int k = 0; k < 5; ++k) {
      Seq ref(1 + rng.below(5)), hyp;
      for (auto& v : ref) v = static_cast<int>(rng.below(3));
      hyp = ref;
      if (rng.bernoulli(0.2)) {
        hyp.push_back(1);
        all_exact = false;
      }
      pairs.emplace_back(ref, hyp);
    }
    auto r = phone_error_rate(pairs);
    EXPECT_EQ(r.te == 0.0, all_exact);
    auto shuffled = pairs;
    rng.shuffle(shuffled);
    EXPECT_EQ(phone_error_rate(shuffled).te, r.te);
  }
}

TEST(PhoneErrorRate, MacroAveragesPerPairRates) {
  std::vector<std::pair<Seq, Seq>> pairs{{{1, 2, 3, 4}, {1, 2, 3, 4}}, {{1}, {2}}};
  EXPECT_NEAR(phone_error_rate(pairs).te, 1.0 / 5.0, 1e-15);
  EXPECT_NEAR(phone_error_rate_macro(pairs).te, 0.5, 1e-15);
}

TEST(EvalReport, JsonAndCsv) {
  EvalReport rep;
  rep.task = "phonemes";
  rep.metadata["seed"] = 7;
  rep.set_sequences({"s0", "s1"}, {{{"a", "b", "c"}, {"a", "x", "c"}}, {{"d"}, {}}});
  EXPECT_NEAR(rep.micro.te, 2.0 / 4.0, 1e-15);
  EXPECT_EQ(rep.micro.tc, 1.0 - rep.micro.te);
  auto j = rep.to_json();
  EXPECT_EQ(j["task"], "phonemes");
  EXPECT_EQ(j["metadata"]["seed"], 7);
  EXPECT_EQ(j["samples"].size(), 2u);
  EXPECT_EQ(j["samples"][1]["deletions"], 1);
  EXPECT_EQ(j["samples"][1]["Te"], 1.0);
  const auto csv = rep.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "id,N,insertions,deletions,substitutions,Te,Tc");
  EXPECT_NE(csv.find("s1,1,0,1,0,1,0"), std::string::npos);

  EvalReport cls;
  cls.set_classification({0, 1, 1, 2}, {0, 1, 2, 2}, 3);
  EXPECT_EQ(*cls.accuracy, 0.75);
  EXPECT_EQ(cls.confusion[2][1], 1u);
  EXPECT_EQ(cls.confusion[2][2], 1u);
  EXPECT_EQ(cls.to_json()["accuracy"], 0.75);
}
