/*
 * Copyright 2026 The pdir Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pdir/config.hpp"
#include "pdir/core.hpp"
#include "pdir/rng.hpp"
#include "test_support.hpp"

namespace pdir {
namespace {

using testing::read_file;
using testing::scratch_dir;
using testing::write_text;

std::string ErrorOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

TEST(LoadDataset, ThreeRowContinuousFile) {
  const auto dir = scratch_dir("core_three_rows");
  write_text(dir / "trial.csv",
             "id,treatment,outcome,age,stage\n"
             "a,1,2.5,61,2\n"
             "b,0,-1,54,3\n"
             "c,1,0.25,70,1\n");
  const TrialDataset d = load_dataset(dir / "trial.csv", OutcomeKind::Continuous);
  EXPECT_EQ(d.n(), 3u);
  EXPECT_EQ(d.p(), 2u);
  EXPECT_EQ(d.study_label(), "trial");
  EXPECT_EQ(d.covariate_names(), (std::vector<std::string>{"age", "stage"}));
  EXPECT_EQ(d[1].id, "b");
  EXPECT_EQ(d[1].treatment, 0);
  EXPECT_EQ(std::get<double>(d[2].outcome), 0.25);
  EXPECT_EQ(d.covariates()(2, 0), 70.0);
}

TEST(LoadDataset, TreatmentOutsideBinaryIsRejected) {
  const auto dir = scratch_dir("core_treatment");
  write_text(dir / "bad.csv", "id,treatment,outcome,z1\na,2,1,0\nb,0,1,0\n");
  const std::string msg = ErrorOf([&] { load_dataset(dir / "bad.csv", OutcomeKind::Continuous); });
  EXPECT_NE(msg.find("treatment ∈ {0,1}"), std::string::npos) << msg;
  EXPECT_NE(msg.find("validation error"), std::string::npos) << msg;
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
}

TEST(LoadDataset, NonPositiveSurvivalTimeIsRejected) {
  const auto dir = scratch_dir("core_time");
  write_text(dir / "bad.csv", "id,treatment,time,event,z1\na,1,0,1,0.5\nb,0,2,1,0.1\n");
  const std::string msg = ErrorOf([&] { load_dataset(dir / "bad.csv", OutcomeKind::Survival); });
  EXPECT_NE(msg.find("time > 0"), std::string::npos) << msg;
}

TEST(LoadDataset, MalformedRowsNameTheRow) {
  const auto dir = scratch_dir("core_malformed");
  write_text(dir / "short.csv", "id,treatment,outcome,z1\na,1,1,0\nb,0,1\n");
  std::string msg = ErrorOf([&] { load_dataset(dir / "short.csv"); });
  EXPECT_NE(msg.find("parse error"), std::string::npos) << msg;
  EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;

  write_text(dir / "missing.csv", "id,treatment,outcome,z1\na,1,,0\nb,0,1,1\n");
  msg = ErrorOf([&] { load_dataset(dir / "missing.csv"); });
  EXPECT_NE(msg.find("row 2: missing value"), std::string::npos) << msg;

  write_text(dir / "text.csv", "id,treatment,outcome,z1\na,1,1,abc\nb,0,1,1\n");
  msg = ErrorOf([&] { load_dataset(dir / "text.csv"); });
  EXPECT_NE(msg.find("non-numeric value 'abc'"), std::string::npos) << msg;

  write_text(dir / "header.csv", "id,arm,outcome,z1\na,1,1,0\n");
  EXPECT_THROW(load_dataset(dir / "header.csv"), ParseError);
}

TEST(LoadDataset, SingleArmIsRejected) {
  const auto dir = scratch_dir("core_single_arm");
  write_text(dir / "one.csv", "id,treatment,outcome,z1\na,1,1,0\nb,1,2,1\n");
  const std::string msg = ErrorOf([&] { load_dataset(dir / "one.csv"); });
  EXPECT_NE(msg.find("both treatment arms are non-empty"), std::string::npos) << msg;
}

TEST(LoadDataset, DetectsSurvivalHeader) {
  const auto dir = scratch_dir("core_detect");
  write_text(dir / "s.csv", "id,treatment,time,event,z1\r\na,1,2.5,1,0.5\r\nb,0,1.5,0,-0.5\r\n\r\n");
  const TrialDataset d = load_dataset(dir / "s.csv");
  EXPECT_EQ(d.kind(), OutcomeKind::Survival);
  EXPECT_EQ(d.n(), 2u);
  EXPECT_EQ(d.times(), (std::vector<double>{2.5, 1.5}));
  EXPECT_EQ(d.events(), (std::vector<int>{1, 0}));
}

TEST(LoadDataset, SerializeRoundTripIsBitExact) {
  Rng rng(11);
  std::vector<SubjectRecord> subjects;
  for (int i = 0; i < 40; ++i) {
    SubjectRecord s;
    s.id = "s" + std::to_string(i);
    s.treatment = i % 2;
    s.covariates = {rng.normal(), rng.normal() * 1e-300, rng.normal() * 1e200};
    s.outcome = SurvivalTime{rng.exponential() + 1e-9, static_cast<int>(rng.uniform_index(2))};
    subjects.push_back(std::move(s));
  }
  const TrialDataset d(subjects, {"x", "y", "w"}, OutcomeKind::Survival, "rt");
  const auto dir = scratch_dir("core_roundtrip");
  write_dataset(dir / "rt.csv", d);
  const TrialDataset back = load_dataset(dir / "rt.csv");
  ASSERT_EQ(back.n(), d.n());
  for (std::size_t i = 0; i < d.n(); ++i) {
    EXPECT_EQ(back[i].id, d[i].id);
    EXPECT_EQ(back[i].treatment, d[i].treatment);
    EXPECT_EQ(back[i].covariates, d[i].covariates);
    EXPECT_EQ(std::get<SurvivalTime>(back[i].outcome).time, std::get<SurvivalTime>(d[i].outcome).time);
    EXPECT_EQ(std::get<SurvivalTime>(back[i].outcome).event, std::get<SurvivalTime>(d[i].outcome).event);
  }
  EXPECT_EQ(serialize_dataset(back), read_file(dir / "rt.csv"));
}

TEST(Contrast, Definition) {
  EXPECT_EQ(contrast(5.0, 3.0), 2.0);
  EXPECT_EQ(contrast(-1.5, 2.5), -4.0);
  for (double a : {-3.0, 0.0, 1e-300, 7.25, 1e300}) EXPECT_EQ(contrast(a, a), 0.0);
}

TEST(Contrast, Antisymmetric) {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.normal() * 10, b = rng.normal() * 10;
    EXPECT_EQ(contrast(a, b), -contrast(b, a));
  }
}

TEST(TrialDataset, ConstructorNamesInvariant) {
  SubjectRecord good{"a", 1, {0.0}, 1.0};
  SubjectRecord other{"b", 0, {1.0}, 2.0};
  SubjectRecord nan_cov{"c", 0, {std::numeric_limits<double>::quiet_NaN()}, 1.0};
  EXPECT_NE(ErrorOf([&] { TrialDataset({good, other, nan_cov}, {"z"}, OutcomeKind::Continuous, "x"); })
                .find("covariates are finite"),
            std::string::npos);
  SubjectRecord wrong_dim{"d", 0, {1.0, 2.0}, 1.0};
  EXPECT_THROW(TrialDataset({good, wrong_dim}, {"z"}, OutcomeKind::Continuous, "x"), ValidationError);
  SubjectRecord bad_event{"e", 0, {1.0}, SurvivalTime{1.0, 2}};
  SubjectRecord ok_surv{"f", 1, {1.0}, SurvivalTime{1.0, 1}};
  EXPECT_NE(ErrorOf([&] { TrialDataset({ok_surv, bad_event}, {"z"}, OutcomeKind::Survival, "x"); })
                .find("event ∈ {0,1}"),
            std::string::npos);
  EXPECT_THROW(TrialDataset({good, other}, {"z"}, OutcomeKind::Survival, "x"), ValidationError);
}

TEST(TrialDataset, PooledKeepsOrder) {
  const TrialDataset a({{"a1", 1, {1.0}, 1.0}, {"a2", 0, {2.0}, 2.0}}, {"z"}, OutcomeKind::Continuous, "A");
  const TrialDataset b({{"b1", 0, {3.0}, 3.0}, {"b2", 1, {4.0}, 4.0}}, {"z"}, OutcomeKind::Continuous, "B");
  const std::vector<const TrialDataset*> parts{&a, &b};
  const TrialDataset p = TrialDataset::pooled(parts, "AB");
  ASSERT_EQ(p.n(), 4u);
  EXPECT_EQ(p[2].id, "b1");
  EXPECT_EQ(p.outcomes(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    differs = differs || x != c.normal();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, UniformMoments) {
  Rng rng(7);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalAndExponentialMoments) {
  Rng rng(8);
  const int n = 200000;
  double sn = 0.0, sn2 = 0.0, se = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
    se += rng.exponential();
  }
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.015);
  EXPECT_NEAR(se / n, 1.0, 0.015);
}

TEST(Rng, UniformIndexCoversRange) {
  Rng rng(9);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.uniform_index(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Io, FormatDoubleRoundTrips) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.normal() * std::pow(10.0, static_cast<double>(rng.uniform_index(40)) - 20.0);
    EXPECT_EQ(*io::parse_double(io::format_double(x)), x);
  }
  EXPECT_EQ(io::format_double(0.5), "0.5");
  EXPECT_FALSE(io::parse_double("").has_value());
  EXPECT_FALSE(io::parse_double("1.5x").has_value());
}

TEST(Config, ParsesKeyValueLines) {
  const auto cfg = KeyValueConfig::parse("# comment\nmethod = kernel\n\n  seed=7  \ntune.rho = 0.5, 2\n");
  EXPECT_EQ(cfg.require("method"), "kernel");
  EXPECT_EQ(cfg.require_seed(), 7u);
  EXPECT_EQ(cfg.get_list("tune.rho"), (std::vector<double>{0.5, 2.0}));
  EXPECT_THROW(KeyValueConfig::parse("novalue\n"), ParseError);
}

TEST(Config, MissingSeedNamesField) {
  const auto cfg = KeyValueConfig::parse("method = linear\n");
  const std::string msg = ErrorOf([&] { parse_run_config(cfg, true); });
  EXPECT_NE(msg.find("'seed'"), std::string::npos) << msg;
}

TEST(Config, UnknownKeyRejected) {
  const auto cfg = KeyValueConfig::parse("seed = 1\nforest.trees = 10\n");
  const std::string msg = ErrorOf([&] { parse_run_config(cfg, true); });
  EXPECT_NE(msg.find("forest.trees"), std::string::npos) << msg;
}

TEST(Config, TuneGridIsCrossed) {
  const auto cfg = KeyValueConfig::parse("seed = 1\ntune.rho = 1, 2\ntune.lambda = 0.5, 5, 50\n");
  const auto rc = parse_run_config(cfg, true);
  ASSERT_EQ(rc.pipeline.grid.size(), 6u);
  EXPECT_EQ(rc.pipeline.grid[0].spec.rho(), 1.0);
  EXPECT_EQ(rc.pipeline.grid[2].lambda, 50.0);
  EXPECT_EQ(rc.pipeline.grid[3].spec.rho(), 2.0);
}

}  // namespace
}  // namespace pdir
