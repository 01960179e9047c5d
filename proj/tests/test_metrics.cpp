#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "idol/metrics.hpp"
#include "idol/rng.hpp"
#include "metric_oracles.hpp"

using namespace idol;
namespace fs = std::filesystem;

namespace {

Tensor random_mask(Rng& rng, std::size_t n, double p) {
  Tensor t({n, n});
  for (double& v : t.data()) v = rng.uniform() < p ? 1.0 : 0.0;
  return t;
}

Tensor random_image(Rng& rng, std::size_t n) {
  Tensor t({n, n});
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("idol_metrics_" + name); }

MetricRecord rec(std::string stage, std::string patient, std::size_t epoch, std::string split, double loss) {
  return {std::move(stage), std::move(patient), epoch, std::move(split), loss, "", std::nullopt, 7};
}

}  // namespace

TEST(Dsc, HandValues) {
  Tensor a({20, 20}), b({20, 20});
  for (std::size_t i = 0; i < 100; ++i) a[i] = 1.0;
  for (std::size_t i = 50; i < 150; ++i) b[i] = 1.0;
  EXPECT_EQ(dsc(a, b), 0.5);
  EXPECT_EQ(dsc(a, a), 1.0);
  Tensor c({20, 20});
  for (std::size_t i = 200; i < 300; ++i) c[i] = 1.0;
  EXPECT_EQ(dsc(a, c), 0.0);
  EXPECT_EQ(dsc(Tensor({4, 4}), Tensor({4, 4})), 1.0);
}

TEST(Dsc, RejectsNonBinaryAndShapeMismatch) {
  Tensor a({2, 2}), b({2, 2});
  b[0] = 0.5;
  EXPECT_THROW(dsc(a, b), InvalidArgument);
  EXPECT_THROW(dsc(a, Tensor({2, 3})), InvalidArgument);
}

TEST(Dsc, SymmetricBoundedAndMatchesOracle) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_mask(rng, 16, rng.uniform()), b = random_mask(rng, 16, rng.uniform());
    const double d = dsc(a, b);
    EXPECT_EQ(d, dsc(b, a));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_NEAR(d, oracle::dsc(a, b), 1e-12);
  }
}

TEST(Threshold, HalfIsForeground) {
  Tensor p({1, 4});
  p[0] = 0.2;
  p[1] = 0.5;
  p[2] = 0.4999;
  p[3] = 0.9;
  const Tensor m = threshold_mask(p);
  EXPECT_EQ(m.data(), (std::vector<double>{0, 1, 0, 1}));
}

TEST(Psnr, CapAndHandValue) {
  Tensor a({10, 10}, 0.3);
  EXPECT_EQ(psnr(a, a), 100.0);
  Tensor b({10, 10}, 0.4);  // mse = 0.01 up to rounding of 0.4 - 0.3
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);
  Tensor z({2, 2}), h({2, 2});
  h[0] = 0.2;  // mse = 0.04 / 4 = 0.01
  EXPECT_NEAR(psnr(z, h), 20.0, 1e-12);
  EXPECT_THROW(psnr(a, Tensor({10, 11})), InvalidArgument);
}

TEST(Psnr, SymmetricAndMatchesOracle) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_image(rng, 16), b = random_image(rng, 16);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    EXPECT_NEAR(psnr(a, b), oracle::psnr(a, b), 1e-12);
  }
}

TEST(Mae, HandValues) {
  Tensor a({2, 2}), b({2, 2});
  a[2] = a[3] = 1.0;
  b[0] = b[2] = 1.0;
  EXPECT_EQ(mae(a, b), 0.5);
  EXPECT_EQ(mae(a, a), 0.0);
  EXPECT_EQ(mae(Tensor({3, 3}, 0.0), Tensor({3, 3}, 1.0)), 1.0);
  EXPECT_THROW(mae(a, Tensor({4})), InvalidArgument);
}

TEST(Mae, OracleAndTriangle) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_image(rng, 16), b = random_image(rng, 16), c = random_image(rng, 16);
    EXPECT_NEAR(mae(a, b), oracle::mae(a, b), 1e-12);
    EXPECT_LE(mae(a, c), mae(a, b) + mae(b, c) + 1e-15);
  }
}

TEST(GeneralizationError, AbsoluteGap) {
  EXPECT_NEAR(generalization_error(0.1, 0.3).value, 0.2, 1e-15);
  EXPECT_NEAR(generalization_error(0.3, 0.1).value, 0.2, 1e-15);
  EXPECT_EQ(generalization_error(0.25, 0.25).value, 0.0);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(), b = rng.uniform();
    EXPECT_GE(generalization_error(a, b).value, 0.0);
    EXPECT_EQ(generalization_error(a, b).value == 0.0, a == b);
  }
  EXPECT_THROW(generalization_error(NAN, 0.1), InvalidArgument);
  EXPECT_THROW(generalization_error(0.1, INFINITY), InvalidArgument);
  const auto g = generalization_error(0.1, 0.3, "idol", "P021");
  EXPECT_EQ(g.stage, "idol");
  EXPECT_EQ(g.scope, "P021");
}

TEST(MetricsLog, EpochsMustIncreaseWithinSeries) {
  MetricsLog log;
  log.add(rec("general", "cohort", 1, "train", 0.5));
  log.add(rec("general", "cohort", 1, "valid", 0.6));
  log.add(rec("general", "P021", 1, "valid", 0.6));
  log.add(rec("general", "cohort", 2, "train", 0.4));
  EXPECT_THROW(log.add(rec("general", "cohort", 2, "train", 0.3)), InvalidArgument);
  EXPECT_THROW(log.add(rec("general", "cohort", 1, "valid", 0.3)), InvalidArgument);
  EXPECT_THROW(log.add(rec("general", "cohort", 5, "test", 0.3)), InvalidArgument);
  EXPECT_THROW(log.add(rec("gen,eral", "cohort", 5, "train", 0.3)), InvalidArgument);
  EXPECT_EQ(log.series("general", "train", "cohort").size(), 2u);
  EXPECT_EQ(log.loss_at("general", "valid", "P021", 1), 0.6);
  EXPECT_THROW(log.loss_at("general", "valid", "P021", 2), InvalidArgument);
}

TEST(CurveExport, SingleRecordIsTwoLines) {
  MetricsLog log;
  log.add(rec("general", "cohort", 1, "train", 0.1));
  const auto path = temp_file("one.csv");
  curve_export(log, path);
  EXPECT_EQ(slurp(path), "stage,patient,epoch,split,loss,metric,metric_value,seed\n"
                         "general,cohort,1,train,0.10000000000000001,,,7\n");
  fs::remove(path);
  EXPECT_THROW(curve_export(MetricsLog{}, path), InvalidArgument);
}

TEST(CurveExport, RoundTripIsByteIdentical) {
  MetricsLog log;
  Rng rng(5);
  for (std::size_t e = 1; e <= 20; ++e) {
    log.add(rec("general", "cohort", e, "train", rng.uniform()));
    MetricRecord v = rec("idol", "P022", e, "valid", rng.uniform() * 1e-9);
    v.metric = "dsc";
    v.metric_value = rng.uniform();
    log.add(v);
  }
  const auto p1 = temp_file("rt1.csv"), p2 = temp_file("rt2.csv");
  curve_export(log, p1);
  const MetricsLog parsed = parse_curves(p1);
  EXPECT_EQ(parsed, log);
  curve_export(parsed, p2);
  EXPECT_EQ(slurp(p1), slurp(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST(CurveExport, ParseRejectsMalformedFiles) {
  const auto p = temp_file("bad.csv");
  EXPECT_THROW(parse_curves(p), IoError);
  {
    std::ofstream out(p);
    out << "stage,patient\n";
  }
  EXPECT_THROW(parse_curves(p), IoError);
  {
    std::ofstream out(p);
    out << kCurvesHeader << "\ngeneral,cohort,x,train,0.1,,,7\n";
  }
  EXPECT_THROW(parse_curves(p), IoError);
  fs::remove(p);
}
