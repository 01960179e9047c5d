#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "idol/phantoms.hpp"

using namespace idol;
namespace fs = std::filesystem;

namespace {

double mean_sq_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

std::pair<double, double> mask_centroid(const Tensor& m) {
  double sx = 0.0, sy = 0.0, n = 0.0;
  for (std::size_t y = 0; y < m.dim(0); ++y)
    for (std::size_t x = 0; x < m.dim(1); ++x)
      if (m.at(y, x) > 0.5) {
        sx += static_cast<double>(x);
        sy += static_cast<double>(y);
        n += 1.0;
      }
  return {sx / n, sy / n};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("idol_test_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Phantoms, SameSeedSamePatient) {
  for (TaskKind task : {TaskKind::seg, TaskKind::sr, TaskKind::sct}) {
    const auto a = generate_patient(task, 99, 32), b = generate_patient(task, 99, 32);
    ASSERT_EQ(a.fractions.size(), kFractionsPerPatient + 1);
    for (std::size_t k = 0; k < a.fractions.size(); ++k) {
      EXPECT_EQ(a.fractions[k].first, b.fractions[k].first);
      EXPECT_EQ(a.fractions[k].second, b.fractions[k].second);
    }
    const auto c = generate_patient(task, 100, 32);
    EXPECT_NE(a.fractions[0].first, c.fractions[0].first);
  }
}

TEST(Phantoms, ValuesInUnitRangeAndSegTargetsBinary) {
  for (TaskKind task : {TaskKind::seg, TaskKind::sr, TaskKind::sct})
    for (std::uint64_t s = 0; s < 5; ++s)
      for (const auto& [in, tgt] : generate_patient(task, s, 32).fractions) {
        for (double v : in.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
        for (double v : tgt.data()) {
          ASSERT_TRUE(v >= 0.0 && v <= 1.0);
          if (task == TaskKind::seg) {
            ASSERT_TRUE(v == 0.0 || v == 1.0);
          }
        }
      }
}

TEST(Phantoms, SegForegroundFractionBounded) {
  for (std::uint64_t s = 0; s < 100; ++s)
    for (const auto& [in, tgt] : generate_patient(TaskKind::seg, s, 32).fractions) {
      double fg = 0.0;
      for (double v : tgt.data()) fg += v;
      fg /= static_cast<double>(tgt.size());
      ASSERT_GE(fg, 0.02) << "seed " << s;
      ASSERT_LE(fg, 0.40) << "seed " << s;
    }
}

TEST(Phantoms, PriorHasNoDrift) {
  for (TaskKind task : {TaskKind::seg, TaskKind::sr, TaskKind::sct}) {
    const auto base = draw_anatomy(task, 5);
    const auto d0 = drifted_anatomy(base, 0);
    EXPECT_EQ(d0.organ.cx, base.organ.cx);
    EXPECT_EQ(d0.organ.cy, base.organ.cy);
    EXPECT_EQ(d0.organ.a, base.organ.a);
    EXPECT_EQ(d0.organ.b, base.organ.b);
    EXPECT_EQ(d0.organ.angle, base.organ.angle);
    const auto d3 = drifted_anatomy(base, 3);
    EXPECT_NE(d3.organ.cx, base.organ.cx);
  }
}

TEST(Phantoms, DriftStaysWithinBounds) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto base = draw_anatomy(TaskKind::sct, s);
    auto prev = base;
    for (std::size_t k = 1; k <= kFractionsPerPatient; ++k) {
      const auto cur = drifted_anatomy(base, k);
      EXPECT_LE(std::hypot(cur.organ.cx - prev.organ.cx, cur.organ.cy - prev.organ.cy), kCenterDriftPerFraction);
      EXPECT_LE(std::abs(cur.organ.a / base.organ.a - 1.0), kAxisDrift);
      EXPECT_LE(std::abs(cur.organ.b / base.organ.b - 1.0), kAxisDrift);
      EXPECT_LE(std::abs(cur.organ.angle - base.organ.angle), kAngleDrift);
      prev = cur;
    }
  }
}

TEST(Phantoms, MaskCentroidMovesLittleBetweenFractions) {
  const double limit = kCenterDriftPerFraction * 32.0 + 1.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = generate_patient(TaskKind::seg, s, 32);
    for (std::size_t k = 1; k < p.fractions.size(); ++k) {
      const auto [x0, y0] = mask_centroid(p.fractions[k - 1].second);
      const auto [x1, y1] = mask_centroid(p.fractions[k].second);
      EXPECT_LE(std::hypot(x1 - x0, y1 - y0), limit) << "seed " << s << " fraction " << k;
    }
  }
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

TEST(Phantoms, PriorIsMoreSimilarThanOtherPatients) {
  for (TaskKind task : {TaskKind::seg, TaskKind::sr, TaskKind::sct}) {
    std::vector<PatientRecord> patients;
    for (std::uint64_t s = 0; s < 20; ++s) patients.push_back(generate_patient(task, 1000 + s, 32));
    for (std::size_t i = 0; i < patients.size(); ++i) {
      double own = 0.0, others = 0.0;
      for (std::size_t k = 1; k <= kFractionsPerPatient; ++k) {
        const Tensor& x = patients[i].fractions[k].first;
        own += mean_abs_diff(patients[i].prior().first, x);
        for (std::size_t j = 0; j < patients.size(); ++j)
          if (j != i) others += mean_abs_diff(patients[j].fractions[k].first, x) / static_cast<double>(patients.size() - 1);
      }
      EXPECT_LT(own, others) << to_string(task) << " patient " << i;
    }
  }
}

TEST(Phantoms, SrInputIsDegradedTarget) {
  for (std::uint64_t s = 0; s < 10; ++s)
    for (const auto& [in, tgt] : generate_patient(TaskKind::sr, s, 32).fractions) EXPECT_GT(mean_sq_diff(in, tgt), 1e-4);
}

TEST(Phantoms, SctInputAndTargetShareGeometry) {
  // every input pixel is the same underlying value as the target pixel, seen
  // through the patient map, so both images share every region boundary
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto p = generate_patient(TaskKind::sct, s, 32);
    for (const auto& [in, tgt] : p.fractions)
      for (std::size_t i = 0; i < in.size(); ++i) {
        const double mapped = p.anatomy.intensity_coeff * std::pow(tgt[i], 1.0 / kSctTargetGamma);
        ASSERT_NEAR(in[i], mapped, 5 * kInputNoiseSigma) << "seed " << s << " pixel " << i;
      }
  }
}

TEST(Phantoms, SctIntensityCoefficientRecoverable) {
  // inside the organ input ~= c * target^(1 / gamma) up to noise
  std::vector<double> coeffs;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto p = generate_patient(TaskKind::sct, s, 32);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < p.prior().first.size(); ++i) {
      const double v = std::pow(p.prior().second[i], 1.0 / kSctTargetGamma);
      if (v > 0.0 && p.anatomy.intensity_coeff * v < 0.95) {
        num += p.prior().first[i] * v;
        den += v * v;
      }
    }
    EXPECT_NEAR(num / den, p.anatomy.intensity_coeff, 0.02) << "seed " << s;
    coeffs.push_back(p.anatomy.intensity_coeff);
  }
  const double c1 = *std::min_element(coeffs.begin(), coeffs.end());
  const double c2 = *std::max_element(coeffs.begin(), coeffs.end());
  ASSERT_GT(c2 - c1, 0.2);
  // the ideal inverse map (u / c)^gamma differs for the same observed input u
  for (double u : {0.3, 0.5, 0.7})
    EXPECT_GT(std::pow(u / c1, kSctTargetGamma) - std::pow(u / c2, kSctTargetGamma), 0.05);
}

TEST(Phantoms, RejectsUnsupportedResolution) {
  EXPECT_THROW(generate_patient(TaskKind::seg, 1, 48), InvalidArgument);
  EXPECT_NO_THROW(generate_patient(TaskKind::seg, 1, 64));
}

TEST(Cohort, SplitsAreDisjointAndOrdered) {
  const auto c = build_cohort(TaskKind::sr, 20, 5, 32, 7);
  ASSERT_EQ(c.training.size(), 20u);
  ASSERT_EQ(c.heldout.size(), 5u);
  std::set<std::string> ids;
  for (const auto& p : c.training) ids.insert(p.id);
  for (const auto& p : c.heldout) {
    EXPECT_FALSE(c.is_training_patient(p.id));
    ids.insert(p.id);
  }
  EXPECT_EQ(ids.size(), 25u);
  EXPECT_EQ(c.training.front().id, "P001");
  EXPECT_EQ(c.heldout.front().id, "P021");
  EXPECT_EQ(c.heldout.back().id, "P025");
}

TEST(Cohort, MinimalCohortAndSampleCount) {
  const auto small = build_cohort(TaskKind::seg, 2, 1, 32, 3);
  EXPECT_EQ(small.training.size() + small.heldout.size(), 3u);
  EXPECT_NE(small.training[0].id, small.training[1].id);
  EXPECT_THROW(build_cohort(TaskKind::seg, 1, 1, 32, 3), InvalidArgument);
  EXPECT_THROW(build_cohort(TaskKind::seg, 2, 0, 32, 3), InvalidArgument);
  std::size_t samples = 0;
  for (const auto& p : build_cohort(TaskKind::sct, 20, 5, 32, 7).training) samples += p.fractions.size();
  EXPECT_EQ(samples, 20u * 9u);
}

TEST(Cohort, SaveIsByteIdenticalAndLoadRoundTrips) {
  TempDir a("cohort_a"), b("cohort_b");
  const auto c = build_cohort(TaskKind::seg, 3, 2, 32, 11);
  save_cohort(c, a.path);
  save_cohort(build_cohort(TaskKind::seg, 3, 2, 32, 11), b.path);
  for (const auto& entry : fs::recursive_directory_iterator(a.path)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a.path);
    EXPECT_EQ(slurp(entry.path()), slurp(b.path / rel)) << rel;
  }
  EXPECT_TRUE(fs::exists(a.path / "P004" / "frac08_target.pgm"));

  const auto loaded = load_cohort(a.path);
  EXPECT_EQ(loaded.task, TaskKind::seg);
  EXPECT_EQ(loaded.master_seed, 11u);
  ASSERT_EQ(loaded.training.size(), 3u);
  ASSERT_EQ(loaded.heldout.size(), 2u);
  EXPECT_EQ(loaded.heldout[1].id, "P005");
  EXPECT_EQ(loaded.heldout[1].anatomy.organ.cx, c.heldout[1].anatomy.organ.cx);
  EXPECT_EQ(loaded.heldout[1].anatomy.noise_seed, c.heldout[1].anatomy.noise_seed);
  for (std::size_t k = 0; k <= kFractionsPerPatient; ++k) {
    const auto& orig = c.heldout[1].fractions[k];
    const auto& back = loaded.heldout[1].fractions[k];
    EXPECT_EQ(back.second, orig.second);  // binary masks survive exactly
    for (std::size_t i = 0; i < orig.first.size(); ++i) ASSERT_NEAR(back.first[i], orig.first[i], 0.5 / kPgmScale);
  }
}

TEST(Pgm, ReadsEightBitWithComments) {
  TempDir d("pgm8");
  fs::create_directories(d.path);
  {
    std::ofstream out(d.path / "x.pgm", std::ios::binary);
    out << "P5\n# comment\n2 1\n255\n";
    out.put(static_cast<char>(0)).put(static_cast<char>(255));
  }
  const Tensor t = read_pgm(d.path / "x.pgm");
  ASSERT_EQ(t.shape(), (Shape{1, 2}));
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[1], 1.0);
}

TEST(Pgm, SixteenBitIsBigEndian) {
  TempDir d("pgm16");
  fs::create_directories(d.path);
  write_pgm16(d.path / "x.pgm", 1, 1, {0x0102});
  const std::string bytes = slurp(d.path / "x.pgm");
  EXPECT_EQ(bytes, std::string("P5\n1 1\n65535\n\x01\x02", 15));
}

TEST(Pgm, IoFailuresAreIoErrors) {
  TempDir d("pgmbad");
  fs::create_directories(d.path);
  EXPECT_THROW(read_pgm(d.path / "missing.pgm"), IoError);
  {
    std::ofstream out(d.path / "short.pgm", std::ios::binary);
    out << "P5\n4 4\n255\nab";
  }
  EXPECT_THROW(read_pgm(d.path / "short.pgm"), IoError);
  {
    std::ofstream out(d.path / "p2.pgm");
    out << "P2\n1 1\n255\n0\n";
  }
  EXPECT_THROW(read_pgm(d.path / "p2.pgm"), IoError);
}
