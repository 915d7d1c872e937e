#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "lapir/evaluate.hpp"
#include "synthetic.hpp"

using namespace lapir;
namespace fs = std::filesystem;

namespace {

Plane random_plane(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Plane p(h, w);
  for (double& v : p.px) v = u(rng);
  return p;
}

// Smooth texture so SSIM sees real structure.
Plane texture(std::size_t h, std::size_t w, double phase) {
  Plane p(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) p(y, x) = 0.5 + 0.3 * std::sin(0.4 * x + phase) * std::cos(0.3 * y - phase);
  return p;
}

// SSIM from first principles: full 2-D Gaussian weights at every valid window.
double ssim_oracle(const Plane& a, const Plane& b) {
  const int k = 11;
  std::vector<double> w(k * k);
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double dy = i - 5, dx = j - 5;
      w[i * k + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      total += w[i * k + j];
    }
  }
  for (double& v : w) v /= total;
  const double c1 = 1e-4, c2 = 9e-4;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + k <= a.height; ++y) {
    for (std::size_t x = 0; x + k <= a.width; ++x) {
      double ma = 0, mb = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          ma += w[i * k + j] * a(y + i, x + j);
          mb += w[i * k + j] * b(y + i, x + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const double da = a(y + i, x + j) - ma, db = b(y + i, x + j) - mb;
          va += w[i * k + j] * da * da;
          vb += w[i * k + j] * db * db;
          cov += w[i * k + j] * da * db;
        }
      acc += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

MetricsReport report_with(const std::string& dataset, int scale, double psnr_db, double ssim_value) {
  MetricsReport r;
  r.rows.push_back({dataset, "img", scale, "bicubic", psnr_db, ssim_value, 0.1, false});
  r.aggregate();
  return r;
}

std::vector<ReferenceRow> shipped_reference() { return read_reference(fs::path(LAPIR_SOURCE_DIR) / "references/bicubic.csv"); }

}  // namespace

TEST(CropBorder, Examples) {
  EXPECT_EQ(crop_border(Plane(100, 100), 2).height, 96u);
  EXPECT_EQ(crop_border(Plane(81, 81), 3).width, 75u);
  const Plane p = random_plane(20, 17, 1);
  const Plane c = crop_border(p, 3);
  EXPECT_EQ(crop_border(c, 0), c);
  EXPECT_EQ(c(0, 0), p(3, 3));
  EXPECT_EQ(c(13, 10), p(16, 13));
  EXPECT_THROW(crop_border(Plane(6, 20), 3), Error);
}

TEST(CropToMultiple, TrimsBottomRight) {
  const Plane p = random_plane(55, 31, 2);
  const Plane c = crop_to_multiple(p, 4);
  EXPECT_EQ(c.height, 52u);
  EXPECT_EQ(c.width, 28u);
  EXPECT_EQ(c(51, 27), p(51, 27));
}

TEST(YCbCr, StudioSwingEndpoints) {
  const auto white = rgb_to_ycbcr({1.0, 1.0, 1.0});
  EXPECT_NEAR(white[0], 235.0 / 255.0, 1e-12);
  EXPECT_NEAR(white[1], 128.0 / 255.0, 1e-12);
  EXPECT_NEAR(white[2], 128.0 / 255.0, 1e-12);
  const auto black = rgb_to_ycbcr({0.0, 0.0, 0.0});
  EXPECT_NEAR(black[0], 16.0 / 255.0, 1e-15);
  EXPECT_NEAR(black[1], 128.0 / 255.0, 1e-15);
  EXPECT_NEAR(black[2], 128.0 / 255.0, 1e-15);
  const auto red = rgb_to_ycbcr({1.0, 0.0, 0.0});
  EXPECT_NEAR(red[0], (16.0 + 65.481) / 255.0, 1e-12);
}

TEST(YCbCr, RoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::array<double, 3> c{u(rng), u(rng), u(rng)};
    const auto back = ycbcr_to_rgb(rgb_to_ycbcr(c));
    for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(back[k] - c[k]));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(YCbCr, ClampsOutOfRangeWithWarning) {
  ColorImage img;
  for (auto& p : img.ch) p = Plane(2, 2, 0.5);
  img.ch[0](0, 0) = 1.5;
  testing::internal::CaptureStderr();
  const ColorImage ycc = rgb_to_ycbcr(img);
  EXPECT_NE(testing::internal::GetCapturedStderr().find("clamped"), std::string::npos);
  const auto want = rgb_to_ycbcr(std::array<double, 3>{1.0, 0.5, 0.5});
  EXPECT_NEAR(ycc.ch[0](0, 0), want[0], 1e-15);
}

TEST(Psnr, Examples) {
  const Plane a = random_plane(9, 9, 4);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_GT(psnr(a, a), 0.0);
  EXPECT_EQ(psnr(Plane(5, 5, 0.0), Plane(5, 5, 1.0)), 0.0);
  Plane b = a;
  for (std::size_t i = 0; i < b.px.size(); ++i) b.px[i] += (i % 2 ? 1.0 : -1.0) / 255.0;
  EXPECT_NEAR(psnr(a, b), 20.0 * std::log10(255.0), 1e-9);
  EXPECT_NEAR(psnr(a, b), 48.13, 0.005);
  EXPECT_THROW(psnr(a, random_plane(9, 8, 5)), Error);
  EXPECT_EQ(MetricsReport::format_number(psnr(a, a)), "inf");
}

TEST(Psnr, MonotoneInErrorMagnitude) {
  const Plane a = random_plane(12, 12, 6);
  const Plane e = random_plane(12, 12, 7);
  double prev = -1.0;
  for (double s = 1.0; s > 1e-4; s *= 0.5) {
    Plane b = a;
    for (std::size_t i = 0; i < b.px.size(); ++i) b.px[i] += s * (e.px[i] - 0.5);
    const double v = psnr(a, b);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(Ssim, MatchesDirectWindowOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Plane a = texture(23, 19, 0.3 * seed);
    Plane b = a;
    const Plane noise = random_plane(23, 19, 10 + seed);
    for (std::size_t i = 0; i < b.px.size(); ++i) b.px[i] += 0.1 * (noise.px[i] - 0.5);
    EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-12);
  }
}

TEST(Ssim, Examples) {
  const Plane a = texture(32, 32, 0.0);
  EXPECT_EQ(ssim(a, a), 1.0);
  Plane neg = a;
  for (double& v : neg.px) v = 1.0 - v;
  EXPECT_LT(ssim(a, neg), 0.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Plane x = random_plane(16, 14, 100 + seed), y = random_plane(16, 14, 200 + seed);
    const double s = ssim(x, y);
    EXPECT_EQ(s, ssim(y, x));
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
    EXPECT_LT(s, 1.0 - 1e-9);
  }
  EXPECT_THROW(ssim(Plane(10, 20), Plane(10, 20)), Error);
  EXPECT_THROW(ssim(Plane(12, 12), Plane(12, 13)), Error);
}

TEST(Evaluate, IdentityGivesSentinelAndUnitSsim) {
  const auto dir = fresh_dir("lapir_eval_identity");
  testdata::write_synthetic_set(dir, 3, 40, 36, 1);
  const MetricsReport r = evaluate(dir, Method::identity, 3);
  ASSERT_EQ(r.rows.size(), 3u);
  for (const auto& row : r.rows) {
    EXPECT_TRUE(std::isinf(row.psnr_db));
    EXPECT_EQ(row.ssim, 1.0);
    EXPECT_EQ(row.method, "identity");
  }
  EXPECT_NE(r.csv().find(",inf,1,"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Evaluate, BicubicIsDeterministicAcrossThreads) {
  const auto dir = fresh_dir("lapir_eval_bicubic");
  testdata::write_synthetic_set(dir, 4, 48, 52, 2);
  const MetricsReport a = evaluate(dir, Method::bicubic, 2, nullptr, 1);
  const MetricsReport b = evaluate(dir, Method::bicubic, 2, nullptr, 3);
  ASSERT_EQ(a.rows.size(), 4u);
  ASSERT_EQ(a.aggregates.size(), 1u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.rows[i].image, b.rows[i].image);
    EXPECT_EQ(a.rows[i].psnr_db, b.rows[i].psnr_db);
    EXPECT_EQ(a.rows[i].ssim, b.rows[i].ssim);
    EXPECT_GT(a.rows[i].psnr_db, 15.0);
    EXPECT_LT(a.rows[i].ssim, 1.0);
  }
  double mean = 0.0;
  for (const auto& row : a.rows) mean += row.psnr_db / 4.0;
  EXPECT_NEAR(a.aggregates[0].psnr_db, mean, 1e-12);
  EXPECT_EQ(a.aggregates[0].dataset, "lapir_eval_bicubic");
  fs::remove_all(dir);
}

TEST(Evaluate, BicubicMatchesManualProtocol) {
  const auto dir = fresh_dir("lapir_eval_manual");
  const auto files = testdata::write_synthetic_set(dir, 1, 50, 47, 3);
  const MetricsReport r = evaluate(dir, Method::bicubic, 3, nullptr, 1);
  const Plane hr = crop_to_multiple(luminance(read_image(files[0])), 3);
  ASSERT_EQ(hr.height, 48u);
  Plane lr = bicubic_resize(hr, 16, 15, true);
  Plane up = bicubic_resize(lr, 48, 45, false);
  for (double& v : up.px) v = std::clamp(v, 0.0, 1.0);
  EXPECT_DOUBLE_EQ(r.rows[0].psnr_db, psnr(crop_border(up, 3), crop_border(hr, 3)));
  EXPECT_DOUBLE_EQ(r.rows[0].ssim, ssim(crop_border(up, 3), crop_border(hr, 3)));
  fs::remove_all(dir);
}

TEST(Evaluate, UnreadableImageIsSkippedAndFlagged) {
  const auto dir = fresh_dir("lapir_eval_skip");
  testdata::write_synthetic_set(dir, 2, 40, 40, 4);
  std::ofstream(dir / "broken.png") << "not a png";
  testing::internal::CaptureStderr();
  const MetricsReport r = evaluate(dir, Method::bicubic, 2, nullptr, 1);
  EXPECT_NE(testing::internal::GetCapturedStderr().find("broken"), std::string::npos);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.skipped(), 1u);
  ASSERT_EQ(r.aggregates.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.aggregates[0].psnr_db));
  EXPECT_NE(r.csv().find("broken,2,bicubic,nan"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Evaluate, ThreadEnvironmentValidation) {
  ::setenv("LAPIR_THREADS", "3", 1);
  EXPECT_EQ(worker_threads(), 3u);
  ::setenv("LAPIR_THREADS", "x", 1);
  EXPECT_THROW(worker_threads(), Error);
  ::unsetenv("LAPIR_THREADS");
  EXPECT_EQ(worker_threads(), 1u);
}

TEST(Reference, ShippedTableHoldsPublishedBicubicRows) {
  const auto ref = shipped_reference();
  ASSERT_EQ(ref.size(), 15u);
  auto find = [&](const std::string& d, int s) {
    for (const auto& r : ref)
      if (r.dataset == d && r.scale == s) return r;
    ADD_FAILURE() << d << " x" << s;
    return ReferenceRow{};
  };
  EXPECT_EQ(find("Set5", 2).psnr_db, 33.65);
  EXPECT_EQ(find("Set5", 2).ssim, 0.929);
  EXPECT_EQ(find("Set14", 3).psnr_db, 27.55);
  EXPECT_EQ(find("Set14", 3).ssim, 0.774);
  EXPECT_EQ(find("Set5", 4).psnr_db, 28.42);
  EXPECT_EQ(find("Set5", 4).ssim, 0.810);
  EXPECT_EQ(find("Manga109", 4).psnr_db, 24.92);
  for (const auto& r : ref) EXPECT_EQ(r.method, "bicubic");
}

TEST(CompareReference, Examples) {
  const auto ref = shipped_reference();
  Comparison ok = compare_reference(report_with("Set14", 3, 27.60, 0.770), ref, 0.15, 0.01);
  ASSERT_EQ(ok.rows.size(), 1u);
  EXPECT_EQ(ok.rows[0].status(), "pass");
  EXPECT_TRUE(ok.all_pass());

  EXPECT_TRUE(compare_reference(MetricsReport{}, ref, 0.15, 0.01).rows.empty());

  Comparison bad = compare_reference(report_with("Set14", 3, 27.55 + 1.0, 0.774), ref, 0.15, 0.01);
  EXPECT_EQ(bad.rows[0].status(), "fail");
  EXPECT_FALSE(bad.all_pass());
  EXPECT_NE(bad.table().find(",fail"), std::string::npos);

  Comparison missing = compare_reference(report_with("Set14", 5, 20.0, 0.5), ref, 0.15, 0.01);
  EXPECT_EQ(missing.rows[0].status(), "missing");
  EXPECT_TRUE(missing.all_pass());

  // Directory names are often lower case.
  EXPECT_EQ(compare_reference(report_with("set14", 3, 27.55, 0.774), ref, 0.15, 0.01).rows[0].status(), "pass");
}

TEST(CompareReference, RejectsMalformedRows) {
  const auto dir = fresh_dir("lapir_eval_ref");
  std::ofstream(dir / "bad.csv") << "dataset,scale,method,psnr_db,ssim,source\nSet5,2,bicubic,abc,0.9,x\n";
  EXPECT_THROW(read_reference(dir / "bad.csv"), Error);
  EXPECT_THROW(read_reference(dir / "absent.csv"), Error);
  fs::remove_all(dir);
}
