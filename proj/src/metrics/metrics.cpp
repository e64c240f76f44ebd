#include "metrics/metrics.h"

#include <cmath>
#include <string>
#include <vector>

namespace nvs {

namespace {

void check_same_shape(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError("image shapes differ: " + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " +
                     std::to_string(b.width) + "x" + std::to_string(b.height));
  }
}

constexpr int kWin = 11;

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWin);
  const double sigma = 1.5;
  double sum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Valid-mode separable filter: [h, w] -> [h - kWin + 1, w - kWin + 1].
std::vector<double> filter_valid(const std::vector<double>& x, int h, int w,
                                 const std::vector<double>& k) {
  const int ow = w - kWin + 1;
  const int oh = h - kWin + 1;
  std::vector<double> rows(static_cast<size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int xo = 0; xo < ow; ++xo) {
      double acc = 0;
      for (int i = 0; i < kWin; ++i) acc += k[i] * x[y * w + xo + i];
      rows[y * ow + xo] = acc;
    }
  }
  std::vector<double> out(static_cast<size_t>(oh) * ow);
  for (int yo = 0; yo < oh; ++yo) {
    for (int xo = 0; xo < ow; ++xo) {
      double acc = 0;
      for (int i = 0; i < kWin; ++i) acc += k[i] * rows[(yo + i) * ow + xo];
      out[yo * ow + xo] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_same_shape(a, b);
  double se = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    se += d * d;
  }
  const double mse = se / double(a.data.size());
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  check_same_shape(a, b);
  if (a.width < kWin || a.height < kWin) {
    throw ContractError("ssim needs images of at least " +
                        std::to_string(kWin) + "x" + std::to_string(kWin));
  }
  const auto kernel = gaussian_kernel();
  const int h = a.height, w = a.width;
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  const size_t n = static_cast<size_t>(h) * w;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  double total = 0;
  for (int ch = 0; ch < 3; ++ch) {
    for (size_t p = 0; p < n; ++p) {
      x[p] = a.data[p * 3 + ch];
      y[p] = b.data[p * 3 + ch];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = filter_valid(x, h, w, kernel);
    const auto my = filter_valid(y, h, w, kernel);
    const auto mxx = filter_valid(xx, h, w, kernel);
    const auto myy = filter_valid(yy, h, w, kernel);
    const auto mxy = filter_valid(xy, h, w, kernel);
    double acc = 0;
    for (size_t p = 0; p < mx.size(); ++p) {
      const double mu_x = mx[p], mu_y = my[p];
      const double var_x = mxx[p] - mu_x * mu_x;
      const double var_y = myy[p] - mu_y * mu_y;
      const double cov = mxy[p] - mu_x * mu_y;
      const double num = (2 * mu_x * mu_y + c1) * (2 * cov + c2);
      const double den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
      acc += num / den;
    }
    total += acc / double(mx.size());
  }
  return total / 3.0;
}

}  // namespace nvs
