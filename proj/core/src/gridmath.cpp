#include "fadebif/gridmath.hpp"

#include <algorithm>
#include <cmath>

namespace fadebif::grid {

namespace {

bool power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::vector<std::complex<double>> forward(std::span<const double> values) {
  std::vector<std::complex<double>> a(values.begin(), values.end());
  fft(a, false);
  return a;
}

}  // namespace

void fft(std::span<std::complex<double>> a, bool inverse) {
  const std::size_t n = a.size();
  if (!power_of_two(n)) throw Error("fft: size must be a power of two");
  // bit reversal
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 1.0 : -1.0) * kTwoPi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& z : a) z /= static_cast<double>(n);
}

double periodic_mean(std::span<const double> values) {
  if (values.empty()) throw Error("periodic_mean: empty input");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

std::vector<double> spectral_derivative(std::span<const double> values, int order) {
  const std::size_t n = values.size();
  auto a = forward(values);
  for (std::size_t j = 0; j < n; ++j) {
    if (n % 2 == 0 && j == n / 2 && order % 2 == 1) {
      a[j] = 0.0;  // Nyquist mode has no odd-order derivative for real data
      continue;
    }
    double k = j <= n / 2 ? static_cast<double>(j)
                          : static_cast<double>(j) - static_cast<double>(n);
    std::complex<double> ik(0.0, k);
    std::complex<double> f(1.0, 0.0);
    for (int p = 0; p < order; ++p) f *= ik;
    a[j] *= f;
  }
  fft(a, true);
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = a[j].real();
  return out;
}

std::vector<double> spectral_antiderivative(std::span<const double> values) {
  const std::size_t n = values.size();
  auto a = forward(values);
  a[0] = 0.0;  // enforce zero mean
  for (std::size_t j = 1; j < n; ++j) {
    if (n % 2 == 0 && j == n / 2) {
      a[j] = 0.0;
      continue;
    }
    long k = static_cast<long>(j <= n / 2 ? j : j - n);
    a[j] /= std::complex<double>(0.0, static_cast<double>(k));
  }
  fft(a, true);
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = a[j].real();
  return out;
}

TrigInterpolant::TrigInterpolant(std::span<const double> values) {
  const std::size_t n = values.size();
  auto a = forward(values);
  coeff_.resize(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) coeff_[k] = a[k] / static_cast<double>(n);
}

double TrigInterpolant::operator()(double phi) const {
  // f(phi) = c0 + 2 Re sum_{k>=1} c_k e^{ik phi}, Nyquist counted once
  const std::size_t m = coeff_.size() - 1;
  double acc = coeff_[0].real();
  for (std::size_t k = 1; k < m; ++k) {
    double c = std::cos(static_cast<double>(k) * phi);
    double s = std::sin(static_cast<double>(k) * phi);
    acc += 2.0 * (coeff_[k].real() * c - coeff_[k].imag() * s);
  }
  acc += coeff_[m].real() * std::cos(static_cast<double>(m) * phi);
  return acc;
}

double TrigInterpolant::derivative(double phi) const {
  const std::size_t m = coeff_.size() - 1;
  double acc = 0.0;
  for (std::size_t k = 1; k < m; ++k) {
    double kk = static_cast<double>(k);
    double c = std::cos(kk * phi);
    double s = std::sin(kk * phi);
    acc += 2.0 * kk * (-coeff_[k].real() * s - coeff_[k].imag() * c);
  }
  return acc;
}

CubicSpline::CubicSpline(std::span<const double> x, std::span<const double> y)
    : x_(x.begin(), x.end()), y_(y.begin(), y.end()) {
  const std::size_t n = x_.size();
  if (n < 2 || n != y_.size()) throw Error("CubicSpline: need matching inputs, size >= 2");
  for (std::size_t i = 1; i < n; ++i)
    if (x_[i] <= x_[i - 1]) throw Error("CubicSpline: x must be strictly increasing");
  m_.assign(n, 0.0);
  if (n == 2) return;
  // Thomas solve of the natural-spline tridiagonal system
  std::vector<double> c(n, 0.0), d(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    double h0 = x_[i] - x_[i - 1], h1 = x_[i + 1] - x_[i];
    double a = h0 / 6.0, b = (h0 + h1) / 3.0, cc = h1 / 6.0;
    double rhs = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
    double w = b - a * c[i - 1];
    c[i] = cc / w;
    d[i] = (rhs - a * d[i - 1]) / w;
  }
  for (std::size_t i = n - 2; i >= 1; --i) m_[i] = d[i] - c[i] * m_[i + 1];
}

double CubicSpline::operator()(double x) const {
  const std::size_t n = x_.size();
  if (x <= x_.front()) {
    double d = derivative(x_.front());
    return y_.front() + d * (x - x_.front());
  }
  if (x >= x_.back()) {
    double d = derivative(x_.back());
    return y_.back() + d * (x - x_.back());
  }
  auto it = std::upper_bound(x_.begin(), x_.end(), x);
  std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
  double h = x_[i + 1] - x_[i];
  double A = (x_[i + 1] - x) / h, B = (x - x_[i]) / h;
  return A * y_[i] + B * y_[i + 1] +
         ((A * A * A - A) * m_[i] + (B * B * B - B) * m_[i + 1]) * h * h / 6.0;
}

double CubicSpline::derivative(double x) const {
  const std::size_t n = x_.size();
  double xc = std::clamp(x, x_.front(), x_.back());
  std::size_t i =
      static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), xc) - x_.begin());
  if (i > 0) --i;
  if (i > n - 2) i = n - 2;
  double h = x_[i + 1] - x_[i];
  double A = (x_[i + 1] - xc) / h, B = (xc - x_[i]) / h;
  return (y_[i + 1] - y_[i]) / h -
         (3.0 * A * A - 1.0) / 6.0 * h * m_[i] + (3.0 * B * B - 1.0) / 6.0 * h * m_[i + 1];
}

std::vector<double> polyfit(std::span<const double> x, std::span<const double> y, int degree) {
  const std::size_t m = x.size();
  const std::size_t n = static_cast<std::size_t>(degree) + 1;
  if (m < n || y.size() != m) throw Error("polyfit: not enough points");
  // Column-major Vandermonde, in-place Householder QR.
  std::vector<double> A(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double p = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      A[j * m + i] = p;
      p *= x[i];
    }
  }
  std::vector<double> b(y.begin(), y.end());
  for (std::size_t j = 0; j < n; ++j) {
    double norm = 0.0;
    for (std::size_t i = j; i < m; ++i) norm += A[j * m + i] * A[j * m + i];
    norm = std::sqrt(norm);
    if (norm == 0.0) throw Error("polyfit: rank deficient");
    double alpha = A[j * m + j] > 0 ? -norm : norm;
    std::vector<double> v(m - j);
    v[0] = A[j * m + j] - alpha;
    for (std::size_t i = j + 1; i < m; ++i) v[i - j] = A[j * m + i];
    double vtv = 0.0;
    for (double vi : v) vtv += vi * vi;
    if (vtv == 0.0) throw Error("polyfit: rank deficient");
    A[j * m + j] = alpha;
    for (std::size_t i = j + 1; i < m; ++i) A[j * m + i] = 0.0;
    for (std::size_t c = j + 1; c < n; ++c) {
      double dot = 0.0;
      for (std::size_t i = j; i < m; ++i) dot += v[i - j] * A[c * m + i];
      double f = 2.0 * dot / vtv;
      for (std::size_t i = j; i < m; ++i) A[c * m + i] -= f * v[i - j];
    }
    double dot = 0.0;
    for (std::size_t i = j; i < m; ++i) dot += v[i - j] * b[i];
    double f = 2.0 * dot / vtv;
    for (std::size_t i = j; i < m; ++i) b[i] -= f * v[i - j];
  }
  // back substitution
  std::vector<double> c(n);
  for (std::size_t j = n; j-- > 0;) {
    double s = b[j];
    for (std::size_t k = j + 1; k < n; ++k) s -= A[k * m + j] * c[k];
    c[j] = s / A[j * m + j];
  }
  return c;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  auto c = polyfit(x, y, 1);
  LineFit f;
  f.intercept = c[0];
  f.slope = c[1];
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double r = y[i] - (c[0] + c[1] * x[i]);
    ss += r * r;
  }
  f.residual_rms = std::sqrt(ss / static_cast<double>(x.size()));
  return f;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw Error("quantile: empty input");
  std::sort(values.begin(), values.end());
  double pos = p * static_cast<double>(values.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= values.size()) return values.back();
  double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

}  // namespace fadebif::grid
