#ifndef FADEBIF_GRIDMATH_HPP
#define FADEBIF_GRIDMATH_HPP

#include <complex>
#include <span>
#include <vector>

#include "fadebif/common.hpp"

// Periodic-grid calculus on uniform angle grids of power-of-two size,
// plus the small dense linear algebra the fitting code needs.
namespace fadebif::grid {

// In-place radix-2 FFT; size must be a power of two.
void fft(std::span<std::complex<double>> a, bool inverse);

// Mean of samples on a uniform periodic grid (the periodic trapezoid /
// rectangle rule; spectrally accurate for smooth periodic data).
double periodic_mean(std::span<const double> values);

// Spectral derivative d/dphi of 2pi-periodic samples.
std::vector<double> spectral_derivative(std::span<const double> values, int order = 1);

// Zero-mean spectral antiderivative of zero-mean periodic samples:
// the unique 2pi-periodic primitive with zero mean.
std::vector<double> spectral_antiderivative(std::span<const double> values);

// Fourier-series evaluation of periodic samples at an arbitrary angle.
class TrigInterpolant {
 public:
  explicit TrigInterpolant(std::span<const double> values);
  double operator()(double phi) const;
  double derivative(double phi) const;

 private:
  std::vector<std::complex<double>> coeff_;  // modes 0..n/2
};

// Natural cubic spline with linear extrapolation outside the knots.
class CubicSpline {
 public:
  CubicSpline() = default;
  CubicSpline(std::span<const double> x, std::span<const double> y);
  double operator()(double x) const;
  double derivative(double x) const;

 private:
  std::vector<double> x_, y_, m_;  // m_: second derivatives at knots
};

// Least-squares polynomial fit via Householder QR; returns coefficients
// c[0..degree] of c0 + c1 x + ... Throws on degenerate systems.
std::vector<double> polyfit(std::span<const double> x, std::span<const double> y, int degree);

struct LineFit {
  double slope = 0.0, intercept = 0.0, residual_rms = 0.0;
};
LineFit fit_line(std::span<const double> x, std::span<const double> y);

// Type-7 quantile (linear interpolation of order statistics).
double quantile(std::vector<double> values, double p);

}  // namespace fadebif::grid

#endif
