#ifndef FLDM_SPECTRAL_HPP
#define FLDM_SPECTRAL_HPP

#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <numbers>
#include <span>
#include <vector>

#include "fldm/ops.hpp"
#include "fldm/tensor.hpp"

namespace fldm {

using cplx = std::complex<double>;

/// Complex array with split real/imaginary storage; the transform axis is the
/// last one.
struct ComplexTensor {
  Shape shape;
  std::vector<double> re;
  std::vector<double> im;

  ComplexTensor() = default;
  explicit ComplexTensor(Shape s)
      : shape(std::move(s)), re(shape_numel(shape), 0.0), im(shape_numel(shape), 0.0) {}
  ComplexTensor(Shape s, std::vector<double> r, std::vector<double> i)
      : shape(std::move(s)), re(std::move(r)), im(std::move(i)) {
    if (re.size() != shape_numel(shape) || im.size() != re.size()) {
      throw ShapeError("complex tensor buffers do not match shape " + shape_str(shape));
    }
  }

  static ComplexTensor from_real(const Tensor& x) {
    return ComplexTensor(x.shape(), std::vector<double>(x.values().begin(), x.values().end()),
                         std::vector<double>(x.numel(), 0.0));
  }

  std::size_t numel() const { return re.size(); }
  std::size_t length() const { return shape.empty() ? 1 : shape.back(); }
  cplx at(std::size_t i) const { return {re[i], im[i]}; }
};

inline std::size_t next_pow2(std::size_t n) { return std::bit_ceil(std::max<std::size_t>(n, 1)); }

/// Number of Hermitian-nonredundant bins of a length-`padded` real transform.
inline std::size_t spectral_bins(std::size_t padded) { return padded / 2 + 1; }

/// O(L^2) reference transform along the last axis, X[k] = sum_n x[n] e^{-2 pi i k n / L}.
inline ComplexTensor dft_naive(const ComplexTensor& x) {
  const std::size_t len = x.length();
  if (len == 0) throw ShapeError("dft_naive: empty transform axis");
  const std::size_t lanes = x.numel() / len;
  ComplexTensor out(x.shape);
  for (std::size_t r = 0; r < lanes; ++r) {
    for (std::size_t k = 0; k < len; ++k) {
      cplx acc{0.0, 0.0};
      for (std::size_t n = 0; n < len; ++n) {
        // Reduce k*n modulo len first so the angle stays small and exact.
        const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * n) % len) /
                           static_cast<double>(len);
        acc += x.at(r * len + n) * cplx(std::cos(ang), std::sin(ang));
      }
      out.re[r * len + k] = acc.real();
      out.im[r * len + k] = acc.imag();
    }
  }
  return out;
}

/// Iterative radix-2 Cooley-Tukey plan for one power-of-two length.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n), rev_(n), twiddle_(n / 2) {
    if (!std::has_single_bit(n)) throw ShapeError("FftPlan: length must be a power of two");
    const unsigned bits = static_cast<unsigned>(std::countr_zero(n));
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (unsigned b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      rev_[i] = r;
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = cplx(std::cos(ang), std::sin(ang));
    }
  }

  std::size_t size() const { return n_; }

  /// Unnormalised transform; `inverse` flips the exponent sign only.
  void execute(std::span<cplx> data, bool inverse) const {
    for (std::size_t i = 0; i < n_; ++i)
      if (i < rev_[i]) std::swap(data[i], data[rev_[i]]);
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          cplx w = twiddle_[j * stride];
          if (inverse) w = std::conj(w);
          const cplx u = data[start + j];
          const cplx v = data[start + j + half] * w;
          data[start + j] = u + v;
          data[start + j + half] = u - v;
        }
      }
    }
  }

  static const FftPlan& get(std::size_t n) {
    thread_local std::map<std::size_t, FftPlan> cache;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, FftPlan(n)).first;
    return it->second;
  }

 private:
  std::size_t n_;
  std::vector<std::size_t> rev_;
  std::vector<cplx> twiddle_;
};

/// FFT along the last axis after zero-padding it to the next power of two.
inline ComplexTensor fft_forward(const Tensor& x) {
  const std::size_t len = x.rank() == 0 ? 1 : x.shape().back();
  const std::size_t padded = next_pow2(len);
  const std::size_t lanes = x.numel() / len;
  Shape shape = x.shape();
  if (shape.empty()) shape.push_back(1);
  shape.back() = padded;
  ComplexTensor out(shape);
  const FftPlan& plan = FftPlan::get(padded);
  std::vector<cplx> buf(padded);
  const auto xv = x.values();
  for (std::size_t r = 0; r < lanes; ++r) {
    std::fill(buf.begin(), buf.end(), cplx{});
    for (std::size_t n = 0; n < len; ++n) buf[n] = xv[r * len + n];
    plan.execute(buf, false);
    for (std::size_t k = 0; k < padded; ++k) {
      out.re[r * padded + k] = buf[k].real();
      out.im[r * padded + k] = buf[k].imag();
    }
  }
  return out;
}

/// Inverse of fft_forward: normalised IFFT, real part, truncated to `length`.
inline Tensor ifft_inverse(const ComplexTensor& spectrum, std::size_t length) {
  const std::size_t padded = spectrum.length();
  if (length > padded) throw ShapeError("ifft_inverse: requested length exceeds transform length");
  const std::size_t lanes = spectrum.numel() / padded;
  Shape shape = spectrum.shape;
  shape.back() = length;
  std::vector<double> out(lanes * length);
  const FftPlan& plan = FftPlan::get(padded);
  std::vector<cplx> buf(padded);
  for (std::size_t r = 0; r < lanes; ++r) {
    for (std::size_t k = 0; k < padded; ++k) buf[k] = spectrum.at(r * padded + k);
    plan.execute(buf, true);
    for (std::size_t n = 0; n < length; ++n)
      out[r * length + n] = buf[n].real() / static_cast<double>(padded);
  }
  return Tensor(std::move(shape), std::move(out));
}

/// Learnable complex frequency response over the nonredundant half spectrum.
///
/// `weights` is a parameter tensor of shape [bins, 2] (shared across
/// channels) or [channels, bins, 2] (one response per channel); the trailing
/// axis holds (re, im). Bins mirrored onto themselves (DC, Nyquist) only use
/// their real part so the filtered signal stays real.
struct SpectralFilter {
  Tensor weights;

  std::size_t bins() const { return weights.shape()[weights.rank() - 2]; }
  std::size_t channels() const { return weights.rank() == 3 ? weights.dim(0) : 0; }
  bool per_channel() const { return weights.rank() == 3; }

  static SpectralFilter identity(std::size_t bins, std::size_t channels = 0) {
    Shape shape = channels ? Shape{channels, bins, 2} : Shape{bins, 2};
    Tensor w = Tensor::zeros(shape, true);
    auto d = w.data();
    for (std::size_t i = 0; i < d.size(); i += 2) d[i] = 1.0;
    return {w};
  }

  static SpectralFilter random(std::size_t bins, Rng& rng, std::size_t channels = 0) {
    Shape shape = channels ? Shape{channels, bins, 2} : Shape{bins, 2};
    Tensor w = Tensor::zeros(shape, true);
    auto d = w.data();
    for (std::size_t i = 0; i < d.size(); i += 2) {
      d[i] = rng.uniform(0.5, 1.5);
      d[i + 1] = rng.uniform(-0.5, 0.5);
    }
    return {w};
  }
};

namespace detail {

inline bool self_mirrored(std::size_t k, std::size_t padded) {
  return k == 0 || (padded % 2 == 0 && 2 * k == padded);
}

// Full-length Hermitian response built from the half spectrum of one channel.
inline void expand_response(std::span<const double> half, std::size_t padded,
                            std::vector<cplx>& full) {
  const std::size_t bins = spectral_bins(padded);
  full.resize(padded);
  for (std::size_t k = 0; k < bins; ++k) {
    full[k] = self_mirrored(k, padded) ? cplx(half[2 * k], 0.0) : cplx(half[2 * k], half[2 * k + 1]);
  }
  for (std::size_t k = bins; k < padded; ++k) full[k] = std::conj(full[padded - k]);
}

/// One lane of the filter pipeline, returning the complex inverse transform so
/// tests can observe the imaginary residue that the public op discards.
inline std::vector<cplx> filter_lane_complex(std::span<const double> x,
                                             std::span<const double> half,
                                             std::size_t padded) {
  std::vector<cplx> buf(padded, cplx{});
  for (std::size_t n = 0; n < x.size(); ++n) buf[n] = x[n];
  const FftPlan& plan = FftPlan::get(padded);
  plan.execute(buf, false);
  std::vector<cplx> full;
  expand_response(half, padded, full);
  for (std::size_t k = 0; k < padded; ++k) buf[k] *= full[k];
  plan.execute(buf, true);
  for (auto& v : buf) v /= static_cast<double>(padded);
  return buf;
}

}  // namespace detail

/// Convolution with a learnable kernel realised in the frequency domain:
/// IFFT(W . FFT(x)) along the last axis, truncated back to the input length.
inline Tensor kernel_integral(const Tensor& x, const SpectralFilter& filter) {
  if (x.rank() == 0) throw ShapeError("kernel_integral: input must have a time axis");
  const std::size_t len = x.shape().back();
  const std::size_t padded = next_pow2(len);
  const std::size_t bins = spectral_bins(padded);
  if (filter.bins() != bins) {
    throw ShapeError("kernel_integral: filter has " + std::to_string(filter.bins()) +
                     " bins, length " + std::to_string(len) + " needs " + std::to_string(bins));
  }
  std::size_t chans = 1;
  if (filter.per_channel()) {
    if (x.rank() < 2 || x.shape()[x.rank() - 2] != filter.channels()) {
      throw ShapeError("kernel_integral: per-channel filter with " +
                       std::to_string(filter.channels()) + " channels vs input " +
                       shape_str(x.shape()));
    }
    chans = filter.channels();
  }
  const std::size_t lanes = x.numel() / len;
  const FftPlan& plan = FftPlan::get(padded);
  const auto xv = x.values();
  const auto wv = filter.weights.values();

  std::vector<std::vector<cplx>> responses(chans);
  for (std::size_t c = 0; c < chans; ++c)
    detail::expand_response(wv.subspan(c * bins * 2, bins * 2), padded, responses[c]);

  // Spectra of the inputs are kept for the weight gradient.
  auto spectra = std::make_shared<std::vector<cplx>>(lanes * padded);
  std::vector<double> out(x.numel());
  std::vector<cplx> buf(padded);
  for (std::size_t r = 0; r < lanes; ++r) {
    std::fill(buf.begin(), buf.end(), cplx{});
    for (std::size_t n = 0; n < len; ++n) buf[n] = xv[r * len + n];
    plan.execute(buf, false);
    std::copy(buf.begin(), buf.end(), spectra->begin() + static_cast<std::ptrdiff_t>(r * padded));
    const auto& resp = responses[r % chans];
    for (std::size_t k = 0; k < padded; ++k) buf[k] *= resp[k];
    plan.execute(buf, true);
    for (std::size_t n = 0; n < len; ++n)
      out[r * len + n] = buf[n].real() / static_cast<double>(padded);
  }
  Tensor result(x.shape(), std::move(out));

  const Tensor& w = filter.weights;
  if (Graph* g = detail::recording_graph({&x, &w})) {
    g->record("kernel_integral", {x.impl(), w.impl()}, {result.impl()},
              [xi = x.impl(), wi = w.impl(), oi = result.impl(), spectra,
               responses = std::move(responses), len, padded, bins, lanes, chans]() {
                const FftPlan& plan = FftPlan::get(padded);
                if (xi->requires_grad) xi->ensure_grad();
                if (wi->requires_grad) wi->ensure_grad();
                std::vector<cplx> gy(padded), gx(padded);
                for (std::size_t r = 0; r < lanes; ++r) {
                  std::fill(gy.begin(), gy.end(), cplx{});
                  for (std::size_t n = 0; n < len; ++n) gy[n] = oi->grad[r * len + n];
                  plan.execute(gy, false);
                  const std::size_t c = r % chans;
                  if (xi->requires_grad) {
                    // The adjoint filter is the conjugate response.
                    for (std::size_t k = 0; k < padded; ++k) gx[k] = gy[k] * std::conj(responses[c][k]);
                    plan.execute(gx, true);
                    for (std::size_t n = 0; n < len; ++n)
                      xi->grad[r * len + n] += gx[n].real() / static_cast<double>(padded);
                  }
                  if (wi->requires_grad) {
                    double* gw = wi->grad.data() + c * bins * 2;
                    for (std::size_t k = 0; k < bins; ++k) {
                      const cplx z = (*spectra)[r * padded + k] * std::conj(gy[k]);
                      if (detail::self_mirrored(k, padded)) {
                        gw[2 * k] += z.real() / static_cast<double>(padded);
                      } else {
                        gw[2 * k] += 2.0 * z.real() / static_cast<double>(padded);
                        gw[2 * k + 1] -= 2.0 * z.imag() / static_cast<double>(padded);
                      }
                    }
                  }
                }
              });
  }
  return result;
}

/// Nonredundant spectrum of the last axis unpacked as [re_0..re_{b-1}, im_0..im_{b-1}].
inline Tensor rfft_features(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("rfft_features: input must have a time axis");
  const std::size_t len = x.shape().back();
  const std::size_t padded = next_pow2(len);
  const std::size_t bins = spectral_bins(padded);
  const std::size_t lanes = x.numel() / len;
  const FftPlan& plan = FftPlan::get(padded);
  const auto xv = x.values();
  Shape shape = x.shape();
  shape.back() = 2 * bins;
  std::vector<double> out(lanes * 2 * bins);
  std::vector<cplx> buf(padded);
  for (std::size_t r = 0; r < lanes; ++r) {
    std::fill(buf.begin(), buf.end(), cplx{});
    for (std::size_t n = 0; n < len; ++n) buf[n] = xv[r * len + n];
    plan.execute(buf, false);
    for (std::size_t k = 0; k < bins; ++k) {
      out[r * 2 * bins + k] = buf[k].real();
      out[r * 2 * bins + bins + k] = buf[k].imag();
    }
  }
  Tensor result(std::move(shape), std::move(out));
  if (Graph* g = detail::recording_graph({&x})) {
    g->record("rfft_features", {x.impl()}, {result.impl()},
              [xi = x.impl(), oi = result.impl(), len, padded, bins, lanes]() {
                const FftPlan& plan = FftPlan::get(padded);
                xi->ensure_grad();
                std::vector<cplx> buf(padded);
                for (std::size_t r = 0; r < lanes; ++r) {
                  std::fill(buf.begin(), buf.end(), cplx{});
                  for (std::size_t k = 0; k < bins; ++k)
                    buf[k] = cplx(oi->grad[r * 2 * bins + k], oi->grad[r * 2 * bins + bins + k]);
                  plan.execute(buf, true);
                  for (std::size_t n = 0; n < len; ++n) xi->grad[r * len + n] += buf[n].real();
                }
              });
  }
  return result;
}

}  // namespace fldm

#endif  // FLDM_SPECTRAL_HPP
