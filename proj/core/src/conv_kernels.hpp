#pragma once

#include <algorithm>
#include <cstddef>

// Direct 3D convolution kernels, "same" zero padding, stride 1.
// Layouts: x [ci][d][h][w], w [co][ci][kd][kh][kw], y [co][d][h][w].
namespace msfa::detail {

struct ConvDims {
  std::size_t ci, co, d, h, w, kd, kh, kw;
};

// Valid output range along one axis for tap offset `off` (input index = out + off).
inline void tap_range(std::ptrdiff_t extent, std::ptrdiff_t off, std::ptrdiff_t& lo, std::ptrdiff_t& hi) {
  lo = std::max<std::ptrdiff_t>(0, -off);
  hi = std::min<std::ptrdiff_t>(extent, extent - off);
}

template <typename T>
void conv3d_forward(const ConvDims& s, const T* x, const T* w, const T* b, T* y) {
  const auto D = static_cast<std::ptrdiff_t>(s.d), H = static_cast<std::ptrdiff_t>(s.h),
             W = static_cast<std::ptrdiff_t>(s.w);
  const std::size_t vol = s.d * s.h * s.w;
  const std::size_t ksz = s.kd * s.kh * s.kw;
  const auto pd = static_cast<std::ptrdiff_t>(s.kd / 2), ph = static_cast<std::ptrdiff_t>(s.kh / 2),
             pw = static_cast<std::ptrdiff_t>(s.kw / 2);
  for (std::size_t co = 0; co < s.co; ++co) {
    T* yc = y + co * vol;
    std::fill(yc, yc + vol, b[co]);
    for (std::size_t ci = 0; ci < s.ci; ++ci) {
      const T* xc = x + ci * vol;
      const T* wk = w + (co * s.ci + ci) * ksz;
      for (std::size_t kz = 0; kz < s.kd; ++kz) {
        const std::ptrdiff_t dz = static_cast<std::ptrdiff_t>(kz) - pd;
        std::ptrdiff_t z0, z1;
        tap_range(D, dz, z0, z1);
        for (std::size_t ky = 0; ky < s.kh; ++ky) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
          std::ptrdiff_t y0, y1;
          tap_range(H, dy, y0, y1);
          const T* wr = wk + (kz * s.kh + ky) * s.kw;
          for (std::ptrdiff_t z = z0; z < z1; ++z) {
            for (std::ptrdiff_t yy = y0; yy < y1; ++yy) {
              T* out = yc + (z * H + yy) * W;
              const T* in = xc + ((z + dz) * H + (yy + dy)) * W;
              if (s.kw == 3) {
                const T w0 = wr[0], w1 = wr[1], w2 = wr[2];
                if (W == 1) {
                  out[0] += w1 * in[0];
                  continue;
                }
                out[0] += w1 * in[0] + w2 * in[1];
                for (std::ptrdiff_t xx = 1; xx < W - 1; ++xx) {
                  out[xx] += w0 * in[xx - 1] + w1 * in[xx] + w2 * in[xx + 1];
                }
                out[W - 1] += w0 * in[W - 2] + w1 * in[W - 1];
              } else {
                for (std::size_t kx = 0; kx < s.kw; ++kx) {
                  const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
                  std::ptrdiff_t x0, x1;
                  tap_range(W, dx, x0, x1);
                  const T wv = wr[kx];
                  for (std::ptrdiff_t xx = x0; xx < x1; ++xx) out[xx] += wv * in[xx + dx];
                }
              }
            }
          }
        }
      }
    }
  }
}

// gx += conv_transpose(gy, w). gx must be pre-initialized.
template <typename T>
void conv3d_backward_input(const ConvDims& s, const T* gy, const T* w, T* gx) {
  const auto D = static_cast<std::ptrdiff_t>(s.d), H = static_cast<std::ptrdiff_t>(s.h),
             W = static_cast<std::ptrdiff_t>(s.w);
  const std::size_t vol = s.d * s.h * s.w;
  const std::size_t ksz = s.kd * s.kh * s.kw;
  const auto pd = static_cast<std::ptrdiff_t>(s.kd / 2), ph = static_cast<std::ptrdiff_t>(s.kh / 2),
             pw = static_cast<std::ptrdiff_t>(s.kw / 2);
  for (std::size_t ci = 0; ci < s.ci; ++ci) {
    T* gxc = gx + ci * vol;
    for (std::size_t co = 0; co < s.co; ++co) {
      const T* gyc = gy + co * vol;
      const T* wk = w + (co * s.ci + ci) * ksz;
      for (std::size_t kz = 0; kz < s.kd; ++kz) {
        const std::ptrdiff_t dz = static_cast<std::ptrdiff_t>(kz) - pd;
        std::ptrdiff_t z0, z1;
        tap_range(D, dz, z0, z1);
        for (std::size_t ky = 0; ky < s.kh; ++ky) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
          std::ptrdiff_t y0, y1;
          tap_range(H, dy, y0, y1);
          const T* wr = wk + (kz * s.kh + ky) * s.kw;
          for (std::ptrdiff_t z = z0; z < z1; ++z) {
            for (std::ptrdiff_t yy = y0; yy < y1; ++yy) {
              const T* g = gyc + (z * H + yy) * W;
              T* out = gxc + ((z + dz) * H + (yy + dy)) * W;
              if (s.kw == 3) {
                // out[x + kx - 1] += w[kx] * g[x]
                const T w0 = wr[0], w1 = wr[1], w2 = wr[2];
                if (W == 1) {
                  out[0] += w1 * g[0];
                  continue;
                }
                out[0] += w1 * g[0] + w0 * g[1];
                for (std::ptrdiff_t xx = 1; xx < W - 1; ++xx) {
                  out[xx] += w2 * g[xx - 1] + w1 * g[xx] + w0 * g[xx + 1];
                }
                out[W - 1] += w2 * g[W - 2] + w1 * g[W - 1];
              } else {
                for (std::size_t kx = 0; kx < s.kw; ++kx) {
                  const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
                  std::ptrdiff_t x0, x1;
                  tap_range(W, dx, x0, x1);
                  const T wv = wr[kx];
                  for (std::ptrdiff_t xx = x0; xx < x1; ++xx) out[xx + dx] += wv * g[xx];
                }
              }
            }
          }
        }
      }
    }
  }
}

// gw += correlation(gy, x); gb += sum(gy).
template <typename T>
void conv3d_backward_weight(const ConvDims& s, const T* gy, const T* x, T* gw, T* gb) {
  const auto D = static_cast<std::ptrdiff_t>(s.d), H = static_cast<std::ptrdiff_t>(s.h),
             W = static_cast<std::ptrdiff_t>(s.w);
  const std::size_t vol = s.d * s.h * s.w;
  const std::size_t ksz = s.kd * s.kh * s.kw;
  const auto pd = static_cast<std::ptrdiff_t>(s.kd / 2), ph = static_cast<std::ptrdiff_t>(s.kh / 2),
             pw = static_cast<std::ptrdiff_t>(s.kw / 2);
  for (std::size_t co = 0; co < s.co; ++co) {
    const T* gyc = gy + co * vol;
    T acc_b = 0;
    for (std::size_t i = 0; i < vol; ++i) acc_b += gyc[i];
    gb[co] += acc_b;
    for (std::size_t ci = 0; ci < s.ci; ++ci) {
      const T* xc = x + ci * vol;
      T* wk = gw + (co * s.ci + ci) * ksz;
      for (std::size_t kz = 0; kz < s.kd; ++kz) {
        const std::ptrdiff_t dz = static_cast<std::ptrdiff_t>(kz) - pd;
        std::ptrdiff_t z0, z1;
        tap_range(D, dz, z0, z1);
        for (std::size_t ky = 0; ky < s.kh; ++ky) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
          std::ptrdiff_t y0, y1;
          tap_range(H, dy, y0, y1);
          T* wr = wk + (kz * s.kh + ky) * s.kw;
          if (s.kw == 3) {
            T a0 = 0, a1 = 0, a2 = 0;
            for (std::ptrdiff_t z = z0; z < z1; ++z) {
              for (std::ptrdiff_t yy = y0; yy < y1; ++yy) {
                const T* g = gyc + (z * H + yy) * W;
                const T* in = xc + ((z + dz) * H + (yy + dy)) * W;
                for (std::ptrdiff_t xx = 0; xx < W; ++xx) a1 += g[xx] * in[xx];
                for (std::ptrdiff_t xx = 1; xx < W; ++xx) a0 += g[xx] * in[xx - 1];
                for (std::ptrdiff_t xx = 0; xx + 1 < W; ++xx) a2 += g[xx] * in[xx + 1];
              }
            }
            wr[0] += a0;
            wr[1] += a1;
            wr[2] += a2;
          } else {
            for (std::size_t kx = 0; kx < s.kw; ++kx) {
              const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
              std::ptrdiff_t x0, x1;
              tap_range(W, dx, x0, x1);
              T acc = 0;
              for (std::ptrdiff_t z = z0; z < z1; ++z) {
                for (std::ptrdiff_t yy = y0; yy < y1; ++yy) {
                  const T* g = gyc + (z * H + yy) * W;
                  const T* in = xc + ((z + dz) * H + (yy + dy)) * W;
                  for (std::ptrdiff_t xx = x0; xx < x1; ++xx) acc += g[xx] * in[xx + dx];
                }
              }
              wr[kx] += acc;
            }
          }
        }
      }
    }
  }
}

}  // namespace msfa::detail
