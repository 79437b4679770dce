//! Convolution kernels lowered to GEMM through a column buffer.
//!
//! A convolution is described by a list of input offsets ("taps") relative to
//! `output_position * stride`. Dense `k x k` kernels with dilation and padding
//! are one tap layout; sparse unions of several kernels are another.

use super::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub taps: Vec<(isize, isize)>,
}

/// Tap offsets of a dense `k x k` kernel, in row-major kernel order.
pub fn dense_taps(k: usize, dilation: usize, padding: usize) -> Vec<(isize, isize)> {
    let mut taps = Vec::with_capacity(k * k);
    for ky in 0..k {
        for kx in 0..k {
            taps.push((
                (ky * dilation) as isize - padding as isize,
                (kx * dilation) as isize - padding as isize,
            ));
        }
    }
    taps
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        h: usize,
        w: usize,
        ho: usize,
        wo: usize,
        stride: usize,
        taps: Vec<(isize, isize)>,
    ) -> Self {
        ConvGeom {
            channels,
            h,
            w,
            ho,
            wo,
            stride,
            taps,
        }
    }

    pub fn rows(&self) -> usize {
        self.channels * self.taps.len()
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    pub fn in_plane(&self) -> usize {
        self.h * self.w
    }

    /// Valid output column range `[lo, hi)` for a horizontal offset.
    #[inline]
    fn x_range(&self, dx: isize) -> (usize, usize) {
        let s = self.stride as isize;
        // ox * s + dx in [0, w)
        let lo = if dx >= 0 { 0 } else { ((-dx) + s - 1) / s };
        let hi = {
            let lim = self.w as isize - dx;
            if lim <= 0 {
                0
            } else {
                ((lim + s - 1) / s).min(self.wo as isize)
            }
        };
        (lo as usize, (hi.max(lo)) as usize)
    }

    /// Valid output row range `[lo, hi)` for a vertical offset.
    #[inline]
    fn y_range(&self, dy: isize) -> (usize, usize) {
        let s = self.stride as isize;
        let lo = if dy >= 0 { 0 } else { ((-dy) + s - 1) / s };
        let lim = self.h as isize - dy;
        let hi = if lim <= 0 { 0 } else { ((lim + s - 1) / s).min(self.ho as isize) };
        (lo as usize, hi.max(lo) as usize)
    }

    /// Zero borders added around each plane so every stride-1 tap row reads
    /// a full `wo` span: `(top, left, padded_h, padded_w)`.
    fn padding(&self) -> (usize, usize, usize, usize) {
        let (mut y0, mut y1, mut x0, mut x1) = (0isize, 0isize, 0isize, 0isize);
        for &(dy, dx) in &self.taps {
            y0 = y0.max(-dy);
            x0 = x0.max(-dx);
            y1 = y1.max(self.ho as isize - 1 + dy - (self.h as isize - 1));
            x1 = x1.max(self.wo as isize - 1 + dx - (self.w as isize - 1));
        }
        let (y0, y1, x0, x1) = (y0 as usize, y1 as usize, x0 as usize, x1 as usize);
        (y0, x0, self.h + y0 + y1, self.w + x0 + x1)
    }

    /// Scratch length needed by [`ConvGeom::im2col`] and [`ConvGeom::col2im`].
    pub fn scratch_len(&self) -> usize {
        if self.stride == 1 {
            let (_, _, hp, wp) = self.padding();
            self.channels * hp * wp
        } else {
            0
        }
    }

    /// `x` is one sample `[channels, h, w]`; `cols` is `[rows, ho * wo]`.
    ///
    /// At stride 2 only positions that read inside the input are written, so
    /// `cols` must start zeroed and be reused for this geometry only.
    /// `scratch` must hold [`ConvGeom::scratch_len`] zeros on first use.
    pub fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T], scratch: &mut [T]) {
        let p = self.cols();
        let plane = self.in_plane();
        if self.stride == 1 {
            let (top, left, hp, wp) = self.padding();
            for c in 0..self.channels {
                for y in 0..self.h {
                    let dst = (c * hp + top + y) * wp + left;
                    scratch[dst..dst + self.w].copy_from_slice(&x[c * plane + y * self.w..][..self.w]);
                }
            }
            let wo = self.wo;
            for c in 0..self.channels {
                let pc = &scratch[c * hp * wp..(c + 1) * hp * wp];
                for (t, &(dy, dx)) in self.taps.iter().enumerate() {
                    let row = &mut cols[(c * self.taps.len() + t) * p..][..p];
                    let base = ((top as isize + dy) * wp as isize + left as isize + dx) as usize;
                    rows_copy(row, &pc[base..], wo, wp, self.ho);
                }
            }
            return;
        }
        let s = self.stride;
        for c in 0..self.channels {
            let xc = &x[c * plane..(c + 1) * plane];
            for (t, &(dy, dx)) in self.taps.iter().enumerate() {
                let row = &mut cols[(c * self.taps.len() + t) * p..][..p];
                let (lo, hi) = self.x_range(dx);
                let (ylo, yhi) = self.y_range(dy);
                if lo >= hi {
                    continue;
                }
                for oy in ylo..yhi {
                    let out = &mut row[oy * self.wo + lo..oy * self.wo + hi];
                    let iy = ((oy * s) as isize + dy) as usize;
                    let src = &xc[iy * self.w..(iy + 1) * self.w];
                    for (o, ox) in out.iter_mut().zip(lo..hi) {
                        *o = src[((ox * s) as isize + dx) as usize];
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatter-adds `cols` into `dx`.
    /// Leaves `scratch` zeroed.
    pub fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T], scratch: &mut [T]) {
        let p = self.cols();
        let plane = self.in_plane();
        if self.stride == 1 {
            let (top, left, hp, wp) = self.padding();
            scratch.fill(T::zero());
            let wo = self.wo;
            for c in 0..self.channels {
                let pc = &mut scratch[c * hp * wp..(c + 1) * hp * wp];
                for (t, &(dy, dxo)) in self.taps.iter().enumerate() {
                    let row = &cols[(c * self.taps.len() + t) * p..][..p];
                    let base = ((top as isize + dy) * wp as isize + left as isize + dxo) as usize;
                    rows_add(&mut pc[base..], row, wo, wp, self.ho);
                }
            }
            for c in 0..self.channels {
                for y in 0..self.h {
                    let src = (c * hp + top + y) * wp + left;
                    for (d, &v) in x_row(dx, c * plane + y * self.w, self.w).iter_mut().zip(&scratch[src..src + self.w]) {
                        *d += v;
                    }
                }
            }
            scratch.fill(T::zero());
            return;
        }
        let s = self.stride;
        for c in 0..self.channels {
            let xc = &mut dx[c * plane..(c + 1) * plane];
            for (t, &(dy, dxo)) in self.taps.iter().enumerate() {
                let row = &cols[(c * self.taps.len() + t) * p..][..p];
                let (lo, hi) = self.x_range(dxo);
                let (ylo, yhi) = self.y_range(dy);
                if lo >= hi {
                    continue;
                }
                for oy in ylo..yhi {
                    let src = &row[oy * self.wo + lo..oy * self.wo + hi];
                    let iy = ((oy * s) as isize + dy) as usize;
                    let dst = &mut xc[iy * self.w..(iy + 1) * self.w];
                    for (&v, ox) in src.iter().zip(lo..hi) {
                        dst[((ox * s) as isize + dxo) as usize] += v;
                    }
                }
            }
        }
    }
}

#[inline]
fn x_row<T>(x: &mut [T], start: usize, len: usize) -> &mut [T] {
    &mut x[start..start + len]
}

#[inline(always)]
fn copy_fixed<T: Copy, const N: usize>(dst: &mut [T], src: &[T], wp: usize, rows: usize) {
    for (oy, d) in dst.chunks_exact_mut(N).take(rows).enumerate() {
        let d: &mut [T; N] = d.try_into().unwrap();
        let s: &[T; N] = src[oy * wp..oy * wp + N].try_into().unwrap();
        *d = *s;
    }
}

#[inline(always)]
fn add_fixed<T: Scalar, const N: usize>(dst: &mut [T], src: &[T], wp: usize, rows: usize) {
    for (oy, s) in src.chunks_exact(N).take(rows).enumerate() {
        let d: &mut [T; N] = (&mut dst[oy * wp..oy * wp + N]).try_into().unwrap();
        for i in 0..N {
            d[i] += s[i];
        }
    }
}

/// `dst[oy * wo..][..wo] = src[oy * wp..][..wo]` for each row.
fn rows_copy<T: Copy>(dst: &mut [T], src: &[T], wo: usize, wp: usize, rows: usize) {
    match wo {
        4 => copy_fixed::<T, 4>(dst, src, wp, rows),
        8 => copy_fixed::<T, 8>(dst, src, wp, rows),
        16 => copy_fixed::<T, 16>(dst, src, wp, rows),
        32 => copy_fixed::<T, 32>(dst, src, wp, rows),
        _ => {
            for oy in 0..rows {
                dst[oy * wo..(oy + 1) * wo].copy_from_slice(&src[oy * wp..oy * wp + wo]);
            }
        }
    }
}

/// `dst[oy * wp..][..wo] += src[oy * wo..][..wo]` for each row.
fn rows_add<T: Scalar>(dst: &mut [T], src: &[T], wo: usize, wp: usize, rows: usize) {
    match wo {
        4 => add_fixed::<T, 4>(dst, src, wp, rows),
        8 => add_fixed::<T, 8>(dst, src, wp, rows),
        16 => add_fixed::<T, 16>(dst, src, wp, rows),
        32 => add_fixed::<T, 32>(dst, src, wp, rows),
        _ => {
            for oy in 0..rows {
                for (d, &v) in dst[oy * wp..oy * wp + wo].iter_mut().zip(&src[oy * wo..(oy + 1) * wo]) {
                    *d += v;
                }
            }
        }
    }
}

/// `x: [n, channels, h, w]`, `w: [co, channels * taps]` -> `[n, co, ho, wo]`.
pub fn conv_forward<T: Scalar>(x: &[T], n: usize, w: &[T], co: usize, g: &ConvGeom) -> Vec<T> {
    let (r, p) = (g.rows(), g.cols());
    let in_len = g.channels * g.in_plane();
    let mut cols = vec![T::zero(); r * p];
    let mut scratch = vec![T::zero(); g.scratch_len()];
    let mut out = vec![T::zero(); n * co * p];
    for i in 0..n {
        g.im2col(&x[i * in_len..(i + 1) * in_len], &mut cols, &mut scratch);
        T::gemm(
            co,
            r,
            p,
            w,
            r as isize,
            1,
            &cols,
            p as isize,
            1,
            T::zero(),
            &mut out[i * co * p..(i + 1) * co * p],
            p as isize,
            1,
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    x: &[T],
    n: usize,
    w: &[T],
    co: usize,
    g: &ConvGeom,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (r, p) = (g.rows(), g.cols());
    let in_len = g.channels * g.in_plane();
    let mut cols = if dw.is_some() { vec![T::zero(); r * p] } else { Vec::new() };
    let mut dcols = if dx.is_some() { vec![T::zero(); r * p] } else { Vec::new() };
    let mut scratch = vec![T::zero(); g.scratch_len()];
    for i in 0..n {
        let dout_i = &dout[i * co * p..(i + 1) * co * p];
        if let Some(dw) = dw.as_deref_mut() {
            g.im2col(&x[i * in_len..(i + 1) * in_len], &mut cols, &mut scratch);
            T::gemm(
                co,
                p,
                r,
                dout_i,
                p as isize,
                1,
                &cols,
                1,
                p as isize,
                T::one(),
                dw,
                r as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            T::gemm(
                r,
                co,
                p,
                w,
                1,
                r as isize,
                dout_i,
                p as isize,
                1,
                T::zero(),
                &mut dcols,
                p as isize,
                1,
            );
            g.col2im(&dcols, &mut dx[i * in_len..(i + 1) * in_len], &mut scratch);
        }
    }
}

/// Transposed convolution as the adjoint of the convolution described by `g`.
///
/// `y: [n, ci, ho, wo]`, `w: [ci, channels * taps]` -> `[n, channels, h, w]`.
pub fn conv_t_forward<T: Scalar>(y: &[T], n: usize, w: &[T], ci: usize, g: &ConvGeom) -> Vec<T> {
    let (r, p) = (g.rows(), g.cols());
    let out_len = g.channels * g.in_plane();
    let mut cols = vec![T::zero(); r * p];
    let mut scratch = vec![T::zero(); g.scratch_len()];
    let mut out = vec![T::zero(); n * out_len];
    for i in 0..n {
        T::gemm(
            r,
            ci,
            p,
            w,
            1,
            r as isize,
            &y[i * ci * p..(i + 1) * ci * p],
            p as isize,
            1,
            T::zero(),
            &mut cols,
            p as isize,
            1,
        );
        g.col2im(&cols, &mut out[i * out_len..(i + 1) * out_len], &mut scratch);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_t_backward<T: Scalar>(
    y: &[T],
    n: usize,
    w: &[T],
    ci: usize,
    g: &ConvGeom,
    dout: &[T],
    mut dy: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (r, p) = (g.rows(), g.cols());
    let out_len = g.channels * g.in_plane();
    let mut cols = vec![T::zero(); r * p];
    let mut scratch = vec![T::zero(); g.scratch_len()];
    for i in 0..n {
        g.im2col(&dout[i * out_len..(i + 1) * out_len], &mut cols, &mut scratch);
        if let Some(dy) = dy.as_deref_mut() {
            T::gemm(
                ci,
                r,
                p,
                w,
                r as isize,
                1,
                &cols,
                p as isize,
                1,
                T::one(),
                &mut dy[i * ci * p..(i + 1) * ci * p],
                p as isize,
                1,
            );
        }
        if let Some(dw) = dw.as_deref_mut() {
            T::gemm(
                ci,
                p,
                r,
                &y[i * ci * p..(i + 1) * ci * p],
                p as isize,
                1,
                &cols,
                1,
                p as isize,
                T::one(),
                dw,
                r as isize,
                1,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[allow(clippy::too_many_arguments)]
    fn direct_conv(
        x: &[f64],
        (c, h, w): (usize, usize, usize),
        wt: &[f64],
        co: usize,
        k: usize,
        stride: usize,
        dil: usize,
        pad: usize,
    ) -> (Vec<f64>, usize, usize) {
        let ho = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
        let wo = (w + 2 * pad - dil * (k - 1) - 1) / stride + 1;
        let mut out = vec![0.0; co * ho * wo];
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky * dil) as isize - pad as isize;
                                let ix = (ox * stride + kx * dil) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[(ci * h + iy as usize) * w + ix as usize]
                                    * wt[((o * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        (out, ho, wo)
    }

    #[test]
    fn gemm_lowering_matches_direct_loops() {
        let (c, h, w, co) = (2, 7, 6, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        for &(k, stride, dil) in &[(1, 1, 1), (3, 1, 1), (3, 1, 2), (5, 1, 2), (3, 2, 1), (5, 2, 2)] {
            let pad = dil * (k - 1) / 2;
            let wt: Vec<f64> = (0..co * c * k * k).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
            let (want, ho, wo) = direct_conv(&x, (c, h, w), &wt, co, k, stride, dil, pad);
            let g = ConvGeom::new(c, h, w, ho, wo, stride, dense_taps(k, dil, pad));
            let got = conv_forward(&x, 1, &wt, co, &g);
            assert_eq!(got, want, "k={k} stride={stride} dilation={dil}");
        }
    }
}
