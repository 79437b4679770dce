//! Separable upsampling: nearest-neighbour replication and corner-aligned
//! bilinear interpolation.

use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InterpMode {
    Nearest,
    Bilinear,
}

/// Per-output-index source pair and weights along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisPlan {
    pub src: Vec<(usize, usize)>,
    pub weights: Vec<(f64, f64)>,
}

impl AxisPlan {
    pub fn new(len_in: usize, scale: usize, mode: InterpMode) -> Self {
        let len_out = len_in * scale;
        let mut src = Vec::with_capacity(len_out);
        let mut weights = Vec::with_capacity(len_out);
        for o in 0..len_out {
            match mode {
                InterpMode::Nearest => {
                    src.push((o / scale, o / scale));
                    weights.push((1.0, 0.0));
                }
                InterpMode::Bilinear => {
                    // corners map to corners: o = 0 -> 0, o = out - 1 -> in - 1
                    let pos = if len_in == 1 {
                        0.0
                    } else {
                        o as f64 * (len_in - 1) as f64 / (len_out - 1) as f64
                    };
                    let i0 = (pos.floor() as usize).min(len_in - 1);
                    let i1 = (i0 + 1).min(len_in - 1);
                    let frac = pos - i0 as f64;
                    src.push((i0, i1));
                    weights.push((1.0 - frac, frac));
                }
            }
        }
        AxisPlan { src, weights }
    }

    pub fn len_out(&self) -> usize {
        self.src.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResamplePlan {
    pub h_in: usize,
    pub w_in: usize,
    pub rows: AxisPlan,
    pub cols: AxisPlan,
}

impl ResamplePlan {
    pub fn new(h_in: usize, w_in: usize, scale: usize, mode: InterpMode) -> Self {
        ResamplePlan {
            h_in,
            w_in,
            rows: AxisPlan::new(h_in, scale, mode),
            cols: AxisPlan::new(w_in, scale, mode),
        }
    }

    /// `x` holds `planes` consecutive `h_in x w_in` planes.
    pub fn forward<T: Scalar>(&self, x: &[T], planes: usize) -> Vec<T> {
        let (ho, wo) = (self.rows.len_out(), self.cols.len_out());
        let in_plane = self.h_in * self.w_in;
        let mut out = vec![T::zero(); planes * ho * wo];
        for p in 0..planes {
            let src = &x[p * in_plane..(p + 1) * in_plane];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for oy in 0..ho {
                let (y0, y1) = self.rows.src[oy];
                let (wy0, wy1) = self.rows.weights[oy];
                for ox in 0..wo {
                    let (x0, x1) = self.cols.src[ox];
                    let (wx0, wx1) = self.cols.weights[ox];
                    let v = T::of(wy0 * wx0) * src[y0 * self.w_in + x0]
                        + T::of(wy0 * wx1) * src[y0 * self.w_in + x1]
                        + T::of(wy1 * wx0) * src[y1 * self.w_in + x0]
                        + T::of(wy1 * wx1) * src[y1 * self.w_in + x1];
                    dst[oy * wo + ox] = v;
                }
            }
        }
        out
    }

    pub fn backward<T: Scalar>(&self, dout: &[T], planes: usize, dx: &mut [T]) {
        let (ho, wo) = (self.rows.len_out(), self.cols.len_out());
        let in_plane = self.h_in * self.w_in;
        for p in 0..planes {
            let g = &dout[p * ho * wo..(p + 1) * ho * wo];
            let d = &mut dx[p * in_plane..(p + 1) * in_plane];
            for oy in 0..ho {
                let (y0, y1) = self.rows.src[oy];
                let (wy0, wy1) = self.rows.weights[oy];
                for ox in 0..wo {
                    let (x0, x1) = self.cols.src[ox];
                    let (wx0, wx1) = self.cols.weights[ox];
                    let gv = g[oy * wo + ox];
                    d[y0 * self.w_in + x0] += T::of(wy0 * wx0) * gv;
                    d[y0 * self.w_in + x1] += T::of(wy0 * wx1) * gv;
                    d[y1 * self.w_in + x0] += T::of(wy1 * wx0) * gv;
                    d[y1 * self.w_in + x1] += T::of(wy1 * wx1) * gv;
                }
            }
        }
    }
}
