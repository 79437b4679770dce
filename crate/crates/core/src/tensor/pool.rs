use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Avg,
    Max,
}

/// 2x2 window, stride 2. Returns the pooled planes and, for max pooling, the
/// flat input index selected for each output (ties go to the lowest index).
pub fn pool_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    kind: PoolKind,
) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::new();
    let quarter = T::of(0.25);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let idx = [
                    base + 2 * oy * w + 2 * ox,
                    base + 2 * oy * w + 2 * ox + 1,
                    base + (2 * oy + 1) * w + 2 * ox,
                    base + (2 * oy + 1) * w + 2 * ox + 1,
                ];
                match kind {
                    PoolKind::Avg => {
                        out.push((x[idx[0]] + x[idx[1]] + x[idx[2]] + x[idx[3]]) * quarter)
                    }
                    PoolKind::Max => {
                        let mut best = idx[0];
                        for &i in &idx[1..] {
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                }
            }
        }
    }
    (out, argmax)
}

pub fn pool_backward<T: Scalar>(
    dout: &[T],
    planes: usize,
    h: usize,
    w: usize,
    kind: PoolKind,
    argmax: &[usize],
    dx: &mut [T],
) {
    let (ho, wo) = (h / 2, w / 2);
    match kind {
        PoolKind::Max => {
            for (&g, &i) in dout.iter().zip(argmax) {
                dx[i] += g;
            }
        }
        PoolKind::Avg => {
            let quarter = T::of(0.25);
            for p in 0..planes {
                let base = p * h * w;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = dout[(p * ho + oy) * wo + ox] * quarter;
                        dx[base + 2 * oy * w + 2 * ox] += g;
                        dx[base + 2 * oy * w + 2 * ox + 1] += g;
                        dx[base + (2 * oy + 1) * w + 2 * ox] += g;
                        dx[base + (2 * oy + 1) * w + 2 * ox + 1] += g;
                    }
                }
            }
        }
    }
}
