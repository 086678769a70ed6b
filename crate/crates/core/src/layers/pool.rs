use crate::error::{shape_err, Result};
use crate::tensor::{Real, Shape4, Tensor4};

/// Flat input offset of the winning cell of every output element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Shape4,
    pub argmax: Vec<usize>,
}

/// 2x2 max pooling, stride 2, "same" padding: output is `ceil(h/2) x
/// ceil(w/2)` and trailing windows on odd dimensions cover fewer cells.
/// Ties go to the lowest flat input index.
pub fn maxpool2<T: Real>(input: &Tensor4<T>) -> (Tensor4<T>, PoolIndices) {
    let s = input.shape();
    let os = Shape4::new(s.batch, s.height.div_ceil(2), s.width.div_ceil(2), s.channels);
    let mut out = Tensor4::zeros(os);
    let mut argmax = vec![0; os.len()];
    let data = input.data();
    for n in 0..s.batch {
        for oy in 0..os.height {
            for ox in 0..os.width {
                for c in 0..s.channels {
                    let mut best = usize::MAX;
                    for y in 2 * oy..(2 * oy + 2).min(s.height) {
                        for x in 2 * ox..(2 * ox + 2).min(s.width) {
                            let i = s.offset(n, y, x, c);
                            // row-major scan order visits lower indices first
                            if best == usize::MAX || data[i] > data[best] {
                                best = i;
                            }
                        }
                    }
                    let o = os.offset(n, oy, ox, c);
                    out[o] = data[best];
                    argmax[o] = best;
                }
            }
        }
    }
    (
        out,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    )
}

pub fn maxpool2_backward<T: Real>(indices: &PoolIndices, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
    if upstream.len() != indices.argmax.len() {
        return Err(shape_err!(
            "maxpool2 backward: upstream {} does not match {} pooled cells",
            upstream.shape(),
            indices.argmax.len()
        ));
    }
    let mut dx = Tensor4::zeros(indices.input_shape);
    for (&i, &g) in indices.argmax.iter().zip(upstream.data()) {
        dx[i] += g;
    }
    Ok(dx)
}
