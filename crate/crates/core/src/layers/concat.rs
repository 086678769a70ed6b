use crate::error::{shape_err, Result};
use crate::tensor::{Real, Shape4, Tensor4};

/// Channel concatenation; `a`'s channels come first.
pub fn concat_channels<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.batch, sa.height, sa.width) != (sb.batch, sb.height, sb.width) {
        return Err(shape_err!("cannot concatenate {sa} and {sb}: spatial dims differ"));
    }
    let os = Shape4::new(sa.batch, sa.height, sa.width, sa.channels + sb.channels);
    let mut data = Vec::with_capacity(os.len());
    for (pa, pb) in a.data().chunks_exact(sa.channels).zip(b.data().chunks_exact(sb.channels)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Tensor4::from_vec(os, data)
}

/// Inverse of [`concat_channels`]: splits after the first `first` channels.
pub fn split_channels<T: Real>(t: &Tensor4<T>, first: usize) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let s = t.shape();
    if first == 0 || first >= s.channels {
        return Err(shape_err!("cannot split {s} after {first} channels"));
    }
    let rest = s.channels - first;
    let mut a = Vec::with_capacity(s.pixels() * s.batch * first);
    let mut b = Vec::with_capacity(s.pixels() * s.batch * rest);
    for px in t.data().chunks_exact(s.channels) {
        a.extend_from_slice(&px[..first]);
        b.extend_from_slice(&px[first..]);
    }
    Ok((
        Tensor4::from_vec(Shape4::new(s.batch, s.height, s.width, first), a)?,
        Tensor4::from_vec(Shape4::new(s.batch, s.height, s.width, rest), b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_and_round_trip() {
        let a = Tensor4::from_fn(Shape4::new(1, 2, 3, 3), |_, y, x, c| (y * 100 + x * 10 + c) as f32);
        let b = Tensor4::from_fn(Shape4::new(1, 2, 3, 5), |_, y, x, c| -((y * 100 + x * 10 + c) as f32));
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.shape(), Shape4::new(1, 2, 3, 8));
        assert_eq!(ab.at(0, 1, 2, 2), a.at(0, 1, 2, 2));
        assert_eq!(ab.at(0, 1, 2, 4), b.at(0, 1, 2, 1));
        let (ra, rb) = split_channels(&ab, 3).unwrap();
        assert_eq!((ra, rb), (a, b));
    }

    #[test]
    fn spatial_mismatch() {
        let a = Tensor4::<f32>::zeros(Shape4::new(1, 2, 2, 1));
        let b = Tensor4::<f32>::zeros(Shape4::new(1, 2, 3, 1));
        assert!(concat_channels(&a, &b).is_err());
    }
}
