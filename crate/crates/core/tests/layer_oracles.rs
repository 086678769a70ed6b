//! The optimized layer kernels against nested-loop and zero-stuffing
//! references, plus the algebraic properties of each primitive.

mod support;

use rand::Rng;
use segmicro::layers::{
    concat_channels, conv2d, maxpool2, maxpool2_backward, relu, softmax_channels, split_channels, transposed_conv2d, ConvParams,
};
use segmicro::{Shape4, Tensor4};
use support::*;

#[test]
fn conv2d_matches_nested_loops_on_random_shapes() {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let s = Shape4::new(r.random_range(1..3), r.random_range(1..9), r.random_range(1..9), r.random_range(1..4));
        let (k, cout) = (r.random_range(1..6), r.random_range(1..4));
        let x = random_tensor(&mut r, s);
        let p = random_params(&mut r, k, s.channels, cout, cout);
        worst = worst.max(rel_error(&conv2d(&x, &p).unwrap(), &brute_conv(&x, &p)));
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn conv2d_small_fixed_case() {
    // 1x4x4x1 input, 3x3x1x2 kernel
    let mut r = rng(2);
    let x = random_tensor(&mut r, Shape4::new(1, 4, 4, 1));
    let p = random_params(&mut r, 3, 1, 2, 2);
    assert!(rel_error(&conv2d(&x, &p).unwrap(), &brute_conv(&x, &p)) < 1e-6);
}

#[test]
fn transposed_conv_matches_zero_stuffing_on_random_shapes() {
    let mut r = rng(12);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let s = Shape4::new(r.random_range(1..3), r.random_range(1..5), r.random_range(1..5), r.random_range(1..4));
        let (k, cout) = (r.random_range(1..6), r.random_range(1..4));
        let x = random_tensor(&mut r, s);
        let p = random_params(&mut r, k, cout, s.channels, cout);
        let fast = transposed_conv2d(&x, &p).unwrap();
        assert_eq!(fast.shape(), Shape4::new(s.batch, 2 * s.height, 2 * s.width, cout));
        worst = worst.max(rel_error(&fast, &zero_stuffed_deconv(&x, &p)));
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn transposed_conv_is_adjoint_of_strided_conv() {
    // <deconv(x), y> = <x, conv_stride2(y)> with bias 0, where the strided
    // conv is the "same" conv sampled at even positions with the same kernel.
    let mut r = rng(13);
    for k in 1..=4 {
        let (cin, cout) = (2, 3);
        let x = random_tensor(&mut r, Shape4::new(1, 3, 4, cin));
        let mut p = random_params(&mut r, k, cout, cin, cout);
        p.bias = vec![0.0; cout];
        let y = random_tensor(&mut r, Shape4::new(1, 6, 8, cout));
        let lhs: f64 = transposed_conv2d(&x, &p).unwrap().data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let pad = k.saturating_sub(2) / 2;
        let mut rhs = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                for ci in 0..cin {
                    let mut acc = 0.0;
                    for a in 0..k {
                        for b in 0..k {
                            let (oy, ox) = (2 * i + a, 2 * j + b);
                            if oy < pad || ox < pad || oy - pad >= 6 || ox - pad >= 8 {
                                continue;
                            }
                            for co in 0..cout {
                                acc += y.at(0, oy - pad, ox - pad, co) * p.kernel.at(a, b, co, ci);
                            }
                        }
                    }
                    rhs += acc * x.at(0, i, j, ci);
                }
            }
        }
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "k={k}: {lhs} vs {rhs}");
    }
}

#[test]
fn linear_ops_are_linear_without_bias() {
    let mut r = rng(14);
    let (a, b) = (0.7, -1.3);
    let x = random_tensor(&mut r, Shape4::new(2, 5, 6, 2));
    let y = random_tensor(&mut r, Shape4::new(2, 5, 6, 2));
    let mix = Tensor4::from_vec(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
    let combine = |fx: &Tensor4<f64>, fy: &Tensor4<f64>| {
        Tensor4::from_vec(fx.shape(), fx.data().iter().zip(fy.data()).map(|(p, q)| a * p + b * q).collect()).unwrap()
    };
    let mut conv = random_params(&mut r, 3, 2, 4, 4);
    conv.bias = vec![0.0; 4];
    let mut deconv = random_params(&mut r, 2, 4, 2, 4);
    deconv.bias = vec![0.0; 4];
    let ops: [Box<dyn Fn(&Tensor4<f64>) -> Tensor4<f64>>; 3] = [
        Box::new(|t| conv2d(t, &conv).unwrap()),
        Box::new(|t| transposed_conv2d(t, &deconv).unwrap()),
        Box::new(|t| concat_channels(t, t).unwrap()),
    ];
    for op in &ops {
        assert!(rel_error(&op(&mix), &combine(&op(&x), &op(&y))) < 1e-12);
    }
}

#[test]
fn identity_kernel_is_exact_identity() {
    let mut r = rng(15);
    let x = random_tensor(&mut r, Shape4::new(1, 7, 5, 3));
    let mut p = ConvParams::zeros(3, 3, 3, 3);
    for c in 0..3 {
        p.kernel.set(1, 1, c, c, 1.0);
    }
    assert_eq!(conv2d(&x, &p).unwrap(), x);
}

#[test]
fn maxpool_takes_window_maxima() {
    let mut r = rng(16);
    for _ in 0..50 {
        let s = Shape4::new(1, r.random_range(1..9), r.random_range(1..9), r.random_range(1..3));
        let x = random_tensor(&mut r, s);
        let (out, idx) = maxpool2(&x);
        assert_eq!((out.shape().height, out.shape().width), (s.height.div_ceil(2), s.width.div_ceil(2)));
        for oy in 0..out.shape().height {
            for ox in 0..out.shape().width {
                for c in 0..s.channels {
                    let mut m = f64::NEG_INFINITY;
                    for y in 2 * oy..(2 * oy + 2).min(s.height) {
                        for xx in 2 * ox..(2 * ox + 2).min(s.width) {
                            m = m.max(x.at(0, y, xx, c));
                        }
                    }
                    assert_eq!(out.at(0, oy, ox, c), m);
                }
            }
        }
        // backward routes each upstream value to exactly one input cell
        let up = Tensor4::filled(out.shape(), 1.0);
        let back = maxpool2_backward(&idx, &up).unwrap();
        assert_eq!(back.data().iter().sum::<f64>(), out.len() as f64);
        assert!(back.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn maxpool_ties_go_to_lowest_index() {
    let x = Tensor4::filled(Shape4::new(1, 2, 2, 1), 3.0);
    let (out, idx) = maxpool2(&x);
    assert_eq!(out.data(), &[3.0]);
    let back = maxpool2_backward(&idx, &Tensor4::filled(out.shape(), 5.0)).unwrap();
    assert_eq!(back.data(), &[5.0, 0.0, 0.0, 0.0]);
}

#[test]
fn relu_and_softmax_properties() {
    let mut r = rng(17);
    let x = random_tensor(&mut r, Shape4::new(2, 4, 4, 3));
    assert_eq!(relu(&relu(&x)), relu(&x));
    let p = softmax_channels(&x).unwrap();
    for (px, lx) in p.data().chunks(3).zip(x.data().chunks(3)) {
        assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));
        let am = |v: &[f64]| (0..3).fold(0, |b, c| if v[c] > v[b] { c } else { b });
        assert_eq!(am(px), am(lx));
    }
    let shifted = x.map(|v| v + 123.0);
    assert!(rel_error(&softmax_channels(&shifted).unwrap(), &p) < 1e-12);
    let thirds = Tensor4::from_vec(Shape4::new(1, 1, 1, 3), vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
    let out = softmax_channels(&thirds).unwrap();
    for (v, e) in out.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert!((v - e).abs() < 1e-12);
    }
}

#[test]
fn concat_keeps_operand_order_and_splits_back() {
    let mut r = rng(18);
    let a = random_tensor(&mut r, Shape4::new(1, 3, 3, 3));
    let b = random_tensor(&mut r, Shape4::new(1, 3, 3, 5));
    let c = concat_channels(&a, &b).unwrap();
    assert_eq!(c.shape().channels, 8);
    assert_eq!(c.at(0, 2, 1, 2), a.at(0, 2, 1, 2));
    assert_eq!(c.at(0, 2, 1, 3), b.at(0, 2, 1, 0));
    let (a2, b2) = split_channels(&c, 3).unwrap();
    assert_eq!((a2, b2), (a, b.clone()));
    let err = concat_channels(&b, &random_tensor(&mut r, Shape4::new(1, 4, 3, 1))).unwrap_err();
    assert!(err.to_string().contains("1x3x3x5"), "{err}");
}
