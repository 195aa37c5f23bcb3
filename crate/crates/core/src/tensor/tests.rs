use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::gradcheck::{check_gradients, random_tensor, GradcheckOptions};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn conv(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let mut g = Graph::new();
    let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
    let y = g.conv2d(xv, kv, stride, pad).unwrap();
    g.value(y).clone()
}

fn tconv(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let mut g = Graph::new();
    let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
    let y = g.conv_transpose2d(xv, kv, stride, pad).unwrap();
    g.value(y).clone()
}

/// Direct nested-loop cross-correlation.
fn naive_conv(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, w] = x.shape()[..] else { panic!() };
    let [ko, _, kh, kw] = k.shape()[..] else { panic!() };
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, ko, oh, ow]);
    for b in 0..n {
        for o in 0..ko {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for ch in 0..c {
                        for a in 0..kh {
                            for bb in 0..kw {
                                let yi = (i * stride + a) as isize - pad as isize;
                                let xj = (j * stride + bb) as isize - pad as isize;
                                if yi >= 0 && xj >= 0 && (yi as usize) < h && (xj as usize) < w {
                                    s += x.data()[((b * c + ch) * h + yi as usize) * w + xj as usize]
                                        * k.data()[((o * c + ch) * kh + a) * kw + bb];
                                }
                            }
                        }
                    }
                    out.data_mut()[((b * ko + o) * oh + i) * ow + j] = s;
                }
            }
        }
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn conv_of_ones_sums_the_window() {
    let y = conv(&Tensor::full(&[1, 1, 3, 3], 1.0), &Tensor::full(&[1, 1, 3, 3], 1.0), 1, 0);
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.item(), 9.0);
}

#[test]
fn delta_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[2, 1, 5, 6], -1.0, 1.0);
    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    assert_eq!(conv(&x, &k, 1, 1), x);
}

#[test]
fn conv_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let c = rng.random_range(1..4);
        let (h, w, ko) = (rng.random_range(3..9), rng.random_range(3..9), rng.random_range(1..4));
        let x = random_tensor(&mut rng, &[2, c, h, w], -1.0, 1.0);
        let k = random_tensor(&mut rng, &[ko, c, 3, 3], -1.0, 1.0);
        let (s, p) = (rng.random_range(1..3), rng.random_range(0..2));
        assert!(max_diff(conv(&x, &k, s, p).data(), naive_conv(&x, &k, s, p).data()) < 1e-12);
    }
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let k = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(g.conv2d(x, k, 1, 1), Err(Error::Dimension(_))));
    let k = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
    assert!(matches!(g.conv2d(x, k, 1, 0), Err(Error::Dimension(_))));
}

#[test]
fn stride_two_transpose_scatters_without_overlap() {
    let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let y = tconv(&x, &Tensor::full(&[1, 1, 2, 2], 1.0), 2, 0);
    assert_eq!(y.shape(), &[1, 1, 4, 4]);
    #[rustfmt::skip]
    let expect = [
        1.0, 1.0, 2.0, 2.0,
        1.0, 1.0, 2.0, 2.0,
        3.0, 3.0, 4.0, 4.0,
        3.0, 3.0, 4.0, 4.0,
    ];
    assert_eq!(y.data(), &expect);
}

#[test]
fn transpose_output_size() {
    let x = Tensor::zeros(&[1, 2, 5, 4]);
    assert_eq!(tconv(&x, &Tensor::zeros(&[2, 3, 3, 3]), 2, 1).shape(), &[1, 3, 9, 7]);
}

/// Random `(x, y, k, stride, pad)` whose conv output shape matches `y`.
fn adjoint_instance(rng: &mut ChaCha8Rng) -> (Tensor, Tensor, Tensor, usize, usize) {
    let stride = rng.random_range(1..4);
    let kh = [1, 3, 5][rng.random_range(0..3)];
    let pad = rng.random_range(0..=kh / 2);
    let (oh, ow) = (rng.random_range(1..5), rng.random_range(1..5));
    let h = (oh - 1) * stride + kh - 2 * pad;
    let w = (ow - 1) * stride + kh - 2 * pad;
    let (n, c, k) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let x = random_tensor(rng, &[n, c, h, w], -1.0, 1.0);
    let y = random_tensor(rng, &[n, k, oh, ow], -1.0, 1.0);
    let kern = random_tensor(rng, &[k, c, kh, kh], -1.0, 1.0);
    (x, y, kern, stride, pad)
}

#[test]
fn transpose_is_the_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (x, y, k, s, p) = adjoint_instance(&mut rng);
        let lhs = conv(&x, &k, s, p).dot(&y);
        let rhs = x.dot(&tconv(&y, &k, s, p));
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn relu_and_tanh_values() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let th = g.tanh(x);
    assert_eq!(g.value(th).data()[1], 0.0);
}

/// `tanh(x) = (e^{2x} - 1) / (e^{2x} + 1)` with the exponential summed
/// as a Taylor series.
fn series_tanh(x: f64) -> f64 {
    let mut term = 1.0;
    let mut e = 1.0;
    for n in 1..80 {
        term *= 2.0 * x / n as f64;
        e += term;
    }
    (e - 1.0) / (e + 1.0)
}

#[test]
fn tanh_of_two_matches_series() {
    let oracle = series_tanh(2.0);
    assert!((oracle - 0.964027580).abs() < 1e-9);
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(2.0));
    let y = g.tanh(x);
    assert!((g.value(y).item() - oracle).abs() < 1e-9);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[0.0, 1.0]));
    let r = g.relu(x);
    let s = g.sum(r);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).data(), &[0.0, 1.0]);
}

fn sample(src: &Tensor, flow: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let (s, f) = (g.constant(src.clone()), g.constant(flow.clone()));
    let y = g.grid_sample_bilinear(s, f).unwrap();
    g.value(y).clone()
}

#[test]
fn identity_flow_reproduces_source() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let src = random_tensor(&mut rng, &[4, 6], -1.0, 1.0);
    let flow = Tensor::from_fn(&[4, 6, 2], |i| {
        let p = i / 2;
        if i % 2 == 0 { (p % 6) as f64 } else { (p / 6) as f64 }
    });
    assert_eq!(sample(&src, &flow), src);
}

#[test]
fn bilinear_midpoint() {
    let src = t(&[2, 2], &[0.0, 1.0, 1.0, 0.0]);
    let flow = t(&[1, 1, 2], &[0.5, 0.5]);
    assert!((sample(&src, &flow).item() - 0.5).abs() < 1e-15);
}

#[test]
fn out_of_range_samples_read_zero() {
    let src = Tensor::full(&[3, 3], 1.0);
    let flow = t(&[1, 2, 2], &[-5.0, 1.0, 1.0, 7.5]);
    assert_eq!(sample(&src, &flow).data(), &[0.0, 0.0]);
}

fn blur(x: &Tensor, sigma: f64, ksize: usize) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = g.gaussian_blur2d(v, sigma, ksize).unwrap();
    g.value(y).clone()
}

#[test]
fn blur_preserves_constants() {
    let x = Tensor::from_fn(&[6, 6, 3], |i| [0.3, -1.2, 5.0][i % 3]);
    let y = blur(&x, 1.3, 5);
    assert!(max_diff(x.data(), y.data()) < 1e-14);
}

#[test]
fn blur_of_impulse_is_the_stencil() {
    let side = 9;
    let mut x = Tensor::zeros(&[side, side, 1]);
    x.data_mut()[4 * side + 4] = 1.0;
    let y = blur(&x, 1.0, 5);
    // stencil evaluated independently of the library kernel
    let mut oracle = vec![0.0; 25];
    for a in 0..5 {
        for b in 0..5 {
            let (dy, dx) = (a as f64 - 2.0, b as f64 - 2.0);
            oracle[a * 5 + b] = (-(dx * dx + dy * dy) / 2.0).exp();
        }
    }
    let total: f64 = oracle.iter().sum();
    for i in 0..side {
        for j in 0..side {
            let expect = if (2..7).contains(&i) && (2..7).contains(&j) {
                oracle[(i - 2) * 5 + (j - 2)] / total
            } else {
                0.0
            };
            assert!((y.data()[i * side + j] - expect).abs() < 1e-15);
        }
    }
    assert!(max_diff(&gaussian_stencil(1.0, 5), &oracle.iter().map(|v| v / total).collect::<Vec<_>>()) < 1e-15);
}

#[test]
fn blur_never_increases_max_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let x = random_tensor(&mut rng, &[7, 5, 3], -3.0, 3.0);
        let y = blur(&x, rng.random_range(0.3..3.0), 5);
        assert!(y.max_abs() <= x.max_abs() + 1e-12);
    }
}

#[test]
fn even_blur_kernel_is_rejected() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[4, 4, 3]));
    assert!(matches!(g.gaussian_blur2d(x, 1.0, 4), Err(Error::Parameter(_))));
}

#[test]
fn norms_and_their_gradients() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let sq = g.frobenius_norm_sq(x);
    assert_eq!(g.value(sq).item(), 30.0);
    g.backward(sq).unwrap();
    assert_eq!(g.grad(x).data(), &[2.0, 4.0, 6.0, 8.0]);

    let z = g.leaf(Tensor::zeros(&[3]));
    let nz = g.frobenius_norm(z);
    assert_eq!(g.value(nz).item(), 0.0);
    g.backward(nz).unwrap();
    assert_eq!(g.grad(z).data(), &[0.0; 3]);
}

#[test]
fn disconnected_leaf_has_zero_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let unused = g.leaf(t(&[3], &[1.0, 2.0, 3.0]));
    let s = g.frobenius_norm_sq(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(unused).data(), &[0.0; 3]);
}

#[test]
fn backward_needs_a_scalar() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let y = g.relu(x);
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));
}

#[test]
fn forward_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&mut rng, &[2, 3, 9, 9], -1.0, 1.0);
    let k = random_tensor(&mut rng, &[4, 3, 3, 3], -1.0, 1.0);
    let run = || {
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv2d(xv, kv, 2, 1).unwrap();
        let y = g.relu(y);
        let y = g.tanh(y);
        g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn f32_precision_stays_close() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, &[1, 3, 8, 8], -1.0, 1.0);
    let k = random_tensor(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
    let mut g = Graph::with_precision(Precision::F32);
    let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
    let y = g.conv2d(xv, kv, 1, 1).unwrap();
    assert!(max_diff(g.value(y).data(), conv(&x, &k, 1, 1).data()) < 1e-5);
}

fn fd_check(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> crate::Result<Var>, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cmp = check_gradients(inputs, f, &GradcheckOptions::default(), &mut rng).unwrap();
    assert!(cmp.checked > 0);
    assert!(cmp.worst_rel_err < tol, "worst relative error {}", cmp.worst_rel_err);
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(&mut rng, &[2, 3, 8, 8], -1.0, 1.0);
    let k = random_tensor(&mut rng, &[4, 3, 3, 3], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[2, 4, 8, 8], -1.0, 1.0);
    fd_check(
        &[x, k],
        |g, v| {
            let y = g.conv2d(v[0], v[1], 1, 1)?;
            g.weighted_sum(y, &w)
        },
        1e-6,
    );
}

#[test]
fn transpose_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let k = random_tensor(&mut rng, &[3, 2, 2, 2], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[2, 2, 8, 8], -1.0, 1.0);
    fd_check(
        &[x, k],
        |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], 2, 0)?;
            g.weighted_sum(y, &w)
        },
        1e-6,
    );
}

#[test]
fn grid_sample_flow_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let src = random_tensor(&mut rng, &[5, 5], -1.0, 1.0);
    let flow = random_tensor(&mut rng, &[5, 5, 2], 0.0, 4.0);
    let w = random_tensor(&mut rng, &[5, 5], -1.0, 1.0);
    fd_check(
        &[flow],
        |g, v| {
            let s = g.constant(src.clone());
            let y = g.grid_sample_bilinear(s, v[0])?;
            g.weighted_sum(y, &w)
        },
        1e-5,
    );
}

#[test]
fn blur_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&mut rng, &[6, 6, 3], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[6, 6, 3], -1.0, 1.0);
    fd_check(
        &[x],
        |g, v| {
            let y = g.gaussian_blur2d(v[0], 1.0, 5)?;
            g.weighted_sum(y, &w)
        },
        1e-6,
    );
}

#[test]
fn norm_gradient_away_from_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_tensor(&mut rng, &[4, 3], 0.2, 1.0);
    fd_check(&[x.clone()], |g, v| Ok(g.frobenius_norm(v[0])), 1e-7);
    fd_check(&[x], |g, v| Ok(g.frobenius_norm_sq(v[0])), 1e-7);
}

#[test]
fn relu_after_conv_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random_tensor(&mut rng, &[1, 2, 6, 6], -1.0, 1.0);
    let k = random_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[1, 3, 6, 6], -1.0, 1.0);
    fd_check(
        &[x, k],
        |g, v| {
            let y = g.conv2d(v[0], v[1], 1, 1)?;
            let y = g.relu(y);
            g.weighted_sum(y, &w)
        },
        1e-6,
    );
}

#[test]
fn resize_and_channels_last_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_fn(&[1, 2, 3, 3], |i| i as f64));
    let r = g.resize_bilinear(x, 5, 5).unwrap();
    assert_eq!(g.shape(r), &[1, 2, 5, 5]);
    // align-corners keeps corner values
    assert_eq!(g.value(r).data()[0], 0.0);
    assert_eq!(g.value(r).data()[24], 8.0);
    assert_eq!(g.value(r).data()[12], 4.0);
    let c = g.channels_last(r).unwrap();
    assert_eq!(g.shape(c), &[1, 5, 5, 2]);
    assert_eq!(g.value(c).data()[1], 9.0);
}
