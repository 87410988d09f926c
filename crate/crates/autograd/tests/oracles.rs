//! Reference-implementation checks: each fast path is compared against a
//! slow, independently written oracle on seeded random inputs.

use autograd::{channel_stats, conv2d, grid_sample, spectral_normalize, Parameter, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, scale: f32) -> Tensor {
    let data: Vec<f32> = (0..shape.numel())
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    Tensor::from_vec(data, shape).unwrap()
}

/// Direct six-loop convolution in f64, written before the im2col path.
fn conv_oracle(
    x: &[f32],
    xs: Shape,
    w: &[f32],
    ws: Shape,
    stride: usize,
    pad: usize,
) -> Vec<f32> {
    let k = ws.h;
    let oh = (xs.h + 2 * pad - k) / stride + 1;
    let ow = (xs.w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f32; xs.n * ws.n * oh * ow];
    for n in 0..xs.n {
        for oc in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ic in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                let xv = x[xs.index(n, ic, iy as usize, ix as usize)];
                                let wv = w[ws.index(oc, ic, ky, kx)];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((n * ws.n + oc) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_six_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1), (2, 0)] {
        let xs = Shape::new(2, 3, 5, 5);
        let ws = Shape::new(4, 3, 3, 3);
        let x = random_tensor(&mut rng, xs, 1.0);
        let w = random_tensor(&mut rng, ws, 0.5);
        let got = conv2d(&x, &w, None, stride, pad).unwrap();
        let want = conv_oracle(&x.to_vec(), xs, &w.to_vec(), ws, stride, pad);
        assert_eq!(got.numel(), want.len());
        for (i, (a, b)) in got.to_vec().iter().zip(&want).enumerate() {
            assert!(
                (a - b).abs() < 1e-5,
                "stride {stride} pad {pad} elem {i}: {a} vs {b}"
            );
        }
    }
}

/// Per-pixel bilinear interpolation oracle for displacement sampling.
fn grid_sample_oracle(x: &[f32], xs: Shape, flow: &[f32]) -> Vec<f32> {
    let plane = xs.h * xs.w;
    let mut out = vec![0.0f32; xs.numel()];
    for n in 0..xs.n {
        for oy in 0..xs.h {
            for ox in 0..xs.w {
                let p = oy * xs.w + ox;
                let nx = 2.0 * ox as f64 / (xs.w as f64 - 1.0) - 1.0;
                let ny = 2.0 * oy as f64 / (xs.h as f64 - 1.0) - 1.0;
                let fx = flow[(n * 2) * plane + p] as f64;
                let fy = flow[(n * 2 + 1) * plane + p] as f64;
                let sx = ((nx + fx).clamp(-1.0, 1.0) + 1.0) * 0.5 * (xs.w as f64 - 1.0);
                let sy = ((ny + fy).clamp(-1.0, 1.0) + 1.0) * 0.5 * (xs.h as f64 - 1.0);
                let x0 = sx.floor().clamp(0.0, xs.w as f64 - 1.0) as usize;
                let y0 = sy.floor().clamp(0.0, xs.h as f64 - 1.0) as usize;
                let x1 = (x0 + 1).min(xs.w - 1);
                let y1 = (y0 + 1).min(xs.h - 1);
                let ax = (sx - x0 as f64).clamp(0.0, 1.0);
                let ay = (sy - y0 as f64).clamp(0.0, 1.0);
                for c in 0..xs.c {
                    let b = (n * xs.c + c) * plane;
                    let v00 = x[b + y0 * xs.w + x0] as f64;
                    let v01 = x[b + y0 * xs.w + x1] as f64;
                    let v10 = x[b + y1 * xs.w + x0] as f64;
                    let v11 = x[b + y1 * xs.w + x1] as f64;
                    let v = v00 * (1.0 - ax) * (1.0 - ay)
                        + v01 * ax * (1.0 - ay)
                        + v10 * (1.0 - ax) * ay
                        + v11 * ax * ay;
                    out[b + p] = v as f32;
                }
            }
        }
    }
    out
}

#[test]
fn grid_sample_matches_bilinear_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let xs = Shape::new(2, 3, 7, 6);
    let x = random_tensor(&mut rng, xs, 1.0);
    let flow = random_tensor(&mut rng, Shape::new(2, 2, 7, 6), 0.3);
    let got = grid_sample(&x, &flow).unwrap();
    let want = grid_sample_oracle(&x.to_vec(), xs, &flow.to_vec());
    for (i, (a, b)) in got.to_vec().iter().zip(&want).enumerate() {
        assert!((a - b).abs() < 1e-5, "elem {i}: {a} vs {b}");
    }
}

#[test]
fn channel_stats_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let xs = Shape::new(2, 4, 8, 8);
    let x = random_tensor(&mut rng, xs, 2.0);
    let stats = channel_stats(&x).unwrap();
    let data = x.to_vec();
    let m = (xs.n * xs.h * xs.w) as f64;
    for c in 0..xs.c {
        // pass 1: mean
        let mut sum = 0.0f64;
        for n in 0..xs.n {
            for h in 0..xs.h {
                for w in 0..xs.w {
                    sum += data[xs.index(n, c, h, w)] as f64;
                }
            }
        }
        let mean = sum / m;
        // pass 2: centered variance
        let mut var = 0.0f64;
        for n in 0..xs.n {
            for h in 0..xs.h {
                for w in 0..xs.w {
                    var += (data[xs.index(n, c, h, w)] as f64 - mean).powi(2);
                }
            }
        }
        var /= m;
        let std = (var + autograd::NORM_EPS as f64).sqrt();
        assert!((stats.mean[c] as f64 - mean).abs() < 1e-5, "channel {c} mean");
        assert!((stats.std[c] as f64 - std).abs() < 1e-5, "channel {c} std");
    }
}

fn top_singular_value(mat: &[f32], rows: usize, cols: usize) -> f64 {
    let m = nalgebra::DMatrix::from_fn(rows, cols, |i, j| mat[i * cols + j] as f64);
    m.svd(false, false).singular_values[0]
}

#[test]
fn spectral_norm_output_has_unit_sigma_vs_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for trial in 0..5 {
        let rows = 64;
        let cols = 64;
        let shape = Shape::new(rows, cols, 1, 1);
        let data: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut p = Parameter::new(data, shape).unwrap();
        p.enable_spectral((0..rows).map(|_| rng.gen_range(-1.0..1.0f32)).collect());
        let w = spectral_normalize(&p, 50, true).unwrap();
        let sigma = top_singular_value(&w.to_vec(), rows, cols);
        assert!(
            (0.99..=1.01).contains(&sigma),
            "trial {trial}: sigma {sigma}"
        );
    }
}

#[test]
fn spectral_norm_on_conv_shaped_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let shape = Shape::new(16, 8, 3, 3);
    let data: Vec<f32> = (0..shape.numel()).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let mut p = Parameter::new(data, shape).unwrap();
    p.enable_spectral((0..16).map(|_| rng.gen_range(-1.0..1.0f32)).collect());
    let w = spectral_normalize(&p, 50, true).unwrap();
    let sigma = top_singular_value(&w.to_vec(), 16, 8 * 9);
    assert!((0.99..=1.01).contains(&sigma), "sigma {sigma}");
}
