//! Channel-pooled statistics and the element-wise adaptive denormalization
//! they feed. Statistics pool over batch and spatial dims per channel; the
//! variance floor is [`NORM_EPS`].

use crate::error::{invalid, shape_mismatch, Result};
use crate::{Shape, Tensor};

/// Engine-wide variance floor inside the square root.
pub const NORM_EPS: f32 = 1e-5;

/// Per-channel mean and standard deviation (strictly positive).
#[derive(Clone, Debug)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

fn pooled_moments(x: &[f32], shape: &Shape) -> (Vec<f64>, Vec<f64>) {
    let plane = shape.h * shape.w;
    let m = (shape.n * plane) as f64;
    let mut mean = vec![0.0f64; shape.c];
    let mut ex2 = vec![0.0f64; shape.c];
    for c in 0..shape.c {
        let mut s = 0.0f64;
        let mut s2 = 0.0f64;
        for n in 0..shape.n {
            let base = (n * shape.c + c) * plane;
            for &v in &x[base..base + plane] {
                let v = v as f64;
                s += v;
                s2 += v * v;
            }
        }
        mean[c] = s / m;
        ex2[c] = s2 / m;
    }
    (mean, ex2)
}

/// mean[c] and std[c] = sqrt(max(E[x^2] - mean^2, 0) + eps), pooled over
/// batch and spatial dims.
pub fn channel_stats(input: &Tensor) -> Result<ChannelStats> {
    let shape = input.shape();
    if shape.numel() == 0 {
        return Err(invalid("channel_stats", "empty input"));
    }
    let x = input.data();
    let (mean, ex2) = pooled_moments(&x, &shape);
    let std: Vec<f32> = mean
        .iter()
        .zip(&ex2)
        .map(|(&mu, &e2)| (((e2 - mu * mu).max(0.0)) + NORM_EPS as f64).sqrt() as f32)
        .collect();
    Ok(ChannelStats {
        mean: mean.iter().map(|&v| v as f32).collect(),
        std,
    })
}

fn check_affine_shapes(
    op: &'static str,
    input: &Shape,
    gamma: &Shape,
    beta: &Shape,
) -> Result<()> {
    for s in [gamma, beta] {
        let batch_ok = s.n == 1 || s.n == input.n;
        if !batch_ok || s.c != input.c || s.h != input.h || s.w != input.w {
            return Err(shape_mismatch(op, input, s));
        }
    }
    Ok(())
}

/// gamma[c,h,w] * (x - mean[c]) / std[c] + beta[c,h,w], with the statistics
/// supplied by the caller and treated as constants. gamma/beta broadcast over
/// the batch axis when their batch extent is 1.
pub fn adaptive_denormalize(
    input: &Tensor,
    stats: &ChannelStats,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<Tensor> {
    let xs = input.shape();
    check_affine_shapes("adaptive_denormalize", &xs, &gamma.shape(), &beta.shape())?;
    if stats.mean.len() != xs.c || stats.std.len() != xs.c {
        return Err(invalid(
            "adaptive_denormalize",
            format!("stats length {} does not match {} channels", stats.mean.len(), xs.c),
        ));
    }
    let plane = xs.h * xs.w;
    let gn = gamma.shape().n;
    let bn = beta.shape().n;
    let mut out = vec![0.0f32; xs.numel()];
    {
        let x = input.data();
        let gd = gamma.data();
        let bd = beta.data();
        for n in 0..xs.n {
            for c in 0..xs.c {
                let xb = (n * xs.c + c) * plane;
                let gb = ((n % gn) * xs.c + c) * plane;
                let bb = ((n % bn) * xs.c + c) * plane;
                let inv = 1.0 / stats.std[c] as f64;
                let mu = stats.mean[c] as f64;
                for p in 0..plane {
                    out[xb + p] = (gd[gb + p] as f64 * (x[xb + p] as f64 - mu) * inv
                        + bd[bb + p] as f64) as f32;
                }
            }
        }
    }
    let (p_in, p_g, p_b) = (input.clone(), gamma.clone(), beta.clone());
    let (mean, std) = (stats.mean.clone(), stats.std.clone());
    Ok(Tensor::from_op(
        out,
        xs,
        vec![input.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _| {
            let xs = p_in.shape();
            let plane = xs.h * xs.w;
            let gn = p_g.shape().n;
            let bn = p_b.shape().n;
            if p_in.requires_grad() {
                let gd = p_g.data();
                let mut d = vec![0.0f32; xs.numel()];
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let xb = (n * xs.c + c) * plane;
                        let gb = ((n % gn) * xs.c + c) * plane;
                        let inv = 1.0 / std[c];
                        for p in 0..plane {
                            d[xb + p] = g[xb + p] * gd[gb + p] * inv;
                        }
                    }
                }
                p_in.accumulate_grad_owned(d);
            }
            if p_g.requires_grad() {
                let x = p_in.data();
                let mut d = vec![0.0f32; p_g.numel()];
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let xb = (n * xs.c + c) * plane;
                        let gb = ((n % gn) * xs.c + c) * plane;
                        let inv = 1.0 / std[c];
                        let mu = mean[c];
                        for p in 0..plane {
                            d[gb + p] += g[xb + p] * (x[xb + p] - mu) * inv;
                        }
                    }
                }
                p_g.accumulate_grad_owned(d);
            }
            if p_b.requires_grad() {
                let mut d = vec![0.0f32; p_b.numel()];
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let xb = (n * xs.c + c) * plane;
                        let bb = ((n % bn) * xs.c + c) * plane;
                        for p in 0..plane {
                            d[bb + p] += g[xb + p];
                        }
                    }
                }
                p_b.accumulate_grad_owned(d);
            }
        }),
    ))
}

/// Fused channel normalization + adaptive denormalization: statistics are
/// computed from `input` inside the op and the backward pass carries their
/// full dependence (the composition the fusion blocks use).
pub fn adaptive_channel_norm(input: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let xs = input.shape();
    check_affine_shapes("adaptive_channel_norm", &xs, &gamma.shape(), &beta.shape())?;
    let plane = xs.h * xs.w;
    let m = xs.n * plane;
    let (mean, ex2) = pooled_moments(&input.data(), &xs);
    let std: Vec<f32> = mean
        .iter()
        .zip(&ex2)
        .map(|(&mu, &e2)| (((e2 - mu * mu).max(0.0)) + NORM_EPS as f64).sqrt() as f32)
        .collect();
    let meanf: Vec<f32> = mean.iter().map(|&v| v as f32).collect();

    let gn = gamma.shape().n;
    let bn = beta.shape().n;
    let mut out = vec![0.0f32; xs.numel()];
    {
        let x = input.data();
        let gd = gamma.data();
        let bd = beta.data();
        for n in 0..xs.n {
            for c in 0..xs.c {
                let xb = (n * xs.c + c) * plane;
                let gb = ((n % gn) * xs.c + c) * plane;
                let bb = ((n % bn) * xs.c + c) * plane;
                let inv = 1.0 / std[c] as f64;
                let mu = mean[c];
                for p in 0..plane {
                    out[xb + p] = (gd[gb + p] as f64 * (x[xb + p] as f64 - mu) * inv
                        + bd[bb + p] as f64) as f32;
                }
            }
        }
    }

    let (p_in, p_g, p_b) = (input.clone(), gamma.clone(), beta.clone());
    Ok(Tensor::from_op(
        out,
        xs,
        vec![input.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _| {
            let xs = p_in.shape();
            let plane = xs.h * xs.w;
            let gn = p_g.shape().n;
            let bn = p_b.shape().n;

            if p_b.requires_grad() {
                let mut d = vec![0.0f32; p_b.numel()];
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let xb = (n * xs.c + c) * plane;
                        let bb = ((n % bn) * xs.c + c) * plane;
                        for p in 0..plane {
                            d[bb + p] += g[xb + p];
                        }
                    }
                }
                p_b.accumulate_grad_owned(d);
            }
            if p_g.requires_grad() {
                let mut d = vec![0.0f32; p_g.numel()];
                {
                    let x = p_in.data();
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            let xb = (n * xs.c + c) * plane;
                            let gb = ((n % gn) * xs.c + c) * plane;
                            let inv = 1.0 / std[c];
                            let mu = meanf[c];
                            for p in 0..plane {
                                d[gb + p] += g[xb + p] * (x[xb + p] - mu) * inv;
                            }
                        }
                    }
                }
                p_g.accumulate_grad_owned(d);
            }
            if p_in.requires_grad() {
                // dL/dx_j = (1/sigma) [G_j - mean(G) - xhat_j * mean(G xhat)]
                // where G = gamma .* g, pooled per channel over (n, h, w).
                let mut d = vec![0.0f32; xs.numel()];
                {
                    let x = p_in.data();
                    let gd = p_g.data();
                    for c in 0..xs.c {
                        let inv = 1.0 / std[c] as f64;
                        let mu = meanf[c] as f64;
                        let mut sum_gg = 0.0f64;
                        let mut sum_ggx = 0.0f64;
                        for n in 0..xs.n {
                            let xb = (n * xs.c + c) * plane;
                            let gb = ((n % gn) * xs.c + c) * plane;
                            for p in 0..plane {
                                let gg = g[xb + p] as f64 * gd[gb + p] as f64;
                                let xhat = (x[xb + p] as f64 - mu) * inv;
                                sum_gg += gg;
                                sum_ggx += gg * xhat;
                            }
                        }
                        let mean_gg = sum_gg / m as f64;
                        let mean_ggx = sum_ggx / m as f64;
                        for n in 0..xs.n {
                            let xb = (n * xs.c + c) * plane;
                            let gb = ((n % gn) * xs.c + c) * plane;
                            for p in 0..plane {
                                let gg = g[xb + p] as f64 * gd[gb + p] as f64;
                                let xhat = (x[xb + p] as f64 - mu) * inv;
                                d[xb + p] = ((gg - mean_gg - xhat * mean_ggx) * inv) as f32;
                            }
                        }
                    }
                }
                p_in.accumulate_grad_owned(d);
            }
        }),
    ))
}
