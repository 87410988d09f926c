//! Differentiable elementwise primitives, activations, channel concatenation
//! and mean reduction.

use crate::error::{invalid, shape_mismatch, Result};
use crate::{Shape, Tensor};

/// Input floor applied inside `log` so the op never sees zero.
pub const LOG_CLAMP: f32 = 1e-8;

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Shape, Shape)> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(shape_mismatch(op, &sa, &sb));
    }
    Ok((sa, sb))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (shape, _) = check_same("add", a, b)?;
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        out,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            pa.accumulate_grad(g);
            pb.accumulate_grad(g);
        }),
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (shape, _) = check_same("sub", a, b)?;
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        out,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            pa.accumulate_grad(g);
            if pb.requires_grad() {
                let neg: Vec<f32> = g.iter().map(|x| -x).collect();
                pb.accumulate_grad_owned(neg);
            }
        }),
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (shape, _) = check_same("mul", a, b)?;
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        out,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            if pa.requires_grad() {
                let d: Vec<f32> = g.iter().zip(pb.data().iter()).map(|(gi, y)| gi * y).collect();
                pa.accumulate_grad_owned(d);
            }
            if pb.requires_grad() {
                let d: Vec<f32> = g.iter().zip(pa.data().iter()).map(|(gi, x)| gi * x).collect();
                pb.accumulate_grad_owned(d);
            }
        }),
    ))
}

pub fn mul_scalar(a: &Tensor, s: f32) -> Tensor {
    let shape = a.shape();
    let out: Vec<f32> = a.data().iter().map(|x| x * s).collect();
    let pa = a.clone();
    Tensor::from_op(
        out,
        shape,
        vec![a.clone()],
        Box::new(move |g, _| {
            if pa.requires_grad() {
                let d: Vec<f32> = g.iter().map(|gi| gi * s).collect();
                pa.accumulate_grad_owned(d);
            }
        }),
    )
}

pub fn add_scalar(a: &Tensor, s: f32) -> Tensor {
    let shape = a.shape();
    let out: Vec<f32> = a.data().iter().map(|x| x + s).collect();
    let pa = a.clone();
    Tensor::from_op(
        out,
        shape,
        vec![a.clone()],
        Box::new(move |g, _| pa.accumulate_grad(g)),
    )
}

pub fn neg(a: &Tensor) -> Tensor {
    mul_scalar(a, -1.0)
}

pub fn abs(a: &Tensor) -> Tensor {
    let shape = a.shape();
    let out: Vec<f32> = a.data().iter().map(|x| x.abs()).collect();
    let pa = a.clone();
    Tensor::from_op(
        out,
        shape,
        vec![a.clone()],
        Box::new(move |g, _| {
            if pa.requires_grad() {
                let d: Vec<f32> = g
                    .iter()
                    .zip(pa.data().iter())
                    .map(|(gi, x)| {
                        if *x > 0.0 {
                            *gi
                        } else if *x < 0.0 {
                            -*gi
                        } else {
                            0.0
                        }
                    })
                    .collect();
                pa.accumulate_grad_owned(d);
            }
        }),
    )
}

/// Natural log of the input clamped below at [`LOG_CLAMP`]. The gradient is
/// zero wherever the clamp is active.
pub fn log(a: &Tensor) -> Tensor {
    let shape = a.shape();
    let out: Vec<f32> = a.data().iter().map(|x| x.max(LOG_CLAMP).ln()).collect();
    let pa = a.clone();
    Tensor::from_op(
        out,
        shape,
        vec![a.clone()],
        Box::new(move |g, _| {
            if pa.requires_grad() {
                let d: Vec<f32> = g
                    .iter()
                    .zip(pa.data().iter())
                    .map(|(gi, x)| if *x > LOG_CLAMP { gi / x } else { 0.0 })
                    .collect();
                pa.accumulate_grad_owned(d);
            }
        }),
    )
}

pub fn relu(a: &Tensor) -> Tensor {
    leaky_relu(a, 0.0)
}

pub fn leaky_relu(a: &Tensor, slope: f32) -> Tensor {
    let shape = a.shape();
    let out: Vec<f32> = a
        .data()
        .iter()
        .map(|&x| if x > 0.0 { x } else { slope * x })
        .collect();
    let pa = a.clone();
    Tensor::from_op(
        out,
        shape,
        vec![a.clone()],
        Box::new(move |g, _| {
            if pa.requires_grad() {
                let d: Vec<f32> = g
                    .iter()
                    .zip(pa.data().iter())
                    .map(|(gi, &x)| if x > 0.0 { *gi } else { slope * gi })
                    .collect();
                pa.accumulate_grad_owned(d);
            }
        }),
    )
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    let shape = a.shape();
    let out: Vec<f32> = a.data().iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
    let pa = a.clone();
    Tensor::from_op(
        out,
        shape,
        vec![a.clone()],
        Box::new(move |g, y| {
            if pa.requires_grad() {
                let d: Vec<f32> = g.iter().zip(y.iter()).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                pa.accumulate_grad_owned(d);
            }
        }),
    )
}

pub fn tanh(a: &Tensor) -> Tensor {
    let shape = a.shape();
    let out: Vec<f32> = a.data().iter().map(|x| x.tanh()).collect();
    let pa = a.clone();
    Tensor::from_op(
        out,
        shape,
        vec![a.clone()],
        Box::new(move |g, y| {
            if pa.requires_grad() {
                let d: Vec<f32> = g.iter().zip(y.iter()).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                pa.accumulate_grad_owned(d);
            }
        }),
    )
}

/// Concatenation along the channel axis. Batch and spatial extents must agree.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.is_empty() {
        return Err(invalid("concat_channels", "no inputs"));
    }
    let first = inputs[0].shape();
    let mut c_total = 0;
    for t in inputs {
        let s = t.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(shape_mismatch("concat_channels", &first, &s));
        }
        c_total += s.c;
    }
    let out_shape = Shape::new(first.n, c_total, first.h, first.w);
    let plane = first.h * first.w;
    let mut out = vec![0.0f32; out_shape.numel()];
    for n in 0..first.n {
        let mut c_off = 0;
        for t in inputs {
            let s = t.shape();
            let src = t.data();
            let src_base = n * s.c * plane;
            let dst_base = (n * c_total + c_off) * plane;
            out[dst_base..dst_base + s.c * plane]
                .copy_from_slice(&src[src_base..src_base + s.c * plane]);
            c_off += s.c;
        }
    }
    let parents: Vec<Tensor> = inputs.iter().map(|t| (*t).clone()).collect();
    let bw_parents = parents.clone();
    Ok(Tensor::from_op(
        out,
        out_shape,
        parents,
        Box::new(move |g, _| {
            for n in 0..first.n {
                let mut c_off = 0;
                for p in &bw_parents {
                    let s = p.shape();
                    if p.requires_grad() {
                        let src_base = (n * c_total + c_off) * plane;
                        let mut d = vec![0.0f32; s.c * plane];
                        d.copy_from_slice(&g[src_base..src_base + s.c * plane]);
                        // scatter into the parent's n-th slab
                        let mut full = vec![0.0f32; s.numel()];
                        let dst_base = n * s.c * plane;
                        full[dst_base..dst_base + s.c * plane].copy_from_slice(&d);
                        p.accumulate_grad_owned(full);
                    }
                    c_off += s.c;
                }
            }
        }),
    ))
}

/// Mean over all elements, accumulated in f64, returned as a scalar tensor.
pub fn mean_all(a: &Tensor) -> Tensor {
    let n = a.numel();
    let sum: f64 = a.data().iter().map(|&x| x as f64).sum();
    let out = vec![(sum / n as f64) as f32];
    let pa = a.clone();
    Tensor::from_op(
        out,
        Shape::scalar(),
        vec![a.clone()],
        Box::new(move |g, _| {
            if pa.requires_grad() {
                let scale = g[0] / n as f32;
                pa.accumulate_grad_owned(vec![scale; n]);
            }
        }),
    )
}
