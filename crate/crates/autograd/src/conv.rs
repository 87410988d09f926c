//! 2-D convolution with square kernels, implemented as im2col + GEMM.
//! Backward w.r.t. the input runs as a zero-dilated convolution with the
//! flipped, channel-transposed kernel so every gradient element is a gather
//! (deterministic under internal parallelism).

use rayon::prelude::*;

use crate::error::{invalid, shape_mismatch, Result};
use crate::gemm::{gemm, gemm_strided};
use crate::{Shape, Tensor};

struct ConvDims {
    ic: usize,
    oc: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

/// Gathers the receptive fields of one sample into a (ic*k*k) x (oh*ow)
/// column matrix. Out-of-frame taps read zero.
fn im2col(x: &[f32], d: &ConvDims, col: &mut [f32]) {
    let cols = d.oh * d.ow;
    debug_assert_eq!(col.len(), d.ic * d.k * d.k * cols);
    col.par_chunks_mut(cols)
        .enumerate()
        .for_each(|(r, row)| {
            let kw = r % d.k;
            let kh = (r / d.k) % d.k;
            let ci = r / (d.k * d.k);
            let base = ci * d.h * d.w;
            for ohi in 0..d.oh {
                let ih = (ohi * d.stride + kh) as isize - d.padding as isize;
                let out_row = &mut row[ohi * d.ow..(ohi + 1) * d.ow];
                if ih < 0 || ih >= d.h as isize {
                    out_row.fill(0.0);
                    continue;
                }
                let src = &x[base + ih as usize * d.w..base + (ih as usize + 1) * d.w];
                for (owi, o) in out_row.iter_mut().enumerate() {
                    let iw = (owi * d.stride + kw) as isize - d.padding as isize;
                    *o = if iw < 0 || iw >= d.w as isize {
                        0.0
                    } else {
                        src[iw as usize]
                    };
                }
            }
        });
}

fn forward_one(x: &[f32], wdata: &[f32], d: &ConvDims, out: &mut [f32], col: &mut [f32]) {
    im2col(x, d, col);
    let kk = d.ic * d.k * d.k;
    gemm(d.oc, kk, d.oh * d.ow, 1.0, wdata, col, 0.0, out);
}

/// Flip the kernel spatially and swap the channel axes:
/// wt[ic, oc, kh, kw] = w[oc, ic, k-1-kh, k-1-kw].
fn transpose_flip_weight(wdata: &[f32], oc: usize, ic: usize, k: usize) -> Vec<f32> {
    let mut wt = vec![0.0f32; wdata.len()];
    for o in 0..oc {
        for i in 0..ic {
            for kh in 0..k {
                for kw in 0..k {
                    wt[((i * oc + o) * k + (k - 1 - kh)) * k + (k - 1 - kw)] =
                        wdata[((o * ic + i) * k + kh) * k + kw];
                }
            }
        }
    }
    wt
}

/// input (n, ic, h, w) * weight (oc, ic, k, k) -> (n, oc, oh, ow).
/// Differentiable w.r.t. input, weight and bias; bias has shape (1, oc, 1, 1).
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let xs = input.shape();
    let ws = weight.shape();
    if ws.h != ws.w {
        return Err(invalid("conv2d", format!("kernel must be square, got {}", ws)));
    }
    if xs.c != ws.c {
        return Err(shape_mismatch("conv2d", &xs, &ws));
    }
    if stride == 0 {
        return Err(invalid("conv2d", "stride must be positive"));
    }
    let k = ws.h;
    if padding >= k {
        return Err(invalid(
            "conv2d",
            format!("padding {} must be smaller than kernel {}", padding, k),
        ));
    }
    if xs.h + 2 * padding < k || xs.w + 2 * padding < k {
        return Err(invalid(
            "conv2d",
            format!("input {} too small for kernel {}", xs, k),
        ));
    }
    if let Some(b) = bias {
        let bs = b.shape();
        if bs != Shape::new(1, ws.n, 1, 1) {
            return Err(shape_mismatch("conv2d bias", &Shape::new(1, ws.n, 1, 1), &bs));
        }
    }
    let d = ConvDims {
        ic: xs.c,
        oc: ws.n,
        k,
        stride,
        padding,
        h: xs.h,
        w: xs.w,
        oh: (xs.h + 2 * padding - k) / stride + 1,
        ow: (xs.w + 2 * padding - k) / stride + 1,
    };
    let out_shape = Shape::new(xs.n, d.oc, d.oh, d.ow);
    let mut out = vec![0.0f32; out_shape.numel()];
    {
        let x = input.data();
        let wdat = weight.data();
        let mut col = vec![0.0f32; d.ic * k * k * d.oh * d.ow];
        let sample_in = d.ic * d.h * d.w;
        let sample_out = d.oc * d.oh * d.ow;
        for n in 0..xs.n {
            forward_one(
                &x[n * sample_in..(n + 1) * sample_in],
                &wdat,
                &d,
                &mut out[n * sample_out..(n + 1) * sample_out],
                &mut col,
            );
        }
        if let Some(b) = bias {
            let bd = b.data();
            let plane = d.oh * d.ow;
            for n in 0..xs.n {
                for c in 0..d.oc {
                    let base = (n * d.oc + c) * plane;
                    let bv = bd[c];
                    for v in &mut out[base..base + plane] {
                        *v += bv;
                    }
                }
            }
        }
    }

    let p_in = input.clone();
    let p_w = weight.clone();
    let p_b = bias.cloned();
    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let batch = xs.n;
    Ok(Tensor::from_op(
        out,
        out_shape,
        parents,
        Box::new(move |g, _| {
            let d = ConvDims {
                ic: p_in.shape().c,
                oc: p_w.shape().n,
                k,
                stride,
                padding,
                h: p_in.shape().h,
                w: p_in.shape().w,
                oh: (p_in.shape().h + 2 * padding - k) / stride + 1,
                ow: (p_in.shape().w + 2 * padding - k) / stride + 1,
            };
            let kk = d.ic * k * k;
            let sample_in = d.ic * d.h * d.w;
            let sample_out = d.oc * d.oh * d.ow;
            let cols = d.oh * d.ow;

            if let Some(ref b) = p_b {
                if b.requires_grad() {
                    let plane = d.oh * d.ow;
                    let mut gb = vec![0.0f32; d.oc];
                    for (c, gbc) in gb.iter_mut().enumerate() {
                        let mut acc = 0.0f64;
                        for n in 0..batch {
                            let base = (n * d.oc + c) * plane;
                            for &v in &g[base..base + plane] {
                                acc += v as f64;
                            }
                        }
                        *gbc = acc as f32;
                    }
                    b.accumulate_grad_owned(gb);
                }
            }

            if p_w.requires_grad() {
                let x = p_in.data();
                let mut gw = vec![0.0f32; d.oc * kk];
                let mut col = vec![0.0f32; kk * cols];
                for n in 0..batch {
                    im2col(&x[n * sample_in..(n + 1) * sample_in], &d, &mut col);
                    // gw[oc, kk] += g_n[oc, cols] * col^T[cols, kk]
                    gemm_strided(
                        d.oc,
                        cols,
                        kk,
                        1.0,
                        &g[n * sample_out..(n + 1) * sample_out],
                        cols as isize,
                        1,
                        &col,
                        1,
                        cols as isize,
                        if n == 0 { 0.0 } else { 1.0 },
                        &mut gw,
                        kk as isize,
                        1,
                    );
                }
                p_w.accumulate_grad_owned(gw);
            }

            if p_in.requires_grad() {
                // grad_in[ih,iw] gathers g[oh,ow]*w[kh,kw] over oh*s-p+kh=ih.
                // Realized as a stride-1 correlation of the flip-transposed
                // kernel over the stride-dilated gradient embedded in an
                // (h+k-1) x (w+k-1) buffer at offset k-1-p, which covers the
                // forward's full receptive field including the rows a
                // non-divisible stride leaves past the last dilated sample.
                let wdat = p_w.data();
                let wt = transpose_flip_weight(&wdat, d.oc, d.ic, k);
                let eh = d.h + k - 1;
                let ew = d.w + k - 1;
                let off = k - 1 - d.padding;
                let dd = ConvDims {
                    ic: d.oc,
                    oc: d.ic,
                    k,
                    stride: 1,
                    padding: 0,
                    h: eh,
                    w: ew,
                    oh: d.h,
                    ow: d.w,
                };
                let mut gin = vec![0.0f32; batch * d.ic * d.h * d.w];
                let mut emb = vec![0.0f32; d.oc * eh * ew];
                let mut col = vec![0.0f32; d.oc * k * k * d.h * d.w];
                for n in 0..batch {
                    emb.fill(0.0);
                    let gn = &g[n * sample_out..(n + 1) * sample_out];
                    for c in 0..d.oc {
                        for oh in 0..d.oh {
                            for ow in 0..d.ow {
                                emb[(c * eh + off + oh * stride) * ew + off + ow * stride] =
                                    gn[(c * d.oh + oh) * d.ow + ow];
                            }
                        }
                    }
                    forward_one(
                        &emb,
                        &wt,
                        &dd,
                        &mut gin[n * sample_in..(n + 1) * sample_in],
                        &mut col,
                    );
                }
                p_in.accumulate_grad_owned(gin);
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn one_by_one_identity_kernel() {
        let x = Tensor::from_vec((0..18).map(|v| v as f32).collect(), Shape::new(1, 2, 3, 3)).unwrap();
        // identity over channels: w[o][i] = delta(o,i)
        let w = Tensor::from_vec(vec![1.0, 0.0, 0.0, 1.0], Shape::new(2, 2, 1, 1)).unwrap();
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn all_ones_three_by_three_sums() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert!((y.item() - 9.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::zeros(Shape::new(1, 3, 5, 5));
        let w = Tensor::zeros(Shape::new(4, 2, 3, 3));
        let err = conv2d(&x, &w, None, 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x3x5x5") && msg.contains("4x2x3x3"), "{msg}");
    }

    #[test]
    fn bias_broadcasts_per_channel() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let w = Tensor::full(Shape::new(2, 1, 1, 1), 0.0);
        let b = Tensor::from_vec(vec![1.5, -2.0], Shape::new(1, 2, 1, 1)).unwrap();
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.to_vec(), vec![1.5, 1.5, 1.5, 1.5, -2.0, -2.0, -2.0, -2.0]);
    }

    #[test]
    fn gradient_reaches_all_three_arguments() {
        let x = Tensor::from_vec((0..16).map(|v| v as f32 * 0.1).collect(), Shape::new(1, 1, 4, 4)).unwrap();
        let w = Tensor::from_vec((0..9).map(|v| 0.05 * (v as f32 - 4.0)).collect(), Shape::new(1, 1, 3, 3)).unwrap();
        let b = Tensor::from_vec(vec![0.2], Shape::new(1, 1, 1, 1)).unwrap();
        x.set_requires_grad(true);
        w.set_requires_grad(true);
        b.set_requires_grad(true);
        let y = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
        let loss = ops::mean_all(&y);
        loss.backward().unwrap();
        assert!(x.grad().is_some() && w.grad().is_some() && b.grad().is_some());
        assert!(x.grad().unwrap().iter().any(|v| *v != 0.0));
    }
}
