//! Spatial resampling primitives: displacement-field sampling, align-corners
//! bilinear resize and sub-pixel (pixel-shuffle) rearrangement.

use crate::error::{invalid, shape_mismatch, Result};
use crate::{Shape, Tensor};

/// Maps a normalized coordinate in [-1, 1] to a pixel coordinate in
/// [0, extent-1] (align-corners convention).
#[inline]
fn to_pixel(norm: f32, extent: usize) -> f32 {
    (norm + 1.0) * 0.5 * (extent as f32 - 1.0)
}

#[inline]
fn clamp_unit(v: f32) -> f32 {
    v.clamp(-1.0, 1.0)
}

/// Samples `input` at positions displaced by `flow`: output(p) reads input at
/// normalized position p + flow(p), bilinearly interpolated, border-clamped.
///
/// `flow` has shape (n, 2, h, w): channel 0 is the x displacement, channel 1
/// the y displacement, both in normalized [-1, 1] units of the input frame.
/// The output takes the flow's spatial extent, so the same primitive serves
/// equal-size warping and affine-grid cropping.
pub fn grid_sample(input: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let xs = input.shape();
    let fs = flow.shape();
    if fs.c != 2 {
        return Err(invalid(
            "grid_sample",
            format!("flow must have 2 channels, got {}", fs),
        ));
    }
    if fs.n != xs.n {
        return Err(shape_mismatch("grid_sample", &xs, &fs));
    }
    let (oh, ow) = (fs.h, fs.w);
    let out_shape = Shape::new(xs.n, xs.c, oh, ow);
    let mut out = vec![0.0f32; out_shape.numel()];
    {
        let x = input.data();
        let f = flow.data();
        for n in 0..xs.n {
            let fbase = n * 2 * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let p = oy * ow + ox;
                    let nx = if ow > 1 { 2.0 * ox as f32 / (ow as f32 - 1.0) - 1.0 } else { 0.0 };
                    let ny = if oh > 1 { 2.0 * oy as f32 / (oh as f32 - 1.0) - 1.0 } else { 0.0 };
                    let sx = to_pixel(clamp_unit(nx + f[fbase + p]), xs.w);
                    let sy = to_pixel(clamp_unit(ny + f[fbase + oh * ow + p]), xs.h);
                    let x0 = (sx.floor() as isize).clamp(0, xs.w as isize - 1) as usize;
                    let y0 = (sy.floor() as isize).clamp(0, xs.h as isize - 1) as usize;
                    let x1 = (x0 + 1).min(xs.w - 1);
                    let y1 = (y0 + 1).min(xs.h - 1);
                    let fx = (sx - x0 as f32).clamp(0.0, 1.0);
                    let fy = (sy - y0 as f32).clamp(0.0, 1.0);
                    for c in 0..xs.c {
                        let ib = (n * xs.c + c) * xs.h * xs.w;
                        let v00 = x[ib + y0 * xs.w + x0];
                        let v01 = x[ib + y0 * xs.w + x1];
                        let v10 = x[ib + y1 * xs.w + x0];
                        let v11 = x[ib + y1 * xs.w + x1];
                        let top = v00 + (v01 - v00) * fx;
                        let bot = v10 + (v11 - v10) * fx;
                        out[(n * xs.c + c) * oh * ow + p] = top + (bot - top) * fy;
                    }
                }
            }
        }
    }

    let p_in = input.clone();
    let p_flow = flow.clone();
    Ok(Tensor::from_op(
        out,
        out_shape,
        vec![input.clone(), flow.clone()],
        Box::new(move |g, _| {
            let xs = p_in.shape();
            let fs = p_flow.shape();
            let (oh, ow) = (fs.h, fs.w);
            let need_in = p_in.requires_grad();
            let need_flow = p_flow.requires_grad();
            let mut gin = if need_in { vec![0.0f32; xs.numel()] } else { Vec::new() };
            let mut gfl = if need_flow { vec![0.0f32; fs.numel()] } else { Vec::new() };
            {
            let x = p_in.data();
            let f = p_flow.data();
            for n in 0..xs.n {
                let fbase = n * 2 * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let p = oy * ow + ox;
                        let nx = if ow > 1 { 2.0 * ox as f32 / (ow as f32 - 1.0) - 1.0 } else { 0.0 };
                        let ny = if oh > 1 { 2.0 * oy as f32 / (oh as f32 - 1.0) - 1.0 } else { 0.0 };
                        let rx = nx + f[fbase + p];
                        let ry = ny + f[fbase + oh * ow + p];
                        let x_active = (-1.0..=1.0).contains(&rx);
                        let y_active = (-1.0..=1.0).contains(&ry);
                        let sx = to_pixel(clamp_unit(rx), xs.w);
                        let sy = to_pixel(clamp_unit(ry), xs.h);
                        let x0 = (sx.floor() as isize).clamp(0, xs.w as isize - 1) as usize;
                        let y0 = (sy.floor() as isize).clamp(0, xs.h as isize - 1) as usize;
                        let x1 = (x0 + 1).min(xs.w - 1);
                        let y1 = (y0 + 1).min(xs.h - 1);
                        let fx = (sx - x0 as f32).clamp(0.0, 1.0);
                        let fy = (sy - y0 as f32).clamp(0.0, 1.0);
                        let mut dldx = 0.0f32;
                        let mut dldy = 0.0f32;
                        for c in 0..xs.c {
                            let go = g[(n * xs.c + c) * oh * ow + p];
                            if go == 0.0 {
                                continue;
                            }
                            let ib = (n * xs.c + c) * xs.h * xs.w;
                            if need_in {
                                gin[ib + y0 * xs.w + x0] += go * (1.0 - fx) * (1.0 - fy);
                                gin[ib + y0 * xs.w + x1] += go * fx * (1.0 - fy);
                                gin[ib + y1 * xs.w + x0] += go * (1.0 - fx) * fy;
                                gin[ib + y1 * xs.w + x1] += go * fx * fy;
                            }
                            if need_flow {
                                let v00 = x[ib + y0 * xs.w + x0];
                                let v01 = x[ib + y0 * xs.w + x1];
                                let v10 = x[ib + y1 * xs.w + x0];
                                let v11 = x[ib + y1 * xs.w + x1];
                                dldx += go * ((v01 - v00) * (1.0 - fy) + (v11 - v10) * fy);
                                dldy += go * ((v10 - v00) * (1.0 - fx) + (v11 - v01) * fx);
                            }
                        }
                        if need_flow {
                            let px_per_nx = 0.5 * (xs.w as f32 - 1.0);
                            let px_per_ny = 0.5 * (xs.h as f32 - 1.0);
                            if x_active {
                                gfl[fbase + p] += dldx * px_per_nx;
                            }
                            if y_active {
                                gfl[fbase + oh * ow + p] += dldy * px_per_ny;
                            }
                        }
                    }
                }
            }
            }
            if need_in {
                p_in.accumulate_grad_owned(gin);
            }
            if need_flow {
                p_flow.accumulate_grad_owned(gfl);
            }
        }),
    ))
}

/// Align-corners bilinear resize to (out_h, out_w).
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let xs = input.shape();
    if out_h == 0 || out_w == 0 {
        return Err(invalid("bilinear_resize", "target extents must be positive"));
    }
    let out_shape = Shape::new(xs.n, xs.c, out_h, out_w);
    let scale_y = if out_h > 1 { (xs.h as f32 - 1.0) / (out_h as f32 - 1.0) } else { 0.0 };
    let scale_x = if out_w > 1 { (xs.w as f32 - 1.0) / (out_w as f32 - 1.0) } else { 0.0 };
    let mut out = vec![0.0f32; out_shape.numel()];
    {
        let x = input.data();
        for n in 0..xs.n {
            for c in 0..xs.c {
                let ib = (n * xs.c + c) * xs.h * xs.w;
                let ob = (n * xs.c + c) * out_h * out_w;
                for oy in 0..out_h {
                    let sy = oy as f32 * scale_y;
                    let y0 = sy.floor() as usize;
                    let y1 = (y0 + 1).min(xs.h - 1);
                    let fy = sy - y0 as f32;
                    for ox in 0..out_w {
                        let sx = ox as f32 * scale_x;
                        let x0 = sx.floor() as usize;
                        let x1 = (x0 + 1).min(xs.w - 1);
                        let fx = sx - x0 as f32;
                        let v00 = x[ib + y0 * xs.w + x0];
                        let v01 = x[ib + y0 * xs.w + x1];
                        let v10 = x[ib + y1 * xs.w + x0];
                        let v11 = x[ib + y1 * xs.w + x1];
                        let top = v00 + (v01 - v00) * fx;
                        let bot = v10 + (v11 - v10) * fx;
                        out[ob + oy * out_w + ox] = top + (bot - top) * fy;
                    }
                }
            }
        }
    }
    let p_in = input.clone();
    Ok(Tensor::from_op(
        out,
        out_shape,
        vec![input.clone()],
        Box::new(move |g, _| {
            if !p_in.requires_grad() {
                return;
            }
            let xs = p_in.shape();
            let mut gin = vec![0.0f32; xs.numel()];
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let ib = (n * xs.c + c) * xs.h * xs.w;
                    let ob = (n * xs.c + c) * out_h * out_w;
                    for oy in 0..out_h {
                        let sy = oy as f32 * scale_y;
                        let y0 = sy.floor() as usize;
                        let y1 = (y0 + 1).min(xs.h - 1);
                        let fy = sy - y0 as f32;
                        for ox in 0..out_w {
                            let sx = ox as f32 * scale_x;
                            let x0 = sx.floor() as usize;
                            let x1 = (x0 + 1).min(xs.w - 1);
                            let fx = sx - x0 as f32;
                            let go = g[ob + oy * out_w + ox];
                            gin[ib + y0 * xs.w + x0] += go * (1.0 - fx) * (1.0 - fy);
                            gin[ib + y0 * xs.w + x1] += go * fx * (1.0 - fy);
                            gin[ib + y1 * xs.w + x0] += go * (1.0 - fx) * fy;
                            gin[ib + y1 * xs.w + x1] += go * fx * fy;
                        }
                    }
                }
            }
            p_in.accumulate_grad_owned(gin);
        }),
    ))
}

/// (n, c*r^2, h, w) -> (n, c, h*r, w*r) sub-pixel rearrangement.
pub fn pixel_shuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    let xs = input.shape();
    if r == 0 {
        return Err(invalid("pixel_shuffle", "factor must be positive"));
    }
    if xs.c % (r * r) != 0 {
        return Err(invalid(
            "pixel_shuffle",
            format!("channel count {} not divisible by {}", xs.c, r * r),
        ));
    }
    let oc = xs.c / (r * r);
    let out_shape = Shape::new(xs.n, oc, xs.h * r, xs.w * r);
    let mut out = vec![0.0f32; out_shape.numel()];
    {
        let x = input.data();
        shuffle_into(&x, &mut out, xs.n, oc, xs.h, xs.w, r);
    }
    let p_in = input.clone();
    Ok(Tensor::from_op(
        out,
        out_shape,
        vec![input.clone()],
        Box::new(move |g, _| {
            if !p_in.requires_grad() {
                return;
            }
            let xs = p_in.shape();
            let oc = xs.c / (r * r);
            let mut gin = vec![0.0f32; xs.numel()];
            unshuffle_into(g, &mut gin, xs.n, oc, xs.h, xs.w, r);
            p_in.accumulate_grad_owned(gin);
        }),
    ))
}

/// Exact inverse of [`pixel_shuffle`]: (n, c, h*r, w*r) -> (n, c*r^2, h, w).
pub fn pixel_unshuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    let xs = input.shape();
    if r == 0 {
        return Err(invalid("pixel_unshuffle", "factor must be positive"));
    }
    if xs.h % r != 0 || xs.w % r != 0 {
        return Err(invalid(
            "pixel_unshuffle",
            format!("spatial extent {} not divisible by {}", xs, r),
        ));
    }
    let (bh, bw) = (xs.h / r, xs.w / r);
    let out_shape = Shape::new(xs.n, xs.c * r * r, bh, bw);
    let mut out = vec![0.0f32; out_shape.numel()];
    {
        let x = input.data();
        unshuffle_into(&x, &mut out, xs.n, xs.c, bh, bw, r);
    }
    let p_in = input.clone();
    Ok(Tensor::from_op(
        out,
        out_shape,
        vec![input.clone()],
        Box::new(move |g, _| {
            if !p_in.requires_grad() {
                return;
            }
            let xs = p_in.shape();
            let mut gin = vec![0.0f32; xs.numel()];
            shuffle_into(g, &mut gin, xs.n, xs.c, xs.h / r, xs.w / r, r);
            p_in.accumulate_grad_owned(gin);
        }),
    ))
}

/// src laid out as (n, c*r^2, h, w), dst as (n, c, h*r, w*r).
fn shuffle_into(src: &[f32], dst: &mut [f32], n: usize, c: usize, h: usize, w: usize, r: usize) {
    for ni in 0..n {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let sc = ci * r * r + dy * r + dx;
                    for y in 0..h {
                        for x in 0..w {
                            dst[((ni * c + ci) * h * r + y * r + dy) * w * r + x * r + dx] =
                                src[((ni * c * r * r + sc) * h + y) * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// src laid out as (n, c, h*r, w*r), dst as (n, c*r^2, h, w).
fn unshuffle_into(src: &[f32], dst: &mut [f32], n: usize, c: usize, h: usize, w: usize, r: usize) {
    for ni in 0..n {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let sc = ci * r * r + dy * r + dx;
                    for y in 0..h {
                        for x in 0..w {
                            dst[((ni * c * r * r + sc) * h + y) * w + x] =
                                src[((ni * c + ci) * h * r + y * r + dy) * w * r + x * r + dx];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_is_identity() {
        let x = Tensor::from_vec((0..32).map(|v| v as f32 * 0.3).collect(), Shape::new(1, 2, 4, 4)).unwrap();
        let f = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let y = grid_sample(&x, &f).unwrap();
        for (a, b) in y.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn one_pixel_shift_with_border_clamp() {
        let w = 5usize;
        let x = Tensor::from_vec((0..w).map(|v| v as f32).collect(), Shape::new(1, 1, 1, w)).unwrap();
        // +1 pixel to the right in normalized units
        let shift = 2.0 / (w as f32 - 1.0);
        let mut fdata = vec![shift; w];
        fdata.extend(vec![0.0f32; w]);
        let f = Tensor::from_vec(fdata, Shape::new(1, 2, 1, w)).unwrap();
        let y = grid_sample(&x, &f).unwrap();
        let v = y.to_vec();
        for j in 0..w - 1 {
            assert!((v[j] - (j as f32 + 1.0)).abs() < 1e-5, "col {j}: {}", v[j]);
        }
        assert!((v[w - 1] - (w as f32 - 1.0)).abs() < 1e-5); // clamped
    }

    #[test]
    fn pixel_shuffle_definitional_layout() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], Shape::new(1, 4, 1, 1)).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shuffle_unshuffle_roundtrip_exact() {
        let data: Vec<f32> = (0..1 * 8 * 3 * 5).map(|v| v as f32 * 0.7 - 3.0).collect();
        let x = Tensor::from_vec(data.clone(), Shape::new(1, 8, 3, 5)).unwrap();
        let y = pixel_unshuffle(&pixel_shuffle(&x, 2).unwrap(), 2).unwrap();
        assert_eq!(y.to_vec(), data);
        let z = pixel_shuffle(&pixel_unshuffle(&x, 1).unwrap(), 1).unwrap();
        assert_eq!(z.to_vec(), data);
    }

    #[test]
    fn resize_same_size_is_identity() {
        let data: Vec<f32> = (0..24).map(|v| (v as f32).sin()).collect();
        let x = Tensor::from_vec(data.clone(), Shape::new(1, 2, 3, 4)).unwrap();
        let y = bilinear_resize(&x, 3, 4).unwrap();
        assert_eq!(y.to_vec(), data);
    }

    #[test]
    fn resize_preserves_constant() {
        let x = Tensor::full(Shape::new(1, 1, 2, 2), 5.0);
        let y = bilinear_resize(&x, 7, 3).unwrap();
        assert!(y.to_vec().iter().all(|v| (v - 5.0).abs() < 1e-6));
    }

    #[test]
    fn resize_2x2_to_3x3_center() {
        let x = Tensor::from_vec(vec![0.0, 1.0, 2.0, 3.0], Shape::new(1, 1, 2, 2)).unwrap();
        let y = bilinear_resize(&x, 3, 3).unwrap();
        assert!((y.to_vec()[4] - 1.5).abs() < 1e-6);
    }
}
