//! Trainable parameters: tensor + Adam moment buffers + optional persistent
//! power-iteration state for spectral normalization.

use std::cell::RefCell;

use crate::error::{invalid, Result};
use crate::{Shape, Tensor};

/// Sigma floor when normalizing a (near-)zero weight matrix.
const SIGMA_EPS: f64 = 1e-12;

pub struct Parameter {
    tensor: Tensor,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
    pub step_count: u64,
    /// Left-singular-vector estimate, unit norm, present iff this weight is
    /// under spectral normalization. Interior mutability because the estimate
    /// advances during forward passes.
    spectral_u: Option<RefCell<Vec<f32>>>,
}

impl Parameter {
    pub fn new(data: Vec<f32>, shape: Shape) -> Result<Parameter> {
        let numel = shape.numel();
        if data.len() != numel {
            return Err(invalid(
                "Parameter::new",
                format!("data length {} vs shape {}", data.len(), shape),
            ));
        }
        let tensor = Tensor::from_vec(data, shape)?;
        tensor.set_requires_grad(true);
        Ok(Parameter {
            tensor,
            adam_m: vec![0.0; numel],
            adam_v: vec![0.0; numel],
            step_count: 0,
            spectral_u: None,
        })
    }

    /// Attaches a spectral-normalization buffer initialized from `u_init`
    /// (normalized internally; must be non-zero, length = out-channel count).
    pub fn enable_spectral(&mut self, u_init: Vec<f32>) {
        let rows = self.tensor.shape().n;
        assert_eq!(u_init.len(), rows, "spectral u length must equal out channels");
        let norm: f64 = u_init.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        let norm = norm.max(SIGMA_EPS);
        let u: Vec<f32> = u_init.iter().map(|&v| (v as f64 / norm) as f32).collect();
        self.spectral_u = Some(RefCell::new(u));
    }

    pub fn is_spectral(&self) -> bool {
        self.spectral_u.is_some()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn shape(&self) -> Shape {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn spectral_u(&self) -> Option<Vec<f32>> {
        self.spectral_u.as_ref().map(|u| u.borrow().clone())
    }

    pub fn set_spectral_u(&mut self, u: Vec<f32>) {
        assert_eq!(u.len(), self.tensor.shape().n);
        self.spectral_u = Some(RefCell::new(u));
    }
}

fn norm_f64(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// matvec y = W^T u for W viewed as rows x cols.
fn wt_u(w: &[f32], u: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; cols];
    for i in 0..rows {
        let ui = u[i] as f64;
        if ui == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (a, &wij) in acc.iter_mut().zip(row) {
            *a += ui * wij as f64;
        }
    }
    acc.iter().map(|&v| v as f32).collect()
}

/// matvec y = W v.
fn w_v(w: &[f32], v: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows];
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0f64;
        for (&wij, &vj) in row.iter().zip(v) {
            acc += wij as f64 * vj as f64;
        }
        out[i] = acc as f32;
    }
    out
}

/// Weight divided by a power-iteration estimate of its largest singular
/// value, viewing the (oc, ic, k, k) weight as an oc x (ic*k*k) matrix.
///
/// The estimate is sigma = |W^T u| with `u` held fixed within the call, so
/// the recorded gradient (quotient rule with the exact rank-one
/// d sigma/dW = u v^T, v = W^T u / sigma) is the exact derivative of the
/// function being evaluated. `n_iters` controls how many whole power
/// iterations advance `u` before sigma is read; the persistent buffer is
/// written back only when `update_u` is set, so verification passes can
/// re-evaluate an identical function.
pub fn spectral_normalize(param: &Parameter, n_iters: usize, update_u: bool) -> Result<Tensor> {
    if n_iters == 0 {
        return Err(invalid("spectral_normalize", "n_iters must be positive"));
    }
    let shape = param.shape();
    let rows = shape.n;
    let cols = shape.c * shape.h * shape.w;
    let ubuf = param
        .spectral_u
        .as_ref()
        .ok_or_else(|| invalid("spectral_normalize", "parameter has no spectral buffer"))?;

    let w = param.tensor.data();
    let mut u = ubuf.borrow().clone();
    let mut degenerate = false;
    for _ in 0..n_iters - 1 {
        let mut v = wt_u(&w, &u, rows, cols);
        let vn = norm_f64(&v);
        if vn < SIGMA_EPS {
            degenerate = true;
            break;
        }
        for vj in v.iter_mut() {
            *vj = (*vj as f64 / vn) as f32;
        }
        let wu = w_v(&w, &v, rows, cols);
        let un = norm_f64(&wu);
        if un < SIGMA_EPS {
            degenerate = true;
            break;
        }
        for (ui, &wui) in u.iter_mut().zip(&wu) {
            *ui = (wui as f64 / un) as f32;
        }
    }
    let mut v = wt_u(&w, &u, rows, cols);
    let sigma = norm_f64(&v);
    if degenerate || sigma < SIGMA_EPS {
        drop(w);
        // (near-)zero matrix: pass the weight through unchanged
        return Ok(crate::ops::mul_scalar(param.tensor(), 1.0));
    }
    for vj in v.iter_mut() {
        *vj = (*vj as f64 / sigma) as f32;
    }

    if update_u {
        // complete the iteration for the next step's estimate
        let wu = w_v(&w, &v, rows, cols);
        let un = norm_f64(&wu);
        if un >= SIGMA_EPS {
            let mut next = ubuf.borrow_mut();
            for (ui, &wui) in next.iter_mut().zip(&wu) {
                *ui = (wui as f64 / un) as f32;
            }
        }
    }

    let inv_sigma = (1.0 / sigma) as f32;
    let out: Vec<f32> = w.iter().map(|&x| x * inv_sigma).collect();
    drop(w);

    let p_w = param.tensor.clone();
    let sigma_f = sigma as f32;
    Ok(Tensor::from_op(
        out,
        shape,
        vec![param.tensor.clone()],
        Box::new(move |g, _| {
            if !p_w.requires_grad() {
                return;
            }
            let w = p_w.data();
            let mut dot = 0.0f64;
            for (&gi, &wi) in g.iter().zip(w.iter()) {
                dot += gi as f64 * wi as f64;
            }
            drop(w);
            let scale = (dot / (sigma_f as f64 * sigma_f as f64)) as f32;
            let mut d = vec![0.0f32; g.len()];
            for i in 0..rows {
                let ui = u[i];
                for j in 0..cols {
                    d[i * cols + j] = g[i * cols + j] / sigma_f - scale * ui * v[j];
                }
            }
            p_w.accumulate_grad_owned(d);
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param_from(mat: Vec<f32>, rows: usize, cols: usize) -> Parameter {
        let mut p = Parameter::new(mat, Shape::new(rows, cols, 1, 1)).unwrap();
        let u: Vec<f32> = (0..rows).map(|i| ((i * 7 + 3) % 11) as f32 - 5.0).collect();
        p.enable_spectral(u);
        p
    }

    #[test]
    fn diagonal_matrix_normalizes_to_unit_top_singular_value() {
        let p = param_from(vec![3.0, 0.0, 0.0, 1.0], 2, 2);
        let w = spectral_normalize(&p, 50, true).unwrap();
        let d = w.to_vec();
        // top singular value of diag(3,1)/3 is 1
        assert!((d[0] - 1.0).abs() < 0.01, "{d:?}");
        assert!((d[3] - 1.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn unit_norm_matrix_is_fixed_point() {
        let p = param_from(vec![1.0, 0.0, 0.0, 0.5], 2, 2);
        let w = spectral_normalize(&p, 50, true).unwrap();
        let d = w.to_vec();
        assert!((d[0] - 1.0).abs() < 0.01 && (d[3] - 0.5).abs() < 0.01);
    }

    #[test]
    fn zero_weight_passes_through() {
        let p = param_from(vec![0.0; 4], 2, 2);
        let w = spectral_normalize(&p, 5, true).unwrap();
        assert_eq!(w.to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn u_buffer_stays_unit_norm() {
        let p = param_from(vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4], 2, 3);
        let _ = spectral_normalize(&p, 3, true).unwrap();
        let u = p.spectral_u().unwrap();
        let n: f64 = u.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
    }

    #[test]
    fn frozen_mode_leaves_u_untouched() {
        let p = param_from(vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4], 2, 3);
        let before = p.spectral_u().unwrap();
        let _ = spectral_normalize(&p, 3, false).unwrap();
        assert_eq!(before, p.spectral_u().unwrap());
    }
}
