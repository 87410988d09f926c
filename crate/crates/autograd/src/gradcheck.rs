//! Central-finite-difference verification of analytic gradients.
//!
//! The probe differentiates the scalar s(x) = sum_i w_i * y_i(x) for a fixed
//! random +/-1 weighting `w` of the forward output `y`. The analytic side
//! seeds the reverse pass with `w`; the numeric side rebuilds the forward
//! from scratch at x +/- h and forms the dot product and difference quotient
//! in f64, so the comparison is limited by the f32 forward itself, not by a
//! rounded f32 loss aggregate.

use crate::Tensor;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-3;
/// Default relative-error budget.
pub const FD_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct ProbeFailure {
    pub leaf: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Default)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    pub failures: Vec<ProbeFailure>,
}

impl GradCheckReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// xorshift64*; enough to pick probe coordinates reproducibly without pulling
/// an RNG into the verification path.
struct ProbeRng(u64);

impl ProbeRng {
    fn new(seed: u64) -> Self {
        ProbeRng(seed.max(1))
    }
    fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }
    fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }
    fn sign(&mut self) -> f32 {
        if self.next() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

fn poke(t: &Tensor, idx: usize, v: f32) {
    t.node.borrow_mut().data[idx] = v;
}

fn peek(t: &Tensor, idx: usize) -> f32 {
    t.node.borrow().data[idx]
}

fn dot_f64(w: &[f32], y: &Tensor) -> f64 {
    w.iter()
        .zip(y.data().iter())
        .map(|(&wi, &yi)| wi as f64 * yi as f64)
        .sum()
}

/// Checks `probes` random coordinates of each named leaf against central
/// finite differences. `forward` may return any shape; it is re-invoked for
/// every perturbed evaluation and must rebuild the graph from the leaves'
/// current data.
///
/// A coordinate passes when |analytic - numeric| <= tol * denom with
/// denom = max(|analytic|, |numeric|, 0.1 * max_abs_grad(leaf), 1e-6); the
/// floor keeps near-zero entries of an otherwise healthy gradient from
/// turning f32 forward noise into spurious relative error.
pub fn check_gradients(
    forward: &mut dyn FnMut() -> Tensor,
    leaves: &[(&str, &Tensor)],
    probes: usize,
    step: f64,
    tol: f64,
    seed: u64,
) -> GradCheckReport {
    for (_, leaf) in leaves {
        leaf.clear_grad();
        leaf.set_requires_grad(true);
    }
    let mut rng = ProbeRng::new(seed);
    let out = forward();
    let weights: Vec<f32> = (0..out.numel()).map(|_| rng.sign()).collect();
    out.backward_seeded(&weights)
        .expect("gradcheck forward must depend on the probed leaves");
    let grads: Vec<Vec<f32>> = leaves
        .iter()
        .map(|(name, leaf)| {
            leaf.grad()
                .unwrap_or_else(|| panic!("leaf `{name}` received no gradient"))
        })
        .collect();
    for (_, leaf) in leaves {
        leaf.clear_grad();
    }
    drop(out);

    let mut report = GradCheckReport::default();
    for ((name, leaf), grad) in leaves.iter().zip(&grads) {
        let numel = leaf.numel();
        let scale = grad.iter().fold(0.0f64, |m, &g| m.max((g as f64).abs()));
        for _ in 0..probes {
            let idx = rng.below(numel);
            let orig = peek(leaf, idx);
            poke(leaf, idx, (orig as f64 + step) as f32);
            let plus = dot_f64(&weights, &forward());
            poke(leaf, idx, (orig as f64 - step) as f32);
            let minus = dot_f64(&weights, &forward());
            poke(leaf, idx, orig);
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grad[idx] as f64;
            let denom = analytic
                .abs()
                .max(numeric.abs())
                .max(0.1 * scale)
                .max(1e-6);
            let rel = (analytic - numeric).abs() / denom;
            report.probes += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
            }
            if rel > tol {
                report.failures.push(ProbeFailure {
                    leaf: name.to_string(),
                    index: idx,
                    analytic,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    report
}
