//! Weight initialization helpers. All sampling is Box-Muller over the
//! caller's RNG so results depend only on the stream, not on platform
//! distribution internals.

use rand::Rng;

pub fn normal_vec<R: Rng>(rng: &mut R, n: usize, mean: f64, std: f64) -> Vec<f32> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        out.push((mean + std * r * a.cos()) as f32);
        if out.len() < n {
            out.push((mean + std * r * a.sin()) as f32);
        }
    }
    out
}

/// Kaiming-normal fan-in initialization: std = gain / sqrt(fan_in).
pub fn kaiming_normal<R: Rng>(rng: &mut R, n: usize, fan_in: usize, gain: f64) -> Vec<f32> {
    normal_vec(rng, n, 0.0, gain / (fan_in.max(1) as f64).sqrt())
}

pub fn gain_relu() -> f64 {
    std::f64::consts::SQRT_2
}

pub fn gain_leaky_relu(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

pub fn gain_linear() -> f64 {
    1.0
}
