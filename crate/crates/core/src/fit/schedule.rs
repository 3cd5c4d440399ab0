use rand::Rng;
use serde::{Deserialize, Serialize};

/// Linear, clamped schedules for the dropout fraction and the shared
/// Gaussian width. Widths are fractions of the grid extent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub dropout_start: f64,
    pub dropout_end: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { dropout_start: 0.9, dropout_end: 0.0, sigma_start: 0.05, sigma_end: 0.003 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedules {
    pub total_steps: usize,
    pub extent: f64,
    pub config: ScheduleConfig,
}

impl Schedules {
    pub fn new(total_steps: usize, extent: f64) -> Self {
        Self { total_steps, extent, config: ScheduleConfig::default() }
    }
}

fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a * (1.0 - f) + b * f
}

/// `(dropout_fraction, sigma)` at step `t`.
pub fn schedule_eval(s: &Schedules, t: usize) -> (f64, f64) {
    let f = if s.total_steps == 0 { 1.0 } else { (t as f64 / s.total_steps as f64).clamp(0.0, 1.0) };
    let c = &s.config;
    (lerp(c.dropout_start, c.dropout_end, f), lerp(c.sigma_start, c.sigma_end, f) * s.extent)
}

/// Keeps each point independently with probability `1 - fraction`, redrawing
/// until at least one point survives.
pub fn dropout_mask<R: Rng>(n: usize, fraction: f64, rng: &mut R) -> Vec<bool> {
    let keep = (1.0 - fraction).clamp(0.0, 1.0);
    if n == 0 {
        return Vec::new();
    }
    if keep == 0.0 {
        let mut m = vec![false; n];
        m[rng.gen_range(0..n)] = true;
        return m;
    }
    loop {
        let m: Vec<bool> = (0..n).map(|_| keep >= 1.0 || rng.gen::<f64>() < keep).collect();
        if m.iter().any(|&k| k) {
            return m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = Schedules::new(1000, 1.0);
        assert_eq!(schedule_eval(&s, 0), (0.9, 0.05));
        assert_eq!(schedule_eval(&s, 1000), (0.0, 0.003));
        assert_eq!(schedule_eval(&s, 5000), (0.0, 0.003));
        let (d, sg) = schedule_eval(&s, 500);
        assert!((d - 0.45).abs() < 1e-15 && (sg - 0.0265).abs() < 1e-15);
        let s = Schedules::new(10, 2.0);
        assert_eq!(schedule_eval(&s, 0).1, 0.1);
        assert_eq!(schedule_eval(&s, 10).1, 0.006);
    }

    #[test]
    fn schedule_is_monotone() {
        let s = Schedules::new(37, 1.0);
        for t in 0..40 {
            let (a, b) = schedule_eval(&s, t);
            let (c, d) = schedule_eval(&s, t + 1);
            assert!(c <= a && d <= b);
        }
    }

    #[test]
    fn dropout_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(dropout_mask(100, 0.0, &mut rng).iter().all(|&k| k));
        let m = dropout_mask(5, 1.0, &mut rng);
        assert_eq!(m.iter().filter(|&&k| k).count(), 1);
        let a = dropout_mask(50, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        let b = dropout_mask(50, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_count_within_binomial_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let kept = dropout_mask(10_000, 0.9, &mut rng).iter().filter(|&&k| k).count() as f64;
            let sd = (10_000.0f64 * 0.1 * 0.9).sqrt();
            assert!((kept - 1000.0).abs() <= 3.0 * sd, "{kept}");
        }
    }
}
