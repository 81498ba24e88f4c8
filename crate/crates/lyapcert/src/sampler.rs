//! Seeded sampling from a measure: inverse-cdf in dimension 1, random-walk
//! Metropolis with acceptance tuning in dimension 2.

use crate::measure::{Measure, MeasureError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Samples {
    /// Row-major points: sample i occupies [i*dim, (i+1)*dim).
    pub points: Vec<f64>,
    pub dim: usize,
    /// Metropolis acceptance rate (dimension 2 only).
    pub acceptance: Option<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn sample(m: &Measure, count: usize, seed: u64) -> Result<Samples, MeasureError> {
    match m.dim() {
        1 => sample_inverse_cdf(m, count, seed),
        2 => sample_metropolis(m, count, seed),
        d => Err(MeasureError::WrongDimension {
            required: 2,
            actual: d,
        }),
    }
}

fn sample_inverse_cdf(m: &Measure, count: usize, seed: u64) -> Result<Samples, MeasureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.gen();
        points.push(m.quantile(u)?);
    }
    Ok(Samples {
        points,
        dim: 1,
        acceptance: None,
    })
}

/// Random-walk Metropolis targeting e^{-V}. The proposal scale is tuned
/// during burn-in toward an acceptance rate in [0.3, 0.5]; a final rate
/// outside [0.1, 0.9] is an error.
fn sample_metropolis(m: &Measure, count: usize, seed: u64) -> Result<Samples, MeasureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = [0.0f64, 0.0];
    let mut vx = m.v.value(&x);
    let mut step = 0.5_f64;

    let tune_rounds = 20;
    let tune_batch = 200;
    for _ in 0..tune_rounds {
        let mut accepted = 0usize;
        for _ in 0..tune_batch {
            if metropolis_step(m, &mut x, &mut vx, step, &mut rng) {
                accepted += 1;
            }
        }
        let rate = accepted as f64 / tune_batch as f64;
        if rate > 0.5 {
            step *= 1.3;
        } else if rate < 0.3 {
            step *= 0.7;
        }
        step = step.clamp(1e-4 * m.rmax, m.rmax);
    }

    let mut accepted = 0usize;
    let total = count.max(1);
    let mut points = Vec::with_capacity(2 * count);
    for _ in 0..total {
        if metropolis_step(m, &mut x, &mut vx, step, &mut rng) {
            accepted += 1;
        }
        points.push(x[0]);
        points.push(x[1]);
    }
    let rate = accepted as f64 / total as f64;
    if !(0.1..=0.9).contains(&rate) {
        return Err(MeasureError::BadAcceptance { rate });
    }
    Ok(Samples {
        points,
        dim: 2,
        acceptance: Some(rate),
    })
}

fn metropolis_step(
    m: &Measure,
    x: &mut [f64; 2],
    vx: &mut f64,
    step: f64,
    rng: &mut ChaCha8Rng,
) -> bool {
    let dx: f64 = StandardNormal.sample(rng);
    let dy: f64 = StandardNormal.sample(rng);
    let cand = [x[0] + step * dx, x[1] + step * dy];
    // Stay inside the truncated box.
    if cand[0].abs() > m.rmax || cand[1].abs() > m.rmax {
        return false;
    }
    let vc = m.v.value(&cand);
    if !vc.is_finite() {
        return false;
    }
    let log_ratio = *vx - vc;
    let accept = log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp();
    if accept {
        *x = cand;
        *vx = vc;
    }
    accept
}

/// Kolmogorov-Smirnov statistic of 1D samples against the measure's cdf.
pub fn ks_statistic(m: &Measure, samples: &Samples) -> Result<f64, MeasureError> {
    let mut xs: Vec<f64> = samples.points.clone();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let c = m.cdf_at(*x)?;
        let lo = i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64;
        d = d.max((c - lo).abs()).max((hi - c).abs());
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScalarField;
    use crate::measure::{build_measure, MeasureSpec};

    #[test]
    fn inverse_cdf_samples_pass_ks() {
        let v = ScalarField::parse("x1^2", 1).unwrap();
        let m = build_measure(v, &MeasureSpec::new(8.0, 4097)).unwrap();
        let s = sample(&m, 4000, 7).unwrap();
        assert_eq!(s.len(), 4000);
        let d = ks_statistic(&m, &s).unwrap();
        // 1.63 / sqrt(n) is the 1% critical value; stay under it.
        assert!(d < 1.63 / (4000f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn metropolis_acceptance_lands_in_window() {
        let v = ScalarField::parse("x1^2 + x2^2", 2).unwrap();
        let m = build_measure(v, &MeasureSpec::new(6.0, 65)).unwrap();
        let s = sample(&m, 3000, 11).unwrap();
        assert_eq!(s.dim, 2);
        let rate = s.acceptance.unwrap();
        assert!((0.2..=0.6).contains(&rate), "acceptance {rate}");
        // Empirical second moment of a standard-ish gaussian pair: E x1^2 = 1/2.
        let m2: f64 = (0..s.len()).map(|i| s.point(i)[0].powi(2)).sum::<f64>() / s.len() as f64;
        assert!((m2 - 0.5).abs() < 0.1, "second moment {m2}");
    }

    #[test]
    fn same_seed_same_stream() {
        let v = ScalarField::parse("x1^2 + x2^2", 2).unwrap();
        let m = build_measure(v, &MeasureSpec::new(6.0, 65)).unwrap();
        let a = sample(&m, 500, 42).unwrap();
        let b = sample(&m, 500, 42).unwrap();
        assert_eq!(a.points, b.points);
        let c = sample(&m, 500, 43).unwrap();
        assert_ne!(a.points, c.points);
    }
}
