//! Monte-Carlo evidence that the expected log-Jacobian is finite.
//!
//! Expectations are over the standard Gaussian density. The Lebesgue integral
//! `∫ f(u) log|det J(u)|^2 du` of a density `f` differs from `E[log|det J|^2]`
//! only by that density, so a finite Gaussian expectation is the computable
//! proxy. For a single complex variable, `∫_C e^{-|ξ|^2} log|ξ| dξ = π E[log|ξ|]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::dof::{self, Exact};
use crate::jacobian::assemble_jacobian;
use crate::model::{ColoringMatrix, Dims};
use crate::pilots::PilotAssignment;
use crate::rng::{complex_normal, complex_normal_vector, stream_rng};
use crate::{Result, C64};

/// Natural-log value recorded for numerically singular draws.
pub const LOG_FLOOR: f64 = -700.0;

/// Draws per independent random stream.
const CHUNK: usize = 4096;

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogDetEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    /// Fraction of draws replaced by [`LOG_FLOOR`].
    pub clipped_fraction: f64,
}

/// Pairwise sum; the reduction order depends only on the length.
fn tree_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => tree_sum(&v[..n / 2]) + tree_sum(&v[n / 2..]),
    }
}

/// Mean and standard error of `values`, with `clipped` of them at the floor.
pub fn summarize(values: &[f64], clipped: usize) -> LogDetEstimate {
    let n = values.len();
    if n == 0 {
        return LogDetEstimate { mean: f64::NAN, stderr: f64::NAN, samples: 0, clipped_fraction: 0.0 };
    }
    let mean = tree_sum(values) / n as f64;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if n > 1 { tree_sum(&dev) / (n - 1) as f64 } else { 0.0 };
    LogDetEstimate { mean, stderr: (var / n as f64).sqrt(), samples: n, clipped_fraction: clipped as f64 / n as f64 }
}

/// `(value, clipped)` for `samples` draws, chunk `c` on stream `c`.
fn sample_chunks<F>(samples: usize, seed: u64, draw: F) -> (Vec<f64>, usize)
where
    F: Fn(&mut crate::rng::SimRng) -> Option<f64> + Sync,
{
    let chunks: Vec<Vec<Option<f64>>> = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let len = CHUNK.min(samples - c * CHUNK);
            (0..len).map(|_| draw(&mut rng)).collect()
        })
        .collect();
    let mut clipped = 0;
    let values = chunks
        .into_iter()
        .flatten()
        .map(|v| match v {
            Some(x) if x > LOG_FLOOR => x,
            _ => {
                clipped += 1;
                LOG_FLOOR
            }
        })
        .collect();
    (values, clipped)
}

/// `E[log|f(ξ)|]` for `ξ ~ CN(0, 1)`.
pub fn mc_log_modulus<F>(f: F, samples: usize, seed: u64) -> LogDetEstimate
where
    F: Fn(C64) -> C64 + Sync,
{
    let (values, clipped) = sample_chunks(samples, seed, |rng| {
        let v = f(complex_normal(rng)).norm();
        (v > 0.0).then(|| v.ln())
    });
    summarize(&values, clipped)
}

/// `E[log|ξ|] = ∫_0^∞ 2 r e^{-r^2} ln r dr` by composite Simpson on `[0, 12]`.
pub fn log_modulus_quadrature() -> f64 {
    let (upper, m) = (12.0f64, 400_000usize);
    let h = upper / m as f64;
    let g = |r: f64| if r == 0.0 { 0.0 } else { 2.0 * r * (-r * r).exp() * r.ln() };
    let inner: f64 = (1..m).map(|k| g(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 }).sum();
    h / 3.0 * (g(0.0) + inner + g(upper))
}

/// `E[log|det J|^2]` over Gaussian `(s, x)` for a fixed coloring matrix.
/// Numerically singular draws are recorded at the floor.
pub fn mc_logdet(z: &ColoringMatrix, pilots: &PilotAssignment, samples: usize, seed: u64) -> Result<LogDetEstimate> {
    let dims = pilots.dims;
    z.conforms(&dims)?;
    let (values, clipped) = sample_chunks(samples, seed, |rng| {
        let s = complex_normal_vector(rng, dims.fading_len());
        let x = complex_normal_vector(rng, dims.input_len());
        let j = assemble_jacobian(z, &s, &x, pilots).ok()?;
        j.is_nonsingular().then_some(2.0 * j.log_abs_det)
    });
    Ok(summarize(&values, clipped))
}

/// Pre-log bookkeeping of the mutual-information lower bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyChainReport {
    pub dims: Dims,
    /// `RN - ell`.
    pub useful_outputs: u64,
    /// `R T_eff Q`.
    pub fading_unknowns: u64,
    /// `RN - ell - R T_eff Q = min{RN - R T_eff Q, T_eff N - T_eff}`.
    pub coefficient: i64,
    /// `coefficient / N`.
    pub prelog: Exact,
    pub chi_low: Exact,
    /// The bound says nothing when the coefficient is not positive.
    pub trivial: bool,
    /// `log2` of the preimage bound, equal to the useful output count.
    pub bezout_bits: u64,
}

pub fn entropy_chain_report(dims: &Dims) -> EntropyChainReport {
    let (te, r, n, q) = (dims.t_eff as u64, dims.r as u64, dims.n as u64, dims.q as u64);
    let ell = dof::ell(te, r, n, q);
    let useful = r * n - ell;
    let fading = r * te * q;
    let coefficient = useful as i64 - fading as i64;
    debug_assert_eq!(coefficient, ((r * n) as i64 - fading as i64).min((te * n - te) as i64));
    let prelog = num_rational::BigRational::new(coefficient.into(), (n as i64).into());
    EntropyChainReport {
        dims: *dims,
        useful_outputs: useful,
        fading_unknowns: fading,
        coefficient,
        prelog: Exact(prelog),
        chi_low: Exact(dof::chi_low(te, r, n, q)),
        trivial: coefficient <= 0,
        bezout_bits: useful,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_matches_closed_form() {
        assert!((log_modulus_quadrature() + EULER_GAMMA / 2.0).abs() < 1e-6);
    }

    #[test]
    fn toy_monte_carlo() {
        let est = mc_log_modulus(|z| z, 200_000, 1);
        assert!((est.mean - log_modulus_quadrature()).abs() < 1e-2, "{est:?}");
        assert_eq!(est.clipped_fraction, 0.0);
        // Deterministic across runs.
        assert_eq!(mc_log_modulus(|z| z, 10_000, 3), mc_log_modulus(|z| z, 10_000, 3));
    }

    #[test]
    fn zero_function_is_fully_clipped() {
        let est = mc_log_modulus(|_| C64::new(0.0, 0.0), 100, 1);
        assert_eq!(est.clipped_fraction, 1.0);
        assert_eq!(est.mean, LOG_FLOOR);
    }

    #[test]
    fn generic_logdet_is_finite() {
        let d = Dims::new(2, 3, 4, 1, 2).unwrap();
        let p = PilotAssignment::build(&d).unwrap();
        let z = ColoringMatrix::gaussian(&d, 5);
        let a = mc_logdet(&z, &p, 2000, 1).unwrap();
        let b = mc_logdet(&z, &p, 2000, 2).unwrap();
        assert_eq!(a.clipped_fraction, 0.0);
        assert!(a.mean.is_finite() && a.stderr < 0.5);
        let combined = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 3.0 * combined, "{a:?} {b:?}");
    }

    #[test]
    fn constant_model_logdet_is_pinned() {
        let d = Dims::new(2, 3, 4, 1, 2).unwrap();
        let p = PilotAssignment::build(&d).unwrap();
        let z = ColoringMatrix::constant_model(&d).unwrap();
        let est = mc_logdet(&z, &p, 200, 1).unwrap();
        assert_eq!(est.clipped_fraction, 1.0);
        assert_eq!(est.mean, LOG_FLOOR);
    }

    #[test]
    fn chain_report_paper_dims() {
        let rep = entropy_chain_report(&Dims::new(2, 3, 4, 1, 2).unwrap());
        assert_eq!(rep.coefficient, 6);
        assert_eq!(rep.prelog, rep.chi_low);
        assert_eq!(rep.prelog.decimal(), 1.5);
        assert!(!rep.trivial);
        assert_eq!(rep.bezout_bits, 12);
    }

    #[test]
    fn chain_report_degenerate() {
        let rep = entropy_chain_report(&Dims::new(2, 3, 4, 2, 2).unwrap());
        assert!(rep.coefficient <= 0 && rep.trivial);
    }

    #[test]
    fn chain_report_matches_lower_bound() {
        for n in 1..=9 {
            for q in 1..=n {
                for t in 1..=5 {
                    for r in t..=8 {
                        let d = Dims::new(t, r, n, q, t).unwrap();
                        let rep = entropy_chain_report(&d);
                        assert_eq!(rep.prelog, rep.chi_low, "{d:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn bezout_bits_equal_unknowns() {
        for d in crate::pilots::regime_grid(8, 3) {
            let p = PilotAssignment::build(&d).unwrap();
            let rep = entropy_chain_report(&d);
            assert_eq!(rep.bezout_bits as usize, p.unknowns());
            assert_eq!(crate::jacobian::bezout_bound(&p).bits(), rep.bezout_bits + 1);
        }
    }
}
