//! Exact degrees-of-freedom formulas.
//!
//! Every pre-log value is a [`BigRational`]; floats appear only when a value is
//! emitted for plotting.

use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use crate::model::{ColoringMatrix, Dims};
use crate::rng::{complex_normal, stream_rng};
use crate::{Error, Result};

fn int(v: i128) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

fn ratio(num: i128, den: i128) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// `1 - 1/N`, the per-antenna pre-log of a single-input channel.
fn per_antenna(n: u64) -> BigRational {
    ratio(n as i128 - 1, n as i128)
}

/// The `M` of the constant model: `min{T, R, floor(N/2)}`.
pub fn constant_model_rank(t: u64, r: u64, n: u64) -> u64 {
    t.min(r).min(n / 2)
}

/// Pre-log of the constant block-fading model, `M (1 - M/N)`.
pub fn chi_const(t: u64, r: u64, n: u64) -> BigRational {
    let m = constant_model_rank(t, r, n) as i128;
    ratio(m * (n as i128 - m), n as i128)
}

/// Pre-log of the generic model inside its achievability region, `T (1 - 1/N)`.
pub fn chi_gen(t: u64, n: u64) -> BigRational {
    int(t as i128) * per_antenna(n)
}

/// Upper bound valid for every coloring matrix. Same expression as [`chi_gen`].
pub fn chi_upper(t: u64, n: u64) -> BigRational {
    chi_gen(t, n)
}

/// Lower bound when `t_eff` transmit antennas are used:
/// `min{T_eff (1 - 1/N), R (1 - T_eff Q / N)}`.
pub fn chi_low(t_eff: u64, r: u64, n: u64, q: u64) -> BigRational {
    let tx = chi_gen(t_eff, n);
    let rx = ratio(r as i128 * (n as i128 - (t_eff * q) as i128), n as i128);
    tx.min(rx)
}

/// Crossover `R N / (N + R Q - 1)` between the transmit- and receive-limited branches.
pub fn t_opt(r: u64, n: u64, q: u64) -> BigRational {
    ratio((r * n) as i128, (n + r * q - 1) as i128)
}

/// Best lower bound once `T_eff` exceeds the crossover:
/// `max{R (1 - ceil(T_opt) Q/N), floor(T_opt)(1 - 1/N)}`.
pub fn eta(r: u64, n: u64, q: u64) -> BigRational {
    let to = t_opt(r, n, q);
    let ceil = to.ceil().to_integer().to_u64().unwrap_or(0);
    let floor = to.floor().to_integer().to_u64().unwrap_or(0);
    let rx = ratio(r as i128 * (n as i128 - (ceil * q) as i128), n as i128);
    rx.max(chi_gen(floor, n))
}

/// `max_{1 <= T_eff <= min(T,R)} chi_low(T_eff)` in closed form.
pub fn chi_low_star(t: u64, r: u64, n: u64, q: u64) -> BigRational {
    if int(t as i128) <= t_opt(r, n, q) {
        chi_gen(t, n)
    } else {
        eta(r, n, q)
    }
}

/// `chi_low_star` by enumerating every admissible `T_eff`.
pub fn chi_low_star_brute(t: u64, r: u64, n: u64, q: u64) -> BigRational {
    (1..=t.min(r))
        .map(|te| chi_low(te, r, n, q))
        .max()
        .unwrap_or_else(BigRational::zero)
}

/// Redundant received equations, `max{0, RN - (R T_eff Q + T_eff N - T_eff)}`.
pub fn ell(t_eff: u64, r: u64, n: u64, q: u64) -> u64 {
    let used = (r * t_eff * q + t_eff * n - t_eff) as i128;
    ((r * n) as i128 - used).max(0) as u64
}

/// Total pilot count `max{T_eff, R T_eff Q - (R - T_eff) N}`.
pub fn theta(t_eff: u64, r: u64, n: u64, q: u64) -> u64 {
    let v = (r * t_eff * q) as i128 - (r as i128 - t_eff as i128) * n as i128;
    v.max(t_eff as i128) as u64
}

/// An exact rational emitted as `{"exact": "p/q", "decimal": x}`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Exact(pub BigRational);

impl Exact {
    pub fn decimal(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl From<BigRational> for Exact {
    fn from(v: BigRational) -> Self {
        Self(v)
    }
}

impl Serialize for Exact {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("Exact", 2)?;
        st.serialize_field("exact", &self.0.to_string())?;
        st.serialize_field("decimal", &self.decimal())?;
        st.end()
    }
}

/// Every bound for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DofReport {
    pub dims: Dims,
    pub chi_const: Exact,
    pub chi_gen_upper: Exact,
    pub chi_low_of_teff: Exact,
    pub chi_low_star: Exact,
    pub t_opt: Exact,
    pub eta: Exact,
    pub ell: u64,
    pub theta_r: u64,
    #[serde(rename = "M")]
    pub m: u64,
    /// Whether `dims` lies in the proof regime of the pilot construction.
    pub in_proof_regime: bool,
}

impl DofReport {
    pub fn new(dims: &Dims) -> Self {
        let (t, r, n, q, te) = (dims.t as u64, dims.r as u64, dims.n as u64, dims.q as u64, dims.t_eff as u64);
        let star = chi_low_star(t, r, n, q);
        debug_assert_eq!(star, chi_low_star_brute(t, r, n, q));
        Self {
            dims: *dims,
            chi_const: chi_const(t, r, n).into(),
            chi_gen_upper: chi_upper(t, n).into(),
            chi_low_of_teff: chi_low(te, r, n, q).into(),
            chi_low_star: star.into(),
            t_opt: t_opt(r, n, q).into(),
            eta: eta(r, n, q).into(),
            ell: ell(te, r, n, q),
            theta_r: theta(te, r, n, q),
            m: constant_model_rank(t, r, n),
            in_proof_regime: dims.in_proof_regime(),
        }
    }
}

/// One row of the Figure-1 table. Capped columns are `None` without a cap.
#[derive(Clone, Debug, PartialEq)]
pub struct Figure1Row {
    pub n: u64,
    pub ratio_unconstrained: BigRational,
    pub ratio_lower: Option<BigRational>,
    pub ratio_upper: Option<BigRational>,
}

/// `[(N-1)^2/N] / chi_const(floor(N/2), floor(N/2), N)`.
pub fn unconstrained_ratio(n: u64) -> BigRational {
    let half = n / 2;
    ratio(((n - 1) * (n - 1)) as i128, n as i128) / chi_const(half, half, n)
}

/// Ratios of the generic-model bounds to the best constant-model pre-log when
/// both antenna counts are at most `cap` (`Q = 1`).
pub fn capped_ratios(n: u64, cap: u64) -> (BigRational, BigRational) {
    let m = cap.min(n / 2);
    let denom = chi_const(m, m, n);
    let mut best_low = BigRational::zero();
    for t in 1..=cap {
        for r in 1..=cap {
            best_low = best_low.max(chi_low_star(t, r, n, 1));
        }
    }
    let best_up = chi_upper(cap, n);
    (best_low / &denom, best_up / denom)
}

/// Rows for every `N` in `range` with `N >= 2`.
pub fn figure1_curves(range: std::ops::RangeInclusive<u64>, cap: Option<u64>) -> Vec<Figure1Row> {
    range
        .filter(|&n| n >= 2)
        .map(|n| {
            let (lo, up) = match cap {
                Some(a) if a >= 1 => {
                    let (l, u) = capped_ratios(n, a);
                    (Some(l), Some(u))
                }
                _ => (None, None),
            };
            Figure1Row { n, ratio_unconstrained: unconstrained_ratio(n), ratio_lower: lo, ratio_upper: up }
        })
        .collect()
}

/// Writes `N,ratio_unconstrained,ratio_lower,ratio_upper` with empty capped
/// fields when no cap was given.
pub fn write_figure1_csv<W: Write>(rows: &[Figure1Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "ratio_unconstrained", "ratio_lower", "ratio_upper"])?;
    let fmt = |v: &Option<BigRational>| v.as_ref().map(|r| Exact(r.clone()).decimal().to_string()).unwrap_or_default();
    for row in rows {
        w.write_record([
            row.n.to_string(),
            Exact(row.ratio_unconstrained.clone()).decimal().to_string(),
            fmt(&row.ratio_lower),
            fmt(&row.ratio_upper),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Relative margin of `K` over the largest row energy.
pub const SIMO_MARGIN: f64 = 1e-6;

/// Constant of the virtual-SIMO noise split and the leftover noise variances.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualSimo {
    pub k: f64,
    /// `1 - sum_{t,q} |[Z_{r,t}]_i^q|^2 / (K T)`, indexed `r * N + i`.
    pub residual_variances: Vec<f64>,
}

/// `K = (1 + 1e-6) max_{r,i} sum_{t,q} |[Z_{r,t}]_i^q|^2` over all `T` transmit columns.
pub fn virtual_simo_k(z: &ColoringMatrix, dims: &Dims) -> Result<VirtualSimo> {
    if z.rows() != dims.r || z.n() != dims.n || z.q() != dims.q || z.cols() != dims.t {
        return Err(Error::Shape("coloring matrix does not match dims".into()));
    }
    let energy: Vec<f64> = (0..dims.r)
        .flat_map(|r| {
            (0..dims.n).map(move |i| {
                (0..dims.t)
                    .map(|t| z.block(r, t).row(i).iter().map(|v| v.norm_sqr()).sum::<f64>())
                    .sum()
            })
        })
        .collect();
    let peak = energy.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InvalidInput("coloring matrix is zero; the noise split is degenerate".into()));
    }
    let k = (1.0 + SIMO_MARGIN) * peak;
    let residual_variances: Vec<f64> = energy.iter().map(|e| 1.0 - e / (k * dims.t as f64)).collect();
    if let Some(bad) = residual_variances.iter().position(|&v| v <= 0.0) {
        return Err(Error::InvalidInput(format!("residual noise variance at output {bad} is not positive")));
    }
    Ok(VirtualSimo { k, residual_variances })
}

/// Monte-Carlo SNR of one virtual SIMO branch,
/// `E|sqrt(K rho) s x_t|^2 / E|w~|^2`, with `x_t` of length `n`.
pub fn virtual_simo_snr(k: f64, rho: f64, n: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, 0);
    let (mut sig, mut noise) = (0.0, 0.0);
    for _ in 0..samples {
        let s = complex_normal(&mut rng);
        for _ in 0..n {
            let x = complex_normal(&mut rng);
            let w = complex_normal(&mut rng);
            sig += k * rho * (s * x).norm_sqr();
            noise += w.norm_sqr();
        }
    }
    sig / noise
}
