//! Within-block channel model.
//!
//! Layouts (0-based):
//!
//! * fading vector `s`: entry `((r * T_eff) + t) * Q + q` holds `[s_{r,t}]_q`,
//! * input vector `x`: entry `t * N + i` holds `[x_t]_i`,
//! * output vector `y`: entry `r * N + i` holds `[y_r]_i`.
//!
//! Only the first `T_eff` transmit columns of a coloring matrix take part.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::rng::{complex_normal_matrix, complex_normal_vector, stream_rng};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Problem size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawDims")]
pub struct Dims {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    #[serde(rename = "T_eff")]
    pub t_eff: usize,
}

#[derive(Deserialize)]
struct RawDims {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "R")]
    r: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "Q")]
    q: usize,
    #[serde(rename = "T_eff")]
    t_eff: usize,
}

impl TryFrom<RawDims> for Dims {
    type Error = Error;
    fn try_from(raw: RawDims) -> Result<Self> {
        Dims::new(raw.t, raw.r, raw.n, raw.q, raw.t_eff)
    }
}

impl Dims {
    pub fn new(t: usize, r: usize, n: usize, q: usize, t_eff: usize) -> Result<Self> {
        if t == 0 || r == 0 || n == 0 || q == 0 || t_eff == 0 {
            return Err(Error::InvalidConfiguration(format!(
                "all sizes must be positive (T={t}, R={r}, N={n}, Q={q}, T_eff={t_eff})"
            )));
        }
        if q > n {
            return Err(Error::InvalidConfiguration(format!("Q={q} exceeds N={n}")));
        }
        if t_eff > t.min(r) {
            return Err(Error::InvalidConfiguration(format!(
                "T_eff={t_eff} exceeds min(T, R)={}",
                t.min(r)
            )));
        }
        Ok(Self { t, r, n, q, t_eff })
    }

    /// Dims with `T_eff = min(T, R)`.
    pub fn full(t: usize, r: usize, n: usize, q: usize) -> Result<Self> {
        Self::new(t, r, n, q, t.min(r).max(1))
    }

    /// Dims with the largest `T_eff <= min(T, R)` inside the proof regime, or
    /// `min(T, R)` when no choice qualifies.
    pub fn with_default_teff(t: usize, r: usize, n: usize, q: usize) -> Result<Self> {
        let full = Self::full(t, r, n, q)?;
        for te in (1..=full.t_eff).rev() {
            let d = Self { t_eff: te, ..full };
            if d.in_proof_regime() {
                return Ok(d);
            }
        }
        Ok(full)
    }

    /// Same sizes with a different receive count, `T_eff` unchanged.
    pub fn with_receivers(&self, r: usize) -> Result<Self> {
        Self::new(self.t.max(self.t_eff), r, self.n, self.q, self.t_eff)
    }

    /// `ceil(T_eff (N-1) / (N - T_eff Q))`, defined when `T_eff Q < N`.
    pub fn receive_cap(&self) -> Option<usize> {
        let used = self.t_eff * self.q;
        if used >= self.n {
            return None;
        }
        Some((self.t_eff * (self.n - 1)).div_ceil(self.n - used))
    }

    /// `T_eff Q < N` and `T_eff <= R <= receive_cap`.
    pub fn in_proof_regime(&self) -> bool {
        match self.receive_cap() {
            Some(cap) => self.t_eff <= self.r && self.r <= cap,
            None => false,
        }
    }

    /// Error unless the dims are inside the proof regime.
    pub fn require_proof_regime(&self) -> Result<()> {
        if self.in_proof_regime() {
            return Ok(());
        }
        let why = match self.receive_cap() {
            None => format!("T_eff*Q = {} is not below N = {}", self.t_eff * self.q, self.n),
            Some(cap) => format!("R = {} is not in [{}, {}]", self.r, self.t_eff, cap),
        };
        Err(Error::Regime(why))
    }

    /// Length of the stacked fading vector, `R T_eff Q`.
    pub fn fading_len(&self) -> usize {
        self.r * self.t_eff * self.q
    }

    /// Length of the stacked input vector, `T_eff N`.
    pub fn input_len(&self) -> usize {
        self.t_eff * self.n
    }

    /// Length of the stacked output vector, `R N`.
    pub fn output_len(&self) -> usize {
        self.r * self.n
    }

    pub fn fading_index(&self, r: usize, t: usize, q: usize) -> usize {
        (r * self.t_eff + t) * self.q + q
    }
}

/// The coloring matrix as an `R x T` grid of `N x Q` blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ColoringMatrix {
    n: usize,
    q: usize,
    rows: usize,
    cols: usize,
    /// Row-major over (r, t).
    blocks: Vec<CMatrix>,
}

impl ColoringMatrix {
    /// Builds from a grid `blocks[r][t]`.
    pub fn from_blocks(blocks: Vec<Vec<CMatrix>>) -> Result<Self> {
        let rows = blocks.len();
        let cols = blocks.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(Error::Shape("coloring matrix grid is empty".into()));
        }
        let (n, q) = blocks[0][0].shape();
        let mut flat = Vec::with_capacity(rows * cols);
        for (r, row) in blocks.into_iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!("grid row {r} has {} blocks, expected {cols}", row.len())));
            }
            for (t, b) in row.into_iter().enumerate() {
                if b.shape() != (n, q) {
                    return Err(Error::Shape(format!(
                        "block ({r},{t}) is {:?}, expected ({n}, {q})",
                        b.shape()
                    )));
                }
                flat.push(b);
            }
        }
        Ok(Self { n, q, rows, cols, blocks: flat })
    }

    pub fn zeros(dims: &Dims) -> Self {
        Self {
            n: dims.n,
            q: dims.q,
            rows: dims.r,
            cols: dims.t,
            blocks: vec![CMatrix::zeros(dims.n, dims.q); dims.r * dims.t],
        }
    }

    /// I.i.d. CN(0, 1) entries.
    pub fn gaussian(dims: &Dims, seed: u64) -> Self {
        Self::gaussian_with(dims, &mut stream_rng(seed, 0))
    }

    /// I.i.d. CN(0, 1) entries drawn from `rng`.
    pub fn gaussian_with<R: Rng + ?Sized>(dims: &Dims, rng: &mut R) -> Self {
        let mut z = Self::zeros(dims);
        for b in &mut z.blocks {
            *b = complex_normal_matrix(rng, dims.n, dims.q);
        }
        z
    }

    /// Every block equal to the all-ones column: fading constant over the block.
    pub fn constant_model(dims: &Dims) -> Result<Self> {
        if dims.q != 1 {
            return Err(Error::InvalidConfiguration(format!(
                "the constant model needs Q = 1, got Q = {}",
                dims.q
            )));
        }
        let mut z = Self::zeros(dims);
        for b in &mut z.blocks {
            b.fill(C64::new(1.0, 0.0));
        }
        Ok(z)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn q(&self) -> usize {
        self.q
    }
    /// Number of receive antennas in the grid.
    pub fn rows(&self) -> usize {
        self.rows
    }
    /// Number of transmit antennas in the grid.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block(&self, r: usize, t: usize) -> &CMatrix {
        &self.blocks[r * self.cols + t]
    }

    pub fn block_mut(&mut self, r: usize, t: usize) -> &mut CMatrix {
        &mut self.blocks[r * self.cols + t]
    }

    /// The `RN x TQ` matrix with block `(r, t)` at rows `rN..`, columns `tQ..`.
    pub fn stacked(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.rows * self.n, self.cols * self.q);
        for r in 0..self.rows {
            for t in 0..self.cols {
                m.view_mut((r * self.n, t * self.q), (self.n, self.q))
                    .copy_from(self.block(r, t));
            }
        }
        m
    }

    /// Checks that the grid covers `dims`.
    pub fn conforms(&self, dims: &Dims) -> Result<()> {
        if self.n != dims.n || self.q != dims.q || self.rows != dims.r || self.cols < dims.t_eff {
            return Err(Error::Shape(format!(
                "coloring matrix grid {}x{} of {}x{} blocks does not fit T_eff={}, R={}, N={}, Q={}",
                self.rows, self.cols, self.n, self.q, dims.t_eff, dims.r, dims.n, dims.q
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ColoringWire {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "Q")]
    q: usize,
    #[serde(rename = "R")]
    r: usize,
    #[serde(rename = "T")]
    t: usize,
    /// `blocks[r][t][i][q] = [re, im]`.
    blocks: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
}

impl Serialize for ColoringMatrix {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let blocks = (0..self.rows)
            .map(|r| {
                (0..self.cols)
                    .map(|t| {
                        let b = self.block(r, t);
                        (0..self.n)
                            .map(|i| (0..self.q).map(|k| [b[(i, k)].re, b[(i, k)].im]).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        ColoringWire { n: self.n, q: self.q, r: self.rows, t: self.cols, blocks }.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for ColoringMatrix {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = ColoringWire::deserialize(de)?;
        let mut grid = Vec::with_capacity(w.r);
        for row in &w.blocks {
            let mut out = Vec::with_capacity(w.t);
            for b in row {
                if b.len() != w.n || b.iter().any(|line| line.len() != w.q) {
                    return Err(D::Error::custom("block shape disagrees with N, Q"));
                }
                out.push(CMatrix::from_fn(w.n, w.q, |i, k| C64::new(b[i][k][0], b[i][k][1])));
            }
            grid.push(out);
        }
        let z = ColoringMatrix::from_blocks(grid).map_err(D::Error::custom)?;
        if z.rows != w.r || z.cols != w.t {
            return Err(D::Error::custom("grid size disagrees with R, T"));
        }
        Ok(z)
    }
}

fn check_lengths(z: &ColoringMatrix, dims: &Dims, s: Option<&CVector>, x: &CVector) -> Result<()> {
    z.conforms(dims)?;
    if x.len() != dims.input_len() {
        return Err(Error::Shape(format!("x has length {}, expected {}", x.len(), dims.input_len())));
    }
    if let Some(s) = s {
        if s.len() != dims.fading_len() {
            return Err(Error::Shape(format!("s has length {}, expected {}", s.len(), dims.fading_len())));
        }
    }
    Ok(())
}

/// The block-diagonal `RN x R T_eff Q` matrix with blocks `(diag(x_1) Z_{r,1} ... diag(x_T) Z_{r,T})`.
pub fn build_b(z: &ColoringMatrix, x: &CVector, dims: &Dims) -> Result<CMatrix> {
    check_lengths(z, dims, None, x)?;
    let (n, q, te) = (dims.n, dims.q, dims.t_eff);
    let mut b = CMatrix::zeros(dims.output_len(), dims.fading_len());
    for r in 0..dims.r {
        for t in 0..te {
            let zb = z.block(r, t);
            for i in 0..n {
                for k in 0..q {
                    b[(r * n + i, dims.fading_index(r, t, k))] = x[t * n + i] * zb[(i, k)];
                }
            }
        }
    }
    Ok(b)
}

/// `B s` evaluated without forming `B`.
pub fn noiseless_output(z: &ColoringMatrix, s: &CVector, x: &CVector, dims: &Dims) -> Result<CVector> {
    check_lengths(z, dims, Some(s), x)?;
    let n = dims.n;
    let mut y = CVector::zeros(dims.output_len());
    for r in 0..dims.r {
        for t in 0..dims.t_eff {
            let zb = z.block(r, t);
            let base = dims.fading_index(r, t, 0);
            let s_rt = s.rows(base, dims.q);
            let a = zb * s_rt;
            for i in 0..n {
                y[r * n + i] += a[i] * x[t * n + i];
            }
        }
    }
    Ok(y)
}

/// One block of channel uses.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub dims: Dims,
    pub s: CVector,
    pub x: CVector,
    pub w: CVector,
    pub rho: f64,
    pub y_bar: CVector,
    pub y: CVector,
}

impl ChannelRealization {
    /// Recomputes `sqrt(rho/T_eff) y_bar + w`.
    pub fn assembled_output(&self) -> CVector {
        let gain = C64::new((self.rho / self.dims.t_eff as f64).sqrt(), 0.0);
        &self.y_bar * gain + &self.w
    }
}

/// Draws `s`, `x`, `w` i.i.d. CN(0, 1) and forms the outputs.
pub fn sample_realization(z: &ColoringMatrix, dims: &Dims, rho: f64, seed: u64) -> Result<ChannelRealization> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidInput(format!("SNR must be positive and finite, got {rho}")));
    }
    z.conforms(dims)?;
    let mut rng = stream_rng(seed, 1);
    let s = complex_normal_vector(&mut rng, dims.fading_len());
    let x = complex_normal_vector(&mut rng, dims.input_len());
    let w = complex_normal_vector(&mut rng, dims.output_len());
    let y_bar = noiseless_output(z, &s, &x, dims)?;
    let mut real = ChannelRealization { dims: *dims, s, x, w, rho, y_bar: y_bar.clone(), y: y_bar };
    real.y = real.assembled_output();
    Ok(real)
}

/// The noiseless outputs arranged as columns, `N x R`.
pub fn output_columns(y_bar: &CVector, dims: &Dims) -> CMatrix {
    DMatrix::from_fn(dims.n, dims.r, |i, r| y_bar[r * dims.n + i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{numerical_rank, RANK_REL_TOL};
    use proptest::prelude::*;

    fn d2341() -> Dims {
        Dims::new(2, 3, 4, 1, 2).unwrap()
    }

    #[test]
    fn dims_validation() {
        assert!(Dims::new(2, 3, 4, 5, 2).is_err());
        assert!(Dims::new(2, 3, 4, 1, 3).is_err());
        assert!(Dims::new(0, 3, 4, 1, 1).is_err());
        let d = d2341();
        assert_eq!(d.receive_cap(), Some(3));
        assert!(d.in_proof_regime());
        assert!(!Dims::new(2, 4, 4, 1, 2).unwrap().in_proof_regime());
        assert!(!Dims::new(2, 2, 4, 2, 2).unwrap().in_proof_regime());
    }

    #[test]
    fn default_teff_backs_off_into_regime() {
        // T_eff=4 would need 4Q < N; falls back to the largest feasible value.
        let d = Dims::with_default_teff(4, 4, 6, 1).unwrap();
        assert!(d.in_proof_regime());
        assert_eq!(d.t_eff, 4);
        let d = Dims::with_default_teff(3, 3, 4, 1).unwrap();
        assert_eq!(d.t_eff, 3);
        let d = Dims::with_default_teff(4, 2, 4, 2).unwrap();
        assert_eq!(d.t_eff, 1);
    }

    #[test]
    fn dims_json_roundtrip_and_validation() {
        let d = d2341();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"T":2,"R":3,"N":4,"Q":1,"T_eff":2}"#);
        assert_eq!(serde_json::from_str::<Dims>(&s).unwrap(), d);
        assert!(serde_json::from_str::<Dims>(r#"{"T":2,"R":3,"N":4,"Q":9,"T_eff":2}"#).is_err());
    }

    #[test]
    fn coloring_json_roundtrip() {
        let z = ColoringMatrix::gaussian(&Dims::new(2, 2, 3, 2, 2).unwrap(), 5);
        let s = serde_json::to_string(&z).unwrap();
        let back: ColoringMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, z);
    }

    #[test]
    fn stacked_layout_is_r_major() {
        let d = d2341();
        let mut z = ColoringMatrix::zeros(&d);
        z.block_mut(1, 0)[(2, 0)] = C64::new(7.0, 0.0);
        z.block_mut(2, 1)[(3, 0)] = C64::new(0.0, 1.0);
        let m = z.stacked();
        assert_eq!(m.shape(), (12, 2));
        assert_eq!(m[(4 + 2, 0)], C64::new(7.0, 0.0));
        assert_eq!(m[(8 + 3, 1)], C64::new(0.0, 1.0));
    }

    #[test]
    fn single_antenna_b_is_the_coloring_column() {
        let d = Dims::new(1, 1, 5, 1, 1).unwrap();
        let z = ColoringMatrix::gaussian(&d, 3);
        let x = CVector::from_element(5, C64::new(1.0, 0.0));
        let b = build_b(&z, &x, &d).unwrap();
        assert_eq!(b, z.block(0, 0).clone());
    }

    #[test]
    fn b_shape_for_paper_dims() {
        let d = d2341();
        let z = ColoringMatrix::gaussian(&d, 1);
        let x = CVector::from_element(8, C64::new(1.0, 0.0));
        let b = build_b(&z, &x, &d).unwrap();
        assert_eq!(b.shape(), (12, 6));
        // Off-diagonal blocks vanish.
        for r in 0..3 {
            for c in 0..6 {
                if c / 2 != r {
                    for i in 0..4 {
                        assert_eq!(b[(r * 4 + i, c)], C64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn b_s_matches_entrywise_sum() {
        let d = d2341();
        let z = ColoringMatrix::gaussian(&d, 11);
        let mut rng = stream_rng(11, 9);
        let s = complex_normal_vector(&mut rng, d.fading_len());
        let x = complex_normal_vector(&mut rng, d.input_len());
        let via_b = build_b(&z, &x, &d).unwrap() * &s;
        for r in 0..3 {
            for i in 0..4 {
                let mut acc = C64::new(0.0, 0.0);
                for t in 0..2 {
                    acc += z.block(r, t)[(i, 0)] * s[d.fading_index(r, t, 0)] * x[t * 4 + i];
                }
                assert!((via_b[r * 4 + i] - acc).norm() < 1e-12);
            }
        }
        let direct = noiseless_output(&z, &s, &x, &d).unwrap();
        assert!((direct - via_b).norm() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let d = d2341();
        let z = ColoringMatrix::gaussian(&d, 1);
        let x = CVector::zeros(7);
        assert!(matches!(build_b(&z, &x, &d), Err(Error::Shape(_))));
        let other = Dims::new(2, 2, 4, 1, 2).unwrap();
        let x = CVector::zeros(8);
        assert!(build_b(&z, &x, &other).is_err());
    }

    #[test]
    fn realization_is_deterministic_and_consistent() {
        let d = d2341();
        let z = ColoringMatrix::gaussian(&d, 2);
        let a = sample_realization(&z, &d, 10.0, 42).unwrap();
        let b = sample_realization(&z, &d, 10.0, 42).unwrap();
        assert_eq!(a.y, b.y);
        let yb = build_b(&z, &a.x, &d).unwrap() * &a.s;
        assert!((yb - &a.y_bar).norm() <= 1e-12 * a.y_bar.norm());
        assert!((a.assembled_output() - &a.y).norm() <= 1e-12 * a.y.norm());
        assert!(sample_realization(&z, &d, 0.0, 1).is_err());
    }

    #[test]
    fn constant_model_shape_and_rank() {
        let d = d2341();
        let z = ColoringMatrix::constant_model(&d).unwrap();
        let st = z.stacked();
        assert_eq!(st.shape(), (12, 2));
        assert!(st.iter().all(|&v| v == C64::new(1.0, 0.0)));
        assert!(ColoringMatrix::constant_model(&Dims::new(2, 3, 4, 2, 2).unwrap()).is_err());
        for seed in 0..20 {
            let real = sample_realization(&z, &d, 1.0, seed).unwrap();
            assert_eq!(numerical_rank(&output_columns(&real.y_bar, &d), RANK_REL_TOL), 2);
        }
    }

    #[test]
    fn single_antenna_constant_output() {
        let d = Dims::new(1, 1, 3, 1, 1).unwrap();
        let z = ColoringMatrix::constant_model(&d).unwrap();
        let real = sample_realization(&z, &d, 1.0, 0).unwrap();
        let expect = &real.x * real.s[0];
        assert!((expect - &real.y_bar).norm() < 1e-14);
    }

    #[test]
    fn generic_outputs_span_three_dimensions() {
        let d = d2341();
        for seed in 0..100 {
            let z = ColoringMatrix::gaussian(&d, 1000 + seed);
            let real = sample_realization(&z, &d, 1.0, seed).unwrap();
            assert_eq!(numerical_rank(&output_columns(&real.y_bar, &d), RANK_REL_TOL), 3);
        }
    }

    #[test]
    fn sample_moments() {
        let d = Dims::new(2, 2, 4, 1, 2).unwrap();
        let z = ColoringMatrix::gaussian(&d, 0);
        let draws = 100_000u64;
        let (mut s_pow, mut x_pow) = (0.0, 0.0);
        for seed in 0..draws {
            let real = sample_realization(&z, &d, 1.0, seed).unwrap();
            s_pow += real.s[0].norm_sqr();
            x_pow += real.x.norm_squared();
        }
        let s_var = s_pow / draws as f64;
        let x_mean = x_pow / draws as f64;
        assert!((0.98..=1.02).contains(&s_var), "{s_var}");
        assert!((x_mean / 8.0 - 1.0).abs() < 0.02, "{x_mean}");
    }

    proptest! {
        #[test]
        fn b_is_linear_in_x(seed in 0u64..1000, t_eff in 1usize..3, r in 1usize..4, n in 2usize..6) {
            let t_eff = t_eff.min(r);
            let d = Dims::new(t_eff, r, n, 1, t_eff).unwrap();
            let z = ColoringMatrix::gaussian(&d, seed);
            let mut rng = stream_rng(seed, 5);
            let s = complex_normal_vector(&mut rng, d.fading_len());
            let x1 = complex_normal_vector(&mut rng, d.input_len());
            let x2 = complex_normal_vector(&mut rng, d.input_len());
            let lhs = build_b(&z, &(&x1 + &x2), &d).unwrap() * &s;
            let rhs = build_b(&z, &x1, &d).unwrap() * &s + build_b(&z, &x2, &d).unwrap() * &s;
            prop_assert!((lhs - &rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
        }
    }
}
