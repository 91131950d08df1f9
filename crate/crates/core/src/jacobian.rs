//! Jacobian of the pilot-parametrized output map and its nonsingularity.
//!
//! With the pilot entries of `x` held fixed, the useful outputs `[B s]_I` are a
//! quadratic map of the unknowns `(s, [x]_D)`. Its Jacobian is
//! `[(B  [A]^D)]_I` where `A` has diagonal blocks `A_{r,t} = diag(Z_{r,t} s_{r,t})`.
//! Columns: the `R T_eff Q` fading entries in stacking order, then one column
//! per data position in ascending flat order.

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::ReductionError;
use crate::exact::{self, ComplexRational};
use crate::linalg::{complement, max_abs, submatrix, Spectrum, NONSINGULAR_REL_TOL};
use crate::model::{build_b, ColoringMatrix, Dims};
use crate::pilots::PilotAssignment;
use crate::rng::{complex_normal_vector, haar_unitary, stream_rng, unit_vector};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Relative tolerance of the block reduction's zero and pivot checks.
pub const REDUCTION_REL_TOL: f64 = 1e-12;

/// Jacobian columns for an arbitrary set of data positions (0-based flat
/// indices into `x`) restricted to the first `rows` outputs.
pub fn jacobian_columns(
    z: &ColoringMatrix,
    s: &CVector,
    x: &CVector,
    dims: &Dims,
    data_positions: &[usize],
    rows: usize,
) -> Result<CMatrix> {
    if s.len() != dims.fading_len() {
        return Err(Error::Shape(format!("s has length {}, expected {}", s.len(), dims.fading_len())));
    }
    if rows > dims.output_len() {
        return Err(Error::Shape(format!("{rows} rows requested from {} outputs", dims.output_len())));
    }
    if let Some(&bad) = data_positions.iter().find(|&&k| k >= dims.input_len()) {
        return Err(Error::Shape(format!("data position {bad} outside the input of length {}", dims.input_len())));
    }
    let b = build_b(z, x, dims)?;
    let nf = dims.fading_len();
    let mut j = CMatrix::zeros(rows, nf + data_positions.len());
    j.view_mut((0, 0), (rows, nf)).copy_from(&b.rows(0, rows));
    let n = dims.n;
    for r in 0..dims.r {
        for t in 0..dims.t_eff {
            let a = z.block(r, t) * s.rows(dims.fading_index(r, t, 0), dims.q);
            for (c, &k) in data_positions.iter().enumerate() {
                if k / n == t && r * n + k % n < rows {
                    j[(r * n + k % n, nf + c)] = a[k % n];
                }
            }
        }
    }
    Ok(j)
}

/// The square Jacobian at one point, with its spectral summary.
#[derive(Clone, Debug)]
pub struct JacobianMatrix {
    pub dims: Dims,
    pub pilots: PilotAssignment,
    pub matrix: CMatrix,
    /// `|det|`, may underflow to zero for badly scaled points; see `log_abs_det`.
    pub det_abs: f64,
    pub log_abs_det: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub bezout_bound: BigUint,
}

impl JacobianMatrix {
    pub fn relative_sigma_min(&self) -> f64 {
        if self.sigma_max > 0.0 {
            self.sigma_min / self.sigma_max
        } else {
            0.0
        }
    }

    /// `sigma_min > 1e-10 sigma_max`.
    pub fn is_nonsingular(&self) -> bool {
        self.sigma_max > 0.0 && self.sigma_min > NONSINGULAR_REL_TOL * self.sigma_max
    }

    /// One string per row, `#` for nonzero and `.` for zero entries.
    pub fn sparsity_pattern(&self) -> Vec<String> {
        sparsity_pattern(&self.matrix, 0.0)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<[f64; 2]>> = (0..self.matrix.nrows())
            .map(|i| (0..self.matrix.ncols()).map(|j| [self.matrix[(i, j)].re, self.matrix[(i, j)].im]).collect())
            .collect();
        serde_json::json!({
            "dims": self.dims,
            "size": self.matrix.nrows(),
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "det_abs": self.det_abs,
            "log_abs_det": self.log_abs_det,
            "bezout_bound": self.bezout_bound.to_string(),
            "matrix": rows,
        })
    }
}

/// `#`/`.` rendering of the entries with modulus above `tol`.
pub fn sparsity_pattern(m: &CMatrix, tol: f64) -> Vec<String> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| if m[(i, j)].norm() > tol { '#' } else { '.' }).collect())
        .collect()
}

/// `2^(R T_eff Q + |D|)`, the bound on isolated preimages of the output map.
pub fn bezout_bound(pilots: &PilotAssignment) -> BigUint {
    BigUint::from(1u8) << pilots.unknowns()
}

pub fn assemble_jacobian(z: &ColoringMatrix, s: &CVector, x: &CVector, pilots: &PilotAssignment) -> Result<JacobianMatrix> {
    let dims = pilots.dims;
    let matrix = jacobian_columns(z, s, x, &dims, &pilots.data_positions(), pilots.useful_outputs())?;
    debug_assert_eq!(matrix.nrows(), matrix.ncols());
    let spec = Spectrum::of(&matrix);
    Ok(JacobianMatrix {
        dims,
        pilots: pilots.clone(),
        matrix,
        det_abs: spec.log_abs_det.exp(),
        log_abs_det: spec.log_abs_det,
        sigma_min: spec.sigma_min,
        sigma_max: spec.sigma_max,
        bezout_bound: bezout_bound(pilots),
    })
}

/// How the free choices of the witness are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WitnessFill {
    /// Seeded Haar unitaries and random unit vectors.
    Unitary { seed: u64 },
    /// Identity blocks and unit basis vectors; every Jacobian entry is 0 or 1.
    Integer,
}

/// A point `(Z, s, x)` at which the Jacobian is nonsingular.
#[derive(Clone, Debug)]
pub struct Witness {
    pub z: ColoringMatrix,
    pub s: CVector,
    pub x: CVector,
}

struct Filler {
    fill: WitnessFill,
    rng: crate::rng::SimRng,
}

impl Filler {
    fn square(&mut self, n: usize) -> CMatrix {
        match self.fill {
            WitnessFill::Unitary { .. } => haar_unitary(&mut self.rng, n),
            WitnessFill::Integer => CMatrix::identity(n, n),
        }
    }

    fn unit(&mut self, n: usize) -> CVector {
        match self.fill {
            WitnessFill::Unitary { .. } => unit_vector(&mut self.rng, n),
            WitnessFill::Integer => {
                let mut e = CVector::zeros(n);
                e[0] = C64::new(1.0, 0.0);
                e
            }
        }
    }
}

/// Builds a nonsingularity witness by induction over the receive count.
///
/// With `x` all ones, receivers `1..=T_eff` use only their own transmit
/// antenna's fading and pilot rows forming a nonsingular block. Each further
/// receiver `r` gets coloring rows that are nonsingular on its witness groups
/// `G_t` (taken from the pilot assignment with `r` receivers), vanish on the
/// rest of `G`, and copy `s_{r,t}^H` on the dropped pilots `L_t`. This makes the
/// Jacobian reducible, block by block, to the base case.
pub fn witness_construct(pilots: &PilotAssignment, fill: WitnessFill) -> Result<Witness> {
    let dims = pilots.dims;
    dims.require_proof_regime()?;
    let (te, q) = (dims.t_eff, dims.q);
    let seed = match fill {
        WitnessFill::Unitary { seed } => seed,
        WitnessFill::Integer => 0,
    };
    let mut filler = Filler { fill, rng: stream_rng(seed, 0) };
    let mut z = ColoringMatrix::zeros(&dims);
    let mut s = CVector::zeros(dims.fading_len());
    let one = C64::new(1.0, 0.0);

    let base = PilotAssignment::build(&dims.with_receivers(te)?)?;
    for r in 0..te {
        let u = filler.square(te * q);
        for (row, &i) in base.p_t[r].iter().enumerate() {
            for t in 0..te {
                for k in 0..q {
                    z.block_mut(r, t)[(i - 1, k)] = u[(row, t * q + k)];
                }
            }
        }
        let srr = filler.unit(q);
        for &i in &base.d_t[r] {
            for k in 0..q {
                z.block_mut(r, r)[(i - 1, k)] = srr[k].conj();
            }
        }
        s.rows_mut(dims.fading_index(r, r, 0), q).copy_from(&srr);
    }

    for level in te + 1..=dims.r {
        let here = if level == dims.r { pilots.clone() } else { PilotAssignment::build(&dims.with_receivers(level)?)? };
        let ind = here
            .inductive
            .as_ref()
            .ok_or_else(|| Error::InvalidConfiguration("missing inductive sets".into()))?;
        let r = level - 1;
        for t in 0..te {
            let u = filler.square(q);
            // Row order inside G_t: the witness slot first, then the fillers.
            let mut order = vec![ind.g_witness[t]];
            order.extend(ind.g_t[t].iter().copied().filter(|&i| i != ind.g_witness[t]));
            for (row, &i) in order.iter().enumerate() {
                for k in 0..q {
                    z.block_mut(r, t)[(i - 1, k)] = u[(row, k)];
                }
            }
            let srt: CVector = CVector::from_fn(q, |k, _| u[(0, k)].conj());
            for &i in &ind.l_t[t] {
                for k in 0..q {
                    z.block_mut(r, t)[(i - 1, k)] = srt[k].conj();
                }
            }
            s.rows_mut(dims.fading_index(r, t, 0), q).copy_from(&srt);
        }
    }
    let x = CVector::from_element(dims.input_len(), one);
    Ok(Witness { z, s, x })
}

/// Exact determinant of the witness Jacobian under [`WitnessFill::Integer`].
pub fn exact_witness_determinant(pilots: &PilotAssignment) -> Result<ComplexRational> {
    let w = witness_construct(pilots, WitnessFill::Integer)?;
    let j = jacobian_columns(&w.z, &w.s, &w.x, &pilots.dims, &pilots.data_positions(), pilots.useful_outputs())?;
    exact::determinant_of(&j).ok_or_else(|| Error::InvalidInput("non-finite Jacobian entry".into()))
}

/// Which coloring matrix the probe uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeSource {
    /// Fresh i.i.d. Gaussian coloring matrix per trial.
    Gaussian,
    /// All-ones coloring matrix.
    ConstantModel,
}

/// Summary of a genericity probe. Extremes are `None` when there were no trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeStats {
    pub trials: usize,
    pub nonsingular: usize,
    pub fraction_nonsingular: Option<f64>,
    pub min_det_abs: Option<f64>,
    pub min_relative_sigma_min: Option<f64>,
}

/// Jacobians at i.i.d. Gaussian `(s, x)` (and `Z`, unless the constant model is
/// requested). Trial `k` uses stream `k` of `seed`.
pub fn genericity_probe(pilots: &PilotAssignment, trials: usize, seed: u64, source: ProbeSource) -> Result<ProbeStats> {
    let dims = pilots.dims;
    let constant = match source {
        ProbeSource::ConstantModel => Some(ColoringMatrix::constant_model(&dims)?),
        ProbeSource::Gaussian => None,
    };
    let results: Vec<(f64, f64, bool)> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let z = match &constant {
                Some(c) => c.clone(),
                None => ColoringMatrix::gaussian_with(&dims, &mut rng),
            };
            let s = complex_normal_vector(&mut rng, dims.fading_len());
            let x = complex_normal_vector(&mut rng, dims.input_len());
            let j = assemble_jacobian(&z, &s, &x, pilots)?;
            Ok((j.det_abs, j.relative_sigma_min(), j.is_nonsingular()))
        })
        .collect::<Result<_>>()?;
    let nonsingular = results.iter().filter(|r| r.2).count();
    let min = |f: fn(&(f64, f64, bool)) -> f64| results.iter().map(f).reduce(f64::min);
    Ok(ProbeStats {
        trials,
        nonsingular,
        fraction_nonsingular: (trials > 0).then(|| nonsingular as f64 / trials as f64),
        min_det_abs: min(|r| r.0),
        min_relative_sigma_min: min(|r| r.1),
    })
}

fn check_index_set(set: &[usize], dim: usize) -> std::result::Result<(), ReductionError> {
    let mut seen = vec![false; dim];
    for &i in set {
        if i >= dim {
            return Err(ReductionError::IndexOutOfRange { index: i, dim });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(ReductionError::DuplicateIndex(i));
        }
    }
    Ok(())
}

/// Removes rows `e` and columns `f` (0-based) from a square matrix whose
/// `(e, f)` block is nonsingular and whose block below or beside it vanishes.
/// Then `det(M) != 0` exactly when the returned matrix is nonsingular.
pub fn reduce_by_block(m: &CMatrix, e: &[usize], f: &[usize]) -> std::result::Result<CMatrix, ReductionError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(ReductionError::NotSquare { rows: n, cols: m.ncols() });
    }
    if e.len() != f.len() {
        return Err(ReductionError::SizeMismatch { rows: e.len(), cols: f.len() });
    }
    check_index_set(e, n)?;
    check_index_set(f, n)?;
    if e.is_empty() {
        return Ok(m.clone());
    }
    let (ce, cf) = (complement(n, e), complement(n, f));
    let norm = Spectrum::of(m).sigma_max;
    let tol = REDUCTION_REL_TOL * norm;
    let below = max_abs(&submatrix(m, &ce, f));
    let beside = max_abs(&submatrix(m, e, &cf));
    if below > tol && beside > tol {
        return Err(ReductionError::NoZeroBlock { below, beside });
    }
    let pivot = Spectrum::of(&submatrix(m, e, f));
    if !(pivot.sigma_min > tol) {
        return Err(ReductionError::SingularPivot { sigma_min: pivot.sigma_min, norm });
    }
    Ok(submatrix(m, &ce, &cf))
}

/// Witness check of every regime-valid configuration with `T = T_eff`,
/// `N <= n_max` and `Q <= q_max`: `(dims, relative sigma_min)` per cell.
pub fn witness_sweep(n_max: usize, q_max: usize, seed: u64) -> Result<Vec<(Dims, f64)>> {
    crate::pilots::regime_grid(n_max, q_max)
        .into_par_iter()
        .map(|d| {
            let pa = PilotAssignment::build(&d)?;
            let w = witness_construct(&pa, WitnessFill::Unitary { seed })?;
            let j = assemble_jacobian(&w.z, &w.s, &w.x, &pa)?;
            Ok((d, j.relative_sigma_min()))
        })
        .collect()
}
