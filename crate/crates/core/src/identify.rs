//! Noiseless recovery of fading and data symbols from the useful outputs.
//!
//! The output map is holomorphic in the unknowns `u = (s, [x]_D)`, so Newton's
//! method runs directly on complex vectors with the assembled Jacobian.

use rayon::prelude::*;
use serde::Serialize;

use crate::jacobian::{assemble_jacobian, bezout_bound};
use crate::linalg::{numerical_rank, Spectrum, RANK_REL_TOL};
use crate::model::{noiseless_output, output_columns, ColoringMatrix, Dims};
use crate::pilots::PilotAssignment;
use crate::rng::{complex_normal_vector, stream_rng};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Residual at which a recovery counts as successful.
pub const SUCCESS_RESIDUAL: f64 = 1e-9;
/// Relative distance below which two solutions are the same.
pub const CLUSTER_DISTANCE: f64 = 1e-6;

/// First `rows` entries of `B s`.
pub fn forward_map_full(z: &ColoringMatrix, s: &CVector, x: &CVector, dims: &Dims, rows: usize) -> Result<CVector> {
    let y = noiseless_output(z, s, x, dims)?;
    if rows > y.len() {
        return Err(Error::Shape(format!("{rows} outputs requested from {}", y.len())));
    }
    Ok(y.rows(0, rows).into_owned())
}

/// Stacked input from data and pilot symbols (each in ascending flat order).
pub fn assemble_input(x_d: &CVector, x_p: &CVector, pilots: &PilotAssignment) -> Result<CVector> {
    if x_d.len() != pilots.d.len() || x_p.len() != pilots.p.len() {
        return Err(Error::Shape(format!(
            "got {} data and {} pilot symbols, expected {} and {}",
            x_d.len(),
            x_p.len(),
            pilots.d.len(),
            pilots.p.len()
        )));
    }
    let mut x = CVector::zeros(pilots.dims.input_len());
    for (v, k) in x_d.iter().zip(pilots.data_positions()) {
        x[k] = *v;
    }
    for (v, k) in x_p.iter().zip(pilots.pilot_positions()) {
        x[k] = *v;
    }
    Ok(x)
}

/// `(s, [x]_D) -> [B s]_I` with the pilots fixed.
pub fn forward_map(s: &CVector, x_d: &CVector, x_p: &CVector, pilots: &PilotAssignment, z: &ColoringMatrix) -> Result<CVector> {
    let x = assemble_input(x_d, x_p, pilots)?;
    forward_map_full(z, s, &x, &pilots.dims, pilots.useful_outputs())
}

/// Unknowns of the recovery system.
#[derive(Clone, Debug, PartialEq)]
pub struct Unknowns {
    pub s: CVector,
    pub x_d: CVector,
}

impl Unknowns {
    pub fn stacked(&self) -> CVector {
        let mut v = CVector::zeros(self.s.len() + self.x_d.len());
        v.rows_mut(0, self.s.len()).copy_from(&self.s);
        v.rows_mut(self.s.len(), self.x_d.len()).copy_from(&self.x_d);
        v
    }

    fn from_stacked(v: &CVector, ns: usize) -> Self {
        Self { s: v.rows(0, ns).into_owned(), x_d: v.rows(ns, v.len() - ns).into_owned() }
    }

    /// `|self - truth| / |truth|`.
    pub fn relative_error(&self, truth: &Unknowns) -> f64 {
        let t = truth.stacked();
        let scale = t.norm().max(f64::MIN_POSITIVE);
        (self.stacked() - t).norm() / scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoverOptions {
    /// Stop once the relative residual falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 200, max_halvings: 30 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryResult {
    pub success: bool,
    /// `|phi(u) - y| / |y|`.
    pub residual: f64,
    /// Relative distance to the ground truth, when known.
    pub param_error: Option<f64>,
    pub iterations: usize,
    pub estimate: Unknowns,
}

impl RecoveryResult {
    pub fn score(mut self, truth: &Unknowns) -> Self {
        self.param_error = Some(self.estimate.relative_error(truth));
        self
    }
}

struct System<'a> {
    y: &'a CVector,
    x_p: &'a CVector,
    pilots: &'a PilotAssignment,
    z: &'a ColoringMatrix,
    scale: f64,
}

impl System<'_> {
    fn residual_vec(&self, u: &Unknowns) -> Result<CVector> {
        Ok(forward_map(&u.s, &u.x_d, self.x_p, self.pilots, self.z)? - self.y)
    }

    fn jacobian(&self, u: &Unknowns) -> Result<CMatrix> {
        let x = assemble_input(&u.x_d, self.x_p, self.pilots)?;
        Ok(assemble_jacobian(self.z, &u.s, &x, self.pilots)?.matrix)
    }
}

fn lm_step(j: &CMatrix, f: &CVector) -> Option<CVector> {
    let jh = j.adjoint();
    let mut normal = &jh * j;
    let lambda = 1e-6 * normal.diagonal().iter().map(|v| v.re).fold(0.0, f64::max).max(1e-300);
    for k in 0..normal.nrows() {
        normal[(k, k)] += C64::new(lambda, 0.0);
    }
    normal.cholesky().map(|c| -c.solve(&(jh * f)))
}

/// Newton iteration on `phi(u) = y` with a halving line search and a damped
/// least-squares step whenever the linearization is singular or the Newton
/// direction does not reduce the residual.
pub fn recover(
    y: &CVector,
    x_p: &CVector,
    pilots: &PilotAssignment,
    z: &ColoringMatrix,
    init: Unknowns,
    opts: &RecoverOptions,
) -> Result<RecoveryResult> {
    if y.len() != pilots.useful_outputs() {
        return Err(Error::Shape(format!("y has length {}, expected {}", y.len(), pilots.useful_outputs())));
    }
    if init.s.len() != pilots.dims.fading_len() || init.x_d.len() != pilots.d.len() {
        return Err(Error::Shape("initial point does not match the unknowns".into()));
    }
    let sys = System { y, x_p, pilots, z, scale: y.norm().max(f64::MIN_POSITIVE) };
    let ns = pilots.dims.fading_len();
    let mut u = init;
    let mut f = sys.residual_vec(&u)?;
    let mut res = f.norm() / sys.scale;
    let mut iterations = 0;
    while res >= opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let j = sys.jacobian(&u)?;
        let newton = j.clone().lu().solve(&(-&f)).filter(|d| d.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        let mut improved = false;
        for attempt in 0..2 {
            let dir = match (attempt, &newton) {
                (0, Some(d)) => d.clone(),
                (0, None) => continue,
                _ => match lm_step(&j, &f) {
                    Some(d) => d,
                    None => break,
                },
            };
            let base = u.stacked();
            let mut step = 1.0;
            for _ in 0..=opts.max_halvings {
                let cand = Unknowns::from_stacked(&(&base + &dir * C64::new(step, 0.0)), ns);
                let fc = sys.residual_vec(&cand)?;
                let rc = fc.norm() / sys.scale;
                if rc < res {
                    u = cand;
                    f = fc;
                    res = rc;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if improved {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(RecoveryResult { success: res <= SUCCESS_RESIDUAL, residual: res, param_error: None, iterations, estimate: u })
}

/// A noiseless problem instance with known answer.
#[derive(Clone, Debug)]
pub struct Instance {
    pub z: ColoringMatrix,
    pub truth: Unknowns,
    pub x_p: CVector,
    pub y: CVector,
}

/// Gaussian `s`, `x` (and `Z`, unless `constant_model`) from stream `trial` of `seed`.
pub fn sample_instance(pilots: &PilotAssignment, constant_model: bool, seed: u64, trial: u64) -> Result<Instance> {
    let dims = pilots.dims;
    let mut rng = stream_rng(seed, trial);
    let z = if constant_model {
        ColoringMatrix::constant_model(&dims)?
    } else {
        ColoringMatrix::gaussian_with(&dims, &mut rng)
    };
    let s = complex_normal_vector(&mut rng, dims.fading_len());
    let x = complex_normal_vector(&mut rng, dims.input_len());
    let x_d = CVector::from_iterator(pilots.d.len(), pilots.data_positions().into_iter().map(|k| x[k]));
    let x_p = CVector::from_iterator(pilots.p.len(), pilots.pilot_positions().into_iter().map(|k| x[k]));
    let y = forward_map_full(&z, &s, &x, &dims, pilots.useful_outputs())?;
    Ok(Instance { z, truth: Unknowns { s, x_d }, x_p, y })
}

/// `truth + eps |truth| g/|g|` for a Gaussian direction `g`.
pub fn perturb(truth: &Unknowns, eps: f64, seed: u64, trial: u64) -> Unknowns {
    let v = truth.stacked();
    let g = complex_normal_vector(&mut stream_rng(seed ^ 0x9e37_79b9_7f4a_7c15, trial), v.len());
    let dir = &g * C64::new(eps * v.norm() / g.norm(), 0.0);
    Unknowns::from_stacked(&(v + dir), truth.s.len())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoverySummary {
    pub dims: Dims,
    pub trials: usize,
    pub constant_model: bool,
    pub perturbation: f64,
    /// Fraction of trials with residual at most `1e-9`.
    pub success_rate: f64,
    /// Fraction with residual at most `1e-9` and parameter error below `1e-6`.
    pub recovered_rate: f64,
    pub median_residual: f64,
    pub median_param_error: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Truth-perturbed recovery over `trials` independent instances.
pub fn recovery_experiment(
    pilots: &PilotAssignment,
    trials: usize,
    seed: u64,
    constant_model: bool,
    perturbation: f64,
) -> Result<(RecoverySummary, Vec<RecoveryResult>)> {
    let results: Vec<RecoveryResult> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let inst = sample_instance(pilots, constant_model, seed, k)?;
            let init = perturb(&inst.truth, perturbation, seed, k);
            Ok(recover(&inst.y, &inst.x_p, pilots, &inst.z, init, &RecoverOptions::default())?.score(&inst.truth))
        })
        .collect::<Result<_>>()?;
    let n = trials.max(1) as f64;
    let ok = results.iter().filter(|r| r.success).count();
    let rec = results.iter().filter(|r| r.success && r.param_error.is_some_and(|e| e < 1e-6)).count();
    let summary = RecoverySummary {
        dims: pilots.dims,
        trials,
        constant_model,
        perturbation,
        success_rate: ok as f64 / n,
        recovered_rate: rec as f64 / n,
        median_residual: median(results.iter().map(|r| r.residual).collect()),
        median_param_error: median(results.iter().filter_map(|r| r.param_error).collect()),
    };
    Ok((summary, results))
}

/// Checks that `(x_t, s_{r,t}) -> (c_t x_t, s_{r,t}/c_t)` leaves the output unchanged.
pub fn scaling_ambiguity_check(s: &CVector, x: &CVector, z: &ColoringMatrix, dims: &Dims, c: &[C64]) -> Result<bool> {
    if c.len() != dims.t_eff || c.iter().any(|v| v.norm() == 0.0) {
        return Err(Error::InvalidInput("need one nonzero factor per transmit antenna".into()));
    }
    let y = noiseless_output(z, s, x, dims)?;
    let (mut s2, mut x2) = (s.clone(), x.clone());
    for t in 0..dims.t_eff {
        x2.rows_mut(t * dims.n, dims.n).scale_mut_c(c[t]);
        for r in 0..dims.r {
            s2.rows_mut(dims.fading_index(r, t, 0), dims.q).scale_mut_c(c[t].inv());
        }
    }
    let y2 = noiseless_output(z, &s2, &x2, dims)?;
    Ok((y2 - &y).norm() <= 1e-12 * y.norm().max(f64::MIN_POSITIVE))
}

trait ScaleC {
    fn scale_mut_c(&mut self, c: C64);
}

impl<S: nalgebra::StorageMut<C64, nalgebra::Dyn, nalgebra::U1>> ScaleC for nalgebra::Matrix<C64, nalgebra::Dyn, nalgebra::U1, S> {
    fn scale_mut_c(&mut self, c: C64) {
        for v in self.iter_mut() {
            *v *= c;
        }
    }
}

/// Numerical ranks of the `N x R` noiseless output matrix under the constant
/// model and under a Gaussian coloring matrix, with shared `s` and `x`.
pub fn rank_gap_demo(dims: &Dims, seed: u64) -> Result<(usize, usize)> {
    let mut rng = stream_rng(seed, 0);
    let s = complex_normal_vector(&mut rng, dims.fading_len());
    let x = complex_normal_vector(&mut rng, dims.input_len());
    let generic = ColoringMatrix::gaussian_with(dims, &mut rng);
    let constant = ColoringMatrix::constant_model(dims)?;
    let rank = |z: &ColoringMatrix| -> Result<usize> {
        let y = noiseless_output(z, &s, &x, dims)?;
        Ok(numerical_rank(&output_columns(&y, dims), RANK_REL_TOL))
    };
    Ok((rank(&constant)?, rank(&generic)?))
}

/// Clusters converged random-restart solutions of one instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultiplicityReport {
    pub restarts: usize,
    pub converged: usize,
    pub distinct: usize,
    pub bezout_bound: String,
}

pub fn count_distinct_solutions(inst: &Instance, pilots: &PilotAssignment, restarts: usize, seed: u64) -> Result<MultiplicityReport> {
    let n = pilots.unknowns();
    let ns = pilots.dims.fading_len();
    let solutions: Vec<CVector> = (0..restarts as u64)
        .into_par_iter()
        .map(|k| {
            let init = Unknowns::from_stacked(&complex_normal_vector(&mut stream_rng(seed, k), n), ns);
            let r = recover(&inst.y, &inst.x_p, pilots, &inst.z, init, &RecoverOptions::default())?;
            Ok(r.success.then(|| r.estimate.stacked()))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut reps: Vec<&CVector> = Vec::new();
    for sol in &solutions {
        if !reps.iter().any(|r| (*r - sol).norm() <= CLUSTER_DISTANCE * r.norm().max(1.0)) {
            reps.push(sol);
        }
    }
    Ok(MultiplicityReport {
        restarts,
        converged: solutions.len(),
        distinct: reps.len(),
        bezout_bound: bezout_bound(pilots).to_string(),
    })
}

/// Rank of the Jacobian after turning the last pilot into an unknown:
/// `(columns, rank)`; the columns exceed the rank.
pub fn dropped_pilot_rank(pilots: &PilotAssignment, seed: u64) -> Result<(usize, usize)> {
    let inst = sample_instance(pilots, false, seed, 0)?;
    let x = assemble_input(&inst.truth.x_d, &inst.x_p, pilots)?;
    let mut data = pilots.data_positions();
    let freed = *pilots.pilot_positions().last().ok_or_else(|| Error::InvalidInput("no pilots".into()))?;
    data.push(freed);
    data.sort_unstable();
    let j = crate::jacobian::jacobian_columns(&inst.z, &inst.truth.s, &x, &pilots.dims, &data, pilots.useful_outputs())?;
    Ok((j.ncols(), numerical_rank(&j, RANK_REL_TOL)))
}

/// `sigma_min / sigma_max` of the Jacobian at an instance's ground truth.
pub fn conditioning_at_truth(inst: &Instance, pilots: &PilotAssignment) -> Result<f64> {
    let x = assemble_input(&inst.truth.x_d, &inst.x_p, pilots)?;
    let j = assemble_jacobian(&inst.z, &inst.truth.s, &x, pilots)?;
    Ok(Spectrum::of(&j.matrix).relative_sigma_min())
}


#[cfg(test)]
mod tests {
    use super::*;

    fn pa(t: usize, r: usize, n: usize, q: usize) -> PilotAssignment {
        PilotAssignment::build(&Dims::new(t, r, n, q, t.min(r)).unwrap()).unwrap()
    }

    #[test]
    fn zero_fading_gives_zero_output() {
        let p = pa(2, 3, 4, 1);
        let inst = sample_instance(&p, false, 1, 0).unwrap();
        let y = forward_map(&CVector::zeros(6), &inst.truth.x_d, &inst.x_p, &p, &inst.z).unwrap();
        assert_eq!(y.len(), 12);
        assert_eq!(y.norm(), 0.0);
    }

    #[test]
    fn forward_map_matches_model() {
        let p = pa(2, 3, 5, 1);
        assert_eq!(p.ell, 1);
        let inst = sample_instance(&p, false, 2, 0).unwrap();
        let x = assemble_input(&inst.truth.x_d, &inst.x_p, &p).unwrap();
        let full = noiseless_output(&inst.z, &inst.truth.s, &x, &p.dims).unwrap();
        let phi = forward_map(&inst.truth.s, &inst.truth.x_d, &inst.x_p, &p, &inst.z).unwrap();
        assert_eq!(phi.len(), p.useful_outputs());
        assert_eq!(phi, full.rows(0, p.useful_outputs()).into_owned());
    }

    #[test]
    fn exact_start_needs_no_iterations() {
        let p = pa(2, 3, 4, 1);
        let inst = sample_instance(&p, false, 3, 0).unwrap();
        let r = recover(&inst.y, &inst.x_p, &p, &inst.z, inst.truth.clone(), &RecoverOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.residual, 0.0);
        assert!(r.success);
    }

    #[test]
    fn perturbed_start_recovers_truth() {
        let p = pa(2, 3, 4, 1);
        let (summary, results) = recovery_experiment(&p, 100, 7, false, 1e-2).unwrap();
        let good = results.iter().filter(|r| r.residual < 1e-9 && r.param_error.unwrap() < 1e-6).count();
        assert!(good >= 99, "{summary:?}");
        assert!(results.iter().all(|r| !r.success || r.residual <= SUCCESS_RESIDUAL));
    }

    #[test]
    fn constant_model_does_not_identify() {
        let p = pa(2, 3, 4, 1);
        let (summary, _) = recovery_experiment(&p, 20, 7, true, 1e-2).unwrap();
        assert_eq!(summary.recovered_rate, 0.0, "{summary:?}");
        assert!(summary.median_param_error > 1e-4);
    }

    #[test]
    fn scaling_ambiguity() {
        let d = Dims::new(2, 3, 4, 1, 2).unwrap();
        let p = PilotAssignment::build(&d).unwrap();
        let inst = sample_instance(&p, false, 4, 0).unwrap();
        let x = assemble_input(&inst.truth.x_d, &inst.x_p, &p).unwrap();
        let s = &inst.truth.s;
        let ones = [C64::new(1.0, 0.0); 2];
        assert!(scaling_ambiguity_check(s, &x, &inst.z, &d, &ones).unwrap());
        let c = [C64::new(0.3, -1.2), C64::new(-2.0, 0.5)];
        assert!(scaling_ambiguity_check(s, &x, &inst.z, &d, &c).unwrap());
        // Scaling only x changes the output.
        let mut x2 = x.clone();
        x2.rows_mut(0, 4).scale_mut_c(c[0]);
        let y = noiseless_output(&inst.z, s, &x, &d).unwrap();
        let y2 = noiseless_output(&inst.z, s, &x2, &d).unwrap();
        assert!((y2 - &y).norm() > 1e-3 * y.norm());
        assert!(scaling_ambiguity_check(s, &x, &inst.z, &d, &[C64::new(0.0, 0.0), ones[0]]).is_err());
    }

    #[test]
    fn rank_gap() {
        let d = Dims::new(2, 3, 4, 1, 2).unwrap();
        for seed in 0..100 {
            assert_eq!(rank_gap_demo(&d, seed).unwrap(), (2, 3));
        }
        assert_eq!(rank_gap_demo(&Dims::new(1, 1, 3, 1, 1).unwrap(), 0).unwrap(), (1, 1));
    }

    #[test]
    fn multiplicity_within_bound() {
        let p = pa(1, 1, 3, 1);
        let inst = sample_instance(&p, false, 5, 0).unwrap();
        let rep = count_distinct_solutions(&inst, &p, 40, 9).unwrap();
        assert!(rep.converged > 0);
        assert!((rep.distinct as u128) <= rep.bezout_bound.parse::<u128>().unwrap());
    }

    #[test]
    fn dropping_a_pilot_leaves_a_null_space() {
        for (t, r, n, q) in [(2, 3, 4, 1), (1, 1, 3, 1), (2, 3, 5, 1), (2, 2, 5, 2)] {
            let p = pa(t, r, n, q);
            let (cols, rank) = dropped_pilot_rank(&p, 1).unwrap();
            assert_eq!(cols, p.unknowns() + 1);
            assert!(rank < cols);
        }
    }

    #[test]
    fn well_conditioned_truth_recovers() {
        let p = pa(2, 2, 5, 1);
        for k in 0..20 {
            let inst = sample_instance(&p, false, 11, k).unwrap();
            if conditioning_at_truth(&inst, &p).unwrap() > 1e-8 {
                let init = perturb(&inst.truth, 1e-3, 11, k);
                let r = recover(&inst.y, &inst.x_p, &p, &inst.z, init, &RecoverOptions::default()).unwrap();
                assert!(r.success);
            }
        }
    }

    #[test]
    fn shape_checks() {
        let p = pa(2, 3, 4, 1);
        assert!(assemble_input(&CVector::zeros(5), &CVector::zeros(2), &p).is_err());
        let inst = sample_instance(&p, false, 1, 0).unwrap();
        let bad = Unknowns { s: CVector::zeros(5), x_d: CVector::zeros(6) };
        assert!(recover(&inst.y, &inst.x_p, &p, &inst.z, bad, &RecoverOptions::default()).is_err());
    }
}
