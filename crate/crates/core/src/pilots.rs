//! Pilot placement by card dealing.
//!
//! Cards `j = 1, 2, ...` are dealt to antennas by [`beta`]; card `j` goes to
//! antenna `beta(j).0` and marks time slot `beta(j).1` as a pilot. The first
//! `theta_R` cards are dealt. All indices in this module are 1-based; the
//! `*_positions` accessors on [`PilotAssignment`] return 0-based flat indices
//! for the other modules.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::dof;
use crate::model::Dims;
use crate::Result;

/// Residue of `a` modulo `b` in `[1:b]` (so `b` maps to `b`).
pub fn mod_star(a: usize, b: usize) -> usize {
    assert!(a >= 1 && b >= 1, "mod_star needs positive arguments");
    a - b * ((a - 1) / b)
}

/// Card `j` in `[1:T_eff N]` to `(antenna, slot)`.
pub fn beta(j: usize, t_eff: usize, n: usize) -> (usize, usize) {
    let l = t_eff.lcm(&n);
    (mod_star(j + (j - 1) / l, t_eff), mod_star(j, n))
}

/// `P_t = beta_2(beta_1^{-1}(t) ∩ [1:theta])`, each sorted.
pub fn pilot_sets(t_eff: usize, n: usize, theta: usize) -> Vec<Vec<usize>> {
    let mut sets = vec![BTreeSet::new(); t_eff];
    for j in 1..=theta {
        let (t, i) = beta(j, t_eff, n);
        sets[t - 1].insert(i);
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Number of `j` in `[p+1:q]` with `(j + a) mod* b = c`.
pub fn residue_count(p: usize, q: usize, a: usize, b: usize, c: usize) -> usize {
    (p + 1..=q).filter(|&j| mod_star(j + a, b) == c).count()
}

/// Index sets used by the step from `R - 1` to `R` receive antennas.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InductiveSets {
    /// Pilot total with one receive antenna fewer.
    pub theta_prev: usize,
    pub p_tilde_t: Vec<Vec<usize>>,
    /// Pilots present with `R - 1` antennas but dropped with `R`.
    pub l_t: Vec<Vec<usize>>,
    pub l: Vec<usize>,
    /// `[1:N - ell] \ l`.
    pub g: Vec<usize>,
    /// The witness slot of each antenna, `g_witness[t-1] ∈ P_t ∩ G_t`.
    pub g_witness: Vec<usize>,
    pub g_t: Vec<Vec<usize>>,
}

/// Pilot and data positions for one configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotAssignment {
    pub dims: Dims,
    pub theta_r: usize,
    pub ell: usize,
    pub p_t: Vec<Vec<usize>>,
    pub d_t: Vec<Vec<usize>>,
    /// Flat pilot positions `i + (t-1) N` in `[1:T_eff N]`.
    pub p: Vec<usize>,
    pub d: Vec<usize>,
    /// Useful outputs `[1:RN - ell]`.
    pub i: Vec<usize>,
    /// Discarded outputs.
    pub j: Vec<usize>,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub inductive: Option<InductiveSets>,
}

fn flatten(sets: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = sets
        .iter()
        .enumerate()
        .flat_map(|(t, s)| s.iter().map(move |&i| i + t * n))
        .collect();
    out.sort_unstable();
    out
}

impl PilotAssignment {
    /// The card-dealing construction. Requires the proof regime.
    pub fn build(dims: &Dims) -> Result<Self> {
        dims.require_proof_regime()?;
        Ok(Self::construct(dims))
    }

    fn construct(dims: &Dims) -> Self {
        let (te, r, n, q) = (dims.t_eff, dims.r, dims.n, dims.q);
        let theta_r = dof::theta(te as u64, r as u64, n as u64, q as u64) as usize;
        let ell = dof::ell(te as u64, r as u64, n as u64, q as u64) as usize;
        let p_t = pilot_sets(te, n, theta_r);
        let d_t: Vec<Vec<usize>> = p_t
            .iter()
            .map(|pt| (1..=n).filter(|i| pt.binary_search(i).is_err()).collect())
            .collect();
        let p = flatten(&p_t, n);
        let d = flatten(&d_t, n);
        let i = (1..=r * n - ell).collect();
        let j = (r * n - ell + 1..=r * n).collect();
        let inductive = (r > te).then(|| inductive_sets(dims, theta_r, ell, &p_t));
        Self { dims: *dims, theta_r, ell, p_t, d_t, p, d, i, j, inductive }
    }

    /// Side of the square recovery system, `R T_eff Q + |D|`.
    pub fn unknowns(&self) -> usize {
        self.dims.fading_len() + self.d.len()
    }

    /// `RN - ell`.
    pub fn useful_outputs(&self) -> usize {
        self.i.len()
    }

    /// 0-based positions of the data symbols in the stacked input vector.
    pub fn data_positions(&self) -> Vec<usize> {
        self.d.iter().map(|&k| k - 1).collect()
    }

    /// 0-based positions of the pilot symbols in the stacked input vector.
    pub fn pilot_positions(&self) -> Vec<usize> {
        self.p.iter().map(|&k| k - 1).collect()
    }

    /// Lemma-style property checks on the stored sets.
    pub fn verify(&self) -> PropertyReport {
        verify_assignment(self)
    }

    /// Fig.-3-style table of the dealt cards.
    pub fn card_table(&self) -> String {
        card_table(self.dims.t_eff, self.dims.n, self.theta_r)
    }
}

fn inductive_sets(dims: &Dims, theta_r: usize, ell: usize, p_t: &[Vec<usize>]) -> InductiveSets {
    let (te, r, n, q) = (dims.t_eff, dims.r, dims.n, dims.q);
    let theta_prev = dof::theta(te as u64, r as u64 - 1, n as u64, q as u64) as usize;
    let p_tilde_t = pilot_sets(te, n, theta_prev);
    let l_t: Vec<Vec<usize>> = p_tilde_t
        .iter()
        .zip(p_t)
        .map(|(pt, p)| pt.iter().copied().filter(|i| p.binary_search(i).is_err()).collect())
        .collect();
    let l: BTreeSet<usize> = l_t.iter().flatten().copied().collect();
    let g: Vec<usize> = (1..=n.saturating_sub(ell)).filter(|i| !l.contains(i)).collect();

    // Witness slots come from the last T_eff cards dealt; when a multiple of
    // lcm(T_eff, N) splits that window, cards past it are shifted back one period.
    let period = te.lcm(&n);
    let lo = theta_r + 1 - te;
    let split = (1..=theta_r / period)
        .map(|k| k * period)
        .find(|&m| m >= lo && m + 1 <= theta_r);
    let mut g_witness = vec![0usize; te];
    for j in lo..=theta_r {
        let jj = match split {
            Some(m) if j > m => j - period,
            _ => j,
        };
        let (t, i) = beta(jj, te, n);
        g_witness[t - 1] = i;
    }

    let witnesses: BTreeSet<usize> = g_witness.iter().copied().collect();
    let mut fillers = g.iter().copied().filter(|i| !witnesses.contains(i));
    let g_t = g_witness
        .iter()
        .map(|&w| {
            let mut set: Vec<usize> = std::iter::once(w).chain(fillers.by_ref().take(q - 1)).collect();
            set.sort_unstable();
            set
        })
        .collect();

    InductiveSets { theta_prev, p_tilde_t, l_t, l: l.into_iter().collect(), g, g_witness, g_t }
}

/// Outcome of one named property.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    /// Counterexample when the check failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
}

impl PropertyReport {
    pub fn push(&mut self, name: &str, failure: Option<String>) {
        self.checks.push(PropertyCheck { name: name.to_string(), passed: failure.is_none(), detail: failure });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Builds the assignment for `dims` and checks it.
pub fn verify_lemma5(dims: &Dims) -> Result<PropertyReport> {
    Ok(PilotAssignment::build(dims)?.verify())
}

fn first_overlap(sets: &[Vec<usize>]) -> Option<String> {
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            if let Some(x) = sets[a].iter().find(|x| sets[b].contains(x)) {
                return Some(format!("sets {} and {} share {x}", a + 1, b + 1));
            }
        }
    }
    None
}

fn verify_assignment(pa: &PilotAssignment) -> PropertyReport {
    let d = &pa.dims;
    let (te, r, n, q) = (d.t_eff, d.r, d.n, d.q);
    let mut rep = PropertyReport::default();
    let theta = dof::theta(te as u64, r as u64, n as u64, q as u64) as usize;
    let ell = dof::ell(te as u64, r as u64, n as u64, q as u64) as usize;

    let total: usize = pa.p_t.iter().map(Vec::len).sum();
    rep.push(
        "pilot total equals theta_R",
        (total != theta).then(|| format!("sum |P_t| = {total}, theta_R = {theta}")),
    );
    rep.push(
        "each antenna has at most T_eff*Q pilots",
        pa.p_t
            .iter()
            .position(|p| p.len() > te * q)
            .map(|t| format!("|P_{}| = {} > {}", t + 1, pa.p_t[t].len(), te * q)),
    );
    rep.push(
        "pilot slots lie in [1:N]",
        pa.p_t
            .iter()
            .flatten()
            .find(|&&i| i == 0 || i > n)
            .map(|i| format!("slot {i} outside [1:{n}]")),
    );
    let flat = flatten(&pa.p_t, n);
    rep.push("flat pilot set matches per-antenna sets", (flat != pa.p).then(|| format!("P = {:?}, expected {flat:?}", pa.p)));
    rep.push(
        "useful outputs count R*T_eff*Q + |D|",
        (pa.i.len() != d.fading_len() + pa.d.len() || pa.i.len() != r * n - ell)
            .then(|| format!("|I| = {}, R*T_eff*Q + |D| = {}", pa.i.len(), d.fading_len() + pa.d.len())),
    );

    if let Some(ind) = &pa.inductive {
        let gap = ind.theta_prev as i64 - theta as i64;
        let want = n as i64 - (te * q) as i64 - ell as i64;
        rep.push(
            "pilot difference equals N - T_eff*Q - ell",
            (gap != want).then(|| format!("theta_(R-1) - theta_R = {gap}, expected {want}")),
        );
        rep.push("dropped pilots are disjoint", first_overlap(&ind.l_t));
        rep.push(
            "dropped pilots lie in [1:N-ell]",
            ind.l_t.iter().flatten().find(|&&i| i > n - ell).map(|i| format!("slot {i} > N - ell = {}", n - ell)),
        );
        rep.push(
            "witness groups have size Q",
            ind.g_t
                .iter()
                .position(|g| g.len() != q)
                .map(|t| format!("|G_{}| = {}", t + 1, ind.g_t[t].len())),
        );
        rep.push("witness groups are disjoint", first_overlap(&ind.g_t));
        rep.push(
            "witness groups meet their pilot sets",
            (0..te)
                .find(|&t| !ind.g_t[t].iter().any(|i| pa.p_t[t].contains(i)))
                .map(|t| format!("G_{} = {:?} misses P_{} = {:?}", t + 1, ind.g_t[t], t + 1, pa.p_t[t])),
        );
        let union: BTreeSet<usize> = ind.g_t.iter().flatten().copied().collect();
        let expect: BTreeSet<usize> = (1..=n - ell).filter(|i| !ind.l.contains(i)).collect();
        rep.push(
            "witness groups cover [1:N-ell] minus dropped pilots",
            (union != expect).then(|| format!("union {union:?}, expected {expect:?}")),
        );
    }
    rep
}

/// One line per card, then the resulting pilot sets.
pub fn card_table(t_eff: usize, n: usize, theta: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>6} {:>8} {:>6}", "card", "antenna", "slot");
    for j in 1..=theta {
        let (t, i) = beta(j, t_eff, n);
        let _ = writeln!(out, "{j:>6} {t:>8} {i:>6}");
    }
    for (t, set) in pilot_sets(t_eff, n, theta).iter().enumerate() {
        let _ = writeln!(out, "P_{} = {:?}", t + 1, set);
    }
    out
}

/// Every regime-valid configuration with `N <= n_max` and `Q <= q_max`, with `T = T_eff`.
pub fn regime_grid(n_max: usize, q_max: usize) -> Vec<Dims> {
    let mut out = Vec::new();
    for n in 2..=n_max {
        for q in 1..=q_max.min(n) {
            for te in 1..=n {
                if te * q >= n {
                    break;
                }
                let cap = (te * (n - 1)).div_ceil(n - te * q);
                for r in te..=cap {
                    out.push(Dims { t: te, r, n, q, t_eff: te });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use proptest::prelude::*;

    fn dims(t: usize, r: usize, n: usize, q: usize) -> Dims {
        Dims::new(t, r, n, q, t.min(r)).unwrap()
    }

    #[test]
    fn mod_star_examples() {
        assert_eq!(mod_star(6, 3), 3);
        assert_eq!(mod_star(7, 3), 1);
        assert_eq!(mod_star(14, 4), 2);
        assert_eq!(mod_star(1, 1), 1);
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta(13, 4, 6), (2, 1));
        assert_eq!(beta(1, 5, 7), (1, 1));
    }

    #[test]
    fn beta_small_image() {
        let image: BTreeSet<_> = (1..=6).map(|j| beta(j, 2, 3)).collect();
        assert_eq!(image.len(), 6);
        for t in 1..=2 {
            for i in 1..=3 {
                assert!(image.contains(&(t, i)));
            }
        }
    }

    #[test]
    fn beta_is_bijective() {
        for te in 1..=16 {
            for n in 1..=16 {
                let image: BTreeSet<_> = (1..=te * n).map(|j| beta(j, te, n)).collect();
                assert_eq!(image.len(), te * n);
                assert!(image.iter().all(|&(t, i)| (1..=te).contains(&t) && (1..=n).contains(&i)));
            }
        }
    }

    #[test]
    fn card_dealing_figure() {
        let pa = PilotAssignment::build(&dims(4, 5, 6, 1)).unwrap();
        assert_eq!(pa.theta_r, 14);
        assert_eq!(pa.p_t, vec![vec![1, 3, 5], vec![1, 2, 4, 6], vec![1, 2, 3, 5], vec![2, 4, 6]]);
        assert!(pa.verify().all_passed());
        let table = pa.card_table();
        assert!(table.contains("P_2 = [1, 2, 4, 6]"));
        assert_eq!(table.lines().count(), 1 + 14 + 4);
    }

    #[test]
    fn worked_example_sets() {
        let pa = PilotAssignment::build(&dims(2, 3, 4, 1)).unwrap();
        assert_eq!(pa.theta_r, 2);
        assert_eq!(pa.p_t, vec![vec![1], vec![2]]);
        assert_eq!(pa.p, vec![1, 6]);
        assert_eq!(pa.d, vec![2, 3, 4, 5, 7, 8]);
        assert_eq!(pa.i, (1..=12).collect::<Vec<_>>());
        assert!(pa.j.is_empty());
        let ind = pa.inductive.as_ref().unwrap();
        assert_eq!(ind.theta_prev, 4);
        assert_eq!(ind.p_tilde_t, vec![vec![1, 3], vec![2, 4]]);
        assert_eq!(ind.l_t, vec![vec![3], vec![4]]);
        assert_eq!(ind.g, vec![1, 2]);
        assert_eq!(ind.g_witness, vec![1, 2]);
        assert_eq!(ind.g_t, vec![vec![1], vec![2]]);
        assert_eq!(pa.unknowns(), 12);
        assert_eq!(pa.data_positions(), vec![1, 2, 3, 4, 6, 7]);
    }

    #[test]
    fn base_case_fills_every_antenna() {
        for n in 2..=10 {
            for q in 1..n {
                for te in 1..=(n - 1) / q {
                    let pa = PilotAssignment::build(&dims(te, te, n, q)).unwrap();
                    assert!(pa.p_t.iter().all(|p| p.len() == te * q));
                    assert!(pa.inductive.is_none());
                }
            }
        }
    }

    #[test]
    fn out_of_regime_is_rejected() {
        assert!(matches!(PilotAssignment::build(&dims(2, 4, 4, 1)), Err(Error::Regime(_))));
        assert!(matches!(PilotAssignment::build(&dims(2, 2, 4, 2)), Err(Error::Regime(_))));
    }

    #[test]
    fn exhaustive_properties() {
        let grid = regime_grid(12, 12);
        assert!(grid.len() > 500);
        for d in grid {
            let rep = verify_lemma5(&d).unwrap();
            assert!(rep.all_passed(), "{d:?}: {:?}", rep.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn corrupted_sets_are_caught() {
        let mut pa = PilotAssignment::build(&dims(2, 2, 5, 2)).unwrap();
        let moved = pa.p_t[0].pop().unwrap();
        pa.p_t[1].push(moved);
        let rep = pa.verify();
        assert!(!rep.all_passed());
        let names: Vec<_> = rep.failures().map(|c| c.name.clone()).collect();
        assert!(names.iter().any(|n| n.contains("at most")), "{names:?}");

        let mut pa = PilotAssignment::build(&dims(2, 3, 4, 1)).unwrap();
        pa.p_t[0].clear();
        assert!(rep_fails(&pa, "pilot total"));
    }

    fn rep_fails(pa: &PilotAssignment, prefix: &str) -> bool {
        pa.verify().failures().any(|c| c.name.starts_with(prefix))
    }

    #[test]
    fn json_uses_sorted_arrays() {
        let pa = PilotAssignment::build(&dims(2, 3, 4, 1)).unwrap();
        let v = serde_json::to_value(&pa).unwrap();
        assert_eq!(v["p"], serde_json::json!([1, 6]));
        assert_eq!(v["g_witness"], serde_json::json!([1, 2]));
        let back: PilotAssignment = serde_json::from_value(v).unwrap();
        assert_eq!(back, pa);
        let base = PilotAssignment::build(&dims(2, 2, 4, 1)).unwrap();
        let v = serde_json::to_value(&base).unwrap();
        assert!(v.get("l_t").is_none());
    }

    proptest! {
        #[test]
        fn residue_count_bound(p in 0usize..60, len in 0usize..60, a in 0usize..30, b in 2usize..12, c0 in 0usize..12) {
            let c = c0 % b + 1;
            let q = p + len;
            prop_assert!(residue_count(p, q, a, b, c) <= len.div_ceil(b));
        }

        #[test]
        fn antenna_classes_partition_cards(te in 1usize..12, n in 1usize..12) {
            let mut seen = vec![0usize; te * n + 1];
            for t in 1..=te {
                for j in (1..=te * n).filter(|&j| beta(j, te, n).0 == t) {
                    seen[j] += 1;
                }
            }
            prop_assert!(seen[1..].iter().all(|&c| c == 1));
        }

        #[test]
        fn slot_map_injective_on_windows(te in 1usize..10, n in 1usize..12, start in 1usize..100, w in 1usize..12) {
            let w = w.min(n);
            let end = (start + w - 1).min(te * n);
            prop_assume!(start <= end);
            let slots: BTreeSet<_> = (start..=end).map(|j| beta(j, te, n).1).collect();
            prop_assert_eq!(slots.len(), end - start + 1);
        }
    }
}
