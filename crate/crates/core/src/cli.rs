//! The `blockfade` command line.
//!
//! Exit codes: 0 success, 1 a checked property failed, 2 usage error,
//! 3 dimensions outside the regime the construction needs.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::analysis::{entropy_chain_report, mc_logdet};
use crate::dof::{self, figure1_curves, write_figure1_csv, DofReport};
use crate::identify::recovery_experiment;
use crate::jacobian::{
    assemble_jacobian, exact_witness_determinant, genericity_probe, witness_construct, witness_sweep, ProbeSource,
    WitnessFill,
};
use crate::linalg::NONSINGULAR_REL_TOL;
use crate::model::{ColoringMatrix, Dims};
use crate::pilots::{beta, regime_grid, PilotAssignment};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_REGIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "blockfade", version, about = "Degrees of freedom of generic block-fading MIMO channels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Sizes as `T,R,N,Q` plus an optional number of active transmit antennas.
#[derive(Args, Debug, Clone)]
pub struct DimsArg {
    /// Transmit, receive, block length and coloring rank, e.g. `2,3,4,1`.
    #[arg(long, value_parser = parse_tuple)]
    pub dims: [usize; 4],
    /// Active transmit antennas; defaults to the largest value that keeps the
    /// pilot construction applicable, else `min(T, R)`.
    #[arg(long)]
    pub teff: Option<usize>,
}

impl DimsArg {
    fn resolve(&self) -> Result<Dims> {
        let [t, r, n, q] = self.dims;
        match self.teff {
            Some(te) => Dims::new(t, r, n, q, te),
            None => Dims::with_default_teff(t, r, n, q),
        }
    }
}

fn parse_tuple(s: &str) -> std::result::Result<[usize; 4], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts.try_into().map_err(|v: Vec<usize>| format!("expected T,R,N,Q, got {} values", v.len()))
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact pre-log values for one configuration (JSON).
    Dof {
        #[command(flatten)]
        dims: DimsArg,
    },
    /// Ratio of best generic to best constant-model pre-log versus N (CSV).
    Figure1 {
        #[arg(long, default_value_t = 2)]
        nmin: u64,
        #[arg(long)]
        nmax: u64,
        /// Antenna cap for the constrained columns; left empty without it.
        #[arg(long)]
        cap: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Card-dealing table, pilot sets and property checks.
    Pilots {
        #[command(flatten)]
        dims: DimsArg,
        /// Print the assignment and checks as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Build the nonsingularity witness and report its Jacobian.
    JacobianWitness {
        #[command(flatten)]
        dims: DimsArg,
        /// Use the integer fill and certify the determinant exactly.
        #[arg(long)]
        exact: bool,
        /// Seed for the unitary fill.
        #[arg(long, required_unless_present = "exact")]
        seed: Option<u64>,
        /// Write the Jacobian as JSON to this file.
        #[arg(long)]
        matrix_out: Option<PathBuf>,
    },
    /// Nonsingularity of the Jacobian at random points.
    Genericity {
        #[command(flatten)]
        dims: DimsArg,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        constant_model: bool,
    },
    /// Truth-perturbed recovery of fading and data symbols.
    Identify {
        #[command(flatten)]
        dims: DimsArg,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        constant_model: bool,
        /// Relative distance of the starting point from the truth.
        #[arg(long, default_value_t = 1e-2)]
        perturbation: f64,
    },
    /// Monte-Carlo estimate of E[log|det J|^2].
    McLogdet {
        #[command(flatten)]
        dims: DimsArg,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        constant_model: bool,
    },
    /// Run the combinatorial, exact and witness checks over a grid.
    VerifyAll {
        /// Largest block length for the combinatorial and exact checks.
        #[arg(long, default_value_t = 10)]
        nmax: usize,
        /// Largest block length for the witness checks.
        #[arg(long, default_value_t = 8)]
        witness_nmax: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `args` (including the program name) and runs the command, writing
/// results to `out`. Returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 { write!(out, "{e}") } else { write!(std::io::stderr(), "{e}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(Error::Regime(msg)) => {
            eprintln!("error: configuration outside the supported regime: {msg}");
            EXIT_REGIME
        }
        Err(e @ Error::InvalidConfiguration(_)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_PROPERTY
        }
    }
}

fn line(out: &mut dyn Write, v: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer(&mut *out, v)?;
    writeln!(out)?;
    Ok(())
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Dof { dims } => {
            line(out, &DofReport::new(&dims.resolve()?))?;
            Ok(EXIT_OK)
        }
        Command::Figure1 { nmin, nmax, cap, out: path } => {
            let rows = figure1_curves(nmin..=nmax, cap);
            match path {
                Some(p) => write_figure1_csv(&rows, BufWriter::new(File::create(p)?))?,
                None => write_figure1_csv(&rows, &mut *out)?,
            }
            Ok(EXIT_OK)
        }
        Command::Pilots { dims, json } => {
            let pa = PilotAssignment::build(&dims.resolve()?)?;
            let report = pa.verify();
            if json {
                line(out, &json!({ "assignment": pa, "checks": report }))?;
            } else {
                write!(out, "{}", pa.card_table())?;
                for c in &report.checks {
                    writeln!(out, "{} {}", if c.passed { "ok  " } else { "FAIL" }, c.name)?;
                    if let Some(d) = &c.detail {
                        writeln!(out, "     {d}")?;
                    }
                }
            }
            Ok(if report.all_passed() { EXIT_OK } else { EXIT_PROPERTY })
        }
        Command::JacobianWitness { dims, exact, seed, matrix_out } => {
            let pa = PilotAssignment::build(&dims.resolve()?)?;
            let fill = if exact { WitnessFill::Integer } else { WitnessFill::Unitary { seed: seed.unwrap_or(0) } };
            let w = witness_construct(&pa, fill)?;
            let j = assemble_jacobian(&w.z, &w.s, &w.x, &pa)?;
            let mut ok = j.is_nonsingular();
            let mut report = json!({
                "dims": pa.dims,
                "size": j.matrix.nrows(),
                "sigma_min": j.sigma_min,
                "sigma_max": j.sigma_max,
                "relative_sigma_min": j.relative_sigma_min(),
                "det_abs": j.det_abs,
                "nonsingular": ok,
                "bezout_bound": j.bezout_bound.to_string(),
                "pattern": j.sparsity_pattern(),
            });
            if exact {
                let det = exact_witness_determinant(&pa)?;
                ok &= !det.is_zero();
                report["exact_det"] = json!({ "re": det.re.to_string(), "im": det.im.to_string() });
            }
            if let Some(p) = matrix_out {
                let mut f = BufWriter::new(File::create(p)?);
                serde_json::to_writer(&mut f, &j.to_json())?;
                f.flush()?;
            }
            line(out, &report)?;
            Ok(if ok { EXIT_OK } else { EXIT_PROPERTY })
        }
        Command::Genericity { dims, trials, seed, constant_model } => {
            let pa = PilotAssignment::build(&dims.resolve()?)?;
            let source = if constant_model { ProbeSource::ConstantModel } else { ProbeSource::Gaussian };
            let stats = genericity_probe(&pa, trials, seed, source)?;
            line(out, &json!({ "dims": pa.dims, "source": source, "stats": stats }))?;
            Ok(EXIT_OK)
        }
        Command::Identify { dims, trials, seed, constant_model, perturbation } => {
            let pa = PilotAssignment::build(&dims.resolve()?)?;
            let (summary, _) = recovery_experiment(&pa, trials, seed, constant_model, perturbation)?;
            line(out, &summary)?;
            Ok(EXIT_OK)
        }
        Command::McLogdet { dims, samples, seed, constant_model } => {
            let d = dims.resolve()?;
            let pa = PilotAssignment::build(&d)?;
            let z = if constant_model { ColoringMatrix::constant_model(&d)? } else { ColoringMatrix::gaussian(&d, seed) };
            let est = mc_logdet(&z, &pa, samples, seed)?;
            line(out, &json!({ "dims": d, "estimate": est, "chain": entropy_chain_report(&d) }))?;
            Ok(EXIT_OK)
        }
        Command::VerifyAll { nmax, witness_nmax, seed } => verify_all(nmax, witness_nmax, seed, out),
    }
}

struct Tally<'a> {
    out: &'a mut dyn Write,
    failed: bool,
}

impl Tally<'_> {
    fn record(&mut self, name: &str, checked: usize, failures: Vec<String>, started: Instant) -> Result<()> {
        let status = if failures.is_empty() { "PASS" } else { "FAIL" };
        writeln!(self.out, "{status} {name}: {checked} cases, {:.2}s", started.elapsed().as_secs_f64())?;
        for f in failures.iter().take(5) {
            writeln!(self.out, "     {f}")?;
        }
        self.failed |= !failures.is_empty();
        Ok(())
    }
}

fn verify_all(nmax: usize, witness_nmax: usize, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let mut tally = Tally { out, failed: false };

    let t0 = Instant::now();
    let mut fails = Vec::new();
    let mut count = 0;
    for te in 1..=nmax {
        for n in 1..=nmax {
            count += 1;
            let image: BTreeSet<_> = (1..=te * n).map(|j| beta(j, te, n)).collect();
            if image.len() != te * n {
                fails.push(format!("T_eff={te} N={n}"));
            }
        }
    }
    tally.record("card map is a bijection", count, fails, t0)?;

    let t0 = Instant::now();
    let grid = regime_grid(nmax, nmax);
    let fails: Vec<String> = grid
        .par_iter()
        .filter_map(|d| {
            let rep = PilotAssignment::build(d).map(|p| p.verify());
            match rep {
                Ok(r) if r.all_passed() => None,
                Ok(r) => Some(format!("{d:?}: {:?}", r.failures().map(|c| &c.name).collect::<Vec<_>>())),
                Err(e) => Some(format!("{d:?}: {e}")),
            }
        })
        .collect();
    tally.record("pilot set properties", grid.len(), fails, t0)?;

    let t0 = Instant::now();
    let n64 = nmax as u64;
    let cells: Vec<(u64, u64, u64, u64)> = (1..=n64)
        .flat_map(|n| (1..=n).flat_map(move |q| (1..=12).flat_map(move |t| (1..=12).map(move |r| (t, r, n, q)))))
        .collect();
    let fails: Vec<String> = cells
        .par_iter()
        .filter_map(|&(t, r, n, q)| {
            let star = dof::chi_low_star(t, r, n, q);
            let up = dof::chi_upper(t, n);
            let region = t * q < n && r * (n - t * q) >= t * (n - 1);
            let ok = star == dof::chi_low_star_brute(t, r, n, q) && star <= up && (n < 2 || (star == up) == region);
            (!ok).then(|| format!("T={t} R={r} N={n} Q={q}"))
        })
        .collect();
    tally.record("lower bound closed form and ordering", cells.len(), fails, t0)?;

    let t0 = Instant::now();
    let sweep = witness_sweep(witness_nmax, 2, seed)?;
    let fails: Vec<String> = sweep
        .iter()
        .filter(|(_, rel)| !(*rel > NONSINGULAR_REL_TOL))
        .map(|(d, rel)| format!("{d:?}: relative sigma_min {rel:e}"))
        .collect();
    tally.record("witness Jacobians are nonsingular", sweep.len(), fails, t0)?;

    Ok(if tally.failed { EXIT_PROPERTY } else { EXIT_OK })
}
