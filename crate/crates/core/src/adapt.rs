//! The adaptive enrichment loop: solve, indicate, mark, enrich.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::coarse::{
    build_offline_space, energy_norm, galerkin_defect, relative_errors, solve_coarse, solve_snapshot,
    AffineLift, CoarseBasis, CoarseSolution, FineProblem, OfflineSpace, RelativeErrors,
};
use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::grid::StructuredGrids;
use crate::indicator::{l2_residual, IndicatorContext, IndicatorKind, IndicatorReport, QFormula};
use crate::localspaces::{build_all_spaces, build_pou, NeighborhoodSpace, PartitionOfUnity, SnapshotKind};

/// When the loop stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    /// `||u - u_off||_V <= (1 + p) ||u - u_snap||_V`.
    ExactFraction(f64),
    /// `||u - u_off||_V <= p ||u - u_snap||_V`, read literally; only reachable when `u_snap = u`.
    Literal(f64),
    /// `sum eta^2 <= eps * (sum eta^2 at iteration 0)`.
    IndicatorTol(f64),
    /// Relative energy error against `u` at most this many percent.
    RelativeError(f64),
    /// `dim(V_off) >= n`.
    MaxDim(usize),
    /// Only the iteration limit.
    MaxIter,
}

impl Default for Termination {
    fn default() -> Self {
        Termination::ExactFraction(0.05)
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::ExactFraction(p) => write!(f, "exact:{p}"),
            Termination::Literal(p) => write!(f, "literal:{p}"),
            Termination::IndicatorTol(e) => write!(f, "tol:{e}"),
            Termination::RelativeError(p) => write!(f, "error:{p}"),
            Termination::MaxDim(n) => write!(f, "max-dim:{n}"),
            Termination::MaxIter => f.write_str("max-iter"),
        }
    }
}

impl FromStr for Termination {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "max-iter" {
            return Ok(Termination::MaxIter);
        }
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| format!("expected exact:P, literal:P, tol:EPS, error:PCT, max-dim:N or max-iter, got `{s}`"))?;
        let float = || value.parse::<f64>().map_err(|e| format!("bad number `{value}`: {e}"));
        let rule = match kind {
            "exact" => Termination::ExactFraction(float()?),
            "literal" => Termination::Literal(float()?),
            "tol" => Termination::IndicatorTol(float()?),
            "error" => Termination::RelativeError(float()?),
            "max-dim" => Termination::MaxDim(value.parse().map_err(|e| format!("bad count `{value}`: {e}"))?),
            _ => return Err(format!("unknown termination rule `{kind}`")),
        };
        Ok(rule)
    }
}

/// How many eigenfunctions a marked region receives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Increment {
    Fixed(usize),
    /// Smallest `s >= s_min` reaching `lambda_{l+s+1} / lambda_{l+1} >= ratio`.
    Gap { s_min: usize, ratio: f64 },
}

impl Default for Increment {
    fn default() -> Self {
        Increment::Fixed(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub theta: f64,
    pub indicator: IndicatorKind,
    pub snapshots: SnapshotKind,
    pub initial_count: usize,
    pub increment: Increment,
    pub termination: Termination,
    pub max_iter: usize,
    pub q_formula: QFormula,
    /// Record wall-clock seconds; off gives bit-identical histories across runs.
    pub timing: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            theta: 0.7,
            indicator: IndicatorKind::H1w,
            snapshots: SnapshotKind::Harmonic,
            initial_count: SnapshotKind::Harmonic.default_initial_count(),
            increment: Increment::default(),
            termination: Termination::default(),
            max_iter: 200,
            q_formula: QFormula::default(),
            timing: true,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::config("theta", format!("{} is outside (0, 1)", self.theta)));
        }
        if self.initial_count == 0 {
            return Err(Error::config("init_basis", "must be at least 1"));
        }
        match self.increment {
            Increment::Fixed(0) | Increment::Gap { s_min: 0, .. } => {
                return Err(Error::config("s", "must be at least 1"));
            }
            Increment::Gap { ratio, .. } if !(ratio >= 1.0) => {
                return Err(Error::config("gap_ratio", format!("{ratio} is below 1")));
            }
            _ => {}
        }
        match self.termination {
            Termination::ExactFraction(p) | Termination::Literal(p) if !(p > 0.0 && p < 1.0) => {
                Err(Error::config("terminate", format!("fraction {p} is outside (0, 1)")))
            }
            Termination::IndicatorTol(e) | Termination::RelativeError(e) if !(e >= 0.0) => {
                Err(Error::config("terminate", format!("tolerance {e} is negative")))
            }
            _ => Ok(()),
        }
    }
}

/// Everything that does not depend on the active counts, built once and
/// shared between runs on the same field.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grids: StructuredGrids,
    pub field: CoefficientField,
    pub pou: PartitionOfUnity,
    pub snapshots: SnapshotKind,
    pub spaces: Vec<NeighborhoodSpace>,
    pub problem: FineProblem,
    pub basis: CoarseBasis,
    pub indicators: IndicatorContext,
    pub u: Vec<f64>,
    pub snapshot_solution: CoarseSolution,
    /// `||u - u_snap||_V`.
    pub snapshot_error: f64,
}

impl Setup {
    /// `field` needs only `kappa`; the weight is computed here.
    pub fn new(
        grids: StructuredGrids,
        mut field: CoefficientField,
        snapshots: SnapshotKind,
        f: f64,
        lift: AffineLift,
    ) -> Result<Self> {
        let pou = build_pou(&grids, &field)?;
        field.compute_kappa_tilde(&grids, &pou)?;
        let spaces = build_all_spaces(&grids, &field, snapshots, 1)?;
        let problem = FineProblem::new(&grids, &field, f, lift)?;
        let basis = CoarseBasis::new(&grids, &field, &pou, &spaces, &problem)?;
        let indicators = IndicatorContext::new(&grids, &field, &pou, &spaces, true)?;
        let u = problem.solve_fine()?;
        let snapshot_solution = solve_snapshot(&basis)?;
        let snapshot_error = energy_norm(&problem.stiffness, &diff(&u, &snapshot_solution.u_off));
        Ok(Setup {
            grids,
            field,
            pou,
            snapshots,
            spaces,
            problem,
            basis,
            indicators,
            u,
            snapshot_solution,
            snapshot_error,
        })
    }

    pub fn max_counts(&self) -> Vec<usize> {
        self.basis.max_counts()
    }

    /// Snapshot-space dimension `sum_i W_i`.
    pub fn snapshot_dim(&self) -> usize {
        self.max_counts().iter().sum()
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub dim: usize,
    pub errors: RelativeErrors,
    /// `||u - u_off||_V`.
    pub energy_error: f64,
    pub sum_eta2: f64,
    /// Regions enriched after this iteration; zero on the last one.
    pub marked: usize,
    pub counts: Vec<usize>,
    /// `||u - u_off||^2` over each neighborhood.
    pub local_error: Vec<f64>,
    /// `||R_0 (F - A u_off)||_inf / ||F||_inf`.
    pub galerkin_defect: f64,
    /// Squared energy error over that of the previous iteration.
    pub contraction: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    /// No unsaturated region carries a positive indicator.
    Exhausted,
    MaxIter,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::Exhausted => "exhausted",
            StopReason::MaxIter => "max-iter",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceHistory {
    pub indicator: IndicatorKind,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    pub snapshot_error: f64,
}

impl ConvergenceHistory {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("history has at least one record")
    }

    /// Number of enrichment steps taken.
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }
}

/// Bulk marking: the smallest prefix of unsaturated regions, sorted by
/// decreasing indicator, whose sum reaches `theta` times their total.
pub fn mark(report: &IndicatorReport, theta: f64) -> Vec<usize> {
    let mut live: Vec<usize> = (0..report.len()).filter(|&i| !report.saturated[i]).collect();
    let total: f64 = live.iter().map(|&i| report.values[i]).sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    live.sort_by(|&a, &b| report.values[b].total_cmp(&report.values[a]).then(a.cmp(&b)));
    let target = theta * total;
    let mut sum = 0.0;
    for (k, &i) in live.iter().enumerate() {
        sum += report.values[i];
        if sum >= target {
            live.truncate(k + 1);
            break;
        }
    }
    live
}

struct Evaluation {
    record: IterationRecord,
    report: IndicatorReport,
}

fn evaluate(
    setup: &Setup,
    config: &AdaptConfig,
    spaces: &[NeighborhoodSpace],
    iteration: usize,
    previous: Option<f64>,
    started: Instant,
) -> Result<Evaluation> {
    let space: OfflineSpace = build_offline_space(spaces);
    let sol = solve_coarse(&setup.basis, &space)?;
    let problem = &setup.problem;
    let error = diff(&setup.u, &sol.u_off);
    let energy_error = energy_norm(&problem.stiffness, &error);
    let residual = match config.indicator {
        IndicatorKind::L2 => l2_residual(config.q_formula, &problem.load, &problem.stiffness, &sol.u_off),
        _ => problem.residual(&sol.u_off),
    };
    let report = setup.indicators.evaluate(config.indicator, spaces, &residual, Some(&error))?;
    let errors = relative_errors(problem, &setup.u, &setup.snapshot_solution.u_off, &sol.u_off);
    let record = IterationRecord {
        iteration,
        dim: space.dim(),
        errors,
        energy_error,
        sum_eta2: report.total(),
        marked: 0,
        counts: space.counts().to_vec(),
        local_error: setup.indicators.local_energies(&error),
        galerkin_defect: galerkin_defect(&setup.basis, &space, problem, &sol.u_off),
        contraction: previous.map(|p| if p > 0.0 { energy_error * energy_error / (p * p) } else { 0.0 }),
        seconds: if config.timing { started.elapsed().as_secs_f64() } else { 0.0 },
    };
    Ok(Evaluation { record, report })
}

fn check_setup(config: &AdaptConfig, setup: &Setup) -> Result<()> {
    config.validate()?;
    if config.snapshots != setup.snapshots {
        return Err(Error::invalid(format!(
            "config asks for {:?} snapshots but the setup was built with {:?}",
            config.snapshots, setup.snapshots
        )));
    }
    Ok(())
}

/// Runs the adaptive loop from `config.initial_count` eigenfunctions per region.
pub fn run_adaptive(config: &AdaptConfig, setup: &Setup) -> Result<ConvergenceHistory> {
    check_setup(config, setup)?;
    let mut spaces = setup.spaces.clone();
    for s in &mut spaces {
        s.set_active(config.initial_count);
    }
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut initial_total = None;
    let stop = loop {
        let started = Instant::now();
        let m = records.len();
        let previous = records.last().map(|r| r.energy_error);
        let Evaluation { mut record, report } = evaluate(setup, config, &spaces, m, previous, started)?;
        let initial = *initial_total.get_or_insert(record.sum_eta2);
        let done = match config.termination {
            Termination::ExactFraction(p) => record.energy_error <= (1.0 + p) * setup.snapshot_error,
            Termination::Literal(p) => record.energy_error <= p * setup.snapshot_error,
            Termination::IndicatorTol(eps) => record.sum_eta2 <= eps * initial,
            Termination::RelativeError(pct) => record.errors.h1_vs_u <= pct,
            Termination::MaxDim(n) => record.dim >= n,
            Termination::MaxIter => false,
        };
        if done {
            records.push(record);
            break StopReason::Converged;
        }
        if m >= config.max_iter {
            records.push(record);
            break StopReason::MaxIter;
        }
        let marked = mark(&report, config.theta);
        if marked.is_empty() {
            records.push(record);
            break StopReason::Exhausted;
        }
        record.marked = marked.len();
        for &i in &marked {
            let s = match config.increment {
                Increment::Fixed(s) => s,
                Increment::Gap { s_min, ratio } => spaces[i].increment_for_gap(s_min, ratio),
            };
            spaces[i].enrich(s);
        }
        if config.timing {
            record.seconds = started.elapsed().as_secs_f64();
        }
        records.push(record);
    };
    Ok(ConvergenceHistory {
        indicator: config.indicator,
        records,
        stop,
        snapshot_error: setup.snapshot_error,
    })
}

/// Single solve with `per_node_count` eigenfunctions in every region, clamped to `W_i`.
pub fn run_uniform(config: &AdaptConfig, setup: &Setup, per_node_count: usize) -> Result<ConvergenceHistory> {
    check_setup(config, setup)?;
    if per_node_count == 0 {
        return Err(Error::config("count", "must be at least 1"));
    }
    let mut spaces = setup.spaces.clone();
    for s in &mut spaces {
        s.set_active(per_node_count);
    }
    let Evaluation { record, .. } = evaluate(setup, config, &spaces, 0, None, Instant::now())?;
    Ok(ConvergenceHistory {
        indicator: config.indicator,
        records: vec![record],
        stop: StopReason::Converged,
        snapshot_error: setup.snapshot_error,
    })
}

/// Smallest uniform count whose energy error is at most `target`, with its record.
pub fn uniform_to_target(config: &AdaptConfig, setup: &Setup, target: f64) -> Result<Option<IterationRecord>> {
    let max = setup.max_counts().into_iter().max().unwrap_or(1);
    for count in 1..=max {
        let record = run_uniform(config, setup, count)?.records.remove(0);
        if record.energy_error <= target {
            return Ok(Some(record));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ChannelLayout, FieldSpec};

    fn report(values: &[f64], saturated: &[bool]) -> IndicatorReport {
        IndicatorReport {
            kind: IndicatorKind::H1w,
            values: values.to_vec(),
            lambdas: vec![Some(1.0); values.len()],
            saturated: saturated.to_vec(),
        }
    }

    #[test]
    fn marking_prefix_rule() {
        assert_eq!(mark(&report(&[5.0, 3.0, 2.0], &[false; 3]), 0.7), vec![0, 1]);
        assert_eq!(mark(&report(&[2.0, 3.0, 5.0], &[false; 3]), 0.7), vec![2, 1]);
        assert_eq!(mark(&report(&[1.0, 4.0, 2.0], &[false; 3]), 1e-9), vec![1]);
        let equal = report(&[0.3; 7], &[false; 7]);
        assert_eq!(mark(&equal, 1.0 - 1e-12), (0..7).collect::<Vec<_>>());
        // ties go to the lower index
        assert_eq!(mark(&report(&[1.0, 2.0, 2.0], &[false; 3]), 0.3), vec![1]);
        // saturated regions neither count nor get marked
        assert_eq!(mark(&report(&[0.0, 3.0, 1.0], &[true, true, false]), 0.5), vec![2]);
        assert!(mark(&report(&[0.0, 0.0], &[false, false]), 0.5).is_empty());
        assert!(mark(&report(&[1.0], &[true]), 0.5).is_empty());
    }

    #[test]
    fn termination_parsing() {
        assert_eq!("exact:0.05".parse::<Termination>().unwrap(), Termination::ExactFraction(0.05));
        assert_eq!("tol:1e-8".parse::<Termination>().unwrap(), Termination::IndicatorTol(1e-8));
        assert_eq!("max-dim:300".parse::<Termination>().unwrap(), Termination::MaxDim(300));
        assert_eq!("max-iter".parse::<Termination>().unwrap(), Termination::MaxIter);
        assert_eq!("error:2.5".parse::<Termination>().unwrap(), Termination::RelativeError(2.5));
        for t in [Termination::ExactFraction(0.05), Termination::Literal(0.1), Termination::IndicatorTol(1e-8)] {
            assert_eq!(t.to_string().parse::<Termination>().unwrap(), t);
        }
        assert!("exact".parse::<Termination>().is_err());
        assert!("soon:1".parse::<Termination>().is_err());
    }

    #[test]
    fn config_validation_names_key() {
        let bad = AdaptConfig {
            theta: 1.5,
            ..AdaptConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "theta"));
        let bad = AdaptConfig {
            increment: Increment::Fixed(0),
            ..AdaptConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(AdaptConfig::default().validate().is_ok());
    }

    fn small_setup(kind: SnapshotKind) -> Setup {
        let grids = StructuredGrids::new(4, 4, 4, 4).unwrap();
        let spec = FieldSpec::Channels {
            contrast: 1e4,
            layout: ChannelLayout::Seeded(5),
        };
        let field = CoefficientField::load(&spec, &grids).unwrap();
        Setup::new(grids, field, kind, 1.0, AffineLift::default()).unwrap()
    }

    #[test]
    fn adaptive_run_invariants() {
        let setup = small_setup(SnapshotKind::Harmonic);
        let config = AdaptConfig {
            initial_count: 1,
            timing: false,
            ..AdaptConfig::default()
        };
        let h = run_adaptive(&config, &setup).unwrap();
        assert!(h.converged());
        for w in h.records.windows(2) {
            assert!(w[1].dim > w[0].dim);
            assert!(w[1].energy_error <= w[0].energy_error + 1e-10);
            assert!(w[0].marked > 0);
            for (a, b) in w[0].counts.iter().zip(&w[1].counts) {
                assert!(b >= a);
            }
        }
        assert!(h.records.iter().all(|r| r.galerkin_defect <= 1e-8));
        assert_eq!(h.last().marked, 0);
        let again = run_adaptive(&config, &setup).unwrap();
        assert_eq!(h, again);

        let first = run_uniform(&config, &setup, 1).unwrap();
        assert_eq!(first.records[0].errors, h.records[0].errors);
        assert_eq!(first.records[0].sum_eta2, h.records[0].sum_eta2);
    }

    #[test]
    fn uniform_saturation_matches_snapshot_solution() {
        let setup = small_setup(SnapshotKind::Harmonic);
        let config = AdaptConfig::default();
        let full = run_uniform(&config, &setup, usize::MAX).unwrap();
        let r = &full.records[0];
        assert_eq!(r.dim, setup.snapshot_dim());
        assert!(r.errors.h1_vs_snap <= 1e-6 && r.errors.l2_vs_snap <= 1e-6);
        assert_eq!(r.sum_eta2, 0.0);
        let mut last = f64::INFINITY;
        for count in 1..6 {
            let e = run_uniform(&config, &setup, count).unwrap().records[0].energy_error;
            assert!(e <= last + 1e-10);
            last = e;
        }
    }

    #[test]
    fn indicator_tolerance_and_iteration_limit() {
        let setup = small_setup(SnapshotKind::Harmonic);
        let config = AdaptConfig {
            termination: Termination::IndicatorTol(1e-3),
            timing: false,
            ..AdaptConfig::default()
        };
        let h = run_adaptive(&config, &setup).unwrap();
        assert!(h.converged());
        assert!(h.last().sum_eta2 <= 1e-3 * h.records[0].sum_eta2);

        let limited = AdaptConfig {
            termination: Termination::Literal(0.05),
            max_iter: 3,
            ..config
        };
        let h = run_adaptive(&limited, &setup).unwrap();
        assert_eq!(h.stop, StopReason::MaxIter);
        assert_eq!(h.records.len(), 4);
    }

    #[test]
    fn mismatched_snapshot_kind_is_rejected() {
        let setup = small_setup(SnapshotKind::Harmonic);
        let config = AdaptConfig {
            snapshots: SnapshotKind::Nodal,
            ..AdaptConfig::default()
        };
        assert!(run_adaptive(&config, &setup).is_err());
    }
}
