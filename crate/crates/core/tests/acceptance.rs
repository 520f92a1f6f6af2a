//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any failure.
//!
//! Desk configuration: 10x10 coarse cells, 5x5 fine cells per block, seeded
//! crossing channels with contrast 1e4, f = 1, harmonic snapshots. Adaptive
//! runs stop once the energy error relative to the fine solution drops to
//! `DESK_TARGET` percent.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use gmsfem::adapt::{run_adaptive, uniform_to_target, ConvergenceHistory, Setup};
use gmsfem::cli::{self, FieldChoice, RunConfig};
use gmsfem::coarse::{energy_norm, solve_coarse, OfflineSpace};
use gmsfem::field::FieldSpec;
use gmsfem::grid::StructuredGrids;
use gmsfem::indicator::IndicatorKind;
use gmsfem::localspaces::SnapshotKind;

use common::{
    channels, desk_config, desk_grids, indicator_oracle_mismatch, pou_hat_error, pou_sum_error, random_eigen_suite,
    setup, DESK_TARGET,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Run {
    label: &'static str,
    history: ConvergenceHistory,
    seconds: f64,
}

impl Run {
    fn new(label: &'static str, setup: &Setup, indicator: IndicatorKind, theta: f64) -> Run {
        let t = Instant::now();
        let history = run_adaptive(&desk_config(indicator, theta), setup).expect("adaptive run");
        Run {
            label,
            history,
            seconds: t.elapsed().as_secs_f64(),
        }
    }

    fn dim(&self) -> usize {
        self.history.last().dim
    }

    fn iterations(&self) -> usize {
        self.history.iterations()
    }

    fn describe(&self) -> String {
        format!(
            "{}: {} it, dim {}, H1 {:.3}%",
            self.label,
            self.iterations(),
            self.dim(),
            self.history.last().errors.h1_vs_u
        )
    }
}

fn within(a: usize, b: usize, fraction: f64) -> bool {
    (a as f64 - b as f64).abs() <= fraction * a.min(b) as f64
}

struct Desk {
    h1w: Run,
    h1w_economy: Run,
    l2: Run,
    exact: Run,
    snap: Run,
    uniform_h1w: Run,
    uniform_l2: Run,
    uniform_dim: Option<(usize, f64)>,
    extra_defects: Vec<f64>,
}

fn desk_runs() -> Desk {
    let t = Instant::now();
    let field = setup(desk_grids(), &channels(1e4), SnapshotKind::Harmonic);
    let flat = setup(desk_grids(), &FieldSpec::Uniform, SnapshotKind::Harmonic);
    println!("    desk setups built in {:.1} s", t.elapsed().as_secs_f64());
    let h1w = Run::new("h1w theta=0.7", &field, IndicatorKind::H1w, 0.7);
    let target = h1w.history.last().energy_error;
    let uniform = uniform_to_target(&desk_config(IndicatorKind::H1w, 0.7), &field, target).expect("uniform runs");
    let desk = Desk {
        h1w_economy: Run::new("h1w theta=0.2", &field, IndicatorKind::H1w, 0.2),
        l2: Run::new("l2 theta=0.7", &field, IndicatorKind::L2, 0.7),
        exact: Run::new("exact theta=0.7", &field, IndicatorKind::Exact, 0.7),
        snap: Run::new("h1w-snap theta=0.7", &field, IndicatorKind::H1wSnap, 0.7),
        uniform_h1w: Run::new("uniform field h1w", &flat, IndicatorKind::H1w, 0.7),
        uniform_l2: Run::new("uniform field l2", &flat, IndicatorKind::L2, 0.7),
        uniform_dim: uniform.as_ref().map(|r| (r.dim, r.errors.h1_vs_u)),
        extra_defects: uniform.iter().map(|r| r.galerkin_defect).collect(),
        h1w,
    };
    for r in desk.all() {
        println!("    {} ({:.1} s)", r.describe(), r.seconds);
    }
    desk
}

impl Desk {
    fn all(&self) -> [&Run; 7] {
        [
            &self.h1w,
            &self.h1w_economy,
            &self.l2,
            &self.exact,
            &self.snap,
            &self.uniform_h1w,
            &self.uniform_l2,
        ]
    }
}

fn criterion_1() -> Outcome {
    let sum = pou_sum_error(&desk_grids(), &channels(1e4));
    let hat = [StructuredGrids::new(2, 2, 2, 2), StructuredGrids::new(10, 10, 5, 5)]
        .into_iter()
        .map(|g| pou_hat_error(&g.unwrap()))
        .fold(0.0, f64::max);
    check(
        sum <= 1e-10 && hat <= 1e-9,
        format!("max |sum chi - 1| = {sum:.2e}, max |chi - hat| (kappa=1) = {hat:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let c = random_eigen_suite(100, 60, 2024);
    check(
        c.residual <= 1e-8 && c.orthonormality <= 1e-10 && c.ascending,
        format!(
            "100 pairs: residual/|A|_F {:.2e}, |Psi^T S Psi - I| {:.2e}, ascending {}",
            c.residual, c.orthonormality, c.ascending
        ),
    )
}

fn criterion_3(desk: &Desk) -> Outcome {
    let mut defect = desk.extra_defects.iter().copied().fold(0.0, f64::max);
    let mut increase = f64::NEG_INFINITY;
    let mut solves = desk.extra_defects.len();
    for run in desk.all() {
        for r in &run.history.records {
            defect = defect.max(r.galerkin_defect);
            solves += 1;
        }
        for w in run.history.records.windows(2) {
            increase = increase.max(w[1].energy_error - w[0].energy_error);
        }
    }
    check(
        defect <= 1e-8 && increase <= 1e-10,
        format!("{solves} solves: max defect {defect:.2e}, largest energy-error change {increase:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let s = setup(StructuredGrids::new(6, 6, 4, 4).unwrap(), &channels(1e4), SnapshotKind::Nodal);
    let sol = solve_coarse(&s.basis, &OfflineSpace::with_counts(s.max_counts())).expect("coarse solve");
    let e: Vec<f64> = s.u.iter().zip(&sol.u_off).map(|(a, b)| a - b).collect();
    let a = &s.problem.stiffness;
    let rel = energy_norm(a, &e) / energy_norm(a, &s.u);
    let mut spaces = s.spaces.clone();
    for sp in &mut spaces {
        sp.set_active(sp.max_count());
    }
    let residual = s.problem.residual(&sol.u_off);
    let mut largest = 0.0f64;
    for kind in [IndicatorKind::L2, IndicatorKind::H1w, IndicatorKind::H1wSnap, IndicatorKind::Exact] {
        let report = s.indicators.evaluate(kind, &spaces, &residual, Some(&e)).expect("indicator");
        largest = report.values.iter().fold(largest, |m, v| m.max(v.abs()));
    }
    check(
        rel <= 1e-8 && largest <= 1e-10,
        format!("6x6/4x4 nodal: |u - u_off|_V / |u|_V = {rel:.2e}, max indicator {largest:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let (l2, h1) = indicator_oracle_mismatch();
    check(
        l2 <= 1e-8 && h1 <= 1e-8,
        format!("relative mismatch |Q_i| {l2:.2e}, |R_i|_V* {h1:.2e}"),
    )
}

fn criterion_6(desk: &Desk) -> Outcome {
    let h = &desk.h1w.history;
    let errors: Vec<f64> = h.records.iter().map(|r| r.errors.h1_vs_u).collect();
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);
    let (first, last) = (errors[0], *errors.last().unwrap());
    let Some((uniform_dim, uniform_error)) = desk.uniform_dim else {
        return Err("no uniform count reaches the adaptive error".into());
    };
    check(
        h.converged() && monotone && last < 10.0 && first >= 3.0 * last && desk.h1w.dim() < uniform_dim,
        format!(
            "H1 {first:.3}% -> {last:.3}% (monotone {monotone}), adaptive dim {} < uniform dim {uniform_dim} (H1 {uniform_error:.3}%)",
            desk.h1w.dim()
        ),
    )
}

fn criterion_7(desk: &Desk) -> Outcome {
    let (a, b) = (&desk.h1w_economy, &desk.h1w);
    check(
        a.history.converged() && a.dim() <= b.dim() && a.iterations() > b.iterations(),
        format!("theta=0.2 dim {} / {} it vs theta=0.7 dim {} / {} it", a.dim(), a.iterations(), b.dim(), b.iterations()),
    )
}

fn criterion_8(desk: &Desk) -> Outcome {
    let (l2, h1) = (&desk.l2, &desk.h1w);
    let (ul2, uh1) = (&desk.uniform_l2, &desk.uniform_h1w);
    let contrast = l2.history.converged() && l2.iterations() > h1.iterations() && l2.dim() > h1.dim();
    let flat = ul2.history.converged() && uh1.history.converged() && within(ul2.dim(), uh1.dim(), 0.25);
    check(
        contrast && flat,
        format!(
            "contrast 1e4: l2 {} it / dim {} vs h1w {} it / dim {}; uniform field: l2 dim {} vs h1w dim {}",
            l2.iterations(),
            l2.dim(),
            h1.iterations(),
            h1.dim(),
            ul2.dim(),
            uh1.dim()
        ),
    )
}

fn criterion_9(desk: &Desk) -> Outcome {
    let (ex, h1) = (&desk.exact, &desk.h1w);
    check(
        ex.history.converged() && h1.history.converged() && within(ex.dim(), h1.dim(), 0.25),
        format!("exact dim {} vs h1w dim {}", ex.dim(), h1.dim()),
    )
}

fn criterion_10(desk: &Desk) -> Outcome {
    let (sn, h1) = (&desk.snap, &desk.h1w);
    check(
        sn.history.converged() && within(sn.dim(), h1.dim(), 0.25) && sn.iterations() <= 2 * h1.iterations(),
        format!(
            "h1w-snap dim {} / {} it vs h1w dim {} / {} it",
            sn.dim(),
            sn.iterations(),
            h1.dim(),
            h1.iterations()
        ),
    )
}

fn criterion_11(desk: &Desk) -> Outcome {
    let mut worst = 0.0f64;
    let mut steps = 0;
    for run in desk.all() {
        for c in run.history.records.iter().filter_map(|r| r.contraction) {
            worst = worst.max(c);
            steps += 1;
        }
    }
    check(worst < 1.0, format!("{steps} steps, largest squared-error ratio {worst:.6}"))
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut texts = Vec::new();
    for name in ["first", "second"] {
        let mut config = RunConfig {
            field: FieldChoice::Channels,
            out: dir.path().join(name),
            ..RunConfig::default()
        };
        config.adapt = desk_config(IndicatorKind::H1w, 0.7);
        cli::run(&config).map_err(|e| e.to_string())?;
        texts.push(std::fs::read(config.out.join("history.csv")).map_err(|e| e.to_string())?);
    }
    check(
        texts[0] == texts[1],
        format!("two desk runs, history.csv {} bytes, identical {}", texts[0].len(), texts[0] == texts[1]),
    )
}

fn main() -> ExitCode {
    println!("acceptance: desk target {DESK_TARGET}% relative energy error");
    let desk = desk_runs();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("partition of unity", Box::new(criterion_1)),
        ("eigensolver", Box::new(criterion_2)),
        ("Galerkin orthogonality", Box::new(|| criterion_3(&desk))),
        ("saturation oracle", Box::new(criterion_4)),
        ("indicator oracle", Box::new(criterion_5)),
        ("adaptive vs uniform", Box::new(|| criterion_6(&desk))),
        ("theta economy", Box::new(|| criterion_7(&desk))),
        ("L2 vs H1w robustness", Box::new(|| criterion_8(&desk))),
        ("exact vs proposed", Box::new(|| criterion_9(&desk))),
        ("snapshot-space indicator", Box::new(|| criterion_10(&desk))),
        ("contraction", Box::new(|| criterion_11(&desk))),
        ("determinism", Box::new(criterion_12)),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
