//! Run configuration, experiment orchestration and the text artifacts
//! written by the `gmsfem` binary.
//!
//! A configuration is a list of `key = value` lines. Blank lines and lines
//! starting with `#` are ignored. Command-line flags are turned into the
//! same pairs and appended after the file, so they override it. Every key
//! is validated before anything runs, and errors name the offending key.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adapt::{run_adaptive, run_uniform, AdaptConfig, ConvergenceHistory, Increment, Setup, Termination};
use crate::coarse::AffineLift;
use crate::error::{Error, Result};
use crate::field::{ChannelLayout, CoefficientField, FieldSpec};
use crate::grid::StructuredGrids;
use crate::indicator::IndicatorKind;

/// Keys accepted in a configuration, in the order they are written.
pub const KEYS: [&str; 20] = [
    "coarse",
    "sub",
    "field",
    "contrast",
    "seed",
    "source",
    "lift_a",
    "lift_b",
    "lift_c",
    "snapshots",
    "theta",
    "indicator",
    "init_basis",
    "s",
    "gap_ratio",
    "terminate",
    "max_iter",
    "q_formula",
    "timing",
    "out",
];

/// Prefix of summary keys in `run.txt`; they are skipped when read back.
pub const RESULT_PREFIX: &str = "result.";

#[derive(Debug, Clone, PartialEq)]
pub enum FieldChoice {
    Uniform,
    Channels,
    File(PathBuf),
}

impl fmt::Display for FieldChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldChoice::Uniform => f.write_str("uniform"),
            FieldChoice::Channels => f.write_str("channels"),
            FieldChoice::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for FieldChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "" => Err("empty field".into()),
            "uniform" => Ok(FieldChoice::Uniform),
            "channels" => Ok(FieldChoice::Channels),
            path => Ok(FieldChoice::File(PathBuf::from(path))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Coarse cells in x and y.
    pub coarse: (usize, usize),
    /// Fine cells per coarse cell in x and y.
    pub sub: (usize, usize),
    pub field: FieldChoice,
    /// Channel value for the synthetic field; the background is 1.
    pub contrast: f64,
    /// Channel placement seed.
    pub seed: u64,
    /// Constant right-hand side `f`.
    pub source: f64,
    pub lift: AffineLift,
    pub adapt: AdaptConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            coarse: (10, 10),
            sub: (5, 5),
            field: FieldChoice::Channels,
            contrast: 1e4,
            seed: 1,
            source: 1.0,
            lift: AffineLift::default(),
            adapt: AdaptConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_pair(key: &str, value: &str) -> Result<(usize, usize)> {
    let (a, b) = match value.split_once(['x', 'X']) {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (value, value),
    };
    let pair = (parse_value::<usize>(key, a)?, parse_value::<usize>(key, b)?);
    if pair.0 == 0 || pair.1 == 0 {
        return Err(Error::config(key, "sizes must be positive"));
    }
    Ok(pair)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

/// Full-precision float text: 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

impl RunConfig {
    /// Builds a configuration from `key = value` pairs applied over the
    /// defaults. A later pair overrides an earlier one with the same key.
    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> Result<Self> {
        let mut latest: Vec<Option<&str>> = vec![None; KEYS.len()];
        for (k, v) in pairs {
            let (k, v) = (k.as_ref().trim(), v.as_ref().trim());
            if k.starts_with(RESULT_PREFIX) {
                continue;
            }
            let slot = KEYS
                .iter()
                .position(|known| *known == k)
                .ok_or_else(|| Error::config(k, "unknown key"))?;
            latest[slot] = Some(v);
        }
        let get = |key: &str| latest[KEYS.iter().position(|k| *k == key).unwrap()];

        let mut c = RunConfig::default();
        if let Some(v) = get("coarse") {
            c.coarse = parse_pair("coarse", v)?;
        }
        if let Some(v) = get("sub") {
            c.sub = parse_pair("sub", v)?;
        }
        if let Some(v) = get("field") {
            c.field = parse_value("field", v)?;
        }
        if let Some(v) = get("contrast") {
            c.contrast = parse_value("contrast", v)?;
            if !(c.contrast >= 1.0) || !c.contrast.is_finite() {
                return Err(Error::config("contrast", format!("{} is not a finite value >= 1", c.contrast)));
            }
        }
        if let Some(v) = get("seed") {
            c.seed = parse_value("seed", v)?;
        }
        if let Some(v) = get("source") {
            c.source = parse_value("source", v)?;
            if !c.source.is_finite() {
                return Err(Error::config("source", "must be finite"));
            }
        }
        for (key, slot) in [("lift_a", &mut c.lift.a), ("lift_b", &mut c.lift.b), ("lift_c", &mut c.lift.c)] {
            if let Some(v) = get(key) {
                *slot = parse_value(key, v)?;
                if !slot.is_finite() {
                    return Err(Error::config(key, "must be finite"));
                }
            }
        }
        let a = &mut c.adapt;
        if let Some(v) = get("snapshots") {
            a.snapshots = parse_value("snapshots", v)?;
        }
        a.initial_count = match get("init_basis") {
            Some(v) => parse_value("init_basis", v)?,
            None => a.snapshots.default_initial_count(),
        };
        if let Some(v) = get("theta") {
            a.theta = parse_value("theta", v)?;
        }
        if let Some(v) = get("indicator") {
            a.indicator = parse_value("indicator", v)?;
        }
        let s = match get("s") {
            Some(v) => parse_value("s", v)?,
            None => 1,
        };
        a.increment = match get("gap_ratio") {
            None | Some("off") => Increment::Fixed(s),
            Some(v) => Increment::Gap {
                s_min: s,
                ratio: parse_value("gap_ratio", v)?,
            },
        };
        if let Some(v) = get("terminate") {
            a.termination = parse_value("terminate", v)?;
        }
        if let Some(v) = get("max_iter") {
            a.max_iter = parse_value("max_iter", v)?;
        }
        if let Some(v) = get("q_formula") {
            a.q_formula = parse_value("q_formula", v)?;
        }
        if let Some(v) = get("timing") {
            a.timing = parse_bool("timing", v)?;
        }
        if let Some(v) = get("out") {
            if v.is_empty() {
                return Err(Error::config("out", "empty path"));
            }
            c.out = PathBuf::from(v);
        }
        c.adapt.validate()?;
        Ok(c)
    }

    /// Parses configuration text; `origin` only labels errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        Self::from_pairs(&read_pairs(text, origin)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Every key with its current value; [`RunConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let a = &self.adapt;
        let (s, gap) = match a.increment {
            Increment::Fixed(s) => (s, "off".to_string()),
            Increment::Gap { s_min, ratio } => (s_min, num(ratio)),
        };
        let values: [String; 20] = [
            format!("{}x{}", self.coarse.0, self.coarse.1),
            format!("{}x{}", self.sub.0, self.sub.1),
            self.field.to_string(),
            num(self.contrast),
            self.seed.to_string(),
            num(self.source),
            num(self.lift.a),
            num(self.lift.b),
            num(self.lift.c),
            a.snapshots.to_string(),
            num(a.theta),
            a.indicator.to_string(),
            a.initial_count.to_string(),
            s.to_string(),
            gap,
            termination_text(a.termination),
            a.max_iter.to_string(),
            a.q_formula.name().to_string(),
            a.timing.to_string(),
            self.out.display().to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn grids(&self) -> Result<StructuredGrids> {
        StructuredGrids::new(self.coarse.0, self.coarse.1, self.sub.0, self.sub.1)
    }

    pub fn field_spec(&self) -> FieldSpec {
        match &self.field {
            FieldChoice::Uniform => FieldSpec::Uniform,
            FieldChoice::Channels => FieldSpec::Channels {
                contrast: self.contrast,
                layout: ChannelLayout::Seeded(self.seed),
            },
            FieldChoice::File(p) => FieldSpec::File(p.clone()),
        }
    }

    /// Builds the grids, field, fine solution and full coarse basis.
    pub fn setup(&self) -> Result<Setup> {
        let grids = self.grids()?;
        let field = CoefficientField::load(&self.field_spec(), &grids)?;
        Setup::new(grids, field, self.adapt.snapshots, self.source, self.lift)
    }
}

fn termination_text(t: Termination) -> String {
    match t {
        Termination::ExactFraction(p) => format!("exact:{}", num(p)),
        Termination::Literal(p) => format!("literal:{}", num(p)),
        Termination::IndicatorTol(e) => format!("tol:{}", num(e)),
        Termination::RelativeError(p) => format!("error:{}", num(p)),
        other => other.to_string(),
    }
}

/// Splits configuration text into `(key, value)` pairs.
pub fn read_pairs(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: n + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                message: "missing key".into(),
            });
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub const HISTORY_HEADER: &str = "dim,L2_vs_u,H1_vs_u,L2_vs_usnap,H1_vs_usnap,sum_eta2,marked,seconds";

/// One row per iteration; errors are in percent.
pub fn history_csv(history: &ConvergenceHistory) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in &history.records {
        let e = &r.errors;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.dim,
            num(e.l2_vs_u),
            num(e.h1_vs_u),
            num(e.l2_vs_snap),
            num(e.h1_vs_snap),
            num(r.sum_eta2),
            r.marked,
            num(r.seconds)
        );
    }
    out
}

/// Values on the coarse-node lattice, top row first.
fn node_rows(grids: &StructuredGrids, values: &[String]) -> Vec<String> {
    let (nx, ny) = (grids.coarse_nodes_x(), grids.coarse_nodes_y());
    (0..ny)
        .rev()
        .map(|iy| values[iy * nx..(iy + 1) * nx].join(","))
        .collect()
}

fn column_header(grids: &StructuredGrids) -> String {
    (0..grids.coarse_nodes_x()).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
}

/// Final per-node basis counts on the coarse-node lattice.
pub fn basis_counts_csv(grids: &StructuredGrids, counts: &[usize]) -> String {
    let values: Vec<String> = counts.iter().map(usize::to_string).collect();
    let mut out = column_header(grids);
    out.push('\n');
    for row in node_rows(grids, &values) {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Squared local energy error `||u - u_off||^2` over each neighborhood at the
/// first and last iterations, each as a coarse-node lattice tagged with its
/// iteration number.
pub fn energy_error_grid_csv(grids: &StructuredGrids, history: &ConvergenceHistory) -> String {
    let mut out = format!("iteration,{}\n", column_header(grids));
    let first = &history.records[0];
    let last = history.last();
    let stages: Vec<_> = if history.records.len() > 1 {
        vec![first, last]
    } else {
        vec![first]
    };
    for r in stages {
        let values: Vec<String> = r.local_error.iter().map(|v| num(*v)).collect();
        for row in node_rows(grids, &values) {
            let _ = writeln!(out, "{},{}", r.iteration, row);
        }
    }
    out
}

/// The configuration followed by `result.*` summary lines.
pub fn summary_text(config: &RunConfig, setup: &Setup, history: &ConvergenceHistory) -> String {
    let mut out = config.to_text();
    let last = history.last();
    let lines = [
        ("stop", history.stop.name().to_string()),
        ("iterations", history.iterations().to_string()),
        ("initial_dim", history.records[0].dim.to_string()),
        ("final_dim", last.dim.to_string()),
        ("snapshot_dim", setup.snapshot_dim().to_string()),
        ("initial_H1_vs_u", num(history.records[0].errors.h1_vs_u)),
        ("final_H1_vs_u", num(last.errors.h1_vs_u)),
        ("final_L2_vs_u", num(last.errors.l2_vs_u)),
        ("snapshot_energy_error", num(history.snapshot_error)),
        ("final_energy_error", num(last.energy_error)),
        (
            "max_galerkin_defect",
            num(history.records.iter().map(|r| r.galerkin_defect).fold(0.0, f64::max)),
        ),
    ];
    for (k, v) in lines {
        let _ = writeln!(out, "{RESULT_PREFIX}{k} = {v}");
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `history.csv`, `basis_counts.csv`, `energy_error_grid.csv` and `run.txt` into `dir`.
pub fn write_outputs(dir: &Path, config: &RunConfig, setup: &Setup, history: &ConvergenceHistory) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("history.csv"), &history_csv(history))?;
    write_file(&dir.join("basis_counts.csv"), &basis_counts_csv(&setup.grids, &history.last().counts))?;
    write_file(&dir.join("energy_error_grid.csv"), &energy_error_grid_csv(&setup.grids, history))?;
    write_file(&dir.join("run.txt"), &summary_text(config, setup, history))
}

/// Adaptive run; outputs go to `config.out`.
pub fn run(config: &RunConfig) -> Result<ConvergenceHistory> {
    let setup = config.setup()?;
    let history = run_adaptive(&config.adapt, &setup)?;
    write_outputs(&config.out, config, &setup, &history)?;
    Ok(history)
}

/// Single solve with `count` eigenfunctions per region; outputs go to `config.out`.
pub fn uniform(config: &RunConfig, count: usize) -> Result<ConvergenceHistory> {
    let setup = config.setup()?;
    let history = run_uniform(&config.adapt, &setup, count)?;
    write_outputs(&config.out, config, &setup, &history)?;
    Ok(history)
}

pub const COMPARE_HEADER: &str = "iteration,dim_a,H1_vs_u_a,sum_eta2_a,dim_b,H1_vs_u_b,sum_eta2_b";

/// Side-by-side iteration table of two runs; the shorter run leaves its cells empty.
pub fn compare_csv(a: &ConvergenceHistory, b: &ConvergenceHistory) -> String {
    let cells = |h: &ConvergenceHistory, m: usize| match h.records.get(m) {
        Some(r) => format!("{},{},{}", r.dim, num(r.errors.h1_vs_u), num(r.sum_eta2)),
        None => ",,".to_string(),
    };
    let mut out = format!("# a = {}, b = {}\n{COMPARE_HEADER}\n", a.indicator, b.indicator);
    for m in 0..a.records.len().max(b.records.len()) {
        let _ = writeln!(out, "{m},{},{}", cells(a, m), cells(b, m));
    }
    out
}

/// Runs the configured indicator and `other` on the same setup. Each run
/// writes its outputs to a subdirectory named after its indicator, and
/// `compare.csv` goes to `config.out`.
pub fn compare(config: &RunConfig, other: IndicatorKind) -> Result<(ConvergenceHistory, ConvergenceHistory)> {
    if other == config.adapt.indicator {
        return Err(Error::config("indicator", format!("both runs would use {other}")));
    }
    let setup = config.setup()?;
    let mut histories = Vec::with_capacity(2);
    for kind in [config.adapt.indicator, other] {
        let mut c = config.clone();
        c.adapt.indicator = kind;
        c.out = config.out.join(kind.name());
        let history = run_adaptive(&c.adapt, &setup)?;
        write_outputs(&c.out, &c, &setup, &history)?;
        histories.push(history);
    }
    let b = histories.pop().unwrap();
    let a = histories.pop().unwrap();
    write_file(&config.out.join("compare.csv"), &compare_csv(&a, &b))?;
    Ok((a, b))
}

/// Short human-readable account of a run for the terminal.
pub fn report(history: &ConvergenceHistory) -> String {
    let mut out = String::new();
    for r in &history.records {
        let _ = writeln!(
            out,
            "m={:<3} dim={:<6} H1={:>10.4}% L2={:>10.4}% sum_eta2={:.4e} marked={}",
            r.iteration, r.dim, r.errors.h1_vs_u, r.errors.l2_vs_u, r.sum_eta2, r.marked
        );
    }
    let _ = writeln!(
        out,
        "{} ({}): {} iterations, final dim {}",
        history.indicator,
        history.stop.name(),
        history.iterations(),
        history.last().dim
    );
    out
}
