//! Permeability fields and the spectral weight derived from the partition of unity.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::StructuredGrids;
use crate::localspaces::PartitionOfUnity;

/// Axis-aligned rectangle `[x0, x1) x [y0, y1)` in unit-square coordinates.
///
/// A fine cell belongs to the inclusion when its center lies inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inclusion {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Inclusion {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelLayout {
    /// Crossing channels and small inclusions placed by a seeded generator.
    Seeded(u64),
    Explicit(Vec<Inclusion>),
}

impl ChannelLayout {
    pub fn inclusions(&self) -> Vec<Inclusion> {
        match self {
            ChannelLayout::Seeded(seed) => seeded_channels(*seed),
            ChannelLayout::Explicit(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    Uniform,
    /// Whitespace-separated matrix, one row per fine-cell row, top row first.
    File(PathBuf),
    Channels { contrast: f64, layout: ChannelLayout },
}

const HORIZONTAL_CHANNELS: usize = 4;
const VERTICAL_CHANNELS: usize = 4;
const SMALL_INCLUSIONS: usize = 10;

/// Layout of long crossing channels plus short isolated inclusions.
pub fn seeded_channels(seed: u64) -> Vec<Inclusion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..HORIZONTAL_CHANNELS {
        let y = rng.gen_range(0.1..0.9);
        let w = rng.gen_range(0.02..0.04);
        let start = rng.gen_range(0.0..0.25);
        let end = rng.gen_range(0.75..1.0);
        out.push(Inclusion {
            x0: start,
            x1: end,
            y0: y,
            y1: y + w,
        });
    }
    for _ in 0..VERTICAL_CHANNELS {
        let x = rng.gen_range(0.1..0.9);
        let w = rng.gen_range(0.02..0.04);
        let start = rng.gen_range(0.0..0.25);
        let end = rng.gen_range(0.75..1.0);
        out.push(Inclusion {
            x0: x,
            x1: x + w,
            y0: start,
            y1: end,
        });
    }
    for _ in 0..SMALL_INCLUSIONS {
        let (cx, cy) = (rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95));
        let (wx, wy) = (rng.gen_range(0.02..0.06), rng.gen_range(0.02..0.06));
        out.push(Inclusion {
            x0: cx - 0.5 * wx,
            x1: cx + 0.5 * wx,
            y0: cy - 0.5 * wy,
            y1: cy + 0.5 * wy,
        });
    }
    out
}

/// Per fine cell: does any inclusion contain the cell center?
pub fn inclusion_mask(grids: &StructuredGrids, inclusions: &[Inclusion]) -> Vec<bool> {
    let (hx, hy) = grids.fine_h();
    let nx = grids.fine_cells_x();
    (0..grids.num_fine_cells())
        .map(|c| {
            let (x, y) = (((c % nx) as f64 + 0.5) * hx, ((c / nx) as f64 + 0.5) * hy);
            inclusions.iter().any(|inc| inc.contains(x, y))
        })
        .collect()
}

/// Piecewise-constant coefficient on fine cells, plus the derived weight.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    kappa: Vec<f64>,
    kappa_tilde: Option<Vec<f64>>,
    kappa_tilde_min: Option<Vec<f64>>,
}

impl CoefficientField {
    pub fn from_cells(grids: &StructuredGrids, kappa: Vec<f64>) -> Result<Self> {
        if kappa.len() != grids.num_fine_cells() {
            return Err(Error::invalid(format!(
                "coefficient has {} entries, fine grid has {} cells",
                kappa.len(),
                grids.num_fine_cells()
            )));
        }
        if let Some((c, v)) = kappa.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!(
                "coefficient must be positive and finite, cell {c} has {v}"
            )));
        }
        Ok(CoefficientField {
            kappa,
            kappa_tilde: None,
            kappa_tilde_min: None,
        })
    }

    pub fn load(spec: &FieldSpec, grids: &StructuredGrids) -> Result<Self> {
        match spec {
            FieldSpec::Uniform => Self::from_cells(grids, vec![1.0; grids.num_fine_cells()]),
            FieldSpec::File(path) => Self::from_cells(grids, read_matrix(path, grids)?),
            FieldSpec::Channels { contrast, layout } => {
                if !(*contrast >= 1.0) {
                    return Err(Error::invalid(format!("contrast must be >= 1, got {contrast}")));
                }
                let mask = inclusion_mask(grids, &layout.inclusions());
                let kappa = mask
                    .into_iter()
                    .map(|inside| if inside { *contrast } else { 1.0 })
                    .collect();
                Self::from_cells(grids, kappa)
            }
        }
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn kappa_tilde(&self) -> Result<&[f64]> {
        self.kappa_tilde
            .as_deref()
            .ok_or_else(|| Error::State("weight kappa_tilde not computed; build the partition of unity first".into()))
    }

    /// Minimum of the weight over each coarse neighborhood.
    pub fn kappa_tilde_min(&self) -> Result<&[f64]> {
        self.kappa_tilde_min
            .as_deref()
            .ok_or_else(|| Error::State("weight kappa_tilde not computed".into()))
    }

    /// Copy with `kappa` multiplied by `alpha` and the derived weight cleared.
    pub fn scaled(&self, alpha: f64) -> Self {
        CoefficientField {
            kappa: self.kappa.iter().map(|k| alpha * k).collect(),
            kappa_tilde: None,
            kappa_tilde_min: None,
        }
    }

    /// Sets `kappa_tilde = kappa * sum_i (H_x^2 (d_x chi_i)^2 + H_y^2 (d_y chi_i)^2)`,
    /// gradients of the bilinear interpolant taken at fine-cell centers.
    pub fn compute_kappa_tilde(&mut self, grids: &StructuredGrids, pou: &PartitionOfUnity) -> Result<()> {
        if pou.len() != grids.num_coarse_nodes() {
            return Err(Error::State(format!(
                "partition of unity has {} functions, grid has {} coarse nodes",
                pou.len(),
                grids.num_coarse_nodes()
            )));
        }
        let (big_hx, big_hy) = grids.coarse_h();
        let (hx, hy) = grids.fine_h();
        let mut energy = vec![0.0; grids.num_fine_cells()];
        for (i, nb) in grids.neighborhoods().iter().enumerate() {
            let chi = pou.local(i);
            for cell in nb.patch.cells() {
                let [sw, se, ne, nw] = nb.patch.cell_nodes(&cell).map(|n| chi[n]);
                let dx = ((se - sw) + (ne - nw)) / (2.0 * hx);
                let dy = ((nw - sw) + (ne - se)) / (2.0 * hy);
                energy[cell.cell] += big_hx * big_hx * dx * dx + big_hy * big_hy * dy * dy;
            }
        }
        let tilde: Vec<f64> = self.kappa.iter().zip(&energy).map(|(k, e)| k * e).collect();
        if let Some((c, v)) = tilde.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::State(format!("kappa_tilde vanishes on cell {c} ({v})")));
        }
        self.kappa_tilde_min = Some(neighborhood_minima(grids, &tilde));
        self.kappa_tilde = Some(tilde);
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn set_kappa_tilde_for_tests(&mut self, tilde: Vec<f64>) {
        self.kappa_tilde = Some(tilde);
    }
}

/// Minimum of a cellwise quantity over every coarse neighborhood.
pub fn neighborhood_minima(grids: &StructuredGrids, cellwise: &[f64]) -> Vec<f64> {
    grids
        .neighborhoods()
        .iter()
        .map(|nb| {
            nb.patch
                .cells()
                .map(|c| cellwise[c.cell])
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn read_matrix(path: &Path, grids: &StructuredGrids) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, line)| {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line: ln + 1,
                        message: format!("not a number: `{tok}`"),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let (nx, ny) = (grids.fine_cells_x(), grids.fine_cells_y());
    if rows.len() != ny || rows.iter().any(|r| r.len() != nx) {
        return Err(Error::invalid(format!(
            "{}: expected {ny} rows of {nx} values, found {} rows",
            path.display(),
            rows.len()
        )));
    }
    // top row of the file is the top of the domain
    Ok(rows.into_iter().rev().flatten().collect())
}

/// Writes a cellwise field in the text-matrix format read by [`FieldSpec::File`].
pub fn write_matrix(path: &Path, grids: &StructuredGrids, cellwise: &[f64]) -> Result<()> {
    let nx = grids.fine_cells_x();
    let mut out = String::new();
    for row in cellwise.chunks(nx).rev() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
