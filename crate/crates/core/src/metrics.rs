//! Per-trial and cross-trial measurements: time, path, cost, agreement,
//! model similarity, occupancy heatmaps and the spectral ergodicity metric.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{running_cost, CostSpec};
use crate::error::{Error, Result};
use crate::koopman::AffineLinearModel;
use crate::lander::{TrialStatus, WorldParams};
use crate::trial::{Paradigm, TrialLog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub time_s: f64,
    pub path_length_m: f64,
    pub total_cost: f64,
    pub success: bool,
}

pub fn trial_metrics(log: &TrialLog, cost: &CostSpec) -> Result<TrialMetrics> {
    log.validate()?;
    let path_length_m = log
        .samples
        .windows(2)
        .map(|w| (w[1].state.x - w[0].state.x).hypot(w[1].state.y - w[0].state.y))
        .sum();
    let total_cost = log.samples.iter().map(|s| running_cost(&s.state, &s.u_applied, cost)).sum();
    Ok(TrialMetrics {
        time_s: log.outcome.steps as f64 * log.dt,
        path_length_m,
        total_cost,
        success: log.outcome.status == TrialStatus::Success,
    })
}

/// Fraction of (step, dimension) pairs where the pilot's input does not oppose
/// the optimal one.
pub fn agreement(log: &TrialLog) -> Result<f64> {
    if !log.paradigm.is_shared() {
        return Err(Error::NotApplicable("agreement is undefined for user_only logs".into()));
    }
    if log.samples.is_empty() {
        return Err(Error::MalformedLog("log has no samples".into()));
    }
    let mut agree = 0usize;
    for s in &log.samples {
        let opt = s
            .u_opt
            .ok_or_else(|| Error::MalformedLog(format!("sample at t={} lacks u_opt", s.t)))?;
        agree += usize::from(s.u_user.u_main * opt.u_main >= 0.0);
        agree += usize::from(s.u_user.u_rot * opt.u_rot >= 0.0);
    }
    Ok(agree as f64 / (2 * log.samples.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSimilarity {
    pub std_pct_a: f64,
    pub std_pct_b: f64,
}

/// Entries whose mean magnitude falls below this are left out of the ratio.
pub const SIMILARITY_MEAN_FLOOR: f64 = 1e-6;

/// Average over entries of (population std / |mean|), in percent.
pub fn model_similarity(models: &[AffineLinearModel]) -> Result<ModelSimilarity> {
    if models.len() < 2 {
        return Err(Error::Degenerate(format!(
            "model similarity needs at least 2 models, got {}",
            models.len()
        )));
    }
    let a: Vec<&[f64]> = models.iter().map(|m| m.a.as_slice()).collect();
    let b: Vec<&[f64]> = models.iter().map(|m| m.b.as_slice()).collect();
    Ok(ModelSimilarity {
        std_pct_a: relative_spread(&a)?,
        std_pct_b: relative_spread(&b)?,
    })
}

fn relative_spread(mats: &[&[f64]]) -> Result<f64> {
    let n = mats.len() as f64;
    let mut total = 0.0;
    let mut included = 0usize;
    for e in 0..mats[0].len() {
        let mean = mats.iter().map(|m| m[e]).sum::<f64>() / n;
        if mean.abs() < SIMILARITY_MEAN_FLOOR {
            continue;
        }
        let var = mats.iter().map(|m| (m[e] - mean).powi(2)).sum::<f64>() / n;
        total += var.sqrt() / mean.abs();
        included += 1;
    }
    if included == 0 {
        return Err(Error::Degenerate("every matrix entry has a near-zero mean".into()));
    }
    Ok(100.0 * total / included as f64)
}

pub const DEFAULT_HEATMAP_GRID: (usize, usize) = (60, 40);

/// Normalized occupancy over the world rectangle. `cells[iy * nx + ix]`,
/// with `iy = 0` at the bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub nx: usize,
    pub ny: usize,
    pub bounds: [f64; 2],
    pub cells: Vec<f64>,
}

impl Heatmap {
    pub fn cell(&self, ix: usize, iy: usize) -> f64 {
        self.cells[iy * self.nx + ix]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["ix", "iy", "x_center", "y_center", "fraction"]).map_err(|e| csv_err(path, e))?;
        let (hx, hy) = (self.bounds[0] / self.nx as f64, self.bounds[1] / self.ny as f64);
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                w.serialize((ix, iy, (ix as f64 + 0.5) * hx, (iy as f64 + 0.5) * hy, self.cell(ix, iy)))
                    .map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn bin(v: f64, len: f64, n: usize) -> usize {
    let i = (v / len * n as f64).floor();
    if i.is_nan() || i < 0.0 {
        0
    } else {
        (i as usize).min(n - 1)
    }
}

/// Bin every (x, y) sample; out-of-domain samples land in the nearest edge
/// cell so the grid still sums to one.
pub fn heatmap(logs: &[&TrialLog], grid: (usize, usize), bounds: [f64; 2]) -> Result<Heatmap> {
    let (nx, ny) = grid;
    if nx == 0 || ny == 0 {
        return Err(Error::Config("heatmap grid must be at least 1x1".into()));
    }
    let mut counts = vec![0u64; nx * ny];
    let mut total = 0u64;
    for log in logs {
        for s in &log.samples {
            counts[bin(s.state.y, bounds[1], ny) * nx + bin(s.state.x, bounds[0], nx)] += 1;
            total += 1;
        }
    }
    let cells = if total == 0 {
        vec![0.0; nx * ny]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    Ok(Heatmap { nx, ny, bounds, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErgodicSpec {
    pub bounds: [f64; 2],
    /// Centre of the target Gaussian.
    pub goal: [f64; 2],
    pub k_max: usize,
    pub sigma_goal: f64,
    pub s: f64,
    /// Midpoint quadrature cells per axis.
    pub grid: usize,
}

impl Default for ErgodicSpec {
    fn default() -> Self {
        Self::for_world(&WorldParams::default())
    }
}

impl ErgodicSpec {
    pub fn for_world(world: &WorldParams) -> Self {
        Self {
            bounds: [world.l1, world.l2],
            goal: world.goal,
            k_max: 10,
            sigma_goal: 1.0,
            s: 1.5,
            grid: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.k_max >= 1
            && self.sigma_goal.is_finite()
            && self.sigma_goal > 0.0
            && self.s.is_finite()
            && self.s > 0.0
            && self.grid >= 1
            && self.bounds.iter().all(|b| b.is_finite() && *b > 0.0)
            && self.goal.iter().all(|g| g.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid ergodic spec: {self:?}")))
        }
    }

    /// Precompute the target coefficients.
    pub fn target(&self) -> Result<ErgodicTarget> {
        self.validate()?;
        let m = self.k_max + 1;
        let axis = |len: f64, centre: f64| -> Vec<f64> {
            let h = len / self.grid as f64;
            let xs: Vec<f64> = (0..self.grid).map(|i| (i as f64 + 0.5) * h).collect();
            let w: Vec<f64> = xs.iter().map(|x| (-0.5 * ((x - centre) / self.sigma_goal).powi(2)).exp()).collect();
            let mass: f64 = w.iter().sum();
            (0..m)
                .map(|k| xs.iter().zip(&w).map(|(x, wi)| wi * (k as f64 * PI * x / len).cos()).sum::<f64>() / mass)
                .collect()
        };
        // The truncated Gaussian separates, so each axis is integrated once.
        let gx = axis(self.bounds[0], self.goal[0]);
        let gy = axis(self.bounds[1], self.goal[1]);
        let mut phi = Vec::with_capacity(m * m);
        let mut lambda = Vec::with_capacity(m * m);
        let mut inv_h = Vec::with_capacity(m * m);
        for k1 in 0..m {
            for k2 in 0..m {
                let ih = 1.0 / (half_len(k1, self.bounds[0]) * half_len(k2, self.bounds[1])).sqrt();
                inv_h.push(ih);
                phi.push(ih * gx[k1] * gy[k2]);
                lambda.push((1.0 + (k1 * k1 + k2 * k2) as f64).powf(-self.s));
            }
        }
        Ok(ErgodicTarget { spec: self.clone(), phi, lambda, inv_h })
    }
}

fn half_len(k: usize, len: f64) -> f64 {
    if k == 0 {
        len
    } else {
        len / 2.0
    }
}

/// Cached target coefficients for one spec. Index `k1 * (k_max + 1) + k2`.
#[derive(Debug, Clone)]
pub struct ErgodicTarget {
    spec: ErgodicSpec,
    phi: Vec<f64>,
    lambda: Vec<f64>,
    inv_h: Vec<f64>,
}

impl ErgodicTarget {
    pub fn spec(&self) -> &ErgodicSpec {
        &self.spec
    }

    pub fn phi(&self, k1: usize, k2: usize) -> f64 {
        self.phi[k1 * (self.spec.k_max + 1) + k2]
    }

    /// Empirical coefficients of a set of positions.
    pub fn coefficients(&self, points: &[[f64; 2]]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(Error::Degenerate("ergodicity needs at least one sample".into()));
        }
        let m = self.spec.k_max + 1;
        let [l1, l2] = self.spec.bounds;
        let mut c = vec![0.0; m * m];
        let mut cx = vec![0.0; m];
        let mut cy = vec![0.0; m];
        for p in points {
            for k in 0..m {
                cx[k] = (k as f64 * PI * p[0] / l1).cos();
                cy[k] = (k as f64 * PI * p[1] / l2).cos();
            }
            for k1 in 0..m {
                for k2 in 0..m {
                    c[k1 * m + k2] += cx[k1] * cy[k2];
                }
            }
        }
        let n = points.len() as f64;
        Ok(c.iter().zip(&self.inv_h).map(|(s, ih)| ih * s / n).collect())
    }

    /// Weighted squared distance between trajectory and target coefficients.
    /// The (0, 0) mode is equal on both sides by normalization and is skipped.
    pub fn epsilon(&self, points: &[[f64; 2]]) -> Result<f64> {
        let c = self.coefficients(points)?;
        Ok(c.iter()
            .zip(&self.phi)
            .zip(&self.lambda)
            .skip(1)
            .map(|((ck, pk), l)| l * (ck - pk).powi(2))
            .sum())
    }
}

pub fn ergodicity(log: &TrialLog, target: &ErgodicTarget) -> Result<f64> {
    let pts: Vec<[f64; 2]> = log.samples.iter().map(|s| [s.state.x, s.state.y]).collect();
    target.epsilon(&pts)
}

/// One row of the per-trial table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub pilot_id: String,
    pub paradigm: Paradigm,
    pub seed: u64,
    pub status: TrialStatus,
    pub success: bool,
    pub steps: usize,
    pub time_s: f64,
    pub path_length_m: f64,
    pub total_cost: f64,
    pub agreement: Option<f64>,
    pub epsilon: f64,
}

pub fn trial_record(log: &TrialLog, cost: &CostSpec, target: &ErgodicTarget) -> Result<TrialRecord> {
    let m = trial_metrics(log, cost)?;
    Ok(TrialRecord {
        pilot_id: log.pilot_id.clone(),
        paradigm: log.paradigm,
        seed: log.seed,
        status: log.outcome.status,
        success: m.success,
        steps: log.outcome.steps,
        time_s: m.time_s,
        path_length_m: m.path_length_m,
        total_cost: m.total_cost,
        agreement: if log.paradigm.is_shared() { Some(agreement(log)?) } else { None },
        epsilon: ergodicity(log, target)?,
    })
}

pub fn write_records_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    if records.is_empty() {
        w.write_record([
            "pilot_id", "paradigm", "seed", "status", "success", "steps", "time_s", "path_length_m", "total_cost",
            "agreement", "epsilon",
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}
