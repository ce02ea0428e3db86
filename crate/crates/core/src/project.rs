//! Grid posterior over the exponential reported-loss curve
//! N(t) = N∞·(1 − e^{−αt}), updated from approved death counts.

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SIGMA_OBS: f64 = 0.2;
/// Counts and curve values are floored here before taking logs.
pub const COUNT_FLOOR: f64 = 0.5;
const QUANTILE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModelParams {
    pub n_inf: f64,
    /// Reporting rate per hour.
    pub alpha: f64,
}

pub fn loss_curve(params: &LossModelParams, t: f64) -> Result<f64, ProjectError> {
    if !(t >= 0.0) {
        return Err(ProjectError::Input(format!("time must be non-negative, got {t}")));
    }
    Ok(curve(params.n_inf, params.alpha, t))
}

fn curve(n_inf: f64, alpha: f64, t: f64) -> f64 {
    -n_inf * (-alpha * t).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub median_deaths: f64,
    /// Standard deviation of log10 N∞.
    pub dispersion_log10: f64,
    #[serde(default = "default_sigma_obs")]
    pub sigma_obs: f64,
}

fn default_sigma_obs() -> f64 {
    DEFAULT_SIGMA_OBS
}

/// Geometric grid extents, as log10 bounds and point counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub log_n_min: f64,
    pub log_n_max: f64,
    pub n_points: usize,
    pub log_alpha_min: f64,
    pub log_alpha_max: f64,
    pub alpha_points: usize,
}

impl Default for GridAxes {
    fn default() -> Self {
        Self {
            log_n_min: 0.0,
            log_n_max: 5.5,
            n_points: 111,
            log_alpha_min: -3.0,
            log_alpha_max: 1.0,
            alpha_points: 81,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Hours since origin.
    pub t: f64,
    pub n_obs: u64,
}

impl Observation {
    pub fn validate(&self) -> Result<(), ProjectError> {
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(ProjectError::Input(format!("observation time must be positive, got {}", self.t)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    /// log10 N∞ at each grid row.
    pub axis_log_n: Vec<f64>,
    /// α at each grid column.
    pub axis_alpha: Vec<f64>,
    /// Normalised log weights, row-major over (N∞, α).
    pub log_weights: Vec<f64>,
    pub prior: PriorSpec,
    pub sigma_obs: f64,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn init_prior(spec: &PriorSpec) -> Result<PosteriorGrid, ProjectError> {
    init_prior_on(spec, &GridAxes::default())
}

/// Lognormal prior on N∞ times a log-uniform prior on α.
pub fn init_prior_on(spec: &PriorSpec, axes: &GridAxes) -> Result<PosteriorGrid, ProjectError> {
    if axes.n_points < 2 || axes.alpha_points < 1 || axes.log_n_max <= axes.log_n_min || axes.log_alpha_max < axes.log_alpha_min {
        return Err(ProjectError::Config("grid axes must be increasing".into()));
    }
    if !(spec.median_deaths > 0.0) {
        return Err(ProjectError::Config("prior median must be positive".into()));
    }
    let log_median = spec.median_deaths.log10();
    if log_median < axes.log_n_min || log_median > axes.log_n_max {
        return Err(ProjectError::Config(format!(
            "prior median {} outside grid 10^{}..10^{}",
            spec.median_deaths, axes.log_n_min, axes.log_n_max
        )));
    }
    if !(spec.dispersion_log10 > 0.0) || !spec.dispersion_log10.is_finite() {
        return Err(ProjectError::Config("prior dispersion must be positive".into()));
    }
    if !(spec.sigma_obs > 0.0) {
        return Err(ProjectError::Config("sigma_obs must be positive".into()));
    }
    let axis_log_n = linspace(axes.log_n_min, axes.log_n_max, axes.n_points);
    let axis_alpha: Vec<f64> = linspace(axes.log_alpha_min, axes.log_alpha_max, axes.alpha_points)
        .into_iter()
        .map(|x| 10f64.powf(x))
        .collect();
    let mut log_weights = Vec::with_capacity(axis_log_n.len() * axis_alpha.len());
    for &x in &axis_log_n {
        let z = (x - log_median) / spec.dispersion_log10;
        let lw = -0.5 * z * z;
        log_weights.extend(std::iter::repeat_n(lw, axis_alpha.len()));
    }
    let mut grid = PosteriorGrid {
        axis_log_n,
        axis_alpha,
        log_weights,
        prior: *spec,
        sigma_obs: spec.sigma_obs,
    };
    grid.normalize();
    Ok(grid)
}

impl PosteriorGrid {
    fn normalize(&mut self) {
        let z = log_sum_exp(&self.log_weights);
        self.log_weights.iter_mut().for_each(|w| *w -= z);
    }

    pub fn n_alpha(&self) -> usize {
        self.axis_alpha.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn params(&self, i: usize, j: usize) -> LossModelParams {
        LossModelParams {
            n_inf: 10f64.powf(self.axis_log_n[i]),
            alpha: self.axis_alpha[j],
        }
    }

    /// Marginal distribution of N∞ over the rows.
    pub fn marginal_n(&self) -> Vec<f64> {
        self.log_weights
            .chunks(self.n_alpha())
            .map(|row| row.iter().map(|w| w.exp()).sum())
            .collect()
    }

    /// N∞ at the mode of its marginal.
    pub fn map_n(&self) -> f64 {
        let m = self.marginal_n();
        let i = (0..m.len()).fold(0, |best, i| if m[i] > m[best] { i } else { best });
        10f64.powf(self.axis_log_n[i])
    }

    /// Cell (i, j) with the largest joint weight.
    pub fn map_params(&self) -> LossModelParams {
        let best = (0..self.log_weights.len()).fold(0, |b, c| {
            if self.log_weights[c] > self.log_weights[b] { c } else { b }
        });
        self.params(best / self.n_alpha(), best % self.n_alpha())
    }

    /// Shannon entropy of the joint grid weights, in nats.
    pub fn entropy(&self) -> f64 {
        self.log_weights
            .iter()
            .filter(|w| w.is_finite())
            .map(|&w| -w.exp() * w)
            .sum()
    }

    fn log_likelihood(&self, obs: &Observation, i: usize, j: usize) -> f64 {
        let n_inf = 10f64.powf(self.axis_log_n[i]);
        let expected = curve(n_inf, self.axis_alpha[j], obs.t).max(COUNT_FLOOR);
        let observed = (obs.n_obs as f64).max(COUNT_FLOOR);
        let d = observed.log10() - expected.log10();
        -d * d / (2.0 * self.sigma_obs * self.sigma_obs)
    }

    fn add_log_likelihood(&mut self, obs: &Observation) {
        let na = self.n_alpha();
        for i in 0..self.axis_log_n.len() {
            for j in 0..na {
                self.log_weights[i * na + j] += self.log_likelihood(obs, i, j);
            }
        }
    }
}

pub fn update_posterior(grid: &mut PosteriorGrid, obs: &Observation) -> Result<(), ProjectError> {
    obs.validate()?;
    grid.add_log_likelihood(obs);
    grid.normalize();
    Ok(())
}

/// Joint update with several observations, normalising once.
pub fn update_many(grid: &mut PosteriorGrid, observations: &[Observation]) -> Result<(), ProjectError> {
    for obs in observations {
        obs.validate()?;
    }
    for obs in observations {
        grid.add_log_likelihood(obs);
    }
    grid.normalize();
    Ok(())
}

/// Lower edges of the decade bins; the last bin is open above.
pub const BIN_EDGES: [f64; 7] = [0.0, 1.0, 10.0, 100.0, 1_000.0, 10_000.0, 100_000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub low: f64,
    /// `None` for the open top bin.
    pub high: Option<f64>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub timestamp: DateTime<Utc>,
    pub bins: Vec<Bin>,
}

impl BinReport {
    pub fn probabilities(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.probability).collect()
    }

    /// Index of the most probable bin.
    pub fn modal_bin(&self) -> usize {
        let p = self.probabilities();
        (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
    }
}

/// Spreads each row's marginal mass uniformly in log10 over its cell
/// (midpoints between neighbouring grid points, half a step beyond the ends)
/// and sums the pieces falling in each decade bin.
pub fn bin_probabilities(grid: &PosteriorGrid, timestamp: DateTime<Utc>) -> BinReport {
    let marginal = grid.marginal_n();
    let x = &grid.axis_log_n;
    let n = x.len();
    let mut probs = [0.0; BIN_EDGES.len()];
    for i in 0..n {
        let lo = if i == 0 { x[0] - (x[1] - x[0]) / 2.0 } else { (x[i - 1] + x[i]) / 2.0 };
        let hi = if i + 1 == n { x[n - 1] + (x[n - 1] - x[n - 2]) / 2.0 } else { (x[i] + x[i + 1]) / 2.0 };
        let width = hi - lo;
        for (b, p) in probs.iter_mut().enumerate() {
            let b_lo = if b == 0 { f64::NEG_INFINITY } else { BIN_EDGES[b].log10() };
            let b_hi = if b + 1 == BIN_EDGES.len() { f64::INFINITY } else { BIN_EDGES[b + 1].log10() };
            let overlap = (hi.min(b_hi) - lo.max(b_lo)).max(0.0);
            *p += marginal[i] * overlap / width;
        }
    }
    let total: f64 = probs.iter().sum();
    BinReport {
        timestamp,
        bins: BIN_EDGES
            .iter()
            .enumerate()
            .map(|(b, &low)| Bin {
                low,
                high: BIN_EDGES.get(b + 1).copied(),
                probability: probs[b] / total,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
}

/// N∞ at quantile `q` of its marginal: the first grid point whose
/// cumulative mass reaches `q`.
pub fn quantile_n(grid: &PosteriorGrid, q: f64) -> f64 {
    let marginal = grid.marginal_n();
    let mut cumulative = 0.0;
    for (i, m) in marginal.iter().enumerate() {
        cumulative += m;
        if cumulative >= q - QUANTILE_SLACK {
            return 10f64.powf(grid.axis_log_n[i]);
        }
    }
    10f64.powf(*grid.axis_log_n.last().expect("grid is non-empty"))
}

pub fn project_final(grid: &PosteriorGrid) -> Projection {
    Projection {
        median: quantile_n(grid, 0.5),
        p05: quantile_n(grid, 0.05),
        p95: quantile_n(grid, 0.95),
    }
}

pub const BINS_HEADER: [&str; 4] = ["timestamp", "bin_low", "bin_high", "probability"];

/// `timestamp,bin_low,bin_high,probability`, one row per bin per report.
/// The open top bin has an empty `bin_high`.
pub fn write_bins_csv<'a, I>(reports: I) -> String
where
    I: IntoIterator<Item = &'a BinReport>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BINS_HEADER).expect("in-memory write");
    for report in reports {
        let ts = report.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true);
        for bin in &report.bins {
            w.write_record([
                ts.clone(),
                bin.low.to_string(),
                bin.high.map(|h| h.to_string()).unwrap_or_default(),
                bin.probability.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}
