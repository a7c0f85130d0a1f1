//! Convergence and fit checks: log-posterior autocorrelation and effective
//! sample size, residual autocorrelation at the mode, variance reduction.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{mean, ChainState, ModelKind, ObservedCells};

/// Minimum present points for a residual autocorrelation.
pub const MIN_RESIDUAL_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AcfReport {
    pub id: String,
    /// `acf[k]` is the lag-`k` autocorrelation; `acf[0] = 1`.
    pub acf: Vec<f64>,
    pub ess: f64,
    /// Set when the series is constant and the ACF undefined.
    pub constant: bool,
}

/// Biased ACF estimator, with effective sample size
/// `N / (1 + 2 sum_k acf(k))` summed until the first nonpositive lag.
pub fn trace_acf(id: impl Into<String>, series: &[f64], max_lag: usize) -> Result<AcfReport> {
    let n = series.len();
    if n <= max_lag {
        return Err(Error::InvalidArgument(format!(
            "series of length {n} is too short for lag {max_lag}"
        )));
    }
    let m = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - m).collect();
    let c0: f64 = dev.iter().map(|d| d * d).sum::<f64>() / n as f64;
    let scale = series.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    if c0.sqrt() <= 1e-12 * scale {
        return Ok(AcfReport {
            id: id.into(),
            acf: vec![1.0],
            ess: n as f64,
            constant: true,
        });
    }
    let acf: Vec<f64> = (0..=max_lag)
        .map(|k| {
            let ck: f64 = dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            (ck / c0).clamp(-1.0, 1.0)
        })
        .collect();
    let tail: f64 = acf[1..].iter().take_while(|&&r| r > 0.0).sum();
    Ok(AcfReport {
        id: id.into(),
        acf,
        ess: (n as f64 / (1.0 + 2.0 * tail)).min(n as f64),
        constant: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualAcf {
    pub gene: usize,
    pub experiment: usize,
    pub points: usize,
    /// `None` for short or constant residual series.
    pub lag1: Option<f64>,
}

impl ResidualAcf {
    /// Whether the lag-1 autocorrelation lies inside `+-2/sqrt(m)`.
    pub fn within_white_noise_band(&self) -> Option<bool> {
        self.lag1.map(|r| r.abs() < 2.0 / (self.points as f64).sqrt())
    }
}

fn lag1(x: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    if (c0 / n).sqrt() <= 1e-12 * scale {
        return None;
    }
    let c1: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    Some(c1 / c0)
}

/// Residuals of one cell at `state`.
pub fn residuals(data: &ObservedCells, state: &ChainState, model: ModelKind, gene: usize, experiment: usize) -> Vec<f64> {
    let cell = data.cell(gene, experiment);
    let p = state.cell(gene, experiment);
    let theta = &state.theta[experiment];
    cell.t
        .iter()
        .zip(&cell.y)
        .map(|(&t, &y)| y - mean(model, theta, state.phi[gene], p, t))
        .collect()
}

/// Lag-1 autocorrelation of the residuals of every cell at the mode.
pub fn residual_acf(data: &ObservedCells, mode: &ChainState, model: ModelKind) -> Result<Vec<ResidualAcf>> {
    data.check_state(mode)?;
    let ne = data.n_experiments;
    Ok((0..data.n_genes * ne)
        .into_par_iter()
        .map(|i| {
            let (g, e) = (i / ne, i % ne);
            let r = residuals(data, mode, model, g, e);
            let lag1 = if r.len() >= MIN_RESIDUAL_POINTS { lag1(&r) } else { None };
            ResidualAcf {
                gene: g,
                experiment: e,
                points: r.len(),
                lag1,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainedVariance {
    /// `1 - SSE / SST`; may be negative.
    pub raw: f64,
    /// `raw` clipped to `[0, 1]` for reporting.
    pub clipped: f64,
}

/// Fraction of each series' variance explained by the fitted mean curve;
/// `None` for series with fewer than two points or zero variance.
pub fn explained_variance(data: &ObservedCells, state: &ChainState, model: ModelKind) -> Vec<Option<ExplainedVariance>> {
    let ne = data.n_experiments;
    (0..data.n_genes * ne)
        .into_par_iter()
        .map(|i| {
            let (g, e) = (i / ne, i % ne);
            let y = &data.cell(g, e).y;
            if y.len() < 2 {
                return None;
            }
            let m = y.iter().sum::<f64>() / y.len() as f64;
            let sst: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
            if sst <= 0.0 {
                return None;
            }
            let sse: f64 = residuals(data, state, model, g, e).iter().map(|r| r * r).sum();
            let raw = 1.0 - sse / sst;
            Some(ExplainedVariance {
                raw,
                clipped: raw.clamp(0.0, 1.0),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReductionRow {
    pub gene: usize,
    pub experiment: usize,
    pub real: Option<ExplainedVariance>,
    pub permuted: Option<ExplainedVariance>,
}

/// Pairs the explained-variance fractions of the real and permuted fits.
pub fn variance_reduction(
    real: &ObservedCells,
    permuted: &ObservedCells,
    real_mode: &ChainState,
    permuted_mode: &ChainState,
    model: ModelKind,
) -> Result<Vec<VarianceReductionRow>> {
    if real.n_genes != permuted.n_genes || real.n_experiments != permuted.n_experiments {
        return Err(Error::Shape("real and permuted data differ in shape".into()));
    }
    real.check_state(real_mode)?;
    permuted.check_state(permuted_mode)?;
    let a = explained_variance(real, real_mode, model);
    let b = explained_variance(permuted, permuted_mode, model);
    let ne = real.n_experiments;
    Ok(a.into_iter()
        .zip(b)
        .enumerate()
        .map(|(i, (real, permuted))| VarianceReductionRow {
            gene: i / ne,
            experiment: i % ne,
            real,
            permuted,
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| v.to_string())
}

pub fn acf_tsv(reports: &[AcfReport]) -> String {
    let mut s = String::from("series\tlag\tacf\tess\tconstant\n");
    for r in reports {
        for (k, a) in r.acf.iter().enumerate() {
            let _ = writeln!(s, "{}\t{k}\t{a}\t{}\t{}", r.id, r.ess, u8::from(r.constant));
        }
    }
    s
}

pub fn residual_acf_tsv(rows: &[ResidualAcf], genes: &[String], experiments: &[String]) -> String {
    let mut s = String::from("gene\texperiment\tpoints\tlag1\twithin_band\n");
    for r in rows {
        let band = r.within_white_noise_band().map_or("NA", |b| if b { "1" } else { "0" });
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{band}",
            genes[r.gene],
            experiments[r.experiment],
            r.points,
            opt(r.lag1)
        );
    }
    s
}

pub fn variance_reduction_tsv(rows: &[VarianceReductionRow], genes: &[String], experiments: &[String]) -> String {
    let mut s = String::from("gene\texperiment\treal_raw\treal_clipped\tpermuted_raw\tpermuted_clipped\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            genes[r.gene],
            experiments[r.experiment],
            opt(r.real.map(|v| v.raw)),
            opt(r.real.map(|v| v.clipped)),
            opt(r.permuted.map(|v| v.raw)),
            opt(r.permuted.map(|v| v.clipped)),
        );
    }
    s
}
