//! Parameter types, prior densities and the joint log-posterior of the
//! periodic model (M1) and the trend-only null model (M0).
//!
//! For gene `g` in experiment `e` at time `t` the M1 mean is
//!
//! ```text
//! a + b t + c min(t - d, 0)^2 + A cos(mu_e t + psi_e + phi_g) exp(-lambda_e t)
//! ```
//!
//! with i.i.d. `N(0, sigma2)` noise per series; M0 drops the periodic term.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::Config;
use crate::dataset::{Observation, TimeSeriesMatrix};
use crate::dist::{exp_ln_pdf, normal_ln_pdf, wrapped_prior_ln_pdf, ScaledInvChiSq, TruncatedExp};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Trend only.
    M0,
    /// Trend plus damped periodic component.
    M1,
}

impl ModelKind {
    pub fn is_periodic(self) -> bool {
        self == ModelKind::M1
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m0" | "null" => Ok(ModelKind::M0),
            "m1" | "periodic" => Ok(ModelKind::M1),
            _ => Err(Error::InvalidArgument(format!("unknown model `{s}` (expected m0 or m1)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::M0 => "m0",
            ModelKind::M1 => "m1",
        })
    }
}

/// Constants `C1..C13` of the prior distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConstants {
    /// C1: variance of the intercept `a`.
    pub intercept_var: f64,
    /// C2: variance of the slope `b`.
    pub slope_var: f64,
    /// C3: variance of the block-release magnitude `c`.
    pub block_var: f64,
    /// C4: upper bound of the block-release end time `d`.
    pub block_end_max: f64,
    /// C5: rate of the exponential amplitude prior.
    pub amp_rate: f64,
    /// C6: upper bound of the amplitude.
    pub amp_max: f64,
    /// C7: lower bound of the angular frequency.
    pub freq_min: f64,
    /// C8: upper bound of the angular frequency.
    pub freq_max: f64,
    /// C9: prior variance of the first experiment's phase.
    pub ref_phase_var: f64,
    /// C10: prior variance of the other experiments' phases.
    pub phase_var: f64,
    /// C11: upper bound of the damping rate.
    pub damping_max: f64,
    /// C12: degrees of freedom of the noise-variance prior.
    pub noise_dof: f64,
    /// C13: rate of the exponential prior on the noise scale `zeta`.
    pub zeta_rate: f64,
}

impl Default for PriorConstants {
    fn default() -> Self {
        Self {
            intercept_var: 1.0,
            slope_var: 0.005 * 0.005,
            block_var: 0.0001 * 0.0001,
            block_end_max: 500.0,
            amp_rate: 10.0,
            amp_max: 10.0,
            freq_min: TAU / 180.0,
            freq_max: TAU / 120.0,
            ref_phase_var: 0.2 * 0.2,
            phase_var: 1.0,
            damping_max: 0.006,
            noise_dof: 4.0,
            zeta_rate: 50.0,
        }
    }
}

impl PriorConstants {
    pub const KEYS: [&'static str; 13] = [
        "C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "C10", "C11", "C12", "C13",
    ];

    pub fn as_array(&self) -> [f64; 13] {
        [
            self.intercept_var,
            self.slope_var,
            self.block_var,
            self.block_end_max,
            self.amp_rate,
            self.amp_max,
            self.freq_min,
            self.freq_max,
            self.ref_phase_var,
            self.phase_var,
            self.damping_max,
            self.noise_dof,
            self.zeta_rate,
        ]
    }

    pub fn from_array(c: [f64; 13]) -> Result<Self> {
        let consts = Self {
            intercept_var: c[0],
            slope_var: c[1],
            block_var: c[2],
            block_end_max: c[3],
            amp_rate: c[4],
            amp_max: c[5],
            freq_min: c[6],
            freq_max: c[7],
            ref_phase_var: c[8],
            phase_var: c[9],
            damping_max: c[10],
            noise_dof: c[11],
            zeta_rate: c[12],
        };
        consts.validate()?;
        Ok(consts)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.as_array().iter().position(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config(format!("C{} must be positive and finite", i + 1)));
        }
        if self.freq_min >= self.freq_max {
            return Err(Error::Config("C7 must be smaller than C8".into()));
        }
        Ok(())
    }

    /// Defaults overridden by any `C1..C13` keys present in `config`.
    pub fn from_config(config: &Config) -> Result<Self> {
        let mut c = Self::default().as_array();
        for (slot, key) in c.iter_mut().zip(Self::KEYS) {
            if let Some(v) = config.get::<f64>(key)? {
                *slot = v;
            }
        }
        Self::from_array(c)
    }

    pub fn write_to(&self, config: &mut Config) {
        for (v, key) in self.as_array().into_iter().zip(Self::KEYS) {
            config.set(key, v);
        }
    }

    pub fn phase_prior_var(&self, experiment: usize) -> f64 {
        if experiment == 0 {
            self.ref_phase_var
        } else {
            self.phase_var
        }
    }
}

/// Parameters shared by all genes of one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentParams {
    /// Angular frequency in radians per minute.
    pub mu: f64,
    /// Experiment phase in `[-pi, pi)`.
    pub psi: f64,
    /// Damping rate per minute.
    pub lambda: f64,
    /// Scale of the noise-variance prior.
    pub zeta: f64,
}

impl ExperimentParams {
    pub fn period(&self) -> f64 {
        TAU / self.mu
    }
}

/// Parameters of one (gene, experiment) series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// End time of the block-release term.
    pub d: f64,
    /// Amplitude of the periodic component.
    pub amp: f64,
    pub sigma2: f64,
}

/// A full assignment of all parameters plus its log-posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<ExperimentParams>,
    pub phi: Vec<f64>,
    /// Gene-major grid: cell `(g, e)` is at `g * E + e`.
    pub gamma: Vec<CellParams>,
    pub log_posterior: f64,
}

impl ChainState {
    pub fn n_genes(&self) -> usize {
        self.phi.len()
    }

    pub fn n_experiments(&self) -> usize {
        self.theta.len()
    }

    pub fn cell(&self, gene: usize, experiment: usize) -> &CellParams {
        &self.gamma[gene * self.theta.len() + experiment]
    }

    pub fn cell_mut(&mut self, gene: usize, experiment: usize) -> &mut CellParams {
        let e = self.theta.len();
        &mut self.gamma[gene * e + experiment]
    }

    /// Relative phase of a gene, `phi_g + psi_1`, wrapped.
    pub fn relative_phase(&self, gene: usize) -> f64 {
        crate::dist::wrap_angle(self.phi[gene] + self.theta[0].psi)
    }
}

#[inline]
pub fn trend(cell: &CellParams, t: f64) -> f64 {
    let q = (t - cell.d).min(0.0);
    cell.a + cell.b * t + cell.c * q * q
}

/// Unit-amplitude damped cosine `cos(mu t + psi + phi) exp(-lambda t)`.
#[inline]
pub fn wave(theta: &ExperimentParams, phi: f64, t: f64) -> f64 {
    (theta.mu * t + theta.psi + phi).cos() * (-theta.lambda * t).exp()
}

pub fn mean_m1(theta: &ExperimentParams, phi: f64, cell: &CellParams, t: f64) -> f64 {
    trend(cell, t) + cell.amp * wave(theta, phi, t)
}

pub fn mean_m0(cell: &CellParams, t: f64) -> f64 {
    trend(cell, t)
}

#[inline]
pub fn mean(model: ModelKind, theta: &ExperimentParams, phi: f64, cell: &CellParams, t: f64) -> f64 {
    match model {
        ModelKind::M0 => mean_m0(cell, t),
        ModelKind::M1 => mean_m1(theta, phi, cell, t),
    }
}

/// Present observations of one series, as parallel slices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellData {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl CellData {
    pub fn from_series(series: &[Observation], times: &[f64]) -> Self {
        let (t, y) = series
            .iter()
            .zip(times)
            .filter_map(|(o, &t)| o.map(|v| (t, v)))
            .unzip();
        Self { t, y }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Present data of a whole matrix, gene-major like [`ChainState::gamma`].
#[derive(Debug, Clone)]
pub struct ObservedCells {
    pub n_genes: usize,
    pub n_experiments: usize,
    pub cells: Vec<CellData>,
}

impl ObservedCells {
    pub fn new(matrix: &TimeSeriesMatrix) -> Self {
        let (n_genes, n_experiments) = (matrix.n_genes(), matrix.n_experiments());
        let mut cells = Vec::with_capacity(n_genes * n_experiments);
        for g in 0..n_genes {
            for e in 0..n_experiments {
                cells.push(CellData::from_series(matrix.series(g, e), matrix.times(e)));
            }
        }
        Self {
            n_genes,
            n_experiments,
            cells,
        }
    }

    pub fn cell(&self, gene: usize, experiment: usize) -> &CellData {
        &self.cells[gene * self.n_experiments + experiment]
    }

    pub fn check_state(&self, state: &ChainState) -> Result<()> {
        if state.n_genes() != self.n_genes
            || state.n_experiments() != self.n_experiments
            || state.gamma.len() != self.cells.len()
        {
            return Err(Error::Shape(format!(
                "state is {}x{} but data is {}x{}",
                state.n_genes(),
                state.n_experiments(),
                self.n_genes,
                self.n_experiments
            )));
        }
        Ok(())
    }
}

/// Residual sum of squares of one series around the model mean.
pub fn cell_sse(
    data: &CellData,
    theta: &ExperimentParams,
    phi: f64,
    cell: &CellParams,
    model: ModelKind,
) -> f64 {
    data.t
        .iter()
        .zip(&data.y)
        .map(|(&t, &y)| {
            let r = y - mean(model, theta, phi, cell, t);
            r * r
        })
        .sum()
}

fn gaussian_ll(n: usize, sse: f64, sigma2: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    -0.5 * n as f64 * (LN_2PI + sigma2.ln()) - 0.5 * sse / sigma2
}

pub fn cell_log_likelihood(
    data: &CellData,
    theta: &ExperimentParams,
    phi: f64,
    cell: &CellParams,
    model: ModelKind,
) -> f64 {
    gaussian_ll(data.len(), cell_sse(data, theta, phi, cell, model), cell.sigma2)
}

/// Gaussian log-likelihood of one series; absent observations are skipped.
pub fn log_likelihood_cell(
    series: &[Observation],
    times: &[f64],
    theta: &ExperimentParams,
    phi: f64,
    cell: &CellParams,
    model: ModelKind,
) -> Result<f64> {
    if series.len() != times.len() {
        return Err(Error::Shape(format!(
            "{} observations for {} time points",
            series.len(),
            times.len()
        )));
    }
    if !(cell.sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be positive, got {}",
            cell.sigma2
        )));
    }
    Ok(cell_log_likelihood(
        &CellData::from_series(series, times),
        theta,
        phi,
        cell,
        model,
    ))
}

/// Trend-parameter prior: `a ~ N(0,C1)`, `b ~ N(0,C2)`, `c ~ N(0,C3)`,
/// `d ~ U(0,C4)`.
pub fn trend_log_prior(cell: &CellParams, consts: &PriorConstants) -> f64 {
    if !(0.0..consts.block_end_max).contains(&cell.d) {
        return f64::NEG_INFINITY;
    }
    normal_ln_pdf(cell.a, 0.0, consts.intercept_var)
        + normal_ln_pdf(cell.b, 0.0, consts.slope_var)
        + normal_ln_pdf(cell.c, 0.0, consts.block_var)
        - consts.block_end_max.ln()
}

pub fn amplitude_log_prior(amp: f64, consts: &PriorConstants) -> f64 {
    TruncatedExp::new(consts.amp_rate, consts.amp_max).ln_pdf(amp)
}

pub fn noise_log_prior(sigma2: f64, zeta: f64, consts: &PriorConstants) -> f64 {
    ScaledInvChiSq::new(consts.noise_dof, zeta).ln_pdf(sigma2)
}

/// All prior factors owned by one cell.
pub fn cell_log_prior(cell: &CellParams, zeta: f64, consts: &PriorConstants, model: ModelKind) -> f64 {
    let mut lp = trend_log_prior(cell, consts) + noise_log_prior(cell.sigma2, zeta, consts);
    if model.is_periodic() {
        lp += amplitude_log_prior(cell.amp, consts);
    }
    lp
}

pub fn phase_log_prior(psi: f64, experiment: usize, consts: &PriorConstants) -> f64 {
    wrapped_prior_ln_pdf(psi, consts.phase_prior_var(experiment))
}

/// Prior factors owned by one experiment.
pub fn experiment_log_prior(
    theta: &ExperimentParams,
    experiment: usize,
    consts: &PriorConstants,
    model: ModelKind,
) -> f64 {
    if !(theta.zeta > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut lp = exp_ln_pdf(theta.zeta, consts.zeta_rate);
    if model.is_periodic() {
        if !(consts.freq_min..consts.freq_max).contains(&theta.mu)
            || !(0.0..consts.damping_max).contains(&theta.lambda)
        {
            return f64::NEG_INFINITY;
        }
        lp += -(consts.freq_max - consts.freq_min).ln()
            - consts.damping_max.ln()
            + phase_log_prior(theta.psi, experiment, consts);
    }
    lp
}

pub fn gene_phase_log_prior(phi: f64, model: ModelKind) -> f64 {
    match model {
        ModelKind::M0 => 0.0,
        ModelKind::M1 if (-PI..PI).contains(&phi) => -TAU.ln(),
        ModelKind::M1 => f64::NEG_INFINITY,
    }
}

/// Joint log prior density. Out-of-support values give `-inf`.
pub fn log_prior(state: &ChainState, consts: &PriorConstants, model: ModelKind) -> f64 {
    let ne = state.n_experiments();
    let mut lp: f64 = state
        .theta
        .iter()
        .enumerate()
        .map(|(e, th)| experiment_log_prior(th, e, consts, model))
        .sum();
    lp += state.phi.iter().map(|&p| gene_phase_log_prior(p, model)).sum::<f64>();
    lp += state
        .gamma
        .iter()
        .enumerate()
        .map(|(i, cell)| cell_log_prior(cell, state.theta[i % ne].zeta, consts, model))
        .sum::<f64>();
    lp
}

/// Per-cell log-likelihood terms in gene-major order.
pub fn cell_log_likelihoods(state: &ChainState, data: &ObservedCells, model: ModelKind) -> Vec<f64> {
    let ne = data.n_experiments;
    data.cells
        .par_iter()
        .enumerate()
        .map(|(i, cd)| {
            let (g, e) = (i / ne, i % ne);
            cell_log_likelihood(cd, &state.theta[e], state.phi[g], &state.gamma[i], model)
        })
        .collect()
}

pub fn total_log_likelihood(state: &ChainState, data: &ObservedCells, model: ModelKind) -> f64 {
    cell_log_likelihoods(state, data, model).iter().sum()
}

/// Joint log density of data and parameters, summed in a fixed order so the
/// value does not depend on the thread count.
pub fn log_posterior_observed(
    state: &ChainState,
    data: &ObservedCells,
    consts: &PriorConstants,
    model: ModelKind,
) -> f64 {
    let lp = log_prior(state, consts, model);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    lp + total_log_likelihood(state, data, model)
}

pub fn log_posterior(
    state: &ChainState,
    matrix: &TimeSeriesMatrix,
    consts: &PriorConstants,
    model: ModelKind,
) -> Result<f64> {
    let data = ObservedCells::new(matrix);
    data.check_state(state)?;
    if let Some(bad) = state.gamma.iter().find(|c| !(c.sigma2 > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be positive, got {}",
            bad.sigma2
        )));
    }
    Ok(log_posterior_observed(state, &data, consts, model))
}

/// Names the first factor of the joint density that is not finite, if any.
pub fn first_non_finite_factor(
    state: &ChainState,
    data: &ObservedCells,
    consts: &PriorConstants,
    model: ModelKind,
) -> Option<String> {
    let ne = state.n_experiments();
    for (e, th) in state.theta.iter().enumerate() {
        if !experiment_log_prior(th, e, consts, model).is_finite() {
            return Some(format!("prior of experiment {e} parameters {th:?}"));
        }
    }
    for (g, &p) in state.phi.iter().enumerate() {
        if !gene_phase_log_prior(p, model).is_finite() {
            return Some(format!("prior of gene {g} phase {p}"));
        }
    }
    for (i, cell) in state.gamma.iter().enumerate() {
        let (g, e) = (i / ne, i % ne);
        if !trend_log_prior(cell, consts).is_finite() {
            return Some(format!("trend prior of cell (gene {g}, experiment {e}): {cell:?}"));
        }
        if !noise_log_prior(cell.sigma2, state.theta[e].zeta, consts).is_finite() {
            return Some(format!("noise prior of cell (gene {g}, experiment {e}): sigma2 = {}", cell.sigma2));
        }
        if model.is_periodic() && !amplitude_log_prior(cell.amp, consts).is_finite() {
            return Some(format!("amplitude prior of cell (gene {g}, experiment {e}): A = {}", cell.amp));
        }
        let ll = cell_log_likelihood(data.cell(g, e), &state.theta[e], state.phi[g], cell, model);
        if !ll.is_finite() {
            return Some(format!("likelihood of cell (gene {g}, experiment {e})"));
        }
    }
    None
}
