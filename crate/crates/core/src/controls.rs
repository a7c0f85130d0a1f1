//! Background data sets for calibrating periodicity statistics: within-series
//! permutation of the real data and simulation from the trend-only model,
//! plus the refit with experiment parameters held at the real-data mode.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::dataset::{ExperimentSeries, TimeSeriesMatrix};
use crate::dist::ScaledInvChiSq;
use crate::error::{Error, Result};
use crate::model::{mean, CellParams, ChainState, ExperimentParams, ModelKind, PriorConstants};
use crate::rng::{substream, Purpose};
use crate::sampler::{posterior_mode, run_chain, ChainTrace, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    Permutation,
    M0Simulation,
}

impl std::str::FromStr for ControlKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "permutation" | "permute" => Ok(ControlKind::Permutation),
            "m0" | "m0_simulation" | "simulation" => Ok(ControlKind::M0Simulation),
            _ => Err(Error::InvalidArgument(format!(
                "unknown control kind `{s}` (expected permutation or m0)"
            ))),
        }
    }
}

/// Shuffles the present values of every (gene, experiment) series among
/// that series' present slots. Missing slots and time grids are untouched.
pub fn permute_matrix(matrix: &TimeSeriesMatrix, seed: u64) -> TimeSeriesMatrix {
    let ne = matrix.n_experiments();
    let mut shuffled: Vec<Vec<f64>> = Vec::with_capacity(matrix.n_genes() * ne);
    for g in 0..matrix.n_genes() {
        for e in 0..ne {
            let mut values: Vec<f64> = matrix.series(g, e).iter().flatten().copied().collect();
            let mut rng = substream(seed, 0, Purpose::Permutation, (g * ne + e) as u64);
            values.shuffle(&mut rng);
            values.reverse(); // consumed with pop() below
            shuffled.push(values);
        }
    }
    matrix.map_values(|g, e, _, v| v.map(|_| shuffled[g * ne + e].pop().expect("one value per present slot")))
}

/// Generates data with the same genes, grids and missing mask as `shape`
/// from the given parameters, adding `N(0, sigma2)` noise to the model mean.
pub fn simulate_from_state(shape: &TimeSeriesMatrix, state: &ChainState, model: ModelKind, seed: u64) -> Result<TimeSeriesMatrix> {
    if state.n_genes() != shape.n_genes() || state.n_experiments() != shape.n_experiments() {
        return Err(Error::Shape(format!(
            "state is {}x{} but shape is {}x{}",
            state.n_genes(),
            state.n_experiments(),
            shape.n_genes(),
            shape.n_experiments()
        )));
    }
    let ne = shape.n_experiments();
    let mut noise: Vec<Vec<f64>> = Vec::with_capacity(state.gamma.len());
    for (i, cell) in state.gamma.iter().enumerate() {
        let (g, e) = (i / ne, i % ne);
        let mut rng = substream(seed, 1, Purpose::Simulation, i as u64);
        let normal = Normal::new(0.0, cell.sigma2.sqrt()).map_err(|_| {
            Error::InvalidArgument(format!("invalid noise variance {} at gene {g}, experiment {e}", cell.sigma2))
        })?;
        noise.push((0..shape.times(e).len()).map(|_| normal.sample(&mut rng)).collect());
    }
    Ok(shape.map_values(|g, e, t, v| {
        v.map(|_| {
            let time = shape.times(e)[t];
            mean(model, &state.theta[e], state.phi[g], state.cell(g, e), time) + noise[g * ne + e][t]
        })
    }))
}

/// Draws a trend-only parameter set from the priors: `zeta` per experiment,
/// then `(a, b, c, d, sigma2)` per series. Periodic parameters are zero.
pub fn draw_m0_truth(n_genes: usize, n_experiments: usize, consts: &PriorConstants, seed: u64) -> ChainState {
    let mut rng = substream(seed, 0, Purpose::Simulation, u64::MAX);
    let zeta_prior = Exp::new(consts.zeta_rate).expect("positive rate");
    let theta: Vec<ExperimentParams> = (0..n_experiments)
        .map(|_| ExperimentParams {
            mu: 0.5 * (consts.freq_min + consts.freq_max),
            psi: 0.0,
            lambda: 0.0,
            zeta: zeta_prior.sample(&mut rng),
        })
        .collect();
    let gamma = (0..n_genes * n_experiments)
        .map(|i| {
            let mut rng = substream(seed, 0, Purpose::Simulation, i as u64);
            let normal = |var: f64, rng: &mut crate::rng::StreamRng| var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            CellParams {
                a: normal(consts.intercept_var, &mut rng),
                b: normal(consts.slope_var, &mut rng),
                c: normal(consts.block_var, &mut rng),
                d: rng.random_range(0.0..consts.block_end_max),
                amp: 0.0,
                sigma2: ScaledInvChiSq::new(consts.noise_dof, theta[i % n_experiments].zeta).sample(&mut rng),
            }
        })
        .collect();
    ChainState {
        theta,
        phi: vec![0.0; n_genes],
        gamma,
        log_posterior: f64::NAN,
    }
}

/// A data set drawn from the null model with every parameter drawn from its
/// prior, cloning the genes, time grids and missing mask of `shape`.
/// Returns the data and the parameters used.
pub fn simulate_m0(shape: &TimeSeriesMatrix, consts: &PriorConstants, seed: u64) -> Result<(TimeSeriesMatrix, ChainState)> {
    let truth = draw_m0_truth(shape.n_genes(), shape.n_experiments(), consts, seed);
    let data = simulate_from_state(shape, &truth, ModelKind::M0, seed)?;
    Ok((data, truth))
}

/// A fully observed shape with `n_genes` genes and one experiment per time
/// grid, for simulations without a real template.
pub fn regular_shape(n_genes: usize, grids: &[Vec<f64>]) -> Result<TimeSeriesMatrix> {
    let genes = (0..n_genes).map(|g| format!("G{g:05}")).collect();
    let experiments = grids
        .iter()
        .enumerate()
        .map(|(e, times)| ExperimentSeries {
            id: format!("E{}", e + 1),
            times: times.clone(),
            rows: vec![vec![Some(0.0); times.len()]; n_genes],
        })
        .collect();
    TimeSeriesMatrix::new(genes, experiments)
}

/// Ground truth for synthetic periodic data: one period and damping shared
/// by all experiments, a leading fraction of genes with nonzero amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicDesign {
    pub n_genes: usize,
    pub grids: Vec<Vec<f64>>,
    pub period: f64,
    pub lambda: f64,
    /// Experiment phases; missing entries are zero.
    pub psi: Vec<f64>,
    /// Genes `0..n_periodic` are periodic, the rest have `A = 0`.
    pub n_periodic: usize,
    /// Amplitudes of periodic genes are uniform on this range.
    pub amp_range: (f64, f64),
    /// Noise standard deviations are uniform on this range.
    pub noise_sd_range: (f64, f64),
    /// Standard deviation of the intercepts.
    pub intercept_sd: f64,
    /// Standard deviation of the slopes.
    pub slope_sd: f64,
}

impl PeriodicDesign {
    /// Draws gene phases uniformly and per-series trend, amplitude and noise.
    pub fn truth(&self, seed: u64) -> ChainState {
        let ne = self.grids.len();
        let mut rng = substream(seed, 2, Purpose::Simulation, u64::MAX);
        let theta = (0..ne)
            .map(|e| ExperimentParams {
                mu: std::f64::consts::TAU / self.period,
                psi: self.psi.get(e).copied().unwrap_or(0.0),
                lambda: self.lambda,
                zeta: 0.5 * (self.noise_sd_range.0 * self.noise_sd_range.1),
            })
            .collect();
        let phi = (0..self.n_genes)
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        let gamma = (0..self.n_genes * ne)
            .map(|i| {
                let mut rng = substream(seed, 2, Purpose::Simulation, i as u64);
                let g = i / ne;
                let amp = if g < self.n_periodic {
                    rng.random_range(self.amp_range.0..=self.amp_range.1)
                } else {
                    0.0
                };
                let sd = rng.random_range(self.noise_sd_range.0..=self.noise_sd_range.1);
                let std: f64 = rng.sample(rand_distr::StandardNormal);
                let std2: f64 = rng.sample(rand_distr::StandardNormal);
                CellParams {
                    a: self.intercept_sd * std,
                    b: self.slope_sd * std2,
                    c: 0.0,
                    d: 100.0,
                    amp,
                    sigma2: sd * sd,
                }
            })
            .collect();
        ChainState {
            theta,
            phi,
            gamma,
            log_posterior: f64::NAN,
        }
    }

    /// Truth and fully observed data drawn from it.
    pub fn simulate(&self, seed: u64) -> Result<(TimeSeriesMatrix, ChainState)> {
        let shape = regular_shape(self.n_genes, &self.grids)?;
        let truth = self.truth(seed);
        let data = simulate_from_state(&shape, &truth, ModelKind::M1, seed)?;
        Ok((data, truth))
    }
}

/// Fits the periodic model to a control data set with the experiment
/// parameters held at the posterior mode of the real-data chain.
pub fn fit_control(
    control: &TimeSeriesMatrix,
    consts: &PriorConstants,
    config: &SamplerConfig,
    real_trace: &ChainTrace,
) -> Result<ChainTrace> {
    let mode = posterior_mode(real_trace)?;
    run_chain(control, consts, config, ModelKind::M1, Some(&mode.theta))
}
