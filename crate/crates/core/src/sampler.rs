//! Metropolis-within-Gibbs sampler with a phase-gauge group move and three
//! Metropolized independence group (MIPS) moves.
//!
//! One sweep updates, in order: the experiment parameters (frequency, phase,
//! damping by random-walk MH, noise scale by a conjugate gamma draw), the gene
//! phases (random-walk MH), and every series' parameters (trend coefficients,
//! amplitude and noise variance by exact conditional draws, block-release end
//! by random-walk MH). The gauge move and the MIPS moves follow on their
//! schedules.
//!
//! All randomness comes from [`crate::rng::substream`] keyed by iteration and
//! by the cell, gene or experiment being updated, so gene and cell updates
//! run in parallel without affecting the result.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use nalgebra::{Cholesky, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::Config;
use crate::dataset::TimeSeriesMatrix;
use crate::dist::{wrap_angle, ScaledInvChiSq, TruncatedExp, TruncatedNormal};
use crate::error::{Error, Result};
use crate::model::{
    amplitude_log_prior, cell_log_likelihood, first_non_finite_factor, log_posterior_observed,
    phase_log_prior, trend, trend_log_prior, wave, CellData, CellParams, ChainState,
    ExperimentParams, ModelKind, ObservedCells, PriorConstants,
};
use crate::rng::{substream, Purpose};

/// Random-walk proposal standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub mu: f64,
    pub psi: f64,
    pub phi: f64,
    pub lambda: f64,
    pub d: f64,
    /// Standard deviation of the gauge shift `z`.
    pub gauge: f64,
}

impl StepSizes {
    pub fn for_constants(consts: &PriorConstants) -> Self {
        Self {
            mu: (consts.freq_max - consts.freq_min) / 20.0,
            psi: 0.3,
            phi: 0.3,
            lambda: consts.damping_max / 20.0,
            d: consts.block_end_max / 20.0,
            gauge: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub steps: StepSizes,
    /// MIPS moves fire after every `mips_every`-th sweep; 0 disables them.
    pub mips_every: usize,
    /// The gauge move fires after every `gauge_every`-th sweep; 0 disables it.
    pub gauge_every: usize,
    /// Worker threads; 0 uses the global rayon pool. Never affects results.
    pub threads: usize,
}

impl SamplerConfig {
    pub fn new(iterations: usize, burn_in: usize, thinning: usize, seed: u64, consts: &PriorConstants) -> Self {
        Self {
            iterations,
            burn_in,
            thinning,
            seed,
            steps: StepSizes::for_constants(consts),
            mips_every: 10,
            gauge_every: 1,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        let s = &self.steps;
        for (name, v) in [
            ("mu", s.mu),
            ("psi", s.psi),
            ("phi", s.phi),
            ("lambda", s.lambda),
            ("d", s.d),
            ("gauge", s.gauge),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("step.{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn retained_count(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }

    /// Reads `iterations`, `burn_in`, `thinning`, `seed`, `step.<param>`,
    /// `mips.every`, `gauge.every` and `threads`; unset keys keep defaults.
    pub fn from_config(config: &Config, consts: &PriorConstants) -> Result<Self> {
        let mut c = Self::new(2000, 1000, 1, 1, consts);
        c.iterations = config.get_or("iterations", c.iterations)?;
        c.burn_in = config.get_or("burn_in", c.burn_in)?;
        c.thinning = config.get_or("thinning", c.thinning)?;
        c.seed = config.get_or("seed", c.seed)?;
        c.mips_every = config.get_or("mips.every", c.mips_every)?;
        c.gauge_every = config.get_or("gauge.every", c.gauge_every)?;
        c.threads = config.get_or("threads", c.threads)?;
        let s = &mut c.steps;
        s.mu = config.get_or("step.mu", s.mu)?;
        s.psi = config.get_or("step.psi", s.psi)?;
        s.phi = config.get_or("step.phi", s.phi)?;
        s.lambda = config.get_or("step.lambda", s.lambda)?;
        s.d = config.get_or("step.d", s.d)?;
        s.gauge = config.get_or("step.gauge", s.gauge)?;
        c.validate()?;
        Ok(c)
    }

    pub fn write_to(&self, config: &mut Config) {
        config.set("iterations", self.iterations);
        config.set("burn_in", self.burn_in);
        config.set("thinning", self.thinning);
        config.set("seed", self.seed);
        config.set("mips.every", self.mips_every);
        config.set("gauge.every", self.gauge_every);
        config.set("step.mu", self.steps.mu);
        config.set("step.psi", self.steps.psi);
        config.set("step.phi", self.steps.phi);
        config.set("step.lambda", self.steps.lambda);
        config.set("step.d", self.steps.d);
        config.set("step.gauge", self.steps.gauge);
    }
}

/// The density being sampled: observed data, prior constants and model.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub data: &'a ObservedCells,
    pub consts: &'a PriorConstants,
    pub model: ModelKind,
}

// ---------------------------------------------------------------------------
// Acceptance bookkeeping

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Frequency,
    ExperimentPhase,
    Damping,
    GenePhase,
    BlockEnd,
    Gauge,
    MipsPhase,
    MipsTrend,
    MipsDamping,
}

impl Move {
    pub const ALL: [Move; 9] = [
        Move::Frequency,
        Move::ExperimentPhase,
        Move::Damping,
        Move::GenePhase,
        Move::BlockEnd,
        Move::Gauge,
        Move::MipsPhase,
        Move::MipsTrend,
        Move::MipsDamping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Move::Frequency => "frequency",
            Move::ExperimentPhase => "experiment_phase",
            Move::Damping => "damping",
            Move::GenePhase => "gene_phase",
            Move::BlockEnd => "block_end",
            Move::Gauge => "gauge",
            Move::MipsPhase => "mips_phase_amplitude",
            Move::MipsTrend => "mips_trend",
            Move::MipsDamping => "mips_damping_amplitude",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Acceptance {
    counts: [(u64, u64); 9],
}

impl Acceptance {
    pub fn record(&mut self, mv: Move, accepted: bool) {
        let slot = &mut self.counts[mv as usize];
        slot.0 += 1;
        slot.1 += u64::from(accepted);
    }

    fn record_many(&mut self, mv: Move, flags: impl IntoIterator<Item = bool>) {
        for f in flags {
            self.record(mv, f);
        }
    }

    /// `(proposed, accepted)` for a move.
    pub fn get(&self, mv: Move) -> (u64, u64) {
        self.counts[mv as usize]
    }

    pub fn rate(&self, mv: Move) -> Option<f64> {
        let (p, a) = self.get(mv);
        (p > 0).then(|| a as f64 / p as f64)
    }
}

// ---------------------------------------------------------------------------
// Series-level conditionals

/// Everything a single series update needs: its data, the unit damped
/// cosine at its present times (all zero under M0), and the noise scale.
#[derive(Debug, Clone)]
pub struct CellContext<'a> {
    pub data: &'a CellData,
    pub wave: Vec<f64>,
    pub zeta: f64,
    pub consts: &'a PriorConstants,
    pub model: ModelKind,
}

impl<'a> CellContext<'a> {
    pub fn new(
        data: &'a CellData,
        theta: &ExperimentParams,
        phi: f64,
        consts: &'a PriorConstants,
        model: ModelKind,
    ) -> Self {
        let wave = match model {
            ModelKind::M0 => vec![0.0; data.len()],
            ModelKind::M1 => data.t.iter().map(|&t| wave(theta, phi, t)).collect(),
        };
        Self {
            data,
            wave,
            zeta: theta.zeta,
            consts,
            model,
        }
    }

    /// Residual sum of squares `sum R^2`.
    pub fn sse(&self, cell: &CellParams) -> f64 {
        self.data
            .t
            .iter()
            .zip(&self.data.y)
            .zip(&self.wave)
            .map(|((&t, &y), &w)| {
                let r = y - trend(cell, t) - cell.amp * w;
                r * r
            })
            .sum()
    }

    pub fn log_likelihood(&self, cell: &CellParams) -> f64 {
        let n = self.data.len();
        if n == 0 {
            return 0.0;
        }
        -0.5 * n as f64 * ((TAU).ln() + cell.sigma2.ln()) - 0.5 * self.sse(cell) / cell.sigma2
    }

    /// `(sum w^2, sum w D)` with `D = y - trend`.
    fn wave_moments(&self, cell: &CellParams) -> (f64, f64) {
        self.data
            .t
            .iter()
            .zip(&self.data.y)
            .zip(&self.wave)
            .fold((0.0, 0.0), |(ww, wd), ((&t, &y), &w)| {
                (ww + w * w, wd + w * (y - trend(cell, t)))
            })
    }
}

/// Trend design row `(1, t, min(t - d, 0)^2)`.
#[inline]
pub fn design_row(t: f64, d: f64) -> [f64; 3] {
    let q = (t - d).min(0.0);
    [1.0, t, q * q]
}

/// Conditional normal of `(a, b, c)` given everything else.
#[derive(Debug, Clone)]
pub struct TrendConditional {
    /// Posterior mean.
    pub mean: Vector3<f64>,
    /// Posterior precision `X'X/sigma2 + V`.
    pub precision: Matrix3<f64>,
    scale: Vector3<f64>,
    chol: Cholesky<f64, nalgebra::U3>,
}

impl TrendConditional {
    pub fn new(ctx: &CellContext<'_>, d: f64, amp: f64, sigma2: f64) -> Self {
        let c = ctx.consts;
        let mut xtx = Matrix3::zeros();
        let mut xtz = Vector3::zeros();
        for ((&t, &y), &w) in ctx.data.t.iter().zip(&ctx.data.y).zip(&ctx.wave) {
            let x = Vector3::from(design_row(t, d));
            let z = y - amp * w;
            xtx += x * x.transpose();
            xtz += x * z;
        }
        let precision = xtx / sigma2
            + Matrix3::from_diagonal(&Vector3::new(
                1.0 / c.intercept_var,
                1.0 / c.slope_var,
                1.0 / c.block_var,
            ));
        let rhs = xtz / sigma2;
        // Jacobi scaling: the columns differ by many orders of magnitude
        let scale = precision.diagonal().map(|v| 1.0 / v.sqrt());
        let scaled = Matrix3::from_diagonal(&scale) * precision * Matrix3::from_diagonal(&scale);
        let chol = Cholesky::new(scaled).expect("trend precision is positive definite");
        let mean = chol.solve(&rhs.component_mul(&scale)).component_mul(&scale);
        Self {
            mean,
            precision,
            scale,
            chol,
        }
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        let s = Matrix3::from_diagonal(&self.scale);
        s * self.chol.inverse() * s
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        let eps = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let l = self.chol.l();
        let u = l
            .transpose()
            .solve_upper_triangular(&eps)
            .expect("triangular factor is invertible");
        self.mean + u.component_mul(&self.scale)
    }

    pub fn ln_pdf(&self, x: &Vector3<f64>) -> f64 {
        let u = (x - self.mean).component_div(&self.scale);
        let v = self.chol.l().transpose() * u;
        let ln_det = 2.0 * self.chol.l().diagonal().map(f64::ln).sum() - 2.0 * self.scale.map(f64::ln).sum();
        0.5 * ln_det - 1.5 * TAU.ln() - 0.5 * v.norm_squared()
    }
}

/// Exact draw of `(a, b, c)` from its conditional normal.
pub fn gibbs_trend<R: Rng + ?Sized>(ctx: &CellContext<'_>, cell: &CellParams, rng: &mut R) -> CellParams {
    let cond = TrendConditional::new(ctx, cell.d, cell.amp, cell.sigma2);
    let x = cond.sample(rng);
    CellParams {
        a: x[0],
        b: x[1],
        c: x[2],
        ..*cell
    }
}

/// Log of the unnormalized conditional of `d` (uniform prior on `[0, C4)`).
pub fn block_end_log_target(ctx: &CellContext<'_>, cell: &CellParams) -> f64 {
    if !(0.0..ctx.consts.block_end_max).contains(&cell.d) {
        return f64::NEG_INFINITY;
    }
    -0.5 * ctx.sse(cell) / cell.sigma2
}

/// One random-walk MH step on `d`; proposals outside `[0, C4)` are rejected.
pub fn mh_block_end<R: Rng + ?Sized>(
    ctx: &CellContext<'_>,
    cell: &CellParams,
    step: f64,
    rng: &mut R,
) -> (CellParams, bool) {
    let proposal = CellParams {
        d: cell.d + step * rng.sample::<f64, _>(StandardNormal),
        ..*cell
    };
    let log_ratio = block_end_log_target(ctx, &proposal) - block_end_log_target(ctx, cell);
    if accept(log_ratio, rng) {
        (proposal, true)
    } else {
        (*cell, false)
    }
}

/// Untruncated normal `(mean, sd)` of the amplitude's conditional, or `None`
/// when the series carries no information about it.
pub fn amplitude_conditional(ctx: &CellContext<'_>, cell: &CellParams) -> Option<(f64, f64)> {
    let (ww, wd) = ctx.wave_moments(cell);
    (ww > 0.0).then(|| {
        (
            (wd - cell.sigma2 * ctx.consts.amp_rate) / ww,
            (cell.sigma2 / ww).sqrt(),
        )
    })
}

/// Exact draw of the amplitude from its conditional, a normal truncated to
/// `[0, C6)`; falls back to the truncated exponential prior without data.
pub fn gibbs_amplitude<R: Rng + ?Sized>(ctx: &CellContext<'_>, cell: &CellParams, rng: &mut R) -> CellParams {
    let c = ctx.consts;
    let amp = match amplitude_conditional(ctx, cell) {
        Some((mean, sd)) => TruncatedNormal::new(mean, sd, 0.0, c.amp_max).sample(rng),
        None => TruncatedExp::new(c.amp_rate, c.amp_max).sample(rng),
    };
    CellParams { amp, ..*cell }
}

/// Conditional of the noise variance. Degrees of freedom use the number of
/// present points.
pub fn noise_conditional(ctx: &CellContext<'_>, cell: &CellParams) -> ScaledInvChiSq {
    let nu0 = ctx.consts.noise_dof;
    let dof = ctx.data.len() as f64 + nu0;
    ScaledInvChiSq::new(dof, (nu0 * ctx.zeta + ctx.sse(cell)) / dof)
}

pub fn gibbs_noise<R: Rng + ?Sized>(ctx: &CellContext<'_>, cell: &CellParams, rng: &mut R) -> CellParams {
    CellParams {
        sigma2: noise_conditional(ctx, cell).sample(rng),
        ..*cell
    }
}

// ---------------------------------------------------------------------------
// Experiment- and gene-level conditionals

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Sum of the log-likelihoods of all genes in experiment `e` with
/// experiment parameters `theta`.
pub fn experiment_log_likelihood(target: &Target<'_>, state: &ChainState, e: usize, theta: &ExperimentParams) -> f64 {
    (0..state.n_genes())
        .map(|g| cell_log_likelihood(target.data.cell(g, e), theta, state.phi[g], state.cell(g, e), target.model))
        .sum()
}

/// Sum over experiments of gene `g`'s log-likelihood with phase `phi`.
pub fn gene_log_likelihood(target: &Target<'_>, state: &ChainState, g: usize, phi: f64) -> f64 {
    (0..state.n_experiments())
        .map(|e| cell_log_likelihood(target.data.cell(g, e), &state.theta[e], phi, state.cell(g, e), target.model))
        .sum()
}

fn mh_experiment<R: Rng + ?Sized>(
    target: &Target<'_>,
    state: &ChainState,
    e: usize,
    proposal: ExperimentParams,
    log_prior_ratio: f64,
    rng: &mut R,
) -> bool {
    if log_prior_ratio == f64::NEG_INFINITY {
        return false;
    }
    let current = experiment_log_likelihood(target, state, e, &state.theta[e]);
    let proposed = experiment_log_likelihood(target, state, e, &proposal);
    accept(proposed - current + log_prior_ratio, rng)
}

/// Random-walk MH on the angular frequency of experiment `e`, uniform prior
/// on `[C7, C8)`.
pub fn mh_frequency<R: Rng + ?Sized>(
    target: &Target<'_>,
    state: &ChainState,
    e: usize,
    step: f64,
    rng: &mut R,
) -> (f64, bool) {
    let c = target.consts;
    let current = state.theta[e];
    let mu = current.mu + step * rng.sample::<f64, _>(StandardNormal);
    let prior = if (c.freq_min..c.freq_max).contains(&mu) {
        0.0
    } else {
        f64::NEG_INFINITY
    };
    let proposal = ExperimentParams { mu, ..current };
    if mh_experiment(target, state, e, proposal, prior, rng) {
        (mu, true)
    } else {
        (current.mu, false)
    }
}

/// Wrapped random-walk MH on the phase of experiment `e`; prior variance C9
/// for the first experiment and C10 otherwise.
pub fn mh_exp_phase<R: Rng + ?Sized>(
    target: &Target<'_>,
    state: &ChainState,
    e: usize,
    step: f64,
    rng: &mut R,
) -> (f64, bool) {
    let current = state.theta[e];
    let psi = wrap_angle(current.psi + step * rng.sample::<f64, _>(StandardNormal));
    let prior = phase_log_prior(psi, e, target.consts) - phase_log_prior(current.psi, e, target.consts);
    let proposal = ExperimentParams { psi, ..current };
    if mh_experiment(target, state, e, proposal, prior, rng) {
        (psi, true)
    } else {
        (current.psi, false)
    }
}

/// Random-walk MH on the damping rate of experiment `e`, uniform prior on
/// `[0, C11)`.
pub fn mh_damping<R: Rng + ?Sized>(
    target: &Target<'_>,
    state: &ChainState,
    e: usize,
    step: f64,
    rng: &mut R,
) -> (f64, bool) {
    let c = target.consts;
    let current = state.theta[e];
    let lambda = current.lambda + step * rng.sample::<f64, _>(StandardNormal);
    let prior = if (0.0..c.damping_max).contains(&lambda) {
        0.0
    } else {
        f64::NEG_INFINITY
    };
    let proposal = ExperimentParams { lambda, ..current };
    if mh_experiment(target, state, e, proposal, prior, rng) {
        (lambda, true)
    } else {
        (current.lambda, false)
    }
}

/// `(shape, rate)` of the gamma conditional of `zeta_e`.
pub fn zeta_conditional(consts: &PriorConstants, sigma2: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let half = 0.5 * consts.noise_dof;
    let (n, inv_sum) = sigma2
        .into_iter()
        .fold((0usize, 0.0), |(n, s), v| (n + 1, s + 1.0 / v));
    (half * n as f64 + 1.0, half * inv_sum + consts.zeta_rate)
}

pub fn gibbs_zeta<R: Rng + ?Sized>(consts: &PriorConstants, state: &ChainState, e: usize, rng: &mut R) -> f64 {
    let (shape, rate) = zeta_conditional(consts, (0..state.n_genes()).map(|g| state.cell(g, e).sigma2));
    crate::dist::sample_gamma(shape, rate, rng)
}

/// Wrapped random-walk MH on the phase of gene `g`; flat prior.
pub fn mh_gene_phase<R: Rng + ?Sized>(
    target: &Target<'_>,
    state: &ChainState,
    g: usize,
    step: f64,
    rng: &mut R,
) -> (f64, bool) {
    let current = state.phi[g];
    let phi = wrap_angle(current + step * rng.sample::<f64, _>(StandardNormal));
    let log_ratio = gene_log_likelihood(target, state, g, phi) - gene_log_likelihood(target, state, g, current);
    if accept(log_ratio, rng) {
        (phi, true)
    } else {
        (current, false)
    }
}

// ---------------------------------------------------------------------------
// Gauge move

/// Shifts every experiment phase by `z` and every gene phase by `-z`.
pub fn apply_gauge(state: &mut ChainState, z: f64) {
    for th in &mut state.theta {
        th.psi = wrap_angle(th.psi + z);
    }
    for p in &mut state.phi {
        *p = wrap_angle(*p - z);
    }
}

/// Log acceptance ratio of the gauge shift `z`. The likelihood is invariant
/// and gene phases have flat priors, so only the experiment-phase priors
/// contribute.
pub fn gauge_log_ratio(state: &ChainState, consts: &PriorConstants, z: f64) -> f64 {
    state
        .theta
        .iter()
        .enumerate()
        .map(|(e, th)| phase_log_prior(wrap_angle(th.psi + z), e, consts) - phase_log_prior(th.psi, e, consts))
        .sum()
}

/// Proposes `z ~ N(0, step^2)` and applies the shift if accepted.
pub fn group_move_phase_gauge<R: Rng + ?Sized>(
    state: &mut ChainState,
    consts: &PriorConstants,
    step: f64,
    rng: &mut R,
) -> bool {
    let z = step * rng.sample::<f64, _>(StandardNormal);
    let accepted = accept(gauge_log_ratio(state, consts, z), rng);
    if accepted {
        apply_gauge(state, z);
    }
    accepted
}

// ---------------------------------------------------------------------------
// MIPS moves

/// Proposal for one amplitude in a MIPS move: a normal centered at the
/// least-squares estimate with the conditional posterior spread, truncated to
/// `[0, C6)`; the truncated exponential prior when the series has no
/// information about the amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AmplitudeProposal {
    Regression(TruncatedNormal),
    Prior(TruncatedExp),
}

impl AmplitudeProposal {
    pub fn new(ctx: &CellContext<'_>, cell: &CellParams) -> Self {
        let c = ctx.consts;
        let (ww, wd) = ctx.wave_moments(cell);
        if ww > 0.0 {
            AmplitudeProposal::Regression(TruncatedNormal::new(wd / ww, (cell.sigma2 / ww).sqrt(), 0.0, c.amp_max))
        } else {
            AmplitudeProposal::Prior(TruncatedExp::new(c.amp_rate, c.amp_max))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            AmplitudeProposal::Regression(d) => d.sample(rng),
            AmplitudeProposal::Prior(d) => d.sample(rng),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            AmplitudeProposal::Regression(d) => d.ln_pdf(x),
            AmplitudeProposal::Prior(d) => d.ln_pdf(x),
        }
    }
}

/// Log MH ratio of moving gene `g` to phase `new_phi` with amplitudes
/// `new_amps` (one per experiment) under the MIPS proposal. The uniform phase
/// proposal cancels.
pub fn mips_phase_log_ratio(target: &Target<'_>, state: &ChainState, g: usize, new_phi: f64, new_amps: &[f64]) -> f64 {
    let c = target.consts;
    let old_phi = state.phi[g];
    let mut log_ratio = 0.0;
    for (e, &new_amp) in new_amps.iter().enumerate() {
        let data = target.data.cell(g, e);
        let theta = &state.theta[e];
        let old = *state.cell(g, e);
        let new = CellParams { amp: new_amp, ..old };
        let old_ctx = CellContext::new(data, theta, old_phi, c, target.model);
        let new_ctx = CellContext::new(data, theta, new_phi, c, target.model);
        log_ratio += new_ctx.log_likelihood(&new) + amplitude_log_prior(new.amp, c)
            - old_ctx.log_likelihood(&old)
            - amplitude_log_prior(old.amp, c);
        log_ratio += AmplitudeProposal::new(&old_ctx, &old).ln_pdf(old.amp)
            - AmplitudeProposal::new(&new_ctx, &new).ln_pdf(new.amp);
    }
    log_ratio
}

/// Joint independence move on `(phi_g, A_g1..A_gE)`. Returns the accepted
/// phase and amplitudes, or `None` on rejection.
pub fn mips_phase_amplitude<R: Rng + ?Sized>(
    target: &Target<'_>,
    state: &ChainState,
    g: usize,
    rng: &mut R,
) -> Option<(f64, Vec<f64>)> {
    let new_phi = rng.random_range(-PI..PI);
    let new_amps: Vec<f64> = (0..state.n_experiments())
        .map(|e| {
            let ctx = CellContext::new(target.data.cell(g, e), &state.theta[e], new_phi, target.consts, target.model);
            AmplitudeProposal::new(&ctx, state.cell(g, e)).sample(rng)
        })
        .collect();
    let log_ratio = mips_phase_log_ratio(target, state, g, new_phi, &new_amps);
    accept(log_ratio, rng).then_some((new_phi, new_amps))
}

/// Log MH ratio of replacing `(d, a, b, c)` of one series by `new` under the
/// MIPS trend proposal; the uniform proposal for `d` cancels.
pub fn mips_trend_log_ratio(ctx: &CellContext<'_>, old: &CellParams, new: &CellParams) -> f64 {
    let c = ctx.consts;
    let q_old = TrendConditional::new(ctx, old.d, old.amp, old.sigma2);
    let q_new = TrendConditional::new(ctx, new.d, new.amp, new.sigma2);
    let target_diff =
        ctx.log_likelihood(new) + trend_log_prior(new, c) - ctx.log_likelihood(old) - trend_log_prior(old, c);
    target_diff + q_old.ln_pdf(&Vector3::new(old.a, old.b, old.c)) - q_new.ln_pdf(&Vector3::new(new.a, new.b, new.c))
}

/// Independence move on `d` uniform over `[0, C4)` with `(a, b, c)` drawn
/// from their conditional normal given the new `d`.
pub fn mips_trend<R: Rng + ?Sized>(ctx: &CellContext<'_>, cell: &CellParams, rng: &mut R) -> (CellParams, bool) {
    let d = rng.random_range(0.0..ctx.consts.block_end_max);
    let x = TrendConditional::new(ctx, d, cell.amp, cell.sigma2).sample(rng);
    let proposal = CellParams {
        a: x[0],
        b: x[1],
        c: x[2],
        d,
        ..*cell
    };
    if accept(mips_trend_log_ratio(ctx, cell, &proposal), rng) {
        (proposal, true)
    } else {
        (*cell, false)
    }
}

/// Log MH ratio of moving experiment `e` to damping `new_lambda` with
/// amplitudes `new_amps` (one per gene). Per-gene terms are summed in gene
/// order.
pub fn mips_damping_log_ratio(
    target: &Target<'_>,
    state: &ChainState,
    e: usize,
    new_lambda: f64,
    new_amps: &[f64],
) -> f64 {
    let c = target.consts;
    let old_theta = state.theta[e];
    let new_theta = ExperimentParams {
        lambda: new_lambda,
        ..old_theta
    };
    let terms: Vec<f64> = (0..state.n_genes())
        .into_par_iter()
        .map(|g| {
            let data = target.data.cell(g, e);
            let old = *state.cell(g, e);
            let new = CellParams { amp: new_amps[g], ..old };
            let old_ctx = CellContext::new(data, &old_theta, state.phi[g], c, target.model);
            let new_ctx = CellContext::new(data, &new_theta, state.phi[g], c, target.model);
            new_ctx.log_likelihood(&new) + amplitude_log_prior(new.amp, c)
                - old_ctx.log_likelihood(&old)
                - amplitude_log_prior(old.amp, c)
                + AmplitudeProposal::new(&old_ctx, &old).ln_pdf(old.amp)
                - AmplitudeProposal::new(&new_ctx, &new).ln_pdf(new.amp)
        })
        .collect();
    terms.iter().sum()
}

/// Independence move on `lambda_e` uniform over `[0, C11)` with every
/// amplitude of experiment `e` re-proposed around its least-squares estimate
/// under the new damping. Returns the accepted damping and amplitudes.
pub fn mips_damping_amplitude<R: Rng + ?Sized>(
    target: &Target<'_>,
    state: &ChainState,
    e: usize,
    rng: &mut R,
) -> Option<(f64, Vec<f64>)> {
    let new_lambda = rng.random_range(0.0..target.consts.damping_max);
    let gene_seed: u64 = rng.random();
    let new_theta = ExperimentParams {
        lambda: new_lambda,
        ..state.theta[e]
    };
    let new_amps: Vec<f64> = (0..state.n_genes())
        .into_par_iter()
        .map(|g| {
            let mut grng = substream(gene_seed, 0, Purpose::MipsDampingGene, g as u64);
            let ctx = CellContext::new(target.data.cell(g, e), &new_theta, state.phi[g], target.consts, target.model);
            AmplitudeProposal::new(&ctx, state.cell(g, e)).sample(&mut grng)
        })
        .collect();
    let log_ratio = mips_damping_log_ratio(target, state, e, new_lambda, &new_amps);
    accept(log_ratio, rng).then_some((new_lambda, new_amps))
}

// ---------------------------------------------------------------------------
// Chain driver

#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub model: ModelKind,
    /// Retained states after burn-in and thinning.
    pub states: Vec<ChainState>,
    /// Zero-based iteration index of each retained state.
    pub retained_iterations: Vec<usize>,
    /// Log-posterior after every sweep.
    pub log_posterior: Vec<f64>,
    pub acceptance: Acceptance,
}

impl ChainTrace {
    /// Tab-separated per-iteration log-posterior.
    pub fn log_posterior_tsv(&self) -> String {
        let mut s = String::from("iteration\tlog_posterior\n");
        for (i, lp) in self.log_posterior.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{lp}");
        }
        s
    }

    pub fn acceptance_tsv(&self) -> String {
        let mut s = String::from("move\tproposed\taccepted\trate\n");
        for mv in Move::ALL {
            let (p, a) = self.acceptance.get(mv);
            if p > 0 {
                let _ = writeln!(s, "{}\t{p}\t{a}\t{}", mv.name(), a as f64 / p as f64);
            }
        }
        s
    }
}

/// The retained state with the largest log-posterior; ties go to the
/// earliest.
pub fn posterior_mode(trace: &ChainTrace) -> Result<&ChainState> {
    let mut best: Option<&ChainState> = None;
    for s in &trace.states {
        if best.is_none_or(|b| s.log_posterior > b.log_posterior) {
            best = Some(s);
        }
    }
    best.ok_or(Error::EmptyTrace)
}

/// Penalized least-squares trend with `d = C4/2`, used as a starting point.
fn initial_trend(data: &CellData, consts: &PriorConstants) -> CellParams {
    let d = consts.block_end_max / 2.0;
    let n = data.len();
    let var = if n >= 2 {
        let m = data.y.iter().sum::<f64>() / n as f64;
        data.y.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (n - 1) as f64
    } else {
        1.0
    };
    let scratch = CellContext {
        data,
        wave: vec![0.0; n],
        zeta: 1.0,
        consts,
        model: ModelKind::M0,
    };
    let fit = TrendConditional::new(&scratch, d, 0.0, var.max(1e-6));
    let mut cell = CellParams {
        a: fit.mean[0],
        b: fit.mean[1],
        c: fit.mean[2],
        d,
        amp: 0.0,
        sigma2: f64::NAN,
    };
    if n > 0 {
        cell.sigma2 = (scratch.sse(&cell) / n as f64).max(1e-4);
    }
    cell
}

/// Deterministic starting state: trend by regression with `d = C4/2`,
/// `A = 0.01` (0 under M0), `phi = 0`, `mu` mid-range, `psi = 0`,
/// `lambda = 0.001`, `sigma2` from the residual variance and `zeta` from the
/// mean `sigma2` of each experiment.
pub fn initial_state(
    data: &ObservedCells,
    consts: &PriorConstants,
    model: ModelKind,
    fixed_theta: Option<&[ExperimentParams]>,
) -> ChainState {
    let ne = data.n_experiments;
    let amp = if model.is_periodic() { 0.01 } else { 0.0 };
    let mut gamma: Vec<CellParams> = data
        .cells
        .par_iter()
        .map(|cd| CellParams {
            amp,
            ..initial_trend(cd, consts)
        })
        .collect();
    let mut theta = Vec::with_capacity(ne);
    for e in 0..ne {
        let known: Vec<f64> = (0..data.n_genes)
            .map(|g| gamma[g * ne + e].sigma2)
            .filter(|v| v.is_finite())
            .collect();
        let mean_var = if known.is_empty() {
            1.0
        } else {
            known.iter().sum::<f64>() / known.len() as f64
        };
        for g in 0..data.n_genes {
            let cell = &mut gamma[g * ne + e];
            if !cell.sigma2.is_finite() {
                cell.sigma2 = mean_var;
            }
        }
        theta.push(ExperimentParams {
            mu: 0.5 * (consts.freq_min + consts.freq_max),
            psi: 0.0,
            lambda: 0.001f64.min(0.5 * consts.damping_max),
            zeta: mean_var,
        });
    }
    if let Some(fixed) = fixed_theta {
        theta = fixed.to_vec();
    }
    let mut state = ChainState {
        theta,
        phi: vec![0.0; data.n_genes],
        gamma,
        log_posterior: 0.0,
    };
    state.log_posterior = log_posterior_observed(&state, data, consts, model);
    state
}

/// Runs a chain from the default starting state. With `fixed_theta`, the
/// experiment parameters are held at the given values throughout and every
/// move that would change them is skipped.
pub fn run_chain(
    matrix: &TimeSeriesMatrix,
    consts: &PriorConstants,
    config: &SamplerConfig,
    model: ModelKind,
    fixed_theta: Option<&[ExperimentParams]>,
) -> Result<ChainTrace> {
    let data = ObservedCells::new(matrix);
    if let Some(fixed) = fixed_theta {
        if fixed.len() != data.n_experiments {
            return Err(Error::Shape(format!(
                "fixed parameters given for {} experiments, matrix has {}",
                fixed.len(),
                data.n_experiments
            )));
        }
    }
    let init = with_pool(config.threads, || initial_state(&data, consts, model, fixed_theta))?;
    run_chain_from(&data, consts, config, model, fixed_theta.is_some(), init)
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// Runs a chain from an explicit starting state.
pub fn run_chain_from(
    data: &ObservedCells,
    consts: &PriorConstants,
    config: &SamplerConfig,
    model: ModelKind,
    hold_theta: bool,
    init: ChainState,
) -> Result<ChainTrace> {
    config.validate()?;
    consts.validate()?;
    data.check_state(&init)?;
    let target = Target { data, consts, model };
    with_pool(config.threads, move || {
        let mut state = init;
        state.log_posterior = log_posterior_observed(&state, data, consts, model);
        if !state.log_posterior.is_finite() {
            let factor = first_non_finite_factor(&state, data, consts, model)
                .unwrap_or_else(|| "sum of finite factors overflowed".into());
            return Err(Error::NonFinite(format!("initial state: {factor}")));
        }
        let mut trace = ChainTrace {
            model,
            states: Vec::with_capacity(config.retained_count()),
            retained_iterations: Vec::with_capacity(config.retained_count()),
            log_posterior: Vec::with_capacity(config.iterations),
            acceptance: Acceptance::default(),
        };
        for iter in 0..config.iterations {
            sweep(&target, &mut state, iter as u64, config, hold_theta, &mut trace.acceptance);
            trace.log_posterior.push(state.log_posterior);
            if iter >= config.burn_in && (iter - config.burn_in + 1).is_multiple_of(config.thinning) {
                trace.states.push(state.clone());
                trace.retained_iterations.push(iter);
            }
        }
        Ok(trace)
    })?
}

/// One full sweep: experiment parameters, gene phases, series parameters,
/// then the scheduled gauge and MIPS moves.
pub fn sweep(
    target: &Target<'_>,
    state: &mut ChainState,
    iter: u64,
    config: &SamplerConfig,
    hold_theta: bool,
    acc: &mut Acceptance,
) {
    let seed = config.seed;
    let steps = &config.steps;
    let consts = target.consts;
    let model = target.model;
    let (ng, ne) = (state.n_genes(), state.n_experiments());

    // Step 1: experiment parameters
    if !hold_theta {
        for e in 0..ne {
            let mut rng = substream(seed, iter, Purpose::Experiment, e as u64);
            if model.is_periodic() {
                let (mu, ok) = mh_frequency(target, state, e, steps.mu, &mut rng);
                state.theta[e].mu = mu;
                acc.record(Move::Frequency, ok);
                let (psi, ok) = mh_exp_phase(target, state, e, steps.psi, &mut rng);
                state.theta[e].psi = psi;
                acc.record(Move::ExperimentPhase, ok);
                let (lambda, ok) = mh_damping(target, state, e, steps.lambda, &mut rng);
                state.theta[e].lambda = lambda;
                acc.record(Move::Damping, ok);
            }
            state.theta[e].zeta = gibbs_zeta(consts, state, e, &mut rng);
        }
    }

    // Step 2: gene phases
    if model.is_periodic() {
        let updates: Vec<(f64, bool)> = (0..ng)
            .into_par_iter()
            .map(|g| {
                let mut rng = substream(seed, iter, Purpose::GenePhase, g as u64);
                mh_gene_phase(target, state, g, steps.phi, &mut rng)
            })
            .collect();
        for (g, (phi, ok)) in updates.into_iter().enumerate() {
            state.phi[g] = phi;
            acc.record(Move::GenePhase, ok);
        }
    }

    // Step 3: series parameters
    let snapshot: &ChainState = state;
    let updates: Vec<(CellParams, bool)> = (0..ng * ne)
        .into_par_iter()
        .map(|i| {
            let (g, e) = (i / ne, i % ne);
            let mut rng = substream(seed, iter, Purpose::Cell, i as u64);
            let ctx = CellContext::new(&target.data.cells[i], &snapshot.theta[e], snapshot.phi[g], consts, model);
            let mut cell = gibbs_trend(&ctx, &snapshot.gamma[i], &mut rng);
            let (next, ok) = mh_block_end(&ctx, &cell, steps.d, &mut rng);
            cell = next;
            if model.is_periodic() {
                cell = gibbs_amplitude(&ctx, &cell, &mut rng);
            }
            (gibbs_noise(&ctx, &cell, &mut rng), ok)
        })
        .collect();
    for (i, (cell, ok)) in updates.into_iter().enumerate() {
        state.gamma[i] = cell;
        acc.record(Move::BlockEnd, ok);
    }

    // Gauge move
    if model.is_periodic() && !hold_theta && config.gauge_every > 0 && (iter + 1).is_multiple_of(config.gauge_every as u64) {
        let mut rng = substream(seed, iter, Purpose::Gauge, 0);
        let ok = group_move_phase_gauge(state, consts, steps.gauge, &mut rng);
        acc.record(Move::Gauge, ok);
    }

    // MIPS moves
    if config.mips_every > 0 && (iter + 1).is_multiple_of(config.mips_every as u64) {
        if model.is_periodic() {
            let snapshot: &ChainState = state;
            let moves: Vec<Option<(f64, Vec<f64>)>> = (0..ng)
                .into_par_iter()
                .map(|g| {
                    let mut rng = substream(seed, iter, Purpose::MipsPhase, g as u64);
                    mips_phase_amplitude(target, snapshot, g, &mut rng)
                })
                .collect();
            for (g, mv) in moves.into_iter().enumerate() {
                acc.record(Move::MipsPhase, mv.is_some());
                if let Some((phi, amps)) = mv {
                    state.phi[g] = phi;
                    for (e, amp) in amps.into_iter().enumerate() {
                        state.cell_mut(g, e).amp = amp;
                    }
                }
            }
        }

        let snapshot: &ChainState = state;
        let moves: Vec<(CellParams, bool)> = (0..ng * ne)
            .into_par_iter()
            .map(|i| {
                let (g, e) = (i / ne, i % ne);
                let mut rng = substream(seed, iter, Purpose::MipsTrend, i as u64);
                let ctx = CellContext::new(&target.data.cells[i], &snapshot.theta[e], snapshot.phi[g], consts, model);
                mips_trend(&ctx, &snapshot.gamma[i], &mut rng)
            })
            .collect();
        let flags: Vec<bool> = moves.iter().map(|m| m.1).collect();
        for (i, (cell, _)) in moves.into_iter().enumerate() {
            state.gamma[i] = cell;
        }
        acc.record_many(Move::MipsTrend, flags);

        if model.is_periodic() && !hold_theta {
            for e in 0..ne {
                let mut rng = substream(seed, iter, Purpose::MipsDamping, e as u64);
                let mv = mips_damping_amplitude(target, state, e, &mut rng);
                acc.record(Move::MipsDamping, mv.is_some());
                if let Some((lambda, amps)) = mv {
                    state.theta[e].lambda = lambda;
                    for (g, amp) in amps.into_iter().enumerate() {
                        state.cell_mut(g, e).amp = amp;
                    }
                }
            }
        }
    }

    state.log_posterior = log_posterior_observed(state, target.data, consts, model);
}
