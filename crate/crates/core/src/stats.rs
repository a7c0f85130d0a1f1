//! Per-gene periodicity statistics (SNR, LPI, BIC01), their calibration
//! against background fits, ranking for display, cross-statistic agreement
//! and the reproducibility scan between two analyses.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::dataset::TimeSeriesMatrix;
use crate::dist::wrap_angle;
use crate::error::{Error, Result};
use crate::model::{cell_log_likelihood, wave, ChainState, ModelKind, ObservedCells};
use crate::sampler::ChainTrace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneSnrSummary {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

/// `SNR_g = sum_e sum_t (A cos(mu t + psi + phi) exp(-lambda t))^2 / sigma2`
/// over present time points, for every gene.
pub fn snr_per_state(state: &ChainState, data: &ObservedCells) -> Vec<f64> {
    let ne = state.n_experiments();
    (0..state.n_genes())
        .map(|g| {
            (0..ne)
                .map(|e| {
                    let cell = state.cell(g, e);
                    if cell.amp == 0.0 {
                        return 0.0;
                    }
                    let energy: f64 = data
                        .cell(g, e)
                        .t
                        .iter()
                        .map(|&t| {
                            let s = cell.amp * wave(&state.theta[e], state.phi[g], t);
                            s * s
                        })
                        .sum();
                    energy / cell.sigma2
                })
                .sum()
        })
        .collect()
}

/// Quantile of sorted data by linear interpolation between the closest
/// order statistics (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

fn summarize(samples: &mut [f64]) -> GeneSnrSummary {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.sort_by(f64::total_cmp);
    GeneSnrSummary {
        mean,
        q025: quantile_sorted(samples, 0.025),
        q975: quantile_sorted(samples, 0.975),
    }
}

/// Posterior mean and 2.5/97.5 percentiles of each gene's SNR over the
/// retained states.
pub fn snr_summary(trace: &ChainTrace, data: &ObservedCells) -> Result<Vec<GeneSnrSummary>> {
    if trace.states.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let per_state: Vec<Vec<f64>> = trace.states.par_iter().map(|s| snr_per_state(s, data)).collect();
    let n_genes = data.n_genes;
    Ok((0..n_genes)
        .into_par_iter()
        .map(|g| {
            let mut samples: Vec<f64> = per_state.iter().map(|v| v[g]).collect();
            summarize(&mut samples)
        })
        .collect())
}

/// Circular mean direction of a set of angles.
pub fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    wrap_angle(s.atan2(c))
}

/// Length of the central 95% interval of a sample of angles, after
/// unwrapping about the circular mean. Lies in `[0, 2 pi]`.
pub fn lpi_from_samples(phases: &[f64]) -> f64 {
    if phases.is_empty() {
        return f64::NAN;
    }
    let center = circular_mean(phases);
    let mut unwrapped: Vec<f64> = phases.iter().map(|p| wrap_angle(p - center)).collect();
    unwrapped.sort_by(f64::total_cmp);
    (quantile_sorted(&unwrapped, 0.975) - quantile_sorted(&unwrapped, 0.025)).clamp(0.0, TAU)
}

/// Relative phase `phi_g + psi_1` of a gene in every retained state.
pub fn relative_phase_samples(trace: &ChainTrace, gene: usize) -> Vec<f64> {
    trace.states.iter().map(|s| s.relative_phase(gene)).collect()
}

pub fn lpi(trace: &ChainTrace, gene: usize) -> Result<f64> {
    if trace.states.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(lpi_from_samples(&relative_phase_samples(trace, gene)))
}

/// Log-likelihood of one gene's series under `model` at `state`.
pub fn gene_log_likelihood(state: &ChainState, data: &ObservedCells, gene: usize, model: ModelKind) -> f64 {
    (0..state.n_experiments())
        .map(|e| cell_log_likelihood(data.cell(gene, e), &state.theta[e], state.phi[gene], state.cell(gene, e), model))
        .sum()
}

/// `2 log L1 - 2 log L0 - (k1 - k0) log N` for one gene, where the
/// likelihoods are that gene's factors at each model's posterior mode,
/// `N` its present observation count and `k1 - k0 = E_g + 1` (one amplitude
/// per experiment with data plus the gene phase). `None` when the gene has
/// no data.
pub fn bic01(mode_m1: &ChainState, mode_m0: &ChainState, data: &ObservedCells, gene: usize) -> Option<f64> {
    let ne = data.n_experiments;
    let counts: Vec<usize> = (0..ne).map(|e| data.cell(gene, e).len()).collect();
    let n: usize = counts.iter().sum();
    if n == 0 {
        return None;
    }
    let active = counts.iter().filter(|&&c| c > 0).count();
    let l1 = gene_log_likelihood(mode_m1, data, gene, ModelKind::M1);
    let l0 = gene_log_likelihood(mode_m0, data, gene, ModelKind::M0);
    Some(2.0 * (l1 - l0) - (active + 1) as f64 * (n as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Large values indicate periodicity (SNR, BIC01).
    Greater,
    /// Small values indicate periodicity (LPI).
    Less,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub claimed: Vec<bool>,
}

impl Calibration {
    pub fn claimed_count(&self) -> usize {
        self.claimed.iter().filter(|&&c| c).count()
    }
}

/// Threshold at the control quantile that leaves `fpr` of the control mass
/// on the claiming side; real values strictly beyond it are claimed.
/// Non-finite values are never claimed and are ignored in the control.
pub fn calibrate_threshold(real: &[f64], control: &[f64], fpr: f64, direction: Direction) -> Result<Calibration> {
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::InvalidArgument(format!("fpr must lie in (0, 1), got {fpr}")));
    }
    let mut ctrl: Vec<f64> = control.iter().copied().filter(|v| v.is_finite()).collect();
    if ctrl.is_empty() {
        return Err(Error::InvalidArgument("control statistic has no finite values".into()));
    }
    ctrl.sort_by(f64::total_cmp);
    let threshold = match direction {
        Direction::Greater => quantile_sorted(&ctrl, 1.0 - fpr),
        Direction::Less => quantile_sorted(&ctrl, fpr),
    };
    let claimed = real
        .iter()
        .map(|&v| {
            v.is_finite()
                && match direction {
                    Direction::Greater => v > threshold,
                    Direction::Less => v < threshold,
                }
        })
        .collect();
    Ok(Calibration { threshold, claimed })
}

/// Alternative claim rule: a gene is claimed when its value exceeds the
/// upper posterior limit of at least `min_count` control genes.
pub fn claim_by_control_upper_limits(real: &[f64], control_upper: &[f64], min_count: usize) -> Vec<bool> {
    let mut upper: Vec<f64> = control_upper.iter().copied().filter(|v| v.is_finite()).collect();
    upper.sort_by(f64::total_cmp);
    real.iter()
        .map(|&v| v.is_finite() && upper.partition_point(|&u| u < v) >= min_count)
        .collect()
}

/// Ranks starting at 1 with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation over the pairs where both values are finite.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (fx, fy): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    if fx.len() < 2 {
        return f64::NAN;
    }
    pearson(&average_ranks(&fx), &average_ranks(&fy))
}

/// One gene's row of the periodicity report.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneReport {
    pub gene: String,
    pub snr: GeneSnrSummary,
    pub lpi: f64,
    /// `None` when the gene has no observations.
    pub bic01: Option<f64>,
    /// Circular posterior mean of the relative phase.
    pub phase: f64,
    /// 1-based rank by decreasing mean SNR.
    pub rank: usize,
    pub claimed_snr: bool,
    pub claimed_lpi: bool,
    pub claimed_bic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicityReport {
    pub rows: Vec<GeneReport>,
    pub snr_threshold: f64,
    pub lpi_threshold: f64,
    pub bic_threshold: f64,
}

/// Ranks by decreasing value; ties keep gene order. Returns 1-based ranks.
pub fn descending_ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (r, g) in order.into_iter().enumerate() {
        ranks[g] = r + 1;
    }
    ranks
}

pub const REPORT_HEADER: &str =
    "gene\tsnr_mean\tsnr_q025\tsnr_q975\tlpi\tbic01\tphase\trank\tclaimed_snr\tclaimed_lpi\tclaimed_bic";

impl PeriodicityReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let bic = r.bic01.map_or_else(|| "NA".to_string(), |v| v.to_string());
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.gene,
                r.snr.mean,
                r.snr.q025,
                r.snr.q975,
                r.lpi,
                bic,
                r.phase,
                r.rank,
                u8::from(r.claimed_snr),
                u8::from(r.claimed_lpi),
                u8::from(r.claimed_bic),
            );
        }
        s
    }

    /// Recomputes every claim flag from the stored values and thresholds.
    pub fn flags_consistent(&self) -> bool {
        self.rows.iter().all(|r| {
            r.claimed_snr == (r.snr.mean > self.snr_threshold)
                && r.claimed_lpi == (r.lpi < self.lpi_threshold)
                && r.claimed_bic == r.bic01.is_some_and(|b| b > self.bic_threshold)
        })
    }

    pub fn mean_snr(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.snr.mean).collect()
    }
}

/// Per-gene statistics of a fitted chain, before calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneStatistics {
    pub snr: Vec<GeneSnrSummary>,
    pub lpi: Vec<f64>,
    pub phase: Vec<f64>,
}

impl GeneStatistics {
    pub fn from_trace(trace: &ChainTrace, data: &ObservedCells) -> Result<Self> {
        let snr = snr_summary(trace, data)?;
        let (lpi, phase) = (0..data.n_genes)
            .into_par_iter()
            .map(|g| {
                let samples = relative_phase_samples(trace, g);
                (lpi_from_samples(&samples), circular_mean(&samples))
            })
            .unzip();
        Ok(Self { snr, lpi, phase })
    }

    pub fn mean_snr(&self) -> Vec<f64> {
        self.snr.iter().map(|s| s.mean).collect()
    }
}

/// Classification settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportSettings {
    pub fpr: f64,
    pub bic_threshold: f64,
}

/// Builds the report: SNR and LPI thresholds are calibrated on the control
/// statistics at the configured FPR, BIC01 uses a fixed threshold.
pub fn build_report(
    genes: &[String],
    real: &GeneStatistics,
    control: &GeneStatistics,
    bic: &[Option<f64>],
    settings: ReportSettings,
) -> Result<PeriodicityReport> {
    let n = genes.len();
    if real.snr.len() != n || real.lpi.len() != n || bic.len() != n {
        return Err(Error::Shape("statistics do not cover the gene universe".into()));
    }
    let mean_snr = real.mean_snr();
    let snr_cal = calibrate_threshold(&mean_snr, &control.mean_snr(), settings.fpr, Direction::Greater)?;
    let lpi_cal = calibrate_threshold(&real.lpi, &control.lpi, settings.fpr, Direction::Less)?;
    let ranks = descending_ranks(&mean_snr);
    let rows = (0..n)
        .map(|g| GeneReport {
            gene: genes[g].clone(),
            snr: real.snr[g],
            lpi: real.lpi[g],
            bic01: bic[g],
            phase: real.phase[g],
            rank: ranks[g],
            claimed_snr: snr_cal.claimed[g],
            claimed_lpi: lpi_cal.claimed[g],
            claimed_bic: bic[g].is_some_and(|b| b > settings.bic_threshold),
        })
        .collect();
    Ok(PeriodicityReport {
        rows,
        snr_threshold: snr_cal.threshold,
        lpi_threshold: lpi_cal.threshold,
        bic_threshold: settings.bic_threshold,
    })
}

/// Display order: genes by decreasing mean SNR, cut into consecutive groups,
/// each group sorted by relative phase ascending from `-pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapLayout {
    pub order: Vec<usize>,
    pub groups: Vec<Range<usize>>,
}

/// Six groups: the first holds the top 300 genes, the remaining genes are
/// split as evenly as possible over the other five.
pub fn default_group_sizes(n_genes: usize) -> Vec<usize> {
    let first = n_genes.min(300);
    let rest = n_genes - first;
    let mut sizes = vec![first];
    sizes.extend((0..5).map(|i| rest / 5 + usize::from(i < rest % 5)));
    sizes.retain(|&s| s > 0);
    sizes
}

pub fn rank_and_order(mean_snr: &[f64], phase: &[f64], group_sizes: &[usize]) -> Result<HeatmapLayout> {
    if mean_snr.len() != phase.len() {
        return Err(Error::Shape("SNR and phase vectors differ in length".into()));
    }
    let n = mean_snr.len();
    let mut by_snr: Vec<usize> = (0..n).collect();
    by_snr.sort_by(|&a, &b| mean_snr[b].total_cmp(&mean_snr[a]).then(a.cmp(&b)));
    let mut order = Vec::with_capacity(n);
    let mut groups = Vec::new();
    let mut start = 0;
    let mut sizes = group_sizes.iter().copied().filter(|&s| s > 0);
    while start < n {
        let size = sizes.next().unwrap_or(n - start).min(n - start);
        let mut group = by_snr[start..start + size].to_vec();
        group.sort_by(|&a, &b| {
            wrap_angle(phase[a])
                .partial_cmp(&wrap_angle(phase[b]))
                .unwrap_or(Ordering::Equal)
        });
        order.extend(group);
        groups.push(start..start + size);
        start += size;
    }
    Ok(HeatmapLayout { order, groups })
}

/// Plot-ready long table of the data in display order; every series is
/// scaled to zero mean and unit variance (zero-variance series become 0).
pub fn heatmap_tsv(matrix: &TimeSeriesMatrix, layout: &HeatmapLayout) -> String {
    let mut s = String::from("row\tgene\tgroup\texperiment\ttime\tvalue\n");
    for (grp, range) in layout.groups.iter().enumerate() {
        for row in range.clone() {
            let g = layout.order[row];
            for (e, exp) in matrix.experiments().iter().enumerate() {
                let series = matrix.series(g, e);
                let present: Vec<f64> = series.iter().flatten().copied().collect();
                let n = present.len() as f64;
                let m = present.iter().sum::<f64>() / n;
                let sd = (present.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                for (t, v) in series.iter().enumerate() {
                    let cell = match v {
                        Some(v) if sd > 0.0 => ((v - m) / sd).to_string(),
                        Some(_) => "0".to_string(),
                        None => "NA".to_string(),
                    };
                    let _ = writeln!(
                        s,
                        "{row}\t{}\t{}\t{}\t{}\t{cell}",
                        matrix.genes()[g],
                        grp + 1,
                        exp.id,
                        exp.times[t]
                    );
                }
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimIntersection {
    pub names: Vec<String>,
    /// Genes claimed by every statistic.
    pub all: Vec<usize>,
    /// `pairwise[i][j]`: genes claimed by both `i` and `j` (diagonal: by `i`).
    pub pairwise: Vec<Vec<usize>>,
    /// Spearman correlations of the oriented statistic vectors.
    pub spearman: Vec<Vec<f64>>,
}

impl ClaimIntersection {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("statistic_a\tstatistic_b\tclaimed_both\tspearman\n");
        for i in 0..self.names.len() {
            for j in i..self.names.len() {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}",
                    self.names[i], self.names[j], self.pairwise[i][j], self.spearman[i][j]
                );
            }
        }
        let _ = writeln!(s, "all\tall\t{}\tNA", self.all.len());
        s
    }
}

/// Overlap of claimed sets and rank agreement of the statistics. Statistic
/// vectors must already be oriented so that larger means more periodic.
pub fn intersect_claims(names: &[&str], claims: &[&[bool]], oriented: &[&[f64]]) -> Result<ClaimIntersection> {
    let k = names.len();
    if claims.len() != k || oriented.len() != k {
        return Err(Error::Shape("one claim set and one statistic per name expected".into()));
    }
    let n = claims.first().map_or(0, |c| c.len());
    if claims.iter().any(|c| c.len() != n) || oriented.iter().any(|v| v.len() != n) {
        return Err(Error::Shape("claim sets cover different gene universes".into()));
    }
    let all = (0..n).filter(|&g| claims.iter().all(|c| c[g])).collect();
    let pairwise = (0..k)
        .map(|i| (0..k).map(|j| (0..n).filter(|&g| claims[i][g] && claims[j][g]).count()).collect())
        .collect();
    let spearman = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { spearman(oriented[i], oriented[j]) }).collect())
        .collect();
    Ok(ClaimIntersection {
        names: names.iter().map(|s| s.to_string()).collect(),
        all,
        pairwise,
        spearman,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproducibilityScan {
    /// Genes removed before the correlation stopped being significant.
    pub removed: usize,
    /// Spearman correlation of the remaining genes at the stop.
    pub final_correlation: f64,
    /// Set when the scan ran out of genes while still significant.
    pub exhausted: bool,
}

/// One-sided p-value of a positive Spearman correlation, via the Fisher
/// transform with a normal approximation.
pub fn spearman_p_value(r: f64, n: usize) -> f64 {
    if n <= 3 || !r.is_finite() {
        return 1.0;
    }
    let z = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh() * ((n - 3) as f64).sqrt();
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Removes, one at a time, the gene ranked highest in both vectors (smallest
/// worse-of-two rank) until the Spearman correlation of what remains is no
/// longer significantly positive at level `alpha`. Stops with `exhausted`
/// when fewer than 10 genes would remain.
pub fn reproducibility_scan(a: &[f64], b: &[f64], alpha: f64) -> Result<ReproducibilityScan> {
    if a.len() != b.len() {
        return Err(Error::Shape("SNR vectors cover different gene universes".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = a.len();
    let ra = descending_ranks(a);
    let rb = descending_ranks(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&g| (ra[g].max(rb[g]), ra[g].min(rb[g]), g));

    let mut removed = 0;
    loop {
        let rest = &order[removed..];
        if rest.len() < 10 {
            log::warn!("reproducibility scan stopped with {} genes left", rest.len());
            let (x, y): (Vec<f64>, Vec<f64>) = rest.iter().map(|&g| (a[g], b[g])).unzip();
            return Ok(ReproducibilityScan {
                removed,
                final_correlation: spearman(&x, &y),
                exhausted: true,
            });
        }
        let (x, y): (Vec<f64>, Vec<f64>) = rest.iter().map(|&g| (a[g], b[g])).unzip();
        let r = spearman(&x, &y);
        if spearman_p_value(r, rest.len()) >= alpha {
            return Ok(ReproducibilityScan {
                removed,
                final_correlation: r,
                exhausted: false,
            });
        }
        removed += 1;
    }
}

/// Wraps a phase onto `[-pi, pi)`; exposed for report consumers.
pub fn display_phase(phase: f64) -> f64 {
    if phase.is_finite() {
        wrap_angle(phase)
    } else {
        PI
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CellData, CellParams, ExperimentParams};

    #[test]
    fn quantile_interpolates_order_statistics() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&v, 0.025) - 1.075).abs() < 1e-12);
    }

    #[test]
    fn snr_of_full_period_grid() {
        // 12 points uniformly over one period: sum cos^2 = 6 exactly
        let period = 120.0;
        let t: Vec<f64> = (0..12).map(|i| i as f64 * period / 12.0).collect();
        let data = ObservedCells {
            n_genes: 1,
            n_experiments: 1,
            cells: vec![CellData { y: vec![0.0; 12], t }],
        };
        let mut state = ChainState {
            theta: vec![ExperimentParams {
                mu: TAU / period,
                psi: 0.3,
                lambda: 0.0,
                zeta: 1.0,
            }],
            phi: vec![0.1],
            gamma: vec![CellParams {
                a: 0.0,
                b: 0.0,
                c: 0.0,
                d: 0.0,
                amp: 1.0,
                sigma2: 1.0,
            }],
            log_posterior: 0.0,
        };
        let snr = snr_per_state(&state, &data)[0];
        assert!((snr - 6.0).abs() < 1e-12);
        state.gamma[0].amp = 2.0;
        assert!((snr_per_state(&state, &data)[0] - 24.0).abs() < 1e-11);
        state.gamma[0].amp = 0.0;
        assert_eq!(snr_per_state(&state, &data)[0], 0.0);
    }

    #[test]
    fn lpi_degenerate_and_rotation_invariant() {
        assert_eq!(lpi_from_samples(&[1.0; 50]), 0.0);
        let samples: Vec<f64> = (0..200).map(|i| 3.0 + 0.002 * i as f64).map(wrap_angle).collect();
        let base = lpi_from_samples(&samples);
        assert!(base < 0.5, "{base}");
        let rotated: Vec<f64> = samples.iter().map(|p| wrap_angle(p + 2.0)).collect();
        assert!((lpi_from_samples(&rotated) - base).abs() < 1e-9);
    }

    #[test]
    fn calibration_examples() {
        let control: Vec<f64> = (0..4994).map(|i| i as f64).collect();
        let cal = calibrate_threshold(&control, &control, 0.002, Direction::Greater).unwrap();
        assert_eq!(cal.claimed_count(), 10);
        let real = [5.0, 1.0, 3.0];
        let ctrl = [0.0, 1.0, 2.0, 3.0, 4.0];
        let cal = calibrate_threshold(&real, &ctrl, 0.25, Direction::Less).unwrap();
        assert_eq!(cal.threshold, 1.0);
        assert_eq!(cal.claimed, vec![false, false, false]);
        assert!(calibrate_threshold(&real, &ctrl, 0.0, Direction::Less).is_err());
        assert!(calibrate_threshold(&real, &[f64::NAN], 0.1, Direction::Less).is_err());
    }

    #[test]
    fn control_upper_limit_rule() {
        let upper = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(claim_by_control_upper_limits(&[3.5, 0.5, 10.0], &upper, 3), vec![true, false, true]);
    }

    #[test]
    fn spearman_basics() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&x, &x) - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -v * v).collect();
        assert!((spearman(&x, &y) + 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn ordering_by_snr_then_phase() {
        let layout = rank_and_order(&[1.0, 5.0], &[0.0, 0.0], &default_group_sizes(2)).unwrap();
        assert_eq!(layout.order, vec![1, 0]);
        let snr = [9.0, 8.0, 7.0, 1.0];
        let phase = [1.0, -3.0, 0.5, -1.0];
        let layout = rank_and_order(&snr, &phase, &[3]).unwrap();
        assert_eq!(layout.order, vec![1, 2, 0, 3]);
        assert_eq!(layout.groups, vec![0..3, 3..4]);
        assert_eq!(default_group_sizes(1300), vec![300, 200, 200, 200, 200, 200]);
        assert_eq!(default_group_sizes(302), vec![300, 1, 1]);
    }

    #[test]
    fn intersections() {
        let a = [true, true, false, false];
        let b = [true, false, true, false];
        let sa = [4.0, 3.0, 2.0, 1.0];
        let r = intersect_claims(&["a", "b"], &[&a, &a], &[&sa, &sa]).unwrap();
        assert_eq!(r.all, vec![0, 1]);
        let r = intersect_claims(&["a", "b"], &[&a, &b], &[&sa, &sa]).unwrap();
        assert_eq!(r.all, vec![0]);
        assert_eq!(r.pairwise, vec![vec![2, 1], vec![1, 2]]);
        assert_eq!(r.spearman[0][0], 1.0);
        let none = [false, false, true, true];
        let r = intersect_claims(&["a", "c"], &[&a, &none], &[&sa, &sa]).unwrap();
        assert!(r.all.is_empty());
    }

    #[test]
    fn reproducibility_of_identical_vectors_runs_to_exhaustion() {
        let v: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() + i as f64 * 0.01).collect();
        let scan = reproducibility_scan(&v, &v, 0.05).unwrap();
        assert!(scan.exhausted);
        assert_eq!(scan.removed, 191);
    }

    #[test]
    fn bic_penalty_only_when_likelihoods_equal() {
        let data = ObservedCells {
            n_genes: 1,
            n_experiments: 2,
            cells: vec![
                CellData {
                    t: vec![0.0, 10.0, 20.0],
                    y: vec![0.1, 0.2, -0.1],
                },
                CellData::default(),
            ],
        };
        let cell = CellParams {
            a: 0.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
            amp: 0.0,
            sigma2: 0.5,
        };
        let theta = ExperimentParams {
            mu: 0.04,
            psi: 0.0,
            lambda: 0.0,
            zeta: 1.0,
        };
        let state = ChainState {
            theta: vec![theta; 2],
            phi: vec![0.0],
            gamma: vec![cell; 2],
            log_posterior: 0.0,
        };
        let b = bic01(&state, &state, &data, 0).unwrap();
        assert!((b + 2.0 * 3f64.ln()).abs() < 1e-12);
        let empty = ObservedCells {
            cells: vec![CellData::default(), CellData::default()],
            ..data
        };
        assert_eq!(bic01(&state, &state, &empty, 0), None);
    }
}
