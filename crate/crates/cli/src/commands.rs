use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use periodmc::controls::{permute_matrix, regular_shape, simulate_m0, PeriodicDesign};
use periodmc::dataset::{
    average_replicates, filter_sparse, load_matrix, median_center, parse_long, removal_log_tsv, to_long_string,
};
use periodmc::diagnostics::{acf_tsv, residual_acf, residual_acf_tsv, trace_acf, variance_reduction, variance_reduction_tsv};
use periodmc::model::ObservedCells;
use periodmc::sampler::{posterior_mode, run_chain, ChainTrace};
use periodmc::snapshot::StateSet;
use periodmc::stats::{
    bic01, build_report, claim_by_control_upper_limits, default_group_sizes, heatmap_tsv, intersect_claims, rank_and_order, reproducibility_scan,
    GeneStatistics, PeriodicityReport, ReportSettings,
};
use periodmc::{Config, ModelKind, PriorConstants, SamplerConfig, TimeSeriesMatrix};

use crate::args::{
    ControlArgs, ControlKindArg, FitArgs, MatrixInput, PreprocessArgs, ReportArgs, SamplerOverrides, SimulateArgs,
    SimulateKind, SubsetsArgs,
};
use crate::manifest::RunManifest;
use crate::UsageError;

pub const DEFAULT_FPR: f64 = 0.002;
pub const DEFAULT_BIC_THRESHOLD: f64 = 0.0;

/// Everything a command reads from the config file after flag overrides.
pub struct Settings {
    pub config: Config,
    pub consts: PriorConstants,
    pub sampler: SamplerConfig,
    pub fpr: f64,
    pub bic_threshold: f64,
}

impl Settings {
    pub fn load(path: Option<&Path>, threads: Option<usize>) -> Result<Self> {
        let config = match path {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let mut s = Self::resolve(config)?;
        if let Some(t) = threads {
            s.sampler.threads = t;
        }
        Ok(s)
    }

    fn resolve(config: Config) -> Result<Self> {
        let consts = PriorConstants::from_config(&config)?;
        let sampler = SamplerConfig::from_config(&config, &consts)?;
        let fpr = config.get_or("fpr", DEFAULT_FPR)?;
        let bic_threshold = config.get_or("bic_threshold", DEFAULT_BIC_THRESHOLD)?;
        Ok(Self {
            config,
            consts,
            sampler,
            fpr,
            bic_threshold,
        })
    }

    fn with_overrides(mut self, o: &SamplerOverrides, fpr: Option<f64>, bic: Option<f64>) -> Result<Self> {
        let threads = self.sampler.threads;
        let mut config = std::mem::take(&mut self.config);
        if let Some(v) = o.iterations {
            config.set("iterations", v);
        }
        if let Some(v) = o.burn_in {
            config.set("burn_in", v);
        }
        if let Some(v) = o.thinning {
            config.set("thinning", v);
        }
        if let Some(v) = o.seed {
            config.set("seed", v);
        }
        if let Some(v) = fpr {
            config.set("fpr", v);
        }
        if let Some(v) = bic {
            config.set("bic_threshold", v);
        }
        let mut s = Self::resolve(config)?;
        s.sampler.threads = threads;
        Ok(s)
    }

    /// Config text with every resolved value filled in.
    fn snapshot(&self) -> String {
        let mut c = self.config.clone();
        self.consts.write_to(&mut c);
        self.sampler.write_to(&mut c);
        c.set("fpr", self.fpr);
        c.set("bic_threshold", self.bic_threshold);
        c.to_text()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_input(input: &MatrixInput, manifest: &mut RunManifest) -> Result<TimeSeriesMatrix> {
    manifest.input(&input.matrix)?;
    Ok(load_matrix(&input.matrix, input.format.into())?)
}

fn experiment_ids(m: &TimeSeriesMatrix) -> Vec<String> {
    m.experiments().iter().map(|e| e.id.clone()).collect()
}

fn read_states(path: PathBuf, hint: &str, manifest: &mut RunManifest) -> Result<StateSet> {
    if !path.is_file() {
        return Err(UsageError(format!("{} not found; {hint}", path.display())).into());
    }
    manifest.input(&path)?;
    Ok(StateSet::read(&path)?)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    MedianCenter,
    AverageReplicates,
    FilterMissing(f64),
}

pub fn preprocess(args: &PreprocessArgs, steps: &[Step]) -> Result<()> {
    let mut manifest = RunManifest::start("preprocess");
    let mut matrices = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        manifest.input(path)?;
        matrices.push(load_matrix(path, args.format.into())?);
    }
    let mut removals = Vec::new();
    for step in steps {
        match *step {
            Step::MedianCenter => {
                matrices = matrices.iter().map(median_center).collect();
            }
            Step::AverageReplicates => {
                matrices = vec![average_replicates(&matrices)?];
            }
            Step::FilterMissing(frac) => {
                if matrices.len() > 1 {
                    return Err(UsageError("--filter-missing needs a single matrix; average replicates first".into()).into());
                }
                let (m, log) = filter_sparse(&matrices[0], frac)?;
                matrices = vec![m];
                removals.extend(log);
            }
        }
        info!("applied {step:?}");
    }
    if matrices.len() != 1 {
        return Err(UsageError(format!("{} input matrices given without --average-replicates", matrices.len())).into());
    }
    create_dir(&args.out)?;
    manifest.write(args.out.join("matrix.tsv"), to_long_string(&matrices[0]))?;
    manifest.write(args.out.join("removed.tsv"), removal_log_tsv(&removals))?;
    manifest.config(format!("steps = {steps:?}\n"));
    manifest.finish(&args.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------

fn write_chain(
    dir: &Path,
    trace: &ChainTrace,
    matrix: &TimeSeriesMatrix,
    settings: &Settings,
    manifest: &mut RunManifest,
) -> Result<()> {
    let genes = matrix.genes();
    let exps = experiment_ids(matrix);
    let mode = posterior_mode(trace)?;
    let mode_index = trace
        .states
        .iter()
        .position(|s| std::ptr::eq(s, mode))
        .expect("mode is a retained state");
    manifest.write(dir.join("states.tsv"), StateSet::from_trace(trace, genes, &exps).to_tsv())?;
    let mode_set = StateSet::single(trace.model, genes, &exps, mode.clone(), trace.retained_iterations[mode_index]);
    manifest.write(dir.join("mode.tsv"), mode_set.to_tsv())?;
    manifest.write(dir.join("log_posterior.tsv"), trace.log_posterior_tsv())?;
    manifest.write(dir.join("acceptance.tsv"), trace.acceptance_tsv())?;

    let kept = &trace.log_posterior[settings.sampler.burn_in..];
    let max_lag = (kept.len() / 2).clamp(1, 200);
    if kept.len() > max_lag {
        let acf = trace_acf("log_posterior", kept, max_lag)?;
        info!("log-posterior ESS {:.1} of {} sweeps after burn-in", acf.ess, kept.len());
        manifest.write(dir.join("acf.tsv"), acf_tsv(&[acf]))?;
    }
    let data = ObservedCells::new(matrix);
    let residuals = residual_acf(&data, mode, trace.model)?;
    manifest.write(dir.join("residual_acf.tsv"), residual_acf_tsv(&residuals, genes, &exps))?;
    manifest.write(dir.join("config.txt"), settings.snapshot())?;
    Ok(())
}

pub fn fit(args: &FitArgs, settings: Settings) -> Result<()> {
    let settings = settings.with_overrides(&args.sampler, None, None)?;
    let mut manifest = RunManifest::start("fit");
    let matrix = load_input(&args.input, &mut manifest)?;
    let fixed = match &args.fix_theta {
        Some(path) => {
            manifest.input(path)?;
            let set = StateSet::read(path)?;
            if set.experiments != experiment_ids(&matrix) {
                return Err(UsageError(format!(
                    "{} holds experiments {:?}, the matrix has {:?}",
                    path.display(),
                    set.experiments,
                    experiment_ids(&matrix)
                ))
                .into());
            }
            Some(set.states[0].theta.clone())
        }
        None => None,
    };
    let model: ModelKind = args.model.into();
    info!(
        "fitting {model} to {} genes x {} experiments, {} sweeps",
        matrix.n_genes(),
        matrix.n_experiments(),
        settings.sampler.iterations
    );
    let trace = run_chain(&matrix, &settings.consts, &settings.sampler, model, fixed.as_deref())?;
    create_dir(&args.out)?;
    write_chain(&args.out, &trace, &matrix, &settings, &mut manifest)?;
    manifest.seed(settings.sampler.seed);
    manifest.config(settings.snapshot());
    manifest.finish(&args.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn control(args: &ControlArgs, settings: Settings) -> Result<()> {
    let settings = settings.with_overrides(&args.sampler, None, None)?;
    let mut manifest = RunManifest::start("control");
    let matrix = load_input(&args.input, &mut manifest)?;
    let real_mode = read_states(
        args.real.join("mode.tsv"),
        "run `periodmc fit` on the real data first and pass its output directory",
        &mut manifest,
    )?;
    real_mode.check_universe(matrix.genes(), &experiment_ids(&matrix))?;
    if real_mode.model != ModelKind::M1 {
        return Err(UsageError("the real-data fit must use the periodic model".into()).into());
    }
    let seed = args.control_seed.unwrap_or(settings.sampler.seed);
    create_dir(&args.out)?;
    let control = match args.kind {
        ControlKindArg::Permutation => permute_matrix(&matrix, seed),
        ControlKindArg::M0 => {
            let (m, truth) = simulate_m0(&matrix, &settings.consts, seed)?;
            let set = StateSet::single(ModelKind::M0, m.genes(), &experiment_ids(&m), truth, 0);
            manifest.write(args.out.join("truth.tsv"), set.to_tsv())?;
            m
        }
    };
    manifest.write(args.out.join("matrix.tsv"), to_long_string(&control))?;
    let theta = &real_mode.states[0].theta;
    let trace = run_chain(&control, &settings.consts, &settings.sampler, ModelKind::M1, Some(theta))?;
    write_chain(&args.out, &trace, &control, &settings, &mut manifest)?;
    if args.kind == ControlKindArg::Permutation {
        let rows = variance_reduction(
            &ObservedCells::new(&matrix),
            &ObservedCells::new(&control),
            &real_mode.states[0],
            posterior_mode(&trace)?,
            ModelKind::M1,
        )?;
        manifest.write(
            args.out.join("variance_reduction.tsv"),
            variance_reduction_tsv(&rows, matrix.genes(), &experiment_ids(&matrix)),
        )?;
    }
    manifest.seed(seed);
    manifest.config(settings.snapshot());
    manifest.finish(&args.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------

struct ReportOutputs {
    report: PeriodicityReport,
    intersection: String,
    heatmap: String,
    order: String,
}

/// The fits a report is computed from.
struct Fits<'a> {
    matrix: &'a TimeSeriesMatrix,
    real: &'a ChainTrace,
    control_matrix: &'a TimeSeriesMatrix,
    control: &'a ChainTrace,
    null: Option<&'a ChainTrace>,
}

fn compute_report(
    fits: &Fits<'_>,
    settings: &Settings,
    groups: &[usize],
    upper_limit_count: Option<usize>,
) -> Result<ReportOutputs> {
    let Fits {
        matrix,
        real,
        control_matrix,
        control,
        null,
    } = *fits;
    let data = ObservedCells::new(matrix);
    let real_stats = GeneStatistics::from_trace(real, &data)?;
    let control_stats = GeneStatistics::from_trace(control, &ObservedCells::new(control_matrix))?;
    let bic: Vec<Option<f64>> = match null {
        Some(null) => {
            let (m1, m0) = (posterior_mode(real)?, posterior_mode(null)?);
            (0..matrix.n_genes()).map(|g| bic01(m1, m0, &data, g)).collect()
        }
        None => vec![None; matrix.n_genes()],
    };
    let mut report = build_report(
        matrix.genes(),
        &real_stats,
        &control_stats,
        &bic,
        ReportSettings {
            fpr: settings.fpr,
            bic_threshold: settings.bic_threshold,
        },
    )?;

    if let Some(min_count) = upper_limit_count {
        let upper: Vec<f64> = control_stats.snr.iter().map(|s| s.q975).collect();
        let claims = claim_by_control_upper_limits(&real_stats.mean_snr(), &upper, min_count);
        for (row, claimed) in report.rows.iter_mut().zip(claims) {
            row.claimed_snr = claimed;
        }
    }
    let snr = report.mean_snr();
    let neg_lpi: Vec<f64> = report.rows.iter().map(|r| -r.lpi).collect();
    let bic_values: Vec<f64> = bic.iter().map(|b| b.unwrap_or(f64::NAN)).collect();
    let claims: Vec<Vec<bool>> = vec![
        report.rows.iter().map(|r| r.claimed_snr).collect(),
        report.rows.iter().map(|r| r.claimed_lpi).collect(),
        report.rows.iter().map(|r| r.claimed_bic).collect(),
    ];
    let n_stats = if null.is_some() { 3 } else { 2 };
    let names = &["snr", "lpi", "bic01"][..n_stats];
    let oriented: Vec<&[f64]> = vec![&snr, &neg_lpi, &bic_values];
    let claim_refs: Vec<&[bool]> = claims.iter().map(Vec::as_slice).collect();
    let intersection = intersect_claims(names, &claim_refs[..n_stats], &oriented[..n_stats])?;

    let sizes = if groups.is_empty() {
        default_group_sizes(matrix.n_genes())
    } else {
        groups.to_vec()
    };
    let phase: Vec<f64> = report.rows.iter().map(|r| r.phase).collect();
    let layout = rank_and_order(&snr, &phase, &sizes)?;
    let mut order = String::from("row\tgene\tgroup\tsnr_mean\tphase\n");
    for (grp, range) in layout.groups.iter().enumerate() {
        for row in range.clone() {
            let g = layout.order[row];
            let _ = writeln!(order, "{row}\t{}\t{}\t{}\t{}", matrix.genes()[g], grp + 1, snr[g], phase[g]);
        }
    }
    Ok(ReportOutputs {
        heatmap: heatmap_tsv(matrix, &layout),
        intersection: intersection.to_tsv(),
        order,
        report,
    })
}

fn thresholds_tsv(report: &PeriodicityReport, fpr: f64) -> String {
    let claimed = |f: fn(&periodmc::stats::GeneReport) -> bool| report.rows.iter().filter(|r| f(r)).count();
    format!(
        "statistic\tthreshold\tfpr\tclaimed\nsnr\t{}\t{fpr}\t{}\nlpi\t{}\t{fpr}\t{}\nbic01\t{}\tNA\t{}\n",
        report.snr_threshold,
        claimed(|r| r.claimed_snr),
        report.lpi_threshold,
        claimed(|r| r.claimed_lpi),
        report.bic_threshold,
        claimed(|r| r.claimed_bic),
    )
}

fn check_same_universe(a: &StateSet, b: &StateSet, what: &str) -> Result<()> {
    if a.genes != b.genes || a.experiments != b.experiments {
        return Err(UsageError(format!("{what} covers a different gene or experiment universe than the real fit")).into());
    }
    Ok(())
}

pub fn report(args: &ReportArgs, settings: Settings) -> Result<()> {
    let settings = settings.with_overrides(&SamplerOverrides::default(), args.fpr, args.bic_threshold)?;
    let mut manifest = RunManifest::start("report");
    let matrix = load_input(&args.input, &mut manifest)?;
    let real = read_states(args.real.join("states.tsv"), "run `periodmc fit` first", &mut manifest)?;
    real.check_universe(matrix.genes(), &experiment_ids(&matrix))?;
    if real.model != ModelKind::M1 {
        return Err(UsageError("--real must point at a periodic-model fit".into()).into());
    }
    let control = read_states(args.control.join("states.tsv"), "run `periodmc control` first", &mut manifest)?;
    check_same_universe(&real, &control, "the control trace")?;
    let control_path = args.control.join("matrix.tsv");
    manifest.input(&control_path)?;
    let control_matrix = parse_long(
        &fs::read_to_string(&control_path).with_context(|| format!("reading {}", control_path.display()))?,
        &control_path.display().to_string(),
    )?;
    control.check_universe(control_matrix.genes(), &experiment_ids(&control_matrix))?;
    let null = match &args.null {
        Some(dir) => {
            let set = read_states(dir.join("states.tsv"), "run `periodmc fit --model m0` first", &mut manifest)?;
            check_same_universe(&real, &set, "the trend-only trace")?;
            if set.model != ModelKind::M0 {
                return Err(UsageError("--null must point at a trend-only (m0) fit".into()).into());
            }
            Some(set.to_trace())
        }
        None => None,
    };
    let (real_trace, control_trace) = (real.to_trace(), control.to_trace());
    let fits = Fits {
        matrix: &matrix,
        real: &real_trace,
        control_matrix: &control_matrix,
        control: &control_trace,
        null: null.as_ref(),
    };
    let out = compute_report(
        &fits,
        &settings,
        &args.groups,
        None,
    )?;
    create_dir(&args.out)?;
    manifest.write(args.out.join("report.tsv"), out.report.to_tsv())?;
    manifest.write(args.out.join("thresholds.tsv"), thresholds_tsv(&out.report, settings.fpr))?;
    manifest.write(args.out.join("intersection.tsv"), out.intersection)?;
    manifest.write(args.out.join("order.tsv"), out.order)?;
    manifest.write(args.out.join("heatmap.tsv"), out.heatmap)?;
    manifest.config(settings.snapshot());
    manifest.finish(&args.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------

fn parse_subset(text: &str, matrix: &TimeSeriesMatrix) -> Result<(String, Vec<usize>)> {
    let (name, list) = text
        .split_once('=')
        .ok_or_else(|| UsageError(format!("subset `{text}` is not of the form NAME=EXP1,EXP2")))?;
    let name = name.trim();
    if name.is_empty() || name.contains(['/', '\\']) {
        return Err(UsageError(format!("invalid subset name `{name}`")).into());
    }
    let indices = list
        .split(',')
        .map(|id| {
            matrix
                .experiment_index(id.trim())
                .ok_or_else(|| UsageError(format!("subset `{name}` names unknown experiment `{}`", id.trim())).into())
        })
        .collect::<Result<Vec<usize>>>()?;
    if indices.is_empty() {
        bail!(UsageError(format!("subset `{name}` is empty")));
    }
    Ok((name.to_string(), indices))
}

pub fn subsets(args: &SubsetsArgs, settings: Settings) -> Result<()> {
    let settings = settings.with_overrides(&args.sampler, args.fpr, args.bic_threshold)?;
    let mut manifest = RunManifest::start("subsets");
    let matrix = load_input(&args.input, &mut manifest)?;
    let parsed = args
        .subsets
        .iter()
        .map(|s| parse_subset(s, &matrix))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = BTreeMap::new();
    for (name, _) in &parsed {
        if seen.insert(name.clone(), ()).is_some() {
            return Err(UsageError(format!("subset name `{name}` used twice")).into());
        }
    }
    create_dir(&args.out)?;
    let mut reports = Vec::with_capacity(parsed.len());
    for (k, (name, indices)) in parsed.iter().enumerate() {
        info!("subset {name}: experiments {indices:?}");
        let sub = matrix.select_experiments(indices)?;
        let cfg = SamplerConfig {
            seed: settings.sampler.seed.wrapping_add(k as u64),
            ..settings.sampler.clone()
        };
        let real = run_chain(&sub, &settings.consts, &cfg, ModelKind::M1, None)?;
        let null = run_chain(&sub, &settings.consts, &cfg, ModelKind::M0, None)?;
        let permuted = permute_matrix(&sub, cfg.seed);
        let theta = &posterior_mode(&real)?.theta;
        let control = run_chain(&permuted, &settings.consts, &cfg, ModelKind::M1, Some(theta))?;
        let out = compute_report(
            &Fits {
                matrix: &sub,
                real: &real,
                control_matrix: &permuted,
                control: &control,
                null: Some(&null),
            },
            &settings,
            &[],
            args.upper_limit_count,
        )?;
        let dir = args.out.join(name);
        create_dir(&dir)?;
        let exps = experiment_ids(&sub);
        let mode = StateSet::single(ModelKind::M1, sub.genes(), &exps, posterior_mode(&real)?.clone(), 0);
        manifest.write(dir.join("mode.tsv"), mode.to_tsv())?;
        manifest.write(dir.join("report.tsv"), out.report.to_tsv())?;
        manifest.write(dir.join("thresholds.tsv"), thresholds_tsv(&out.report, settings.fpr))?;
        manifest.write(dir.join("intersection.tsv"), out.intersection)?;
        reports.push((name.clone(), out.report));
    }

    let mut repro = String::from("subset_a\tsubset_b\tgenes\tremoved\tfinal_spearman\texhausted\n");
    let mut overlap =
        String::from("subset_a\tsubset_b\tstatistic\tclaimed_a\tclaimed_b\tclaimed_both\n");
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let (na, ra) = &reports[i];
            let (nb, rb) = &reports[j];
            let scan = reproducibility_scan(&ra.mean_snr(), &rb.mean_snr(), args.alpha)?;
            let _ = writeln!(
                repro,
                "{na}\t{nb}\t{}\t{}\t{}\t{}",
                ra.rows.len(),
                scan.removed,
                scan.final_correlation,
                u8::from(scan.exhausted)
            );
            for (stat, f) in claim_getters() {
                let a: Vec<bool> = ra.rows.iter().map(f).collect();
                let b: Vec<bool> = rb.rows.iter().map(f).collect();
                let both = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
                let _ = writeln!(
                    overlap,
                    "{na}\t{nb}\t{stat}\t{}\t{}\t{both}",
                    a.iter().filter(|x| **x).count(),
                    b.iter().filter(|x| **x).count()
                );
            }
        }
    }
    manifest.write(args.out.join("reproducibility.tsv"), repro)?;
    manifest.write(args.out.join("overlap.tsv"), overlap)?;
    manifest.write(args.out.join("venn.tsv"), venn_tsv(&reports))?;
    manifest.seed(settings.sampler.seed);
    manifest.config(settings.snapshot());
    manifest.finish(&args.out)?;
    Ok(())
}

type ClaimGetter = fn(&periodmc::stats::GeneReport) -> bool;

fn claim_getters() -> [(&'static str, ClaimGetter); 3] {
    [
        ("snr", |r| r.claimed_snr),
        ("lpi", |r| r.claimed_lpi),
        ("bic01", |r| r.claimed_bic),
    ]
}

/// Counts of SNR-claimed genes for every pattern of subset membership.
fn venn_tsv(reports: &[(String, PeriodicityReport)]) -> String {
    let mut counts: BTreeMap<Vec<bool>, usize> = BTreeMap::new();
    let n = reports.first().map_or(0, |r| r.1.rows.len());
    for g in 0..n {
        let key: Vec<bool> = reports.iter().map(|(_, r)| r.rows[g].claimed_snr).collect();
        if key.iter().any(|&k| k) {
            *counts.entry(key).or_default() += 1;
        }
    }
    let mut s: String = reports.iter().map(|(name, _)| format!("{name}\t")).collect();
    s.push_str("genes\n");
    for (key, count) in counts.iter().rev() {
        for &k in key {
            let _ = write!(s, "{}\t", u8::from(k));
        }
        let _ = writeln!(s, "{count}");
    }
    s
}

// ---------------------------------------------------------------------------

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || UsageError(format!("grid `{text}` is not START:STEP:COUNT"));
    if parts.len() != 3 {
        return Err(bad().into());
    }
    let start: f64 = parts[0].parse().map_err(|_| bad())?;
    let step: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    if !(step > 0.0) || count == 0 {
        return Err(bad().into());
    }
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

pub fn simulate(args: &SimulateArgs, settings: Settings) -> Result<()> {
    let mut manifest = RunManifest::start("simulate");
    let grids = args.grids.iter().map(|g| parse_grid(g)).collect::<Result<Vec<_>>>()?;
    let shape = regular_shape(args.genes, &grids)?;
    let exps = experiment_ids(&shape);
    let (matrix, truth) = match args.kind {
        SimulateKind::Periodic => {
            if !(0.0..=1.0).contains(&args.periodic_fraction) {
                return Err(UsageError("--periodic-fraction must lie in [0, 1]".into()).into());
            }
            let psi = if args.psi.is_empty() {
                vec![0.0; grids.len()]
            } else {
                args.psi.clone()
            };
            let design = PeriodicDesign {
                n_genes: args.genes,
                grids,
                period: args.period,
                lambda: args.lambda,
                psi,
                n_periodic: (args.periodic_fraction * args.genes as f64).round() as usize,
                amp_range: (args.amp[0], args.amp[1]),
                noise_sd_range: (args.noise_sd[0], args.noise_sd[1]),
                intercept_sd: 0.2,
                slope_sd: 0.001,
            };
            let (m, truth) = design.simulate(args.seed)?;
            let set = StateSet::single(ModelKind::M1, m.genes(), &exps, truth, 0);
            (m, set)
        }
        SimulateKind::M0 => {
            let (m, truth) = simulate_m0(&shape, &settings.consts, args.seed)?;
            let set = StateSet::single(ModelKind::M0, m.genes(), &exps, truth, 0);
            (m, set)
        }
    };
    create_dir(&args.out)?;
    manifest.write(args.out.join("matrix.tsv"), to_long_string(&matrix))?;
    manifest.write(args.out.join("truth.tsv"), truth.to_tsv())?;
    manifest.seed(args.seed);
    manifest.config(settings.snapshot());
    manifest.finish(&args.out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("5:15:3").unwrap(), vec![5.0, 20.0, 35.0]);
        assert!(parse_grid("0:0:3").is_err());
        assert!(parse_grid("0:1").is_err());
    }

    #[test]
    fn overrides_take_precedence_over_config() {
        let config = Config::parse("iterations = 50\nburn_in = 10\nfpr = 0.1\n", "mem").unwrap();
        let s = Settings::resolve(config).unwrap();
        assert_eq!(s.sampler.iterations, 50);
        let o = SamplerOverrides {
            iterations: Some(80),
            ..Default::default()
        };
        let s = s.with_overrides(&o, Some(0.01), None).unwrap();
        assert_eq!(s.sampler.iterations, 80);
        assert_eq!(s.sampler.burn_in, 10);
        assert_eq!(s.fpr, 0.01);
        assert_eq!(s.bic_threshold, 0.0);
    }
}
