//! Gene-by-experiment time-series matrix: ingestion, validation and the
//! array-level preprocessing steps (median centering, replicate averaging,
//! sparse-series filtering).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A single measurement slot; `None` marks a missing observation.
pub type Observation = Option<f64>;

/// Input layout accepted by [`load_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// `gene  experiment  time  value`, one observation per line.
    Long,
    /// One table per experiment: a `gene` column followed by one column per
    /// time point.
    Wide,
}

/// All series of one experiment, sampled on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSeries {
    pub id: String,
    /// Strictly increasing sampling times in minutes.
    pub times: Vec<f64>,
    /// `rows[g][t]`, aligned with the owning matrix's gene list.
    pub rows: Vec<Vec<Observation>>,
}

impl ExperimentSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesMatrix {
    genes: Vec<String>,
    experiments: Vec<ExperimentSeries>,
}

impl TimeSeriesMatrix {
    pub fn new(genes: Vec<String>, experiments: Vec<ExperimentSeries>) -> Result<Self> {
        if genes.is_empty() {
            return Err(Error::Shape("matrix has no genes".into()));
        }
        if experiments.is_empty() {
            return Err(Error::Shape("matrix has no experiments".into()));
        }
        let mut seen = HashMap::with_capacity(genes.len());
        for (i, g) in genes.iter().enumerate() {
            if let Some(prev) = seen.insert(g.as_str(), i) {
                return Err(Error::Shape(format!(
                    "gene `{g}` listed twice (positions {prev} and {i})"
                )));
            }
        }
        let mut exp_ids = HashMap::new();
        for exp in &experiments {
            if exp_ids.insert(exp.id.as_str(), ()).is_some() {
                return Err(Error::Shape(format!("experiment `{}` listed twice", exp.id)));
            }
            if let Some(index) = exp.times.windows(2).position(|w| !(w[0] < w[1])) {
                return Err(Error::NonIncreasingTimes {
                    experiment: exp.id.clone(),
                    index: index + 1,
                });
            }
            if exp.times.iter().any(|t| !t.is_finite() || *t < 0.0) {
                return Err(Error::Shape(format!(
                    "experiment `{}` has a negative or non-finite time",
                    exp.id
                )));
            }
            if exp.rows.len() != genes.len() {
                return Err(Error::Shape(format!(
                    "experiment `{}` has {} rows for {} genes",
                    exp.id,
                    exp.rows.len(),
                    genes.len()
                )));
            }
            if let Some(g) = exp.rows.iter().position(|r| r.len() != exp.times.len()) {
                return Err(Error::Shape(format!(
                    "experiment `{}`, gene `{}`: {} slots for {} time points",
                    exp.id,
                    genes[g],
                    exp.rows[g].len(),
                    exp.times.len()
                )));
            }
        }
        Ok(Self { genes, experiments })
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn experiments(&self) -> &[ExperimentSeries] {
        &self.experiments
    }

    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn n_experiments(&self) -> usize {
        self.experiments.len()
    }

    pub fn series(&self, gene: usize, experiment: usize) -> &[Observation] {
        &self.experiments[experiment].rows[gene]
    }

    pub fn times(&self, experiment: usize) -> &[f64] {
        &self.experiments[experiment].times
    }

    pub fn gene_index(&self, gene: &str) -> Option<usize> {
        self.genes.iter().position(|g| g == gene)
    }

    pub fn experiment_index(&self, id: &str) -> Option<usize> {
        self.experiments.iter().position(|e| e.id == id)
    }

    pub fn present_count(&self) -> usize {
        self.experiments
            .iter()
            .flat_map(|e| e.rows.iter())
            .flat_map(|r| r.iter())
            .filter(|o| o.is_some())
            .count()
    }

    /// Number of present observations of `gene` across all experiments.
    pub fn gene_present_count(&self, gene: usize) -> usize {
        self.experiments
            .iter()
            .map(|e| e.rows[gene].iter().filter(|o| o.is_some()).count())
            .sum()
    }

    /// Same genes and time grids, with every value rewritten by `f`. The
    /// closure sees `(gene, experiment, slot, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, usize, Observation) -> Observation) -> Self {
        let experiments = self
            .experiments
            .iter()
            .enumerate()
            .map(|(e, exp)| ExperimentSeries {
                id: exp.id.clone(),
                times: exp.times.clone(),
                rows: exp
                    .rows
                    .iter()
                    .enumerate()
                    .map(|(g, row)| row.iter().enumerate().map(|(t, &v)| f(g, e, t, v)).collect())
                    .collect(),
            })
            .collect();
        Self {
            genes: self.genes.clone(),
            experiments,
        }
    }

    /// Restriction to the listed experiments, in the given order.
    pub fn select_experiments(&self, indices: &[usize]) -> Result<Self> {
        let experiments = indices
            .iter()
            .map(|&i| {
                self.experiments
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("no experiment at index {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.genes.clone(), experiments)
    }

    /// Restriction to the listed genes, in the given order.
    pub fn select_genes(&self, indices: &[usize]) -> Result<Self> {
        let genes = indices.iter().map(|&g| self.genes[g].clone()).collect();
        let experiments = self
            .experiments
            .iter()
            .map(|exp| ExperimentSeries {
                id: exp.id.clone(),
                times: exp.times.clone(),
                rows: indices.iter().map(|&g| exp.rows[g].clone()).collect(),
            })
            .collect();
        Self::new(genes, experiments)
    }

    /// True when both matrices have the same genes, experiments and grids.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.genes == other.genes
            && self.experiments.len() == other.experiments.len()
            && self
                .experiments
                .iter()
                .zip(&other.experiments)
                .all(|(a, b)| a.id == b.id && a.times == b.times)
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses a numeric cell; `NA`, empty and unparseable cells are absent.
fn parse_value(cell: &str) -> Observation {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return None;
    }
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_time(cell: &str, location: impl Fn() -> String) -> Result<f64> {
    let t: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::parse(location(), format!("invalid time `{}`", cell.trim())))?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::parse(location(), format!("time must be finite and >= 0, got {t}")));
    }
    Ok(t)
}

pub fn load_matrix(path: impl AsRef<Path>, format: Format) -> Result<TimeSeriesMatrix> {
    let path = path.as_ref();
    match format {
        Format::Long => parse_long(&read_to_string(path)?, &path.display().to_string()),
        Format::Wide => {
            let files = if path.is_dir() {
                let mut files: Vec<PathBuf> = fs::read_dir(path)
                    .map_err(|e| Error::io(path, e))?
                    .filter_map(|entry| entry.ok().map(|e| e.path()))
                    .filter(|p| p.is_file())
                    .collect();
                files.sort();
                files
            } else {
                vec![path.to_path_buf()]
            };
            load_wide(&files)
        }
    }
}

/// Parses the canonical long format. Experiments and genes keep their order
/// of first appearance; each experiment's grid is the sorted set of times
/// mentioned for it, and slots never mentioned are absent.
pub fn parse_long(text: &str, source: &str) -> Result<TimeSeriesMatrix> {
    struct Exp {
        id: String,
        cells: HashMap<(usize, u64), (Observation, usize)>,
        times: Vec<f64>,
    }

    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source, "empty input"))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols != ["gene", "experiment", "time", "value"] {
        return Err(Error::parse(
            format!("{source}:1"),
            "expected header `gene\\texperiment\\ttime\\tvalue`",
        ));
    }

    let mut genes: Vec<String> = Vec::new();
    let mut gene_index: HashMap<String, usize> = HashMap::new();
    let mut exps: Vec<Exp> = Vec::new();
    let mut exp_index: HashMap<String, usize> = HashMap::new();

    for (i, line) in lines {
        let lineno = i + 1;
        let loc = || format!("{source}:{lineno}");
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(loc(), format!("expected 4 fields, found {}", fields.len())));
        }
        let gene = fields[0].trim();
        let exp = fields[1].trim();
        if gene.is_empty() || exp.is_empty() {
            return Err(Error::parse(loc(), "empty gene or experiment identifier"));
        }
        let time = parse_time(fields[2], loc)?;
        let value = parse_value(fields[3]);

        let g = *gene_index.entry(gene.to_string()).or_insert_with(|| {
            genes.push(gene.to_string());
            genes.len() - 1
        });
        let e = *exp_index.entry(exp.to_string()).or_insert_with(|| {
            exps.push(Exp {
                id: exp.to_string(),
                cells: HashMap::new(),
                times: Vec::new(),
            });
            exps.len() - 1
        });
        let slot = &mut exps[e];
        if slot.cells.insert((g, time.to_bits()), (value, lineno)).is_some() {
            return Err(Error::DuplicateObservation {
                gene: gene.to_string(),
                experiment: exp.to_string(),
                time,
                line: lineno,
            });
        }
        slot.times.push(time);
    }

    let n_genes = genes.len();
    let experiments = exps
        .into_iter()
        .map(|mut exp| {
            exp.times.sort_by(f64::total_cmp);
            exp.times.dedup();
            let slot_of: HashMap<u64, usize> =
                exp.times.iter().enumerate().map(|(i, t)| (t.to_bits(), i)).collect();
            let mut rows = vec![vec![None; exp.times.len()]; n_genes];
            for ((g, bits), (value, _)) in exp.cells {
                rows[g][slot_of[&bits]] = value;
            }
            ExperimentSeries {
                id: exp.id,
                times: exp.times,
                rows,
            }
        })
        .collect();
    TimeSeriesMatrix::new(genes, experiments)
}

/// Reads one wide table per file; the experiment id is the file stem. Genes
/// missing from a table are absent in that experiment.
pub fn load_wide(paths: &[PathBuf]) -> Result<TimeSeriesMatrix> {
    let mut tables = Vec::with_capacity(paths.len());
    for path in paths {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        tables.push((id, read_to_string(path)?, path.display().to_string()));
    }
    let tables: Vec<(&str, &str, &str)> = tables
        .iter()
        .map(|(id, text, src)| (id.as_str(), text.as_str(), src.as_str()))
        .collect();
    parse_wide(&tables)
}

/// Parses `(experiment id, table text, source name)` triples in wide layout.
pub fn parse_wide(tables: &[(&str, &str, &str)]) -> Result<TimeSeriesMatrix> {
    let mut genes: Vec<String> = Vec::new();
    let mut gene_index: HashMap<String, usize> = HashMap::new();
    let mut parsed = Vec::with_capacity(tables.len());

    for &(id, text, source) in tables {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(source, "empty table"))?;
        let cols: Vec<&str> = header.split('\t').collect();
        if cols.first().map(|c| c.trim()) != Some("gene") {
            return Err(Error::parse(format!("{source}:1"), "first column must be `gene`"));
        }
        let times = cols[1..]
            .iter()
            .map(|c| parse_time(c, || format!("{source}:1")))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(index) = times.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(Error::NonIncreasingTimes {
                experiment: id.to_string(),
                index: index + 1,
            });
        }
        let mut rows: HashMap<usize, Vec<Observation>> = HashMap::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != times.len() + 1 {
                return Err(Error::parse(
                    format!("{source}:{lineno}"),
                    format!("expected {} fields, found {}", times.len() + 1, fields.len()),
                ));
            }
            let gene = fields[0].trim().to_string();
            let g = *gene_index.entry(gene.clone()).or_insert_with(|| {
                genes.push(gene.clone());
                genes.len() - 1
            });
            let values = fields[1..].iter().map(|c| parse_value(c)).collect();
            if rows.insert(g, values).is_some() {
                return Err(Error::parse(
                    format!("{source}:{lineno}"),
                    format!("gene `{gene}` appears twice in experiment `{id}`"),
                ));
            }
        }
        parsed.push((id.to_string(), times, rows));
    }

    let n_genes = genes.len();
    let experiments = parsed
        .into_iter()
        .map(|(id, times, mut rows)| {
            let n = times.len();
            ExperimentSeries {
                id,
                times,
                rows: (0..n_genes)
                    .map(|g| rows.remove(&g).unwrap_or_else(|| vec![None; n]))
                    .collect(),
            }
        })
        .collect();
    TimeSeriesMatrix::new(genes, experiments)
}

/// Canonical long-format serialization. Every slot is written, absent ones
/// as `NA`; floats use the shortest representation that parses back to the
/// same bits.
pub fn write_long(matrix: &TimeSeriesMatrix, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "gene\texperiment\ttime\tvalue")?;
    for exp in matrix.experiments() {
        for (g, gene) in matrix.genes().iter().enumerate() {
            for (t, time) in exp.times.iter().enumerate() {
                match exp.rows[g][t] {
                    Some(v) => writeln!(out, "{gene}\t{}\t{time}\t{v}", exp.id)?,
                    None => writeln!(out, "{gene}\t{}\t{time}\tNA", exp.id)?,
                }
            }
        }
    }
    Ok(())
}

pub fn to_long_string(matrix: &TimeSeriesMatrix) -> String {
    let mut buf = Vec::new();
    write_long(matrix, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("long format is UTF-8")
}

/// Median with the midpoint convention for even counts. `values` is sorted
/// in place.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Shifts every array (one experiment at one time point) so that the median
/// over its present values is zero.
pub fn median_center(matrix: &TimeSeriesMatrix) -> TimeSeriesMatrix {
    let mut medians: Vec<Vec<f64>> = Vec::with_capacity(matrix.n_experiments());
    for exp in matrix.experiments() {
        let mut per_array = Vec::with_capacity(exp.len());
        for t in 0..exp.len() {
            let mut column: Vec<f64> = exp.rows.iter().filter_map(|r| r[t]).collect();
            match median(&mut column) {
                Some(m) => per_array.push(m),
                None => {
                    log::warn!(
                        "experiment `{}`, time {}: no present values, array left unchanged",
                        exp.id,
                        exp.times[t]
                    );
                    per_array.push(0.0);
                }
            }
        }
        medians.push(per_array);
    }
    matrix.map_values(|_, e, t, v| v.map(|x| x - medians[e][t]))
}

/// Cell-wise mean over present replicate values.
pub fn average_replicates(replicates: &[TimeSeriesMatrix]) -> Result<TimeSeriesMatrix> {
    let first = replicates
        .first()
        .ok_or_else(|| Error::InvalidArgument("no replicates given".into()))?;
    if let Some(i) = replicates.iter().position(|r| !r.same_shape(first)) {
        return Err(Error::Shape(format!(
            "replicate {i} differs from replicate 0 in genes, experiments or times"
        )));
    }
    Ok(first.map_values(|g, e, t, _| {
        let (sum, n) = replicates
            .iter()
            .filter_map(|r| r.experiments[e].rows[g][t])
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RemovalAction {
    SeriesBlanked {
        gene: String,
        experiment: String,
        missing: usize,
        slots: usize,
    },
    GeneDropped {
        gene: String,
    },
}

impl std::fmt::Display for RemovalAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RemovalAction::SeriesBlanked {
                gene,
                experiment,
                missing,
                slots,
            } => write!(f, "blank_series\t{gene}\t{experiment}\t{missing}/{slots} missing"),
            RemovalAction::GeneDropped { gene } => write!(f, "drop_gene\t{gene}\t-\tabsent in every experiment"),
        }
    }
}

pub fn removal_log_tsv(log: &[RemovalAction]) -> String {
    let mut s = String::from("action\tgene\texperiment\tdetail\n");
    for action in log {
        let _ = writeln!(s, "{action}");
    }
    s
}

/// Blanks every series whose missing fraction exceeds `max_missing_fraction`
/// and drops genes left without any present value.
pub fn filter_sparse(
    matrix: &TimeSeriesMatrix,
    max_missing_fraction: f64,
) -> Result<(TimeSeriesMatrix, Vec<RemovalAction>)> {
    if !(0.0..=1.0).contains(&max_missing_fraction) {
        return Err(Error::InvalidArgument(format!(
            "max missing fraction must lie in [0, 1], got {max_missing_fraction}"
        )));
    }
    let mut log = Vec::new();
    let mut blanked = vec![vec![false; matrix.n_experiments()]; matrix.n_genes()];
    for (e, exp) in matrix.experiments().iter().enumerate() {
        if exp.is_empty() {
            continue;
        }
        for (g, row) in exp.rows.iter().enumerate() {
            let missing = row.iter().filter(|o| o.is_none()).count();
            if missing == row.len() {
                continue;
            }
            if missing as f64 / row.len() as f64 > max_missing_fraction {
                blanked[g][e] = true;
                log.push(RemovalAction::SeriesBlanked {
                    gene: matrix.genes[g].clone(),
                    experiment: exp.id.clone(),
                    missing,
                    slots: row.len(),
                });
            }
        }
    }
    let filtered = matrix.map_values(|g, e, _, v| if blanked[g][e] { None } else { v });
    let mut keep = Vec::with_capacity(filtered.n_genes());
    for g in 0..filtered.n_genes() {
        if filtered.gene_present_count(g) > 0 {
            keep.push(g);
        } else {
            log.push(RemovalAction::GeneDropped {
                gene: filtered.genes[g].clone(),
            });
        }
    }
    if keep.is_empty() {
        return Err(Error::Shape("filtering removed every gene".into()));
    }
    let out = if keep.len() == filtered.n_genes() {
        filtered
    } else {
        filtered.select_genes(&keep)?
    };
    Ok((out, log))
}
