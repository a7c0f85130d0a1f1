//! Lossless tab-separated export and import of chain states.
//!
//! Layout: a `#model` line, then rows `sample block gene experiment v...`
//! with blocks `state` (log-posterior, iteration), `theta` (mu, psi,
//! lambda, zeta), `phi` and `cell` (a, b, c, d, A, sigma2). Floats use the
//! shortest round-trip representation, so a write/read cycle is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CellParams, ChainState, ExperimentParams, ModelKind};
use crate::sampler::ChainTrace;

const HEADER: &str = "sample\tblock\tgene\texperiment\tv1\tv2\tv3\tv4\tv5\tv6";

/// Chain states together with the gene and experiment labels they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSet {
    pub model: ModelKind,
    pub genes: Vec<String>,
    pub experiments: Vec<String>,
    pub states: Vec<ChainState>,
    /// Iteration index of each state.
    pub iterations: Vec<usize>,
}

impl StateSet {
    pub fn from_trace(trace: &ChainTrace, genes: &[String], experiments: &[String]) -> Self {
        Self {
            model: trace.model,
            genes: genes.to_vec(),
            experiments: experiments.to_vec(),
            states: trace.states.clone(),
            iterations: trace.retained_iterations.clone(),
        }
    }

    pub fn single(model: ModelKind, genes: &[String], experiments: &[String], state: ChainState, iteration: usize) -> Self {
        Self {
            model,
            genes: genes.to_vec(),
            experiments: experiments.to_vec(),
            states: vec![state],
            iterations: vec![iteration],
        }
    }

    /// Wraps the states as a trace (with empty log-posterior history and
    /// acceptance counts) for the statistics functions.
    pub fn to_trace(&self) -> ChainTrace {
        ChainTrace {
            model: self.model,
            states: self.states.clone(),
            retained_iterations: self.iterations.clone(),
            log_posterior: self.states.iter().map(|s| s.log_posterior).collect(),
            acceptance: Default::default(),
        }
    }

    /// Fails unless the labels match exactly, in order.
    pub fn check_universe(&self, genes: &[String], experiments: &[String]) -> Result<()> {
        if self.genes != genes {
            return Err(Error::Shape(format!(
                "state file covers {} genes that do not match the {} genes of the data",
                self.genes.len(),
                genes.len()
            )));
        }
        if self.experiments != experiments {
            return Err(Error::Shape(format!(
                "state file experiments {:?} do not match data experiments {:?}",
                self.experiments, experiments
            )));
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("#model\t{}\n{HEADER}\n", self.model);
        for (k, (state, iter)) in self.states.iter().zip(&self.iterations).enumerate() {
            let _ = writeln!(s, "{k}\tstate\t.\t.\t{}\t{iter}", state.log_posterior);
            for (e, t) in state.theta.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{k}\ttheta\t.\t{}\t{}\t{}\t{}\t{}",
                    self.experiments[e], t.mu, t.psi, t.lambda, t.zeta
                );
            }
            for (g, phi) in state.phi.iter().enumerate() {
                let _ = writeln!(s, "{k}\tphi\t{}\t.\t{phi}", self.genes[g]);
            }
            let ne = self.experiments.len();
            for (i, c) in state.gamma.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{k}\tcell\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    self.genes[i / ne],
                    self.experiments[i % ne],
                    c.a,
                    c.b,
                    c.c,
                    c.d,
                    c.amp,
                    c.sigma2
                );
            }
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let err = |line: usize, msg: String| Error::parse(format!("{source}:{}", line + 1), msg);

        let (_, first) = lines.next().ok_or_else(|| err(0, "empty state file".into()))?;
        let model: ModelKind = first
            .strip_prefix("#model\t")
            .ok_or_else(|| err(0, "expected `#model` line".into()))?
            .parse()
            .map_err(|e: Error| err(0, e.to_string()))?;
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => return Err(err(1, "missing column header".into())),
        }

        let mut set = StateSet {
            model,
            genes: Vec::new(),
            experiments: Vec::new(),
            states: Vec::new(),
            iterations: Vec::new(),
        };
        // Labels are collected from the first sample and enforced afterwards.
        let mut cur: Option<ChainState> = None;
        let mut cur_sample = usize::MAX;
        let (mut ti, mut pi, mut ci) = (0usize, 0usize, 0usize);

        for (ln, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() < 5 {
                return Err(err(ln, format!("expected at least 5 fields, got {}", f.len())));
            }
            let sample: usize = f[0].parse().map_err(|_| err(ln, format!("bad sample index `{}`", f[0])))?;
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .ok_or_else(|| err(ln, format!("missing value column {}", i - 3)))?
                    .parse::<f64>()
                    .map_err(|_| err(ln, format!("bad number `{}`", f[i])))
            };
            let first = set.states.is_empty();
            match f[1] {
                "state" => {
                    if let Some(done) = cur.take() {
                        finish(&mut set, done, ti, pi, ci).map_err(|m| err(ln, m))?;
                    }
                    if sample != set.states.len() {
                        return Err(err(ln, format!("samples out of order at {sample}")));
                    }
                    cur_sample = sample;
                    let iteration: usize = f
                        .get(5)
                        .ok_or_else(|| err(ln, "missing iteration".into()))?
                        .parse()
                        .map_err(|_| err(ln, "bad iteration".into()))?;
                    set.iterations.push(iteration);
                    cur = Some(ChainState {
                        theta: Vec::new(),
                        phi: Vec::new(),
                        gamma: Vec::new(),
                        log_posterior: num(4)?,
                    });
                    (ti, pi, ci) = (0, 0, 0);
                }
                block => {
                    let state = cur
                        .as_mut()
                        .filter(|_| sample == cur_sample)
                        .ok_or_else(|| err(ln, format!("`{block}` row outside its sample")))?;
                    match block {
                        "theta" => {
                            label(&mut set.experiments, first, ti, f[3]).map_err(|m| err(ln, m))?;
                            state.theta.push(ExperimentParams {
                                mu: num(4)?,
                                psi: num(5)?,
                                lambda: num(6)?,
                                zeta: num(7)?,
                            });
                            ti += 1;
                        }
                        "phi" => {
                            label(&mut set.genes, first, pi, f[2]).map_err(|m| err(ln, m))?;
                            state.phi.push(num(4)?);
                            pi += 1;
                        }
                        "cell" => {
                            let ne = set.experiments.len().max(1);
                            let (g, e) = (ci / ne, ci % ne);
                            if set.genes.get(g).map(String::as_str) != Some(f[2])
                                || set.experiments.get(e).map(String::as_str) != Some(f[3])
                            {
                                return Err(err(ln, format!("cell ({}, {}) out of order", f[2], f[3])));
                            }
                            state.gamma.push(CellParams {
                                a: num(4)?,
                                b: num(5)?,
                                c: num(6)?,
                                d: num(7)?,
                                amp: num(8)?,
                                sigma2: num(9)?,
                            });
                            ci += 1;
                        }
                        other => return Err(err(ln, format!("unknown block `{other}`"))),
                    }
                }
            }
        }
        if let Some(done) = cur.take() {
            finish(&mut set, done, ti, pi, ci).map_err(|m| err(text.lines().count(), m))?;
        }
        if set.states.is_empty() {
            return Err(Error::EmptyTrace);
        }
        Ok(set)
    }
}

fn label(labels: &mut Vec<String>, first: bool, index: usize, name: &str) -> std::result::Result<(), String> {
    if first {
        labels.push(name.to_string());
        Ok(())
    } else if labels.get(index).map(String::as_str) == Some(name) {
        Ok(())
    } else {
        Err(format!("label `{name}` does not match earlier samples"))
    }
}

fn finish(set: &mut StateSet, state: ChainState, ti: usize, pi: usize, ci: usize) -> std::result::Result<(), String> {
    let (ng, ne) = (set.genes.len(), set.experiments.len());
    if ti != ne || pi != ng || ci != ng * ne {
        return Err(format!(
            "sample {} is incomplete: {ti} theta, {pi} phi, {ci} cell rows",
            set.states.len()
        ));
    }
    set.states.push(state);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(k: f64) -> ChainState {
        let theta = ExperimentParams {
            mu: 0.0419 + k,
            psi: -1.0 / 3.0,
            lambda: 1e-3,
            zeta: 0.1,
        };
        let cell = |x: f64| CellParams {
            a: x,
            b: 1e-17,
            c: -2.5e-8,
            d: 37.0,
            amp: 0.1 + 0.2,
            sigma2: 0.04,
        };
        ChainState {
            theta: vec![theta, theta],
            phi: vec![0.7, std::f64::consts::PI - 1e-12, -3.0],
            gamma: (0..6).map(|i| cell(i as f64 / 7.0)).collect(),
            log_posterior: -1_234.567_890_123,
        }
    }

    fn set() -> StateSet {
        StateSet {
            model: ModelKind::M1,
            genes: vec!["g1".into(), "g2".into(), "g3".into()],
            experiments: vec!["e1".into(), "e2".into()],
            states: vec![state(0.0), state(1e-9)],
            iterations: vec![9, 19],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let s = set();
        let back = StateSet::parse(&s.to_tsv(), "mem").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_truncated_and_mislabelled_files() {
        let text = set().to_tsv();
        let truncated: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
        assert!(StateSet::parse(&truncated, "mem").is_err());
        let renamed = text.replacen("\tphi\tg2\t", "\tphi\tgX\t", 1);
        assert!(StateSet::parse(&renamed, "mem").is_err());
        assert!(StateSet::parse("#model\tm1\n", "mem").is_err());
    }

    #[test]
    fn universe_check() {
        let s = set();
        assert!(s.check_universe(&s.genes, &s.experiments).is_ok());
        assert!(s.check_universe(&s.genes[..2], &s.experiments).is_err());
    }
}
