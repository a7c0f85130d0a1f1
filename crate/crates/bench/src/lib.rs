//! Shared workloads for the benchmarks.

use periodmc::controls::PeriodicDesign;
use periodmc::model::ObservedCells;
use periodmc::sampler::initial_state;
use periodmc::{ChainState, ModelKind, PriorConstants, SamplerConfig};

pub struct Workload {
    pub data: ObservedCells,
    pub consts: PriorConstants,
    pub config: SamplerConfig,
    pub state: ChainState,
}

/// Three experiments of 24 points with half the genes periodic.
pub fn workload(n_genes: usize, model: ModelKind) -> Workload {
    let design = PeriodicDesign {
        n_genes,
        grids: vec![
            (0..24).map(|i| i as f64 * 10.0).collect(),
            (0..24).map(|i| i as f64 * 12.0).collect(),
            (0..24).map(|i| 5.0 + i as f64 * 15.0).collect(),
        ],
        period: 150.0,
        lambda: 0.002,
        psi: vec![0.0, 0.8, -1.2],
        n_periodic: n_genes / 2,
        amp_range: (1.0, 2.0),
        noise_sd_range: (0.1, 0.2),
        intercept_sd: 0.2,
        slope_sd: 0.001,
    };
    let (matrix, _) = design.simulate(7).expect("valid design");
    let consts = PriorConstants::default();
    let config = SamplerConfig::new(1, 0, 1, 11, &consts);
    let data = ObservedCells::new(&matrix);
    let state = initial_state(&data, &consts, model, None);
    Workload {
        data,
        consts,
        config,
        state,
    }
}
