use serde::{Deserialize, Serialize};

use super::run::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::gate::gate_case;
use crate::metrics::{aggregate, evaluate_case, Region, RegionReport};
use crate::network::{predict_case, NetworkState};
use crate::par::Exec;
use crate::refine::{refine_labels, RunFilterParams};
use crate::volume::PatientCase;

/// Full pipeline on each case (gate, network, refinement) scored against its truth.
pub fn evaluate_cases(
    state: &NetworkState,
    cases: &[PatientCase],
    config: &TrainConfig,
    refine: &RunFilterParams,
    exec: Exec,
) -> Result<Vec<RegionReport>> {
    cases
        .iter()
        .map(|case| {
            let truth = case.truth.as_ref().ok_or_else(|| {
                Error::InvalidConfig(format!("evaluation case {} has no truth", case.case_id))
            })?;
            let report = gate_case(case, &config.gate, &config.ssim, exec)?;
            let pred = predict_case(case, state, &report, &config.window, exec)?;
            evaluate_case(&case.case_id, &refine_labels(&pred, refine)?, truth)
        })
        .collect()
}

/// Dice statistics of one run, columns ET, WT, TC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproRow {
    pub seed: u64,
    pub mean: [f64; 3],
    pub median: [f64; 3],
    pub mode: [f64; 3],
}

impl ReproRow {
    fn cells(&self) -> [f64; 9] {
        let mut c = [0.0; 9];
        c[..3].copy_from_slice(&self.mean);
        c[3..6].copy_from_slice(&self.median);
        c[6..].copy_from_slice(&self.mode);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproTable {
    pub runs: Vec<ReproRow>,
    pub average: [f64; 9],
    /// Sample standard deviation per column; zero for a single run.
    pub stdev: [f64; 9],
}

impl ReproTable {
    pub fn from_runs(runs: Vec<ReproRow>) -> Self {
        let n = runs.len() as f64;
        let mut average = [0.0; 9];
        let mut stdev = [0.0; 9];
        for k in 0..9 {
            average[k] = runs.iter().map(|r| r.cells()[k]).sum::<f64>() / n;
            if runs.len() > 1 {
                let ss: f64 = runs
                    .iter()
                    .map(|r| (r.cells()[k] - average[k]).powi(2))
                    .sum();
                stdev[k] = (ss / (n - 1.0)).sqrt();
            }
        }
        Self {
            runs,
            average,
            stdev,
        }
    }

    pub fn wt_mean_stdev(&self) -> f64 {
        self.stdev[1]
    }

    /// Experiment rows, then average and standard deviation rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("exp,seed");
        for stat in ["mean", "median", "mode"] {
            for r in Region::ALL {
                out.push_str(&format!(",dice_{stat}_{}", r.name()));
            }
        }
        out.push('\n');
        let line = |label: String, seed: String, cells: [f64; 9]| {
            let mut s = format!("{label},{seed}");
            for c in cells {
                s.push_str(&format!(",{c:.4}"));
            }
            s.push('\n');
            s
        };
        for (i, r) in self.runs.iter().enumerate() {
            out.push_str(&line(format!("{}", i + 1), r.seed.to_string(), r.cells()));
        }
        out.push_str(&line("average".into(), String::new(), self.average));
        out.push_str(&line("stdev".into(), String::new(), self.stdev));
        out
    }
}

/// Trains `n_runs` times with seeds `config.seed + i` and scores each
/// run on `eval_cases`.
pub fn repeatability_harness(
    train_cases: &[PatientCase],
    config: &TrainConfig,
    n_runs: usize,
    eval_cases: &[PatientCase],
    refine: &RunFilterParams,
    exec: Exec,
    on_run: &mut dyn FnMut(&ReproRow),
) -> Result<ReproTable> {
    if n_runs == 0 || eval_cases.is_empty() {
        return Err(Error::InvalidConfig(
            "need at least one run and one evaluation case".into(),
        ));
    }
    let mut runs = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        let cfg = TrainConfig {
            seed: config.seed + i as u64,
            ..config.clone()
        };
        let outcome = train(train_cases, &cfg, exec)?;
        let reports = evaluate_cases(&outcome.state, eval_cases, &cfg, refine, exec)?;
        let dice = &aggregate(&reports).rows[0];
        let pick = |f: fn(&crate::metrics::Summary) -> f64| {
            dice.regions.map(|s| s.as_ref().map_or(0.0, f))
        };
        let row = ReproRow {
            seed: cfg.seed,
            mean: pick(|s| s.mean),
            median: pick(|s| s.median),
            mode: pick(|s| s.mode),
        };
        on_run(&row);
        runs.push(row);
    }
    Ok(ReproTable::from_runs(runs))
}
