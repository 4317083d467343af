use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ascnn::gate::{calibrate, gate_case};
use ascnn::metrics::{evaluate_case, RegionReport};
use ascnn::network::{
    count_flops_with, count_params, load_checkpoint, predict_case, save_checkpoint_with,
    FlopReport, ParamReport,
};
use ascnn::refine::refine_labels;
use ascnn::train::{repeatability_harness, train_with};
use ascnn::volume::{
    gen_phantom, load_case_dir, read_labels, save_case, write_labels, PatientCase, PhantomParams,
};
use ascnn::{Exec, PipelineConfig};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "ascnn",
    version,
    about = "Slice-gated brain tumor segmentation"
)]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 155 × 240 × 240 volumes.
    Full,
    /// 16-slice volumes for fast training.
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditFormat {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Write seeded synthetic cases, one directory each.
    GenPhantom {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Full)]
        preset: Preset,
        /// Brain slices at the top end with the upper half missing.
        #[arg(long, default_value_t = 0)]
        clipped_slices: usize,
    },
    /// Gate one case; prints one JSON record per slice.
    Gate {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on every case directory under --data.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Per-epoch loss CSV; printed to stdout when omitted.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Gate, normalize, run the network, refine and embed one case.
    Predict {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a label volume against truth; JSON on stdout.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Also write the metrics as a one-row CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value = "case")]
        case_id: String,
    },
    /// Parameter and FLOP audit of the configured network.
    Audit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AuditFormat::Json)]
        format: AuditFormat,
    },
    /// Retrain n times with consecutive seeds and tabulate Dice statistics.
    Repro {
        #[arg(long)]
        n_runs: usize,
        #[arg(long)]
        config: PathBuf,
    },
    /// Sweep the symmetry threshold over labeled cases.
    CalibrateGate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.1,0.15,0.2,0.25,0.28,0.3,0.35,0.4,0.5"
        )]
        grid: Vec<f64>,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display()))
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn load_case(dir: &Path) -> Result<PatientCase> {
    load_case_dir(dir).with_context(|| format!("loading case {}", dir.display()))
}

/// Every subdirectory of `dir`, in name order.
fn load_cases(dir: &Path) -> Result<Vec<PatientCase>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no case directories under {}", dir.display());
    }
    dirs.iter().map(|d| load_case(d)).collect()
}

fn audit_table(params: &ParamReport, flops: &[FlopReport]) -> String {
    let mut out = String::from("layer  kernels  parameters\n");
    for (i, (p, k)) in params
        .per_layer
        .iter()
        .zip(&params.per_layer_kernels)
        .enumerate()
    {
        out.push_str(&format!("{:>5}  {k:>7}  {p:>10}\n", i + 1));
    }
    let pw: Vec<String> = params.pointwise.iter().map(|p| p.to_string()).collect();
    out.push_str(&format!(
        "1x1 mixers        {} = {}\n",
        pw.join("+"),
        params.pointwise_total
    ));
    out.push_str(&format!(
        "total     {:>7}  {:>10}\n",
        params.kernels, params.total
    ));
    out.push_str(&format!(
        "auxiliary (norm scale/shift, not in total): {}\n",
        params.auxiliary
    ));
    for f in flops {
        out.push_str(&format!(
            "FLOPs {} slices of {}x{}: {:.2}G ({})\n",
            f.slices,
            f.slice_height,
            f.slice_width,
            f.total as f64 / 1e9,
            f.convention
        ));
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::GenPhantom {
            n,
            seed,
            out,
            preset,
            clipped_slices,
        } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            let base = match preset {
                Preset::Full => PhantomParams::default(),
                Preset::Desk => PhantomParams::desk(),
            };
            let params = PhantomParams {
                clipped_slices,
                ..base
            };
            params.validate()?;
            for i in 0..n as u64 {
                let case = gen_phantom(seed + i, &params)?;
                let dir = out.join(&case.case_id);
                save_case(&dir, &case).with_context(|| format!("writing {}", dir.display()))?;
                println!("{}", dir.display());
            }
        }
        Command::Gate { case, config } => {
            let cfg = load_config(config.as_deref())?;
            let case = load_case(&case)?;
            let report = gate_case(&case, &cfg.train.gate, &cfg.train.ssim, exec)?;
            print!("{}", report.to_json_lines()?);
        }
        Command::Train {
            data,
            config,
            out_checkpoint,
            loss_csv,
        } => {
            let cfg = load_config(config.as_deref())?;
            let cases = load_cases(&data)?;
            let outcome = train_with(&cases, &cfg.train, exec, &mut |e| {
                eprintln!(
                    "epoch {:>3}  loss {:.6}  rate {:.3e}",
                    e.epoch, e.mean_loss, e.last_rate
                )
            })?;
            save_checkpoint_with(&outcome.state, Some(outcome.optimizer), &out_checkpoint)
                .with_context(|| format!("writing {}", out_checkpoint.display()))?;
            match loss_csv {
                Some(p) => fs::write(&p, outcome.loss_curve_csv())
                    .with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", outcome.loss_curve_csv()),
            }
        }
        Command::Predict {
            case,
            checkpoint,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let state = load_checkpoint(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            let case = load_case(&case)?;
            let report = gate_case(&case, &cfg.train.gate, &cfg.train.ssim, exec)?;
            let pred = predict_case(&case, &state, &report, &cfg.train.window, exec)?;
            let refined = refine_labels(&pred, &cfg.refine)?;
            write_labels(&out, &refined).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Evaluate {
            pred,
            truth,
            csv,
            case_id,
        } => {
            let p = read_labels(&pred).with_context(|| format!("reading {}", pred.display()))?;
            let t = read_labels(&truth).with_context(|| format!("reading {}", truth.display()))?;
            let report = evaluate_case(&case_id, &p, &t)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(path) = csv {
                let text = format!("{}\n{}\n", RegionReport::csv_header(), report.csv_row());
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Audit { config, format } => {
            let cfg = load_config(config.as_deref())?;
            let spec = &cfg.train.network;
            let params = count_params(spec);
            let flops = [155, 128]
                .map(|n| count_flops_with(spec, n, spec.input_height, spec.input_width, cfg.flops))
                .into_iter()
                .collect::<ascnn::Result<Vec<_>>>()?;
            match format {
                AuditFormat::Json => {
                    let v = serde_json::json!({ "parameters": params, "flops": flops });
                    println!("{}", serde_json::to_string_pretty(&v)?);
                }
                AuditFormat::Table => print!("{}", audit_table(&params, &flops)),
            }
        }
        Command::Repro { n_runs, config } => {
            let cfg = load_config(Some(&config))?;
            let (Some(data), Some(eval)) = (&cfg.data_dir, &cfg.eval_dir) else {
                bail!("repro needs data_dir and eval_dir in the config");
            };
            let train_cases = load_cases(data)?;
            let eval_cases = load_cases(eval)?;
            let table = repeatability_harness(
                &train_cases,
                &cfg.train,
                n_runs,
                &eval_cases,
                &cfg.refine,
                exec,
                &mut |r| {
                    eprintln!(
                        "seed {}  dice mean ET {:.4} WT {:.4} TC {:.4}",
                        r.seed, r.mean[0], r.mean[1], r.mean[2]
                    )
                },
            )?;
            print!("{}", table.to_csv());
        }
        Command::CalibrateGate { data, config, grid } => {
            let cfg = load_config(config.as_deref())?;
            let cases = load_cases(&data)?;
            let rows = calibrate(&cases, &cfg.train.gate, &cfg.train.ssim, &grid, exec)?;
            println!("tau_sym,tau_outline,tau_bg,slices,removed,tumor_slices_removed");
            for r in rows {
                println!(
                    "{},{},{},{},{},{}",
                    r.tau_sym, r.tau_outline, r.tau_bg, r.slices, r.removed, r.tumor_slices_removed
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
