use ascnn::gate::{gate_case, GateThresholds, SSIMParams};
use ascnn::network::*;
use ascnn::refine::RunFilterParams;
use ascnn::train::*;
use ascnn::volume::*;
use ascnn::{Error, Exec};

/// Centered 64×64 window with a matching network keeps these tests fast.
fn small_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs,
        seed,
        network: NetworkSpec {
            input_height: 64,
            input_width: 64,
            ..NetworkSpec::canonical()
        },
        window: CropWindow {
            row_offset: 88,
            col_offset: 88,
            out_h: 64,
            out_w: 64,
        },
        ..TrainConfig::default()
    }
}

fn cases(seeds: std::ops::Range<u64>) -> Vec<PatientCase> {
    seeds
        .map(|s| gen_phantom(s, &PhantomParams::desk()).unwrap())
        .collect()
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let data = cases(0..2);
    let cfg = small_config(2, 7);
    let a = train(&data, &cfg, Exec::Sequential).unwrap();
    let b = train(&data, &cfg, Exec::Parallel).unwrap();
    assert_eq!(
        checkpoint_bytes(&a.state, Some(a.optimizer)).unwrap(),
        checkpoint_bytes(&b.state, Some(b.optimizer)).unwrap()
    );
    assert_eq!(a.loss_curve, b.loss_curve);
    let c = train(&data, &small_config(2, 8), Exec::Parallel).unwrap();
    assert_ne!(c.state, a.state);
}

#[test]
fn loss_decreases_and_pipeline_runs() {
    let data = cases(10..13);
    let cfg = small_config(4, 1);
    let out = train(&data, &cfg, Exec::Parallel).unwrap();
    let curve = &out.loss_curve;
    assert_eq!(curve.len(), 4);
    assert!(curve.last().unwrap().mean_loss < curve[0].mean_loss);
    assert!(out.base_samples > 0);
    assert!(out.state.norms_initialized());
    assert!(out.loss_curve_csv().starts_with("epoch,mean_loss"));

    let reports = evaluate_cases(
        &out.state,
        &cases(20..21),
        &cfg,
        &RunFilterParams::default(),
        Exec::Parallel,
    )
    .unwrap();
    assert_eq!(reports.len(), 1);
    let wt = reports[0].region(ascnn::metrics::Region::WT).dice;
    assert!((0.0..=1.0).contains(&wt));
}

#[test]
fn batch_order_does_not_change_loss_or_gradients() {
    let data = cases(30..31);
    let cfg = small_config(1, 0);
    let samples =
        collect_samples(&data, &cfg.window, &cfg.gate, &cfg.ssim, Exec::Parallel).unwrap();
    let batch: Vec<Sample> = samples.into_iter().take(6).collect();
    let mut rev = batch.clone();
    rev.reverse();
    let mut s1 = NetworkState::build(&cfg.network, 3).unwrap();
    let mut s2 = s1.clone();
    let (l1, g1) = loss_and_gradients(&mut s1, &batch, Exec::Parallel).unwrap();
    let (l2, g2) = loss_and_gradients(&mut s2, &rev, Exec::Parallel).unwrap();
    assert!((l1 - l2).abs() < 1e-9 * l1.abs().max(1.0));
    // Conv biases feeding a batch norm have a zero true gradient, so compare
    // against the norm of the whole gradient.
    let flat = |g: &Gradients| -> Vec<f64> {
        g.blocks()
            .iter()
            .flat_map(|b| b.iter().map(|&x| x as f64))
            .collect()
    };
    let (a, b) = (flat(&g1), flat(&g2));
    let num = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(num / den < 1e-5, "{}", num / den);
}

#[test]
fn augmentation_flips_inputs_and_labels_together() {
    let data = cases(40..41);
    let cfg = small_config(1, 0);
    let samples =
        collect_samples(&data, &cfg.window, &cfg.gate, &cfg.ssim, Exec::Sequential).unwrap();
    let aug = augment(&samples[..1]);
    assert_eq!(aug.len(), 3);
    assert_eq!(aug[0], samples[0]);
    assert_eq!(aug[1].flipped(Flip::UpDown), samples[0]);
    assert_eq!(aug[2].flipped(Flip::LeftRight), samples[0]);
}

#[test]
fn inference_needs_trained_statistics() {
    let case = &cases(50..51)[0];
    let cfg = small_config(1, 0);
    let state = NetworkState::build(&cfg.network, 0).unwrap();
    let report = gate_case(
        case,
        &GateThresholds::default(),
        &SSIMParams::default(),
        Exec::Sequential,
    )
    .unwrap();
    assert!(matches!(
        predict_case(case, &state, &report, &cfg.window, Exec::Sequential),
        Err(Error::UninitializedStats)
    ));
    let [d, h, w] = case.dims();
    let none = ascnn::gate::SliceGateReport {
        slices: report
            .slices
            .iter()
            .map(|v| ascnn::gate::SliceVerdict {
                retained: false,
                ..v.clone()
            })
            .collect(),
    };
    assert_eq!(
        predict_case(case, &state, &none, &cfg.window, Exec::Sequential).unwrap(),
        LabelVolume::background(d, h, w)
    );
}

#[test]
fn invalid_configs_rejected() {
    let data = cases(0..1);
    let bad = TrainConfig {
        batch_size: 0,
        ..small_config(1, 0)
    };
    assert!(train(&data, &bad, Exec::Sequential).is_err());
    let mismatched = TrainConfig {
        network: NetworkSpec::canonical(),
        ..small_config(1, 0)
    };
    assert!(train(&data, &mismatched, Exec::Sequential).is_err());
}

#[test]
fn repeatability_table_shape() {
    let data = cases(60..62);
    let eval = cases(70..71);
    let cfg = small_config(1, 0);
    let table = repeatability_harness(
        &data,
        &cfg,
        2,
        &eval,
        &RunFilterParams::default(),
        Exec::Parallel,
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(table.runs.len(), 2);
    assert_ne!(table.runs[0].seed, table.runs[1].seed);
    assert!(table.wt_mean_stdev() >= 0.0);
    assert!(table.to_csv().lines().count() >= 4);
}
