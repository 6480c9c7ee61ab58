//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use wavfusion::data::{feature_file, generate, FeatureSequence, SynthSpec, UtteranceSample};
use wavfusion::fusion::{checkpoint, gated_fuse, GateInput, ModelConfig, WavFusionModel};
use wavfusion::metrics::{confusion_matrix, metrics};
use wavfusion::oracle::{compare, MarginBatch};
use wavfusion::rng::PortableRng;
use wavfusion::tensor::{Graph, ParamStore, Tensor};
use wavfusion::train::ablate::{run_grid, suite_rows, AblationTable, RowResult, Suite};
use wavfusion::train::gradcheck::{gradcheck, tiny_setup, GradcheckOptions};
use wavfusion::train::run::fit_dims;
use wavfusion::train::{evaluate, train, ExperimentConfig};
use wavfusion::Error;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let (config, samples) = tiny_setup(0);
    let report = gradcheck(&config, &samples, &GradcheckOptions::default()).expect("gradcheck runs");
    let secs = start.elapsed().as_secs_f64();
    verdict(
        report.passed() && secs < 120.0,
        format!(
            "max rel error {:.3e} < 1e-3 over {} tensors, worst {}, {secs:.1}s < 120s",
            report.max_rel_error(),
            report.params.len(),
            report.worst().name
        ),
    )
}

fn margin_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = PortableRng::new(2024);
    let (mut worst, mut triplets) = (0.0f64, 0);
    for _ in 0..100 {
        let batch = MarginBatch::random(&mut rng, 4, 3, 8);
        let c = compare(&batch, 0.5).expect("batch is valid");
        worst = worst.max(c.difference());
        triplets += c.triplets;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-10 && secs < 10.0,
        format!("100 batches, {triplets} triplets, max |diff| {worst:.3e} < 1e-10, {secs:.2}s < 10s"),
    )
}

fn small_model(classes: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        heads: 2,
        n_shallow: 2,
        n_deep: 1,
        lvc_codewords: 4,
        classes,
        ..ModelConfig::default()
    }
}

fn overfit_setup() -> (ExperimentConfig, Vec<UtteranceSample>) {
    let samples = generate(&SynthSpec {
        classes: 4,
        samples_per_class: 50,
        seed: 11,
        ..SynthSpec::default()
    })
    .expect("valid spec");
    let mut config = ExperimentConfig {
        model: small_model(4),
        epochs: 200,
        batch_size: 16,
        ..ExperimentConfig::default()
    };
    fit_dims(&mut config, &samples).expect("uniform dims");
    (config, samples)
}

fn overfit_smoke() -> Verdict {
    let start = Instant::now();
    let (base, samples) = overfit_setup();
    let accs: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = SEEDS
            .iter()
            .map(|&seed| {
                let config = ExperimentConfig { seed, ..base.clone() };
                let samples = &samples;
                s.spawn(move || {
                    let out = train(&config, samples, &[]).expect("training runs");
                    evaluate(&out.model, samples, config.modalities, config.precision)
                        .expect("evaluation runs")
                        .metrics
                        .accuracy
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker")).collect()
    });
    let secs = start.elapsed().as_secs_f64();
    let shown: Vec<String> = accs.iter().map(|a| format!("{a:.3}")).collect();
    verdict(
        accs.iter().all(|&a| a >= 0.95) && secs < 600.0,
        format!("train ACC per seed [{}] >= 0.95, {secs:.0}s < 600s", shown.join(", ")),
    )
}

/// Weak, independent class signal in every modality, so each one alone is
/// only partly informative.
fn trend_setup() -> (ExperimentConfig, Vec<UtteranceSample>) {
    let samples = generate(&SynthSpec {
        classes: 4,
        samples_per_class: 150,
        separation: [0.15; 3],
        correlation: 0.0,
        ..SynthSpec::default()
    })
    .expect("valid spec");
    let mut config = ExperimentConfig {
        model: small_model(4),
        epochs: 40,
        batch_size: 16,
        train_ratio: 0.6,
        val_ratio: 0.1,
        ..ExperimentConfig::default()
    };
    config.loss.balance = 1.0;
    fit_dims(&mut config, &samples).expect("uniform dims");
    (config, samples)
}

/// Runs the modality and lambda suites together, sharing identical runs.
fn trend_tables() -> (AblationTable, AblationTable, f64) {
    let start = Instant::now();
    let (base, samples) = trend_setup();
    let suites = [Suite::Modality, Suite::Lambda];
    let rows: Vec<_> = suites.iter().map(|&s| suite_rows(s, &base)).collect();
    let mut unique: Vec<ExperimentConfig> = Vec::new();
    let mut index = |c: ExperimentConfig| match unique.iter().position(|u| *u == c) {
        Some(i) => i,
        None => {
            unique.push(c);
            unique.len() - 1
        }
    };
    let slots: Vec<Vec<Vec<usize>>> = rows
        .iter()
        .map(|suite| {
            suite
                .iter()
                .map(|r| {
                    SEEDS
                        .iter()
                        .map(|&seed| {
                            index(ExperimentConfig {
                                seed,
                                ..r.config.clone()
                            })
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let results: Vec<_> = run_grid(&unique, &samples, threads())
        .into_iter()
        .map(|r| r.expect("run succeeds"))
        .collect();
    let mut tables = suites
        .iter()
        .zip(rows)
        .zip(slots)
        .map(|((&suite, rows), slots)| AblationTable {
            suite,
            seeds: SEEDS.to_vec(),
            rows: rows
                .into_iter()
                .zip(slots)
                .map(|(r, idx)| RowResult {
                    keys: r.keys,
                    per_seed: idx.iter().map(|&i| results[i]).collect(),
                })
                .collect(),
        });
    let modality = tables.next().unwrap();
    let lambda = tables.next().unwrap();
    (modality, lambda, start.elapsed().as_secs_f64())
}

fn mean_acc(table: &AblationTable, key: &str) -> f64 {
    let row = table.rows.iter().find(|r| r.keys[0] == key).expect("row exists");
    100.0 * row.mean().accuracy
}

fn multimodal_benefit(table: &AblationTable, secs: f64) -> Verdict {
    let acc = |k| mean_acc(table, k);
    let (a, at, av, avt) = (acc("A"), acc("A+T"), acc("A+V"), acc("A+V+T"));
    let pass = avt - at >= 2.0 && at - a >= 2.0 && avt - av >= 2.0;
    verdict(
        pass,
        format!(
            "mean ACC A {a:.2}, A+T {at:.2}, A+V {av:.2}, A+V+T {avt:.2}; gaps {:.2}, {:.2}, {:.2} >= 2 ({secs:.0}s with the lambda grid)",
            avt - at,
            at - a,
            avt - av
        ),
    )
}

fn lambda_trend(table: &AblationTable) -> Verdict {
    let acc = |k| mean_acc(table, k);
    let (l0, l1, l10) = (acc("0"), acc("1"), acc("10"));
    verdict(
        l1 - l0 >= 1.0 && l1 > l10 && table.rows.len() == 5,
        format!(
            "mean ACC lambda=0 {l0:.2}, lambda=1 {l1:.2}, lambda=10 {l10:.2}; need 1 - 0 = {:.2} >= 1 and 1 > 10",
            l1 - l0
        ),
    )
}

fn random_tensor(rng: &mut PortableRng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| scale * rng.normal()).collect(),
    )
    .unwrap()
}

fn gate_invariants() -> Verdict {
    let cfg = ModelConfig {
        d_model: 8,
        heads: 2,
        n_shallow: 1,
        n_deep: 1,
        lvc_codewords: 3,
        audio_dim: 5,
        text_dim: 4,
        visual_dim: 3,
        classes: 3,
        ..ModelConfig::default()
    };
    let mut rng = PortableRng::new(6);
    let (mut p_min, mut p_max) = (1.0f64, 0.0f64);
    let (mut outside, mut fixed_point) = (0.0f64, 0.0f64);
    for model_seed in 0..10 {
        let model = WavFusionModel::new(cfg.clone(), model_seed).unwrap();
        let layer = &model.deep[0];
        for _ in 0..100 {
            let scale = rng.uniform_in(0.1, 5.0);
            let (ta, tt, tv) = (
                rng.range_inclusive(1, 6),
                rng.range_inclusive(1, 6),
                rng.range_inclusive(1, 6),
            );
            let mut g = Graph::new();
            let state = g.constant(random_tensor(&mut rng, ta, 8, scale));
            let text = g.constant(random_tensor(&mut rng, tt, 8, scale));
            let visual = g.constant(random_tensor(&mut rng, tv, 8, scale));
            let trace = layer
                .forward(
                    &mut g,
                    &model.params,
                    state,
                    Some(text),
                    Some(visual),
                    GateInput::TextVisual,
                    &mut Vec::new(),
                )
                .unwrap();
            let p = g.value(trace.gate.unwrap());
            let (f1, f2, xf) = (
                g.value(trace.f1.unwrap()),
                g.value(trace.f2.unwrap()),
                g.value(trace.fused.unwrap()),
            );
            for &v in p.data() {
                p_min = p_min.min(v);
                p_max = p_max.max(v);
            }
            for ((&a, &b), &x) in f1.data().iter().zip(f2.data()).zip(xf.data()) {
                outside = outside.max(a.min(b) - x).max(x - a.max(b));
            }
            let same = trace.f1.unwrap();
            let (xs, _) = gated_fuse(&mut g, &model.params, &layer.gate, same, same, GateInput::TextVisual).unwrap();
            fixed_point = fixed_point.max(g.value(xs).max_abs_diff(g.value(same)));
        }
    }
    // One rounding step of slack for the convex combination.
    let pass = p_min > 0.0 && p_max < 1.0 && outside <= 1e-12 && fixed_point <= 1e-12;
    verdict(
        pass,
        format!(
            "1000 inputs: P in [{p_min:.3e}, {p_max:.6}], max excursion outside [min,max] {:.1e}, |X_F - X_F1| at X_F1 = X_F2 {fixed_point:.1e} <= 1e-12",
            outside.max(0.0)
        ),
    )
}

/// F1 per class from raw counts, weighted by support.
fn wf1_from_confusion(cm: &[Vec<usize>]) -> f64 {
    let n: usize = cm.iter().flatten().sum();
    let mut total = 0.0;
    for k in 0..cm.len() {
        let tp = cm[k][k] as f64;
        let support: usize = cm[k].iter().sum();
        let predicted: usize = cm.iter().map(|r| r[k]).sum();
        if tp > 0.0 {
            total += support as f64 * 2.0 * tp / (support + predicted) as f64;
        }
    }
    total / n as f64
}

fn metric_correctness() -> Verdict {
    let (pred, gold) = ([0, 1, 1, 1], [0, 0, 1, 1]);
    let m = metrics(&pred, &gold, 2).unwrap();
    let oracle = wf1_from_confusion(&confusion_matrix(&pred, &gold, 2).unwrap());
    let labels = [0, 2, 1, 1, 3, 0];
    let perfect = metrics(&labels, &labels, 4).unwrap();
    let pass = (m.weighted_f1 - 11.0 / 15.0).abs() < 1e-9
        && (m.weighted_f1 - oracle).abs() < 1e-9
        && perfect.accuracy == 1.0
        && perfect.weighted_f1 == 1.0;
    verdict(
        pass,
        format!(
            "worked WF1 {:.12} (confusion oracle {oracle:.12}), all-correct ({}, {})",
            m.weighted_f1, perfect.accuracy, perfect.weighted_f1
        ),
    )
}

fn format_offset(r: Result<impl Sized, Error>) -> Option<usize> {
    match r {
        Err(Error::Format { offset, .. }) => Some(offset),
        _ => None,
    }
}

fn format_round_trips() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();

    let samples = generate(&SynthSpec {
        classes: 2,
        samples_per_class: 3,
        ..SynthSpec::default()
    })
    .unwrap();
    let mut files = 0;
    for (i, s) in samples.iter().enumerate() {
        for seq in [&s.audio, &s.text, &s.visual].into_iter().flatten() {
            let first = dir.path().join(format!("{i}-{files}.wftf"));
            feature_file::write(&first, seq).unwrap();
            let back = feature_file::read(&first).unwrap();
            let again = feature_file::encode(&back).unwrap();
            if std::fs::read(&first).unwrap() != again {
                failures.push(format!("feature file {files} changed"));
            }
            files += 1;
        }
    }

    let (config, _) = tiny_setup(0);
    let model = WavFusionModel::new(config.model, 0).unwrap();
    let path = dir.path().join("model.wvfn");
    checkpoint::save(&model.params, &path).unwrap();
    let records = checkpoint::load(&path).unwrap();
    let last_payload = 4 * records.last().unwrap().1.numel();
    let mut store = ParamStore::new();
    for (name, t) in records {
        store.add(name, t);
    }
    let written = std::fs::read(&path).unwrap();
    if checkpoint::encode(&store).unwrap() != written {
        failures.push("checkpoint changed".into());
    }

    let seq = FeatureSequence::new(2, 3, vec![0.5; 6]).unwrap();
    let good = feature_file::encode(&seq).unwrap();
    let mut nan = good.clone();
    nan[16 + 4 * 4..16 + 4 * 5].copy_from_slice(&f32::NAN.to_le_bytes());
    let mut magic = written.clone();
    magic[0] = b'X';
    let cases: [(&str, Option<usize>, usize); 6] = [
        (
            "feature truncated",
            format_offset(feature_file::decode(&good[..good.len() - 1])),
            good.len() - 1,
        ),
        (
            "feature trailing",
            format_offset(feature_file::decode(&[good.as_slice(), &[0]].concat())),
            good.len(),
        ),
        ("feature NaN", format_offset(feature_file::decode(&nan)), 32),
        ("feature header", format_offset(feature_file::decode(&good[..10])), 10),
        ("checkpoint magic", format_offset(checkpoint::decode(&magic)), 0),
        (
            "checkpoint truncated",
            format_offset(checkpoint::decode(&written[..written.len() - 2])),
            written.len() - last_payload,
        ),
    ];
    for (name, got, want) in cases {
        if got != Some(want) {
            failures.push(format!("{name}: offset {got:?}, expected {want}"));
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{files} feature files and {} checkpoint tensors byte-identical, 6 corruptions rejected with offsets{}",
            store.ids().count(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    )
}

fn determinism() -> Verdict {
    let (mut config, samples) = overfit_setup();
    config.epochs = 1;
    config.seed = 5;
    let a = train(&config, &samples, &[]).unwrap().first_epoch_losses;
    let b = train(&config, &samples, &[]).unwrap().first_epoch_losses;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    verdict(
        !a.is_empty() && bits(&a) == bits(&b),
        format!(
            "{} batch losses, bit-identical across two runs: {}",
            a.len(),
            bits(&a) == bits(&b)
        ),
    )
}

fn main() {
    let mut all = true;
    let mut show = |n: usize, name: &str, v: Verdict| {
        all &= v.pass;
        println!("[{}] {n}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    show(1, "gradient fidelity", gradient_fidelity());
    show(2, "margin-loss oracle", margin_oracle());
    show(3, "overfit smoke", overfit_smoke());
    let (modality, lambda, secs) = trend_tables();
    print!("{}", modality.to_tsv());
    print!("{}", lambda.to_tsv());
    show(4, "multimodal benefit", multimodal_benefit(&modality, secs));
    show(5, "lambda trend", lambda_trend(&lambda));
    show(6, "gate invariants", gate_invariants());
    show(7, "metric correctness", metric_correctness());
    show(8, "format round-trips", format_round_trips());
    show(9, "determinism", determinism());
    if !all {
        std::process::exit(1);
    }
}
