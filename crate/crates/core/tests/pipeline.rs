use wavfusion::data::{generate_to_dir, Manifest, SynthSpec};
use wavfusion::fusion::{ModalityMask, ModelConfig};
use wavfusion::tensor::Precision;
use wavfusion::train::run::{fit_dims, load_model, run_experiment, test_split, write_run, CHECKPOINT_FILE};
use wavfusion::train::{evaluate, ExperimentConfig, SplitKind};

fn spec() -> SynthSpec {
    SynthSpec {
        classes: 3,
        samples_per_class: 8,
        dims: [6, 5, 4],
        lengths: [(2, 5), (1, 3), (2, 4)],
        separation: [1.5; 3],
        ..SynthSpec::default()
    }
}

fn config() -> ExperimentConfig {
    ExperimentConfig {
        model: ModelConfig {
            d_model: 8,
            heads: 2,
            n_shallow: 1,
            n_deep: 1,
            lvc_codewords: 2,
            classes: 3,
            ..ModelConfig::default()
        },
        epochs: 3,
        batch_size: 6,
        ..ExperimentConfig::default()
    }
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let generated = generate_to_dir(&spec(), dir.path()).unwrap();
    let manifest = Manifest::read(dir.path()).unwrap();
    manifest.validate(dir.path(), 3).unwrap();
    let loaded = manifest.load(dir.path(), 3).unwrap();
    assert_eq!(loaded, generated);
    // Same spec, same bytes.
    let other = tempfile::tempdir().unwrap();
    generate_to_dir(&spec(), other.path()).unwrap();
    for r in &manifest.records {
        let a = std::fs::read(dir.path().join(r.path(wavfusion::fusion::Modality::Visual).unwrap())).unwrap();
        let b = std::fs::read(other.path().join(r.path(wavfusion::fusion::Modality::Visual).unwrap())).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn label_outside_class_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    generate_to_dir(&spec(), dir.path()).unwrap();
    let manifest = Manifest::read(dir.path()).unwrap();
    assert!(manifest.load(dir.path(), 2).is_err());
}

#[test]
fn train_save_reload_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_to_dir(&spec(), &dir.path().join("data")).unwrap();
    for (precision, mask) in [
        (Precision::F64, ModalityMask::ALL),
        (Precision::F32, ModalityMask::AUDIO),
    ] {
        let mut c = ExperimentConfig {
            precision,
            modalities: mask,
            ..config()
        };
        fit_dims(&mut c, &samples).unwrap();
        let run = run_experiment(&c, &samples).unwrap();
        assert!(run.report.history.iter().all(|e| e.train_loss.is_finite()));
        let out = dir.path().join(format!("run-{precision:?}"));
        write_run(&out, &run).unwrap();
        let model = load_model(&c, &out.join(CHECKPOINT_FILE)).unwrap();
        let test = test_split(&c, &samples).unwrap();
        let e = evaluate(&model, &test, c.modalities, c.precision).unwrap();
        assert_eq!(e.metrics, run.report.test);
    }
}

#[test]
fn kfold_runs_use_disjoint_test_sets() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_to_dir(&spec(), dir.path()).unwrap();
    let mut seen = Vec::new();
    for fold in 0..3 {
        let mut c = ExperimentConfig {
            split: SplitKind::KFold,
            folds: 3,
            fold,
            epochs: 1,
            ..config()
        };
        fit_dims(&mut c, &samples).unwrap();
        let run = run_experiment(&c, &samples).unwrap();
        seen.extend(run.predictions.into_iter().map(|p| p.id));
    }
    seen.sort();
    let mut all: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    all.sort();
    assert_eq!(seen, all);
}
