use std::fs;
use std::path::Path;

use reflectgan::config::RunConfig;
use reflectgan::dataset::{self, SYNTH_BANDS};
use reflectgan::evaluation::{EvalError, InputKind};
use reflectgan::pipeline::{self, PipelineError};
use reflectgan::regressors::ModelKind;
use reflectgan::spectral::BandRoleMap;

fn small_config(dir: &Path) -> RunConfig {
    let text = format!(
        "paths.output_dir = {}\nsynth.n_samples = 240\ngan.epochs = 2\ngan.batch_size = 16\n",
        dir.display()
    );
    RunConfig::from_text(&text).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run_all(cfg: &RunConfig) {
    pipeline::cmd_synth(cfg).unwrap();
    pipeline::cmd_pair(cfg).unwrap();
    pipeline::cmd_train_gan(cfg).unwrap();
    pipeline::cmd_reconstruct(cfg).unwrap();
    pipeline::cmd_evaluate(cfg).unwrap();
}

const ARTIFACTS: [&str; 10] = [
    "samples.csv",
    "truth.csv",
    "pairs.csv",
    "generator.weights",
    "discriminator.weights",
    "loss_history.csv",
    "gan_training_ids.csv",
    "reconstructed.csv",
    "report.csv",
    "pearson.csv",
];

#[test]
fn stages_compose_and_rerun_byte_identically() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, cb) = (small_config(a.path()), small_config(b.path()));
    run_all(&ca);
    run_all(&cb);
    for name in ARTIFACTS {
        assert_eq!(read(&a.path().join(name)), read(&b.path().join(name)), "{name} differs between runs");
    }

    let report = fs::read_to_string(a.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 71);
    assert!(report.starts_with("scenario,with_features,model,r2,rmse,rpd,n_test\n"));
    let pearson = fs::read_to_string(a.path().join("pearson.csv")).unwrap();
    assert_eq!(pearson.lines().count(), 8);
    let echoed = fs::read_to_string(a.path().join("effective_config.txt")).unwrap();
    assert_eq!(RunConfig::from_text(&echoed).unwrap().to_text(), echoed);
}

#[test]
fn pairing_counts_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let synth = pipeline::cmd_synth(&cfg).unwrap();
    let s = pipeline::cmd_pair(&cfg).unwrap();
    assert_eq!(s.paired, s.vegetated);
    assert_eq!(s.vegetated, synth.n_vegetated);
    assert_eq!(s.dropped, 0);
    assert!(s.bare_references < s.bare);

    let samples = dataset::load_samples(&cfg.paths.samples(), SYNTH_BANDS, &BandRoleMap::landsat8()).unwrap().samples;
    let split = pipeline::split_for(&cfg, samples.len()).unwrap();
    let test_ids: Vec<&str> = split.test.iter().map(|&i| samples[i].id.as_str()).collect();
    let pairs = dataset::read_pairs(&cfg.paths.pairs(), SYNTH_BANDS).unwrap();
    for p in &pairs {
        assert!(p.bare_ids.iter().all(|b| !test_ids.contains(&b.as_str())), "test bare sample used as target");
    }

    let mut tight = cfg.clone();
    tight.pairing_max_radius = 0.0;
    let s = pipeline::cmd_pair(&tight).unwrap();
    assert_eq!(s.paired, 0);
    assert_eq!(s.dropped, s.vegetated);
}

#[test]
fn empty_synth_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.synth.n_samples = 0;
    let s = pipeline::cmd_synth(&cfg).unwrap();
    assert_eq!(s.n_samples, 0);
    assert_eq!(fs::read_to_string(cfg.paths.samples()).unwrap(), "sample_id,lon,lat,soc_g_kg,b1,b2,b3,b4,b5,b6,b7\n");
    assert_eq!(fs::read_to_string(cfg.paths.truth()).unwrap().lines().count(), 1);
}

#[test]
fn zero_epochs_keeps_the_initialisation() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut ca = small_config(a.path());
    let mut cb = small_config(b.path());
    ca.gan.epochs = 0;
    cb.gan.epochs = 0;
    cb.synth.seed = 99;
    for cfg in [&ca, &cb] {
        pipeline::cmd_synth(cfg).unwrap();
        pipeline::cmd_pair(cfg).unwrap();
        pipeline::cmd_train_gan(cfg).unwrap();
    }
    assert_ne!(read(&ca.paths.samples()), read(&cb.paths.samples()));
    assert_eq!(read(&ca.paths.weights()), read(&cb.paths.weights()));
    assert_eq!(fs::read_to_string(ca.paths.out("loss_history.csv")).unwrap().lines().count(), 1);
}

#[test]
fn reconstruction_flags_follow_ndvi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    pipeline::cmd_synth(&cfg).unwrap();
    pipeline::cmd_pair(&cfg).unwrap();
    pipeline::cmd_train_gan(&cfg).unwrap();
    let s = pipeline::cmd_reconstruct(&cfg).unwrap();

    let samples = dataset::load_samples(&cfg.paths.samples(), SYNTH_BANDS, &BandRoleMap::landsat8()).unwrap().samples;
    let text = fs::read_to_string(cfg.paths.out("reconstructed.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().ends_with(",b7,reconstructed"));
    let mut flagged = 0;
    for (line, sample) in lines.zip(&samples) {
        let fields: Vec<&str> = line.split(',').collect();
        let veg = sample.ndvi > cfg.ndvi_threshold;
        assert_eq!(fields[0], sample.id);
        assert_eq!(fields[11], veg.to_string());
        let bands: Vec<f64> = fields[4..11].iter().map(|f| f.parse().unwrap()).collect();
        assert!(bands.iter().all(|v| (0.0..=1.0).contains(v)));
        if !veg {
            assert_eq!(bands, sample.bands.values());
        }
        flagged += usize::from(veg);
    }
    assert_eq!(flagged, s.reconstructed);
}

#[test]
fn training_record_overlapping_the_test_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    pipeline::cmd_synth(&cfg).unwrap();
    pipeline::cmd_pair(&cfg).unwrap();
    pipeline::cmd_train_gan(&cfg).unwrap();

    let samples = dataset::load_samples(&cfg.paths.samples(), SYNTH_BANDS, &BandRoleMap::landsat8()).unwrap().samples;
    let split = pipeline::split_for(&cfg, samples.len()).unwrap();
    let record = cfg.paths.out(pipeline::TRAINING_IDS_FILE);
    let mut text = fs::read_to_string(&record).unwrap();
    text.push_str(&format!("bare,{}\n", samples[split.test[0]].id));
    fs::write(&record, text).unwrap();

    cfg.inputs = vec![InputKind::ReconstructedOnly];
    let err = pipeline::cmd_evaluate(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Eval(EvalError::Leakage { .. })), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn missing_inputs_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let err = pipeline::cmd_pair(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::MissingInput { what: "samples", .. }));
    assert_eq!(err.exit_code(), 1);

    pipeline::cmd_synth(&cfg).unwrap();
    let err = pipeline::cmd_reconstruct(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::MissingInput { what: "generator weights", .. }));
    let err = pipeline::cmd_train_soc(&cfg, InputKind::ReconstructedOnly, false, ModelKind::Lr).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn train_soc_and_baseline_comparison_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    pipeline::cmd_synth(&cfg).unwrap();
    let s = pipeline::cmd_train_soc(&cfg, InputKind::BareOnly, true, ModelKind::Lr).unwrap();
    assert!(fs::read_to_string(&s.model_path).unwrap().starts_with("reflectgan-model v1 lr\n"));
    assert!(s.row.r2.is_finite());
    assert!(cfg.paths.out("soc_bare_only_features_lr_metrics.csv").exists());

    let rows = pipeline::cmd_compare_baselines(&cfg).unwrap();
    let methods: Vec<&str> = rows.iter().map(|r| r.method).collect();
    assert_eq!(methods, ["raw", "vi", "sma"]);
    let text = fs::read_to_string(cfg.paths.out("baseline_comparison.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn grad_check_command_flags_a_corrupted_layer() {
    assert!(pipeline::cmd_grad_check(0, false).is_ok());
    match pipeline::cmd_grad_check(0, true) {
        Err(PipelineError::GradCheckFailed(names)) => assert_eq!(names, ["linear"]),
        other => panic!("expected a failure, got {other:?}"),
    }
}
