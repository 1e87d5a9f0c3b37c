//! The end-to-end commands. Each one reads its inputs from the paths in a
//! [`RunConfig`], writes its artifacts under the output directory and
//! returns a short summary.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::baselines::{self, BaselineError, EndmemberSet};
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{self, DatasetError, DatasetSplit, SoilSample, SYNTH_BANDS};
use crate::diagnostics::{self, ComponentCheck};
use crate::evaluation::{self, EvalData, EvalError, EvalReport, InputKind, ReportRow, ScenarioSpec};
use crate::gan::{self, GanError, GeneratorNet};
use crate::regressors::ModelKind;
use crate::seed;
use crate::spectral::{BandRoleMap, BandVector, SpectralError, TasseledCap};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing input {what}: {path} does not exist")]
    MissingInput { what: &'static str, path: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("gradient check failed for: {}", .0.join(", "))]
    GradCheckFailed(Vec<String>),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl PipelineError {
    /// 1 for bad configuration or inputs, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::MissingInput { .. } => 1,
            PipelineError::Dataset(DatasetError::Malformed { .. } | DatasetError::Config(_)) => 1,
            PipelineError::Dataset(DatasetError::NoBareReferences) => 1,
            PipelineError::Gan(GanError::Config(_) | GanError::Role { .. } | GanError::BandMismatch { .. }) => 1,
            PipelineError::Eval(EvalError::Leakage { .. } | EvalError::MissingArtifact(..)) => 1,
            PipelineError::Baseline(BaselineError::Malformed { .. } | BaselineError::BandMismatch { .. }) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn require(what: &'static str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput { what, path: path.display().to_string() })
    }
}

/// Creates the output directory and echoes the effective configuration.
fn prepare_output(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.paths.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(&cfg.paths.out("effective_config.txt"), &cfg.to_text())
}

fn roles(cfg: &RunConfig) -> Result<BandRoleMap> {
    let roles = BandRoleMap::landsat8();
    roles.validate(cfg.n_bands)?;
    Ok(roles)
}

fn tct(cfg: &RunConfig) -> Result<TasseledCap> {
    match &cfg.paths.tct {
        Some(p) => {
            require("tasseled cap coefficients", p)?;
            Ok(TasseledCap::from_file(p)?)
        }
        None => Ok(TasseledCap::default()),
    }
}

fn load_samples(cfg: &RunConfig) -> Result<Vec<SoilSample>> {
    let path = cfg.paths.samples();
    require("samples", &path)?;
    let loaded = dataset::load_samples(&path, cfg.n_bands, &roles(cfg)?)?;
    if !loaded.rejected.is_empty() {
        log::info!("{} rows rejected while loading {}", loaded.rejected.len(), path.display());
    }
    Ok(loaded.samples)
}

/// The train/test split every command shares.
pub fn split_for(cfg: &RunConfig, n: usize) -> Result<DatasetSplit> {
    Ok(dataset::split(n, cfg.test_fraction, cfg.k_folds, seed::derive(cfg.seed, "split"))?)
}

fn vegetated_mask(samples: &[SoilSample], threshold: f64) -> Vec<bool> {
    samples.iter().map(|s| s.ndvi > threshold).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSummary {
    pub n_samples: usize,
    pub n_bare: usize,
    pub n_vegetated: usize,
}

/// Generates synthetic samples and the matching true bare spectra.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthSummary> {
    if cfg.n_bands != SYNTH_BANDS {
        return Err(ConfigError::BadValue {
            key: "n_bands".into(),
            value: cfg.n_bands.to_string(),
            reason: format!("synthetic data has {SYNTH_BANDS} bands"),
        }
        .into());
    }
    prepare_output(cfg)?;
    let out = dataset::synth_generate(&cfg.synth)?;
    dataset::write_samples(&cfg.paths.samples(), &out.samples, SYNTH_BANDS)?;
    dataset::write_truth(&cfg.paths.truth(), &out.truth, SYNTH_BANDS)?;
    let classes = dataset::classify_by_ndvi(&out.samples, cfg.ndvi_threshold);
    Ok(SynthSummary { n_samples: out.samples.len(), n_bare: classes.bare.len(), n_vegetated: classes.vegetated.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSummary {
    pub bare: usize,
    /// Bare samples in the training split, the only ones used as targets.
    pub bare_references: usize,
    pub vegetated: usize,
    pub paired: usize,
    pub dropped: usize,
}

/// Pairs every vegetated sample with its nearest training-split bare
/// samples, so no test bare spectrum ever becomes a GAN target.
pub fn cmd_pair(cfg: &RunConfig) -> Result<PairSummary> {
    let samples = load_samples(cfg)?;
    prepare_output(cfg)?;
    let split = split_for(cfg, samples.len())?;
    let classes = dataset::classify_by_ndvi(&samples, cfg.ndvi_threshold);
    let train: HashSet<&str> = split.train.iter().map(|&i| samples[i].id.as_str()).collect();
    let references: Vec<&SoilSample> = classes.bare.iter().copied().filter(|s| train.contains(s.id.as_str())).collect();
    let pairing = dataset::pair_samples(&classes.vegetated, &references, cfg.pairing_k, cfg.pairing_max_radius)?;
    dataset::write_pairs(&cfg.paths.pairs(), &pairing.records, cfg.n_bands)?;
    if classes.ties > 0 {
        log::info!("{} samples sit exactly on the NDVI threshold and count as bare", classes.ties);
    }
    Ok(PairSummary {
        bare: classes.bare.len(),
        bare_references: references.len(),
        vegetated: classes.vegetated.len(),
        paired: pairing.records.len(),
        dropped: pairing.dropped,
    })
}

pub const TRAINING_IDS_FILE: &str = "gan_training_ids.csv";
pub const DISCRIMINATOR_FILE: &str = "discriminator.weights";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub n_pairs: usize,
    pub epochs: usize,
    pub final_loss_d: Option<f64>,
    pub final_loss_g: Option<f64>,
}

/// Trains the GAN on the pairs whose vegetated sample is in the training
/// split and records every sample id that entered training.
pub fn cmd_train_gan(cfg: &RunConfig) -> Result<TrainSummary> {
    let samples = load_samples(cfg)?;
    let pairs_path = cfg.paths.pairs();
    require("pairs", &pairs_path)?;
    let pairs = dataset::read_pairs(&pairs_path, cfg.n_bands)?;
    prepare_output(cfg)?;
    let split = split_for(cfg, samples.len())?;
    let train: HashSet<&str> = split.train.iter().map(|&i| samples[i].id.as_str()).collect();
    let used: Vec<_> = pairs.into_iter().filter(|p| train.contains(p.veg_id.as_str())).collect();
    log::info!("training on {} pairs", used.len());

    let trained = gan::train(&used, &cfg.gan)?;
    trained.generator.save(&cfg.paths.weights())?;
    trained.discriminator.save(&cfg.paths.out(DISCRIMINATOR_FILE))?;
    gan::write_loss_history(&cfg.paths.out("loss_history.csv"), &trained.history)?;

    let mut ids = BTreeSet::new();
    for p in &used {
        ids.insert(("vegetated", p.veg_id.clone()));
        ids.extend(p.bare_ids.iter().map(|b| ("bare", b.clone())));
    }
    let mut text = String::from("role,sample_id\n");
    for (role, id) in ids {
        writeln!(text, "{role},{id}").unwrap();
    }
    write(&cfg.paths.out(TRAINING_IDS_FILE), &text)?;

    let last = trained.history.last();
    Ok(TrainSummary {
        n_pairs: used.len(),
        epochs: cfg.gan.epochs,
        final_loss_d: last.map(|h| h.loss_d),
        final_loss_g: last.map(|h| h.loss_g),
    })
}

fn load_generator(cfg: &RunConfig) -> Result<GeneratorNet> {
    let path = cfg.paths.weights();
    require("generator weights", &path)?;
    Ok(GeneratorNet::load(&path, cfg.n_bands)?)
}

/// Sample ids listed in the training record next to the weights.
fn training_ids(cfg: &RunConfig) -> Result<HashSet<String>> {
    let path = cfg.paths.out(TRAINING_IDS_FILE);
    require("GAN training record", &path)?;
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut out = HashSet::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let (_, id) = line.split_once(',').ok_or_else(|| DatasetError::Malformed {
            path: path.display().to_string(),
            line: i as u64 + 1,
            message: "expected `role,sample_id`".into(),
        })?;
        out.insert(id.to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconstructSummary {
    pub rows: usize,
    pub reconstructed: usize,
}

/// Writes `reconstructed.csv`: the samples schema plus a `reconstructed`
/// flag, with generator output for vegetated rows and bare rows unchanged.
pub fn cmd_reconstruct(cfg: &RunConfig) -> Result<ReconstructSummary> {
    let mut generator = load_generator(cfg)?;
    let samples = load_samples(cfg)?;
    prepare_output(cfg)?;
    let mask = vegetated_mask(&samples, cfg.ndvi_threshold);
    let input: Vec<BandVector> = samples.iter().zip(&mask).filter(|(_, &v)| v).map(|(s, _)| s.bands.clone()).collect();
    let mut fixed = gan::reconstruct(&mut generator, &input)?.into_iter();

    let mut text = dataset::samples_header(cfg.n_bands).join(",");
    text.push_str(",reconstructed\n");
    for (s, &veg) in samples.iter().zip(&mask) {
        let bands = if veg { fixed.next().expect("one output per vegetated sample") } else { s.bands.clone() };
        write!(text, "{},{},{},{}", s.id, s.lon, s.lat, s.soc).unwrap();
        for v in bands.values() {
            write!(text, ",{v}").unwrap();
        }
        writeln!(text, ",{veg}").unwrap();
    }
    write(&cfg.paths.out("reconstructed.csv"), &text)?;
    Ok(ReconstructSummary { rows: samples.len(), reconstructed: input.len() })
}

/// Builds whichever correction artifacts the requested input kinds need.
fn prepare_eval_data<'a>(
    cfg: &RunConfig,
    samples: &'a [SoilSample],
    split: &DatasetSplit,
    kinds: &[InputKind],
) -> Result<EvalData<'a>> {
    let roles = roles(cfg)?;
    let mut data = EvalData::new(samples, cfg.ndvi_threshold, roles, tct(cfg)?);
    let needs = |ks: &[InputKind]| kinds.iter().any(|k| ks.contains(k));

    if needs(&[InputKind::ReconstructedOnly, InputKind::BarePlusReconstructed]) {
        let mut generator = load_generator(cfg)?;
        let ids = training_ids(cfg)?;
        let fitted_on = samples.iter().enumerate().filter(|(_, s)| ids.contains(&s.id)).map(|(i, _)| i).collect();
        data.reconstruction =
            Some(evaluation::reconstruction_artifact(&mut generator, samples, &data.vegetated, fitted_on)?);
    }
    if needs(&[InputKind::ViCorrected]) {
        let (model, art) = evaluation::vi_artifact(samples, &data.vegetated, split, &roles)?;
        log::info!("index correction fitted on {} samples: {:?}", art.fitted_on.len(), model.alpha);
        data.vi = Some(art);
    }
    if needs(&[InputKind::SmaCorrected]) {
        let (em, fitted_on) = endmembers(cfg, samples, split, &data.vegetated)?;
        baselines::write_endmembers(&cfg.paths.out("endmembers.csv"), &em)?;
        data.sma = Some(evaluation::sma_artifact(samples, &data.vegetated, &em, fitted_on, cfg.f_floor)?);
    }
    Ok(data)
}

/// Endmembers from the configured file, or estimated on the training split.
fn endmembers(
    cfg: &RunConfig,
    samples: &[SoilSample],
    split: &DatasetSplit,
    vegetated: &[bool],
) -> Result<(EndmemberSet, BTreeSet<usize>)> {
    if let Some(p) = &cfg.paths.endmembers {
        require("endmembers", p)?;
        return Ok((baselines::read_endmembers(p, cfg.n_bands)?, BTreeSet::new()));
    }
    let fitted_on: BTreeSet<usize> = split.train.iter().copied().collect();
    let (mut bare, mut veg) = (Vec::new(), Vec::new());
    for &i in &fitted_on {
        if vegetated[i] {
            veg.push(&samples[i]);
        } else {
            bare.push(&samples[i]);
        }
    }
    Ok((baselines::estimate_endmembers(&bare, &veg, cfg.ndvi_hi)?, fitted_on))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocSummary {
    pub row: ReportRow,
    pub model_path: PathBuf,
}

/// Fits one SOC model on the training split and scores it on the test split.
pub fn cmd_train_soc(cfg: &RunConfig, kind: InputKind, with_features: bool, model: ModelKind) -> Result<SocSummary> {
    let samples = load_samples(cfg)?;
    prepare_output(cfg)?;
    let split = split_for(cfg, samples.len())?;
    let data = prepare_eval_data(cfg, &samples, &split, &[kind])?;
    let spec = ScenarioSpec { input_kind: kind, with_features, model, split };
    let (fitted, row) = evaluation::fit_scenario(&spec, &data, cfg.seed)?;
    let stem = format!("soc_{kind}_{}_{model}", if with_features { "features" } else { "bands" });
    let model_path = cfg.paths.out(&format!("{stem}.model"));
    write(&model_path, &fitted.dump())?;
    let report = EvalReport { rows: vec![row.clone()], pearson: Vec::new() };
    let csv = evaluation::report_csv(&report);
    write(&cfg.paths.out(&format!("{stem}_metrics.csv")), &csv)?;
    Ok(SocSummary { row, model_path })
}

/// Runs the configured scenario matrix and writes `report.csv` and
/// `pearson.csv`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    let samples = load_samples(cfg)?;
    prepare_output(cfg)?;
    let split = split_for(cfg, samples.len())?;
    let data = prepare_eval_data(cfg, &samples, &split, &cfg.inputs)?;
    let report = evaluation::run_scenarios(&cfg.scenarios(&split), &data, cfg.seed)?;
    evaluation::write_report(&cfg.paths.output_dir, &report)?;
    Ok(report)
}

/// Spectral recovery error of one correction method against the true bare
/// spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRow {
    pub method: &'static str,
    pub band_rmse: Vec<f64>,
    pub n: usize,
}

impl RecoveryRow {
    pub fn mean_band_rmse(&self) -> f64 {
        self.band_rmse.iter().sum::<f64>() / self.band_rmse.len() as f64
    }
}

fn band_rmse(est: &[&BandVector], truth: &[&BandVector]) -> Vec<f64> {
    let n_bands = truth.first().map_or(0, |b| b.n_bands());
    (0..n_bands)
        .map(|j| {
            let sse: f64 = est.iter().zip(truth).map(|(e, t)| (e.get(j) - t.get(j)).powi(2)).sum();
            (sse / truth.len() as f64).sqrt()
        })
        .collect()
}

/// Compares raw, index-corrected, unmixed and (when weights exist)
/// GAN-reconstructed spectra of the held-out vegetated samples against the
/// true bare spectra. Writes `baseline_comparison.csv`.
pub fn cmd_compare_baselines(cfg: &RunConfig) -> Result<Vec<RecoveryRow>> {
    let samples = load_samples(cfg)?;
    let truth_path = cfg.paths.truth();
    require("truth", &truth_path)?;
    let truth = dataset::read_truth(&truth_path, cfg.n_bands)?;
    prepare_output(cfg)?;
    let split = split_for(cfg, samples.len())?;

    let mut kinds = vec![InputKind::VegetatedOnly, InputKind::ViCorrected, InputKind::SmaCorrected];
    if cfg.paths.weights().exists() {
        kinds.push(InputKind::ReconstructedOnly);
    } else {
        log::warn!("no generator weights at {}; skipping the GAN row", cfg.paths.weights().display());
    }
    let data = prepare_eval_data(cfg, &samples, &split, &kinds)?;
    let test = split.test_set();
    let mut rows = Vec::new();
    for kind in kinds {
        let method = match kind {
            InputKind::VegetatedOnly => "raw",
            InputKind::ViCorrected => "vi",
            InputKind::SmaCorrected => "sma",
            _ => "gan",
        };
        let mut est = Vec::new();
        let mut want = Vec::new();
        let inputs = data.inputs(kind)?;
        for (i, b) in &inputs {
            if let (true, Some(t)) = (test.contains(i), truth.get(&samples[*i].id)) {
                est.push(b);
                want.push(t);
            }
        }
        if want.is_empty() {
            return Err(EvalError::Scenario {
                scenario: method.into(),
                message: "no held-out vegetated samples with a true spectrum".into(),
            }
            .into());
        }
        rows.push(RecoveryRow { method, band_rmse: band_rmse(&est, &want), n: want.len() });
    }

    let mut text = String::from("method,mean_band_rmse,n");
    for j in 1..=cfg.n_bands {
        write!(text, ",rmse_b{j}").unwrap();
    }
    text.push('\n');
    for r in &rows {
        write!(text, "{},{},{}", r.method, r.mean_band_rmse(), r.n).unwrap();
        for v in &r.band_rmse {
            write!(text, ",{v}").unwrap();
        }
        text.push('\n');
    }
    write(&cfg.paths.out("baseline_comparison.csv"), &text)?;
    Ok(rows)
}

/// Runs the gradient-check suite; fails when any component exceeds the
/// tolerance.
pub fn cmd_grad_check(seed_value: u64, corrupt: bool) -> Result<Vec<ComponentCheck>> {
    let checks = diagnostics::grad_check_suite(seed_value, corrupt)?;
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed()).map(|c| c.component.clone()).collect();
    if failed.is_empty() {
        Ok(checks)
    } else {
        for c in &checks {
            log::error!("{}", grad_check_line(c));
        }
        Err(PipelineError::GradCheckFailed(failed))
    }
}

pub fn grad_check_line(c: &ComponentCheck) -> String {
    format!(
        "{:<30} max_rel_error {:.3e}  checked {:>4}  {:.3}s  {}",
        c.component,
        c.report.max_rel_error,
        c.report.n_checked,
        c.seconds,
        if c.passed() { "pass" } else { "FAIL" }
    )
}
