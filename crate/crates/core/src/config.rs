//! Run configuration: a flat `key = value` file with dotted sections,
//! overridable key by key.
//!
//! ```text
//! seed = 42
//! paths.output_dir = out
//! gan.epochs = 200
//! synth.canopy_fraction_range = 0.3,0.9
//! ```
//!
//! `synth.preset` is applied first and `seed` second (it also seeds the GAN
//! and the generator of synthetic data), so the remaining keys can refine
//! either regardless of their position.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::baselines::{DEFAULT_F_FLOOR, DEFAULT_NDVI_HI};
use crate::dataset::{SynthConfig, DEFAULT_NDVI_THRESHOLD};
use crate::evaluation::{default_scenarios, InputKind, ScenarioSpec};
use crate::dataset::DatasetSplit;
use crate::gan::GanTrainConfig;
use crate::regressors::ModelKind;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value {value:?} for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
}

/// Which feature sets the scenario matrix covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Bands,
    Features,
    Both,
}

impl FeatureMode {
    fn flags(self) -> &'static [bool] {
        match self {
            FeatureMode::Bands => &[false],
            FeatureMode::Features => &[true],
            FeatureMode::Both => &[false, true],
        }
    }

    fn name(self) -> &'static str {
        match self {
            FeatureMode::Bands => "bands",
            FeatureMode::Features => "features",
            FeatureMode::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub output_dir: PathBuf,
    samples: Option<PathBuf>,
    truth: Option<PathBuf>,
    pairs: Option<PathBuf>,
    weights: Option<PathBuf>,
    pub endmembers: Option<PathBuf>,
    pub tct: Option<PathBuf>,
}

impl Paths {
    fn or_out(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.output_dir.join(name))
    }

    pub fn samples(&self) -> PathBuf {
        self.or_out(&self.samples, "samples.csv")
    }

    pub fn truth(&self) -> PathBuf {
        self.or_out(&self.truth, "truth.csv")
    }

    pub fn pairs(&self) -> PathBuf {
        self.or_out(&self.pairs, "pairs.csv")
    }

    /// Generator weights.
    pub fn weights(&self) -> PathBuf {
        self.or_out(&self.weights, "generator.weights")
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub n_bands: usize,
    pub ndvi_threshold: f64,
    pub paths: Paths,
    pub test_fraction: f64,
    pub k_folds: usize,
    pub pairing_k: usize,
    pub pairing_max_radius: f64,
    pub gan: GanTrainConfig,
    pub synth_preset: String,
    pub synth: SynthConfig,
    pub ndvi_hi: f64,
    pub f_floor: f64,
    pub inputs: Vec<InputKind>,
    pub models: Vec<ModelKind>,
    pub features: FeatureMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 42;
        Self {
            seed,
            n_bands: 7,
            ndvi_threshold: DEFAULT_NDVI_THRESHOLD,
            paths: Paths {
                output_dir: PathBuf::from("out"),
                samples: None,
                truth: None,
                pairs: None,
                weights: None,
                endmembers: None,
                tct: None,
            },
            test_fraction: 0.2,
            k_folds: 5,
            pairing_k: 3,
            pairing_max_radius: f64::INFINITY,
            gan: GanTrainConfig { seed, ..GanTrainConfig::default() },
            synth_preset: "default".into(),
            synth: SynthConfig { seed, ..SynthConfig::default() },
            ndvi_hi: DEFAULT_NDVI_HI,
            f_floor: DEFAULT_F_FLOOR,
            inputs: InputKind::ALL.to_vec(),
            models: ModelKind::ALL.to_vec(),
            features: FeatureMode::Both,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push((k.trim().to_string(), v.trim().to_string())),
            _ => return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() }),
        }
    }
    Ok(out)
}

fn bad(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.into(), reason: reason.to_string() }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| bad(key, value, e))
}

fn range(key: &str, value: &str) -> Result<(f64, f64), ConfigError> {
    let (a, b) = value.split_once(',').ok_or_else(|| bad(key, value, "expected `low,high`"))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

fn list<T>(key: &str, value: &str, all: &[T], parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, ConfigError>
where
    T: Copy + PartialEq,
{
    if value == "all" {
        return Ok(all.to_vec());
    }
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim) {
        let v = parse(item).ok_or_else(|| bad(key, value, format!("unknown entry `{item}`")))?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(bad(key, value, "empty list"));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply(&parse_pairs(text)?)?;
        Ok(cfg)
    }

    /// Applies settings; for repeated keys the last one wins.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<(), ConfigError> {
        let mut merged: Vec<(String, String)> = Vec::new();
        for (k, v) in pairs {
            merged.retain(|(mk, _)| mk != k);
            merged.push((k.clone(), v.clone()));
        }
        let find = |key: &str| merged.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        if let Some(v) = find("synth.preset") {
            self.set("synth.preset", &v)?;
        }
        if let Some(v) = find("seed") {
            self.set("seed", &v)?;
        }
        for (k, v) in &merged {
            if k != "synth.preset" && k != "seed" {
                self.set(k, v)?;
            }
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        let path = || (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "seed" => {
                self.seed = num(key, v)?;
                self.gan.seed = self.seed;
                self.synth.seed = self.seed;
            }
            "n_bands" => self.n_bands = num(key, v)?,
            "ndvi_threshold" => self.ndvi_threshold = num(key, v)?,
            "paths.output_dir" => self.paths.output_dir = PathBuf::from(v),
            "paths.samples" => self.paths.samples = path(),
            "paths.truth" => self.paths.truth = path(),
            "paths.pairs" => self.paths.pairs = path(),
            "paths.weights" => self.paths.weights = path(),
            "paths.endmembers" => self.paths.endmembers = path(),
            "paths.tct" => self.paths.tct = path(),
            "split.test_fraction" => self.test_fraction = num(key, v)?,
            "split.k_folds" => self.k_folds = num(key, v)?,
            "pairing.k" => self.pairing_k = num(key, v)?,
            "pairing.max_radius" => self.pairing_max_radius = num(key, v)?,
            "gan.epochs" => self.gan.epochs = num(key, v)?,
            "gan.batch_size" => self.gan.batch_size = num(key, v)?,
            "gan.lr" => self.gan.lr = num(key, v)?,
            "gan.beta1" => self.gan.beta1 = num(key, v)?,
            "gan.beta2" => self.gan.beta2 = num(key, v)?,
            "gan.seed" => self.gan.seed = num(key, v)?,
            "gan.l1_weight" => self.gan.l1_weight = num(key, v)?,
            "gan.d_steps" => self.gan.d_steps_per_g_step = num(key, v)?,
            "synth.preset" => {
                let base = match v {
                    "default" => SynthConfig::default(),
                    "heavy_canopy" => SynthConfig::heavy_canopy(),
                    _ => return Err(bad(key, v, "expected `default` or `heavy_canopy`")),
                };
                self.synth = SynthConfig { seed: self.synth.seed, ..base };
                self.synth_preset = v.to_string();
            }
            "synth.seed" => self.synth.seed = num(key, v)?,
            "synth.n_samples" => self.synth.n_samples = num(key, v)?,
            "synth.soc_range" => self.synth.soc_range = range(key, v)?,
            "synth.canopy_fraction_range" => self.synth.canopy_fraction_range = range(key, v)?,
            "synth.bare_canopy_max" => self.synth.bare_canopy_max = num(key, v)?,
            "synth.nonlinear_strength" => self.synth.nonlinear_strength = num(key, v)?,
            "synth.noise_sigma" => self.synth.noise_sigma = num(key, v)?,
            "synth.soil_variability" => self.synth.soil_variability = num(key, v)?,
            "synth.canopy_variability" => self.synth.canopy_variability = num(key, v)?,
            "synth.canopy_shape_variability" => self.synth.canopy_shape_variability = num(key, v)?,
            "synth.dry_fraction_range" => self.synth.dry_fraction_range = range(key, v)?,
            "synth.soc_jitter" => self.synth.soc_jitter = num(key, v)?,
            "synth.samples_per_site" => self.synth.samples_per_site = num(key, v)?,
            "synth.bare_per_site" => self.synth.bare_per_site = num(key, v)?,
            "synth.site_spacing" => self.synth.site_spacing = num(key, v)?,
            "synth.site_radius" => self.synth.site_radius = num(key, v)?,
            "baselines.ndvi_hi" => self.ndvi_hi = num(key, v)?,
            "baselines.f_floor" => self.f_floor = num(key, v)?,
            "eval.inputs" => self.inputs = list(key, v, &InputKind::ALL, |s| s.parse().ok())?,
            "eval.models" => self.models = list(key, v, &ModelKind::ALL, |s| s.parse().ok())?,
            "eval.features" => {
                self.features = match v {
                    "bands" => FeatureMode::Bands,
                    "features" => FeatureMode::Features,
                    "both" => FeatureMode::Both,
                    _ => return Err(bad(key, v, "expected `bands`, `features` or `both`")),
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, key: &str, value: String, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(bad(key, &value, reason))
            }
        };
        check(self.n_bands >= 7, "n_bands", self.n_bands.to_string(), "the band layout needs at least 7 bands")?;
        check(self.ndvi_threshold.is_finite(), "ndvi_threshold", self.ndvi_threshold.to_string(), "must be finite")?;
        check(
            self.test_fraction > 0.0 && self.test_fraction < 1.0,
            "split.test_fraction",
            self.test_fraction.to_string(),
            "must lie in (0, 1)",
        )?;
        check(self.k_folds != 1, "split.k_folds", self.k_folds.to_string(), "use 0 (no folds) or at least 2")?;
        check(self.pairing_k >= 1, "pairing.k", self.pairing_k.to_string(), "must be at least 1")?;
        check(self.pairing_max_radius >= 0.0, "pairing.max_radius", self.pairing_max_radius.to_string(), "must be >= 0")?;
        check(self.f_floor > 0.0 && self.f_floor <= 1.0, "baselines.f_floor", self.f_floor.to_string(), "must lie in (0, 1]")?;
        self.gan.validate().map_err(|e| bad("gan", "", e))?;
        self.synth.validate().map_err(|e| bad("synth", "", e))?;
        Ok(())
    }

    /// The scenario matrix selected by `eval.*`, in report order.
    pub fn scenarios(&self, split: &DatasetSplit) -> Vec<ScenarioSpec> {
        default_scenarios(split)
            .into_iter()
            .filter(|s| {
                self.inputs.contains(&s.input_kind)
                    && self.models.contains(&s.model)
                    && self.features.flags().contains(&s.with_features)
            })
            .collect()
    }

    /// Every setting, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let p = |o: &mut String, k: &str, v: &dyn std::fmt::Display| writeln!(o, "{k} = {v}").unwrap();
        let opt = |x: &Option<PathBuf>| x.as_deref().map_or_else(String::new, |p| p.display().to_string());
        let r = |(a, b): (f64, f64)| format!("{a},{b}");
        let s = &self.synth;
        p(&mut o, "seed", &self.seed);
        p(&mut o, "n_bands", &self.n_bands);
        p(&mut o, "ndvi_threshold", &self.ndvi_threshold);
        p(&mut o, "paths.output_dir", &self.paths.output_dir.display());
        p(&mut o, "paths.samples", &self.paths.samples().display());
        p(&mut o, "paths.truth", &self.paths.truth().display());
        p(&mut o, "paths.pairs", &self.paths.pairs().display());
        p(&mut o, "paths.weights", &self.paths.weights().display());
        p(&mut o, "paths.endmembers", &opt(&self.paths.endmembers));
        p(&mut o, "paths.tct", &opt(&self.paths.tct));
        p(&mut o, "split.test_fraction", &self.test_fraction);
        p(&mut o, "split.k_folds", &self.k_folds);
        p(&mut o, "pairing.k", &self.pairing_k);
        p(&mut o, "pairing.max_radius", &self.pairing_max_radius);
        p(&mut o, "gan.epochs", &self.gan.epochs);
        p(&mut o, "gan.batch_size", &self.gan.batch_size);
        p(&mut o, "gan.lr", &self.gan.lr);
        p(&mut o, "gan.beta1", &self.gan.beta1);
        p(&mut o, "gan.beta2", &self.gan.beta2);
        p(&mut o, "gan.seed", &self.gan.seed);
        p(&mut o, "gan.l1_weight", &self.gan.l1_weight);
        p(&mut o, "gan.d_steps", &self.gan.d_steps_per_g_step);
        p(&mut o, "synth.preset", &self.synth_preset);
        p(&mut o, "synth.seed", &s.seed);
        p(&mut o, "synth.n_samples", &s.n_samples);
        p(&mut o, "synth.soc_range", &r(s.soc_range));
        p(&mut o, "synth.canopy_fraction_range", &r(s.canopy_fraction_range));
        p(&mut o, "synth.bare_canopy_max", &s.bare_canopy_max);
        p(&mut o, "synth.nonlinear_strength", &s.nonlinear_strength);
        p(&mut o, "synth.noise_sigma", &s.noise_sigma);
        p(&mut o, "synth.soil_variability", &s.soil_variability);
        p(&mut o, "synth.canopy_variability", &s.canopy_variability);
        p(&mut o, "synth.canopy_shape_variability", &s.canopy_shape_variability);
        p(&mut o, "synth.dry_fraction_range", &r(s.dry_fraction_range));
        p(&mut o, "synth.soc_jitter", &s.soc_jitter);
        p(&mut o, "synth.samples_per_site", &s.samples_per_site);
        p(&mut o, "synth.bare_per_site", &s.bare_per_site);
        p(&mut o, "synth.site_spacing", &s.site_spacing);
        p(&mut o, "synth.site_radius", &s.site_radius);
        p(&mut o, "baselines.ndvi_hi", &self.ndvi_hi);
        p(&mut o, "baselines.f_floor", &self.f_floor);
        let names = |v: Vec<&str>| v.join(",");
        p(&mut o, "eval.inputs", &names(self.inputs.iter().map(|k| k.name()).collect()));
        p(&mut o, "eval.models", &names(self.models.iter().map(|k| k.name()).collect()));
        p(&mut o, "eval.features", &self.features.name());
        o
    }
}

/// Loads `path` (when given) and then applies `overrides` on top.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, LoadError> {
    let mut pairs = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| LoadError::Io { path: p.display().to_string(), source })?;
            parse_pairs(&text)?
        }
        None => Vec::new(),
    };
    pairs.extend(overrides.iter().cloned());
    let mut cfg = RunConfig::default();
    cfg.apply(&pairs)?;
    Ok(cfg)
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
}
