//! SOC metrics, per-band correlation tables and the scenario matrix that
//! compares bare, vegetated, reconstructed and baseline-corrected inputs.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::baselines::{self, BaselineError, EndmemberSet, ViCorrector};
use crate::dataset::{DatasetSplit, SoilSample};
use crate::gan::{self, GanError, GeneratorNet};
use crate::regressors::{self, FeatureMatrix, FitSpec, FittedModel, ModelKind, RegressError};
use crate::seed;
use crate::spectral::{self, BandRoleMap, BandVector, SpectralError, TasseledCap};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("observed values are constant")]
    ConstantTarget,
    #[error("zero variance")]
    ZeroVariance,
}

fn check(y: &[f64], p: &[f64], need: usize) -> Result<(), MetricError> {
    if y.len() != p.len() {
        return Err(MetricError::Length(y.len(), p.len()));
    }
    if y.len() < need {
        return Err(MetricError::TooShort { need, got: y.len() });
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population (1/N) standard deviation.
pub fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Coefficient of determination; negative when worse than the mean.
pub fn r2(y_true: &[f64], y_est: &[f64]) -> Result<f64, MetricError> {
    check(y_true, y_est, 2)?;
    let m = mean(y_true);
    let ss_tot: f64 = y_true.iter().map(|y| (y - m).powi(2)).sum();
    if is_constant(y_true) || ss_tot == 0.0 {
        return Err(MetricError::ConstantTarget);
    }
    let ss_res: f64 = y_true.iter().zip(y_est).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(y_true: &[f64], y_est: &[f64]) -> Result<f64, MetricError> {
    check(y_true, y_est, 1)?;
    let se: f64 = y_true.iter().zip(y_est).map(|(y, p)| (y - p).powi(2)).sum();
    Ok((se / y_true.len() as f64).sqrt())
}

/// Ratio of performance to deviation. A perfect fit has no finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rpd {
    Finite(f64),
    Infinite,
}

impl Rpd {
    pub fn value(self) -> f64 {
        match self {
            Rpd::Finite(v) => v,
            Rpd::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Rpd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rpd::Finite(v) => write!(f, "{v}"),
            Rpd::Infinite => f.write_str("inf"),
        }
    }
}

/// Population standard deviation of `y_true` over RMSE.
pub fn rpd(y_true: &[f64], y_est: &[f64]) -> Result<Rpd, MetricError> {
    check(y_true, y_est, 2)?;
    let e = rmse(y_true, y_est)?;
    if e == 0.0 {
        return Ok(Rpd::Infinite);
    }
    Ok(Rpd::Finite(population_std(y_true) / e))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check(x, y, 3)?;
    if is_constant(x) || is_constant(y) {
        return Err(MetricError::ZeroVariance);
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("scenario {0} needs the {1} artifact, which was not prepared")]
    MissingArtifact(InputKind, &'static str),
    #[error("leakage: test sample {index} was used to fit the {artifact} artifact")]
    Leakage { artifact: &'static str, index: usize },
    #[error("scenario {scenario}: {message}")]
    Scenario { scenario: String, message: String },
    #[error("unknown input kind `{0}`")]
    UnknownKind(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputKind {
    BareOnly,
    VegetatedOnly,
    BarePlusRawVeg,
    ReconstructedOnly,
    BarePlusReconstructed,
    ViCorrected,
    SmaCorrected,
}

impl InputKind {
    pub const ALL: [InputKind; 7] = [
        InputKind::BareOnly,
        InputKind::VegetatedOnly,
        InputKind::BarePlusRawVeg,
        InputKind::ReconstructedOnly,
        InputKind::BarePlusReconstructed,
        InputKind::ViCorrected,
        InputKind::SmaCorrected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InputKind::BareOnly => "bare_only",
            InputKind::VegetatedOnly => "vegetated_only",
            InputKind::BarePlusRawVeg => "bare_plus_raw_veg",
            InputKind::ReconstructedOnly => "reconstructed_only",
            InputKind::BarePlusReconstructed => "bare_plus_reconstructed",
            InputKind::ViCorrected => "vi_corrected",
            InputKind::SmaCorrected => "sma_corrected",
        }
    }

    fn includes_bare(self) -> bool {
        matches!(self, InputKind::BareOnly | InputKind::BarePlusRawVeg | InputKind::BarePlusReconstructed)
    }

    fn includes_vegetated(self) -> bool {
        self != InputKind::BareOnly
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| EvalError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub input_kind: InputKind,
    pub with_features: bool,
    pub model: ModelKind,
    pub split: DatasetSplit,
}

/// Every input kind, feature flag and model, in report order.
pub fn default_scenarios(split: &DatasetSplit) -> Vec<ScenarioSpec> {
    let mut out = Vec::with_capacity(70);
    for input_kind in InputKind::ALL {
        for with_features in [false, true] {
            for model in ModelKind::ALL {
                out.push(ScenarioSpec { input_kind, with_features, model, split: split.clone() });
            }
        }
    }
    out
}

/// Corrected spectra for the vegetated samples plus the sample indices the
/// correction was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionArtifact {
    pub name: &'static str,
    /// Aligned with the sample list; `None` for bare samples.
    pub spectra: Vec<Option<BandVector>>,
    pub fitted_on: BTreeSet<usize>,
}

impl CorrectionArtifact {
    fn guard(&self, test: &HashSet<usize>) -> Result<(), EvalError> {
        match self.fitted_on.iter().find(|i| test.contains(i)) {
            Some(&index) => Err(EvalError::Leakage { artifact: self.name, index }),
            None => Ok(()),
        }
    }
}

/// Generator output for every vegetated sample. `fitted_on` lists the
/// samples whose spectra entered GAN training, as vegetated inputs or bare
/// targets.
pub fn reconstruction_artifact(
    generator: &mut GeneratorNet,
    samples: &[SoilSample],
    vegetated: &[bool],
    fitted_on: BTreeSet<usize>,
) -> Result<CorrectionArtifact, EvalError> {
    let idx: Vec<usize> = (0..samples.len()).filter(|&i| vegetated[i]).collect();
    let input: Vec<BandVector> = idx.iter().map(|&i| samples[i].bands.clone()).collect();
    let out = gan::reconstruct(generator, &input)?;
    let mut spectra = vec![None; samples.len()];
    for (i, b) in idx.into_iter().zip(out) {
        spectra[i] = Some(b);
    }
    Ok(CorrectionArtifact { name: "reconstruction", spectra, fitted_on })
}

/// Index regression fitted on the training vegetated samples and applied
/// to all vegetated samples.
pub fn vi_artifact(
    samples: &[SoilSample],
    vegetated: &[bool],
    split: &DatasetSplit,
    roles: &BandRoleMap,
) -> Result<(ViCorrector, CorrectionArtifact), EvalError> {
    let fitted_on: BTreeSet<usize> = split.train.iter().copied().filter(|&i| vegetated[i]).collect();
    let bands: Vec<BandVector> = fitted_on.iter().map(|&i| samples[i].bands.clone()).collect();
    let indices = |b: &BandVector| -> Result<(f64, f64), SpectralError> {
        Ok((spectral::ndvi(b, roles)?, spectral::savi(b, roles)?))
    };
    let (ndvi, savi): (Vec<f64>, Vec<f64>) = bands.iter().map(indices).collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
    let model = ViCorrector::fit(&bands, &ndvi, &savi)?;
    let mut spectra = vec![None; samples.len()];
    for (i, s) in samples.iter().enumerate().filter(|(i, _)| vegetated[*i]) {
        let (n, v) = indices(&s.bands)?;
        spectra[i] = Some(model.apply(&s.bands, n, v)?);
    }
    Ok((model, CorrectionArtifact { name: "vi-correction", spectra, fitted_on }))
}

/// Spectral unmixing back-out of every vegetated sample. `fitted_on` is
/// the set the endmembers were estimated from (empty for fixed ones).
pub fn sma_artifact(
    samples: &[SoilSample],
    vegetated: &[bool],
    endmembers: &EndmemberSet,
    fitted_on: BTreeSet<usize>,
    f_floor: f64,
) -> Result<CorrectionArtifact, EvalError> {
    let mut spectra = vec![None; samples.len()];
    let mut low = 0;
    for (i, s) in samples.iter().enumerate().filter(|(i, _)| vegetated[*i]) {
        let c = baselines::sma_correct(&s.bands, endmembers, f_floor)?;
        low += usize::from(c.low_confidence);
        spectra[i] = Some(c.bare);
    }
    if low > 0 {
        log::warn!("{low} samples fell below the soil fraction floor {f_floor} during unmixing");
    }
    Ok(CorrectionArtifact { name: "sma-correction", spectra, fitted_on })
}

/// Samples, their bare/vegetated labels and the prepared corrections.
#[derive(Debug, Clone)]
pub struct EvalData<'a> {
    pub samples: &'a [SoilSample],
    pub vegetated: Vec<bool>,
    pub roles: BandRoleMap,
    pub tct: TasseledCap,
    pub reconstruction: Option<CorrectionArtifact>,
    pub vi: Option<CorrectionArtifact>,
    pub sma: Option<CorrectionArtifact>,
}

impl<'a> EvalData<'a> {
    pub fn new(samples: &'a [SoilSample], ndvi_threshold: f64, roles: BandRoleMap, tct: TasseledCap) -> Self {
        let vegetated = samples.iter().map(|s| s.ndvi > ndvi_threshold).collect();
        Self { samples, vegetated, roles, tct, reconstruction: None, vi: None, sma: None }
    }

    fn artifact(&self, kind: InputKind) -> Result<Option<&CorrectionArtifact>, EvalError> {
        let (slot, name) = match kind {
            InputKind::ReconstructedOnly | InputKind::BarePlusReconstructed => (&self.reconstruction, "reconstruction"),
            InputKind::ViCorrected => (&self.vi, "vi-correction"),
            InputKind::SmaCorrected => (&self.sma, "sma-correction"),
            _ => return Ok(None),
        };
        slot.as_ref().map(Some).ok_or(EvalError::MissingArtifact(kind, name))
    }

    /// `(sample index, spectrum)` for every sample the input kind uses.
    pub fn inputs(&self, kind: InputKind) -> Result<Vec<(usize, BandVector)>, EvalError> {
        let art = self.artifact(kind)?;
        let mut out = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            let veg = self.vegetated[i];
            if veg && kind.includes_vegetated() {
                let b = match art {
                    Some(a) => a.spectra[i].clone().ok_or_else(|| EvalError::Scenario {
                        scenario: kind.to_string(),
                        message: format!("no {} spectrum for sample {}", a.name, s.id),
                    })?,
                    None => s.bands.clone(),
                };
                out.push((i, b));
            } else if !veg && kind.includes_bare() {
                out.push((i, s.bands.clone()));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: InputKind,
    pub with_features: bool,
    pub model: ModelKind,
    pub r2: f64,
    pub rmse: f64,
    pub rpd: Rpd,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PearsonRow {
    pub input_kind: InputKind,
    /// Correlation of each band with SOC; NaN where a band is constant.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub pearson: Vec<PearsonRow>,
}

impl EvalReport {
    pub fn find(&self, kind: InputKind, with_features: bool, model: ModelKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.scenario == kind && r.with_features == with_features && r.model == model)
    }
}

struct Design {
    x: FeatureMatrix,
    soc: Vec<f64>,
    /// Sample index of each row of `x`.
    index: Vec<usize>,
}

fn design(data: &EvalData, kind: InputKind, with_features: bool) -> Result<Design, EvalError> {
    let n_bands = data.samples.first().map_or(0, |s| s.bands.n_bands());
    let mut rows = Vec::new();
    let (mut soc, mut index) = (Vec::new(), Vec::new());
    let mut skipped = 0;
    for (i, b) in data.inputs(kind)? {
        let row = if with_features {
            match spectral::augment_features(&b, &data.roles, &data.tct) {
                Ok(r) => r,
                Err(SpectralError::Degenerate { .. }) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            }
        } else {
            b.into_inner()
        };
        rows.push(row);
        soc.push(data.samples[i].soc);
        index.push(i);
    }
    if skipped > 0 {
        log::warn!("{kind}: {skipped} samples with degenerate indices left out of the feature set");
    }
    let names = if with_features {
        spectral::feature_names(n_bands)
    } else {
        (1..=n_bands).map(|i| format!("b{i}")).collect()
    };
    let x = if rows.is_empty() {
        FeatureMatrix::new(0, names.len(), Vec::new(), names)?
    } else {
        FeatureMatrix::from_named_rows(&rows, names)?
    };
    Ok(Design { x, soc, index })
}

fn fit_cell(spec: &ScenarioSpec, d: &Design, seed_value: u64) -> Result<(FittedModel, ReportRow), EvalError> {
    let test = spec.split.test_set();
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (row, i) in d.index.iter().enumerate() {
        if test.contains(i) {
            te.push(row);
        } else if spec.split.train.binary_search(i).is_ok() {
            tr.push(row);
        }
    }
    let label = format!("{}/{}/{}", spec.input_kind, if spec.with_features { "features" } else { "bands" }, spec.model);
    let fail = |message: String| EvalError::Scenario { scenario: label.clone(), message };
    if tr.is_empty() || te.len() < 2 {
        return Err(fail(format!("{} training and {} test rows", tr.len(), te.len())));
    }
    let mut fit_spec = FitSpec::new(spec.model);
    fit_spec.seed = seed::derive(seed_value, &label);
    let y_tr: Vec<f64> = tr.iter().map(|&r| d.soc[r]).collect();
    let y_te: Vec<f64> = te.iter().map(|&r| d.soc[r]).collect();
    let model = regressors::fit(&d.x.select_rows(&tr), &y_tr, &fit_spec).map_err(|e| fail(e.to_string()))?;
    let pred = model.predict(&d.x.select_rows(&te))?;
    let row = ReportRow {
        scenario: spec.input_kind,
        with_features: spec.with_features,
        model: spec.model,
        r2: r2(&y_te, &pred)?,
        rmse: rmse(&y_te, &pred)?,
        rpd: rpd(&y_te, &pred)?,
        n_test: te.len(),
    };
    Ok((model, row))
}

/// Fits one scenario cell and returns the model with its test scores.
pub fn fit_scenario(spec: &ScenarioSpec, data: &EvalData, seed_value: u64) -> Result<(FittedModel, ReportRow), EvalError> {
    if let Some(a) = data.artifact(spec.input_kind)? {
        a.guard(&spec.split.test_set())?;
    }
    fit_cell(spec, &design(data, spec.input_kind, spec.with_features)?, seed_value)
}

/// Fits and scores every scenario in order. Each cell's model seed is
/// derived from `seed` and the cell's coordinates.
pub fn run_scenarios(specs: &[ScenarioSpec], data: &EvalData, seed_value: u64) -> Result<EvalReport, EvalError> {
    let mut cache: HashMap<(InputKind, bool), Design> = HashMap::new();
    let mut report = EvalReport::default();
    for spec in specs {
        if let Some(a) = data.artifact(spec.input_kind)? {
            a.guard(&spec.split.test_set())?;
        }
        let key = (spec.input_kind, spec.with_features);
        if !cache.contains_key(&key) {
            cache.insert(key, design(data, spec.input_kind, spec.with_features)?);
        }
        report.rows.push(fit_cell(spec, &cache[&key], seed_value)?.1);
    }

    let mut kinds: Vec<InputKind> = Vec::new();
    for s in specs {
        if !kinds.contains(&s.input_kind) {
            kinds.push(s.input_kind);
        }
    }
    for kind in kinds {
        report.pearson.push(pearson_row(data, kind)?);
    }
    Ok(report)
}

/// Per-band correlation with SOC over every sample of the input kind.
pub fn pearson_row(data: &EvalData, kind: InputKind) -> Result<PearsonRow, EvalError> {
    let inputs = data.inputs(kind)?;
    let soc: Vec<f64> = inputs.iter().map(|(i, _)| data.samples[*i].soc).collect();
    let n_bands = inputs.first().map_or(0, |(_, b)| b.n_bands());
    let values = (0..n_bands)
        .map(|j| {
            let band: Vec<f64> = inputs.iter().map(|(_, b)| b.get(j)).collect();
            pearson(&band, &soc).unwrap_or(f64::NAN)
        })
        .collect();
    Ok(PearsonRow { input_kind: kind, values })
}

pub const REPORT_HEADER: &str = "scenario,with_features,model,r2,rmse,rpd,n_test";

pub fn report_csv(report: &EvalReport) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in &report.rows {
        writeln!(out, "{},{},{},{},{},{},{}", r.scenario, r.with_features, r.model, r.r2, r.rmse, r.rpd, r.n_test).unwrap();
    }
    out
}

pub fn pearson_csv(report: &EvalReport) -> String {
    let n = report.pearson.first().map_or(0, |r| r.values.len());
    let mut out = String::from("input_kind");
    for j in 1..=n {
        write!(out, ",b{j}").unwrap();
    }
    out.push('\n');
    for r in &report.pearson {
        out.push_str(r.input_kind.name());
        for v in &r.values {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_report(dir: &Path, report: &EvalReport) -> Result<(), EvalError> {
    for (name, text) in [("report.csv", report_csv(report)), ("pearson.csv", pearson_csv(report))] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    }
    Ok(())
}
