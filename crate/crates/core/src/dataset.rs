//! Sample ingestion, NDVI gating, geographic pairing, splitting and a seeded
//! synthetic generator of mixed soil/canopy pixels.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::neighbors::{self, Neighbor};
use crate::seed;
use crate::spectral::{self, BandRoleMap, BandVector, SpectralError};

/// Default NDVI threshold separating bare from vegetated samples.
pub const DEFAULT_NDVI_THRESHOLD: f64 = 0.2;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path} line {line}: {message}")]
    Malformed { path: String, line: u64, message: String },
    #[error("no bare references to pair against")]
    NoBareReferences,
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

/// A georeferenced soil observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SoilSample {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    /// Soil organic carbon, g/kg.
    pub soc: f64,
    pub bands: BandVector,
    /// Cached NDVI of `bands`.
    pub ndvi: f64,
}

impl SoilSample {
    pub fn new(
        id: impl Into<String>,
        lon: f64,
        lat: f64,
        soc: f64,
        bands: BandVector,
        roles: &BandRoleMap,
    ) -> Result<Self, SpectralError> {
        let ndvi = spectral::ndvi(&bands, roles)?;
        Ok(Self { id: id.into(), lon, lat, soc, bands, ndvi })
    }

    pub fn distance_to(&self, other: &SoilSample) -> f64 {
        ((self.lon - other.lon).powi(2) + (self.lat - other.lat).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    pub line: u64,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedSamples {
    pub samples: Vec<SoilSample>,
    pub rejected: Vec<RejectedRow>,
    /// Band values that fell outside [0,1] and were clamped.
    pub clamped_values: usize,
}

pub fn samples_header(n_bands: usize) -> Vec<String> {
    let mut h = vec!["sample_id".to_string(), "lon".into(), "lat".into(), "soc_g_kg".into()];
    h.extend((1..=n_bands).map(|i| format!("b{i}")));
    h
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[String]) -> Result<(), DatasetError> {
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got != want {
        return Err(DatasetError::Malformed {
            path: path.display().to_string(),
            line: 1,
            message: format!("header {:?} does not match expected {:?}", got, want),
        });
    }
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> DatasetError {
    DatasetError::Malformed { path: path.display().to_string(), line, message: message.into() }
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_field(path: &Path, line: u64, name: &str, field: &str) -> Result<f64, DatasetError> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| malformed(path, line, format!("column {name}: {e}")))
}

fn next_record(
    path: &Path,
    reader: &mut csv::Reader<fs::File>,
    rec: &mut csv::StringRecord,
) -> Result<bool, DatasetError> {
    reader.read_record(rec).map_err(|e| {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        malformed(path, line, e.to_string())
    })
}

/// Reads the samples CSV (`sample_id,lon,lat,soc_g_kg,b1..bN`).
///
/// Malformed rows abort with the offending line number. Rows with non-finite
/// values, non-positive SOC or a degenerate NDVI are skipped and reported.
/// Reflectance outside [0,1] is clamped and counted.
pub fn load_samples(path: &Path, n_bands: usize, roles: &BandRoleMap) -> Result<LoadedSamples, DatasetError> {
    roles.validate(n_bands)?;
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| malformed(path, 1, e.to_string()))?.clone();
    let names = samples_header(n_bands);
    check_header(path, &header, &names)?;

    let mut out = LoadedSamples::default();
    let mut rec = csv::StringRecord::new();
    while next_record(path, &mut reader, &mut rec)? {
        let line = record_line(&rec);
        let id = rec[0].trim().to_string();
        let mut nums = Vec::with_capacity(3 + n_bands);
        for (name, field) in names[1..].iter().zip(rec.iter().skip(1)) {
            nums.push(parse_field(path, line, name, field)?);
        }
        let reject = |reason: String| RejectedRow { line, id: id.clone(), reason };
        if let Some(pos) = nums.iter().position(|v| !v.is_finite()) {
            out.rejected.push(reject(format!("non-finite value in column {}", names[pos + 1])));
            continue;
        }
        let (lon, lat, soc) = (nums[0], nums[1], nums[2]);
        if soc <= 0.0 {
            out.rejected.push(reject("non-positive SOC".into()));
            continue;
        }
        let mut bands = nums[3..].to_vec();
        for v in bands.iter_mut() {
            if !(0.0..=1.0).contains(v) {
                out.clamped_values += 1;
                *v = v.clamp(0.0, 1.0);
            }
        }
        let bands = BandVector::new(bands)?;
        match SoilSample::new(id.clone(), lon, lat, soc, bands, roles) {
            Ok(s) => out.samples.push(s),
            Err(e) => out.rejected.push(reject(e.to_string())),
        }
    }
    if out.clamped_values > 0 {
        log::warn!("{}: clamped {} band values into [0,1]", path.display(), out.clamped_values);
    }
    for r in &out.rejected {
        log::warn!("{} line {}: rejected {}: {}", path.display(), r.line, r.id, r.reason);
    }
    Ok(out)
}

fn push_floats(line: &mut String, values: &[f64]) {
    for v in values {
        write!(line, ",{v}").unwrap();
    }
}

pub fn write_samples(path: &Path, samples: &[SoilSample], n_bands: usize) -> Result<(), DatasetError> {
    let mut out = samples_header(n_bands).join(",");
    out.push('\n');
    for s in samples {
        write!(out, "{},{},{},{}", s.id, s.lon, s.lat, s.soc).unwrap();
        push_floats(&mut out, s.bands.values());
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Result of NDVI gating.
#[derive(Debug, Clone)]
pub struct NdviClasses<'a> {
    pub bare: Vec<&'a SoilSample>,
    pub vegetated: Vec<&'a SoilSample>,
    /// Samples with NDVI exactly at the threshold; counted in `bare`.
    pub ties: usize,
}

/// Splits at `threshold`: strictly above is vegetated, everything else bare.
pub fn classify_by_ndvi(samples: &[SoilSample], threshold: f64) -> NdviClasses<'_> {
    let mut classes = NdviClasses { bare: Vec::new(), vegetated: Vec::new(), ties: 0 };
    for s in samples {
        if s.ndvi > threshold {
            classes.vegetated.push(s);
        } else {
            if s.ndvi == threshold {
                classes.ties += 1;
            }
            classes.bare.push(s);
        }
    }
    classes
}

/// A vegetated observation with its bare-soil target spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRecord {
    pub veg: BandVector,
    /// Per-band mean of the contributing bare samples.
    pub bare_target: BandVector,
    pub soc: f64,
    pub veg_id: String,
    pub bare_ids: Vec<String>,
    /// Distance in degrees to the single nearest bare sample.
    pub pair_distance: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Pairing {
    pub records: Vec<PairedRecord>,
    /// Vegetated samples whose nearest bare sample lay beyond `max_radius`.
    pub dropped: usize,
}

/// Pairs each vegetated sample with the mean spectrum of its `k` nearest bare
/// samples (Euclidean distance in lon/lat degrees). Output order follows
/// `vegetated`.
pub fn pair_samples(
    vegetated: &[&SoilSample],
    bare: &[&SoilSample],
    k: usize,
    max_radius: f64,
) -> Result<Pairing, DatasetError> {
    if bare.is_empty() {
        return Err(DatasetError::NoBareReferences);
    }
    if k == 0 {
        return Err(DatasetError::Config("pairing k must be at least 1".into()));
    }
    let mut out = Pairing::default();
    for v in vegetated {
        let nearest: Vec<Neighbor> = neighbors::k_nearest(bare.iter().map(|b| v.distance_to(b)), k);
        let pair_distance = nearest[0].distance;
        if pair_distance > max_radius {
            out.dropped += 1;
            continue;
        }
        let bare_target = BandVector::mean_of(nearest.iter().map(|n| &bare[n.index].bands))?;
        out.records.push(PairedRecord {
            veg: v.bands.clone(),
            bare_target,
            soc: v.soc,
            veg_id: v.id.clone(),
            bare_ids: nearest.iter().map(|n| bare[n.index].id.clone()).collect(),
            pair_distance,
        });
    }
    Ok(out)
}

pub fn pairs_header(n_bands: usize) -> Vec<String> {
    let mut h = vec!["veg_id".to_string(), "bare_ids".into(), "pair_distance".into(), "soc_g_kg".into()];
    h.extend((1..=n_bands).map(|i| format!("veg_b{i}")));
    h.extend((1..=n_bands).map(|i| format!("bare_b{i}")));
    h
}

pub fn write_pairs(path: &Path, pairs: &[PairedRecord], n_bands: usize) -> Result<(), DatasetError> {
    let mut out = pairs_header(n_bands).join(",");
    out.push('\n');
    for p in pairs {
        write!(out, "{},{},{},{}", p.veg_id, p.bare_ids.join(";"), p.pair_distance, p.soc).unwrap();
        push_floats(&mut out, p.veg.values());
        push_floats(&mut out, p.bare_target.values());
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_pairs(path: &Path, n_bands: usize) -> Result<Vec<PairedRecord>, DatasetError> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| malformed(path, 1, e.to_string()))?.clone();
    let names = pairs_header(n_bands);
    check_header(path, &header, &names)?;
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    while next_record(path, &mut reader, &mut rec)? {
        let line = record_line(&rec);
        let mut nums = Vec::with_capacity(2 + 2 * n_bands);
        for (name, field) in names[2..].iter().zip(rec.iter().skip(2)) {
            nums.push(parse_field(path, line, name, field)?);
        }
        let bare_ids: Vec<String> = rec[1].split(';').map(|s| s.trim().to_string()).collect();
        if bare_ids.iter().any(String::is_empty) {
            return Err(malformed(path, line, "empty bare id"));
        }
        let to_bands = |v: &[f64]| BandVector::new(v.to_vec()).map_err(|e| malformed(path, line, e.to_string()));
        out.push(PairedRecord {
            veg_id: rec[0].trim().to_string(),
            bare_ids,
            pair_distance: nums[0],
            soc: nums[1],
            veg: to_bands(&nums[2..2 + n_bands])?,
            bare_target: to_bands(&nums[2 + n_bands..])?,
        });
    }
    Ok(out)
}

/// Holdout split plus k-fold partition of the training portion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn test_set(&self) -> HashSet<usize> {
        self.test.iter().copied().collect()
    }
}

/// Deterministic shuffle of `0..n` into test and train; the training
/// portion is dealt round-robin into `k_folds` folds (none when 0).
pub fn split(n: usize, test_fraction: f64, k_folds: usize, seed: u64) -> Result<DatasetSplit, DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::Config(format!("test fraction {test_fraction} not in (0,1)")));
    }
    if n < 2 {
        return Err(DatasetError::Config(format!("cannot split {n} samples")));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let n_train = n - n_test;
    if k_folds == 1 || n_train < k_folds {
        return Err(DatasetError::Config(format!(
            "{n_train} training samples cannot form {k_folds} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let mut test = perm[..n_test].to_vec();
    let train_order = &perm[n_test..];
    let mut folds = vec![Vec::new(); k_folds];
    for (i, &idx) in train_order.iter().enumerate() {
        if k_folds > 0 {
            folds[i % k_folds].push(idx);
        }
    }
    let mut train = train_order.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(DatasetSplit { train, test, folds, seed })
}

/// Parameters of the synthetic mixed-pixel generator.
///
/// Samples are laid out in spatial sites. Every site shares one SOC draw and
/// soil texture; its first `bare_per_site` samples carry almost no canopy
/// and the rest are vegetated.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// Uniform SOC range, g/kg.
    pub soc_range: (f64, f64),
    /// Canopy fraction range of vegetated samples.
    pub canopy_fraction_range: (f64, f64),
    /// Upper canopy fraction of bare samples.
    pub bare_canopy_max: f64,
    pub nonlinear_strength: f64,
    pub noise_sigma: f64,
    /// Relative spread of per-site soil brightness unrelated to SOC.
    pub soil_variability: f64,
    /// Relative spread of per-sample canopy brightness.
    pub canopy_variability: f64,
    /// Relative per-sample spread of green-canopy NIR (leaf area) and SWIR
    /// (canopy water) reflectance, drawn independently.
    pub canopy_shape_variability: f64,
    /// Range of the dry (senescent) share of each vegetated canopy.
    pub dry_fraction_range: (f64, f64),
    /// Relative per-sample SOC jitter around the site value.
    pub soc_jitter: f64,
    pub samples_per_site: usize,
    pub bare_per_site: usize,
    /// Spacing between site centres, degrees.
    pub site_spacing: f64,
    /// Half-width of the square each site's samples fall in, degrees.
    pub site_radius: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            soc_range: (2.5, 30.0),
            canopy_fraction_range: (0.3, 0.9),
            bare_canopy_max: 0.03,
            nonlinear_strength: 1.0,
            noise_sigma: 0.004,
            soil_variability: 0.04,
            canopy_variability: 0.15,
            canopy_shape_variability: 0.0,
            dry_fraction_range: (0.0, 0.0),
            soc_jitter: 0.03,
            samples_per_site: 8,
            bare_per_site: 3,
            site_spacing: 0.5,
            site_radius: 0.01,
            seed: 42,
        }
    }
}

impl SynthConfig {
    /// Dense, variable canopy (bright or dark, green or senescent) that
    /// buries the soil signal in the raw vegetated bands.
    pub fn heavy_canopy() -> Self {
        Self {
            canopy_fraction_range: (0.65, 0.85),
            canopy_variability: 1.0,
            canopy_shape_variability: 1.0,
            dry_fraction_range: (0.0, 1.0),
            noise_sigma: 0.002,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let problems = [
            (!ordered(self.soc_range) || self.soc_range.0 <= 0.0, "soc_range"),
            (
                !ordered(self.canopy_fraction_range)
                    || !unit(self.canopy_fraction_range.0)
                    || !unit(self.canopy_fraction_range.1),
                "canopy_fraction_range",
            ),
            (!unit(self.bare_canopy_max), "bare_canopy_max"),
            (!(self.nonlinear_strength >= 0.0), "nonlinear_strength"),
            (!(self.noise_sigma >= 0.0), "noise_sigma"),
            (!(self.soil_variability >= 0.0), "soil_variability"),
            (!(self.canopy_variability >= 0.0), "canopy_variability"),
            (!(self.canopy_shape_variability >= 0.0), "canopy_shape_variability"),
            (
                !ordered(self.dry_fraction_range) || !unit(self.dry_fraction_range.0) || !unit(self.dry_fraction_range.1),
                "dry_fraction_range",
            ),
            (!(self.soc_jitter >= 0.0), "soc_jitter"),
            (self.samples_per_site == 0, "samples_per_site"),
            (self.bare_per_site > self.samples_per_site, "bare_per_site"),
            (!(self.site_spacing > 0.0) || !(self.site_radius >= 0.0), "site geometry"),
        ];
        match problems.iter().find(|(bad, _)| *bad) {
            Some((_, what)) => Err(DatasetError::Config(format!("invalid synthetic {what}"))),
            None => Ok(()),
        }
    }
}

/// Band count of synthetic spectra (Landsat-8 B1..B7 layout).
pub const SYNTH_BANDS: usize = 7;

/// Bare-soil reflectance at the lowest SOC.
pub const SYNTH_SOIL_BASE: [f64; SYNTH_BANDS] = [0.11, 0.13, 0.17, 0.22, 0.28, 0.36, 0.31];
/// Relative darkening per band from lowest to highest SOC; strongest in SWIR.
pub const SYNTH_SOC_DARKENING: [f64; SYNTH_BANDS] = [0.20, 0.22, 0.26, 0.30, 0.34, 0.45, 0.48];
/// Green canopy endmember.
pub const SYNTH_CANOPY: [f64; SYNTH_BANDS] = [0.03, 0.04, 0.08, 0.04, 0.46, 0.22, 0.10];
/// Dry vegetation endmember: soil-like slope with a cellulose dip in SWIR2.
pub const SYNTH_DRY_CANOPY: [f64; SYNTH_BANDS] = [0.07, 0.09, 0.14, 0.18, 0.32, 0.40, 0.25];

/// Noise-free bare spectrum for a SOC value and soil brightness factor.
pub fn synth_bare_spectrum(soc: f64, soc_range: (f64, f64), brightness: f64) -> [f64; SYNTH_BANDS] {
    let s = ((soc - soc_range.0) / (soc_range.1 - soc_range.0).max(f64::MIN_POSITIVE)).clamp(0.0, 1.0);
    let mut out = [0.0; SYNTH_BANDS];
    for j in 0..SYNTH_BANDS {
        out[j] = (brightness * SYNTH_SOIL_BASE[j] * (1.0 - SYNTH_SOC_DARKENING[j] * s)).clamp(0.0, 1.0);
    }
    out
}

/// Mixes a bare spectrum with canopy at fraction `f`, including the
/// multiplicative interaction term, without noise or clamping.
pub fn synth_mix(bare: &[f64], canopy: &[f64], f: f64, nonlinear_strength: f64) -> Vec<f64> {
    bare.iter()
        .zip(canopy)
        .map(|(b, c)| (1.0 - f) * b + f * c + nonlinear_strength * f * (1.0 - f) * b * c)
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub samples: Vec<SoilSample>,
    /// True (noise-free) bare spectrum of every sample, keyed by id.
    pub truth: BTreeMap<String, BandVector>,
}

fn uniform(rng: &mut seed::Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput, DatasetError> {
    cfg.validate()?;
    let roles = BandRoleMap::landsat8();
    let mut rng = seed::stream(cfg.seed, "synth");
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| DatasetError::Config(e.to_string()))?;
    let n_sites = cfg.n_samples.div_ceil(cfg.samples_per_site);
    let grid = (n_sites as f64).sqrt().ceil().max(1.0) as usize;

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut truth = BTreeMap::new();
    for site in 0..n_sites {
        let (gx, gy) = ((site % grid) as f64, (site / grid) as f64);
        let cx = gx * cfg.site_spacing + uniform(&mut rng, (-0.2, 0.2)) * cfg.site_spacing;
        let cy = 40.0 + gy * cfg.site_spacing + uniform(&mut rng, (-0.2, 0.2)) * cfg.site_spacing;
        let site_soc = uniform(&mut rng, cfg.soc_range);
        let brightness = 1.0 + cfg.soil_variability * uniform(&mut rng, (-1.0, 1.0));

        let in_site = cfg.samples_per_site.min(cfg.n_samples - site * cfg.samples_per_site);
        for slot in 0..in_site {
            let id = format!("S{:05}", samples.len() + 1);
            let lon = cx + uniform(&mut rng, (-cfg.site_radius, cfg.site_radius));
            let lat = cy + uniform(&mut rng, (-cfg.site_radius, cfg.site_radius));
            let soc = (site_soc * (1.0 + cfg.soc_jitter * uniform(&mut rng, (-1.0, 1.0))))
                .clamp(cfg.soc_range.0, cfg.soc_range.1);
            let bare = synth_bare_spectrum(soc, cfg.soc_range, brightness);
            let f = if slot < cfg.bare_per_site {
                uniform(&mut rng, (0.0, cfg.bare_canopy_max))
            } else {
                uniform(&mut rng, cfg.canopy_fraction_range)
            };
            let canopy_scale = 1.0 + cfg.canopy_variability * uniform(&mut rng, (-1.0, 1.0));
            let dry = if slot < cfg.bare_per_site { 0.0 } else { uniform(&mut rng, cfg.dry_fraction_range) };
            let lai = 1.0 + cfg.canopy_shape_variability * uniform(&mut rng, (-1.0, 1.0));
            let water = 1.0 + cfg.canopy_shape_variability * uniform(&mut rng, (-1.0, 1.0));
            let canopy: Vec<f64> = (0..SYNTH_BANDS)
                .map(|j| {
                    let shape = match j {
                        4 => lai,
                        5 | 6 => water,
                        _ => 1.0,
                    };
                    ((1.0 - dry) * SYNTH_CANOPY[j] * shape + dry * SYNTH_DRY_CANOPY[j]) * canopy_scale
                })
                .collect();
            let observed: Vec<f64> = synth_mix(&bare, &canopy, f, cfg.nonlinear_strength)
                .into_iter()
                .map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            let sample = SoilSample::new(id.clone(), lon, lat, soc, BandVector::new(observed)?, &roles)?;
            truth.insert(id, BandVector::new(bare.to_vec())?);
            samples.push(sample);
        }
    }
    Ok(SynthOutput { samples, truth })
}

pub fn truth_header(n_bands: usize) -> Vec<String> {
    let mut h = vec!["sample_id".to_string()];
    h.extend((1..=n_bands).map(|i| format!("true_b{i}")));
    h
}

pub fn write_truth(path: &Path, truth: &BTreeMap<String, BandVector>, n_bands: usize) -> Result<(), DatasetError> {
    let mut out = truth_header(n_bands).join(",");
    out.push('\n');
    for (id, b) in truth {
        out.push_str(id);
        push_floats(&mut out, b.values());
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_truth(path: &Path, n_bands: usize) -> Result<BTreeMap<String, BandVector>, DatasetError> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| malformed(path, 1, e.to_string()))?.clone();
    let names = truth_header(n_bands);
    check_header(path, &header, &names)?;
    let mut out = BTreeMap::new();
    let mut rec = csv::StringRecord::new();
    while next_record(path, &mut reader, &mut rec)? {
        let line = record_line(&rec);
        let values = names[1..]
            .iter()
            .zip(rec.iter().skip(1))
            .map(|(n, f)| parse_field(path, line, n, f))
            .collect::<Result<Vec<_>, _>>()?;
        let b = BandVector::new(values).map_err(|e| malformed(path, line, e.to_string()))?;
        out.insert(rec[0].trim().to_string(), b);
    }
    Ok(out)
}
