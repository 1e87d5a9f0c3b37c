//! Classical vegetation corrections: regressing vegetation indices out of
//! each band, and two-endmember linear spectral mixture analysis.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dataset::SoilSample;
use crate::spectral::{self, BandRoleMap, BandVector, SpectralError};

/// Default NDVI above which samples feed the vegetation endmember.
pub const DEFAULT_NDVI_HI: f64 = 0.7;
/// Default soil abundance floor used when backing out the bare spectrum.
pub const DEFAULT_F_FLOOR: f64 = 0.05;
/// Minimum separation between endmember spectra.
pub const ENDMEMBER_MIN_DISTANCE: f64 = 1e-6;
/// Minimum number of samples for the index regression.
pub const VI_MIN_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no bare samples to estimate the soil endmember from")]
    EmptyBare,
    #[error("endmember spectra coincide (distance {0:e})")]
    Coincident(f64),
    #[error("{role} endmember band {band} = {value} is outside [0, 1]")]
    OutOfRange { role: &'static str, band: usize, value: f64 },
    #[error("band count mismatch: expected {expected}, found {found}")]
    BandMismatch { expected: usize, found: usize },
    #[error("index correction needs at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("index regression design is rank deficient")]
    RankDeficient,
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Fixed,
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberSet {
    pub soil: BandVector,
    pub vegetation: BandVector,
    pub provenance: Provenance,
    /// Set when no sample reached the NDVI cut and the single greenest
    /// sample was used instead.
    pub vegetation_fallback: bool,
}

impl EndmemberSet {
    pub fn new(soil: BandVector, vegetation: BandVector, provenance: Provenance) -> Result<Self, BaselineError> {
        let set = Self { soil, vegetation, provenance, vegetation_fallback: false };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.soil.n_bands() != self.vegetation.n_bands() {
            return Err(BaselineError::BandMismatch { expected: self.soil.n_bands(), found: self.vegetation.n_bands() });
        }
        for (role, v) in [("soil", &self.soil), ("vegetation", &self.vegetation)] {
            if let Some((band, &value)) = v.values().iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
                return Err(BaselineError::OutOfRange { role, band, value });
            }
        }
        let dist = l2(self.soil.values(), self.vegetation.values());
        if dist <= ENDMEMBER_MIN_DISTANCE {
            return Err(BaselineError::Coincident(dist));
        }
        Ok(())
    }

    pub fn n_bands(&self) -> usize {
        self.soil.n_bands()
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Soil endmember from the mean bare spectrum; vegetation endmember from the
/// mean of vegetated samples with NDVI ≥ `ndvi_hi`, or the single greenest
/// sample when none qualifies.
pub fn estimate_endmembers(
    bare: &[&SoilSample],
    vegetated: &[&SoilSample],
    ndvi_hi: f64,
) -> Result<EndmemberSet, BaselineError> {
    if bare.is_empty() {
        return Err(BaselineError::EmptyBare);
    }
    let soil = BandVector::mean_of(bare.iter().map(|s| &s.bands))?;
    let green: Vec<&SoilSample> = vegetated.iter().copied().filter(|s| s.ndvi >= ndvi_hi).collect();
    let (vegetation, fallback) = if green.is_empty() {
        let pool = if vegetated.is_empty() { bare } else { vegetated };
        let best = pool.iter().fold(pool[0], |a, &b| if b.ndvi > a.ndvi { b } else { a });
        log::warn!("no sample has NDVI >= {ndvi_hi}; using {} (NDVI {:.3}) as vegetation endmember", best.id, best.ndvi);
        (best.bands.clone(), true)
    } else {
        (BandVector::mean_of(green.iter().map(|s| &s.bands))?, false)
    };
    let mut set = EndmemberSet::new(soil, vegetation, Provenance::Estimated)?;
    set.vegetation_fallback = fallback;
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbundanceEstimate {
    pub f_soil: f64,
    pub f_veg: f64,
    pub residual_norm: f64,
}

/// Least-squares soil fraction on the segment between the two endmembers.
pub fn sma_unmix(mixed: &BandVector, em: &EndmemberSet) -> Result<AbundanceEstimate, BaselineError> {
    em.validate()?;
    if mixed.n_bands() != em.n_bands() {
        return Err(BaselineError::BandMismatch { expected: em.n_bands(), found: mixed.n_bands() });
    }
    let (m, s, v) = (mixed.values(), em.soil.values(), em.vegetation.values());
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..m.len() {
        let d = s[j] - v[j];
        num += (m[j] - v[j]) * d;
        den += d * d;
    }
    let f_soil = (num / den).clamp(0.0, 1.0);
    let f_veg = 1.0 - f_soil;
    let residual_norm = (0..m.len()).map(|j| (m[j] - f_soil * s[j] - f_veg * v[j]).powi(2)).sum::<f64>().sqrt();
    Ok(AbundanceEstimate { f_soil, f_veg, residual_norm })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmaCorrection {
    pub bare: BandVector,
    pub abundance: AbundanceEstimate,
    /// Soil fraction fell below the floor, so the back-out was damped.
    pub low_confidence: bool,
}

/// Removes the vegetation share and rescales by the soil fraction.
pub fn sma_correct(mixed: &BandVector, em: &EndmemberSet, f_floor: f64) -> Result<SmaCorrection, BaselineError> {
    let abundance = sma_unmix(mixed, em)?;
    let denom = abundance.f_soil.max(f_floor);
    let values = mixed
        .values()
        .iter()
        .zip(em.vegetation.values())
        .map(|(m, v)| ((m - abundance.f_veg * v) / denom).clamp(0.0, 1.0))
        .collect();
    Ok(SmaCorrection { bare: BandVector::new(values)?, abundance, low_confidence: abundance.f_soil < f_floor })
}

/// Per-band regression of reflectance on NDVI and SAVI.
#[derive(Debug, Clone, PartialEq)]
pub struct ViCorrector {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub ndvi_mean: f64,
    pub savi_mean: f64,
}

impl ViCorrector {
    /// Ordinary least squares `band_j = α_j + β_j·ndvi + γ_j·savi`.
    pub fn fit(bands: &[BandVector], ndvi: &[f64], savi: &[f64]) -> Result<Self, BaselineError> {
        let n = bands.len();
        if n < VI_MIN_SAMPLES {
            return Err(BaselineError::TooFewSamples { need: VI_MIN_SAMPLES, got: n });
        }
        if ndvi.len() != n || savi.len() != n {
            return Err(BaselineError::BandMismatch { expected: n, found: ndvi.len().min(savi.len()) });
        }
        let n_bands = bands[0].n_bands();
        if let Some(b) = bands.iter().find(|b| b.n_bands() != n_bands) {
            return Err(BaselineError::BandMismatch { expected: n_bands, found: b.n_bands() });
        }
        let ndvi_mean = ndvi.iter().sum::<f64>() / n as f64;
        let savi_mean = savi.iter().sum::<f64>() / n as f64;
        // Centred predictors decouple the intercept from the slopes.
        let x = DMatrix::from_fn(n, 2, |i, c| if c == 0 { ndvi[i] - ndvi_mean } else { savi[i] - savi_mean });
        let svd = x.clone().svd(true, true);
        let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
        if !(smin > 1e-10 * smax) {
            return Err(BaselineError::RankDeficient);
        }
        let (mut alpha, mut beta, mut gamma) = (vec![0.0; n_bands], vec![0.0; n_bands], vec![0.0; n_bands]);
        for j in 0..n_bands {
            let y = DVector::from_iterator(n, bands.iter().map(|b| b.get(j)));
            let y_mean = y.mean();
            let coef = svd.solve(&y.add_scalar(-y_mean), 0.0).map_err(|_| BaselineError::RankDeficient)?;
            beta[j] = coef[0];
            gamma[j] = coef[1];
            alpha[j] = y_mean - coef[0] * ndvi_mean - coef[1] * savi_mean;
        }
        Ok(Self { alpha, beta, gamma, ndvi_mean, savi_mean })
    }

    /// Subtracts the fitted index effect, re-centred at the fit means.
    pub fn apply(&self, b: &BandVector, ndvi: f64, savi: f64) -> Result<BandVector, BaselineError> {
        if b.n_bands() != self.beta.len() {
            return Err(BaselineError::BandMismatch { expected: self.beta.len(), found: b.n_bands() });
        }
        let (dn, ds) = (ndvi - self.ndvi_mean, savi - self.savi_mean);
        let values = b.values().iter().enumerate().map(|(j, v)| v - self.beta[j] * dn - self.gamma[j] * ds).collect();
        Ok(BandVector::new(values)?)
    }
}

/// Fits [`ViCorrector`] on the given spectra and returns it with every
/// spectrum corrected.
pub fn vi_correction(
    bands: &[BandVector],
    roles: &BandRoleMap,
) -> Result<(ViCorrector, Vec<BandVector>), BaselineError> {
    let ndvi = bands.iter().map(|b| spectral::ndvi(b, roles)).collect::<Result<Vec<_>, _>>()?;
    let savi = bands.iter().map(|b| spectral::savi(b, roles)).collect::<Result<Vec<_>, _>>()?;
    let model = ViCorrector::fit(bands, &ndvi, &savi)?;
    let corrected = bands
        .iter()
        .zip(ndvi.iter().zip(&savi))
        .map(|(b, (n, s))| model.apply(b, *n, *s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((model, corrected))
}

pub fn write_endmembers(path: &Path, em: &EndmemberSet) -> Result<(), BaselineError> {
    let mut out = String::from("role");
    for i in 1..=em.n_bands() {
        write!(out, ",b{i}").unwrap();
    }
    out.push('\n');
    for (role, v) in [("soil", &em.soil), ("vegetation", &em.vegetation)] {
        out.push_str(role);
        for x in v.values() {
            write!(out, ",{x}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| BaselineError::Io { path: path.display().to_string(), source })
}

/// Reads a `role,b1..bN` file holding one `soil` and one `vegetation` row.
pub fn read_endmembers(path: &Path, n_bands: usize) -> Result<EndmemberSet, BaselineError> {
    let bad = |message: String| BaselineError::Malformed { path: path.display().to_string(), message };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = reader.headers().map_err(|e| bad(e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
    let mut want = vec!["role".to_string()];
    want.extend((1..=n_bands).map(|i| format!("b{i}")));
    if header != want {
        return Err(bad(format!("header {header:?} does not match expected {want:?}")));
    }
    let (mut soil, mut veg) = (None, None);
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let slot = match rec[0].trim() {
            "soil" => &mut soil,
            "vegetation" => &mut veg,
            other => return Err(bad(format!("unknown role {other:?}"))),
        };
        if slot.replace(BandVector::new(values)?).is_some() {
            return Err(bad(format!("duplicate role {:?}", rec[0].trim())));
        }
    }
    match (soil, veg) {
        (Some(s), Some(v)) => EndmemberSet::new(s, v, Provenance::Fixed),
        _ => Err(bad("both soil and vegetation rows are required".into())),
    }
}
