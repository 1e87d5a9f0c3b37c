//! Band semantics and derived spectral features.
//!
//! A [`BandVector`] is one pixel's surface reflectance. Indices and Tasseled
//! Cap components are computed from it through a [`BandRoleMap`] that says
//! which position holds which physical band, so the same code serves Landsat-8
//! (the default layout) and any other sensor with the needed bands.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Denominators with magnitude below this are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Number of derived features appended by [`augment_features`].
pub const DERIVED_FEATURE_COUNT: usize = 14;

const DEFAULT_TCT_CSV: &str = include_str!("../data/tct_landsat8_oli.csv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("degenerate input for {index}: denominator or radicand out of domain")]
    Degenerate { index: &'static str },
    #[error("band vector is empty")]
    Empty,
    #[error("band {band} is not finite")]
    NonFinite { band: usize },
    #[error("band vector has {got} bands, expected {expected}")]
    BandCount { expected: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

/// Surface reflectance of one sample across `n_bands` bands.
#[derive(Debug, Clone, PartialEq)]
pub struct BandVector(Vec<f64>);

impl BandVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SpectralError> {
        if values.is_empty() {
            return Err(SpectralError::Empty);
        }
        if let Some(band) = values.iter().position(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinite { band });
        }
        Ok(Self(values))
    }

    pub fn n_bands(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, band: usize) -> f64 {
        self.0[band]
    }

    /// Per-band arithmetic mean of a non-empty set of equally sized vectors.
    pub fn mean_of<'a, I>(vectors: I) -> Result<Self, SpectralError>
    where
        I: IntoIterator<Item = &'a BandVector>,
    {
        let mut iter = vectors.into_iter();
        let first = iter.next().ok_or(SpectralError::Empty)?;
        let mut sum = first.0.clone();
        let mut count = 1usize;
        for v in iter {
            if v.n_bands() != sum.len() {
                return Err(SpectralError::BandCount { expected: sum.len(), got: v.n_bands() });
            }
            for (s, x) in sum.iter_mut().zip(&v.0) {
                *s += x;
            }
            count += 1;
        }
        let n = count as f64;
        sum.iter_mut().for_each(|s| *s /= n);
        Ok(Self(sum))
    }
}

impl fmt::Display for BandVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.4}")?;
        }
        write!(f, "]")
    }
}

/// Positions of the physical bands inside a [`BandVector`] (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandRoleMap {
    pub coastal: usize,
    pub blue: usize,
    pub green: usize,
    pub red: usize,
    pub nir: usize,
    pub swir1: usize,
    pub swir2: usize,
}

impl Default for BandRoleMap {
    fn default() -> Self {
        Self::landsat8()
    }
}

impl BandRoleMap {
    /// Landsat-8 OLI B1..B7 stored at indices 0..6.
    pub const fn landsat8() -> Self {
        Self { coastal: 0, blue: 1, green: 2, red: 3, nir: 4, swir1: 5, swir2: 6 }
    }

    fn as_array(&self) -> [usize; 7] {
        [self.coastal, self.blue, self.green, self.red, self.nir, self.swir1, self.swir2]
    }

    pub fn validate(&self, n_bands: usize) -> Result<(), SpectralError> {
        let idx = self.as_array();
        for (i, a) in idx.iter().enumerate() {
            if *a >= n_bands {
                return Err(SpectralError::Config(format!(
                    "band role index {a} out of range for {n_bands} bands"
                )));
            }
            if idx[..i].contains(a) {
                return Err(SpectralError::Config(format!("band role index {a} used twice")));
            }
        }
        Ok(())
    }

    /// The six Tasseled Cap input bands in coefficient column order (B2..B7).
    pub fn tct_bands(&self) -> [usize; 6] {
        [self.blue, self.green, self.red, self.nir, self.swir1, self.swir2]
    }
}

fn ratio(num: f64, den: f64, index: &'static str) -> Result<f64, SpectralError> {
    if den.abs() < DEGENERACY_TOL {
        return Err(SpectralError::Degenerate { index });
    }
    Ok(num / den)
}

/// (NIR − Red) / (NIR + Red).
pub fn ndvi(b: &BandVector, roles: &BandRoleMap) -> Result<f64, SpectralError> {
    let nir = b.get(roles.nir);
    let red = b.get(roles.red);
    ratio(nir - red, nir + red, "NDVI")
}

/// Soil-adjusted vegetation index with L = 0.5.
pub fn savi(b: &BandVector, roles: &BandRoleMap) -> Result<f64, SpectralError> {
    let nir = b.get(roles.nir);
    let red = b.get(roles.red);
    ratio(1.5 * (nir - red), nir + red + 0.5, "SAVI")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VegetationIndices {
    pub rvi: f64,
    pub ndvi: f64,
    pub gndvi: f64,
    pub evi: f64,
    pub savi: f64,
    pub msavi: f64,
}

impl VegetationIndices {
    pub fn to_array(&self) -> [f64; 6] {
        [self.rvi, self.ndvi, self.gndvi, self.evi, self.savi, self.msavi]
    }
}

pub fn compute_vegetation_indices(
    b: &BandVector,
    roles: &BandRoleMap,
) -> Result<VegetationIndices, SpectralError> {
    let nir = b.get(roles.nir);
    let red = b.get(roles.red);
    let green = b.get(roles.green);
    let blue = b.get(roles.blue);

    let rvi = ratio(nir, red, "RVI")?;
    let ndvi = ndvi(b, roles)?;
    let gndvi = ratio(nir - green, nir + green, "GNDVI")?;
    let evi = ratio(2.5 * (nir - red), nir + 6.0 * red - 7.5 * blue + 1.0, "EVI")?;
    let savi = savi(b, roles)?;
    let lead = 2.0 * nir + 1.0;
    let radicand = lead * lead - 8.0 * (nir - red);
    if radicand < 0.0 {
        return Err(SpectralError::Degenerate { index: "MSAVI" });
    }
    let msavi = (lead - radicand.sqrt()) / 2.0;
    Ok(VegetationIndices { rvi, ndvi, gndvi, evi, savi, msavi })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoilIndices {
    pub bi: f64,
    pub si: f64,
    pub ci: f64,
    pub dsi: f64,
    pub dvi: f64,
}

impl SoilIndices {
    pub fn to_array(&self) -> [f64; 5] {
        [self.bi, self.si, self.ci, self.dsi, self.dvi]
    }
}

pub fn compute_soil_indices(b: &BandVector, roles: &BandRoleMap) -> Result<SoilIndices, SpectralError> {
    let nir = b.get(roles.nir);
    let red = b.get(roles.red);
    let green = b.get(roles.green);
    let blue = b.get(roles.blue);
    let swir1 = b.get(roles.swir1);

    let bi_rad = (red * red + green * green) / 2.0;
    let si_rad = blue * red;
    if bi_rad < 0.0 {
        return Err(SpectralError::Degenerate { index: "BI" });
    }
    if si_rad < 0.0 {
        return Err(SpectralError::Degenerate { index: "SI" });
    }
    Ok(SoilIndices {
        bi: bi_rad.sqrt(),
        si: si_rad.sqrt(),
        ci: ratio(red - green, red + green, "CI")?,
        dsi: ratio(swir1, nir, "DSI")?,
        dvi: nir - red,
    })
}

/// Tasseled Cap coefficient matrix: rows brightness/greenness/wetness,
/// columns blue, green, red, nir, swir1, swir2.
#[derive(Debug, Clone, PartialEq)]
pub struct TasseledCap {
    coeffs: [[f64; 6]; 3],
}

impl Default for TasseledCap {
    fn default() -> Self {
        Self::landsat8_oli()
    }
}

impl TasseledCap {
    pub fn new(coeffs: [[f64; 6]; 3]) -> Self {
        Self { coeffs }
    }

    /// Landsat-8 OLI reflectance coefficients shipped with the crate.
    pub fn landsat8_oli() -> Self {
        Self::parse(DEFAULT_TCT_CSV).expect("bundled tasseled cap coefficients are well-formed")
    }

    /// Builds from a row-major matrix of any shape, rejecting anything but 3×6.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SpectralError> {
        if rows.len() != 3 || rows.iter().any(|r| r.len() != 6) {
            let shape: Vec<usize> = rows.iter().map(Vec::len).collect();
            return Err(SpectralError::Config(format!(
                "tasseled cap coefficients must be 3x6, got {} rows with widths {shape:?}",
                rows.len()
            )));
        }
        let mut coeffs = [[0.0; 6]; 3];
        for (dst, src) in coeffs.iter_mut().zip(rows) {
            dst.copy_from_slice(src);
        }
        Ok(Self { coeffs })
    }

    /// Parses the plain-text coefficient CSV. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, SpectralError> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| {
                    SpectralError::Config(format!("tasseled cap line {}: {e}", lineno + 1))
                })?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn from_file(path: &Path) -> Result<Self, SpectralError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpectralError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn coeffs(&self) -> &[[f64; 6]; 3] {
        &self.coeffs
    }

    /// (brightness, greenness, wetness).
    pub fn transform(&self, b: &BandVector, roles: &BandRoleMap) -> [f64; 3] {
        let bands = roles.tct_bands().map(|i| b.get(i));
        self.coeffs.map(|row| row.iter().zip(&bands).map(|(c, v)| c * v).sum())
    }
}

/// All derived indices for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexSet {
    pub vegetation: VegetationIndices,
    pub soil: SoilIndices,
    pub tct: [f64; 3],
}

impl IndexSet {
    pub fn compute(b: &BandVector, roles: &BandRoleMap, tct: &TasseledCap) -> Result<Self, SpectralError> {
        Ok(Self {
            vegetation: compute_vegetation_indices(b, roles)?,
            soil: compute_soil_indices(b, roles)?,
            tct: tct.transform(b, roles),
        })
    }
}

/// Names of the columns produced by [`augment_features`], in order.
pub fn feature_names(n_bands: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=n_bands).map(|i| format!("b{i}")).collect();
    names.extend(
        [
            "rvi", "ndvi", "gndvi", "evi", "savi", "msavi", "bi", "si", "ci", "dsi", "dvi",
            "tct_brightness", "tct_greenness", "tct_wetness",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    names
}

/// `[bands | rvi ndvi gndvi evi savi msavi | bi si ci dsi dvi | brightness greenness wetness]`.
pub fn augment_features(
    b: &BandVector,
    roles: &BandRoleMap,
    tct: &TasseledCap,
) -> Result<Vec<f64>, SpectralError> {
    let idx = IndexSet::compute(b, roles, tct)?;
    let mut out = Vec::with_capacity(b.n_bands() + DERIVED_FEATURE_COUNT);
    out.extend_from_slice(b.values());
    out.extend_from_slice(&idx.vegetation.to_array());
    out.extend_from_slice(&idx.soil.to_array());
    out.extend_from_slice(&idx.tct);
    Ok(out)
}

/// Maps reflectance in [0,1] to [-1,1] via `2v - 1`. Values outside [0,1]
/// are clamped first; the second element counts how many were.
pub fn normalize_reflectance(b: &BandVector) -> (BandVector, usize) {
    let mut clamped = 0;
    let values = b
        .values()
        .iter()
        .map(|&v| {
            if !(0.0..=1.0).contains(&v) {
                clamped += 1;
            }
            2.0 * v.clamp(0.0, 1.0) - 1.0
        })
        .collect();
    (BandVector(values), clamped)
}

/// Inverse of [`normalize_reflectance`] on [-1,1].
pub fn denormalize_reflectance(b: &BandVector) -> BandVector {
    BandVector(b.values().iter().map(|&v| (v + 1.0) / 2.0).collect())
}
