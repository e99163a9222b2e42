//! Real-valued 2D Gabor kernels and orientation banks.
//!
//! A kernel samples
//! `exp(-(x'^2 + g^2 y'^2) / (2 s^2)) * cos(2 pi x' / lambda + psi)` on the
//! integer grid centred at the origin, with `(x', y')` the coordinates rotated
//! by `theta`, and is then shifted to zero mean and scaled to unit L2 norm.
//! Orientations are kept in degrees; radians appear only in [`gabor_value`].

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Analytic description of one Gabor kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub theta_deg: f64,
    pub wavelength: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub psi_deg: f64,
    pub size: usize,
}

impl fmt::Display for GaborParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "theta={} lambda={} sigma={} gamma={} psi={} size={}",
            self.theta_deg, self.wavelength, self.sigma, self.gamma, self.psi_deg, self.size
        )
    }
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::Argument(format!("invalid gabor parameters ({self}): {what}")))
        };
        if self.size < 3 || self.size % 2 == 0 {
            return bad("size must be odd and at least 3");
        }
        if !(self.wavelength > 0.0) || !(self.sigma > 0.0) || !(self.gamma > 0.0) {
            return bad("wavelength, sigma and gamma must be positive");
        }
        if !(0.0..180.0).contains(&self.theta_deg) {
            return bad("theta must lie in [0, 180)");
        }
        if !self.psi_deg.is_finite() {
            return bad("psi must be finite");
        }
        Ok(())
    }
}

/// Everything in [`GaborParams`] except the orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankParams {
    pub wavelength: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub psi_deg: f64,
    pub size: usize,
}

impl BankParams {
    /// Defaults for a `size x size` kernel: one carrier period across the
    /// kernel, octave bandwidth, aspect 0.5, even phase.
    pub fn for_size(size: usize) -> Self {
        let wavelength = size.saturating_sub(1).max(1) as f64;
        Self {
            wavelength,
            sigma: 0.56 * wavelength,
            gamma: 0.5,
            psi_deg: 0.0,
            size,
        }
    }

    pub fn with_theta(&self, theta_deg: f64) -> GaborParams {
        GaborParams {
            theta_deg,
            wavelength: self.wavelength,
            sigma: self.sigma,
            gamma: self.gamma,
            psi_deg: self.psi_deg,
            size: self.size,
        }
    }
}

/// Optional replacements for the shared bank parameters of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaborOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_deg: Option<f64>,
}

impl GaborOverrides {
    pub fn apply(&self, base: BankParams) -> BankParams {
        BankParams {
            wavelength: self.wavelength.unwrap_or(base.wavelength),
            sigma: self.sigma.unwrap_or(base.sigma),
            gamma: self.gamma.unwrap_or(base.gamma),
            psi_deg: self.psi_deg.unwrap_or(base.psi_deg),
            size: base.size,
        }
    }
}

impl Default for BankParams {
    fn default() -> Self {
        Self::for_size(5)
    }
}

pub fn gabor_value(p: &GaborParams, x: f64, y: f64) -> f64 {
    let (sin, cos) = p.theta_deg.to_radians().sin_cos();
    let xr = x * cos + y * sin;
    let yr = -x * sin + y * cos;
    let envelope = (-(xr * xr + p.gamma * p.gamma * yr * yr) / (2.0 * p.sigma * p.sigma)).exp();
    envelope * (2.0 * std::f64::consts::PI * xr / p.wavelength + p.psi_deg.to_radians()).cos()
}

/// Raw samples on the centred grid; row index is `y`, column index is `x`.
pub fn sample_gabor(p: &GaborParams) -> Result<Tensor<f64>> {
    p.validate()?;
    let n = p.size;
    let half = (n / 2) as f64;
    Ok(Tensor::from_fn(&[n, n], |i| {
        let (r, c) = (i / n, i % n);
        gabor_value(p, c as f64 - half, r as f64 - half)
    }))
}

/// Sampled kernel normalised to zero mean and unit L2 norm.
pub fn make_gabor_kernel(p: &GaborParams) -> Result<Tensor<f64>> {
    let raw = sample_gabor(p)?;
    let degenerate = |reason: &str| Error::Synthesis {
        params: p.to_string(),
        reason: reason.into(),
    };
    if raw.data().iter().all(|&v| v.abs() < f64::MIN_POSITIVE) {
        return Err(degenerate("all samples are zero"));
    }
    let mean = raw.data().iter().sum::<f64>() / raw.len() as f64;
    let centred = raw.map(|v| v - mean);
    let norm = centred.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(degenerate("kernel is constant after mean removal"));
    }
    Ok(centred.map(|v| v / norm))
}

/// Stable identity of a bank entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntryId(pub usize);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub id: EntryId,
    pub theta_deg: f64,
    pub kernel: Tensor<f64>,
}

/// Kernels sharing every parameter except an equally spaced orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    params: BankParams,
    entries: Vec<BankEntry>,
}

/// Orientation `index * 180 / count` in degrees.
pub fn bank_orientation(index: usize, count: usize) -> f64 {
    (index * 180) as f64 / count as f64
}

pub fn make_gabor_bank(count: usize, shared: BankParams) -> Result<KernelBank> {
    if count == 0 {
        return Err(Error::Argument("a kernel bank needs at least one entry".into()));
    }
    let entries = (0..count)
        .map(|i| {
            let theta_deg = bank_orientation(i, count);
            Ok(BankEntry {
                id: EntryId(i),
                theta_deg,
                kernel: make_gabor_kernel(&shared.with_theta(theta_deg))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(KernelBank {
        params: shared,
        entries,
    })
}

impl KernelBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn params(&self) -> &BankParams {
        &self.params
    }

    pub fn kernel_size(&self) -> usize {
        self.params.size
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn entry(&self, id: EntryId) -> Option<&BankEntry> {
        self.entries.get(id.0).filter(|e| e.id == id)
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.theta_deg).collect()
    }

    /// Entry whose orientation equals `theta_deg` exactly.
    pub fn find_orientation(&self, theta_deg: f64) -> Option<EntryId> {
        self.entries
            .iter()
            .find(|e| e.theta_deg == theta_deg)
            .map(|e| e.id)
    }

    /// Writes one plain (P2) PGM per entry into `dir`, values mapped
    /// affinely onto [0, 255]. Returns the written paths.
    pub fn export_pgm(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let path = dir.join(format!(
                "gabor_{:02}_theta_{:06.2}.pgm",
                e.id.0, e.theta_deg
            ));
            let mut f = std::fs::File::create(&path).map_err(|err| Error::io(&path, err))?;
            f.write_all(pgm_tile(&e.kernel).as_bytes())
                .map_err(|err| Error::io(&path, err))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Plain PGM text for one kernel.
pub fn pgm_tile(kernel: &Tensor<f64>) -> String {
    let (h, w) = (kernel.shape()[0], kernel.shape()[1]);
    let (lo, hi) = kernel
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let mut out = format!("P2\n{w} {h}\n255\n");
    for row in kernel.data().chunks(w) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let g = if span > 0.0 { (v - lo) / span * 255.0 } else { 0.0 };
                format!("{}", g.round() as u8)
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
