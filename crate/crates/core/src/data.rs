//! Point clouds, predictions, text I/O and seeded randomness.
//!
//! Three whitespace-separated ASCII formats are supported, one point per line:
//!
//! | format    | columns                 |
//! |-----------|-------------------------|
//! | `xyz`     | `x y z`                 |
//! | `xyzrgb`  | `x y z r g b`           |
//! | `xyzrgbl` | `x y z r g b label`     |
//!
//! Colors are reals in `[0, 1]`. Written files use six decimal digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{kernels, Matrix};

/// The deterministic random stream used everywhere in the crate.
pub type Rng = ChaCha8Rng;

/// Identical seeds give identical streams on every platform.
pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 21-entry class palette (8-bit RGB). Class `c` uses entry `c % 21`.
pub const PALETTE: [[u8; 3]; 21] = [
    [174, 199, 232],
    [152, 223, 138],
    [31, 119, 180],
    [255, 187, 120],
    [188, 189, 34],
    [140, 86, 75],
    [255, 152, 150],
    [214, 39, 40],
    [197, 176, 213],
    [148, 103, 189],
    [196, 156, 148],
    [23, 190, 207],
    [247, 182, 210],
    [219, 219, 141],
    [255, 127, 14],
    [158, 218, 229],
    [44, 160, 44],
    [112, 128, 144],
    [227, 119, 194],
    [82, 84, 163],
    [100, 85, 144],
];

pub fn palette_color(class: usize) -> [f64; 3] {
    let c = PALETTE[class % PALETTE.len()];
    [
        f64::from(c[0]) / 255.0,
        f64::from(c[1]) / 255.0,
        f64::from(c[2]) / 255.0,
    ]
}

/// An unordered set of points with optional colors and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    colors: Option<Vec<[f64; 3]>>,
    labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<[f64; 3]>,
        colors: Option<Vec<[f64; 3]>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = positions.len();
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point positions"));
        }
        if let Some(c) = &colors {
            if c.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: c.len(),
                });
            }
            if c.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("point colors"));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: l.len(),
                });
            }
        }
        Ok(Self {
            positions,
            colors,
            labels,
        })
    }

    pub fn from_positions(positions: Vec<[f64; 3]>) -> Result<Self> {
        Self::new(positions, None, None)
    }

    #[inline]
    pub fn num_points(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    #[inline]
    pub fn position(&self, i: usize) -> [f64; 3] {
        self.positions[i]
    }

    pub fn colors(&self) -> Option<&[[f64; 3]]> {
        self.colors.as_deref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.num_points() {
            return Err(Error::LengthMismatch {
                expected: self.num_points(),
                actual: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// Checks that every label lies in `[0, num_classes)`.
    pub fn validate_labels(&self, num_classes: usize) -> Result<()> {
        if let Some(labels) = &self.labels {
            if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
        }
        Ok(())
    }

    /// Gathers the given points (repeats allowed) into a new cloud.
    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Translates every point by `offset`.
    pub fn translated(&self, offset: [f64; 3]) -> PointCloud {
        let mut out = self.clone();
        for p in &mut out.positions {
            for (v, o) in p.iter_mut().zip(offset) {
                *v += o;
            }
        }
        out
    }

    /// Axis-aligned bounds `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.positions.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.positions[1..] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }

    /// Input features for the network: xyz, or xyz followed by rgb when
    /// `channels == 6`.
    pub fn features(&self, channels: usize) -> Result<Matrix> {
        let n = self.num_points();
        match channels {
            3 => Ok(Matrix::from_vec(
                n,
                3,
                self.positions.iter().flatten().copied().collect(),
            )?),
            6 => {
                let colors = self.colors.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("6 input channels require colors".into())
                })?;
                let mut data = Vec::with_capacity(n * 6);
                for (p, c) in self.positions.iter().zip(colors) {
                    data.extend_from_slice(p);
                    data.extend_from_slice(c);
                }
                Matrix::from_vec(n, 6, data)
            }
            other => Err(Error::InvalidArgument(format!(
                "input channels must be 3 or 6, got {other}"
            ))),
        }
    }
}

/// Network output for a set of points.
#[derive(Clone, Debug)]
pub struct LabelPrediction {
    pub logits: Matrix,
    pub labels: Vec<usize>,
    /// Maximum softmax probability per point.
    pub confidence: Vec<f64>,
}

impl LabelPrediction {
    pub fn from_logits(logits: Matrix) -> Self {
        let probs = kernels::row_softmax(&logits);
        let mut labels = Vec::with_capacity(logits.rows());
        let mut confidence = Vec::with_capacity(logits.rows());
        for i in 0..probs.rows() {
            let (best, p) = argmax(probs.row(i));
            labels.push(best);
            confidence.push(p);
        }
        Self {
            logits,
            labels,
            confidence,
        }
    }

    pub fn num_points(&self) -> usize {
        self.labels.len()
    }
}

/// First index of the maximum; lower index wins ties.
pub(crate) fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    (best, row[best])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    XyzRgb,
    XyzRgbL,
}

impl CloudFormat {
    pub fn columns(self) -> usize {
        match self {
            CloudFormat::Xyz => 3,
            CloudFormat::XyzRgb => 6,
            CloudFormat::XyzRgbL => 7,
        }
    }

    /// Picks the format from a `.xyz` / `.xyzrgb` / `.xyzrgbl` extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" => Ok(CloudFormat::Xyz),
            "xyzrgb" => Ok(CloudFormat::XyzRgb),
            "xyzrgbl" => Ok(CloudFormat::XyzRgbL),
            other => Err(Error::InvalidArgument(format!("unknown cloud format {other:?}"))),
        }
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text, format).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })?
    .ok_or_else(|| Error::EmptyFile(path.to_path_buf()))
}

type ParseFailure = (usize, String);

fn parse_cloud(
    text: &str,
    format: CloudFormat,
) -> std::result::Result<Option<PointCloud>, ParseFailure> {
    let columns = format.columns();
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    let mut values = [0.0f64; 6];

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != columns {
            return Err((
                lineno,
                format!("expected {columns} columns, found {}", fields.len()),
            ));
        }
        for (slot, field) in values.iter_mut().zip(&fields).take(columns.min(6)) {
            let v: f64 = field
                .parse()
                .map_err(|_| (lineno, format!("invalid number {field:?}")))?;
            if !v.is_finite() {
                return Err((lineno, format!("non-finite value {field:?}")));
            }
            *slot = v;
        }
        positions.push([values[0], values[1], values[2]]);
        if columns >= 6 {
            let c = [values[3], values[4], values[5]];
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err((lineno, "color outside [0, 1]".to_string()));
            }
            colors.push(c);
        }
        if columns == 7 {
            let label: usize = fields[6]
                .parse()
                .map_err(|_| (lineno, format!("invalid label {:?}", fields[6])))?;
            labels.push(label);
        }
    }

    if positions.is_empty() {
        return Ok(None);
    }
    let colors = (columns >= 6).then_some(colors);
    let labels = (columns == 7).then_some(labels);
    Ok(Some(
        PointCloud::new(positions, colors, labels).expect("parser keeps columns aligned"),
    ))
}

/// Writes `x y z r g b label` lines with the palette color of each label.
pub fn save_labeled_cloud(cloud: &PointCloud, labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if labels.len() != cloud.num_points() {
        return Err(Error::LengthMismatch {
            expected: cloud.num_points(),
            actual: labels.len(),
        });
    }
    let mut out = String::with_capacity(cloud.num_points() * 64);
    for (p, &label) in cloud.positions().iter().zip(labels) {
        let c = palette_color(label);
        writeln!(
            out,
            "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {}",
            p[0], p[1], p[2], c[0], c[1], c[2], label
        )
        .expect("writing to a String cannot fail");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
