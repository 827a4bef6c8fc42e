//! Thermogram preprocessing: load temperature matrices and masks, extract
//! the region of interest, resize, normalize, augment, and split at patient
//! granularity so no patient leaks across the train/test boundary.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Raw,
    Masked,
    Roi,
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thermogram {
    pub matrix: Array2<f64>,
    pub patient_id: String,
    /// 0 = healthy, 1 = cancer.
    pub label: usize,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskImage {
    pub grid: Array2<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub label: usize,
    pub thermograms: Vec<Thermogram>,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<()> {
        if self.thermograms.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "patient {} has no thermograms",
                self.patient_id
            )));
        }
        if self.thermograms.iter().any(|t| t.label != self.label) {
            return Err(Error::InvalidDataset(format!(
                "patient {} mixes labels",
                self.patient_id
            )));
        }
        Ok(())
    }
}

/// Whitespace-separated rectangular grid of reals, one matrix row per line.
pub fn load_temperature_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (j, token) in line.split_whitespace().enumerate() {
            let v: f64 = token.parse().map_err(|_| Error::ParseCell {
                path: path.into(),
                row: i + 1,
                col: j + 1,
                token: token.into(),
            })?;
            if !v.is_finite() {
                return Err(Error::ParseCell {
                    path: path.into(),
                    row: i + 1,
                    col: j + 1,
                    token: token.into(),
                });
            }
            row.push(v);
        }
        if rows.is_empty() {
            width = row.len();
        } else if row.len() != width {
            return Err(Error::MalformedFile {
                path: path.into(),
                line: i + 1,
                msg: format!("ragged row: {} values, expected {width}", row.len()),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() || width == 0 {
        return Err(Error::MalformedFile {
            path: path.into(),
            line: 1,
            msg: "empty matrix".into(),
        });
    }
    let h = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((h, width), flat).expect("shape"))
}

/// Masks come as plain-text 0/1 grids or binary PGM (P5); nonzero = keep.
pub fn load_mask(path: &Path) -> Result<MaskImage> {
    let is_pgm = path.extension().map_or(false, |e| e == "pgm");
    let grid = if is_pgm {
        load_pgm(path)?
    } else {
        let m = load_temperature_matrix(path)?;
        m.mapv(|v| (v != 0.0) as u8)
    };
    if grid.iter().all(|&v| v == 0) {
        return Err(Error::EmptyMask);
    }
    Ok(MaskImage { grid })
}

fn load_pgm(path: &Path) -> Result<Array2<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let malformed = |msg: &str| Error::MalformedFile {
        path: path.into(),
        line: 1,
        msg: msg.into(),
    };
    // Header: "P5" <w> <h> <maxval> separated by whitespace/comments, then
    // a single whitespace byte before the raster.
    let mut at = 0usize;
    let mut fields: Vec<usize> = Vec::new();
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(malformed("not a P5 pgm"));
    }
    at += 2;
    while fields.len() < 3 {
        while at < bytes.len() && (bytes[at] as char).is_whitespace() {
            at += 1;
        }
        if at < bytes.len() && bytes[at] == b'#' {
            while at < bytes.len() && bytes[at] != b'\n' {
                at += 1;
            }
            continue;
        }
        let start = at;
        while at < bytes.len() && (bytes[at] as char).is_ascii_digit() {
            at += 1;
        }
        if at == start {
            return Err(malformed("bad pgm header"));
        }
        let text = std::str::from_utf8(&bytes[start..at]).unwrap();
        fields.push(text.parse().map_err(|_| malformed("bad pgm header"))?);
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 255 {
        return Err(malformed("only 8-bit pgm supported"));
    }
    at += 1; // the single whitespace after maxval
    if bytes.len() < at + w * h {
        return Err(malformed("truncated pgm raster"));
    }
    let data: Vec<u8> = bytes[at..at + w * h]
        .iter()
        .map(|&b| (b != 0) as u8)
        .collect();
    Ok(Array2::from_shape_vec((h, w), data).expect("shape"))
}

/// Zero everything outside the mask, then crop to the tight bounding box of
/// the mask's nonzero support.
pub fn mask_and_crop(t: &Thermogram, m: &MaskImage) -> Result<Thermogram> {
    if t.matrix.dim() != m.grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.matrix.len(),
            got: m.grid.len(),
        });
    }
    let (h, w) = m.grid.dim();
    let (mut y0, mut y1, mut x0, mut x1) = (h, 0usize, w, 0usize);
    for y in 0..h {
        for x in 0..w {
            if m.grid[[y, x]] != 0 {
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }
    if y0 > y1 {
        return Err(Error::EmptyMask);
    }
    let matrix = Array2::from_shape_fn((y1 - y0 + 1, x1 - x0 + 1), |(y, x)| {
        if m.grid[[y0 + y, x0 + x]] != 0 {
            t.matrix[[y0 + y, x0 + x]]
        } else {
            0.0
        }
    });
    Ok(Thermogram {
        matrix,
        source: Source::Roi,
        ..t.clone()
    })
}

/// Corner-aligned bilinear resize.
pub fn resize_bilinear(t: &Thermogram, h: usize, w: usize) -> Result<Thermogram> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("resize target must be >= 1x1".into()));
    }
    let (ih, iw) = t.matrix.dim();
    let sy = if h > 1 { (ih - 1) as f64 / (h - 1) as f64 } else { 0.0 };
    let sx = if w > 1 { (iw - 1) as f64 / (w - 1) as f64 } else { 0.0 };
    let matrix = Array2::from_shape_fn((h, w), |(y, x)| {
        let fy = y as f64 * sy;
        let fx = x as f64 * sx;
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(ih - 1);
        let x1 = (x0 + 1).min(iw - 1);
        let dy = fy - y0 as f64;
        let dx = fx - x0 as f64;
        t.matrix[[y0, x0]] * (1.0 - dy) * (1.0 - dx)
            + t.matrix[[y0, x1]] * (1.0 - dy) * dx
            + t.matrix[[y1, x0]] * dy * (1.0 - dx)
            + t.matrix[[y1, x1]] * dy * dx
    });
    Ok(Thermogram {
        matrix,
        ..t.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NormalizeMode {
    PerImage,
    Fixed { lo: f64, hi: f64 },
}

/// Rescale to [0,1]. A constant image maps to all 0.5.
pub fn normalize(t: &Thermogram, mode: NormalizeMode) -> Result<Thermogram> {
    let (lo, hi) = match mode {
        NormalizeMode::PerImage => {
            let lo = t.matrix.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = t.matrix.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
        NormalizeMode::Fixed { lo, hi } => {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "fixed normalization needs lo < hi, got [{lo}, {hi}]"
                )));
            }
            (lo, hi)
        }
    };
    let matrix = if lo == hi {
        Array2::from_elem(t.matrix.dim(), 0.5)
    } else {
        t.matrix.mapv(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
    };
    Ok(Thermogram {
        matrix,
        source: Source::Normalized,
        ..t.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentOp {
    HFlip,
    VFlip,
    Rot90,
    Gaussian { sigma: f64 },
    SaltPepper { p: f64 },
}

impl AugmentOp {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentOp::Gaussian { sigma } if sigma <= 0.0 => Err(Error::InvalidArgument(
                format!("gaussian sigma must be > 0, got {sigma}"),
            )),
            AugmentOp::SaltPepper { p } if !(p > 0.0 && p < 1.0) => Err(Error::InvalidArgument(
                format!("salt & pepper p must be in (0, 1), got {p}"),
            )),
            _ => Ok(()),
        }
    }

    fn is_noise(&self) -> bool {
        matches!(self, AugmentOp::Gaussian { .. } | AugmentOp::SaltPepper { .. })
    }
}

pub fn hflip(m: &Array2<f64>) -> Array2<f64> {
    let (h, w) = m.dim();
    Array2::from_shape_fn((h, w), |(y, x)| m[[y, w - 1 - x]])
}

pub fn vflip(m: &Array2<f64>) -> Array2<f64> {
    let (h, w) = m.dim();
    Array2::from_shape_fn((h, w), |(y, x)| m[[h - 1 - y, x]])
}

/// Counter-clockwise quarter turn: output is w x h.
pub fn rot90(m: &Array2<f64>) -> Array2<f64> {
    let (h, w) = m.dim();
    Array2::from_shape_fn((w, h), |(y, x)| m[[x, w - 1 - y]])
}

fn apply_op(
    t: &Thermogram,
    op: &AugmentOp,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    if op.is_noise() && t.source != Source::Normalized {
        return Err(Error::InvalidArgument(
            "noise ops require normalized images".into(),
        ));
    }
    Ok(match *op {
        AugmentOp::HFlip => hflip(&t.matrix),
        AugmentOp::VFlip => vflip(&t.matrix),
        AugmentOp::Rot90 => rot90(&t.matrix),
        AugmentOp::Gaussian { sigma } => {
            let dist = Normal::new(0.0, sigma).unwrap();
            t.matrix.mapv(|v| (v + dist.sample(rng)).clamp(0.0, 1.0))
        }
        AugmentOp::SaltPepper { p } => t.matrix.mapv(|v| {
            if rng.gen::<f64>() < p {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            }
        }),
    })
}

/// Grow each record to `degree` times its image count. Originals come
/// first; each synthetic image applies one uniformly drawn op to one of the
/// originals (cycled), with noise re-randomized per image.
pub fn augment_images(
    records: &[PatientRecord],
    ops: &[AugmentOp],
    degree: usize,
    seed: u64,
) -> Result<Vec<PatientRecord>> {
    if degree < 2 {
        return Err(Error::InvalidArgument(format!(
            "augment degree must be >= 2, got {degree}"
        )));
    }
    if ops.is_empty() {
        return Err(Error::InvalidArgument("no augmentation ops given".into()));
    }
    for op in ops {
        op.validate()?;
    }
    records
        .iter()
        .enumerate()
        .map(|(ri, record)| {
            record.validate()?;
            let mut thermograms = record.thermograms.clone();
            let base = record.thermograms.len();
            for si in 0..base * (degree - 1) {
                // Per-image generator so parallel schedules cannot reorder
                // the stream.
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ ((ri as u64) << 32) ^ si as u64,
                );
                let original = &record.thermograms[si % base];
                let op = &ops[rng.gen_range(0..ops.len())];
                let matrix = apply_op(original, op, &mut rng)?;
                thermograms.push(Thermogram {
                    matrix,
                    ..original.clone()
                });
            }
            Ok(PatientRecord {
                patient_id: record.patient_id.clone(),
                label: record.label,
                thermograms,
            })
        })
        .collect()
}

/// Stratified split at patient granularity: every patient's images land on
/// exactly one side.
pub fn patient_split(
    records: &[PatientRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<PatientRecord>, Vec<PatientRecord>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (i, r) in records.iter().enumerate() {
        r.validate()?;
        if r.label > 1 {
            return Err(Error::InvalidDataset(format!(
                "patient {} has label {}, expected 0 or 1",
                r.patient_id, r.label
            )));
        }
        by_class[r.label].push(i);
    }
    for (label, members) in by_class.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::DegenerateClass {
                class: if label == 0 { "healthy" } else { "cancer" }.into(),
                count: members.len(),
                needed: 2,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_idx = Vec::new();
    for members in &mut by_class {
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        let n_test = ((members.len() as f64 * test_fraction).round() as usize)
            .clamp(1, members.len() - 1);
        test_idx.extend_from_slice(&members[..n_test]);
    }
    test_idx.sort_unstable();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if test_idx.binary_search(&i).is_ok() {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, test))
}

/// Load `<root>/<healthy|sick>/<patient_id>/*.txt`, applying the patient's
/// `mask.txt` / `mask.pgm` when present. Patients and files load in sorted
/// order, so the result is stable across platforms.
pub fn load_directory(root: &Path) -> Result<Vec<PatientRecord>> {
    let mut records = Vec::new();
    for (class_dir, label) in [("healthy", 0usize), ("sick", 1usize)] {
        let dir = root.join(class_dir);
        if !dir.exists() {
            continue;
        }
        let mut patients: Vec<_> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(&dir, e))?
            .into_iter()
            .filter(|e| e.path().is_dir())
            .map(|e| e.path())
            .collect();
        patients.sort();
        for patient_dir in patients {
            let patient_id = patient_dir
                .file_name()
                .unwrap()
                .to_string_lossy()
                .to_string();
            let mask = ["mask.txt", "mask.pgm"]
                .iter()
                .map(|f| patient_dir.join(f))
                .find(|p| p.exists())
                .map(|p| load_mask(&p))
                .transpose()?;
            let mut files: Vec<_> = fs::read_dir(&patient_dir)
                .map_err(|e| Error::io(&patient_dir, e))?
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(|e| Error::io(&patient_dir, e))?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| {
                    p.extension().map_or(false, |e| e == "txt")
                        && p.file_name().map_or(false, |f| f != "mask.txt")
                })
                .collect();
            files.sort();
            let mut thermograms = Vec::with_capacity(files.len());
            for file in files {
                let matrix = load_temperature_matrix(&file)?;
                let t = Thermogram {
                    matrix,
                    patient_id: patient_id.clone(),
                    label,
                    source: Source::Raw,
                };
                thermograms.push(match &mask {
                    Some(m) => mask_and_crop(&t, m)?,
                    None => t,
                });
            }
            let record = PatientRecord {
                patient_id,
                label,
                thermograms,
            };
            record.validate()?;
            records.push(record);
        }
    }
    if records.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "no patient directories under {}",
            root.display()
        )));
    }
    Ok(records)
}

/// Cache format: h and w as little-endian 32-bit integers, then row-major
/// little-endian 32-bit reals.
pub fn save_matrix_bin(path: &Path, m: &Array2<f64>) -> Result<()> {
    let (h, w) = m.dim();
    let mut bytes = Vec::with_capacity(8 + m.len() * 4);
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    for &v in m.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_matrix_bin(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |msg: &str| Error::MalformedFile {
        path: path.into(),
        line: 0,
        msg: msg.into(),
    };
    if bytes.len() < 8 {
        return Err(malformed("missing header"));
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + h * w * 4 {
        return Err(malformed("raster length does not match header"));
    }
    let data: Vec<f64> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Array2::from_shape_vec((h, w), data).expect("shape"))
}
