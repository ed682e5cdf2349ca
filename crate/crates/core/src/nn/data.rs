//! Labelled datasets and the IDX / CSV loaders.
//!
//! IDX: `path` names the image file (magic `0x00000803`, unsigned bytes,
//! `count × rows × cols`). Its labels live next to it under the same name with
//! `images-idx3` replaced by `labels-idx1` (the MNIST convention, e.g.
//! `train-images-idx3-ubyte` ↔ `train-labels-idx1-ubyte`); the label file has
//! magic `0x00000801`. Pixels are scaled by `1/255`.
//!
//! CSV: header `label,f0,f1,...`, then one sample per line. Features must
//! already lie in `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Forget,
    Retain,
    Personal,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Idx,
    Csv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    dim: usize,
    role: Role,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, role: Role) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.x.len());
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.x.len()
                )));
            }
            if s.y >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has label {} >= class count {num_classes}",
                    s.y
                )));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            dim,
            role,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Feature dimension (0 for an empty set).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn filter_classes(&self, classes: &[usize]) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .filter(|s| classes.contains(&s.y))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    pub fn exclude_classes(&self, classes: &[usize]) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .filter(|s| !classes.contains(&s.y))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Pixel inversion `x ↦ 1 − x`, the personalization domain shift.
    pub fn inverted(&self) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    x: s.x.iter().map(|v| 1.0 - v).collect(),
                    y: s.y,
                })
                .collect(),
            ..self.clone()
        }
    }

    /// First `n` samples after a seeded shuffle.
    pub fn subsample<R: Rng>(&self, n: usize, rng: &mut R) -> Self {
        let mut samples = self.samples.clone();
        samples.shuffle(rng);
        samples.truncate(n);
        Self {
            samples,
            ..self.clone()
        }
    }

    /// Splits off the first `n` samples.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.samples.len());
        let (a, b) = self.samples.split_at(n);
        (
            Self {
                samples: a.to_vec(),
                ..self.clone()
            },
            Self {
                samples: b.to_vec(),
                ..self.clone()
            },
        )
    }
}

pub fn load_dataset(path: &Path, format: DataFormat, num_classes: usize) -> Result<Dataset> {
    match format {
        DataFormat::Idx => load_idx(path, num_classes),
        DataFormat::Csv => load_csv(path, num_classes),
    }
}

/// Companion label file of an IDX image file.
pub fn idx_label_path(images: &Path) -> Option<PathBuf> {
    let name = images.file_name()?.to_str()?;
    name.contains("images-idx3")
        .then(|| images.with_file_name(name.replace("images-idx3", "labels-idx1")))
}

fn parse_error(path: &Path, message: String) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message,
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| parse_error(path, format!("truncated header at byte offset {offset}")))
}

/// Parses an IDX file, returning its dimension list and payload.
fn read_idx(path: &Path, expected_magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != expected_magic {
        return Err(parse_error(
            path,
            format!("bad magic {magic:#010x} at byte offset 0, expected {expected_magic:#010x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(be_u32(&bytes, 4 + 4 * d, path)? as usize);
    }
    let header = 4 + 4 * ndims;
    let need = dims.iter().product::<usize>();
    let have = bytes.len() - header;
    if have < need {
        return Err(parse_error(
            path,
            format!(
                "payload truncated at byte offset {}: expected {need} bytes after header, found {have}",
                bytes.len()
            ),
        ));
    }
    if have > need {
        return Err(parse_error(path, format!("{} trailing bytes at byte offset {}", have - need, header + need)));
    }
    Ok((dims, bytes[header..].to_vec()))
}

fn load_idx(path: &Path, num_classes: usize) -> Result<Dataset> {
    let (dims, pixels) = read_idx(path, 0x0000_0803)?;
    let (count, features) = (dims[0], dims[1] * dims[2]);
    let label_path = idx_label_path(path).ok_or_else(|| {
        parse_error(path, "image file name must contain `images-idx3` to locate its labels".into())
    })?;
    let (ldims, labels) = read_idx(&label_path, 0x0000_0801)?;
    if ldims[0] != count {
        return Err(parse_error(
            &label_path,
            format!("{} labels for {count} images", ldims[0]),
        ));
    }
    let mut samples = Vec::with_capacity(count);
    for (i, (img, &label)) in pixels.chunks_exact(features.max(1)).zip(&labels).enumerate() {
        if label as usize >= num_classes {
            return Err(parse_error(
                &label_path,
                format!("label {label} >= class count {num_classes} at byte offset {}", 8 + i),
            ));
        }
        samples.push(Sample {
            x: img.iter().map(|&p| p as f64 / 255.0).collect(),
            y: label as usize,
        });
    }
    Dataset::new(samples, num_classes, Role::Eval)
}

fn load_csv(path: &Path, num_classes: usize) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, "empty file (line 1): missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let valid_header = cols.first() == Some(&"label")
        && cols[1..].iter().enumerate().all(|(i, c)| *c == format!("f{i}"));
    if !valid_header || cols.len() < 2 {
        return Err(parse_error(path, "line 1: header must be `label,f0,f1,...`".into()));
    }
    let dim = cols.len() - 1;
    let mut samples = Vec::new();
    for (lineno, line) in lines {
        let line_no = lineno + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(parse_error(
                path,
                format!("line {line_no}: ragged row with {} fields, expected {}", fields.len(), dim + 1),
            ));
        }
        let y: usize = fields[0]
            .parse()
            .map_err(|_| parse_error(path, format!("line {line_no}: bad label `{}`", fields[0])))?;
        if y >= num_classes {
            return Err(parse_error(
                path,
                format!("line {line_no}: label {y} >= class count {num_classes}"),
            ));
        }
        let mut x = Vec::with_capacity(dim);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_error(path, format!("line {line_no}: bad feature `{f}`")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(parse_error(path, format!("line {line_no}: feature {v} outside [0, 1]")));
            }
            x.push(v);
        }
        samples.push(Sample { x, y });
    }
    Dataset::new(samples, num_classes, Role::Eval)
}

/// Writes the IDX image/label pair for `d` (square images only).
pub fn write_idx(d: &Dataset, images: &Path) -> Result<()> {
    let side = (d.dim() as f64).sqrt() as usize;
    if side * side != d.dim() {
        return Err(Error::InvalidArgument(format!("feature dim {} is not square", d.dim())));
    }
    let labels = idx_label_path(images)
        .ok_or_else(|| Error::InvalidArgument("image path must contain `images-idx3`".into()))?;
    let mut img = Vec::with_capacity(16 + d.len() * d.dim());
    img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    for v in [d.len(), side, side] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    let mut lab = Vec::with_capacity(8 + d.len());
    lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    lab.extend_from_slice(&(d.len() as u32).to_be_bytes());
    for s in d.samples() {
        img.extend(s.x.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        lab.push(s.y as u8);
    }
    fs::write(images, img).map_err(|e| Error::io(images, e))?;
    fs::write(&labels, lab).map_err(|e| Error::io(&labels, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx_pair(dir: &Path, count: u32, truncate: usize) -> PathBuf {
        let images = dir.join("t10-images-idx3-ubyte");
        let mut img = Vec::new();
        img.extend_from_slice(&0x0803u32.to_be_bytes());
        for v in [count, 28, 28] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        img.extend((0..count as usize * 784).map(|i| (i % 256) as u8));
        img.truncate(img.len() - truncate);
        fs::write(&images, img).unwrap();
        let mut lab = Vec::new();
        lab.extend_from_slice(&0x0801u32.to_be_bytes());
        lab.extend_from_slice(&count.to_be_bytes());
        lab.extend((0..count).map(|i| (i % 10) as u8));
        fs::write(dir.join("t10-labels-idx1-ubyte"), lab).unwrap();
        images
    }

    #[test]
    fn loads_idx_pair() {
        let dir = tempfile::tempdir().unwrap();
        let images = write_idx_pair(dir.path(), 10, 0);
        let d = load_dataset(&images, DataFormat::Idx, 10).unwrap();
        assert_eq!(d.len(), 10);
        assert_eq!(d.dim(), 784);
        assert_eq!(d.samples()[3].y, 3);
        assert_eq!(d.samples()[0].x[255], 1.0);
    }

    #[test]
    fn truncated_idx_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let images = write_idx_pair(dir.path(), 10, 5);
        let err = load_dataset(&images, DataFormat::Idx, 10).unwrap_err().to_string();
        assert!(err.contains("byte offset 7851"), "{err}");
    }

    #[test]
    fn idx_bad_magic_and_label_range() {
        let dir = tempfile::tempdir().unwrap();
        let images = write_idx_pair(dir.path(), 10, 0);
        assert!(load_dataset(&images, DataFormat::Idx, 5).unwrap_err().to_string().contains("label 5"));
        let mut bytes = fs::read(&images).unwrap();
        bytes[3] = 0x01;
        fs::write(&images, bytes).unwrap();
        assert!(load_dataset(&images, DataFormat::Idx, 10).unwrap_err().to_string().contains("bad magic"));
    }

    #[test]
    fn idx_round_trip_through_writer() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(
            vec![Sample { x: vec![0.0, 1.0, 0.2, 0.6], y: 1 }, Sample { x: vec![1.0; 4], y: 0 }],
            2,
            Role::Eval,
        )
        .unwrap();
        let path = dir.path().join("x-images-idx3-ubyte");
        write_idx(&d, &path).unwrap();
        let back = load_dataset(&path, DataFormat::Idx, 2).unwrap();
        assert_eq!(back.samples()[0].x, vec![0.0, 1.0, 51.0 / 255.0, 153.0 / 255.0]);
        assert_eq!(back.samples()[1].y, 0);
    }

    #[test]
    fn loads_csv_and_reports_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "label,f0,f1,f2\n3,0.0,0.5,1.0\n").unwrap();
        let d = load_dataset(&path, DataFormat::Csv, 10).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.samples()[0], Sample { x: vec![0.0, 0.5, 1.0], y: 3 });

        fs::write(&path, "label,f0,f1\n1,0.1,0.2\n2,0.3\n").unwrap();
        let err = load_dataset(&path, DataFormat::Csv, 10).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("ragged"), "{err}");

        fs::write(&path, "label,f0\n1,0.1\n12,0.3\n").unwrap();
        let err = load_dataset(&path, DataFormat::Csv, 10).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("label 12"), "{err}");
    }

    #[test]
    fn inversion_and_filters() {
        let d = Dataset::new(
            vec![Sample { x: vec![0.25, 1.0], y: 0 }, Sample { x: vec![0.0, 0.5], y: 1 }],
            2,
            Role::Eval,
        )
        .unwrap();
        assert_eq!(d.inverted().samples()[0].x, vec![0.75, 0.0]);
        assert_eq!(d.filter_classes(&[1]).len(), 1);
        assert_eq!(d.exclude_classes(&[1]).samples()[0].y, 0);
    }
}
