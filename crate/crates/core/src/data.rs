//! Data generation, loading, and the portable label-file format.
//!
//! File formats:
//! - Dataset CSV: header `index,f0,...,f{d-1},label`, one row per sample.
//! - Label file: optional `# key=value` preamble (class_count, kind, ratio,
//!   seed), header `index,clean_label,noisy_label`, rows sorted by index,
//!   LF line endings.
//! - IDX: standard big-endian magic/dimension header.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::noise::{LabelRecord, NoisyLabels};
use crate::{Error, Mat, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Mat,
    pub clean_labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Mat, clean_labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self> {
        if features.rows() != clean_labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                features.rows(),
                clean_labels.len()
            )));
        }
        if let Some(&bad) = clean_labels.iter().find(|&&c| c >= class_count) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            features,
            clean_labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Per-class mean feature vectors. Classes absent from the data keep
    /// zero centroids.
    pub fn class_centroids(&self) -> Mat {
        let mut sums = Mat::zeros(self.class_count, self.dim());
        let mut counts = vec![0usize; self.class_count];
        for (i, &c) in self.clean_labels.iter().enumerate() {
            counts[c] += 1;
            let row = self.features.row(i);
            let s = sums.row_mut(c);
            for (sv, &fv) in s.iter_mut().zip(row) {
                *sv += fv;
            }
        }
        for c in 0..self.class_count {
            if counts[c] > 0 {
                for v in sums.row_mut(c) {
                    *v /= counts[c] as f64;
                }
            }
        }
        sums
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// One center per class.
    pub centers: Vec<Vec<f64>>,
    pub std: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Three adjacent-but-separable Gaussian blobs in the plane.
    pub fn default_three_class(seed: u64) -> Self {
        SyntheticSpec {
            centers: vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![2.0, 3.5]],
            std: 0.7,
            train_per_class: 1000,
            test_per_class: 500,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.centers.len() < 2 {
            return Err(Error::Config("need at least 2 class centers".into()));
        }
        let d = self.centers[0].len();
        if d == 0 || self.centers.iter().any(|c| c.len() != d) {
            return Err(Error::Config("centers must share a positive dimension".into()));
        }
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                if a == b {
                    return Err(Error::Config("class centers must be distinct".into()));
                }
            }
        }
        if self.std <= 0.0 {
            return Err(Error::Config("std must be > 0".into()));
        }
        if self.train_per_class < 1 || self.test_per_class < 1 {
            return Err(Error::Config("samples per class must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gaussian blobs around the spec's centers; deterministic per seed.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.std).expect("positive std");
    let mut sample_split = |per_class: usize, split: Split| -> Result<Dataset> {
        let c = spec.centers.len();
        let d = spec.centers[0].len();
        let mut features = Mat::zeros(per_class * c, d);
        let mut labels = Vec::with_capacity(per_class * c);
        for (class, center) in spec.centers.iter().enumerate() {
            for k in 0..per_class {
                let i = class * per_class + k;
                let row = features.row_mut(i);
                for (v, &m) in row.iter_mut().zip(center) {
                    *v = m + noise.sample(&mut rng);
                }
                labels.push(class);
            }
        }
        Dataset::new(features, labels, c, split)
    };
    let train = sample_split(spec.train_per_class, Split::Train)?;
    let test = sample_split(spec.test_per_class, Split::Test)?;
    Ok((train, test))
}

fn read_be_u32(buf: &[u8], off: usize, path: &Path) -> Result<u32> {
    buf.get(off..off + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Data(format!("{}: truncated header", path.display())))
}

/// Load an IDX image/label pair as a dataset with `[0,1]`-scaled pixels.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let read_all = |p: &Path| -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        std::fs::File::open(p)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(p, e))?;
        Ok(buf)
    };
    let img = read_all(images_path)?;
    let lab = read_all(labels_path)?;

    if read_be_u32(&img, 0, images_path)? != 0x0000_0803 {
        return Err(Error::Data(format!(
            "{}: bad IDX image magic",
            images_path.display()
        )));
    }
    if read_be_u32(&lab, 0, labels_path)? != 0x0000_0801 {
        return Err(Error::Data(format!(
            "{}: bad IDX label magic",
            labels_path.display()
        )));
    }
    let n_img = read_be_u32(&img, 4, images_path)? as usize;
    let rows = read_be_u32(&img, 8, images_path)? as usize;
    let cols = read_be_u32(&img, 12, images_path)? as usize;
    let n_lab = read_be_u32(&lab, 4, labels_path)? as usize;
    if n_img != n_lab {
        return Err(Error::Data(format!(
            "{} has {} images but {} has {} labels",
            images_path.display(),
            n_img,
            labels_path.display(),
            n_lab
        )));
    }
    let d = rows * cols;
    if img.len() != 16 + n_img * d {
        return Err(Error::Data(format!("{}: truncated pixel data", images_path.display())));
    }
    if lab.len() != 8 + n_lab {
        return Err(Error::Data(format!("{}: truncated label data", labels_path.display())));
    }
    let n = limit.map(|l| l.min(n_img)).unwrap_or(n_img);
    let mut features = Mat::zeros(n, d);
    for i in 0..n {
        let src = &img[16 + i * d..16 + (i + 1) * d];
        let dst = features.row_mut(i);
        for (v, &b) in dst.iter_mut().zip(src) {
            *v = b as f64 / 255.0;
        }
    }
    let labels: Vec<usize> = lab[8..8 + n].iter().map(|&b| b as usize).collect();
    let class_count = 10.max(labels.iter().copied().max().map_or(0, |m| m + 1));
    Dataset::new(features, labels, class_count, Split::Train)
}

/// Write a dataset as `index,f0,...,f{d-1},label` CSV.
pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = String::new();
    out.push_str("index");
    for j in 0..ds.dim() {
        let _ = write!(out, ",f{j}");
    }
    out.push_str(",label\n");
    for i in 0..ds.len() {
        let _ = write!(out, "{i}");
        for &v in ds.features.row(i) {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{}", ds.clean_labels[i]);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"index") || cols.last() != Some(&"label") || cols.len() < 3 {
        return Err(Error::Data(format!("{}: bad dataset header", path.display())));
    }
    let d = cols.len() - 2;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let lineno = lineno + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(Error::Data(format!(
                "{}: line {lineno}: expected {} fields, got {}",
                path.display(),
                d + 2,
                fields.len()
            )));
        }
        let mut feat = Vec::with_capacity(d);
        for f in &fields[1..1 + d] {
            feat.push(f.parse::<f64>().map_err(|_| {
                Error::Data(format!("{}: line {lineno}: bad feature value", path.display()))
            })?);
        }
        let label: usize = fields[d + 1].parse().map_err(|_| {
            Error::Data(format!("{}: line {lineno}: bad label", path.display()))
        })?;
        rows.push(feat);
        labels.push(label);
    }
    let class_count = labels.iter().copied().max().map_or(0, |m| m + 1);
    Dataset::new(Mat::from_rows(&rows)?, labels, class_count.max(1), split)
}

/// Load a dataset directory: `train.csv` required, `test.csv` optional.
pub fn load_dataset_dir(dir: &Path) -> Result<(Dataset, Option<Dataset>)> {
    let train = load_dataset(&dir.join("train.csv"), Split::Train)?;
    let test_path = dir.join("test.csv");
    let test = if test_path.exists() {
        let mut t = load_dataset(&test_path, Split::Test)?;
        // keep splits on a shared class index space
        let c = train.class_count.max(t.class_count);
        t.class_count = c;
        Some(t)
    } else {
        None
    };
    Ok((train, test))
}

pub fn save_labels(path: &Path, labels: &NoisyLabels) -> Result<()> {
    std::fs::write(path, labels_to_string(labels)).map_err(|e| Error::io(path, e))
}

pub fn labels_to_string(labels: &NoisyLabels) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# class_count={}", labels.class_count);
    let _ = writeln!(out, "# kind={}", labels.kind);
    let _ = writeln!(out, "# ratio={}", labels.ratio);
    let _ = writeln!(out, "# seed={}", labels.seed);
    out.push_str("index,clean_label,noisy_label\n");
    let mut records = labels.records.clone();
    records.sort_by_key(|r| r.index);
    for r in &records {
        let _ = writeln!(out, "{},{},{}", r.index, r.clean_label, r.noisy_label);
    }
    out
}

pub fn load_labels(path: &Path) -> Result<NoisyLabels> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut class_count: Option<usize> = None;
    let mut kind = String::from("unknown");
    let mut ratio = 0.0f64;
    let mut seed = 0u64;
    let mut records: Vec<LabelRecord> = Vec::new();
    let mut header_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let bad = |m: &str| Error::Data(format!("{}: line {lineno}: {m}", path.display()));
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some((k, v)) = rest.split_once('=') {
                match k.trim() {
                    "class_count" => {
                        class_count =
                            Some(v.trim().parse().map_err(|_| bad("bad class_count"))?)
                    }
                    "kind" => kind = v.trim().to_string(),
                    "ratio" => ratio = v.trim().parse().map_err(|_| bad("bad ratio"))?,
                    "seed" => seed = v.trim().parse().map_err(|_| bad("bad seed"))?,
                    _ => return Err(bad("unknown metadata key")),
                }
            }
            continue;
        }
        if !header_seen {
            if line != "index,clean_label,noisy_label" {
                return Err(bad("expected header index,clean_label,noisy_label"));
            }
            header_seen = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let index: usize = fields[0].parse().map_err(|_| bad("bad index"))?;
        let clean: usize = fields[1].parse().map_err(|_| bad("bad clean label"))?;
        let noisy: usize = fields[2].parse().map_err(|_| bad("bad noisy label"))?;
        if records.iter().any(|r| r.index == index) {
            return Err(bad(&format!("duplicate index {index}")));
        }
        if let Some(c) = class_count {
            if clean >= c || noisy >= c {
                return Err(bad(&format!("label out of range for {c} classes")));
            }
        }
        records.push(LabelRecord {
            index,
            clean_label: clean,
            noisy_label: noisy,
        });
    }
    if !header_seen {
        return Err(Error::Data(format!("{}: missing header", path.display())));
    }
    let class_count = class_count.unwrap_or_else(|| {
        records
            .iter()
            .map(|r| r.clean_label.max(r.noisy_label) + 1)
            .max()
            .unwrap_or(1)
    });
    Ok(NoisyLabels {
        records,
        class_count,
        kind,
        ratio,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_default_counts_and_histogram() {
        let spec = SyntheticSpec::default_three_class(0);
        let (train, test) = gen_synthetic(&spec).unwrap();
        assert_eq!(train.len(), 3000);
        assert_eq!(test.len(), 1500);
        let mut hist = [0usize; 3];
        for &c in &train.clean_labels {
            hist[c] += 1;
        }
        assert_eq!(hist, [1000, 1000, 1000]);
    }

    #[test]
    fn synthetic_degenerate_spread_hugs_centers() {
        let spec = SyntheticSpec {
            std: 1e-9,
            ..SyntheticSpec::default_three_class(1)
        };
        let (train, _) = gen_synthetic(&spec).unwrap();
        for (i, &c) in train.clean_labels.iter().enumerate() {
            for (v, m) in train.features.row(i).iter().zip(&spec.centers[c]) {
                assert!((v - m).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn synthetic_nearest_centroid_oracle() {
        // independent oracle: classify test points by nearest class centroid
        let spec = SyntheticSpec::default_three_class(42);
        let (train, test) = gen_synthetic(&spec).unwrap();
        let centroids = train.class_centroids();
        let mut correct = 0usize;
        for (i, &c) in test.clean_labels.iter().enumerate() {
            let x = test.features.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..3 {
                let d: f64 = x
                    .iter()
                    .zip(centroids.row(k))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            if best == c {
                correct += 1;
            }
        }
        let acc = correct as f64 / test.len() as f64;
        assert!(acc > 0.97, "nearest-centroid accuracy {acc}");
    }

    #[test]
    fn synthetic_is_seed_deterministic() {
        let spec = SyntheticSpec::default_three_class(7);
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let other = gen_synthetic(&SyntheticSpec::default_three_class(8)).unwrap();
        assert_ne!(a.0.features, other.0.features);
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = dir.path().join("imgs");
        let labs = dir.path().join("labs");
        // two 2x2 images
        let mut ib: Vec<u8> = Vec::new();
        ib.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        ib.extend_from_slice(&2u32.to_be_bytes());
        ib.extend_from_slice(&2u32.to_be_bytes());
        ib.extend_from_slice(&2u32.to_be_bytes());
        ib.extend_from_slice(&[0, 255, 128, 64, 10, 20, 30, 40]);
        let mut lb: Vec<u8> = Vec::new();
        lb.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lb.extend_from_slice(&2u32.to_be_bytes());
        lb.extend_from_slice(&[3, 7]);
        std::fs::write(&imgs, &ib).unwrap();
        std::fs::write(&labs, &lb).unwrap();

        let ds = load_idx(&imgs, &labs, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.features.get(0, 1), 1.0);
        assert_eq!(ds.clean_labels, vec![3, 7]);

        let empty = load_idx(&imgs, &labs, Some(0)).unwrap();
        assert_eq!(empty.len(), 0);

        // count mismatch
        lb[7] = 3;
        std::fs::write(&labs, &lb).unwrap();
        assert!(matches!(load_idx(&imgs, &labs, None), Err(Error::Data(_))));

        // bad magic
        ib[3] = 0x99;
        std::fs::write(&imgs, &ib).unwrap();
        let err = load_idx(&imgs, &labs, None).unwrap_err();
        assert!(err.to_string().contains("imgs"));
    }

    #[test]
    fn label_file_round_trip() {
        let labels = NoisyLabels {
            records: vec![
                LabelRecord { index: 0, clean_label: 1, noisy_label: 2 },
                LabelRecord { index: 1, clean_label: 0, noisy_label: 0 },
            ],
            class_count: 3,
            kind: "symmetric".into(),
            ratio: 0.5,
            seed: 9,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        save_labels(&path, &labels).unwrap();
        let loaded = load_labels(&path).unwrap();
        assert_eq!(labels, loaded);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("index,clean_label,noisy_label\n"));
        assert!(text.ends_with('\n'));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn label_file_header_only_is_empty_and_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        std::fs::write(&path, "index,clean_label,noisy_label\n").unwrap();
        let loaded = load_labels(&path).unwrap();
        assert!(loaded.records.is_empty());
    }

    #[test]
    fn label_file_duplicate_index_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        std::fs::write(
            &path,
            "index,clean_label,noisy_label\n3,1,1\n3,2,2\n",
        )
        .unwrap();
        let err = load_labels(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn label_file_range_check_uses_class_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        std::fs::write(
            &path,
            "# class_count=2\nindex,clean_label,noisy_label\n0,0,5\n",
        )
        .unwrap();
        assert!(matches!(load_labels(&path), Err(Error::Data(_))));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let spec = SyntheticSpec {
            train_per_class: 5,
            test_per_class: 2,
            ..SyntheticSpec::default_three_class(3)
        };
        let (train, _) = gen_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        save_dataset(&path, &train).unwrap();
        let loaded = load_dataset(&path, Split::Train).unwrap();
        assert_eq!(loaded.clean_labels, train.clean_labels);
        assert_eq!(loaded.class_count, 3);
        for i in 0..train.len() {
            for (a, b) in loaded.features.row(i).iter().zip(train.features.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
