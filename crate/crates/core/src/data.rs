//! Synthetic SCOOD datasets and the on-disk formats shared by the CLI.
//!
//! A dataset directory holds:
//!
//! - `features.csv`: training features, one row per sample id `0..N`, no header.
//! - `labels.csv`: `id,label,truth` with `label` a class index or `U` and
//!   `truth` blank for labeled rows, a class index, or `OOD`.
//! - `test_id.csv`: test ID features followed by the class label, no header.
//! - `test_ood.csv`: test OOD features, no header.
//! - `manifest.json`: counts, seed and the generator configuration.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assignment::{DatasetState, HiddenTruth, LabeledSample, SampleId, UnlabeledSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodShape {
    /// Spherical shell around the origin.
    Annulus,
    /// Uniform box with points inside any ID 3σ ball rejected.
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyScoodConfig {
    pub classes: usize,
    pub dim: usize,
    pub labeled_per_class: usize,
    pub unlabeled_id: usize,
    /// Mean translation of unlabeled ID samples, in class standard deviations.
    pub shift_offset: f64,
    /// Variance multiplier of unlabeled ID samples.
    pub variance_inflation: f64,
    pub unlabeled_ood: usize,
    pub ood_shape: OodShape,
    /// Inner radius of the annulus, or half-width of the box.
    pub ood_radius: f64,
    /// Radial thickness of the annulus.
    pub ood_width: f64,
    /// Required clearance between the annulus and the outermost ID 3σ ball.
    pub ood_margin: f64,
    pub test_id: usize,
    pub test_ood: usize,
    /// Distance of the class means from the origin.
    pub class_radius: f64,
    pub class_std: f64,
    pub seed: u64,
}

impl Default for ToyScoodConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 2,
            labeled_per_class: 200,
            unlabeled_id: 400,
            shift_offset: 0.5,
            variance_inflation: 1.5,
            unlabeled_ood: 800,
            ood_shape: OodShape::Annulus,
            ood_radius: 9.5,
            ood_width: 3.0,
            ood_margin: 1.0,
            test_id: 400,
            test_ood: 400,
            class_radius: 4.0,
            class_std: 1.0,
            seed: 0,
        }
    }
}

impl ToyScoodConfig {
    /// The named preset; only `toy` exists.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "toy" => Ok(Self {
                seed,
                ..Self::default()
            }),
            other => Err(Error::invalid(format!("unknown preset {other:?}"))),
        }
    }

    /// Farthest distance from the origin of any ID class 3σ ball, shifted
    /// classes included.
    pub fn id_extent(&self) -> f64 {
        let inflated = self.class_std * self.variance_inflation.max(1.0).sqrt();
        self.class_radius + self.shift_offset.abs() * self.class_std + 3.0 * inflated
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::invalid("at least one ID class is required"));
        }
        if self.dim < 2 {
            return Err(Error::invalid(format!("feature dimension must be >= 2, got {}", self.dim)));
        }
        if !(self.class_std > 0.0 && self.variance_inflation > 0.0 && self.class_radius >= 0.0) {
            return Err(Error::invalid("class std and variance inflation must be positive"));
        }
        for (name, v) in [
            ("shift_offset", self.shift_offset),
            ("ood_radius", self.ood_radius),
            ("ood_width", self.ood_width),
            ("ood_margin", self.ood_margin),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        if self.ood_width < 0.0 || self.ood_margin < 0.0 {
            return Err(Error::invalid("ood_width and ood_margin must be non-negative"));
        }
        match self.ood_shape {
            OodShape::Annulus => {
                let needed = self.id_extent() + self.ood_margin;
                if self.ood_radius < needed {
                    return Err(Error::invalid(format!(
                        "OOD annulus radius {} intersects the ID region: needs at least {needed:.4}",
                        self.ood_radius
                    )));
                }
            }
            OodShape::Box => {
                if self.ood_radius <= self.id_extent() {
                    return Err(Error::invalid(format!(
                        "OOD box half-width {} does not reach outside the ID region ({:.4})",
                        self.ood_radius,
                        self.id_extent()
                    )));
                }
            }
        }
        Ok(())
    }

    fn class_means(&self) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|c| {
                let angle = 2.0 * PI * c as f64 / self.classes as f64;
                let mut m = vec![0.0; self.dim];
                m[0] = self.class_radius * angle.cos();
                m[1] = self.class_radius * angle.sin();
                m
            })
            .collect()
    }

    fn shift_direction(&self) -> Vec<f64> {
        vec![1.0 / (self.dim as f64).sqrt(); self.dim]
    }
}

/// Test ID features with labels, and test OOD features.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSets {
    pub id_features: Array2<f64>,
    pub id_labels: Vec<usize>,
    pub ood_features: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub state: DatasetState,
    pub test: TestSets,
}

fn gaussian(mean: &[f64], std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    mean.iter()
        .map(|m| {
            let n: f64 = StandardNormal.sample(rng);
            m + std * n
        })
        .collect()
}

fn unit_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

struct Sampler<'a> {
    cfg: &'a ToyScoodConfig,
    means: Vec<Vec<f64>>,
    shifted_means: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    fn new(cfg: &'a ToyScoodConfig) -> Self {
        let means = cfg.class_means();
        let dir = cfg.shift_direction();
        let shifted_means = means
            .iter()
            .map(|m| {
                m.iter()
                    .zip(&dir)
                    .map(|(m, d)| m + cfg.shift_offset * cfg.class_std * d)
                    .collect()
            })
            .collect();
        Self {
            cfg,
            means,
            shifted_means,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }

    fn id(&mut self, class: usize) -> Vec<f64> {
        gaussian(&self.means[class], self.cfg.class_std, &mut self.rng)
    }

    fn shifted_id(&mut self, class: usize) -> Vec<f64> {
        let std = self.cfg.class_std * self.cfg.variance_inflation.sqrt();
        gaussian(&self.shifted_means[class], std, &mut self.rng)
    }

    fn inside_id_ball(&self, x: &[f64]) -> bool {
        let base = 3.0 * self.cfg.class_std;
        let inflated = base * self.cfg.variance_inflation.max(1.0).sqrt();
        let dist = |m: &[f64]| x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        self.means.iter().any(|m| dist(m) <= base) || self.shifted_means.iter().any(|m| dist(m) <= inflated)
    }

    fn ood(&mut self) -> Result<Vec<f64>> {
        let d = self.cfg.dim;
        match self.cfg.ood_shape {
            OodShape::Annulus => {
                let dir = unit_direction(d, &mut self.rng);
                let (r0, r1) = (self.cfg.ood_radius, self.cfg.ood_radius + self.cfg.ood_width);
                // uniform in volume: r^d uniform between the two radii
                let u: f64 = self.rng.random();
                let r = (r0.powi(d as i32) + u * (r1.powi(d as i32) - r0.powi(d as i32))).powf(1.0 / d as f64);
                Ok(dir.into_iter().map(|x| x * r).collect())
            }
            OodShape::Box => {
                let h = self.cfg.ood_radius;
                for _ in 0..100_000 {
                    let x: Vec<f64> = (0..d).map(|_| self.rng.random_range(-h..=h)).collect();
                    if !self.inside_id_ball(&x) {
                        return Ok(x);
                    }
                }
                Err(Error::invalid("OOD box is covered by the ID region; no feasible sample"))
            }
        }
    }
}

/// Draws a dataset. Labeled and unlabeled ID classes are assigned
/// round-robin, so per-class counts differ by at most one.
pub fn generate_scood_toy(cfg: &ToyScoodConfig) -> Result<ToyDataset> {
    cfg.validate()?;
    let mut sampler = Sampler::new(cfg);
    let m = cfg.classes;
    let mut next_id: SampleId = 0;

    let mut labeled = Vec::with_capacity(m * cfg.labeled_per_class);
    for i in 0..m * cfg.labeled_per_class {
        let label = i % m;
        labeled.push(LabeledSample {
            id: next_id,
            features: sampler.id(label),
            label,
        });
        next_id += 1;
    }

    // ID and OOD unlabeled samples are interleaved in proportion so that the
    // pool has no positional structure.
    let total_u = cfg.unlabeled_id + cfg.unlabeled_ood;
    let mut unlabeled = Vec::with_capacity(total_u);
    let (mut n_id, mut n_ood) = (0, 0);
    for _ in 0..total_u {
        let take_id = n_id < cfg.unlabeled_id
            && (n_ood >= cfg.unlabeled_ood || n_id * total_u <= (n_id + n_ood) * cfg.unlabeled_id);
        let (features, truth) = if take_id {
            let class = n_id % m;
            n_id += 1;
            (sampler.shifted_id(class), HiddenTruth::Id(class))
        } else {
            n_ood += 1;
            (sampler.ood()?, HiddenTruth::Ood)
        };
        unlabeled.push(UnlabeledSample::new(next_id, features, truth));
        next_id += 1;
    }

    let mut id_features = Array2::zeros((cfg.test_id, cfg.dim));
    let mut id_labels = Vec::with_capacity(cfg.test_id);
    for i in 0..cfg.test_id {
        let class = i % m;
        let x = sampler.id(class);
        id_features.row_mut(i).assign(&ndarray::ArrayView1::from(&x[..]));
        id_labels.push(class);
    }
    let mut ood_features = Array2::zeros((cfg.test_ood, cfg.dim));
    for i in 0..cfg.test_ood {
        let x = sampler.ood()?;
        ood_features.row_mut(i).assign(&ndarray::ArrayView1::from(&x[..]));
    }

    Ok(ToyDataset {
        state: DatasetState::new(labeled, unlabeled, m)?,
        test: TestSets {
            id_features,
            id_labels,
            ood_features,
        },
    })
}

fn parse_err(path: &Path, row: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        col,
        msg: msg.into(),
    }
}

fn read_records(path: &Path, has_header: bool) -> Result<Vec<csv::StringRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, i + 1, 0, e.to_string()))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        out.push(rec);
    }
    Ok(out)
}

fn parse_f64(path: &Path, row: usize, col: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, row, col, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, row, col, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

/// Reads a dense, header-less, comma-separated matrix.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let records = read_records(path, false)?;
    if records.is_empty() {
        return Err(parse_err(path, 1, 1, "empty matrix file"));
    }
    let cols = records[0].len();
    let mut data = Vec::with_capacity(records.len() * cols);
    for (r, rec) in records.iter().enumerate() {
        if rec.len() != cols {
            return Err(parse_err(
                path,
                r + 1,
                rec.len().min(cols) + 1,
                format!("ragged row: expected {cols} fields, found {}", rec.len()),
            ));
        }
        for (c, field) in rec.iter().enumerate() {
            data.push(parse_f64(path, r + 1, c + 1, field)?);
        }
    }
    Ok(Array2::from_shape_vec((records.len(), cols), data).expect("rectangular"))
}

/// Writes a matrix as dense CSV using the shortest representation that
/// parses back to the identical `f64`.
pub fn save_matrix(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    if let Some(((r, c), v)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::invalid(format!("cannot save non-finite value {v} at ({r}, {c})")));
    }
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Reads a single column of numbers (one per line, or one row).
pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let m = load_matrix(path)?;
    if m.ncols() == 1 || m.nrows() == 1 {
        Ok(m.iter().copied().collect())
    } else {
        Err(parse_err(path, 1, 2, format!("expected a single column, found {} columns", m.ncols())))
    }
}

/// Reads a cost matrix either as dense rows or, when the first line is the
/// header `k,n,value`, as sparse triplets. Every `(k, n)` entry of the
/// triplet form must be given exactly once.
pub fn load_cost_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let records = read_records(path, false)?;
    let is_triplet = records
        .first()
        .is_some_and(|r| r.len() == 3 && &r[0] == "k" && &r[1] == "n" && &r[2] == "value");
    if !is_triplet {
        return load_matrix(path);
    }
    let mut entries = Vec::with_capacity(records.len() - 1);
    for (r, rec) in records.iter().enumerate().skip(1) {
        let row = r + 1;
        if rec.len() != 3 {
            return Err(parse_err(path, row, 1, format!("expected k,n,value, found {} fields", rec.len())));
        }
        let index = |c: usize| -> Result<usize> {
            rec[c]
                .parse()
                .map_err(|_| parse_err(path, row, c + 1, format!("bad index {:?}", &rec[c])))
        };
        entries.push((index(0)?, index(1)?, parse_f64(path, row, 3, &rec[2])?, row));
    }
    if entries.is_empty() {
        return Err(parse_err(path, 2, 1, "no triplets after the header"));
    }
    let k = entries.iter().map(|e| e.0).max().expect("non-empty") + 1;
    let n = entries.iter().map(|e| e.1).max().expect("non-empty") + 1;
    let mut m = Array2::from_elem((k, n), f64::NAN);
    for (j, i, v, row) in entries {
        if !m[[j, i]].is_nan() {
            return Err(parse_err(path, row, 1, format!("duplicate entry ({j}, {i})")));
        }
        m[[j, i]] = v;
    }
    if let Some(((j, i), _)) = m.indexed_iter().find(|(_, v)| v.is_nan()) {
        return Err(parse_err(path, 1, 1, format!("missing entry ({j}, {i}) of a {k}x{n} matrix")));
    }
    Ok(m)
}

/// One line of `labels.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelRecord {
    pub id: SampleId,
    pub label: Option<usize>,
    pub truth: Option<HiddenTruth>,
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>> {
    let path = path.as_ref();
    let records = read_records(path, false)?;
    let mut out = Vec::with_capacity(records.len());
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        if r == 0 && rec.get(0).is_some_and(|f| f.eq_ignore_ascii_case("id")) {
            continue;
        }
        if rec.len() < 2 || rec.len() > 3 {
            return Err(parse_err(path, row, 1, format!("expected 2 or 3 fields, found {}", rec.len())));
        }
        let id = rec[0]
            .parse()
            .map_err(|_| parse_err(path, row, 1, format!("bad sample id {:?}", &rec[0])))?;
        let label = match &rec[1] {
            "U" | "u" => None,
            f => Some(
                f.parse()
                    .map_err(|_| parse_err(path, row, 2, format!("bad label {f:?}")))?,
            ),
        };
        let truth = match rec.get(2) {
            None | Some("") => None,
            Some(f) if f.eq_ignore_ascii_case("ood") => Some(HiddenTruth::Ood),
            Some(f) => Some(HiddenTruth::Id(
                f.parse()
                    .map_err(|_| parse_err(path, row, 3, format!("bad hidden truth {f:?}")))?,
            )),
        };
        out.push(LabelRecord { id, label, truth });
    }
    if out.is_empty() {
        return Err(parse_err(path, 1, 1, "no label rows"));
    }
    Ok(out)
}

pub fn write_labels(path: impl AsRef<Path>, records: &[LabelRecord]) -> Result<()> {
    let mut out = String::from("id,label,truth\n");
    for r in records {
        let label = r.label.map_or("U".to_string(), |l| l.to_string());
        let truth = match r.truth {
            None => String::new(),
            Some(HiddenTruth::Ood) => "OOD".to_string(),
            Some(HiddenTruth::Id(c)) => c.to_string(),
        };
        out.push_str(&format!("{},{label},{truth}\n", r.id));
    }
    write_file(path.as_ref(), out.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub labeled: usize,
    pub unlabeled_id: usize,
    pub unlabeled_ood: usize,
    pub test_id: usize,
    pub test_ood: usize,
    pub classes: usize,
    pub dim: usize,
    pub seed: u64,
    pub config: ToyScoodConfig,
}

pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const TEST_ID_FILE: &str = "test_id.csv";
pub const TEST_OOD_FILE: &str = "test_ood.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn save_dataset(dir: impl AsRef<Path>, data: &ToyDataset, cfg: &ToyScoodConfig) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let state = &data.state;
    save_matrix(dir.join(FEATURES_FILE), &state.training_features())?;

    let mut labels: Vec<LabelRecord> = state
        .base_labeled()
        .iter()
        .map(|s| LabelRecord {
            id: s.id,
            label: Some(s.label),
            truth: None,
        })
        .chain(state.unlabeled().iter().map(|s| LabelRecord {
            id: s.id,
            label: None,
            truth: Some(s.hidden_truth()),
        }))
        .collect();
    labels.sort_by_key(|r| r.id);
    write_labels(dir.join(LABELS_FILE), &labels)?;

    let t = &data.test;
    let mut test_id = Array2::zeros((t.id_features.nrows(), t.id_features.ncols() + 1));
    test_id.slice_mut(s![.., ..t.id_features.ncols()]).assign(&t.id_features);
    for (i, &y) in t.id_labels.iter().enumerate() {
        test_id[[i, t.id_features.ncols()]] = y as f64;
    }
    save_matrix(dir.join(TEST_ID_FILE), &test_id)?;
    save_matrix(dir.join(TEST_OOD_FILE), &t.ood_features)?;

    let ood = state
        .unlabeled()
        .iter()
        .filter(|s| s.hidden_truth() == HiddenTruth::Ood)
        .count();
    let manifest = Manifest {
        labeled: state.base_labeled().len(),
        unlabeled_id: state.unlabeled().len() - ood,
        unlabeled_ood: ood,
        test_id: t.id_labels.len(),
        test_ood: t.ood_features.nrows(),
        classes: state.num_classes(),
        dim: cfg.dim,
        seed: cfg.seed,
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
}

fn path_in(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Loads a matrix whose shape is known from the manifest. Zero rows are
/// stored as an empty file.
fn load_sized(path: PathBuf, rows: usize, cols: usize) -> Result<Array2<f64>> {
    if rows == 0 {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        if !text.trim().is_empty() {
            return Err(Error::Shape {
                expected: format!("no rows in {}", path.display()),
                got: "a non-empty file".into(),
            });
        }
        return Ok(Array2::zeros((0, cols)));
    }
    let m = load_matrix(&path)?;
    if m.dim() != (rows, cols) {
        return Err(Error::Shape {
            expected: format!("{rows}x{cols} in {}", path.display()),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(m)
}

/// Loads a dataset directory, checking that labels and features agree on
/// the sample-id set.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<ToyDataset> {
    let dir = dir.as_ref();
    let manifest_path = path_in(dir, MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_slice(
        &fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
    )?;
    let n = manifest.labeled + manifest.unlabeled_id + manifest.unlabeled_ood;
    let features = load_sized(path_in(dir, FEATURES_FILE), n, manifest.dim)?;
    let labels = if n == 0 {
        Vec::new()
    } else {
        read_labels(path_in(dir, LABELS_FILE))?
    };
    if labels.len() != features.nrows() {
        return Err(Error::invalid(format!(
            "{} label rows but {} feature rows",
            labels.len(),
            features.nrows()
        )));
    }
    let mut ids: Vec<SampleId> = labels.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    if ids.iter().enumerate().any(|(i, &id)| i != id) {
        return Err(Error::invalid("label ids must be exactly 0..N, one per feature row"));
    }
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for r in &labels {
        let x = features.row(r.id).to_vec();
        match (r.label, r.truth) {
            (Some(label), _) => labeled.push(LabeledSample {
                id: r.id,
                features: x,
                label,
            }),
            (None, Some(truth)) => unlabeled.push(UnlabeledSample::new(r.id, x, truth)),
            (None, None) => {
                return Err(Error::invalid(format!("unlabeled sample {} has no hidden truth", r.id)))
            }
        }
    }
    labeled.sort_by_key(|s| s.id);
    unlabeled.sort_by_key(|s| s.id);

    let d = manifest.dim;
    let test_id = load_sized(path_in(dir, TEST_ID_FILE), manifest.test_id, d + 1)?;
    let id_labels = test_id
        .column(d)
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < manifest.classes {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!("test label {v} is not a class index")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let ood_features = load_sized(path_in(dir, TEST_OOD_FILE), manifest.test_ood, d)?;
    Ok(ToyDataset {
        state: DatasetState::new(labeled, unlabeled, manifest.classes)?,
        test: TestSets {
            id_features: test_id.slice(s![.., ..d]).to_owned(),
            id_labels,
            ood_features,
        },
    })
}
