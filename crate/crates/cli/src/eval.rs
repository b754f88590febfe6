use std::fmt;
use std::fs::{self, OpenOptions};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use oocs_core::data::{make_inverted, Dataset};
use oocs_core::imageops::{adjust_contrast, gamma_correct, perturb_gaussian, perturb_salt_pepper, ImageTensor};
use oocs_core::nn::{loss_and_logits, read_checkpoint, Graph, NetworkSpec, Params, Tensor};
use oocs_core::{OocsError, Result};

use crate::config::sidecar;
use crate::{csv_err, mix_seed};

pub const REPORT_HEADER: [&str; 8] = [
    "model_id",
    "test_set_id",
    "perturbation",
    "magnitude",
    "seed",
    "accuracy",
    "mean_loss",
    "n",
];

const EVAL_BATCH: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model_id: String,
    pub test_set_id: String,
    pub perturbation: String,
    pub magnitude: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestSet {
    Original,
    Inverted,
}

impl TestSet {
    pub fn prepare(self, test: &Dataset) -> Dataset {
        match self {
            TestSet::Original => test.clone(),
            TestSet::Inverted => make_inverted(test),
        }
    }
}

impl fmt::Display for TestSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestSet::Original => "original",
            TestSet::Inverted => "inverted",
        })
    }
}

impl FromStr for TestSet {
    type Err = OocsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(TestSet::Original),
            "inverted" => Ok(TestSet::Inverted),
            other => Err(OocsError::Domain(format!(
                "unknown test set `{other}` (expected original or inverted)"
            ))),
        }
    }
}

/// A trained network loaded from a checkpoint and its `.net` sidecar.
#[derive(Debug, Clone)]
pub struct Model {
    pub id: String,
    pub graph: Graph,
    pub params: Params<f32>,
}

impl Model {
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let spec_path = sidecar(checkpoint, "net");
        let text = fs::read_to_string(&spec_path).map_err(|e| OocsError::Io {
            path: spec_path.clone(),
            source: e,
        })?;
        let spec = NetworkSpec::from_text(&text)?;
        let params = read_checkpoint(checkpoint, &spec)?;
        Ok(Self {
            id: model_id(checkpoint),
            graph: Graph::new(spec)?,
            params,
        })
    }
}

/// File name of the checkpoint without its extension.
pub fn model_id(checkpoint: &Path) -> String {
    checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// (accuracy, mean cross-entropy) in evaluation mode.
pub fn evaluate(graph: &Graph, params: &Params<f32>, ds: &Dataset) -> Result<(f64, f64)> {
    evaluate_images(graph, params, &ds.images.iter().collect::<Vec<_>>(), &ds.labels)
}

fn evaluate_images(graph: &Graph, params: &Params<f32>, images: &[&ImageTensor], labels: &[u8]) -> Result<(f64, f64)> {
    if images.is_empty() {
        return Err(OocsError::Domain("cannot evaluate on an empty set".into()));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (imgs, labs) in images.chunks(EVAL_BATCH).zip(labels.chunks(EVAL_BATCH)) {
        let x: Tensor<f32> = Tensor::from_images(imgs)?;
        let (loss, logits) = loss_and_logits(graph, params, &x, labs)?;
        loss_sum += loss as f64 * labs.len() as f64;
        correct += (0..logits.n).filter(|&i| argmax(logits.row(i)) == labs[i] as usize).count();
    }
    Ok((correct as f64 / images.len() as f64, loss_sum / images.len() as f64))
}

/// Appends rows to a report CSV, writing the header if the file is new or empty.
pub fn append_rows(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| OocsError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(REPORT_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| OocsError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes a complete report CSV, replacing any existing file.
pub fn write_rows(path: &Path, rows: &[EvalRow]) -> Result<()> {
    if path.exists() {
        fs::remove_file(path).map_err(|e| OocsError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    append_rows(path, rows)
}

/// Clean accuracy of `model` on the chosen test set. Rows are appended to
/// `report` when given.
pub fn cmd_eval(model: &Model, test_set: TestSet, test: &Dataset, report: Option<&Path>) -> Result<Vec<EvalRow>> {
    let ds = test_set.prepare(test);
    let (accuracy, mean_loss) = evaluate(&model.graph, &model.params, &ds)?;
    let rows = vec![EvalRow {
        model_id: model.id.clone(),
        test_set_id: test_set.to_string(),
        perturbation: "none".into(),
        magnitude: 0.0,
        seed: 0,
        accuracy,
        mean_loss,
        n: ds.len(),
    }];
    if let Some(path) = report {
        append_rows(path, &rows)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Perturbation {
    Gaussian,
    SaltPepper,
    Gamma,
    Contrast,
}

impl Perturbation {
    pub const ALL: [Perturbation; 4] = [
        Perturbation::Gaussian,
        Perturbation::SaltPepper,
        Perturbation::Gamma,
        Perturbation::Contrast,
    ];

    /// Magnitude at which the perturbation leaves images untouched.
    pub fn identity(self) -> f64 {
        match self {
            Perturbation::Gaussian | Perturbation::SaltPepper => 0.0,
            Perturbation::Gamma | Perturbation::Contrast => 1.0,
        }
    }

    pub fn default_magnitudes(self) -> Vec<f64> {
        match self {
            Perturbation::Gaussian | Perturbation::SaltPepper => vec![0.0, 0.05, 0.1, 0.15, 0.2],
            Perturbation::Gamma => vec![1.0, 2.0, 3.0, 4.0, 1.0 / 2.0, 1.0 / 3.0, 1.0 / 4.0],
            Perturbation::Contrast => vec![1.0, 0.8, 0.6, 0.4, 1.2, 1.4, 1.6],
        }
    }

    pub fn apply(self, image: &ImageTensor, magnitude: f64, seed: u64) -> Result<ImageTensor> {
        match self {
            Perturbation::Gaussian => perturb_gaussian(image, magnitude, seed),
            Perturbation::SaltPepper => perturb_salt_pepper(image, magnitude, seed),
            Perturbation::Gamma => gamma_correct(image, magnitude),
            Perturbation::Contrast => adjust_contrast(image, magnitude),
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Perturbation::Gaussian | Perturbation::SaltPepper)
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Perturbation::Gaussian => "gaussian",
            Perturbation::SaltPepper => "salt-pepper",
            Perturbation::Gamma => "gamma",
            Perturbation::Contrast => "contrast",
        })
    }
}

impl FromStr for Perturbation {
    type Err = OocsError;

    fn from_str(s: &str) -> Result<Self> {
        Perturbation::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| {
                OocsError::Domain(format!(
                    "unknown perturbation `{s}` (expected gaussian, salt-pepper, gamma or contrast)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessGrid {
    pub cells: Vec<(Perturbation, Vec<f64>)>,
    pub seeds: Vec<u64>,
}

impl RobustnessGrid {
    /// Every perturbation with its default magnitudes, including the
    /// identity magnitude.
    pub fn standard(seeds: Vec<u64>) -> Self {
        Self::for_kinds(&Perturbation::ALL, seeds)
    }

    pub fn for_kinds(kinds: &[Perturbation], seeds: Vec<u64>) -> Self {
        Self {
            cells: kinds.iter().map(|&k| (k, k.default_magnitudes())).collect(),
            seeds,
        }
    }

    pub fn row_count(&self) -> usize {
        self.cells.iter().map(|(_, m)| m.len()).sum::<usize>() * self.seeds.len()
    }
}

/// Accuracy under every (perturbation, magnitude, seed) cell. Rows come back
/// sorted by kind, magnitude and seed and, when `out` is given, replace its
/// contents.
pub fn cmd_robustness(
    model: &Model,
    grid: &RobustnessGrid,
    test_set: TestSet,
    test: &Dataset,
    out: Option<&Path>,
) -> Result<Vec<EvalRow>> {
    if grid.seeds.is_empty() {
        return Err(OocsError::Domain("robustness grid needs at least one seed".into()));
    }
    let ds = test_set.prepare(test);
    let clean = ds.images.iter().collect::<Vec<_>>();
    let mut rows = Vec::with_capacity(grid.row_count());
    for (kind, magnitudes) in &grid.cells {
        for &mag in magnitudes {
            for &seed in &grid.seeds {
                let (accuracy, mean_loss) = if mag == kind.identity() {
                    evaluate_images(&model.graph, &model.params, &clean, &ds.labels)?
                } else {
                    let perturbed = ds
                        .images
                        .iter()
                        .enumerate()
                        .map(|(i, im)| kind.apply(im, mag, mix_seed(seed, i as u64)))
                        .collect::<Result<Vec<_>>>()?;
                    evaluate_images(&model.graph, &model.params, &perturbed.iter().collect::<Vec<_>>(), &ds.labels)?
                };
                rows.push(EvalRow {
                    model_id: model.id.clone(),
                    test_set_id: test_set.to_string(),
                    perturbation: kind.to_string(),
                    magnitude: mag,
                    seed,
                    accuracy,
                    mean_loss,
                    n: ds.len(),
                });
            }
        }
    }
    sort_rows(&mut rows);
    if let Some(path) = out {
        write_rows(path, &rows)?;
    }
    Ok(rows)
}

/// Canonical order: model, test set, perturbation, magnitude, seed.
pub fn sort_rows(rows: &mut [EvalRow]) {
    rows.sort_by(|a, b| {
        (&a.model_id, &a.test_set_id, &a.perturbation)
            .cmp(&(&b.model_id, &b.test_set_id, &b.perturbation))
            .then(a.magnitude.total_cmp(&b.magnitude))
            .then(a.seed.cmp(&b.seed))
    });
}
