//! File formats: JSON artifacts with full-precision floats, CSV distance
//! matrices and grids.
//!
//! Every float leaves the process with 17 significant digits (`{:.16e}`), so
//! a written value reparses to the identical bit pattern and artifacts are
//! byte-stable across runs. Readers attach the file path (and line number for
//! CSV) to every error.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::distances::{DistanceFamily, DistanceMatrix, DistanceSpec};
use crate::distributions::{Gaussian, InputDistribution};
use crate::error::{Error, Result};
use crate::experiments::{ErrorGrid, TargetFunction, TrainingSet};
use crate::gp::{PredictionResult, TrainedGP};
use crate::kernels::KernelSpec;

/// Pretty JSON whose floats always carry 17 significant digits.
///
/// serde_json's shortest-roundtrip output is lossless but variable-width;
/// fixed-width scientific form keeps the files uniform and still reparses
/// bitwise.
struct PrecisionFormatter<'a> {
    pretty: PrettyFormatter<'a>,
}

impl PrecisionFormatter<'_> {
    fn new() -> Self {
        PrecisionFormatter {
            pretty: PrettyFormatter::new(),
        }
    }
}

impl Formatter for PrecisionFormatter<'_> {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_array(w)
    }

    fn end_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_array(w)
    }

    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.pretty.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_array_value(w)
    }

    fn begin_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_object(w)
    }

    fn end_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_object(w)
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_object_value(w)
    }
}

/// Serializes to pretty JSON with full-precision floats and a trailing
/// newline.
pub fn json_to_vec<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, PrecisionFormatter::new());
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = json_to_vec(value)?;
    std::fs::write(path, bytes).map_err(|e| write_context(e, path))
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| read_context(e, path))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_context(e: std::io::Error, path: &Path) -> Error {
    Error::from(e).with_context(&format!("writing {}", path.display()))
}

fn read_context(e: std::io::Error, path: &Path) -> Error {
    Error::from(e).with_context(&format!("reading {}", path.display()))
}

/// On-disk form of a generated benchmark dataset: the Gaussians, their
/// deterministic Dirac samples, and the noise-free (or noisy, if configured)
/// targets, plus enough metadata to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub seed: u64,
    pub target: TargetFunction,
    pub gaussians: Vec<InputDistribution>,
    pub dirac_inputs: Vec<InputDistribution>,
    pub targets: Vec<f64>,
}

impl DatasetFile {
    pub fn new(seed: u64, target: TargetFunction, set: &TrainingSet) -> DatasetFile {
        DatasetFile {
            seed,
            target,
            gaussians: set.gaussians.iter().cloned().map(InputDistribution::from).collect(),
            dirac_inputs: set.dirac_inputs.clone(),
            targets: set.targets.iter().cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Checks the parallel lists line up and each list holds the class its
    /// name promises.
    pub fn validate(&self) -> Result<()> {
        let n = self.targets.len();
        if n == 0 {
            return Err(Error::Size("dataset is empty".into()));
        }
        if self.gaussians.len() != n || self.dirac_inputs.len() != n {
            return Err(Error::Size(format!(
                "dataset lists disagree: {} gaussians, {} dirac inputs, {} targets",
                self.gaussians.len(),
                self.dirac_inputs.len(),
                n
            )));
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.as_gaussian().is_none() {
                return Err(Error::Format(format!(
                    "gaussians[{i}] is a {} distribution",
                    g.class()
                )));
            }
        }
        for (i, d) in self.dirac_inputs.iter().enumerate() {
            if d.as_dirac().is_none() {
                return Err(Error::Format(format!(
                    "dirac_inputs[{i}] is a {} distribution",
                    d.class()
                )));
            }
        }
        if let Some(bad) = self.targets.iter().find(|t| !t.is_finite()) {
            return Err(Error::Format(format!("target value {bad} is not finite")));
        }
        Ok(())
    }

    pub fn training_set(&self) -> Result<TrainingSet> {
        self.validate()?;
        let gaussians: Vec<Gaussian> = self
            .gaussians
            .iter()
            .map(|g| g.as_gaussian().cloned().expect("validated above"))
            .collect();
        Ok(TrainingSet {
            gaussians,
            dirac_inputs: self.dirac_inputs.clone(),
            targets: DVector::from_vec(self.targets.clone()),
        })
    }
}

/// On-disk form of a fitted model. The Cholesky factor is stored as its
/// lower-triangular rows (row i holds i + 1 entries), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub kernel: KernelSpec,
    pub noise_var: f64,
    pub jitter_used: f64,
    pub log_marginal: f64,
    pub distance: DistanceSpec,
    pub train_inputs: Vec<InputDistribution>,
    pub train_targets: Vec<f64>,
    pub weights: Vec<f64>,
    pub chol: Vec<Vec<f64>>,
    /// Constant added back to every predictive mean (from target centering
    /// during training). Zero when absent.
    #[serde(default)]
    pub target_offset: f64,
}

impl ModelFile {
    pub fn from_gp(gp: &TrainedGP, target_offset: f64) -> ModelFile {
        let chol = gp.chol();
        let rows = (0..chol.nrows())
            .map(|i| (0..=i).map(|j| chol[(i, j)]).collect())
            .collect();
        ModelFile {
            kernel: gp.kernel().clone(),
            noise_var: gp.noise_var(),
            jitter_used: gp.jitter_used(),
            log_marginal: gp.log_marginal(),
            distance: gp.distance_spec().clone(),
            train_inputs: gp.train_inputs().to_vec(),
            train_targets: gp.train_targets().iter().cloned().collect(),
            weights: gp.weights().iter().cloned().collect(),
            chol: rows,
            target_offset,
        }
    }

    /// Rebuilds the fitted model, returning it with the stored target offset.
    ///
    /// The stored log marginal likelihood must agree with the one recomputed
    /// from the factor and weights; disagreement means the file was edited or
    /// assembled from mismatched pieces.
    pub fn into_gp(self) -> Result<(TrainedGP, f64)> {
        let n = self.chol.len();
        let mut chol = DMatrix::zeros(n, n);
        for (i, row) in self.chol.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::Format(format!(
                    "chol row {i} has {} entries, expected {}",
                    row.len(),
                    i + 1
                )));
            }
            for (j, v) in row.iter().enumerate() {
                chol[(i, j)] = *v;
            }
        }
        if !self.target_offset.is_finite() {
            return Err(Error::Format(format!(
                "target offset {} is not finite",
                self.target_offset
            )));
        }
        let gp = TrainedGP::from_parts(
            self.kernel,
            self.noise_var,
            self.jitter_used,
            chol,
            DVector::from_vec(self.weights),
            self.train_inputs,
            DVector::from_vec(self.train_targets),
            self.distance,
        )?;
        let recomputed = gp.log_marginal();
        let tol = 1e-9 * recomputed.abs().max(1.0);
        if !self.log_marginal.is_finite() || (self.log_marginal - recomputed).abs() > tol {
            return Err(Error::Inconsistent(format!(
                "stored log marginal likelihood {} does not match the value {recomputed} \
                 recomputed from the stored factor",
                self.log_marginal
            )));
        }
        Ok((gp, self.target_offset))
    }
}

pub fn save_model(path: &Path, gp: &TrainedGP, target_offset: f64) -> Result<()> {
    write_json_file(path, &ModelFile::from_gp(gp, target_offset))
}

pub fn load_model(path: &Path) -> Result<(TrainedGP, f64)> {
    let file: ModelFile = read_json_file(path)?;
    file.into_gp()
        .map_err(|e| e.with_context(&format!("loading {}", path.display())))
}

/// Writes the distance matrix as CSV: a `# family=<tag> b_max=<v> p=<v> n=<N>`
/// header line, then an N x N block of 17-significant-digit values.
pub fn write_distance_csv(path: &Path, dm: &DistanceMatrix) -> Result<()> {
    let spec = dm.spec();
    let n = dm.n();
    let mut text = format!(
        "# family={} b_max={} p={} n={}\n",
        spec.family.tag(),
        spec.b_max,
        spec.p,
        n
    );
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                text.push(',');
            }
            text.push_str(&format!("{:.16e}", dm.get(i, j)));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| write_context(e, path))
}

pub fn read_distance_csv(path: &Path) -> Result<DistanceMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| read_context(e, path))?;
    parse_distance_csv(&text).map_err(|e| e.with_context(&format!("reading {}", path.display())))
}

fn parse_distance_csv(text: &str) -> Result<DistanceMatrix> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("file is empty".into()))?;
    let body = header
        .strip_prefix("# ")
        .ok_or_else(|| Error::Format("first line must be a '# family=...' header".into()))?;
    let mut family = None;
    let mut b_max = None;
    let mut p = None;
    let mut n = None;
    for token in body.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed header token '{token}'")))?;
        match key {
            "family" => family = Some(DistanceFamily::from_tag(value)?),
            "b_max" => b_max = Some(parse_float(value, "header b_max")?),
            "p" => p = Some(parse_float(value, "header p")?),
            "n" => {
                n = Some(value.parse::<usize>().map_err(|_| {
                    Error::Format(format!("header n '{value}' is not a count"))
                })?)
            }
            other => return Err(Error::Format(format!("unknown header key '{other}'"))),
        }
    }
    let (family, b_max, p, n) = match (family, b_max, p, n) {
        (Some(f), Some(b), Some(p), Some(n)) => (f, b, p, n),
        _ => {
            return Err(Error::Format(
                "header must carry family, b_max, p and n".into(),
            ))
        }
    };
    let mut values = DMatrix::zeros(n, n);
    let mut rows = 0usize;
    for (i, line) in lines.enumerate() {
        if i >= n {
            return Err(Error::Format(format!("more than {n} data rows")));
        }
        let mut cols = 0usize;
        for (j, cell) in line.split(',').enumerate() {
            if j >= n {
                return Err(Error::Format(format!("row {i} has more than {n} columns")));
            }
            values[(i, j)] = parse_float(cell.trim(), &format!("row {i} column {j}"))?;
            cols += 1;
        }
        if cols != n {
            return Err(Error::Format(format!("row {i} has {cols} columns, expected {n}")));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Format(format!("{rows} data rows, expected {n}")));
    }
    let spec = DistanceSpec::new(family).with_b_max(b_max).with_p(p);
    DistanceMatrix::from_parts(spec, values)
}

fn parse_float(text: &str, what: &str) -> Result<f64> {
    text.parse::<f64>()
        .map_err(|_| Error::Format(format!("{what}: '{text}' is not a number")))
}

/// Writes the evaluation grid as CSV, row-major in the grid's node order.
pub fn write_grid_csv(path: &Path, grid: &ErrorGrid) -> Result<()> {
    let mut text = String::from("mu,var,prediction,pred_var,truth,sq_error\n");
    for node in grid.nodes() {
        text.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            node.mu, node.var, node.prediction, node.pred_var, node.truth, node.sq_error
        ));
    }
    std::fs::write(path, text).map_err(|e| write_context(e, path))
}

/// Writes per-input predictions as CSV. An empty slice produces just the
/// header.
pub fn write_predictions_csv(path: &Path, predictions: &[PredictionResult]) -> Result<()> {
    let mut text = String::from("index,mean,variance\n");
    for (i, p) in predictions.iter().enumerate() {
        text.push_str(&format!("{i},{:.16e},{:.16e}\n", p.mean, p.variance));
    }
    std::fs::write(path, text).map_err(|e| write_context(e, path))
}

/// Reads a JSON list of input distributions (the predict subcommand's test
/// inputs).
pub fn read_inputs_json(path: &Path) -> Result<Vec<InputDistribution>> {
    let inputs: Vec<InputDistribution> = read_json_file(path)?;
    for (i, input) in inputs.iter().enumerate() {
        crate::distributions::validate(input)
            .map_err(|e| e.with_context(&format!("{}: input {i}", path.display())))?;
    }
    Ok(inputs)
}

/// The two input lists a dataset offers for distance computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSelection {
    /// The deterministic Dirac samples (mCvMD and Wasserstein families).
    Dirac,
    /// The original Gaussians (quadrature families and the mean kernel).
    Gaussian,
}

impl InputSelection {
    pub fn tag(&self) -> &'static str {
        match self {
            InputSelection::Dirac => "dirac",
            InputSelection::Gaussian => "gaussian",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "dirac" => Ok(InputSelection::Dirac),
            "gaussian" => Ok(InputSelection::Gaussian),
            other => Err(Error::Parameter(format!(
                "unknown input selection '{other}' (expected dirac or gaussian)"
            ))),
        }
    }

    /// Picks the selected list out of a dataset.
    pub fn pick(&self, dataset: &DatasetFile) -> Vec<InputDistribution> {
        match self {
            InputSelection::Dirac => dataset.dirac_inputs.clone(),
            InputSelection::Gaussian => dataset.gaussians.clone(),
        }
    }
}
