//! File formats: JSON state documents, gnuplot-ready CSV tables and flat
//! dotted-key TOML run configurations. Every file is written through a
//! temporary sibling and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::continuation::{BranchOptions, MassCurve};
use crate::error::{Error, Result};
use crate::evolution::Sample;
use crate::groundstate::{LinearSolver, SolverOptions};
use crate::model::ModelParams;
use crate::spectral::{Field, FieldKind, Grid, Values};

pub const STATE_FORMAT_VERSION: u64 = 1;

pub const BRANCH_CSV_HEADER: [&str; 10] = [
    "lambda",
    "mass",
    "action",
    "kinetic",
    "potential",
    "power_q",
    "pohozaev_rel",
    "slope",
    "stability",
    "min_abs_eig",
];

pub const TRAJECTORY_CSV_HEADER: [&str; 4] = ["t", "mass", "hamiltonian", "deviation"];

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub format_version: u64,
    #[serde(rename = "N")]
    pub dim: usize,
    pub s: f64,
    pub q: f64,
    pub lambda: f64,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "M")]
    pub points: usize,
    pub kind: FieldKind,
    /// Row-major; complex entries interleaved as `re, im`.
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Value>,
}

impl StateFile {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn encode_state(f: &Field, params: &ModelParams, metadata: Option<Value>) -> Result<StateFile> {
    let grid = f.grid();
    if params.dim != grid.dim() {
        return Err(Error::InvalidParameter("parameter and grid dimensions differ".into()));
    }
    let values: Vec<f64> = match f.values() {
        Values::Real(v) => v.clone(),
        Values::Complex(v) => v.iter().flat_map(|z| [z.re, z.im]).collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(StateFile {
        format_version: STATE_FORMAT_VERSION,
        dim: params.dim,
        s: params.s,
        q: params.q,
        lambda: params.lambda,
        half_width: grid.half_width(),
        points: grid.points(),
        kind: f.kind(),
        values,
        metadata,
    })
}

/// Parses and validates a state document. The parameters are returned as
/// stored; regime checks are left to the solver.
pub fn decode_state(doc: &str) -> Result<(Field, ModelParams, Option<Value>)> {
    let raw: Value = serde_json::from_str(doc)?;
    let version = raw
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::InvalidParameter("state file lacks format_version".into()))?;
    if version != STATE_FORMAT_VERSION {
        return Err(Error::VersionMismatch(version));
    }
    if let Some(vals) = raw.get("values").and_then(Value::as_array) {
        if let Some(i) = vals.iter().position(|v| !v.as_f64().is_some_and(f64::is_finite)) {
            return Err(Error::NonFinite(i));
        }
    }
    let file: StateFile = serde_json::from_value(raw)?;
    let grid = Grid::new(file.dim, file.half_width, file.points)?;
    let expected = match file.kind {
        FieldKind::Real => grid.len(),
        FieldKind::Complex => 2 * grid.len(),
    };
    if file.values.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: file.values.len(),
        });
    }
    let params = ModelParams {
        dim: file.dim,
        s: file.s,
        q: file.q,
        lambda: file.lambda,
    };
    let field = match file.kind {
        FieldKind::Real => Field::real(grid, file.values)?,
        FieldKind::Complex => Field::complex(
            grid,
            file.values
                .chunks_exact(2)
                .map(|c| Complex64::new(c[0], c[1]))
                .collect(),
        )?,
    };
    Ok((field, params, file.metadata))
}

pub fn write_state(path: &Path, f: &Field, params: &ModelParams, metadata: Option<Value>) -> Result<()> {
    write_atomic(path, encode_state(f, params, metadata)?.to_json()?.as_bytes())
}

pub fn read_state(path: &Path) -> Result<(Field, ModelParams, Option<Value>)> {
    decode_state(&std::fs::read_to_string(path)?)
}

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn branch_csv(curve: &MassCurve) -> Result<Vec<u8>> {
    if curve.points.is_empty() {
        return Err(Error::InvalidParameter("cannot write an empty branch".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BRANCH_CSV_HEADER)?;
    for p in &curve.points {
        w.write_record([
            sci(p.lambda),
            sci(p.mass),
            sci(p.action),
            sci(p.kinetic),
            sci(p.potential),
            sci(p.power),
            sci(p.pohozaev_rel),
            sci(p.slope),
            p.stability.as_str().to_string(),
            sci(p.min_abs_eig),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn emit_branch_csv(curve: &MassCurve, path: &Path) -> Result<()> {
    write_atomic(path, &branch_csv(curve)?)
}

pub fn trajectory_csv(samples: &[Sample]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_CSV_HEADER)?;
    for s in samples {
        w.write_record([sci(s.t), sci(s.mass), sci(s.hamiltonian), sci(s.deviation)])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    #[serde(rename = "N")]
    pub dim: usize,
    pub s: f64,
    pub q: f64,
    pub lambda: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            dim: 1,
            s: 0.5,
            q: 6.0,
            lambda: -2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "M")]
    pub points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            half_width: 12.0,
            points: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_newton: usize,
    pub quotient_max_iter: usize,
    pub quotient_rel_decrease: f64,
    pub linear_solver: LinearSolver,
    pub spectrum: bool,
    pub max_restarts: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            tol: o.tol,
            max_newton: o.max_newton,
            quotient_max_iter: o.quotient_max_iter,
            quotient_rel_decrease: o.quotient_rel_decrease,
            linear_solver: o.linear_solver,
            spectrum: o.spectrum,
            max_restarts: o.max_restarts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BranchSection {
    pub lambda_min: f64,
    pub points: usize,
    pub delta0: f64,
    pub near_fraction: f64,
    pub slope_tol_rel: f64,
    /// Bracket width at which the fold search stops.
    pub fold_tol: f64,
}

impl Default for BranchSection {
    fn default() -> Self {
        let b = BranchOptions::default();
        Self {
            lambda_min: b.lambda_min,
            points: b.points,
            delta0: b.delta0,
            near_fraction: b.near_fraction,
            slope_tol_rel: b.slope_tol_rel,
            fold_tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub starts: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self { starts: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomotopySection {
    pub s_target: f64,
    pub steps: usize,
}

impl Default for HomotopySection {
    fn default() -> Self {
        Self {
            s_target: 0.5,
            steps: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSection {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    /// Perturbation size; 0 evolves the ground state itself.
    pub eps: f64,
    pub sample_every: usize,
    pub nonlinear: bool,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 20.0,
            eps: 1e-3,
            sample_every: 10,
            nonlinear: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Everything a CLI run depends on. Seeds must fit in 63 bits (TOML
/// integers are signed).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub branch: BranchSection,
    pub probe: ProbeSection,
    pub homotopy: HomotopySection,
    pub evolve: EvolveSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn params(&self) -> Result<ModelParams> {
        let m = &self.model;
        ModelParams::new(m.dim, m.s, m.q, m.lambda)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.model.dim, self.grid.half_width, self.grid.points)
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        SolverOptions {
            tol: s.tol,
            max_newton: s.max_newton,
            quotient_max_iter: s.quotient_max_iter,
            quotient_rel_decrease: s.quotient_rel_decrease,
            linear_solver: s.linear_solver,
            spectrum: s.spectrum,
            max_restarts: s.max_restarts,
        }
    }

    pub fn branch_options(&self) -> BranchOptions {
        let b = &self.branch;
        BranchOptions {
            lambda_min: b.lambda_min,
            points: b.points,
            delta0: b.delta0,
            near_fraction: b.near_fraction,
            slope_tol_rel: b.slope_tol_rel,
            solver: self.solver_options(),
        }
    }

    /// Accepts dotted keys and `[section]` tables alike.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// One `section.key = value` line per field, top-level keys first.
    pub fn to_toml(&self) -> Result<String> {
        let value = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        let mut out = lines.join("\n");
        out.push('\n');
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_toml()?.as_bytes())
    }

    pub fn to_json_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
    let (leaves, tables): (Vec<_>, Vec<_>) = table.iter().partition(|(_, v)| !v.is_table());
    for (k, v) in leaves {
        out.push(format!("{prefix}{k} = {v}"));
    }
    for (k, v) in tables {
        if let toml::Value::Table(t) = v {
            flatten(&format!("{prefix}{k}."), t, out);
        }
    }
}
