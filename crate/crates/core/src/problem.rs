//! Constrained LQG problem instances: construction, file I/O, validation.
//!
//! A problem is the LTI system `x(k+1) = A x(k) + B u(k) + w(k)` with
//! `x(0) ~ N(z, V)` and `w(k) ~ N(0, W)`, a quadratic objective with
//! per-step weights `(Q_k, R_k)` and terminal weight `Qf`, and a single
//! quadratic constraint with weights `(Q̃_k, R̃_k, Q̃f)` bounded by `gamma`.
//!
//! The file format is a JSON object:
//!
//! ```json
//! { "n": 1, "m": 1, "N": 2, "gamma": 0.5,
//!   "A": [[1.0]], "B": [[1.0]],
//!   "Q": [[1.0]], "R": [[1.0]], "Qf": [[1.0]],
//!   "Qt": [[0.0]], "Rt": [[1.0]], "Qft": [[0.0]],
//!   "z": [1.0], "V": [[0.0]], "W": [[0.0]] }
//! ```
//!
//! `Q`, `R`, `Qt` and `Rt` are either one matrix, broadcast to every step,
//! or an array of `N` matrices.

use nalgebra::{DMatrix, DVector};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::linalg::{self, SYM_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct LqgProblem {
    pub n: usize,
    pub m: usize,
    /// Number of control steps `N`.
    pub horizon: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub qf: DMatrix<f64>,
    pub q_tilde: Vec<DMatrix<f64>>,
    pub r_tilde: Vec<DMatrix<f64>>,
    pub qf_tilde: DMatrix<f64>,
    pub gamma: f64,
    /// Mean of `x(0)`.
    pub x0_mean: DVector<f64>,
    /// Covariance of `x(0)`.
    pub x0_cov: DMatrix<f64>,
    /// Per-step process noise covariance.
    pub noise_cov: DMatrix<f64>,
}

/// Time-invariant weight set used by [`LqgProblem::with_constant_weights`].
#[derive(Debug, Clone)]
pub struct Weights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub q_tilde: DMatrix<f64>,
    pub r_tilde: DMatrix<f64>,
    pub qf_tilde: DMatrix<f64>,
}

impl LqgProblem {
    /// Builds a problem whose per-step weights are all equal. Shapes are
    /// taken from `a` and `b` and are not checked here; see [`validate`].
    #[allow(clippy::too_many_arguments)]
    pub fn with_constant_weights(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        weights: Weights,
        gamma: f64,
        x0_mean: DVector<f64>,
        x0_cov: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
        horizon: usize,
    ) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        LqgProblem {
            n,
            m,
            horizon,
            a,
            b,
            q: vec![weights.q; horizon],
            r: vec![weights.r; horizon],
            qf: weights.qf,
            q_tilde: vec![weights.q_tilde; horizon],
            r_tilde: vec![weights.r_tilde; horizon],
            qf_tilde: weights.qf_tilde,
            gamma,
            x0_mean,
            x0_cov,
            noise_cov,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// `V + z zᵀ`, the second moment of `x(0)`.
    pub fn initial_moment(&self) -> DMatrix<f64> {
        &self.x0_cov + &self.x0_mean * self.x0_mean.transpose()
    }

    /// `[A B]`.
    pub fn ab(&self) -> DMatrix<f64> {
        let mut ab = DMatrix::zeros(self.n, self.n + self.m);
        ab.view_mut((0, 0), (self.n, self.n)).copy_from(&self.a);
        ab.view_mut((0, self.n), (self.n, self.m))
            .copy_from(&self.b);
        ab
    }

    /// True when the constraint weights are all exactly zero.
    pub fn constraint_is_vacuous(&self) -> bool {
        let zero = |m: &DMatrix<f64>| m.iter().all(|v| *v == 0.0);
        zero(&self.qf_tilde) && self.q_tilde.iter().all(zero) && self.r_tilde.iter().all(zero)
    }

    pub fn from_json(source: &str) -> Result<Self> {
        load_problem(source)
    }

    pub fn to_json(&self) -> String {
        serialize_problem(self)
    }
}

/// Parses a problem file. Constant weights are broadcast to length-`N`
/// sequences. Symmetric fields whose asymmetry is at round-off level
/// (within `SYM_TOL` of the max-norm) are symmetrized; larger asymmetry is
/// kept so that [`validate`] can report it.
pub fn load_problem(source: &str) -> Result<LqgProblem> {
    let value: Value = serde_json::from_str(source).map_err(|e| Error::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse("top level must be a JSON object".into()))?;

    let n = positive_int(obj, "n")?;
    let m = positive_int(obj, "m")?;
    let horizon = positive_int(obj, "N")?;
    let gamma = number(require(obj, "gamma")?, "gamma")?;

    let a = matrix_field(obj, "A", n, n)?;
    let b = matrix_field(obj, "B", n, m)?;
    let qf = sym_field(obj, "Qf", n)?;
    let qf_tilde = sym_field(obj, "Qft", n)?;
    let q = weight_sequence(obj, "Q", n, horizon)?;
    let r = weight_sequence(obj, "R", m, horizon)?;
    let q_tilde = weight_sequence(obj, "Qt", n, horizon)?;
    let r_tilde = weight_sequence(obj, "Rt", m, horizon)?;
    let x0_mean = vector_field(obj, "z", n)?;
    let x0_cov = sym_field(obj, "V", n)?;
    let noise_cov = sym_field(obj, "W", n)?;

    Ok(LqgProblem {
        n,
        m,
        horizon,
        a,
        b,
        q,
        r,
        qf,
        q_tilde,
        r_tilde,
        qf_tilde,
        gamma,
        x0_mean,
        x0_cov,
        noise_cov,
    })
}

/// Writes the problem in the file format read by [`load_problem`]. Weight
/// sequences whose entries are all bitwise equal are written once.
pub fn serialize_problem(p: &LqgProblem) -> String {
    let mut obj = Map::new();
    obj.insert("n".into(), Value::from(p.n));
    obj.insert("m".into(), Value::from(p.m));
    obj.insert("N".into(), Value::from(p.horizon));
    obj.insert("gamma".into(), Value::from(p.gamma));
    obj.insert("A".into(), matrix_value(&p.a));
    obj.insert("B".into(), matrix_value(&p.b));
    obj.insert("Q".into(), sequence_value(&p.q));
    obj.insert("R".into(), sequence_value(&p.r));
    obj.insert("Qf".into(), matrix_value(&p.qf));
    obj.insert("Qt".into(), sequence_value(&p.q_tilde));
    obj.insert("Rt".into(), sequence_value(&p.r_tilde));
    obj.insert("Qft".into(), matrix_value(&p.qf_tilde));
    obj.insert(
        "z".into(),
        Value::Array(p.x0_mean.iter().map(|v| Value::from(*v)).collect()),
    );
    obj.insert("V".into(), matrix_value(&p.x0_cov));
    obj.insert("W".into(), matrix_value(&p.noise_cov));
    serde_json::to_string_pretty(&Value::Object(obj)).expect("problem serializes")
}

fn matrix_value(m: &DMatrix<f64>) -> Value {
    Value::Array(
        m.row_iter()
            .map(|row| Value::Array(row.iter().map(|v| Value::from(*v)).collect()))
            .collect(),
    )
}

fn sequence_value(seq: &[DMatrix<f64>]) -> Value {
    let constant = seq.windows(2).all(|w| {
        w[0].iter()
            .zip(w[1].iter())
            .all(|(x, y)| x.to_bits() == y.to_bits())
    });
    match seq.first() {
        Some(first) if constant => matrix_value(first),
        _ => Value::Array(seq.iter().map(matrix_value).collect()),
    }
}

fn require<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a Value> {
    obj.get(field)
        .ok_or_else(|| Error::MissingField(field.to_string()))
}

fn number(v: &Value, field: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::Parse(format!("`{field}` must be a number")))
}

fn positive_int(obj: &Map<String, Value>, field: &str) -> Result<usize> {
    match require(obj, field)?.as_u64() {
        Some(v) if v > 0 => Ok(v as usize),
        _ => Err(Error::Parse(format!(
            "`{field}` must be a positive integer"
        ))),
    }
}

fn parse_matrix(v: &Value, field: &str) -> Result<DMatrix<f64>> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::Parse(format!("`{field}` must be a nested array")))?;
    let mut data = Vec::new();
    let mut ncols = None;
    for row in rows {
        let row = row
            .as_array()
            .ok_or_else(|| Error::Parse(format!("`{field}` must be a nested array")))?;
        match ncols {
            None => ncols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Parse(format!("`{field}` has ragged rows")));
            }
            _ => {}
        }
        for x in row {
            data.push(number(x, field)?);
        }
    }
    Ok(DMatrix::from_row_slice(
        rows.len(),
        ncols.unwrap_or(0),
        &data,
    ))
}

fn check_shape(m: &DMatrix<f64>, field: &str, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch {
            field: field.to_string(),
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

fn matrix_field(
    obj: &Map<String, Value>,
    field: &str,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    let m = parse_matrix(require(obj, field)?, field)?;
    check_shape(&m, field, rows, cols)?;
    Ok(m)
}

fn clean_symmetric(mut m: DMatrix<f64>) -> DMatrix<f64> {
    if linalg::asymmetry(&m) <= SYM_TOL * linalg::max_norm(&m) {
        linalg::symmetrize_in_place(&mut m);
    }
    m
}

fn sym_field(obj: &Map<String, Value>, field: &str, dim: usize) -> Result<DMatrix<f64>> {
    matrix_field(obj, field, dim, dim).map(clean_symmetric)
}

fn vector_field(obj: &Map<String, Value>, field: &str, dim: usize) -> Result<DVector<f64>> {
    let arr = require(obj, field)?
        .as_array()
        .ok_or_else(|| Error::Parse(format!("`{field}` must be an array")))?;
    let data = arr
        .iter()
        .map(|x| number(x, field))
        .collect::<Result<Vec<_>>>()?;
    if data.len() != dim {
        return Err(Error::DimensionMismatch {
            field: field.to_string(),
            expected: format!("{dim}"),
            found: format!("{}", data.len()),
        });
    }
    Ok(DVector::from_vec(data))
}

/// A weight given as one matrix (depth-2 nesting) or as `N` matrices
/// (depth-3 nesting).
fn weight_sequence(
    obj: &Map<String, Value>,
    field: &str,
    dim: usize,
    horizon: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let v = require(obj, field)?;
    let is_sequence = v
        .as_array()
        .and_then(|outer| outer.first())
        .and_then(|row| row.as_array())
        .and_then(|row| row.first())
        .map(Value::is_array)
        .unwrap_or(false);
    if !is_sequence {
        let m = clean_symmetric(parse_matrix(v, field)?);
        check_shape(&m, field, dim, dim)?;
        return Ok(vec![m; horizon]);
    }
    let items = v.as_array().expect("checked above");
    if items.len() != horizon {
        return Err(Error::DimensionMismatch {
            field: field.to_string(),
            expected: format!("{horizon} matrices"),
            found: format!("{} matrices", items.len()),
        });
    }
    items
        .iter()
        .enumerate()
        .map(|(k, item)| {
            let name = format!("{field}[{k}]");
            let m = clean_symmetric(parse_matrix(item, &name)?);
            check_shape(&m, &name, dim, dim)?;
            Ok(m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Violation {
    pub field: String,
    pub check: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    fn violate(&mut self, field: impl Into<String>, check: &str, value: f64) {
        self.violations.push(Violation {
            field: field.into(),
            check: check.to_string(),
            value,
        });
    }

    pub fn has_violation(&self, field: &str, check: &str) -> bool {
        self.violations
            .iter()
            .any(|v| v.field == field && v.check == check)
    }

    pub fn into_result(self) -> Result<Self> {
        if self.ok {
            Ok(self)
        } else {
            let msg = self
                .violations
                .iter()
                .map(|v| format!("{} fails {} ({:e})", v.field, v.check, v.value))
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::Invalid(msg))
        }
    }
}

/// Checks dimensions, finiteness, symmetry and PSD-ness of every field.
/// Singular `V` or `W` is a warning, not a violation.
///
/// Positive definiteness of `R_k + λ R̃_k + Bᵀ X_{k+1} B` depends on the
/// Riccati iterates and is checked during the backward pass instead.
pub fn validate(p: &LqgProblem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (n, m) = (p.n, p.m);

    for (name, value) in [("n", n), ("m", m), ("N", p.horizon)] {
        if value == 0 {
            report.violate(name, "positive", 0.0);
        }
    }
    if !p.gamma.is_finite() {
        report.violate("gamma", "finite", p.gamma);
    }

    let shape =
        |report: &mut ValidationReport, field: &str, mat: &DMatrix<f64>, r: usize, c: usize| {
            if mat.shape() != (r, c) {
                // measured value: the first offending extent
                let found = if mat.nrows() != r {
                    mat.nrows()
                } else {
                    mat.ncols()
                };
                report.violate(field, "dimension", found as f64);
                false
            } else if mat.iter().any(|v| !v.is_finite()) {
                report.violate(field, "finite", f64::NAN);
                false
            } else {
                true
            }
        };

    shape(&mut report, "A", &p.a, n, n);
    shape(&mut report, "B", &p.b, n, m);
    if p.x0_mean.len() != n {
        report.violate("z", "dimension", p.x0_mean.len() as f64);
    } else if p.x0_mean.iter().any(|v| !v.is_finite()) {
        report.violate("z", "finite", f64::NAN);
    }

    let mut symmetric: Vec<(String, &DMatrix<f64>, usize)> = vec![
        ("Qf".into(), &p.qf, n),
        ("Qft".into(), &p.qf_tilde, n),
        ("V".into(), &p.x0_cov, n),
        ("W".into(), &p.noise_cov, n),
    ];
    for (label, seq, dim) in [
        ("Q", &p.q, n),
        ("R", &p.r, m),
        ("Qt", &p.q_tilde, n),
        ("Rt", &p.r_tilde, m),
    ] {
        if seq.len() != p.horizon {
            report.violate(label, "length", seq.len() as f64);
        }
        symmetric.extend(
            seq.iter()
                .enumerate()
                .map(|(k, mat)| (format!("{label}[{k}]"), mat, dim)),
        );
    }

    for (field, mat, dim) in symmetric {
        if !shape(&mut report, &field, mat, dim, dim) {
            continue;
        }
        let scale = linalg::max_norm(mat);
        let asym = linalg::asymmetry(mat);
        if asym > SYM_TOL * scale {
            report.violate(field.clone(), "symmetry", asym);
        }
        let lo = linalg::min_eigenvalue(mat);
        if lo < -SYM_TOL * scale {
            report.violate(field.clone(), "psd", lo);
        }
    }

    if report.violations.is_empty() {
        for (label, mat) in [("V", &p.x0_cov), ("W", &p.noise_cov)] {
            if linalg::min_eigenvalue(mat) <= SYM_TOL * linalg::max_norm(mat) {
                report.warnings.push(format!(
                    "{label} singular: deterministic-case relaxation active"
                ));
            }
        }
        if let Some(k) =
            (0..p.horizon).find(|&k| linalg::min_eigenvalue(&(&p.r[k] + &p.r_tilde[k])) <= 0.0)
        {
            report.warnings.push(format!(
                "R[{k}] + Rt[{k}] is not positive definite; the backward pass may fail for lambda > 0"
            ));
        }
    }

    report.ok = report.violations.is_empty();
    report
}
