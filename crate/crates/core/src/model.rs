//! Robust problem data model, validation, and the JSON file formats.
//!
//! A [`SipProblem`] carries the dimensions and box bounds of the variable
//! groups together with the six function families:
//!
//! - `f(theta, w, zp)`: objective, maximized by the uncertainty;
//! - `g(theta, w, zp, s)`: robust inequality rows (`<= 0`) that must admit
//!   some `s` in the existence set for every uncertainty;
//! - `d(theta, w, zp, zm) = 0`, `e(theta, w, zp, zm) <= 0`: trajectory
//!   equalities and inequalities defining the feasible state evolution;
//! - `q(s) = 0`, `r(s) <= 0`: the existence set for `s`.
//!
//! Group separation (which family may reference which group) is enforced
//! strictly at validation: the reduction engine's correctness relies on it.

use crate::expr::{Expr, VarGroup};
use crate::scalar::{sc, Scalar};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Dimensions of the variable groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub theta: usize,
    pub w: usize,
    pub zp: usize,
    pub zm: usize,
    pub s: usize,
}

impl Dims {
    pub fn of(&self, group: VarGroup) -> usize {
        match group {
            VarGroup::Theta => self.theta,
            VarGroup::W => self.w,
            VarGroup::Zp => self.zp,
            VarGroup::Zm => self.zm,
            VarGroup::S => self.s,
            VarGroup::Gamma => 1,
            VarGroup::Aux => 0,
        }
    }
}

/// Box bounds. `theta` and `w` must be finite (compactness); the `s` box is
/// mandatory when `dims.s > 0`; `gamma` is a finite bracket on the epigraph
/// variable, `[-1e6, 1e6]` by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Bounds<T: Scalar = f64> {
    pub theta_lo: Vec<T>,
    pub theta_hi: Vec<T>,
    pub w_lo: Vec<T>,
    pub w_hi: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_lo: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_hi: Option<Vec<T>>,
    #[serde(default = "default_gamma_bracket")]
    pub gamma: [T; 2],
}

fn default_gamma_bracket<T: Scalar>() -> [T; 2] {
    [sc(-DEFAULT_GAMMA_BOUND), sc(DEFAULT_GAMMA_BOUND)]
}

/// Default epigraph bracket when a problem file omits it.
pub const DEFAULT_GAMMA_BOUND: f64 = 1e6;

impl<T: Scalar> Bounds<T> {
    pub fn default_gamma() -> [T; 2] {
        [sc(-DEFAULT_GAMMA_BOUND), sc(DEFAULT_GAMMA_BOUND)]
    }
}

/// Full robust problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SipProblem<T: Scalar = f64> {
    pub name: String,
    pub dims: Dims,
    pub bounds: Bounds<T>,
    pub f: Expr<T>,
    pub g: Vec<Expr<T>>,
    pub d: Vec<Expr<T>>,
    pub e: Vec<Expr<T>>,
    pub q: Vec<Expr<T>>,
    pub r: Vec<Expr<T>>,
}

/// Where a scenario came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioOrigin {
    /// The initial scenario the reduction starts from.
    Initial,
    /// Found by the objective adversary.
    FObjective,
    /// Found by the adversary for constraint row `i`.
    GConstraint(usize),
}

/// One uncertainty realization in the finite scenario set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Scenario<T: Scalar = f64> {
    pub id: usize,
    pub w: Vec<T>,
    pub origin: ScenarioOrigin,
    /// Adversary violation at the time the scenario was added.
    pub violation: T,
}

/// Per-scenario feasibility witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Witness<T: Scalar = f64> {
    pub zp: Vec<T>,
    pub zm: Vec<T>,
    pub s: Vec<T>,
}

/// Decisions plus the per-scenario witnesses that demonstrate feasibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SolutionBundle<T: Scalar = f64> {
    pub theta: Vec<T>,
    pub gamma: T,
    /// Aligned with the scenario set, one witness per scenario.
    pub witnesses: Vec<Witness<T>>,
}

/// Machine-readable validation diagnostic codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticCode {
    NoncompactTheta,
    NoncompactW,
    NoncompactS,
    MissingSBox,
    NonfiniteGamma,
    BoundOrder,
    BoundLength,
    BadGroupInF,
    BadGroupInG,
    BadGroupInD,
    BadGroupInE,
    BadGroupInQ,
    BadGroupInR,
    IndexOutOfRange,
    NonConstantExponent,
    NonfiniteConstant,
}

impl std::fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DiagnosticCode::NoncompactTheta => "NONCOMPACT_THETA",
            DiagnosticCode::NoncompactW => "NONCOMPACT_W",
            DiagnosticCode::NoncompactS => "NONCOMPACT_S",
            DiagnosticCode::MissingSBox => "MISSING_S_BOX",
            DiagnosticCode::NonfiniteGamma => "NONFINITE_GAMMA",
            DiagnosticCode::BoundOrder => "BOUND_ORDER",
            DiagnosticCode::BoundLength => "BOUND_LENGTH",
            DiagnosticCode::BadGroupInF => "BAD_GROUP_IN_F",
            DiagnosticCode::BadGroupInG => "BAD_GROUP_IN_G",
            DiagnosticCode::BadGroupInD => "BAD_GROUP_IN_D",
            DiagnosticCode::BadGroupInE => "BAD_GROUP_IN_E",
            DiagnosticCode::BadGroupInQ => "BAD_GROUP_IN_Q",
            DiagnosticCode::BadGroupInR => "BAD_GROUP_IN_R",
            DiagnosticCode::IndexOutOfRange => "INDEX_OUT_OF_RANGE",
            DiagnosticCode::NonConstantExponent => "NON_CONSTANT_EXPONENT",
            DiagnosticCode::NonfiniteConstant => "NONFINITE_CONSTANT",
        };
        f.write_str(s)
    }
}

/// One validation finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

/// Load/save failures for the problem and solution files.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Json(String),
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("bad expression in {key}: {message}")]
    BadExpression { key: String, message: String },
    #[error("invalid problem:\n{}", .0.iter().map(|d| format!("  - {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

impl<T: Scalar> SipProblem<T> {
    /// Groups each family may reference.
    fn allowed(family: Family) -> &'static [VarGroup] {
        use VarGroup::*;
        match family {
            Family::F => &[Theta, W, Zp],
            Family::G => &[Theta, W, Zp, S],
            Family::D | Family::E => &[Theta, W, Zp, Zm],
            Family::Q | Family::R => &[S],
        }
    }

    /// Checks every structural invariant; an empty list means valid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        self.check_box(
            &mut out,
            "theta",
            self.dims.theta,
            Some((&self.bounds.theta_lo, &self.bounds.theta_hi)),
            DiagnosticCode::NoncompactTheta,
            true,
        );
        self.check_box(
            &mut out,
            "w",
            self.dims.w,
            Some((&self.bounds.w_lo, &self.bounds.w_hi)),
            DiagnosticCode::NoncompactW,
            true,
        );
        match (&self.bounds.s_lo, &self.bounds.s_hi) {
            (Some(lo), Some(hi)) => {
                self.check_box(
                    &mut out,
                    "s",
                    self.dims.s,
                    Some((lo, hi)),
                    DiagnosticCode::NoncompactS,
                    true,
                );
            }
            _ if self.dims.s > 0 => out.push(Diagnostic {
                code: DiagnosticCode::MissingSBox,
                message: format!(
                    "problem has {} s variables but no finite s box; compactness of the \
                     existence set must be certified by bounds",
                    self.dims.s
                ),
            }),
            _ => {}
        }
        let [glo, ghi] = self.bounds.gamma;
        if !(glo.is_finite() && ghi.is_finite() && glo <= ghi) {
            out.push(Diagnostic {
                code: DiagnosticCode::NonfiniteGamma,
                message: format!("gamma bracket [{glo}, {ghi}] must be finite and ordered"),
            });
        }

        for (family, exprs) in [
            (Family::F, std::slice::from_ref(&self.f)),
            (Family::G, self.g.as_slice()),
            (Family::D, self.d.as_slice()),
            (Family::E, self.e.as_slice()),
            (Family::Q, self.q.as_slice()),
            (Family::R, self.r.as_slice()),
        ] {
            for (i, expr) in exprs.iter().enumerate() {
                self.check_expr(&mut out, family, i, expr);
            }
        }
        out
    }

    fn check_box(
        &self,
        out: &mut Vec<Diagnostic>,
        name: &str,
        dim: usize,
        bounds: Option<(&Vec<T>, &Vec<T>)>,
        noncompact: DiagnosticCode,
        require_finite: bool,
    ) {
        let Some((lo, hi)) = bounds else { return };
        if lo.len() != dim || hi.len() != dim {
            out.push(Diagnostic {
                code: DiagnosticCode::BoundLength,
                message: format!(
                    "{name} bounds have lengths {}/{} but dimension is {dim}",
                    lo.len(),
                    hi.len()
                ),
            });
            return;
        }
        for i in 0..dim {
            if require_finite && !(lo[i].is_finite() && hi[i].is_finite()) {
                out.push(Diagnostic {
                    code: noncompact,
                    message: format!("{name}[{i}] bound [{}, {}] is not finite", lo[i], hi[i]),
                });
            } else if lo[i] > hi[i] {
                out.push(Diagnostic {
                    code: DiagnosticCode::BoundOrder,
                    message: format!("{name}[{i}] has lower bound {} above upper {}", lo[i], hi[i]),
                });
            }
        }
    }

    fn check_expr(&self, out: &mut Vec<Diagnostic>, family: Family, row: usize, expr: &Expr<T>) {
        let allowed = Self::allowed(family);
        if !expr.pow_exponents_constant() {
            out.push(Diagnostic {
                code: DiagnosticCode::NonConstantExponent,
                message: format!("{}[{row}] contains a non-constant exponent", family.key()),
            });
        }
        if !expr.constants_finite() {
            out.push(Diagnostic {
                code: DiagnosticCode::NonfiniteConstant,
                message: format!("{}[{row}] contains a non-finite constant", family.key()),
            });
        }
        expr.visit_vars(&mut |v| {
            if !allowed.contains(&v.group) {
                out.push(Diagnostic {
                    code: family.bad_group_code(),
                    message: format!(
                        "{}[{row}] references {v}; allowed groups are {}",
                        family.key(),
                        allowed
                            .iter()
                            .map(|g| g.name())
                            .collect::<Vec<_>>()
                            .join(", ")
                    ),
                });
            } else if v.index >= self.dims.of(v.group) {
                out.push(Diagnostic {
                    code: DiagnosticCode::IndexOutOfRange,
                    message: format!(
                        "{}[{row}] references {v} but {} has dimension {}",
                        family.key(),
                        v.group,
                        self.dims.of(v.group)
                    ),
                });
            }
        });
    }

    /// Saves the problem file with canonical key ordering and expression
    /// text; `save` then `load` is the identity.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let file = ProblemFile {
            name: Some(self.name.clone()),
            dims: Some(self.dims),
            bounds: Some(self.bounds.clone()),
            f: Some(self.f.to_text()),
            g: Some(self.g.iter().map(Expr::to_text).collect()),
            d: Some(self.d.iter().map(Expr::to_text).collect()),
            e: Some(self.e.iter().map(Expr::to_text).collect()),
            q: Some(self.q.iter().map(Expr::to_text).collect()),
            r: Some(self.r.iter().map(Expr::to_text).collect()),
        };
        write_json(path, &file)
    }

    /// Loads and validates a problem file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Parses a problem from JSON text, running full validation.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ProblemFile<T> =
            serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        let dims = file.dims.ok_or(ModelError::MissingKey("dims"))?;
        let bounds = file.bounds.ok_or(ModelError::MissingKey("bounds"))?;
        let f_text = file.f.ok_or(ModelError::MissingKey("f"))?;
        let parse_family = |key: &str, texts: Option<Vec<String>>| {
            texts
                .unwrap_or_default()
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    crate::expr::parse(t).map_err(|e| ModelError::BadExpression {
                        key: format!("{key}[{i}]"),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<Expr<T>>, _>>()
        };
        let problem = SipProblem {
            name: file.name.unwrap_or_default(),
            dims,
            bounds,
            f: crate::expr::parse(&f_text).map_err(|e| ModelError::BadExpression {
                key: "f".to_string(),
                message: e.to_string(),
            })?,
            g: parse_family("g", file.g)?,
            d: parse_family("d", file.d)?,
            e: parse_family("e", file.e)?,
            q: parse_family("q", file.q)?,
            r: parse_family("r", file.r)?,
        };
        let diags = problem.validate();
        if !diags.is_empty() {
            return Err(ModelError::Invalid(diags));
        }
        Ok(problem)
    }

    /// Serializes to the canonical JSON text (same bytes as [`Self::save`]).
    pub fn to_json(&self) -> String {
        let file = ProblemFile {
            name: Some(self.name.clone()),
            dims: Some(self.dims),
            bounds: Some(self.bounds.clone()),
            f: Some(self.f.to_text()),
            g: Some(self.g.iter().map(Expr::to_text).collect()),
            d: Some(self.d.iter().map(Expr::to_text).collect()),
            e: Some(self.e.iter().map(Expr::to_text).collect()),
            q: Some(self.q.iter().map(Expr::to_text).collect()),
            r: Some(self.r.iter().map(Expr::to_text).collect()),
        };
        serde_json::to_string_pretty(&file).expect("serializable") + "\n"
    }

    /// Bindings sized to this problem's dimensions, zero-filled.
    pub fn zero_bindings(&self) -> crate::expr::Bindings<T> {
        let mut b = crate::expr::Bindings::new();
        b.theta = vec![T::zero(); self.dims.theta];
        b.w = vec![T::zero(); self.dims.w];
        b.zp = vec![T::zero(); self.dims.zp];
        b.zm = vec![T::zero(); self.dims.zm];
        b.s = vec![T::zero(); self.dims.s];
        b.gamma = vec![T::zero()];
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    F,
    G,
    D,
    E,
    Q,
    R,
}

impl Family {
    fn key(self) -> &'static str {
        match self {
            Family::F => "f",
            Family::G => "g",
            Family::D => "d",
            Family::E => "e",
            Family::Q => "q",
            Family::R => "r",
        }
    }

    fn bad_group_code(self) -> DiagnosticCode {
        match self {
            Family::F => DiagnosticCode::BadGroupInF,
            Family::G => DiagnosticCode::BadGroupInG,
            Family::D => DiagnosticCode::BadGroupInD,
            Family::E => DiagnosticCode::BadGroupInE,
            Family::Q => DiagnosticCode::BadGroupInQ,
            Family::R => DiagnosticCode::BadGroupInR,
        }
    }
}

/// On-disk problem schema. Optional fields give precise missing-key errors
/// and allow omitting empty families.
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "")]
struct ProblemFile<T: Scalar> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    dims: Option<Dims>,
    bounds: Option<Bounds<T>>,
    f: Option<String>,
    #[serde(default)]
    g: Option<Vec<String>>,
    #[serde(default)]
    d: Option<Vec<String>>,
    #[serde(default)]
    e: Option<Vec<String>>,
    #[serde(default)]
    q: Option<Vec<String>>,
    #[serde(default)]
    r: Option<Vec<String>>,
}

/// Reduction outcome, as stored in the solution file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SolutionFile<T: Scalar = f64> {
    pub theta: Vec<T>,
    pub gamma: T,
    pub scenarios: Vec<Scenario<T>>,
    pub witnesses: Vec<Witness<T>>,
    pub status: String,
    pub iterations: usize,
}

impl<T: Scalar> SolutionFile<T> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ModelError::Json(e.to_string()))
    }
}

pub(crate) fn write_json(
    path: impl AsRef<Path>,
    value: &impl Serialize,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn toy_problem() -> SipProblem {
        SipProblem {
            name: "toy".to_string(),
            dims: Dims {
                theta: 1,
                w: 1,
                zp: 1,
                zm: 0,
                s: 0,
            },
            bounds: Bounds {
                theta_lo: vec![-1.0],
                theta_hi: vec![1.0],
                w_lo: vec![-0.5],
                w_hi: vec![0.5],
                s_lo: None,
                s_hi: None,
                gamma: Bounds::default_gamma(),
            },
            f: parse("theta[0]^2 + w[0]*zp[0]").unwrap(),
            g: vec![parse("zp[0] - 2").unwrap()],
            d: vec![parse("zp[0] - theta[0] - w[0]").unwrap()],
            e: vec![],
            q: vec![],
            r: vec![],
        }
    }

    #[test]
    fn valid_problem_has_no_diagnostics() {
        assert!(toy_problem().validate().is_empty());
    }

    #[test]
    fn noncompact_w_detected() {
        let mut p = toy_problem();
        p.bounds.w_lo = vec![f64::NEG_INFINITY];
        let diags = p.validate();
        assert!(diags.iter().any(|d| d.code == DiagnosticCode::NoncompactW));
    }

    #[test]
    fn zm_in_g_detected() {
        let mut p = toy_problem();
        p.dims.zm = 1;
        p.g.push(parse("zm[0]").unwrap());
        let diags = p.validate();
        assert!(diags.iter().any(|d| d.code == DiagnosticCode::BadGroupInG));
    }

    #[test]
    fn gamma_reference_rejected_everywhere() {
        let mut p = toy_problem();
        p.f = parse("gamma + theta[0]").unwrap();
        let diags = p.validate();
        assert!(diags.iter().any(|d| d.code == DiagnosticCode::BadGroupInF));
    }

    #[test]
    fn index_out_of_range_detected() {
        let mut p = toy_problem();
        p.f = parse("theta[5]").unwrap();
        let diags = p.validate();
        assert!(diags
            .iter()
            .any(|d| d.code == DiagnosticCode::IndexOutOfRange));
    }

    #[test]
    fn missing_s_box_detected() {
        let mut p = toy_problem();
        p.dims.s = 2;
        p.q.push(parse("s[0] + s[1] - 1").unwrap());
        let diags = p.validate();
        assert!(diags.iter().any(|d| d.code == DiagnosticCode::MissingSBox));
    }

    #[test]
    fn validate_is_total_on_garbage() {
        let mut p = toy_problem();
        p.bounds.theta_lo = vec![];
        p.bounds.gamma = [f64::NAN, 1.0];
        p.dims.zp = 0;
        let diags = p.validate();
        assert!(!diags.is_empty());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = std::env::temp_dir().join("sipred-model-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.json");
        let p = toy_problem();
        p.save(&path).unwrap();
        let loaded = SipProblem::<f64>::load(&path).unwrap();
        assert_eq!(p, loaded);

        // save(load(save(p))) is byte-identical
        let path2 = dir.join("toy2.json");
        loaded.save(&path2).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(&path2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_dims_reported() {
        let err = SipProblem::<f64>::from_json(r#"{"name": "x"}"#).unwrap_err();
        assert!(matches!(err, ModelError::MissingKey("dims")));
    }

    #[test]
    fn out_of_range_index_fails_load() {
        let mut p = toy_problem();
        p.f = parse("theta[5]").unwrap();
        let text = p.to_json();
        let err = SipProblem::<f64>::from_json(&text).unwrap_err();
        match err {
            ModelError::Invalid(diags) => {
                assert!(diags
                    .iter()
                    .any(|d| d.code == DiagnosticCode::IndexOutOfRange));
            }
            other => panic!("expected Invalid, got {other}"),
        }
    }

    #[test]
    fn bad_expression_reports_key() {
        let text = toy_problem().to_json().replace(
            "\"zp[0] - 2\"",
            "\"zp[0] - \"",
        );
        let err = SipProblem::<f64>::from_json(&text).unwrap_err();
        match err {
            ModelError::BadExpression { key, .. } => assert_eq!(key, "g[0]"),
            other => panic!("expected BadExpression, got {other}"),
        }
    }
}
