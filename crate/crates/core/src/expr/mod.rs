//! Expression trees over named variable groups.
//!
//! Every function in the problem model (objective, robust constraints,
//! trajectory equalities/inequalities, existence-set conditions) is a scalar
//! [`Expr`] over the variable groups of [`VarGroup`]. Expressions are finite
//! acyclic trees of constants, variable references, unary functions and
//! binary operators; `^` is restricted to constant exponents so that first
//! derivatives stay simple and expressions stay smooth on their domain.
//!
//! There are deliberately no nonsmooth primitives (`min`/`max`/`abs`/`sat`):
//! disjunctive structure has to be pre-encoded with smoothing variables, which
//! is exactly what the built-in example constructors do.
//!
//! Expressions are immutable after construction; evaluation and
//! differentiation are reentrant and safe to call from many threads.

mod parser;
mod tape;

pub use parser::{parse, ParseError};
pub use tape::{Slot, Tape};

use crate::scalar::{sc, Scalar};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

/// Variable groups of the robust problem model.
///
/// `Theta` holds decisions, `W` uncertainties, `Zp` physical states, `Zm`
/// modelling variables, `S` existence-constraint variables. `Gamma` is the
/// scalar epigraph variable and `Aux` is reserved for solver-introduced
/// variables (such as the inner maximization bound of the nested adversary).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarGroup {
    Theta,
    W,
    Zp,
    Zm,
    S,
    Gamma,
    Aux,
}

impl VarGroup {
    /// All groups, in canonical order.
    pub const ALL: [VarGroup; 7] = [
        VarGroup::Theta,
        VarGroup::W,
        VarGroup::Zp,
        VarGroup::Zm,
        VarGroup::S,
        VarGroup::Gamma,
        VarGroup::Aux,
    ];

    /// Name used in the expression grammar.
    pub fn name(self) -> &'static str {
        match self {
            VarGroup::Theta => "theta",
            VarGroup::W => "w",
            VarGroup::Zp => "zp",
            VarGroup::Zm => "zm",
            VarGroup::S => "s",
            VarGroup::Gamma => "gamma",
            VarGroup::Aux => "aux",
        }
    }
}

impl fmt::Display for VarGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Reference to one component of a variable group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarRef {
    pub group: VarGroup,
    pub index: usize,
}

impl VarRef {
    pub fn new(group: VarGroup, index: usize) -> Self {
        VarRef { group, index }
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.group == VarGroup::Gamma {
            f.write_str("gamma")
        } else {
            write!(f, "{}[{}]", self.group, self.index)
        }
    }
}

/// Unary operations. `Neg` is arithmetic negation, the rest are the smooth
/// unary functions of the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
        }
    }
}

/// Binary operations with standard precedence; `Pow` requires a constant
/// right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

/// Scalar expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr<T = f64> {
    Constant(T),
    Variable(VarRef),
    Unary(UnaryOp, Box<Expr<T>>),
    Binary(BinOp, Box<Expr<T>>, Box<Expr<T>>),
}

/// Evaluation failure: either a variable is not covered by the bindings or a
/// function left its domain at the offending node.
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("unbound variable {var}")]
    Unbound { var: VarRef },
    #[error("domain error in `{op}` ({detail}) at node `{node}`")]
    Domain {
        op: &'static str,
        detail: String,
        node: String,
    },
}

/// One value vector per variable group.
///
/// Every [`VarRef`] reachable from an expression being evaluated must be
/// covered; `gamma` has dimension one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bindings<T = f64> {
    pub theta: Vec<T>,
    pub w: Vec<T>,
    pub zp: Vec<T>,
    pub zm: Vec<T>,
    pub s: Vec<T>,
    pub gamma: Vec<T>,
    pub aux: Vec<T>,
}

impl<T: Scalar> Bindings<T> {
    pub fn new() -> Self {
        Bindings {
            theta: Vec::new(),
            w: Vec::new(),
            zp: Vec::new(),
            zm: Vec::new(),
            s: Vec::new(),
            gamma: Vec::new(),
            aux: Vec::new(),
        }
    }

    pub fn group(&self, g: VarGroup) -> &[T] {
        match g {
            VarGroup::Theta => &self.theta,
            VarGroup::W => &self.w,
            VarGroup::Zp => &self.zp,
            VarGroup::Zm => &self.zm,
            VarGroup::S => &self.s,
            VarGroup::Gamma => &self.gamma,
            VarGroup::Aux => &self.aux,
        }
    }

    pub fn group_mut(&mut self, g: VarGroup) -> &mut Vec<T> {
        match g {
            VarGroup::Theta => &mut self.theta,
            VarGroup::W => &mut self.w,
            VarGroup::Zp => &mut self.zp,
            VarGroup::Zm => &mut self.zm,
            VarGroup::S => &mut self.s,
            VarGroup::Gamma => &mut self.gamma,
            VarGroup::Aux => &mut self.aux,
        }
    }

    pub fn get(&self, var: VarRef) -> Option<T> {
        self.group(var.group).get(var.index).copied()
    }

    pub fn set_gamma(&mut self, v: T) -> &mut Self {
        self.gamma = vec![v];
        self
    }
}

impl<T: Scalar> Expr<T> {
    pub fn constant(v: T) -> Self {
        Expr::Constant(v)
    }

    /// Constant from an `f64` literal.
    pub fn c(v: f64) -> Self {
        Expr::Constant(sc(v))
    }

    pub fn var(group: VarGroup, index: usize) -> Self {
        Expr::Variable(VarRef::new(group, index))
    }

    pub fn theta(i: usize) -> Self {
        Self::var(VarGroup::Theta, i)
    }
    pub fn w(i: usize) -> Self {
        Self::var(VarGroup::W, i)
    }
    pub fn zp(i: usize) -> Self {
        Self::var(VarGroup::Zp, i)
    }
    pub fn zm(i: usize) -> Self {
        Self::var(VarGroup::Zm, i)
    }
    pub fn s(i: usize) -> Self {
        Self::var(VarGroup::S, i)
    }
    pub fn gamma() -> Self {
        Self::var(VarGroup::Gamma, 0)
    }

    /// Power with a constant exponent; the only form the model admits.
    pub fn pow(self, expo: f64) -> Self {
        Expr::Binary(BinOp::Pow, Box::new(self), Box::new(Expr::c(expo)))
    }

    pub fn squared(self) -> Self {
        self.pow(2.0)
    }

    pub fn neg(self) -> Self {
        Expr::Unary(UnaryOp::Neg, Box::new(self))
    }
    pub fn exp(self) -> Self {
        Expr::Unary(UnaryOp::Exp, Box::new(self))
    }
    pub fn log(self) -> Self {
        Expr::Unary(UnaryOp::Log, Box::new(self))
    }
    pub fn sqrt(self) -> Self {
        Expr::Unary(UnaryOp::Sqrt, Box::new(self))
    }
    pub fn sin(self) -> Self {
        Expr::Unary(UnaryOp::Sin, Box::new(self))
    }
    pub fn cos(self) -> Self {
        Expr::Unary(UnaryOp::Cos, Box::new(self))
    }

    /// Sum of terms; zero for an empty iterator.
    pub fn sum(terms: impl IntoIterator<Item = Expr<T>>) -> Self {
        let mut it = terms.into_iter();
        match it.next() {
            None => Expr::Constant(T::zero()),
            Some(first) => it.fold(first, |acc, t| acc + t),
        }
    }

    /// Visits every variable reference in the tree.
    pub fn visit_vars(&self, f: &mut impl FnMut(VarRef)) {
        match self {
            Expr::Constant(_) => {}
            Expr::Variable(v) => f(*v),
            Expr::Unary(_, c) => c.visit_vars(f),
            Expr::Binary(_, l, r) => {
                l.visit_vars(f);
                r.visit_vars(f);
            }
        }
    }

    /// True if some reference to `group` occurs in the tree.
    pub fn references(&self, group: VarGroup) -> bool {
        let mut found = false;
        self.visit_vars(&mut |v| found |= v.group == group);
        found
    }

    /// Largest index referenced per group, as `(group, max_index)` pairs.
    pub fn max_indices(&self) -> Vec<(VarGroup, usize)> {
        let mut maxes: Vec<(VarGroup, usize)> = Vec::new();
        self.visit_vars(&mut |v| {
            match maxes.iter_mut().find(|(g, _)| *g == v.group) {
                Some((_, m)) => *m = (*m).max(v.index),
                None => maxes.push((v.group, v.index)),
            }
        });
        maxes
    }

    /// True if every `^` node has a constant exponent.
    pub fn pow_exponents_constant(&self) -> bool {
        match self {
            Expr::Constant(_) | Expr::Variable(_) => true,
            Expr::Unary(_, c) => c.pow_exponents_constant(),
            Expr::Binary(BinOp::Pow, l, r) => {
                matches!(**r, Expr::Constant(_)) && l.pow_exponents_constant()
            }
            Expr::Binary(_, l, r) => l.pow_exponents_constant() && r.pow_exponents_constant(),
        }
    }

    /// True if every constant in the tree is finite.
    pub fn constants_finite(&self) -> bool {
        match self {
            Expr::Constant(v) => v.is_finite(),
            Expr::Variable(_) => true,
            Expr::Unary(_, c) => c.constants_finite(),
            Expr::Binary(_, l, r) => l.constants_finite() && r.constants_finite(),
        }
    }

    /// Evaluates the tree at `b` in IEEE arithmetic.
    pub fn eval(&self, b: &Bindings<T>) -> Result<T, EvalError> {
        match self {
            Expr::Constant(v) => Ok(*v),
            Expr::Variable(var) => b.get(*var).ok_or(EvalError::Unbound { var: *var }),
            Expr::Unary(op, c) => {
                let v = c.eval(b)?;
                apply_unary(*op, v).map_err(|detail| EvalError::Domain {
                    op: op.name(),
                    detail,
                    node: self.to_text(),
                })
            }
            Expr::Binary(op, l, r) => {
                let a = l.eval(b)?;
                let c = r.eval(b)?;
                apply_binary(*op, a, c).map_err(|detail| EvalError::Domain {
                    op: op.symbol(),
                    detail,
                    node: self.to_text(),
                })
            }
        }
    }

    /// Exact partial derivatives with respect to every component of `group`
    /// at `b`, by forward-mode traversal (one pass per component).
    pub fn gradient(&self, b: &Bindings<T>, group: VarGroup) -> Result<Vec<T>, EvalError> {
        let dim = b.group(group).len();
        let mut out = Vec::with_capacity(dim);
        for i in 0..dim {
            let (_, d) = self.eval_dual(b, VarRef::new(group, i))?;
            out.push(d);
        }
        Ok(out)
    }

    /// Value and derivative with respect to a single variable.
    fn eval_dual(&self, b: &Bindings<T>, seed: VarRef) -> Result<(T, T), EvalError> {
        match self {
            Expr::Constant(v) => Ok((*v, T::zero())),
            Expr::Variable(var) => {
                let v = b.get(*var).ok_or(EvalError::Unbound { var: *var })?;
                let d = if *var == seed { T::one() } else { T::zero() };
                Ok((v, d))
            }
            Expr::Unary(op, c) => {
                let (v, dv) = c.eval_dual(b, seed)?;
                let val = apply_unary(*op, v).map_err(|detail| EvalError::Domain {
                    op: op.name(),
                    detail,
                    node: self.to_text(),
                })?;
                let d = match op {
                    UnaryOp::Neg => -dv,
                    UnaryOp::Exp => val * dv,
                    UnaryOp::Log => dv / v,
                    UnaryOp::Sqrt => dv / (sc::<T>(2.0) * val),
                    UnaryOp::Sin => v.cos() * dv,
                    UnaryOp::Cos => -v.sin() * dv,
                };
                Ok((val, d))
            }
            Expr::Binary(op, l, r) => {
                let (a, da) = l.eval_dual(b, seed)?;
                let (c, dc) = r.eval_dual(b, seed)?;
                let val = apply_binary(*op, a, c).map_err(|detail| EvalError::Domain {
                    op: op.symbol(),
                    detail,
                    node: self.to_text(),
                })?;
                let d = match op {
                    BinOp::Add => da + dc,
                    BinOp::Sub => da - dc,
                    BinOp::Mul => da * c + a * dc,
                    BinOp::Div => (da - val * dc) / c,
                    // constant exponent: d/dx a^c = c * a^(c-1) * da
                    BinOp::Pow => {
                        if c == T::zero() {
                            T::zero()
                        } else {
                            c * pow_value(a, c - T::one()) * da
                        }
                    }
                };
                Ok((val, d))
            }
        }
    }

    /// Folds constant subtrees bottom-up. Folding is skipped wherever the
    /// operation would leave its domain or produce a non-finite value, so the
    /// error surfaces at evaluation time instead.
    pub fn fold(self) -> Self {
        match self {
            Expr::Constant(_) | Expr::Variable(_) => self,
            Expr::Unary(op, c) => {
                let c = c.fold();
                if let Expr::Constant(v) = c {
                    if let Ok(out) = apply_unary(op, v) {
                        if out.is_finite() {
                            return Expr::Constant(out);
                        }
                    }
                }
                Expr::Unary(op, Box::new(c))
            }
            Expr::Binary(op, l, r) => {
                let l = l.fold();
                let r = r.fold();
                if let (Expr::Constant(a), Expr::Constant(b)) = (&l, &r) {
                    if let Ok(out) = apply_binary(op, *a, *b) {
                        if out.is_finite() {
                            return Expr::Constant(out);
                        }
                    }
                }
                Expr::Binary(op, Box::new(l), Box::new(r))
            }
        }
    }

    /// Canonical text form; `parse(to_text(e)) == e` for folded trees with
    /// finite constants.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_prec(&mut out, 0);
        out
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Constant(v) => {
                if *v < T::zero() || (*v == T::zero() && v.is_sign_negative()) {
                    PREC_NEG
                } else {
                    PREC_ATOM
                }
            }
            Expr::Variable(_) => PREC_ATOM,
            Expr::Unary(UnaryOp::Neg, _) => PREC_NEG,
            Expr::Unary(_, _) => PREC_ATOM,
            Expr::Binary(op, _, _) => match op {
                BinOp::Add | BinOp::Sub => PREC_ADD,
                BinOp::Mul | BinOp::Div => PREC_MUL,
                BinOp::Pow => PREC_POW,
            },
        }
    }

    fn write_prec(&self, out: &mut String, min_prec: u8) {
        let prec = self.prec();
        let parens = prec < min_prec;
        if parens {
            out.push('(');
        }
        match self {
            Expr::Constant(v) => {
                out.push_str(&format_const(*v));
            }
            Expr::Variable(var) => {
                out.push_str(&var.to_string());
            }
            Expr::Unary(UnaryOp::Neg, c) => {
                out.push('-');
                c.write_prec(out, PREC_NEG);
            }
            Expr::Unary(op, c) => {
                out.push_str(op.name());
                out.push('(');
                c.write_prec(out, 0);
                out.push(')');
            }
            Expr::Binary(op, l, r) => {
                let (lmin, rmin) = match op {
                    // left-associative: right operand must bind tighter
                    BinOp::Add | BinOp::Sub => (PREC_ADD, PREC_ADD + 1),
                    BinOp::Mul | BinOp::Div => (PREC_MUL, PREC_MUL + 1),
                    // right-associative
                    BinOp::Pow => (PREC_POW + 1, PREC_POW),
                };
                l.write_prec(out, lmin);
                match op {
                    BinOp::Add => out.push_str(" + "),
                    BinOp::Sub => out.push_str(" - "),
                    BinOp::Mul => out.push('*'),
                    BinOp::Div => out.push('/'),
                    BinOp::Pow => out.push('^'),
                }
                r.write_prec(out, rmin);
            }
        }
        if parens {
            out.push(')');
        }
    }
}

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

/// Shortest decimal form that parses back to the same value.
fn format_const<T: Scalar>(v: T) -> String {
    let v = v.to_f64_lossy();
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

fn apply_unary<T: Scalar>(op: UnaryOp, v: T) -> Result<T, String> {
    match op {
        UnaryOp::Neg => Ok(-v),
        UnaryOp::Exp => Ok(v.exp()),
        UnaryOp::Log => {
            if v <= T::zero() {
                Err(format!("log argument {v} is not positive"))
            } else {
                Ok(v.ln())
            }
        }
        UnaryOp::Sqrt => {
            if v < T::zero() {
                Err(format!("sqrt argument {v} is negative"))
            } else {
                Ok(v.sqrt())
            }
        }
        UnaryOp::Sin => Ok(v.sin()),
        UnaryOp::Cos => Ok(v.cos()),
    }
}

fn apply_binary<T: Scalar>(op: BinOp, a: T, b: T) -> Result<T, String> {
    match op {
        BinOp::Add => Ok(a + b),
        BinOp::Sub => Ok(a - b),
        BinOp::Mul => Ok(a * b),
        BinOp::Div => {
            if b == T::zero() {
                Err("division by zero".to_string())
            } else {
                Ok(a / b)
            }
        }
        BinOp::Pow => {
            if a == T::zero() && b < T::zero() {
                return Err("zero base with negative exponent".to_string());
            }
            if a < T::zero() && b.fract() != T::zero() {
                return Err(format!("negative base {a} with non-integer exponent {b}"));
            }
            Ok(pow_value(a, b))
        }
    }
}

/// `a^b` using the integer power path when the exponent is integral.
fn pow_value<T: Scalar>(a: T, b: T) -> T {
    if b.fract() == T::zero() && b.abs() <= sc(1e9) {
        a.powi(b.to_i32().unwrap_or(0))
    } else {
        a.powf(b)
    }
}

impl<T: Scalar> fmt::Display for Expr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl<T: Scalar> Serialize for Expr<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_text())
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Expr<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse(&text).map_err(|e| D::Error::custom(format!("{e} in expression `{text}`")))
    }
}

impl<T: Scalar> std::ops::Add for Expr<T> {
    type Output = Expr<T>;
    fn add(self, rhs: Expr<T>) -> Expr<T> {
        Expr::Binary(BinOp::Add, Box::new(self), Box::new(rhs))
    }
}

impl<T: Scalar> std::ops::Sub for Expr<T> {
    type Output = Expr<T>;
    fn sub(self, rhs: Expr<T>) -> Expr<T> {
        Expr::Binary(BinOp::Sub, Box::new(self), Box::new(rhs))
    }
}

impl<T: Scalar> std::ops::Mul for Expr<T> {
    type Output = Expr<T>;
    fn mul(self, rhs: Expr<T>) -> Expr<T> {
        Expr::Binary(BinOp::Mul, Box::new(self), Box::new(rhs))
    }
}

impl<T: Scalar> std::ops::Div for Expr<T> {
    type Output = Expr<T>;
    fn div(self, rhs: Expr<T>) -> Expr<T> {
        Expr::Binary(BinOp::Div, Box::new(self), Box::new(rhs))
    }
}

impl<T: Scalar> std::ops::Neg for Expr<T> {
    type Output = Expr<T>;
    fn neg(self) -> Expr<T> {
        Expr::Unary(UnaryOp::Neg, Box::new(self))
    }
}

#[cfg(test)]
mod tests;
