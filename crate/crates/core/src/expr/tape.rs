//! Flattened, compiled form of an expression.
//!
//! The NLP solver evaluates constraint functions and their gradients many
//! thousands of times; walking a boxed tree each time is too slow. A [`Tape`]
//! is the expression linearized in postorder over a dense input vector, with
//! variable references remapped (or substituted by constants) through a
//! caller-supplied [`Slot`] mapping at compile time.
//!
//! Tape evaluation uses raw IEEE semantics: out-of-domain arguments produce
//! `NaN`/`inf` which the solver's line search rejects, rather than the
//! checked errors of [`Expr::eval`](super::Expr::eval).

use super::{BinOp, Expr, UnaryOp, VarRef};
use crate::scalar::{sc, Scalar};

/// Where a variable reference lands after compilation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot<T> {
    /// Component of the flat input vector.
    Input(usize),
    /// Substituted constant (e.g. a scenario's `w`, or `theta` inside an
    /// adversary problem).
    Const(T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op<T> {
    Const(T),
    Input(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Log(u32),
    Sqrt(u32),
    Sin(u32),
    Cos(u32),
    PowI(u32, i32),
    PowF(u32, T),
}

/// Compiled expression over a flat input vector.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    ops: Vec<Op<T>>,
}

impl<T: Scalar> Tape<T> {
    /// Compiles `expr`, remapping every variable through `map`.
    pub fn compile(expr: &Expr<T>, map: &impl Fn(VarRef) -> Slot<T>) -> Self {
        let mut ops = Vec::new();
        push_node(expr, map, &mut ops);
        Tape { ops }
    }

    /// Number of tape slots; scratch buffers must be at least this long.
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Forward evaluation. `vals` is grown as needed and holds every
    /// intermediate value afterwards (input to [`Tape::reverse_acc`]).
    pub fn forward(&self, x: &[T], vals: &mut Vec<T>) -> T {
        if vals.len() < self.ops.len() {
            vals.resize(self.ops.len(), T::zero());
        }
        let v = &mut vals[..];
        for (i, op) in self.ops.iter().enumerate() {
            v[i] = match *op {
                Op::Const(c) => c,
                Op::Input(j) => x[j as usize],
                Op::Add(a, b) => v[a as usize] + v[b as usize],
                Op::Sub(a, b) => v[a as usize] - v[b as usize],
                Op::Mul(a, b) => v[a as usize] * v[b as usize],
                Op::Div(a, b) => v[a as usize] / v[b as usize],
                Op::Neg(a) => -v[a as usize],
                Op::Exp(a) => v[a as usize].exp(),
                Op::Log(a) => v[a as usize].ln(),
                Op::Sqrt(a) => v[a as usize].sqrt(),
                Op::Sin(a) => v[a as usize].sin(),
                Op::Cos(a) => v[a as usize].cos(),
                Op::PowI(a, n) => v[a as usize].powi(n),
                Op::PowF(a, c) => v[a as usize].powf(c),
            };
        }
        v[self.ops.len() - 1]
    }

    /// Reverse sweep after [`Tape::forward`] on the same `vals`:
    /// adds `seed * d(output)/d(x_j)` into `grad[j]` for every input `j`.
    pub fn reverse_acc(&self, seed: T, grad: &mut [T], vals: &[T], adj: &mut Vec<T>) {
        let n = self.ops.len();
        adj.clear();
        adj.resize(n, T::zero());
        adj[n - 1] = seed;
        let one = T::one();
        let two = sc::<T>(2.0);
        for i in (0..n).rev() {
            let s = adj[i];
            if s == T::zero() {
                continue;
            }
            match self.ops[i] {
                Op::Const(_) => {}
                Op::Input(j) => grad[j as usize] += s,
                Op::Add(a, b) => {
                    adj[a as usize] += s;
                    adj[b as usize] += s;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += s;
                    adj[b as usize] -= s;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (vals[a as usize], vals[b as usize]);
                    adj[a as usize] += s * vb;
                    adj[b as usize] += s * va;
                }
                Op::Div(a, b) => {
                    let (va, vb) = (vals[a as usize], vals[b as usize]);
                    adj[a as usize] += s / vb;
                    adj[b as usize] -= s * va / (vb * vb);
                }
                Op::Neg(a) => adj[a as usize] -= s,
                Op::Exp(a) => adj[a as usize] += s * vals[i],
                Op::Log(a) => adj[a as usize] += s / vals[a as usize],
                Op::Sqrt(a) => adj[a as usize] += s / (two * vals[i]),
                Op::Sin(a) => adj[a as usize] += s * vals[a as usize].cos(),
                Op::Cos(a) => adj[a as usize] -= s * vals[a as usize].sin(),
                Op::PowI(a, n) => {
                    if n != 0 {
                        adj[a as usize] += s * sc::<T>(n as f64) * vals[a as usize].powi(n - 1);
                    }
                }
                Op::PowF(a, c) => {
                    if c != T::zero() {
                        adj[a as usize] += s * c * vals[a as usize].powf(c - one);
                    }
                }
            }
        }
    }

    /// Convenience: value and full gradient (overwritten), allocating scratch.
    pub fn value_grad(&self, x: &[T], grad: &mut [T]) -> T {
        let mut vals = Vec::new();
        let mut adj = Vec::new();
        let v = self.forward(x, &mut vals);
        for g in grad.iter_mut() {
            *g = T::zero();
        }
        self.reverse_acc(T::one(), grad, &vals, &mut adj);
        v
    }

    /// Convenience value-only evaluation, allocating scratch.
    pub fn value(&self, x: &[T]) -> T {
        let mut vals = Vec::new();
        self.forward(x, &mut vals)
    }
}

fn push_node<T: Scalar>(
    expr: &Expr<T>,
    map: &impl Fn(VarRef) -> Slot<T>,
    ops: &mut Vec<Op<T>>,
) -> u32 {
    let op = match expr {
        Expr::Constant(v) => Op::Const(*v),
        Expr::Variable(var) => match map(*var) {
            Slot::Input(j) => Op::Input(j as u32),
            Slot::Const(v) => Op::Const(v),
        },
        Expr::Unary(op, c) => {
            let a = push_node(c, map, ops);
            match op {
                UnaryOp::Neg => Op::Neg(a),
                UnaryOp::Exp => Op::Exp(a),
                UnaryOp::Log => Op::Log(a),
                UnaryOp::Sqrt => Op::Sqrt(a),
                UnaryOp::Sin => Op::Sin(a),
                UnaryOp::Cos => Op::Cos(a),
            }
        }
        Expr::Binary(op, l, r) => {
            // constant integral exponents get the fast powi path
            if *op == BinOp::Pow {
                if let Expr::Constant(c) = **r {
                    let a = push_node(l, map, ops);
                    let as_int = c.fract() == T::zero() && c.abs() <= sc(2147483647.0);
                    let tape_op = if as_int {
                        Op::PowI(a, c.to_i32().unwrap_or(0))
                    } else {
                        Op::PowF(a, c)
                    };
                    ops.push(tape_op);
                    return (ops.len() - 1) as u32;
                }
            }
            let a = push_node(l, map, ops);
            let b = push_node(r, map, ops);
            match op {
                BinOp::Add => Op::Add(a, b),
                BinOp::Sub => Op::Sub(a, b),
                BinOp::Mul => Op::Mul(a, b),
                BinOp::Div => Op::Div(a, b),
                // unreachable through parse/validate, which reject
                // non-constant exponents
                BinOp::Pow => panic!("pow exponent must be a constant"),
            }
        }
    };
    ops.push(op);
    (ops.len() - 1) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn slot_x(var: VarRef) -> Slot<f64> {
        Slot::Input(var.index)
    }

    #[test]
    fn forward_matches_eval() {
        let e: Expr<f64> = parse("theta[0]^2 + 3*theta[1] - sin(theta[0])").unwrap();
        let tape = Tape::compile(&e, &slot_x);
        let x = [1.3, -0.7];
        let expected = 1.3f64.powi(2) + 3.0 * (-0.7) - 1.3f64.sin();
        assert!((tape.value(&x) - expected).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_manual() {
        let e: Expr<f64> = parse("theta[0]^2*theta[1] + exp(theta[1])").unwrap();
        let tape = Tape::compile(&e, &slot_x);
        let x = [2.0, 0.5];
        let mut g = [0.0, 0.0];
        let v = tape.value_grad(&x, &mut g);
        assert!((v - (4.0 * 0.5 + 0.5f64.exp())).abs() < 1e-14);
        assert!((g[0] - 2.0 * 2.0 * 0.5).abs() < 1e-14);
        assert!((g[1] - (4.0 + 0.5f64.exp())).abs() < 1e-14);
    }

    #[test]
    fn substituted_constants() {
        let e: Expr<f64> = parse("w[0]*theta[0]").unwrap();
        let tape = Tape::compile(&e, &|var| match var.group {
            crate::expr::VarGroup::W => Slot::Const(2.5),
            _ => Slot::Input(0),
        });
        assert_eq!(tape.value(&[4.0]), 10.0);
    }
}
