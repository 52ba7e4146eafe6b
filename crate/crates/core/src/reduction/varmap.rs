//! Mapping from model variable groups onto flat NLP vectors.
//!
//! Each solver subproblem (master, adversary, inner minimization,
//! feasibility resolve) places a different subset of the groups into its
//! decision vector and freezes the rest as constants. A [`VarMap`] records
//! that choice per group and drives tape compilation.

use crate::expr::{Expr, Slot, Tape, VarGroup, VarRef};
use crate::nlp::NlpFn;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub enum GroupMap<T> {
    /// Components live at `base..base+dim` of the decision vector.
    Input { base: usize },
    /// Components substituted as constants.
    Consts(Vec<T>),
    /// Group must not occur (validation upstream guarantees it).
    Absent,
}

#[derive(Debug, Clone)]
pub struct VarMap<T> {
    pub theta: GroupMap<T>,
    pub w: GroupMap<T>,
    pub zp: GroupMap<T>,
    pub zm: GroupMap<T>,
    pub s: GroupMap<T>,
    pub gamma: GroupMap<T>,
    pub aux: GroupMap<T>,
}

impl<T: Scalar> VarMap<T> {
    pub fn absent() -> Self {
        VarMap {
            theta: GroupMap::Absent,
            w: GroupMap::Absent,
            zp: GroupMap::Absent,
            zm: GroupMap::Absent,
            s: GroupMap::Absent,
            gamma: GroupMap::Absent,
            aux: GroupMap::Absent,
        }
    }

    fn group(&self, g: VarGroup) -> &GroupMap<T> {
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

    pub fn slot(&self, v: VarRef) -> Slot<T> {
        match self.group(v.group) {
            GroupMap::Input { base } => Slot::Input(base + v.index),
            GroupMap::Consts(vals) => Slot::Const(vals[v.index]),
            GroupMap::Absent => panic!(
                "expression references {} which is absent from this subproblem",
                v
            ),
        }
    }

    pub fn compile(&self, expr: &Expr<T>) -> NlpFn<T> {
        NlpFn::Tape(Tape::compile(expr, &|v| self.slot(v)))
    }
}
