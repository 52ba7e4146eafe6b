//! Finite-scenario master problem construction.
//!
//! Variables are `theta`, the epigraph scalar `gamma`, and one witness block
//! `(zp_i, zm_i, s_i)` per scenario; the objective is `gamma`. For every
//! scenario `i`, with its `w_i` substituted as constants, the constraints are
//!
//! ```text
//! g(theta, w_i, zp_i, s_i) <= 0      f(theta, w_i, zp_i) - gamma <= 0
//! d(theta, w_i, zp_i, zm_i)  = 0     e(theta, w_i, zp_i, zm_i)  <= 0
//! q(s_i) = 0                         r(s_i) <= 0
//! ```

use super::varmap::{GroupMap, VarMap};
use super::ScenarioSet;
use crate::expr::Expr;
use crate::model::{SipProblem, SolutionBundle, Witness};
use crate::nlp::NlpProblem;
use crate::scalar::{sc, Scalar};

/// Index layout of the master decision vector.
#[derive(Debug, Clone, Copy)]
pub struct MasterLayout {
    pub n_theta: usize,
    pub n_zp: usize,
    pub n_zm: usize,
    pub n_s: usize,
    pub n_scenarios: usize,
}

impl MasterLayout {
    pub fn gamma_index(&self) -> usize {
        self.n_theta
    }

    pub fn block_len(&self) -> usize {
        self.n_zp + self.n_zm + self.n_s
    }

    pub fn block_base(&self, i: usize) -> usize {
        self.n_theta + 1 + i * self.block_len()
    }

    pub fn zp_base(&self, i: usize) -> usize {
        self.block_base(i)
    }

    pub fn zm_base(&self, i: usize) -> usize {
        self.block_base(i) + self.n_zp
    }

    pub fn s_base(&self, i: usize) -> usize {
        self.block_base(i) + self.n_zp + self.n_zm
    }

    pub fn n(&self) -> usize {
        self.n_theta + 1 + self.n_scenarios * self.block_len()
    }
}

/// Master problem plus the layout needed to unpack its solutions, and the
/// warm-start vector assembled from prior witnesses (when given).
#[derive(Debug)]
pub struct Master<T: Scalar = f64> {
    pub nlp: NlpProblem<T>,
    pub layout: MasterLayout,
    pub start: Option<Vec<T>>,
}

impl<T: Scalar> Master<T> {
    /// Unpacks a master solution vector into decisions plus witnesses.
    pub fn extract_bundle(&self, x: &[T]) -> SolutionBundle<T> {
        let l = &self.layout;
        let mut witnesses = Vec::with_capacity(l.n_scenarios);
        for i in 0..l.n_scenarios {
            witnesses.push(Witness {
                zp: x[l.zp_base(i)..l.zp_base(i) + l.n_zp].to_vec(),
                zm: x[l.zm_base(i)..l.zm_base(i) + l.n_zm].to_vec(),
                s: x[l.s_base(i)..l.s_base(i) + l.n_s].to_vec(),
            });
        }
        SolutionBundle {
            theta: x[..l.n_theta].to_vec(),
            gamma: x[l.gamma_index()],
            witnesses,
        }
    }

    pub fn warm_starts(&self) -> Vec<Vec<T>> {
        self.start.iter().cloned().collect()
    }
}

/// Center of the `s` box, used to initialize fresh witness blocks.
pub fn s_box_center<T: Scalar>(p: &SipProblem<T>) -> Vec<T> {
    match (&p.bounds.s_lo, &p.bounds.s_hi) {
        (Some(lo), Some(hi)) => lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| (a + b) / sc(2.0))
            .collect(),
        _ => vec![T::zero(); p.dims.s],
    }
}

/// Builds the finite-scenario master. `warm` maps prior witnesses onto the
/// scenario prefix it covers; any newer scenarios get zero `zp`/`zm` and an
/// `s`-box-center block.
pub fn build_master<T: Scalar>(
    p: &SipProblem<T>,
    set: &ScenarioSet<T>,
    warm: Option<&SolutionBundle<T>>,
) -> Master<T> {
    let k = set.len();
    assert!(k > 0, "master needs at least one scenario");
    let layout = MasterLayout {
        n_theta: p.dims.theta,
        n_zp: p.dims.zp,
        n_zm: p.dims.zm,
        n_s: p.dims.s,
        n_scenarios: k,
    };
    let n = layout.n();
    let inf = T::infinity();

    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut names = Vec::with_capacity(n);
    lower.extend_from_slice(&p.bounds.theta_lo);
    upper.extend_from_slice(&p.bounds.theta_hi);
    names.extend((0..p.dims.theta).map(|j| format!("theta[{j}]")));
    lower.push(p.bounds.gamma[0]);
    upper.push(p.bounds.gamma[1]);
    names.push("gamma".to_string());
    for i in 0..k {
        lower.extend(std::iter::repeat(-inf).take(p.dims.zp));
        upper.extend(std::iter::repeat(inf).take(p.dims.zp));
        names.extend((0..p.dims.zp).map(|j| format!("zp#{i}[{j}]")));
        lower.extend(std::iter::repeat(-inf).take(p.dims.zm));
        upper.extend(std::iter::repeat(inf).take(p.dims.zm));
        names.extend((0..p.dims.zm).map(|j| format!("zm#{i}[{j}]")));
        match (&p.bounds.s_lo, &p.bounds.s_hi) {
            (Some(lo), Some(hi)) => {
                lower.extend_from_slice(lo);
                upper.extend_from_slice(hi);
            }
            _ => {
                lower.extend(std::iter::repeat(-inf).take(p.dims.s));
                upper.extend(std::iter::repeat(inf).take(p.dims.s));
            }
        }
        names.extend((0..p.dims.s).map(|j| format!("s#{i}[{j}]")));
    }

    // objective: gamma
    let obj_map = VarMap {
        gamma: GroupMap::Input {
            base: layout.gamma_index(),
        },
        ..VarMap::absent()
    };
    let objective = obj_map.compile(&Expr::gamma());

    let mut nlp = NlpProblem::new(lower, upper, objective);
    nlp.names = names;

    let epigraph: Expr<T> = p.f.clone() - Expr::gamma();
    for (i, scenario) in set.scenarios.iter().enumerate() {
        let map = VarMap {
            theta: GroupMap::Input { base: 0 },
            gamma: GroupMap::Input {
                base: layout.gamma_index(),
            },
            w: GroupMap::Consts(scenario.w.clone()),
            zp: GroupMap::Input {
                base: layout.zp_base(i),
            },
            zm: GroupMap::Input {
                base: layout.zm_base(i),
            },
            s: GroupMap::Input {
                base: layout.s_base(i),
            },
            aux: GroupMap::Absent,
        };
        for row in &p.d {
            nlp.eq.push(map.compile(row));
        }
        for row in &p.q {
            nlp.eq.push(map.compile(row));
        }
        for row in &p.g {
            nlp.ineq.push(map.compile(row));
        }
        nlp.ineq.push(map.compile(&epigraph));
        for row in &p.e {
            nlp.ineq.push(map.compile(row));
        }
        for row in &p.r {
            nlp.ineq.push(map.compile(row));
        }
    }

    let start = warm.map(|bundle| {
        let mut x = vec![T::zero(); n];
        let s_center = s_box_center(p);
        for (j, v) in bundle.theta.iter().take(p.dims.theta).enumerate() {
            x[j] = *v;
        }
        x[layout.gamma_index()] = bundle.gamma;
        for i in 0..k {
            let witness = bundle.witnesses.get(i);
            let (zp, zm, s): (&[T], &[T], &[T]) = match witness {
                Some(wit) => (&wit.zp, &wit.zm, &wit.s),
                None => (&[], &[], &s_center),
            };
            copy_block(&mut x, layout.zp_base(i), zp, p.dims.zp);
            copy_block(&mut x, layout.zm_base(i), zm, p.dims.zm);
            if s.is_empty() {
                copy_block(&mut x, layout.s_base(i), &s_center, p.dims.s);
            } else {
                copy_block(&mut x, layout.s_base(i), s, p.dims.s);
            }
        }
        x
    });

    Master { nlp, layout, start }
}

fn copy_block<T: Scalar>(x: &mut [T], base: usize, src: &[T], dim: usize) {
    for j in 0..dim {
        x[base + j] = src.get(j).copied().unwrap_or_else(T::zero);
    }
}
