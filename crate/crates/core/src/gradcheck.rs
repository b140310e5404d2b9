//! Side-by-side gradients from the continuous adjoint, the reverse sweep and
//! a central finite-difference oracle.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{FwiError, Result};
use crate::fields::ScalarField;
use crate::inversion::{GradientEngine, Problem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdStep {
    Absolute(f64),
    /// `h_i = factor·|γ_i|`
    Relative(f64),
}

impl FdStep {
    fn at(self, gamma: f64) -> f64 {
        match self {
            FdStep::Absolute(h) => h,
            FdStep::Relative(r) => r * gamma.abs(),
        }
    }
}

/// Central differences of the problem loss, one node at a time.
pub fn fd_gradient(problem: &Problem, gamma: &ScalarField, step: FdStep) -> Result<ScalarField> {
    let values: Vec<Result<f64>> = (0..gamma.values().len())
        .into_par_iter()
        .map(|i| {
            let h = step.at(gamma.values()[i]);
            if !(h > 0.0) {
                return Err(FwiError::param("fd_step", format!("step at node {i} is {h}")));
            }
            let mut plus = gamma.clone();
            plus.values_mut()[i] += h;
            let mut minus = gamma.clone();
            minus.values_mut()[i] -= h;
            Ok((problem.loss(&plus)? - problem.loss(&minus)?) / (2.0 * h))
        })
        .collect();
    ScalarField::new(gamma.grid().clone(), values.into_iter().collect::<Result<_>>()?)
}

/// Error statistics of `a` against the reference `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    /// `max_i |a_i − b_i| / max(|a_i|, |b_i|, 1e−8·‖b‖∞)`
    pub max_rel: f64,
    /// `‖a − b‖₂ / ‖b‖₂` over interior nodes
    pub interior_rel_l2: f64,
    /// node of the largest absolute discrepancy
    pub worst_node: usize,
    pub worst_on_boundary: bool,
}

pub fn compare(a: &ScalarField, b: &ScalarField) -> Result<Comparison> {
    if !a.grid().same_shape(b.grid()) {
        return Err(FwiError::GridMismatch("compared gradients live on different grids".into()));
    }
    let grid = a.grid();
    let floor = 1e-8 * b.max_abs();
    let (mut max_rel, mut num, mut den) = (0.0f64, 0.0, 0.0);
    let (mut worst_node, mut worst) = (0, -1.0);
    for (i, (&x, &y)) in a.values().iter().zip(b.values()).enumerate() {
        let d = (x - y).abs();
        let scale = x.abs().max(y.abs()).max(floor);
        if scale > 0.0 {
            max_rel = max_rel.max(d / scale);
        }
        if d > worst {
            worst = d;
            worst_node = i;
        }
        if !grid.is_boundary(i) {
            num += d * d;
            den += y * y;
        }
    }
    let interior_rel_l2 = if den > 0.0 {
        (num / den).sqrt()
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(Comparison {
        max_rel,
        interior_rel_l2,
        worst_node,
        worst_on_boundary: grid.is_boundary(worst_node),
    })
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub loss: f64,
    pub adjoint: ScalarField,
    pub reverse: ScalarField,
    pub fd: ScalarField,
}

impl GradientReport {
    pub fn compute(problem: &Problem, gamma: &ScalarField, step: FdStep) -> Result<Self> {
        let (loss, adjoint) = problem.loss_and_gradient(gamma, GradientEngine::ContinuousAdjoint)?;
        let (_, reverse) = problem.loss_and_gradient(gamma, GradientEngine::DiscreteAdjoint)?;
        let fd = fd_gradient(problem, gamma, step)?;
        Ok(Self {
            loss,
            adjoint,
            reverse,
            fd,
        })
    }

    pub fn adjoint_vs_fd(&self) -> Comparison {
        compare(&self.adjoint, &self.fd).expect("same grid")
    }

    pub fn reverse_vs_fd(&self) -> Comparison {
        compare(&self.reverse, &self.fd).expect("same grid")
    }

    pub fn adjoint_vs_reverse(&self) -> Comparison {
        compare(&self.adjoint, &self.reverse).expect("same grid")
    }

    /// Summary lines prefixed by `#`, then one CSV row per node.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# loss,{:.16e}", self.loss).expect("string write");
        for (name, c) in [
            ("adjoint_vs_fd", self.adjoint_vs_fd()),
            ("reverse_vs_fd", self.reverse_vs_fd()),
            ("adjoint_vs_reverse", self.adjoint_vs_reverse()),
        ] {
            let worst = self.fd.grid().coords(c.worst_node);
            writeln!(
                out,
                "# {name},max_rel={:.6e},interior_rel_l2={:.6e},worst_node={},worst_on_boundary={}",
                c.max_rel,
                c.interior_rel_l2,
                worst.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(":"),
                c.worst_on_boundary
            )
            .expect("string write");
        }
        out.push_str("node,adjoint,reverse,fd\n");
        let grid = self.fd.grid();
        for i in 0..grid.len() {
            let node: Vec<String> = grid.coords(i).iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e}",
                node.join(":"),
                self.adjoint.values()[i],
                self.reverse.values()[i],
                self.fd.values()[i]
            )
            .expect("string write");
        }
        out
    }
}
