//! Central finite-difference verification of tape gradients.
//!
//! The function under test is evaluated on a `Graph<f64>`; each checked
//! element is perturbed by `±eps` and the numeric slope compared with the
//! reverse-mode gradient. An element passes when the absolute difference is
//! at most `abs_floor` or the relative difference (over the larger magnitude)
//! is below the tolerance.

use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{contract_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub abs_floor: f64,
    /// Check at most this many (seeded, distinct) elements per input; `None` checks all.
    pub max_elements: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            abs_floor: 1e-6,
            max_elements: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, element, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn element_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

fn build<F>(f: &F, inputs: &[Vec<f64>], shapes: &[Vec<usize>], wants: &[bool]) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::<f64>::new();
    let mut vars = Vec::with_capacity(inputs.len());
    for ((v, s), &w) in inputs.iter().zip(shapes).zip(wants) {
        vars.push(g.input(s, v.clone(), w)?);
    }
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(contract_err!("gradcheck function must return a scalar"));
    }
    Ok((g, vars, out))
}

/// Checks gradients with respect to every input whose `requires_grad` is set.
pub fn gradcheck<F>(inputs: &[Tensor], f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    let wants: Vec<bool> = inputs.iter().map(|t| t.requires_grad).collect();
    let base: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.data().iter().map(|&v| v as f64).collect())
        .collect();

    let (g, vars, out) = build(&f, &base, &shapes, &wants)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let mut rng = Rng::new(opts.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut point = base.clone();
    for (k, want) in wants.iter().enumerate() {
        if !want {
            continue;
        }
        let n = base[k].len();
        let elems: Vec<usize> = match opts.max_elements {
            Some(m) if m < n => {
                let mut p = rng.permutation(n);
                p.truncate(m);
                p
            }
            _ => (0..n).collect(),
        };
        for e in elems {
            let orig = base[k][e];
            point[k][e] = orig + opts.eps;
            let (gp, _, op) = build(&f, &point, &shapes, &wants)?;
            let fp = gp.scalar(op);
            point[k][e] = orig - opts.eps;
            let (gm, _, om) = build(&f, &point, &shapes, &wants)?;
            let fm = gm.scalar(om);
            point[k][e] = orig;
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = analytic[k][e];
            let err = element_error(a, numeric, opts.abs_floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((k, e, a, numeric));
            }
        }
    }
    Ok(report)
}
