use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{contract_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Stochastic depth over the leading (sample) dimension of `x`: each sample
/// is kept with probability `1 - rate` and rescaled by `1 / (1 - rate)`.
pub fn drop_path<T: Scalar>(g: &mut Graph<T>, x: Var, rate: f32, mode: Mode, rng: &mut Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(contract_err!("drop path rate must be in [0, 1), got {rate}"));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let n = g.shape(x)[0];
    let keep = 1.0 / (1.0 - rate as f64);
    let mask: Vec<f32> = (0..n)
        .map(|_| if rng.bernoulli(rate as f64) { 0.0 } else { keep as f32 })
        .collect();
    let mask = g.constant(&Tensor::new(&[n], mask)?);
    g.mul_col_vec(x, mask)
}
