use alloc::vec::Vec;

use crate::error::{contract_err, Result};
use crate::tensor::Tensor;

/// Fixed 2-D sin-cos position table of shape `[grid*grid, dim]`.
///
/// The first half of each row encodes the column index, the second half the
/// row index; each half is `[sin(p*w_0..), cos(p*w_0..)]` with
/// `w_k = 10000^(-k/(dim/4))`. `dim` must be divisible by 4.
pub fn sincos_2d(dim: usize, grid: usize) -> Result<Tensor> {
    if !dim.is_multiple_of(4) || grid == 0 {
        return Err(contract_err!(
            "sin-cos table needs dim % 4 == 0 (got {dim}) and grid >= 1"
        ));
    }
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|k| 1.0 / libm::pow(10_000.0, k as f64 / quarter as f64))
        .collect();
    let mut data = Vec::with_capacity(grid * grid * dim);
    for row in 0..grid {
        for col in 0..grid {
            for pos in [col as f64, row as f64] {
                data.extend(omega.iter().map(|w| libm::sin(pos * w) as f32));
                data.extend(omega.iter().map(|w| libm::cos(pos * w) as f32));
            }
        }
    }
    Tensor::new(&[grid * grid, dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_row_is_zeros_and_ones() {
        let t = sincos_2d(8, 3).unwrap();
        assert_eq!(t.shape(), &[9, 8]);
        assert_eq!(&t.data()[..8], &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        assert!(sincos_2d(6, 3).is_err());
    }
}
