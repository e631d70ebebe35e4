use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Fixed sinusoidal position table, `frames × dim`.
///
/// Even columns hold `sin(pos / 10000^(2i/dim))`, odd columns the matching
/// cosine.
pub fn positional_encoding(frames: usize, dim: usize) -> Result<Tensor2> {
    if dim % 2 != 0 {
        return Err(Error::config(format!(
            "positional encoding needs an even dimension, got {dim}"
        )));
    }
    Ok(Tensor2::from_fn(frames, dim, |pos, c| {
        let pair = (c / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_is_sin0_cos0() {
        let pe = positional_encoding(5, 8).unwrap();
        for c in 0..8 {
            let expected = if c % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe.get(0, c), expected);
        }
    }

    #[test]
    fn position_one_dim_zero_is_sin_one() {
        let pe = positional_encoding(2, 4).unwrap();
        assert!((pe.get(1, 0) - 0.841_470_984_807_896_5).abs() < 1e-12);
    }

    #[test]
    fn entries_are_bounded_and_odd_dim_fails() {
        let pe = positional_encoding(64, 16).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(matches!(positional_encoding(3, 5), Err(Error::Config(_))));
    }
}
