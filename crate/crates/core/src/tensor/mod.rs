//! Dense tensors, reverse-mode differentiation and the Adam optimiser.

mod adam;
mod array;
mod graph;
pub(crate) mod kernels;

pub use adam::{AdamState, DEFAULT_LR};
pub use array::Tensor;
pub use graph::{Gradients, Graph, Var};
pub use kernels::{reflect, window_offsets};

use crate::error::Result;

/// Plain (untracked) conv2d, for inference paths and tests.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let s = kernels::ConvShape::conv2d(x, w, b, stride, padding)?;
    Ok(kernels::conv2d_forward(x, w, b, &s))
}

/// Plain (untracked) transposed conv2d.
pub fn conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    let s = kernels::ConvShape::conv_transpose2d(x, w, b, stride, padding, output_padding)?;
    Ok(kernels::conv_transpose2d_forward(x, w, b, &s))
}

/// Windowed mean with reflective borders (untracked).
pub fn window_mean(x: &Tensor, size: usize) -> Result<Tensor> {
    kernels::window_mean(x, size, false)
}

/// Half-pixel bilinear x2 upsampling (untracked).
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    kernels::upsample2x(x, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let w = Tensor::ones(&[1, 1, 1, 1]);
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d(&x, &w, &b, 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_output_extents() {
        let x = Tensor::zeros(&[1, 1, 160, 160]);
        let w = Tensor::zeros(&[4, 1, 9, 9]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[4]), 1, 4).unwrap();
        assert_eq!(y.shape(), &[1, 4, 160, 160]);

        let x = Tensor::zeros(&[1, 128, 160, 160]);
        let w = Tensor::zeros(&[2, 128, 3, 3]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[2]), 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 80, 80]);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::zeros(&[1, 2, 8, 8]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 1).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
    }

    #[test]
    fn transpose_extents_with_output_padding() {
        let x = Tensor::zeros(&[1, 2, 80, 80]);
        let w = Tensor::zeros(&[2, 1, 9, 9]);
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv_transpose2d(&x, &w, &b, 2, 4, 0).unwrap().shape(), &[1, 1, 159, 159]);
        assert_eq!(conv_transpose2d(&x, &w, &b, 2, 4, 1).unwrap().shape(), &[1, 1, 160, 160]);
        assert!(conv_transpose2d(&x, &w, &b, 2, 4, 2).is_err());
    }

    #[test]
    fn transpose_of_zero_is_bias() {
        let x = Tensor::zeros(&[1, 3, 5, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Tensor::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::new(&[2], vec![0.25, -1.5]).unwrap();
        let y = conv_transpose2d(&x, &w, &b, 2, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 10, 10]);
        assert!(y.data()[..100].iter().all(|&v| v == 0.25));
        assert!(y.data()[100..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn window_stats_of_constant() {
        let x = Tensor::full(&[1, 1, 12, 9], 0.37);
        let m = window_mean(&x, 8).unwrap();
        assert!(m.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        let mut g = Graph::new();
        let xv = g.constant(x);
        let var = g.window_variance(xv, 8).unwrap();
        assert!(g.value(var).data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn upsample_constant_doubles_extent() {
        let x = Tensor::full(&[1, 1, 3, 5], 0.6);
        let y = upsample2x(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 6, 10]);
        assert!(y.data().iter().all(|&v| (v - 0.6).abs() < 1e-15));
    }
}
