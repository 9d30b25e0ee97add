use crate::error::Result;
use crate::gfsq::{quantize_latent, GfsqConfig};
use crate::tensor::FrameTensor;

/// Forward value of the quantizer plus the local derivative used in backward.
#[derive(Debug, Clone, PartialEq)]
pub struct SteOutput {
    pub quantized: FrameTensor,
    /// `1 - tanh²(z)`: rounding is treated as the identity, the bound is not.
    pub local_grad: FrameTensor,
}

impl SteOutput {
    pub fn backward(&self, upstream: &FrameTensor) -> Result<FrameTensor> {
        upstream.zip_map(&self.local_grad, |g, d| g * d)
    }
}

pub fn ste_quantize(latent: &FrameTensor, config: &GfsqConfig) -> Result<SteOutput> {
    Ok(SteOutput {
        quantized: quantize_latent(latent, config)?,
        local_grad: latent.map(tanh_grad),
    })
}

/// The differentiable stand-in: the same bound without the rounding.
pub fn surrogate_quantize(latent: &FrameTensor) -> SteOutput {
    SteOutput {
        quantized: latent.map(f64::tanh),
        local_grad: latent.map(tanh_grad),
    }
}

#[inline]
pub fn tanh_grad(z: f64) -> f64 {
    let t = z.tanh();
    1.0 - t * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gfsq::{gfsq_decode, gfsq_encode};

    #[test]
    fn forward_is_grid_quantization() {
        let cfg = GfsqConfig::new(2, vec![3, 5], 1).unwrap();
        let z = FrameTensor::from_fn([2, 4, 9], |b, c, l| ((b * 31 + c * 7 + l) as f64 * 0.71).sin() * 2.5);
        let out = ste_quantize(&z, &cfg).unwrap();
        assert_eq!(out.quantized, gfsq_decode(&gfsq_encode(&z, &cfg).unwrap()).unwrap());
    }

    #[test]
    fn zero_input_passes_gradient_unchanged() {
        let cfg = GfsqConfig::new(1, vec![3], 1).unwrap();
        let z = FrameTensor::zeros([1, 1, 4]);
        let out = ste_quantize(&z, &cfg).unwrap();
        assert!(out.quantized.data().iter().all(|&v| v == 0.0));
        let g = FrameTensor::new([1, 1, 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(out.backward(&g).unwrap(), g);
    }
}
