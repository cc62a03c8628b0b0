//! A small, self-contained f64 engine for spatiotemporal convolutional
//! networks: 3-D convolution, batch normalization, rectifiers, factorized
//! spatial+temporal blocks and residual blocks, each with an explicit
//! backward pass.
//!
//! Everything is sequential and allocation-predictable, so identical inputs
//! produce bit-identical outputs and gradients on every run.

mod batchnorm;
mod blocks;
mod conv;
mod init;

pub use batchnorm::BatchNorm3d;
pub use blocks::{BasicBlock, FactorizedConv, FactorizedConvSpec, RegBlock, RegBlockSpec};
pub use conv::{Conv3d, Conv3dSpec};
pub use init::kaiming_normal;

use ndarray::{Array5, ArrayD};

/// Activations flow through the network as `[batch, channels, frames, height,
/// width]` tensors.
pub type Act = Array5<f64>;

/// Layer behavior switch: training mode uses batch statistics in
/// normalization layers, evaluation mode uses the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named trainable tensor together with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    pub frozen: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
            frozen: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// SHA-256 over the little-endian bytes of the values. Bit-identical
    /// parameters yield identical checksums.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for v in self.value.iter() {
            hasher.update(v.to_le_bytes());
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Rectifier with a cached mask for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Act, keep_cache: bool) -> Act {
        if keep_cache {
            let mut mask = Vec::with_capacity(x.len());
            for v in x.iter_mut() {
                mask.push(*v > 0.0);
                if *v <= 0.0 {
                    *v = 0.0;
                }
            }
            self.mask = Some(mask);
        } else {
            x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
            self.mask = None;
        }
        x
    }

    pub fn backward(&mut self, mut dout: Act) -> Act {
        let mask = self
            .mask
            .take()
            .expect("relu backward without cached forward");
        for (d, keep) in dout.iter_mut().zip(mask.iter()) {
            if !keep {
                *d = 0.0;
            }
        }
        dout
    }
}
