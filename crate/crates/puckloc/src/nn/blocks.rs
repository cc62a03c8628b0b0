use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Act, BatchNorm3d, Conv3d, Conv3dSpec, Mode, Param, Relu};
use crate::error::{Error, Result};

/// A 3-D convolution factorized into a spatial `1 x d x d` convolution and a
/// temporal `t x 1 x 1` convolution with batch normalization and a rectifier
/// between the halves. The intermediate width follows the parameter-matching
/// rule of the architecture family:
/// `M = floor(t * d^2 * N_in * N_out / (d^2 * N_in + t * N_out))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactorizedConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub spatial_kernel: usize,
    pub temporal_kernel: usize,
    pub spatial_stride: usize,
    pub temporal_stride: usize,
    pub mid_channels: usize,
}

impl FactorizedConvSpec {
    pub fn with_matched_params(
        in_channels: usize,
        out_channels: usize,
        spatial_kernel: usize,
        temporal_kernel: usize,
        spatial_stride: usize,
        temporal_stride: usize,
    ) -> Result<Self> {
        let d2 = spatial_kernel * spatial_kernel;
        let t = temporal_kernel;
        let denom = d2 * in_channels + t * out_channels;
        let mid_channels = (t * d2 * in_channels * out_channels) / denom;
        if mid_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "factorized conv {in_channels}->{out_channels} (d={spatial_kernel}, t={t}) \
                 yields zero intermediate channels"
            )));
        }
        let spec = Self {
            in_channels,
            out_channels,
            spatial_kernel,
            temporal_kernel,
            spatial_stride,
            temporal_stride,
            mid_channels,
        };
        debug_assert!(spec.factorized_weight_count() <= spec.full_weight_count());
        Ok(spec)
    }

    pub fn full_weight_count(&self) -> usize {
        self.out_channels
            * self.in_channels
            * self.temporal_kernel
            * self.spatial_kernel
            * self.spatial_kernel
    }

    pub fn factorized_weight_count(&self) -> usize {
        self.mid_channels * self.in_channels * self.spatial_kernel * self.spatial_kernel
            + self.out_channels * self.mid_channels * self.temporal_kernel
    }
}

#[derive(Debug, Clone)]
pub struct FactorizedConv {
    pub spec: FactorizedConvSpec,
    pub spatial: Conv3d,
    pub mid_bn: BatchNorm3d,
    mid_relu: Relu,
    pub temporal: Conv3d,
}

impl FactorizedConv {
    pub fn new(name: &str, spec: FactorizedConvSpec, rng: &mut ChaCha8Rng) -> Self {
        let d = spec.spatial_kernel;
        let t = spec.temporal_kernel;
        let spatial = Conv3d::new(
            &format!("{name}.spatial"),
            Conv3dSpec {
                in_channels: spec.in_channels,
                out_channels: spec.mid_channels,
                kernel: (1, d, d),
                stride: (1, spec.spatial_stride, spec.spatial_stride),
                padding: (0, d / 2, d / 2),
            },
            rng,
        );
        let mid_bn = BatchNorm3d::new(&format!("{name}.mid_bn"), spec.mid_channels, rng);
        let temporal = Conv3d::new(
            &format!("{name}.temporal"),
            Conv3dSpec {
                in_channels: spec.mid_channels,
                out_channels: spec.out_channels,
                kernel: (t, 1, 1),
                stride: (spec.temporal_stride, 1, 1),
                padding: (t / 2, 0, 0),
            },
            rng,
        );
        Self {
            spec,
            spatial,
            mid_bn,
            mid_relu: Relu::default(),
            temporal,
        }
    }

    pub fn out_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        self.temporal
            .spec
            .out_shape(self.spatial.spec.out_shape(input)?)
    }

    pub fn forward(&mut self, x: &Act, mode: Mode, keep_cache: bool) -> Result<Act> {
        let mid = self.spatial.forward(x, keep_cache)?;
        let mid = self.mid_bn.forward(&mid, mode, keep_cache)?;
        let mid = self.mid_relu.forward(mid, keep_cache);
        self.temporal.forward(&mid, keep_cache)
    }

    pub fn backward(&mut self, dout: &Act, need_dx: bool) -> Result<Option<Act>> {
        // dx through the temporal half is needed whenever the spatial half
        // still wants gradients.
        let inner_needed = need_dx || !self.spatial.weight.frozen || !self.mid_bn.gamma.frozen;
        let d = match self.temporal.backward(dout, inner_needed)? {
            Some(d) => d,
            None => return Ok(None),
        };
        let d = self.mid_relu.backward(d);
        let d = self.mid_bn.backward(&d)?;
        self.spatial.backward(&d, need_dx)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.spatial.visit_params(f);
        self.mid_bn.visit_params(f);
        self.temporal.visit_params(f);
    }

    pub fn visit_bns(&mut self, f: &mut dyn FnMut(&mut BatchNorm3d)) {
        f(&mut self.mid_bn);
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.spatial.set_frozen(frozen);
        self.mid_bn.set_frozen(frozen);
        self.temporal.set_frozen(frozen);
    }
}

/// A residual basic block of two factorized convolutions. When the block
/// changes resolution or width, the skip path carries a strided 1x1x1
/// projection with its own batch normalization.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub conv1: FactorizedConv,
    pub bn1: BatchNorm3d,
    relu1: Relu,
    pub conv2: FactorizedConv,
    pub bn2: BatchNorm3d,
    pub downsample: Option<(Conv3d, BatchNorm3d)>,
    out_relu: Relu,
}

impl BasicBlock {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let conv1 = FactorizedConv::new(
            &format!("{name}.conv1"),
            FactorizedConvSpec::with_matched_params(in_channels, out_channels, 3, 3, stride, stride)?,
            rng,
        );
        let bn1 = BatchNorm3d::new(&format!("{name}.bn1"), out_channels, rng);
        let conv2 = FactorizedConv::new(
            &format!("{name}.conv2"),
            FactorizedConvSpec::with_matched_params(out_channels, out_channels, 3, 3, 1, 1)?,
            rng,
        );
        let bn2 = BatchNorm3d::new(&format!("{name}.bn2"), out_channels, rng);
        let downsample = if stride != 1 || in_channels != out_channels {
            let conv = Conv3d::new(
                &format!("{name}.downsample.conv"),
                Conv3dSpec {
                    in_channels,
                    out_channels,
                    kernel: (1, 1, 1),
                    stride: (stride, stride, stride),
                    padding: (0, 0, 0),
                },
                rng,
            );
            let bn = BatchNorm3d::new(&format!("{name}.downsample.bn"), out_channels, rng);
            Some((conv, bn))
        } else {
            None
        };
        Ok(Self {
            conv1,
            bn1,
            relu1: Relu::default(),
            conv2,
            bn2,
            downsample,
            out_relu: Relu::default(),
        })
    }

    pub fn forward(&mut self, x: &Act, mode: Mode, keep_cache: bool) -> Result<Act> {
        let h = self.conv1.forward(x, mode, keep_cache)?;
        let h = self.bn1.forward(&h, mode, keep_cache)?;
        let h = self.relu1.forward(h, keep_cache);
        let h = self.conv2.forward(&h, mode, keep_cache)?;
        let mut h = self.bn2.forward(&h, mode, keep_cache)?;
        let skip = match &mut self.downsample {
            Some((conv, bn)) => {
                let s = conv.forward(x, keep_cache)?;
                bn.forward(&s, mode, keep_cache)?
            }
            None => {
                // Identity skip: for backward all we need is nothing at all,
                // the gradient flows through unchanged.
                x.clone()
            }
        };
        h += &skip;
        Ok(self.out_relu.forward(h, keep_cache))
    }

    pub fn backward(&mut self, dout: &Act, need_dx: bool) -> Result<Option<Act>> {
        let d_sum = self.out_relu.backward(dout.clone());
        // Skip branch.
        let mut dx_skip: Option<Act> = None;
        match &mut self.downsample {
            Some((conv, bn)) => {
                let has_grads = !conv.weight.frozen || !bn.gamma.frozen;
                if has_grads || need_dx {
                    let d = bn.backward(&d_sum)?;
                    dx_skip = conv.backward(&d, need_dx)?;
                }
            }
            None => {
                if need_dx {
                    dx_skip = Some(d_sum.clone());
                }
            }
        }
        // Main branch.
        let main_trainable = !self.conv1.spatial.weight.frozen || !self.bn1.gamma.frozen;
        let d = self.bn2.backward(&d_sum)?;
        let d = self.conv2.backward(&d, need_dx || main_trainable)?;
        let dx_main = match d {
            Some(d) => {
                let d = self.relu1.backward(d);
                let d = self.bn1.backward(&d)?;
                self.conv1.backward(&d, need_dx)?
            }
            None => None,
        };
        Ok(match (dx_main, dx_skip) {
            (Some(mut a), Some(b)) => {
                a += &b;
                Some(a)
            }
            (a, b) => a.or(b),
        })
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
        if let Some((conv, bn)) = &mut self.downsample {
            conv.visit_params(f);
            bn.visit_params(f);
        }
    }

    pub fn visit_bns(&mut self, f: &mut dyn FnMut(&mut BatchNorm3d)) {
        self.conv1.visit_bns(f);
        f(&mut self.bn1);
        self.conv2.visit_bns(f);
        f(&mut self.bn2);
        if let Some((_, bn)) = &mut self.downsample {
            f(bn);
        }
    }

    /// Freezes/unfreezes the two conv layers individually; `which` selects
    /// the first (conv1 + bn1 + downsample) or second (conv2 + bn2) conv
    /// layer of the block.
    pub fn set_conv_frozen(&mut self, which: usize, frozen: bool) {
        match which {
            0 => {
                self.conv1.set_frozen(frozen);
                self.bn1.set_frozen(frozen);
                if let Some((conv, bn)) = &mut self.downsample {
                    conv.set_frozen(frozen);
                    bn.set_frozen(frozen);
                }
            }
            1 => {
                self.conv2.set_frozen(frozen);
                self.bn2.set_frozen(frozen);
            }
            _ => unreachable!("basic block has two conv layers"),
        }
    }
}

/// Spec for a regression block: a purely temporal/channel-reducing
/// convolution (spatial kernel fixed at 1x1, padding 0) followed by batch
/// normalization and a rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
}

#[derive(Debug, Clone)]
pub struct RegBlock {
    pub conv: Conv3d,
    pub bn: BatchNorm3d,
    relu: Relu,
}

impl RegBlock {
    pub fn new(name: &str, spec: RegBlockSpec, rng: &mut ChaCha8Rng) -> Self {
        let conv = Conv3d::new(
            &format!("{name}.conv"),
            Conv3dSpec {
                in_channels: spec.in_channels,
                out_channels: spec.out_channels,
                kernel: (spec.temporal_kernel, 1, 1),
                stride: (spec.temporal_stride, 1, 1),
                padding: (0, 0, 0),
            },
            rng,
        );
        let bn = BatchNorm3d::new(&format!("{name}.bn"), spec.out_channels, rng);
        Self {
            conv,
            bn,
            relu: Relu::default(),
        }
    }

    pub fn forward(&mut self, x: &Act, mode: Mode, keep_cache: bool) -> Result<Act> {
        let h = self.conv.forward(x, keep_cache)?;
        let h = self.bn.forward(&h, mode, keep_cache)?;
        Ok(self.relu.forward(h, keep_cache))
    }

    pub fn backward(&mut self, dout: &Act, need_dx: bool) -> Result<Option<Act>> {
        let d = self.relu.backward(dout.clone());
        let d = self.bn.backward(&d)?;
        self.conv.backward(&d, need_dx)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_params(f);
        self.bn.visit_params(f);
    }

    pub fn visit_bns(&mut self, f: &mut dyn FnMut(&mut BatchNorm3d)) {
        f(&mut self.bn);
    }
}
