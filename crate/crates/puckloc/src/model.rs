//! The spatiotemporal regression network: a truncated factorized-(2+1)D
//! feature extractor (stem plus the first two residual stages, nine
//! convolutional layers) followed by two purely temporal regression blocks
//! that collapse the features into a single heatmap.

use ndarray::{Array3, ArrayD, Axis};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{
    Act, BasicBlock, BatchNorm3d, FactorizedConv, FactorizedConvSpec, Mode, Param, RegBlock,
    RegBlockSpec, Relu,
};
use crate::seed::rng_for;

/// Number of convolutional layers in the extractor: the stem counts as one,
/// each residual basic block as two.
pub const EXTRACTOR_DEPTH: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelScale {
    /// Full-size network; the forward shape chain is asserted at build time.
    Paper,
    /// Small configuration for desk-scale training and numerical tests.
    Toy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub scale: ModelScale,
    pub in_channels: usize,
    pub input_frames: usize,
    pub input_size: usize,
    pub stem_channels: usize,
    pub stage2_channels: usize,
    pub stage3_channels: usize,
    pub heatmap_width: usize,
    pub heatmap_height: usize,
    pub frozen_prefix: usize,
    pub reg_a: RegBlockSpec,
    pub reg_b: RegBlockSpec,
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            scale: ModelScale::Paper,
            in_channels: 3,
            input_frames: 16,
            input_size: 256,
            stem_channels: 64,
            stage2_channels: 64,
            stage3_channels: 128,
            heatmap_width: 64,
            heatmap_height: 64,
            frozen_prefix: 5,
            reg_a: RegBlockSpec {
                in_channels: 128,
                out_channels: 32,
                temporal_kernel: 4,
                temporal_stride: 4,
            },
            reg_b: RegBlockSpec {
                in_channels: 32,
                out_channels: 1,
                temporal_kernel: 2,
                temporal_stride: 2,
            },
        }
    }

    /// 8-frame 64-px configuration producing a 16x16 heatmap. Every
    /// numerical test trains this in seconds on a CPU.
    pub fn toy() -> Self {
        Self {
            scale: ModelScale::Toy,
            in_channels: 3,
            input_frames: 8,
            input_size: 64,
            stem_channels: 8,
            stage2_channels: 8,
            stage3_channels: 16,
            heatmap_width: 16,
            heatmap_height: 16,
            frozen_prefix: 0,
            reg_a: RegBlockSpec {
                in_channels: 16,
                out_channels: 4,
                temporal_kernel: 2,
                temporal_stride: 2,
            },
            reg_b: RegBlockSpec {
                in_channels: 4,
                out_channels: 1,
                temporal_kernel: 2,
                temporal_stride: 2,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.input_frames == 0
            || self.input_size == 0
            || self.stem_channels == 0
            || self.stage2_channels == 0
            || self.stage3_channels == 0
        {
            return Err(Error::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        if self.frozen_prefix > EXTRACTOR_DEPTH {
            return Err(Error::InvalidArgument(format!(
                "frozen prefix {} exceeds extractor depth {EXTRACTOR_DEPTH}",
                self.frozen_prefix
            )));
        }
        if self.reg_a.in_channels != self.stage3_channels {
            return Err(Error::Shape(format!(
                "reg_a expects {} input channels but stage 3 emits {}",
                self.reg_a.in_channels, self.stage3_channels
            )));
        }
        if self.reg_b.in_channels != self.reg_a.out_channels {
            return Err(Error::Shape(format!(
                "reg_b expects {} input channels but reg_a emits {}",
                self.reg_b.in_channels, self.reg_a.out_channels
            )));
        }
        if self.reg_b.out_channels != 1 {
            return Err(Error::Shape(format!(
                "reg_b must emit a single channel, got {}",
                self.reg_b.out_channels
            )));
        }
        Ok(())
    }
}

/// One station of the forward shape chain, in `(frames, channels, height,
/// width)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainLink {
    pub name: String,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ChainLink {
    fn new(name: &str, frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            name: name.to_string(),
            frames,
            channels,
            height,
            width,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.channels, self.height, self.width)
    }
}

/// Outcome of loading a pretrained extractor archive.
#[derive(Debug, Clone, Default)]
pub struct PretrainReport {
    pub matched: Vec<String>,
    pub unmatched_model: Vec<String>,
    pub unmatched_archive: Vec<String>,
}

pub struct PuckNet {
    cfg: ModelConfig,
    stem: FactorizedConv,
    stem_bn: BatchNorm3d,
    stem_relu: Relu,
    stage2: Vec<BasicBlock>,
    stage3: Vec<BasicBlock>,
    reg_a: RegBlock,
    reg_b: RegBlock,
    mode: Mode,
    step: u64,
}

impl PuckNet {
    /// Builds the network with seeded initialization and verifies the full
    /// forward shape chain. At paper scale the published chain is asserted
    /// exactly; a mismatch is a build error naming the offending layer.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(seed, "model/init");
        let stem_spec = FactorizedConvSpec::with_matched_params(
            cfg.in_channels,
            cfg.stem_channels,
            7,
            3,
            2,
            1,
        )?;
        let stem = FactorizedConv::new("extractor.stem", stem_spec, &mut rng);
        let stem_bn = BatchNorm3d::new("extractor.stem_bn", cfg.stem_channels, &mut rng);
        let stage2 = vec![
            BasicBlock::new(
                "extractor.stage2.0",
                cfg.stem_channels,
                cfg.stage2_channels,
                1,
                &mut rng,
            )?,
            BasicBlock::new(
                "extractor.stage2.1",
                cfg.stage2_channels,
                cfg.stage2_channels,
                1,
                &mut rng,
            )?,
        ];
        let stage3 = vec![
            BasicBlock::new(
                "extractor.stage3.0",
                cfg.stage2_channels,
                cfg.stage3_channels,
                2,
                &mut rng,
            )?,
            BasicBlock::new(
                "extractor.stage3.1",
                cfg.stage3_channels,
                cfg.stage3_channels,
                1,
                &mut rng,
            )?,
        ];
        let reg_a = RegBlock::new("reg_a", cfg.reg_a, &mut rng);
        let reg_b = RegBlock::new("reg_b", cfg.reg_b, &mut rng);

        let mut model = Self {
            cfg: cfg.clone(),
            stem,
            stem_bn,
            stem_relu: Relu::default(),
            stage2,
            stage3,
            reg_a,
            reg_b,
            mode: Mode::Train,
            step: 0,
        };
        let chain = model.shape_chain()?;
        let last = chain.last().expect("chain is never empty");
        if last.frames != 1 || last.channels != 1 {
            return Err(Error::Shape(format!(
                "{}: expected a single 1-frame channel before the squeeze, got {}x{}",
                last.name, last.frames, last.channels
            )));
        }
        if last.width != cfg.heatmap_width || last.height != cfg.heatmap_height {
            return Err(Error::Shape(format!(
                "{}: network emits {}x{} but the config promises a {}x{} heatmap",
                last.name, last.width, last.height, cfg.heatmap_width, cfg.heatmap_height
            )));
        }
        if cfg.scale == ModelScale::Paper {
            let expect = [
                ("input", (16, 3, 256, 256)),
                ("extractor.stem", (16, 64, 128, 128)),
                ("extractor.stage2", (16, 64, 128, 128)),
                ("extractor.stage3", (8, 128, 64, 64)),
                ("reg_a", (2, 32, 64, 64)),
                ("reg_b", (1, 1, 64, 64)),
            ];
            for (link, (name, dims)) in chain.iter().zip(expect.iter()) {
                if link.dims() != *dims {
                    return Err(Error::Shape(format!(
                        "paper-scale chain mismatch at {name}: expected {dims:?}, got {:?}",
                        link.dims()
                    )));
                }
            }
        }
        model.freeze_prefix(cfg.frozen_prefix)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn bump_step(&mut self) {
        self.step += 1;
    }

    /// The symbolic forward shape chain for the configured input.
    pub fn shape_chain(&self) -> Result<Vec<ChainLink>> {
        let cfg = &self.cfg;
        let mut chain = vec![ChainLink::new(
            "input",
            cfg.input_frames,
            cfg.in_channels,
            cfg.input_size,
            cfg.input_size,
        )];
        let named = |name: &str, c: usize, dims: (usize, usize, usize)| {
            ChainLink::new(name, dims.0, c, dims.1, dims.2)
        };
        let mut dims = (cfg.input_frames, cfg.input_size, cfg.input_size);
        dims = self
            .stem
            .out_shape(dims)
            .map_err(|e| Error::Shape(format!("extractor.stem: {e}")))?;
        chain.push(named("extractor.stem", cfg.stem_channels, dims));
        for (i, block) in self.stage2.iter().enumerate() {
            dims = block
                .conv2
                .out_shape(block.conv1.out_shape(dims).map_err(|e| {
                    Error::Shape(format!("extractor.stage2.{i}.conv1: {e}"))
                })?)
                .map_err(|e| Error::Shape(format!("extractor.stage2.{i}.conv2: {e}")))?;
        }
        chain.push(named("extractor.stage2", cfg.stage2_channels, dims));
        for (i, block) in self.stage3.iter().enumerate() {
            dims = block
                .conv2
                .out_shape(block.conv1.out_shape(dims).map_err(|e| {
                    Error::Shape(format!("extractor.stage3.{i}.conv1: {e}"))
                })?)
                .map_err(|e| Error::Shape(format!("extractor.stage3.{i}.conv2: {e}")))?;
        }
        chain.push(named("extractor.stage3", cfg.stage3_channels, dims));
        dims = self
            .reg_a
            .conv
            .spec
            .out_shape(dims)
            .map_err(|e| Error::Shape(format!("reg_a.conv: {e}")))?;
        chain.push(named("reg_a", cfg.reg_a.out_channels, dims));
        dims = self
            .reg_b
            .conv
            .spec
            .out_shape(dims)
            .map_err(|e| Error::Shape(format!("reg_b.conv: {e}")))?;
        chain.push(named("reg_b", cfg.reg_b.out_channels, dims));
        Ok(chain)
    }

    /// Runs the network on a batch of clips, returning one heatmap per clip.
    /// Shape violations fail before any compute. Enable `keep_cache` when a
    /// backward pass follows.
    pub fn forward(&mut self, x: &Act, keep_cache: bool) -> Result<Array3<f64>> {
        let (nb, c, t, h, w) = x.dim();
        if nb == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if c != self.cfg.in_channels
            || t != self.cfg.input_frames
            || h != self.cfg.input_size
            || w != self.cfg.input_size
        {
            return Err(Error::Shape(format!(
                "input batch {:?} does not match configured {}x{}x{}x{} clips",
                x.dim(),
                self.cfg.in_channels,
                self.cfg.input_frames,
                self.cfg.input_size,
                self.cfg.input_size
            )));
        }
        let mode = self.mode;
        let h = self.stem.forward(x, mode, keep_cache)?;
        let h = self.stem_bn.forward(&h, mode, keep_cache)?;
        let mut h = self.stem_relu.forward(h, keep_cache);
        for block in &mut self.stage2 {
            h = block.forward(&h, mode, keep_cache)?;
        }
        for block in &mut self.stage3 {
            h = block.forward(&h, mode, keep_cache)?;
        }
        let h = self.reg_a.forward(&h, mode, keep_cache)?;
        let h = self.reg_b.forward(&h, mode, keep_cache)?;
        let (nb, c1, t1, hh, ww) = h.dim();
        debug_assert!(c1 == 1 && t1 == 1);
        Ok(h
            .into_shape_with_order((nb, hh, ww))
            .expect("squeeze of contiguous tensor"))
    }

    /// Backpropagates a heatmap gradient, accumulating parameter gradients.
    /// The pass stops descending once every remaining layer is frozen.
    pub fn backward(&mut self, dheatmap: &Array3<f64>) -> Result<()> {
        let (nb, h, w) = dheatmap.dim();
        let d: Act = dheatmap
            .clone()
            .insert_axis(Axis(1))
            .insert_axis(Axis(2))
            .into_shape_with_order((nb, 1, 1, h, w))
            .expect("expand of contiguous tensor");

        // Trainability per component, in forward order: stem, 2x stage2,
        // 2x stage3, reg_a, reg_b.
        let trainable = [
            fc_trainable(&mut self.stem),
            block_trainable(&mut self.stage2[0]),
            block_trainable(&mut self.stage2[1]),
            block_trainable(&mut self.stage3[0]),
            block_trainable(&mut self.stage3[1]),
            true, // regression blocks are never frozen
            true,
        ];
        let need_below = |i: usize| trainable[..i].iter().any(|t| *t);

        let d = match self.reg_b.backward(&d, need_below(6))? {
            Some(d) => d,
            None => return Ok(()),
        };
        let mut d = match self.reg_a.backward(&d, need_below(5))? {
            Some(d) => d,
            None => return Ok(()),
        };
        for (idx, block) in [(4usize, 1usize), (3, 0)] {
            d = match self.stage3[block].backward(&d, need_below(idx))? {
                Some(d) => d,
                None => return Ok(()),
            };
        }
        for (idx, block) in [(2usize, 1usize), (1, 0)] {
            d = match self.stage2[block].backward(&d, need_below(idx))? {
                Some(d) => d,
                None => return Ok(()),
            };
        }
        if trainable[0] {
            let d = self.stem_relu.backward(d);
            let d = self.stem_bn.backward(&d)?;
            self.stem.backward(&d, false)?;
        }
        Ok(())
    }

    /// Freezes the first `n` convolutional layers of the extractor (stem
    /// first, then the residual-stage convolutions in order) together with
    /// their normalization layers; everything else becomes trainable.
    pub fn freeze_prefix(&mut self, n: usize) -> Result<()> {
        if n > EXTRACTOR_DEPTH {
            return Err(Error::InvalidArgument(format!(
                "frozen prefix {n} exceeds extractor depth {EXTRACTOR_DEPTH}"
            )));
        }
        let frozen = |layer: usize| layer <= n;
        self.stem.set_frozen(frozen(1));
        self.stem_bn.set_frozen(frozen(1));
        for (b, block) in self.stage2.iter_mut().enumerate() {
            block.set_conv_frozen(0, frozen(2 + 2 * b));
            block.set_conv_frozen(1, frozen(3 + 2 * b));
        }
        for (b, block) in self.stage3.iter_mut().enumerate() {
            block.set_conv_frozen(0, frozen(6 + 2 * b));
            block.set_conv_frozen(1, frozen(7 + 2 * b));
        }
        self.cfg.frozen_prefix = n;
        Ok(())
    }

    pub fn frozen_prefix(&self) -> usize {
        self.cfg.frozen_prefix
    }

    /// Forces every normalization layer to use (and stop updating) its
    /// running statistics even in training mode.
    pub fn set_bn_stats_locked(&mut self, locked: bool) {
        self.visit_bns(&mut |bn| bn.stats_locked = locked);
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stem.visit_params(f);
        self.stem_bn.visit_params(f);
        for block in &mut self.stage2 {
            block.visit_params(f);
        }
        for block in &mut self.stage3 {
            block.visit_params(f);
        }
        self.reg_a.visit_params(f);
        self.reg_b.visit_params(f);
    }

    pub fn visit_bns(&mut self, f: &mut dyn FnMut(&mut BatchNorm3d)) {
        self.stem.visit_bns(f);
        f(&mut self.stem_bn);
        for block in &mut self.stage2 {
            block.visit_bns(f);
        }
        for block in &mut self.stage3 {
            block.visit_bns(f);
        }
        self.reg_a.visit_bns(f);
        self.reg_b.visit_bns(f);
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    pub fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |p| names.push(p.name.clone()));
        names
    }

    /// Checksums of every parameter tensor, keyed by name.
    pub fn param_checksums(&mut self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        self.visit_params(&mut |p| {
            out.insert(p.name.clone(), p.checksum());
        });
        out
    }

    /// Names of parameters frozen by the current prefix.
    pub fn frozen_param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |p| {
            if p.frozen {
                names.push(p.name.clone());
            }
        });
        names
    }

    /// Every tensor that defines the model state: parameters plus batch-norm
    /// running statistics, in a fixed traversal order.
    pub fn state_tensors(&mut self) -> Vec<(String, ArrayD<f64>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push((p.name.clone(), p.value.clone())));
        self.visit_bns(&mut |bn| {
            for (name, buf) in bn.buffers() {
                out.push((name, buf.into_dyn()));
            }
        });
        out
    }

    /// Strictly restores model state from named tensors; every tensor must
    /// exist with a matching shape.
    pub fn load_state(&mut self, tensors: &BTreeMap<String, ArrayD<f64>>) -> Result<()> {
        let mut missing = Vec::new();
        self.visit_params(&mut |p| match tensors.get(&p.name) {
            Some(t) if t.shape() == p.value.shape() => p.value.assign(t),
            Some(_) => missing.push(format!("{} (shape mismatch)", p.name)),
            None => missing.push(p.name.clone()),
        });
        let mut buffer_err = Vec::new();
        self.visit_bns(&mut |bn| {
            for (name, _) in bn.buffers() {
                match tensors.get(&name) {
                    Some(t) => {
                        let flat = t.view().into_dimensionality::<ndarray::Ix1>();
                        match flat {
                            Ok(v) => {
                                if bn.set_buffer(&name, &v.to_owned()).is_err() {
                                    buffer_err.push(name.clone());
                                }
                            }
                            Err(_) => buffer_err.push(name.clone()),
                        }
                    }
                    None => buffer_err.push(name.clone()),
                }
            }
        });
        if !missing.is_empty() || !buffer_err.is_empty() {
            missing.extend(buffer_err);
            return Err(Error::Checkpoint(format!(
                "checkpoint does not match model: {}",
                missing.join(", ")
            )));
        }
        Ok(())
    }

    /// Loads extractor tensors whose names and shapes match; regression
    /// blocks keep their random initialization. Zero matches is not an
    /// error. Loading the same archive twice is idempotent.
    pub fn load_pretrained(&mut self, tensors: &BTreeMap<String, ArrayD<f64>>) -> PretrainReport {
        let mut report = PretrainReport::default();
        let mut seen = std::collections::BTreeSet::new();
        self.visit_params(&mut |p| {
            if p.name.starts_with("extractor.") {
                match tensors.get(&p.name) {
                    Some(t) if t.shape() == p.value.shape() => {
                        p.value.assign(t);
                        seen.insert(p.name.clone());
                        report.matched.push(p.name.clone());
                    }
                    _ => report.unmatched_model.push(p.name.clone()),
                }
            } else {
                report.unmatched_model.push(p.name.clone());
            }
        });
        self.visit_bns(&mut |bn| {
            let names: Vec<String> = bn.buffers().into_iter().map(|(n, _)| n).collect();
            for name in names {
                if !name.starts_with("extractor.") {
                    report.unmatched_model.push(name);
                    continue;
                }
                match tensors.get(&name) {
                    Some(t) => {
                        if let Ok(v) = t.view().into_dimensionality::<ndarray::Ix1>() {
                            if bn.set_buffer(&name, &v.to_owned()).is_ok() {
                                seen.insert(name.clone());
                                report.matched.push(name);
                                continue;
                            }
                        }
                        report.unmatched_model.push(name);
                    }
                    None => report.unmatched_model.push(name),
                }
            }
        });
        for name in tensors.keys() {
            if !seen.contains(name) {
                report.unmatched_archive.push(name.clone());
            }
        }
        report
    }
}

fn fc_trainable(fc: &mut FactorizedConv) -> bool {
    let mut any = false;
    fc.visit_params(&mut |p| any |= !p.frozen);
    any
}

fn block_trainable(block: &mut BasicBlock) -> bool {
    let mut any = false;
    block.visit_params(&mut |p| any |= !p.frozen);
    any
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array5;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_shape_chain() {
        let model = PuckNet::build(&ModelConfig::toy(), 1).unwrap();
        let chain = model.shape_chain().unwrap();
        let dims: Vec<_> = chain.iter().map(|l| l.dims()).collect();
        assert_eq!(
            dims,
            vec![
                (8, 3, 64, 64),
                (8, 8, 32, 32),
                (8, 8, 32, 32),
                (4, 16, 16, 16),
                (2, 4, 16, 16),
                (1, 1, 16, 16),
            ]
        );
    }

    #[test]
    fn toy_forward_is_finite_and_nonnegative() {
        let mut model = PuckNet::build(&ModelConfig::toy(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array5::from_shape_fn((2, 3, 8, 64, 64), |_| rng.random::<f64>() * 2.0 - 1.0);
        let y = model.forward(&x, false).unwrap();
        assert_eq!(y.dim(), (2, 16, 16));
        assert!(y.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn forward_rejects_wrong_shape_before_compute() {
        let mut model = PuckNet::build(&ModelConfig::toy(), 2).unwrap();
        let x = Array5::zeros((1, 3, 8, 32, 32));
        assert!(model.forward(&x, false).is_err());
        let x = Array5::zeros((1, 1, 8, 64, 64));
        assert!(model.forward(&x, false).is_err());
    }

    #[test]
    fn duplicated_clip_rows_are_identical_in_eval_mode() {
        let mut model = PuckNet::build(&ModelConfig::toy(), 4).unwrap();
        model.set_mode(Mode::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let one = Array5::from_shape_fn((1, 3, 8, 64, 64), |_| rng.random::<f64>());
        let mut batch = Array5::zeros((3, 3, 8, 64, 64));
        for n in 0..3 {
            batch.index_axis_mut(Axis(0), n).assign(&one.index_axis(Axis(0), 0));
        }
        let y = model.forward(&batch, false).unwrap();
        for n in 1..3 {
            for r in 0..16 {
                for c in 0..16 {
                    assert_eq!(y[(0, r, c)], y[(n, r, c)]);
                }
            }
        }
    }

    #[test]
    fn freeze_prefix_five_splits_stages() {
        let mut model = PuckNet::build(&ModelConfig::toy(), 6).unwrap();
        model.freeze_prefix(5).unwrap();
        let mut frozen = Vec::new();
        let mut trainable = Vec::new();
        model.visit_params(&mut |p| {
            if p.frozen {
                frozen.push(p.name.clone());
            } else {
                trainable.push(p.name.clone());
            }
        });
        assert!(frozen.iter().all(|n| n.starts_with("extractor.stem")
            || n.starts_with("extractor.stage2")));
        assert!(frozen.iter().any(|n| n.starts_with("extractor.stem.")));
        assert!(frozen.iter().any(|n| n.starts_with("extractor.stage2.1.conv2")));
        assert!(trainable.iter().any(|n| n.starts_with("extractor.stage3.0")));
        assert!(trainable.iter().any(|n| n.starts_with("reg_a.")));
        assert!(trainable.iter().any(|n| n.starts_with("reg_b.")));

        model.freeze_prefix(0).unwrap();
        let mut any_frozen = false;
        model.visit_params(&mut |p| any_frozen |= p.frozen);
        assert!(!any_frozen);

        assert!(model.freeze_prefix(10).is_err());
    }

    #[test]
    fn invalid_regblock_wiring_is_a_build_error() {
        let mut cfg = ModelConfig::toy();
        cfg.reg_a.in_channels = 99;
        assert!(PuckNet::build(&cfg, 0).is_err());

        // Temporal collapse that never reaches one frame.
        let mut cfg = ModelConfig::toy();
        cfg.reg_b.temporal_kernel = 4;
        cfg.reg_b.temporal_stride = 4;
        assert!(PuckNet::build(&cfg, 0).is_err());
    }

    #[test]
    fn load_pretrained_matches_extractor_only() {
        let mut src = PuckNet::build(&ModelConfig::toy(), 10).unwrap();
        let mut dst = PuckNet::build(&ModelConfig::toy(), 11).unwrap();
        let archive: BTreeMap<String, ArrayD<f64>> =
            src.state_tensors().into_iter().collect();
        let report = dst.load_pretrained(&archive);
        assert!(report.matched.iter().all(|n| n.starts_with("extractor.")));
        assert!(report
            .unmatched_archive
            .iter()
            .all(|n| n.starts_with("reg_")));
        // Idempotent: loading twice leaves identical checksums.
        let first = dst.param_checksums();
        dst.load_pretrained(&archive);
        assert_eq!(first, dst.param_checksums());
        // Extractor now matches the source, regblocks do not.
        let src_sums = src.param_checksums();
        let dst_sums = dst.param_checksums();
        for (name, sum) in &src_sums {
            if name.starts_with("extractor.") {
                assert_eq!(sum, &dst_sums[name], "{name}");
            }
        }
        assert_ne!(src_sums["reg_a.conv.weight"], dst_sums["reg_a.conv.weight"]);
    }

    #[test]
    fn empty_archive_reports_everything_unmatched() {
        let mut model = PuckNet::build(&ModelConfig::toy(), 12).unwrap();
        let before = model.param_checksums();
        let report = model.load_pretrained(&BTreeMap::new());
        assert!(report.matched.is_empty());
        assert!(!report.unmatched_model.is_empty());
        assert_eq!(before, model.param_checksums());
        // Model still usable.
        let x = Array5::zeros((1, 3, 8, 64, 64));
        assert!(model.forward(&x, false).is_ok());
    }
}
