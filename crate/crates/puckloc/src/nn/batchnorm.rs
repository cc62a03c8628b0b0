use ndarray::Array1;
use rand_chacha::ChaCha8Rng;

use super::{Act, Mode, Param};
use crate::error::{Error, Result};

/// Per-channel batch normalization over `(batch, frames, height, width)`,
/// with an affine transform and running statistics for evaluation mode.
///
/// Two independent switches force the running statistics:
/// `frozen_stats` is set together with parameter freezing (a frozen layer is
/// frozen entirely, statistics included), `stats_locked` is a model-wide
/// override used when a training run wants evaluation-style normalization.
#[derive(Debug, Clone)]
pub struct BatchNorm3d {
    name: String,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub frozen_stats: bool,
    pub stats_locked: bool,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Act,
    inv_std: Vec<f64>,
    used_batch_stats: bool,
}

impl BatchNorm3d {
    pub fn new(name: &str, channels: usize, _rng: &mut ChaCha8Rng) -> Self {
        Self {
            name: name.to_string(),
            gamma: Param::new(
                format!("{name}.gamma"),
                Array1::<f64>::ones(channels).into_dyn(),
            ),
            beta: Param::new(
                format!("{name}.beta"),
                Array1::<f64>::zeros(channels).into_dyn(),
            ),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: 1e-5,
            momentum: 0.1,
            frozen_stats: false,
            stats_locked: false,
            cache: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn uses_batch_stats(&self, mode: Mode) -> bool {
        mode == Mode::Train && !self.frozen_stats && !self.stats_locked
    }

    pub fn forward(&mut self, x: &Act, mode: Mode, keep_cache: bool) -> Result<Act> {
        let (nb, c, t, h, w) = x.dim();
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "{}: expected {} channels, got {c}",
                self.name,
                self.channels()
            )));
        }
        let span = t * h * w;
        let count = nb * span;
        let xs = x
            .as_slice()
            .ok_or_else(|| Error::Shape("bn input must be standard layout".into()))?;

        let use_batch = self.uses_batch_stats(mode);
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        if use_batch {
            for ch in 0..c {
                let mut sum = 0.0;
                for n in 0..nb {
                    let base = (n * c + ch) * span;
                    for v in &xs[base..base + span] {
                        sum += v;
                    }
                }
                let m = sum / count as f64;
                let mut sq = 0.0;
                for n in 0..nb {
                    let base = (n * c + ch) * span;
                    for v in &xs[base..base + span] {
                        let d = v - m;
                        sq += d * d;
                    }
                }
                mean[ch] = m;
                var[ch] = sq / count as f64;
            }
            // Running update uses the unbiased variance, normalization the
            // biased one.
            for ch in 0..c {
                let unbiased = if count > 1 {
                    var[ch] * count as f64 / (count - 1) as f64
                } else {
                    var[ch]
                };
                self.running_mean[ch] =
                    (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean[ch];
                self.running_var[ch] =
                    (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
            }
        } else {
            for ch in 0..c {
                mean[ch] = self.running_mean[ch];
                var[ch] = self.running_var[ch];
            }
        }

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = self.gamma.value.as_slice().unwrap();
        let beta = self.beta.value.as_slice().unwrap();

        let mut x_hat = Act::zeros((nb, c, t, h, w));
        let mut out = Act::zeros((nb, c, t, h, w));
        {
            let xh = x_hat.as_slice_mut().unwrap();
            let os = out.as_slice_mut().unwrap();
            for n in 0..nb {
                for ch in 0..c {
                    let base = (n * c + ch) * span;
                    let (m, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
                    for i in base..base + span {
                        let nv = (xs[i] - m) * is;
                        xh[i] = nv;
                        os[i] = g * nv + b;
                    }
                }
            }
        }
        self.cache = if keep_cache {
            Some(BnCache {
                x_hat,
                inv_std,
                used_batch_stats: use_batch,
            })
        } else {
            None
        };
        Ok(out)
    }

    pub fn backward(&mut self, dout: &Act) -> Result<Act> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Shape("bn backward without cached forward".into()))?;
        let (nb, c, t, h, w) = dout.dim();
        let span = t * h * w;
        let count = (nb * span) as f64;
        let ds = dout
            .as_slice()
            .ok_or_else(|| Error::Shape("bn gradient must be standard layout".into()))?;
        let xh = cache.x_hat.as_slice().unwrap();
        let gamma = self.gamma.value.as_slice().unwrap();

        // Per-channel reductions.
        let mut sum_d = vec![0.0f64; c];
        let mut sum_dxh = vec![0.0f64; c];
        for n in 0..nb {
            for ch in 0..c {
                let base = (n * c + ch) * span;
                let mut s0 = 0.0;
                let mut s1 = 0.0;
                for i in base..base + span {
                    s0 += ds[i];
                    s1 += ds[i] * xh[i];
                }
                sum_d[ch] += s0;
                sum_dxh[ch] += s1;
            }
        }

        if !self.gamma.frozen {
            let g = self.gamma.grad.as_slice_mut().unwrap();
            let b = self.beta.grad.as_slice_mut().unwrap();
            for ch in 0..c {
                g[ch] += sum_dxh[ch];
                b[ch] += sum_d[ch];
            }
        }

        let mut dx = Act::zeros((nb, c, t, h, w));
        {
            let dxs = dx.as_slice_mut().unwrap();
            for n in 0..nb {
                for ch in 0..c {
                    let base = (n * c + ch) * span;
                    let scale = gamma[ch] * cache.inv_std[ch];
                    if cache.used_batch_stats {
                        let md = sum_d[ch] / count;
                        let mdxh = sum_dxh[ch] / count;
                        for i in base..base + span {
                            dxs[i] = scale * (ds[i] - md - xh[i] * mdxh);
                        }
                    } else {
                        for i in base..base + span {
                            dxs[i] = scale * ds[i];
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.gamma.frozen = frozen;
        self.beta.frozen = frozen;
        self.frozen_stats = frozen;
    }

    /// Running statistics as named tensors for checkpointing.
    pub fn buffers(&self) -> Vec<(String, Array1<f64>)> {
        vec![
            (format!("{}.running_mean", self.name), self.running_mean.clone()),
            (format!("{}.running_var", self.name), self.running_var.clone()),
        ]
    }

    pub fn set_buffer(&mut self, name: &str, values: &Array1<f64>) -> Result<()> {
        if values.len() != self.channels() {
            return Err(Error::Checkpoint(format!(
                "{name}: expected {} entries, got {}",
                self.channels(),
                values.len()
            )));
        }
        if name.ends_with(".running_mean") {
            self.running_mean.assign(values);
        } else if name.ends_with(".running_var") {
            self.running_var.assign(values);
        } else {
            return Err(Error::Checkpoint(format!("unknown buffer {name}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array5;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn train_mode_normalizes_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bn = BatchNorm3d::new("bn", 3, &mut rng);
        let x = Array5::from_shape_fn((2, 3, 2, 4, 4), |_| rng.random::<f64>() * 5.0 + 2.0);
        let y = bn.forward(&x, Mode::Train, false).unwrap();
        // Each channel of the output should be ~zero-mean unit-var.
        for ch in 0..3 {
            let vals: Vec<f64> = y
                .indexed_iter()
                .filter(|((_, c, _, _, _), _)| *c == ch)
                .map(|(_, v)| *v)
                .collect();
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let v: f64 = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-10, "channel {ch} mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "channel {ch} var {v}");
        }
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bn = BatchNorm3d::new("bn", 2, &mut rng);
        bn.running_mean[0] = 1.0;
        bn.running_var[0] = 4.0;
        let x = Array5::from_elem((1, 2, 1, 1, 1), 3.0);
        let y = bn.forward(&x, Mode::Eval, false).unwrap();
        // (3 - 1) / sqrt(4 + eps) ~= 1
        assert!((y[(0, 0, 0, 0, 0)] - 2.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn locked_stats_keep_running_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bn = BatchNorm3d::new("bn", 1, &mut rng);
        bn.stats_locked = true;
        let before = (bn.running_mean.clone(), bn.running_var.clone());
        let x = Array5::from_elem((1, 1, 1, 2, 2), 7.0);
        bn.forward(&x, Mode::Train, false).unwrap();
        assert_eq!(before.0, bn.running_mean);
        assert_eq!(before.1, bn.running_var);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bn = BatchNorm3d::new("bn", 2, &mut rng);
        // Non-trivial affine parameters.
        bn.gamma.value.as_slice_mut().unwrap()[0] = 1.3;
        bn.gamma.value.as_slice_mut().unwrap()[1] = 0.7;
        bn.beta.value.as_slice_mut().unwrap()[0] = -0.2;
        let x = Array5::from_shape_fn((2, 2, 2, 3, 3), |_| rng.random::<f64>() * 2.0 - 1.0);

        let y = bn.forward(&x, Mode::Train, true).unwrap();
        let dx = bn.backward(&y).unwrap();

        let loss = |bn: &mut BatchNorm3d, x: &Act| -> f64 {
            let y = bn.forward(x, Mode::Train, false).unwrap();
            0.5 * y.iter().map(|v| v * v).sum::<f64>()
        };
        // Forward above already updated the running stats once; pin them so
        // the finite-difference evaluations see identical state.
        let rm = bn.running_mean.clone();
        let rv = bn.running_var.clone();

        let eps = 1e-5;
        let mut x2 = x.clone();
        for &idx in &[0usize, 5, 17, 33] {
            let orig = x2.as_slice().unwrap()[idx];
            x2.as_slice_mut().unwrap()[idx] = orig + eps;
            bn.running_mean.assign(&rm);
            bn.running_var.assign(&rv);
            let lp = loss(&mut bn, &x2);
            x2.as_slice_mut().unwrap()[idx] = orig - eps;
            bn.running_mean.assign(&rm);
            bn.running_var.assign(&rv);
            let lm = loss(&mut bn, &x2);
            x2.as_slice_mut().unwrap()[idx] = orig;
            let num = (lp - lm) / (2.0 * eps);
            let ana = dx.as_slice().unwrap()[idx];
            assert!(
                (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8) < 1e-4,
                "dx[{idx}]: fd {num} vs analytic {ana}"
            );
        }
        for ch in 0..2 {
            let orig = bn.gamma.value.as_slice().unwrap()[ch];
            bn.gamma.value.as_slice_mut().unwrap()[ch] = orig + eps;
            bn.running_mean.assign(&rm);
            bn.running_var.assign(&rv);
            let lp = loss(&mut bn, &x);
            bn.gamma.value.as_slice_mut().unwrap()[ch] = orig - eps;
            bn.running_mean.assign(&rm);
            bn.running_var.assign(&rv);
            let lm = loss(&mut bn, &x);
            bn.gamma.value.as_slice_mut().unwrap()[ch] = orig;
            let num = (lp - lm) / (2.0 * eps);
            let ana = bn.gamma.grad.as_slice().unwrap()[ch];
            assert!(
                (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8) < 1e-4,
                "dgamma[{ch}]: fd {num} vs analytic {ana}"
            );
        }
    }
}
