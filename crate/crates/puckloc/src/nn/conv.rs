use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use super::{kaiming_normal, Act, Param};
use crate::error::{Error, Result};

/// Shape of a 3-D convolution. Kernel, stride and padding are given as
/// `(t, h, w)` triples. Convolutions here never carry a bias: every one is
/// followed by a batch-normalization layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
}

fn conv_out(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let span = input + 2 * padding;
    if span < kernel {
        return Err(Error::Shape(format!(
            "kernel {kernel} exceeds padded input {span}"
        )));
    }
    Ok((span - kernel) / stride + 1)
}

impl Conv3dSpec {
    /// Output `(t, h, w)` for a given input extent.
    pub fn out_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        Ok((
            conv_out(input.0, self.kernel.0, self.stride.0, self.padding.0)?,
            conv_out(input.1, self.kernel.1, self.stride.1, self.padding.1)?,
            conv_out(input.2, self.kernel.2, self.stride.2, self.padding.2)?,
        ))
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1 * self.kernel.2
    }
}

/// A bias-free 3-D convolution evaluated as im2col + GEMM per output frame.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub spec: Conv3dSpec,
    pub weight: Param,
    cache: Option<Act>,
}

impl Conv3d {
    pub fn new(name: &str, spec: Conv3dSpec, rng: &mut ChaCha8Rng) -> Self {
        let (kt, kh, kw) = spec.kernel;
        let fan_in = spec.in_channels * kt * kh * kw;
        let weight = Param::new(
            format!("{name}.weight"),
            kaiming_normal(
                rng,
                &[spec.out_channels, spec.in_channels, kt, kh, kw],
                fan_in,
            ),
        );
        Self {
            spec,
            weight,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Act, keep_cache: bool) -> Result<Act> {
        let (nb, cin, tin, hin, win) = x.dim();
        if cin != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "{}: expected {} input channels, got {cin}",
                self.weight.name, self.spec.in_channels
            )));
        }
        let (tout, hout, wout) = self.spec.out_shape((tin, hin, win))?;
        let cout = self.spec.out_channels;
        let (kt, kh, kw) = self.spec.kernel;
        let k = cin * kt * kh * kw;
        let nhw = hout * wout;

        let xs = x
            .as_slice()
            .ok_or_else(|| Error::Shape("conv input must be standard layout".into()))?;
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((cout, k))
            .expect("weight is contiguous");

        let mut out = Act::zeros((nb, cout, tout, hout, wout));
        let mut patches = vec![0.0f64; k * nhw];
        let mut tmp = Array2::<f64>::zeros((cout, nhw));
        for n in 0..nb {
            for ot in 0..tout {
                fill_patches(
                    xs,
                    n,
                    (cin, tin, hin, win),
                    &self.spec,
                    ot,
                    (hout, wout),
                    &mut patches,
                );
                let p = ArrayView2::from_shape((k, nhw), patches.as_slice()).unwrap();
                general_mat_mul(1.0, &w2, &p, 0.0, &mut tmp);
                out.slice_mut(s![n, .., ot, .., ..]).assign(
                    &tmp.view()
                        .into_shape_with_order((cout, hout, wout))
                        .unwrap(),
                );
            }
        }
        self.cache = if keep_cache { Some(x.clone()) } else { None };
        Ok(out)
    }

    /// Accumulates the weight gradient (unless frozen) and returns the input
    /// gradient when `need_dx` is set.
    pub fn backward(&mut self, dout: &Act, need_dx: bool) -> Result<Option<Act>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::Shape("conv backward without cached forward".into()))?;
        let (nb, cin, tin, hin, win) = x.dim();
        let (dnb, cout, tout, hout, wout) = dout.dim();
        if dnb != nb || cout != self.spec.out_channels {
            return Err(Error::Shape(format!(
                "{}: gradient shape {:?} does not match forward output",
                self.weight.name,
                dout.dim()
            )));
        }
        let (kt, kh, kw) = self.spec.kernel;
        let k = cin * kt * kh * kw;
        let nhw = hout * wout;
        let need_dw = !self.weight.frozen;
        if !need_dw && !need_dx {
            return Ok(None);
        }

        let xs = x.as_slice().expect("cached input is standard layout");
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((cout, k))
            .expect("weight is contiguous");

        let mut dw2 = Array2::<f64>::zeros((cout, k));
        let mut dx = if need_dx {
            Some(Act::zeros((nb, cin, tin, hin, win)))
        } else {
            None
        };
        let mut patches = vec![0.0f64; k * nhw];
        let mut dpatches = Array2::<f64>::zeros((k, nhw));
        let mut dout_tmp = Array2::<f64>::zeros((cout, nhw));

        for n in 0..nb {
            for ot in 0..tout {
                dout_tmp
                    .view_mut()
                    .into_shape_with_order((cout, hout, wout))
                    .unwrap()
                    .assign(&dout.slice(s![n, .., ot, .., ..]));
                if need_dw {
                    fill_patches(
                        xs,
                        n,
                        (cin, tin, hin, win),
                        &self.spec,
                        ot,
                        (hout, wout),
                        &mut patches,
                    );
                    let p = ArrayView2::from_shape((k, nhw), patches.as_slice()).unwrap();
                    general_mat_mul(1.0, &dout_tmp, &p.t(), 1.0, &mut dw2);
                }
                if let Some(dx) = dx.as_mut() {
                    general_mat_mul(1.0, &w2.t(), &dout_tmp, 0.0, &mut dpatches);
                    scatter_patches(
                        dx.as_slice_mut().unwrap(),
                        n,
                        (cin, tin, hin, win),
                        &self.spec,
                        ot,
                        (hout, wout),
                        &dpatches,
                    );
                }
            }
        }
        if need_dw {
            let mut g = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((cout, k))
                .expect("grad is contiguous");
            g += &dw2;
        }
        Ok(dx)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.weight.frozen = frozen;
    }
}

/// Builds the `[K, hout*wout]` patch matrix for one (sample, output-frame)
/// pair. Out-of-bounds taps read zero (implicit padding).
fn fill_patches(
    xs: &[f64],
    n: usize,
    in_dims: (usize, usize, usize, usize),
    spec: &Conv3dSpec,
    ot: usize,
    out_dims: (usize, usize),
    patches: &mut [f64],
) {
    let (cin, tin, hin, win) = in_dims;
    let (hout, wout) = out_dims;
    let (kt, kh, kw) = spec.kernel;
    let (st, sh, sw) = spec.stride;
    let (pt, ph, pw) = spec.padding;
    let nhw = hout * wout;
    for ic in 0..cin {
        let chan_frame0 = (n * cin + ic) * tin;
        for dt in 0..kt {
            let it = (ot * st + dt) as isize - pt as isize;
            let t_ok = it >= 0 && (it as usize) < tin;
            let frame_base = if t_ok {
                (chan_frame0 + it as usize) * hin * win
            } else {
                0
            };
            for dh in 0..kh {
                for dw in 0..kw {
                    let krow = ((ic * kt + dt) * kh + dh) * kw + dw;
                    let dst = &mut patches[krow * nhw..(krow + 1) * nhw];
                    if !t_ok {
                        dst.fill(0.0);
                        continue;
                    }
                    for oh in 0..hout {
                        let ih = (oh * sh + dh) as isize - ph as isize;
                        let seg = &mut dst[oh * wout..(oh + 1) * wout];
                        if ih < 0 || ih as usize >= hin {
                            seg.fill(0.0);
                            continue;
                        }
                        let row_base = frame_base + ih as usize * win;
                        if sw == 1 {
                            let iw0 = dw as isize - pw as isize;
                            let lo = (-iw0).max(0).min(wout as isize) as usize;
                            let hi = (win as isize - iw0).clamp(0, wout as isize) as usize;
                            seg[..lo].fill(0.0);
                            if hi > lo {
                                let src0 = (iw0 + lo as isize) as usize;
                                seg[lo..hi]
                                    .copy_from_slice(&xs[row_base + src0..row_base + src0 + hi - lo]);
                            }
                            seg[hi.max(lo)..].fill(0.0);
                        } else {
                            for (ow, cell) in seg.iter_mut().enumerate() {
                                let iw = (ow * sw + dw) as isize - pw as isize;
                                *cell = if iw >= 0 && (iw as usize) < win {
                                    xs[row_base + iw as usize]
                                } else {
                                    0.0
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch gradients back to the input gradient (the inverse of
/// [`fill_patches`]). Overlapping taps accumulate in a fixed order.
fn scatter_patches(
    dxs: &mut [f64],
    n: usize,
    in_dims: (usize, usize, usize, usize),
    spec: &Conv3dSpec,
    ot: usize,
    out_dims: (usize, usize),
    dpatches: &Array2<f64>,
) {
    let (cin, tin, hin, win) = in_dims;
    let (hout, wout) = out_dims;
    let (kt, kh, kw) = spec.kernel;
    let (st, sh, sw) = spec.stride;
    let (pt, ph, pw) = spec.padding;
    let nhw = hout * wout;
    let dp = dpatches.as_slice().expect("dpatches is contiguous");
    for ic in 0..cin {
        let chan_frame0 = (n * cin + ic) * tin;
        for dt in 0..kt {
            let it = (ot * st + dt) as isize - pt as isize;
            if it < 0 || (it as usize) >= tin {
                continue;
            }
            let frame_base = (chan_frame0 + it as usize) * hin * win;
            for dh in 0..kh {
                for dw in 0..kw {
                    let krow = ((ic * kt + dt) * kh + dh) * kw + dw;
                    let src = &dp[krow * nhw..(krow + 1) * nhw];
                    for oh in 0..hout {
                        let ih = (oh * sh + dh) as isize - ph as isize;
                        if ih < 0 || ih as usize >= hin {
                            continue;
                        }
                        let row_base = frame_base + ih as usize * win;
                        let seg = &src[oh * wout..(oh + 1) * wout];
                        if sw == 1 {
                            let iw0 = dw as isize - pw as isize;
                            let lo = (-iw0).max(0).min(wout as isize) as usize;
                            let hi = (win as isize - iw0).clamp(0, wout as isize) as usize;
                            if hi > lo {
                                let src0 = (iw0 + lo as isize) as usize;
                                for (j, v) in seg[lo..hi].iter().enumerate() {
                                    dxs[row_base + src0 + j] += v;
                                }
                            }
                        } else {
                            for (ow, v) in seg.iter().enumerate() {
                                let iw = (ow * sw + dw) as isize - pw as isize;
                                if iw >= 0 && (iw as usize) < win {
                                    dxs[row_base + iw as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array5;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    /// Brute-force direct convolution, the oracle for the GEMM path.
    fn conv3d_naive(x: &Act, w: &ndarray::ArrayViewD<f64>, spec: &Conv3dSpec) -> Act {
        let (nb, cin, tin, hin, win) = x.dim();
        let (tout, hout, wout) = spec.out_shape((tin, hin, win)).unwrap();
        let (kt, kh, kw) = spec.kernel;
        let (st, sh, sw) = spec.stride;
        let (pt, ph, pw) = spec.padding;
        let mut out = Act::zeros((nb, spec.out_channels, tout, hout, wout));
        for n in 0..nb {
            for oc in 0..spec.out_channels {
                for ot in 0..tout {
                    for oh in 0..hout {
                        for ow in 0..wout {
                            let mut acc = 0.0;
                            for ic in 0..cin {
                                for dt in 0..kt {
                                    let it = (ot * st + dt) as isize - pt as isize;
                                    if it < 0 || it as usize >= tin {
                                        continue;
                                    }
                                    for dh in 0..kh {
                                        let ih = (oh * sh + dh) as isize - ph as isize;
                                        if ih < 0 || ih as usize >= hin {
                                            continue;
                                        }
                                        for dw in 0..kw {
                                            let iw = (ow * sw + dw) as isize - pw as isize;
                                            if iw < 0 || iw as usize >= win {
                                                continue;
                                            }
                                            acc += x[(n, ic, it as usize, ih as usize, iw as usize)]
                                                * w[[oc, ic, dt, dh, dw]];
                                        }
                                    }
                                }
                            }
                            out[(n, oc, ot, oh, ow)] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn rand_act(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize, usize)) -> Act {
        Array5::from_shape_fn(dims, |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn gemm_path_matches_naive_oracle() {
        let cases = [
            Conv3dSpec {
                in_channels: 3,
                out_channels: 4,
                kernel: (1, 3, 3),
                stride: (1, 2, 2),
                padding: (0, 1, 1),
            },
            Conv3dSpec {
                in_channels: 4,
                out_channels: 2,
                kernel: (3, 1, 1),
                stride: (2, 1, 1),
                padding: (1, 0, 0),
            },
            Conv3dSpec {
                in_channels: 2,
                out_channels: 3,
                kernel: (3, 3, 3),
                stride: (1, 1, 1),
                padding: (1, 1, 1),
            },
            Conv3dSpec {
                in_channels: 2,
                out_channels: 5,
                kernel: (1, 1, 1),
                stride: (2, 2, 2),
                padding: (0, 0, 0),
            },
            Conv3dSpec {
                in_channels: 2,
                out_channels: 2,
                kernel: (4, 1, 1),
                stride: (4, 1, 1),
                padding: (0, 0, 0),
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (i, spec) in cases.iter().enumerate() {
            let mut conv = Conv3d::new(&format!("case{i}"), *spec, &mut rng);
            let x = rand_act(&mut rng, (2, spec.in_channels, 5, 7, 6));
            let got = conv.forward(&x, false).unwrap();
            let want = conv3d_naive(&x, &conv.weight.value.view(), spec);
            assert_eq!(got.dim(), want.dim(), "case {i} shape");
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12, "case {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = Conv3dSpec {
            in_channels: 2,
            out_channels: 3,
            kernel: (3, 3, 3),
            stride: (1, 2, 2),
            padding: (1, 1, 1),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv3d::new("fd", spec, &mut rng);
        let x = rand_act(&mut rng, (2, 2, 4, 5, 5));

        // Loss = sum of squares of outputs / 2, so dL/dout = out.
        let out = conv.forward(&x, true).unwrap();
        let dx = conv.backward(&out, true).unwrap().unwrap();

        let loss = |c: &mut Conv3d, x: &Act| -> f64 {
            let y = c.forward(x, false).unwrap();
            0.5 * y.iter().map(|v| v * v).sum::<f64>()
        };

        let eps = 1e-6;
        // A few weight taps.
        for &idx in &[0usize, 7, 23, 50] {
            let flat_len = conv.weight.value.len();
            let idx = idx % flat_len;
            let orig = conv.weight.value.as_slice().unwrap()[idx];
            conv.weight.value.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp = loss(&mut conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm = loss(&mut conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[idx] = orig;
            let num = (lp - lm) / (2.0 * eps);
            let ana = conv.weight.grad.as_slice().unwrap()[idx];
            assert!(
                (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8) < 1e-5,
                "weight[{idx}]: fd {num} vs analytic {ana}"
            );
        }
        // A few input taps.
        let mut x2 = x.clone();
        for &idx in &[0usize, 11, 37, 99] {
            let idx = idx % x2.len();
            let orig = x2.as_slice().unwrap()[idx];
            x2.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp = loss(&mut conv, &x2);
            x2.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm = loss(&mut conv, &x2);
            x2.as_slice_mut().unwrap()[idx] = orig;
            let num = (lp - lm) / (2.0 * eps);
            let ana = dx.as_slice().unwrap()[idx];
            assert!(
                (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8) < 1e-5,
                "input[{idx}]: fd {num} vs analytic {ana}"
            );
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let spec = Conv3dSpec {
            in_channels: 3,
            out_channels: 2,
            kernel: (1, 1, 1),
            stride: (1, 1, 1),
            padding: (0, 0, 0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv3d::new("c", spec, &mut rng);
        let x = Act::zeros((1, 4, 2, 2, 2));
        assert!(conv.forward(&x, false).is_err());
    }

    #[test]
    fn kernel_larger_than_input_rejected() {
        let spec = Conv3dSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: (5, 1, 1),
            stride: (1, 1, 1),
            padding: (0, 0, 0),
        };
        assert!(spec.out_shape((4, 8, 8)).is_err());
    }
}
