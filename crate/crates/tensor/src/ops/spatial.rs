//! Channel-last spatial ops used by the dense prediction heads.

use crate::element::Element;
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::Tensor;

/// Geometry of a square-kernel transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTransposeSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTransposeSpec {
    /// 3×3, stride 2, padding 1, output padding 1: exactly doubles H and W.
    pub const UPSAMPLE_2X: Self = Self {
        kernel: 3,
        stride: 2,
        padding: 1,
        output_padding: 1,
    };

    pub fn output_size(&self, input: usize) -> Option<usize> {
        ((input - 1) * self.stride + self.kernel + self.output_padding).checked_sub(2 * self.padding)
    }
}

/// Per-output sample positions for one axis of a half-pixel bilinear resize.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

impl<E: Element> Tensor<E> {
    /// Transposed convolution on `[B, H, W, Cin]` with weights `[Cin, K, K, Cout]`.
    pub fn conv_transpose2d_nhwc(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        spec: ConvTransposeSpec,
    ) -> Result<Tensor<E>> {
        let &[batch, h, w, cin] = self.shape() else {
            return shape_err("conv_transpose2d", format!("input must be [B,H,W,C], got {:?}", self.shape()));
        };
        let &[wc, kh, kw, cout] = weight.shape() else {
            return shape_err("conv_transpose2d", format!("weight must be [Cin,K,K,Cout], got {:?}", weight.shape()));
        };
        let k = spec.kernel;
        if wc != cin || kh != k || kw != k {
            return shape_err(
                "conv_transpose2d",
                format!("weight {:?} for input channels {cin} and kernel {k}", weight.shape()),
            );
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return shape_err("conv_transpose2d", format!("bias {:?} for {cout} channels", b.shape()));
            }
        }
        if spec.stride == 0 {
            return arg_err("conv_transpose2d", "stride must be positive");
        }
        let (Some(ho), Some(wo)) = (spec.output_size(h), spec.output_size(w)) else {
            return arg_err("conv_transpose2d", "padding larger than the output");
        };
        let kkc = k * k * cout;
        let positions = batch * h * w;
        let (s, p) = (spec.stride as isize, spec.padding as isize);

        // scatter target of (input position, kernel tap), or None when cropped
        let target = move |b: usize, ih: usize, iw: usize, ky: usize, kx: usize| -> Option<usize> {
            let oh = ih as isize * s + ky as isize - p;
            let ow = iw as isize * s + kx as isize - p;
            ((0..ho as isize).contains(&oh) && (0..wo as isize).contains(&ow))
                .then(|| ((b * ho + oh as usize) * wo + ow as usize) * cout)
        };

        let mut out = vec![E::zero(); batch * ho * wo * cout];
        {
            let (x, wt) = (self.data(), weight.data());
            let mut cols = vec![E::zero(); positions * kkc];
            E::gemm(positions, cin, kkc, &x, (cin, 1), &wt, (kkc, 1), &mut cols, (kkc, 1), false);
            for b in 0..batch {
                for ih in 0..h {
                    for iw in 0..w {
                        let row = ((b * h + ih) * w + iw) * kkc;
                        for ky in 0..k {
                            for kx in 0..k {
                                if let Some(t) = target(b, ih, iw, ky, kx) {
                                    let src = row + (ky * k + kx) * cout;
                                    for c in 0..cout {
                                        out[t + c] = out[t + c] + cols[src + c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if let Some(bias) = bias {
                let bd = bias.data();
                for chunk in out.chunks_mut(cout) {
                    chunk.iter_mut().zip(bd.iter()).for_each(|(o, &b)| *o = *o + b);
                }
            }
        }

        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            "conv_transpose2d",
            out,
            vec![batch, ho, wo, cout],
            inputs,
            move |g, inputs, _| {
                let mut gcols = vec![E::zero(); positions * kkc];
                for b in 0..batch {
                    for ih in 0..h {
                        for iw in 0..w {
                            let row = ((b * h + ih) * w + iw) * kkc;
                            for ky in 0..k {
                                for kx in 0..k {
                                    if let Some(t) = target(b, ih, iw, ky, kx) {
                                        let dst = row + (ky * k + kx) * cout;
                                        gcols[dst..dst + cout].copy_from_slice(&g[t..t + cout]);
                                    }
                                }
                            }
                        }
                    }
                }
                let gx = inputs[0].requires_grad().then(|| {
                    let wt = inputs[1].data();
                    let mut gx = vec![E::zero(); positions * cin];
                    E::gemm(positions, kkc, cin, &gcols, (kkc, 1), &wt, (1, kkc), &mut gx, (cin, 1), false);
                    gx
                });
                let gw = inputs[1].requires_grad().then(|| {
                    let x = inputs[0].data();
                    let mut gw = vec![E::zero(); cin * kkc];
                    E::gemm(cin, positions, kkc, &x, (1, cin), &gcols, (kkc, 1), &mut gw, (kkc, 1), false);
                    gw
                });
                let mut grads = vec![gx, gw];
                if inputs.len() == 3 {
                    let mut gb = vec![0.0f64; cout];
                    for chunk in g.chunks(cout) {
                        gb.iter_mut().zip(chunk).for_each(|(a, v)| *a += v.widen());
                    }
                    grads.push(Some(gb.into_iter().map(E::lit).collect()));
                }
                grads
            },
        ))
    }

    /// Half-pixel bilinear resize of `[B, H, W, C]` to `[B, out_h, out_w, C]`.
    pub fn resize_bilinear_nhwc(&self, out_h: usize, out_w: usize) -> Result<Tensor<E>> {
        let &[batch, h, w, c] = self.shape() else {
            return shape_err("resize_bilinear", format!("input must be [B,H,W,C], got {:?}", self.shape()));
        };
        if out_h == 0 || out_w == 0 {
            return arg_err("resize_bilinear", "output size must be positive");
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let mut out = vec![E::zero(); batch * out_h * out_w * c];
        {
            let x = self.data();
            for b in 0..batch {
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        let dst = ((b * out_h + oy) * out_w + ox) * c;
                        let taps = [
                            (y0, x0, wy0 * wx0),
                            (y0, x1, wy0 * wx1),
                            (y1, x0, wy1 * wx0),
                            (y1, x1, wy1 * wx1),
                        ];
                        for ch in 0..c {
                            let mut acc = 0.0f64;
                            for &(yy, xx, wgt) in &taps {
                                acc += wgt * x[((b * h + yy) * w + xx) * c + ch].widen();
                            }
                            out[dst + ch] = E::lit(acc);
                        }
                    }
                }
            }
        }
        let in_numel = self.numel();
        Ok(Tensor::from_op(
            "resize_bilinear",
            out,
            vec![batch, out_h, out_w, c],
            vec![self.clone()],
            move |g, _, _| {
                let mut gx = vec![0.0f64; in_numel];
                for b in 0..batch {
                    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                            let src = ((b * out_h + oy) * out_w + ox) * c;
                            let taps = [
                                (y0, x0, wy0 * wx0),
                                (y0, x1, wy0 * wx1),
                                (y1, x0, wy1 * wx0),
                                (y1, x1, wy1 * wx1),
                            ];
                            for ch in 0..c {
                                let gv = g[src + ch].widen();
                                for &(yy, xx, wgt) in &taps {
                                    gx[((b * h + yy) * w + xx) * c + ch] += wgt * gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(gx.into_iter().map(E::lit).collect())]
            },
        ))
    }
}
