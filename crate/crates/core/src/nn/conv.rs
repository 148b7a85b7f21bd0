use ndarray::{Array1, Array2, Array4, ArrayD, ArrayView2, Ix4};
use rand::Rng as _;

use crate::rng::Rng;

use super::Tensor;

/// Zero padding on each side of the input: top, left, bottom, right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Padding {
    pub const fn same(p: usize) -> Self {
        Self { top: p, left: p, bottom: p, right: p }
    }
}

/// 2-D convolution over NCHW tensors, computed as one matrix product over
/// the unrolled (im2col) batch.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// Shape `(out, in, k, k)`.
    pub weight: Tensor,
    /// Shape `(out,)`.
    pub bias: Tensor,
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Debug, Clone)]
pub(super) struct ConvCache {
    saved: Saved,
    input_shape: [usize; 4],
    out_hw: (usize, usize),
}

#[derive(Debug, Clone)]
enum Saved {
    /// Unrolled input columns `(C*k*k, N*plane)` of the matrix-product path.
    Columns(Array2<f64>),
    /// Contiguous NCHW input of the direct path.
    Input(Vec<f64>),
}

/// Output widths from which the direct stride-1 path beats unrolling.
const DIRECT_MIN_WIDTH: usize = 16;

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weight = Array4::from_shape_simple_fn(
            (out_channels, in_channels, kernel, kernel),
            || rng.gen_range(-bound..bound),
        )
        .into_dyn();
        Self { weight, bias: ArrayD::zeros(vec![out_channels]), stride, padding }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel();
        let ph = h + self.padding.top + self.padding.bottom;
        let pw = w + self.padding.left + self.padding.right;
        if ph < k || pw < k {
            return None;
        }
        Some(((ph - k) / self.stride + 1, (pw - k) / self.stride + 1))
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        let cout = self.out_channels();
        let k = self.weight.len() / cout;
        self.weight
            .view()
            .into_shape_with_order((cout, k))
            .expect("contiguous conv weight")
    }

    pub(super) fn forward(&self, x: &Tensor) -> (Tensor, ConvCache) {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        match self.output_hw(h, w) {
            Some((_, ow)) if self.stride == 1 && ow >= DIRECT_MIN_WIDTH => self.forward_direct(x),
            _ => self.forward_unrolled(x),
        }
    }

    /// Returns (input gradient, weight gradient, bias gradient).
    pub(super) fn backward(&self, cache: &ConvCache, grad: &Tensor) -> (Tensor, Tensor, Tensor) {
        match &cache.saved {
            Saved::Columns(cols) => self.backward_unrolled(cache, cols, grad),
            Saved::Input(input) => self.backward_direct(cache, input, grad),
        }
    }

    /// Row-wise axpy formulation; avoids materializing the unrolled input.
    fn forward_direct(&self, x: &Tensor) -> (Tensor, ConvCache) {
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        assert_eq!(c, self.in_channels(), "conv input channel mismatch");
        let (oh, ow) = self.output_hw(h, w).expect("conv input smaller than kernel");
        let xs: Vec<f64> = x.as_standard_layout().iter().copied().collect();
        let ws = self.weight.as_slice().expect("contiguous conv weight");
        let bias = self.bias.as_slice().expect("contiguous bias");
        let (k, cout) = (self.kernel(), self.out_channels());
        let (pt, pl) = (self.padding.top as isize, self.padding.left as isize);
        let mut out = vec![0.0; n * cout * oh * ow];
        for b in 0..n {
            for co in 0..cout {
                let dst = &mut out[(b * cout + co) * oh * ow..][..oh * ow];
                dst.fill(bias[co]);
                for ci in 0..c {
                    let src = &xs[(b * c + ci) * h * w..][..h * w];
                    for ki in 0..k {
                        for kj in 0..k {
                            let wv = ws[((co * c + ci) * k + ki) * k + kj];
                            let (lo, hi) = valid_range(kj, pl, 1, w, ow);
                            let shift = (lo + kj) as isize - pl;
                            for y in 0..oh {
                                let iy = (y + ki) as isize - pt;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let in_row = &src[iy as usize * w + shift as usize..][..hi - lo];
                                let out_row = &mut dst[y * ow + lo..][..hi - lo];
                                for (o, v) in out_row.iter_mut().zip(in_row) {
                                    *o += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        let cache = ConvCache { saved: Saved::Input(xs), input_shape: [n, c, h, w], out_hw: (oh, ow) };
        (ArrayD::from_shape_vec(vec![n, cout, oh, ow], out).expect("shape"), cache)
    }

    fn backward_direct(&self, cache: &ConvCache, xs: &[f64], grad: &Tensor) -> (Tensor, Tensor, Tensor) {
        let [n, c, h, w] = cache.input_shape;
        let (oh, ow) = cache.out_hw;
        let grad = grad.as_standard_layout();
        let gs = grad.as_slice().expect("standard layout");
        let ws = self.weight.as_slice().expect("contiguous conv weight");
        let (k, cout) = (self.kernel(), self.out_channels());
        let (pt, pl) = (self.padding.top as isize, self.padding.left as isize);
        let mut dx = vec![0.0; n * c * h * w];
        let mut gw = vec![0.0; ws.len()];
        let mut gb = vec![0.0; cout];
        for b in 0..n {
            for co in 0..cout {
                let g = &gs[(b * cout + co) * oh * ow..][..oh * ow];
                gb[co] += g.iter().sum::<f64>();
                for ci in 0..c {
                    let src = &xs[(b * c + ci) * h * w..][..h * w];
                    let dsrc = &mut dx[(b * c + ci) * h * w..][..h * w];
                    for ki in 0..k {
                        for kj in 0..k {
                            let widx = ((co * c + ci) * k + ki) * k + kj;
                            let wv = ws[widx];
                            let (lo, hi) = valid_range(kj, pl, 1, w, ow);
                            let shift = ((lo + kj) as isize - pl) as usize;
                            let mut acc = 0.0;
                            for y in 0..oh {
                                let iy = (y + ki) as isize - pt;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let g_row = &g[y * ow + lo..][..hi - lo];
                                let start = iy as usize * w + shift;
                                let in_row = &src[start..][..hi - lo];
                                acc += g_row.iter().zip(in_row).map(|(a, b)| a * b).sum::<f64>();
                                for (d, gv) in dsrc[start..][..hi - lo].iter_mut().zip(g_row) {
                                    *d += wv * gv;
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
        (
            ArrayD::from_shape_vec(vec![n, c, h, w], dx).expect("shape"),
            ArrayD::from_shape_vec(self.weight.raw_dim(), gw).expect("shape"),
            ArrayD::from_shape_vec(vec![cout], gb).expect("shape"),
        )
    }

    fn forward_unrolled(&self, x: &Tensor) -> (Tensor, ConvCache) {
        let x = x
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv input must be NCHW");
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels(), "conv input channel mismatch");
        let (oh, ow) = self.output_hw(h, w).expect("conv input smaller than kernel");
        let k = self.kernel();
        let plane = oh * ow;
        let kdim = c * k * k;
        let mut cols = Array2::<f64>::zeros((kdim, n * plane));
        {
            let x = x.as_standard_layout();
            let xs = x.as_slice().expect("standard layout");
            let cs = cols.as_slice_mut().expect("fresh array");
            let stride = self.stride;
            let (pt, pl) = (self.padding.top as isize, self.padding.left as isize);
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (ci * k + ki) * k + kj;
                        let row_base = row * n * plane;
                        for b in 0..n {
                            let in_base = (b * c + ci) * h * w;
                            let out_base = row_base + b * plane;
                            for y in 0..oh {
                                let iy = (y * stride + ki) as isize - pt;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let in_row = &xs[in_base + iy as usize * w..][..w];
                                let out_row = &mut cs[out_base + y * ow..][..ow];
                                let (lo, hi) = valid_range(kj, pl, stride, w, ow);
                                if stride == 1 {
                                    let start = (lo + kj) as isize - pl;
                                    out_row[lo..hi].copy_from_slice(&in_row[start as usize..][..hi - lo]);
                                } else {
                                    for xo in lo..hi {
                                        out_row[xo] = in_row[((xo * stride + kj) as isize - pl) as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let prod = self.weight_matrix().dot(&cols);
        let cout = self.out_channels();
        let bias = self.bias.as_slice().expect("contiguous bias");
        let ps = prod.as_slice().expect("fresh product");
        let mut out = Array4::<f64>::zeros((n, cout, oh, ow));
        let os = out.as_slice_mut().expect("fresh array");
        for b in 0..n {
            for co in 0..cout {
                let src = &ps[co * n * plane + b * plane..][..plane];
                let dst = &mut os[(b * cout + co) * plane..][..plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias[co];
                }
            }
        }
        let cache = ConvCache { saved: Saved::Columns(cols), input_shape: [n, c, h, w], out_hw: (oh, ow) };
        (out.into_dyn(), cache)
    }

    fn backward_unrolled(&self, cache: &ConvCache, cols: &Array2<f64>, grad: &Tensor) -> (Tensor, Tensor, Tensor) {
        let [n, c, h, w] = cache.input_shape;
        let (oh, ow) = cache.out_hw;
        let plane = oh * ow;
        let cout = self.out_channels();
        let grad = grad.as_standard_layout();
        let gs = grad.as_slice().expect("standard layout");

        // Rearrange (N, Cout, plane) into (Cout, N*plane) to match the columns.
        let mut g2 = Array2::<f64>::zeros((cout, n * plane));
        let mut gbias = Array1::<f64>::zeros(cout);
        {
            let g2s = g2.as_slice_mut().expect("fresh array");
            for b in 0..n {
                for co in 0..cout {
                    let src = &gs[(b * cout + co) * plane..][..plane];
                    g2s[co * n * plane + b * plane..][..plane].copy_from_slice(src);
                    gbias[co] += src.iter().sum::<f64>();
                }
            }
        }
        let gweight = g2
            .dot(&cols.t())
            .into_shape_with_order(self.weight.raw_dim())
            .expect("weight shape");
        let gcols = self.weight_matrix().t().dot(&g2);

        let k = self.kernel();
        let mut dx = Array4::<f64>::zeros((n, c, h, w));
        {
            let dxs = dx.as_slice_mut().expect("fresh array");
            let gcs = gcols.as_slice().expect("fresh product");
            let stride = self.stride;
            let (pt, pl) = (self.padding.top as isize, self.padding.left as isize);
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (ci * k + ki) * k + kj;
                        let row_base = row * n * plane;
                        for b in 0..n {
                            let in_base = (b * c + ci) * h * w;
                            let col_base = row_base + b * plane;
                            for y in 0..oh {
                                let iy = (y * stride + ki) as isize - pt;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let in_row = &mut dxs[in_base + iy as usize * w..][..w];
                                let col_row = &gcs[col_base + y * ow..][..ow];
                                let (lo, hi) = valid_range(kj, pl, stride, w, ow);
                                for xo in lo..hi {
                                    in_row[((xo * stride + kj) as isize - pl) as usize] += col_row[xo];
                                }
                            }
                        }
                    }
                }
            }
        }
        (dx.into_dyn(), gweight, gbias.into_dyn())
    }
}

/// Output columns `xo` whose input column `xo*stride + kj - pad` lies in `[0, w)`.
fn valid_range(kj: usize, pad: isize, stride: usize, w: usize, ow: usize) -> (usize, usize) {
    let first = pad - kj as isize;
    let lo = if first <= 0 { 0 } else { (first as usize).div_ceil(stride) };
    let end = w as isize + pad - kj as isize;
    let hi = if end <= 0 { 0 } else { (end as usize).div_ceil(stride) };
    (lo.min(ow), hi.min(ow).max(lo.min(ow)))
}
