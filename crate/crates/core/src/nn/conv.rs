use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spectral::SpectralNorm;
use super::{Param, Tensor};
use crate::error::{Error, Result};

/// Output spatial size of a convolution, `None` when the kernel does not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output spatial size of a transposed convolution.
pub fn deconv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let full = (input.checked_sub(1)?) * stride + kernel;
    full.checked_sub(2 * padding).filter(|&s| s > 0)
}

/// Unfolds kernel-sized patches into columns.
///
/// Returns a `(c * kh * kw, n * oh * ow)` matrix. Out-of-bounds taps read zero.
pub fn im2col(
    x: &Tensor,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let x = x.as_standard_layout();
    let (n, c, h, w) = x.dim();
    let xs = x.as_slice().expect("standard layout");
    let width = n * oh * ow;
    let mut cols = vec![0.0; c * kh * kw * width];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let out_row = &mut cols[row * width..(row + 1) * width];
                for ni in 0..n {
                    let plane = &xs[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for oi in 0..oh {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                        let dst = &mut out_row[(ni * oh + oi) * ow..(ni * oh + oi + 1) * ow];
                        for (oj, d) in dst.iter_mut().enumerate() {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj >= 0 && jj < w as isize {
                                *d = src[jj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * kh * kw, width), cols).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlapping taps.
pub fn col2im(
    cols: &Array2<f64>,
    shape: (usize, usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Tensor {
    let (n, c, h, w) = shape;
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let width = n * oh * ow;
    let mut out = vec![0.0; n * c * h * w];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src_row = &cs[row * width..(row + 1) * width];
                for ni in 0..n {
                    let base = (ni * c + ci) * h * w;
                    for oi in 0..oh {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let src = &src_row[(ni * oh + oi) * ow..(ni * oh + oi + 1) * ow];
                        let dst_off = base + ii as usize * w;
                        for (oj, &v) in src.iter().enumerate() {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj >= 0 && jj < w as isize {
                                out[dst_off + jj as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((n, c, h, w), out).expect("col2im shape")
}

/// (n, c, h, w) -> (c, n*h*w)
fn channels_major(x: &Tensor) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    x.view()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .expect("reshape")
}

/// (c, n*h*w) -> (n, c, h, w)
fn batch_major(m: Array2<f64>, n: usize, h: usize, w: usize) -> Tensor {
    let c = m.nrows();
    m.into_shape_with_order((c, n, h, w))
        .expect("reshape")
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
}

fn add_channel_bias(y: &mut Tensor, bias: &Array1<f64>) {
    for (mut plane, &b) in y.axis_iter_mut(Axis(1)).zip(bias.iter()) {
        plane += b;
    }
}

fn channel_sums(g: &Tensor) -> Array1<f64> {
    g.sum_axis(Axis(0)).sum_axis(Axis(1)).sum_axis(Axis(1))
}

fn normal_init<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> ArrayD<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    ArrayD::from_shape_fn(shape, |_| dist.sample(rng))
}

/// 2-D convolution with optional spectral normalization of its kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    /// Kernel of shape (out, in, kh, kw).
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
    pub spectral: Option<SpectralNorm>,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Array2<f64>,
    input_dim: (usize, usize, usize, usize),
    out_hw: (usize, usize),
    w_eff: Array2<f64>,
    sigma: Option<(f64, Array1<f64>)>,
}

impl Conv2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        spectral: bool,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        let weight = normal_init(&[out_channels, in_channels, kernel, kernel], init_std, rng);
        let spectral = spectral.then(|| SpectralNorm::new(out_channels, rng));
        let mut conv = Self {
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(vec![out_channels])),
            stride,
            padding,
            spectral,
        };
        conv.warm_up_spectral();
        conv
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn weight_matrix(&self) -> Array2<f64> {
        let o = self.out_channels();
        let rest = self.weight.value.len() / o;
        self.weight
            .value
            .clone()
            .into_shape_with_order((o, rest))
            .expect("reshape")
            .into_dimensionality::<Ix2>()
            .expect("rank 2")
    }

    fn warm_up_spectral(&mut self) {
        let w = self.weight_matrix();
        if let Some(sn) = self.spectral.as_mut() {
            sn.converge(&w.view(), 50);
        }
    }

    /// One power iteration step on the spectral-norm vector.
    pub fn power_iterate(&mut self) {
        let w = self.weight_matrix();
        if let Some(sn) = self.spectral.as_mut() {
            sn.power_iterate(&w.view());
        }
    }

    /// Kernel as used in the forward pass (divided by its spectral norm estimate).
    pub fn effective_weight(&self) -> Array2<f64> {
        let w = self.weight_matrix();
        match &self.spectral {
            Some(sn) => {
                let (sigma, _) = sn.sigma(&w.view());
                w / sigma
            }
            None => w,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel();
        Some((
            conv_output_size(h, k, self.stride, self.padding)?,
            conv_output_size(w, k, self.stride, self.padding)?,
        ))
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let (n, c, h, w) = x.dim();
        if c != self.in_channels() {
            return Err(Error::shape(
                "conv input",
                format!("(batch, {}, h, w)", self.in_channels()),
                x.shape(),
            ));
        }
        let k = self.kernel();
        let (oh, ow) = self.output_size(h, w).ok_or_else(|| {
            Error::shape(
                "conv input",
                format!("spatial size >= kernel {k} after padding {}", self.padding),
                x.shape(),
            )
        })?;
        let wm = self.weight_matrix();
        let (w_eff, sigma) = match &self.spectral {
            Some(sn) => {
                let (s, v) = sn.sigma(&wm.view());
                (&wm / s, Some((s, v)))
            }
            None => (wm, None),
        };
        let cols = im2col(x, k, k, self.stride, self.padding, oh, ow);
        let out = w_eff.dot(&cols);
        let mut y = batch_major(out, n, oh, ow);
        let bias = self.bias.value.view().into_dimensionality().expect("rank 1").to_owned();
        add_channel_bias(&mut y, &bias);
        Ok((
            y,
            ConvCache {
                cols,
                input_dim: (n, c, h, w),
                out_hw: (oh, ow),
                w_eff,
                sigma,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvCache, grad_out: &Tensor) -> Tensor {
        let k = self.kernel();
        let (oh, ow) = cache.out_hw;
        let g = channels_major(grad_out);
        let d_bias = channel_sums(grad_out);
        let d_weff = g.dot(&cache.cols.t());
        let d_cols = cache.w_eff.t().dot(&g);
        let dx = col2im(&d_cols, cache.input_dim, k, k, self.stride, self.padding, oh, ow);

        let d_w = match (&self.spectral, &cache.sigma) {
            (Some(sn), Some((sigma, v))) => {
                let wm = self.weight_matrix();
                sn.backward(&wm.view(), &d_weff.view(), *sigma, v)
            }
            _ => d_weff,
        };
        let shape = self.weight.value.raw_dim();
        self.weight
            .accumulate(d_w.into_dyn().into_shape_with_order(shape).expect("reshape").view());
        self.bias.accumulate(d_bias.into_dyn().view());
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

/// Transposed 2-D convolution (fractionally strided).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvTranspose2d {
    /// Kernel of shape (in, out, kh, kw).
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct DeconvCache {
    x_mat: Array2<f64>,
    input_dim: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        let weight = normal_init(&[in_channels, out_channels, kernel, kernel], init_std, rng);
        Self {
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(vec![out_channels])),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    fn weight_matrix(&self) -> Array2<f64> {
        let i = self.in_channels();
        let rest = self.weight.value.len() / i;
        self.weight
            .value
            .clone()
            .into_shape_with_order((i, rest))
            .expect("reshape")
            .into_dimensionality::<Ix2>()
            .expect("rank 2")
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel();
        Some((
            deconv_output_size(h, k, self.stride, self.padding)?,
            deconv_output_size(w, k, self.stride, self.padding)?,
        ))
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DeconvCache)> {
        let (n, c, h, w) = x.dim();
        if c != self.in_channels() {
            return Err(Error::shape(
                "deconv input",
                format!("(batch, {}, h, w)", self.in_channels()),
                x.shape(),
            ));
        }
        let (oh, ow) = self
            .output_size(h, w)
            .ok_or_else(|| Error::shape("deconv input", "non-degenerate output", x.shape()))?;
        let k = self.kernel();
        let x_mat = channels_major(x);
        let cols = self.weight_matrix().t().dot(&x_mat);
        let mut y = col2im(&cols, (n, self.out_channels(), oh, ow), k, k, self.stride, self.padding, h, w);
        let bias = self.bias.value.view().into_dimensionality().expect("rank 1").to_owned();
        add_channel_bias(&mut y, &bias);
        Ok((
            y,
            DeconvCache {
                x_mat,
                input_dim: (n, c, h, w),
                out_hw: (oh, ow),
            },
        ))
    }

    pub fn backward(&mut self, cache: &DeconvCache, grad_out: &Tensor) -> Tensor {
        let k = self.kernel();
        let (n, _, h, w) = cache.input_dim;
        debug_assert_eq!((grad_out.shape()[2], grad_out.shape()[3]), cache.out_hw);
        let d_bias = channel_sums(grad_out);
        let d_cols = im2col(grad_out, k, k, self.stride, self.padding, h, w);
        let dx = batch_major(self.weight_matrix().dot(&d_cols), n, h, w);
        let d_w = cache.x_mat.dot(&d_cols.t());
        let shape = self.weight.value.raw_dim();
        self.weight
            .accumulate(d_w.into_dyn().into_shape_with_order(shape).expect("reshape").view());
        self.bias.accumulate(d_bias.into_dyn().view());
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor {
        let d = Normal::new(0.0, 1.0).unwrap();
        Array4::from_shape_fn(shape, |_| d.sample(rng))
    }

    /// Direct nested-loop convolution used as an independent reference.
    fn naive_conv(x: &Tensor, w: &Array4<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor {
        let (n, c, h, wd) = x.dim();
        let (o, _, k, _) = w.dim();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut y = Array4::zeros((n, o, oh, ow));
        for ni in 0..n {
            for oc in 0..o {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = b[oc];
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ii = (i * stride + ki) as isize - pad as isize;
                                    let jj = (j * stride + kj) as isize - pad as isize;
                                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                        acc += w[[oc, ci, ki, kj]] * x[[ni, ci, ii as usize, jj as usize]];
                                    }
                                }
                            }
                        }
                        y[[ni, oc, i, j]] = acc;
                    }
                }
            }
        }
        y
    }

    /// Transposed convolution by scattering each input pixel.
    fn naive_deconv(x: &Tensor, w: &Array4<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor {
        let (n, c, h, wd) = x.dim();
        let (_, o, k, _) = w.dim();
        let oh = (h - 1) * stride + k - 2 * pad;
        let ow = (wd - 1) * stride + k - 2 * pad;
        let mut y = Array4::zeros((n, o, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..wd {
                        for oc in 0..o {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ii = (i * stride + ki) as isize - pad as isize;
                                    let jj = (j * stride + kj) as isize - pad as isize;
                                    if ii >= 0 && jj >= 0 && (ii as usize) < oh && (jj as usize) < ow {
                                        y[[ni, oc, ii as usize, jj as usize]] +=
                                            w[[ci, oc, ki, kj]] * x[[ni, ci, i, j]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for ni in 0..n {
            for oc in 0..o {
                y.slice_mut(ndarray::s![ni, oc, .., ..]).mapv_inplace(|v| v + b[oc]);
            }
        }
        y
    }

    #[test]
    fn output_sizes_follow_standard_formulas() {
        assert_eq!(conv_output_size(32, 4, 2, 1), Some(16));
        assert_eq!(conv_output_size(3, 4, 2, 0), None);
        assert_eq!(deconv_output_size(1, 4, 1, 0), Some(4));
        assert_eq!(deconv_output_size(4, 3, 2, 1), Some(7));
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 4), (2, 0, 4), (1, 0, 1)] {
            let conv = Conv2d::new(3, 5, k, stride, pad, false, 0.3, &mut rng);
            let x = random_tensor((2, 3, 7, 7), &mut rng);
            let (y, _) = conv.forward(&x).unwrap();
            let w4 = conv.weight.value.clone().into_dimensionality().unwrap();
            let reference = naive_conv(&x, &w4, &[0.0; 5], stride, pad);
            let err = (&y - &reference).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err < 1e-12, "stride {stride} pad {pad}: {err}");
        }
    }

    #[test]
    fn deconv_matches_naive_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(stride, pad, k) in &[(1, 0, 4), (2, 1, 4), (2, 1, 3), (1, 1, 3)] {
            let mut deconv = ConvTranspose2d::new(4, 3, k, stride, pad, 0.3, &mut rng);
            deconv.bias = Param::new(ArrayD::from_shape_vec(vec![3], vec![0.1, -0.2, 0.3]).unwrap());
            let x = random_tensor((2, 4, 3, 3), &mut rng);
            let (y, _) = deconv.forward(&x).unwrap();
            let w4 = deconv.weight.value.clone().into_dimensionality().unwrap();
            let reference = naive_deconv(&x, &w4, &[0.1, -0.2, 0.3], stride, pad);
            assert_eq!(y.shape(), reference.shape());
            let err = (&y - &reference).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err < 1e-12, "stride {stride} pad {pad}: {err}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor((2, 3, 6, 5), &mut rng);
        let (k, s, p) = (3, 2, 1);
        let oh = conv_output_size(6, k, s, p).unwrap();
        let ow = conv_output_size(5, k, s, p).unwrap();
        let cols = im2col(&x, k, k, s, p, oh, ow);
        let d = Normal::new(0.0, 1.0).unwrap();
        let y = Array2::from_shape_fn(cols.raw_dim(), |_| d.sample(&mut rng));
        let lhs = (&cols * &y).sum();
        let back = col2im(&y, x.dim(), k, k, s, p, oh, ow);
        let rhs = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn wrong_channel_count_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let conv = Conv2d::new(3, 4, 3, 1, 1, false, 0.02, &mut rng);
        let x = Array4::zeros((1, 1, 8, 8));
        assert!(matches!(conv.forward(&x), Err(Error::Shape { .. })));
    }
}
