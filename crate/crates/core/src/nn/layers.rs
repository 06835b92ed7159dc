use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, Array4, ArrayView2, Axis, Ix2};
use rand::Rng;

use super::{ParamId, ParamStore, Scalar};

fn param_view2<T: Scalar>(ps: &ParamStore<T>, id: ParamId, rows: usize, cols: usize) -> ArrayView2<'_, T> {
    ps.get(id)
        .view()
        .into_shape_with_order((rows, cols))
        .expect("parameter is contiguous")
        .into_dimensionality::<Ix2>()
        .expect("2-d view")
}

fn add_to_param2<T: Scalar>(grads: &mut ParamStore<T>, id: ParamId, lhs: ArrayView2<T>, rhs: ArrayView2<T>) {
    let (rows, cols) = (lhs.nrows(), rhs.ncols());
    let mut g = grads
        .get_mut(id)
        .view_mut()
        .into_shape_with_order((rows, cols))
        .expect("gradient is contiguous");
    general_mat_mul(T::one(), &lhs, &rhs, T::one(), &mut g);
}

/// Unfolds `x` into a `(c*k*k, n*oh*ow)` patch matrix.
fn im2col<T: Scalar>(x: &Array4<T>, k: usize, stride: usize, pad: usize, oh: usize, ow: usize) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    let xs = x.as_slice().expect("standard layout input");
    let ncols = n * oh * ow;
    let mut cols = vec![T::zero(); c * k * k * ncols];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..n {
                    let plane = &xs[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let out = &mut dst[(b * oh + oy) * ow..(b * oh + oy + 1) * ow];
                        if stride == 1 {
                            let lo = pad.saturating_sub(kx);
                            let hi = (w + pad).saturating_sub(kx).min(ow);
                            if lo < hi {
                                let off = lo + kx - pad;
                                out[lo..hi].copy_from_slice(&src[off..off + (hi - lo)]);
                            }
                        } else {
                            for (ox, o) in out.iter_mut().enumerate() {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    *o = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * k * k, ncols), cols).expect("im2col shape")
}

/// Adjoint of [`im2col`].
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &Array2<T>,
    dims: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array4<T> {
    let (n, c, h, w) = dims;
    let mut x = vec![T::zero(); n * c * h * w];
    let cs = cols.as_slice().expect("standard layout cols");
    let ncols = n * oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &cs[row * ncols..(row + 1) * ncols];
                for b in 0..n {
                    let plane = &mut x[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &src_row[(b * oh + oy) * ow..(b * oh + oy + 1) * ow];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((n, c, h, w), x).expect("col2im shape")
}

/// `(n, c, h, w)` -> `(c, n*h*w)`.
fn channels_first<T: Scalar>(x: &Array4<T>) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    let hw = h * w;
    let xs = x.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); c * n * hw];
    for b in 0..n {
        for ch in 0..c {
            out[(ch * n + b) * hw..(ch * n + b + 1) * hw]
                .copy_from_slice(&xs[(b * c + ch) * hw..(b * c + ch + 1) * hw]);
        }
    }
    Array2::from_shape_vec((c, n * hw), out).expect("shape")
}

/// Inverse of [`channels_first`].
fn batch_first<T: Scalar>(m: &Array2<T>, n: usize, h: usize, w: usize) -> Array4<T> {
    let c = m.nrows();
    let hw = h * w;
    let ms = m.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); n * c * hw];
    for ch in 0..c {
        for b in 0..n {
            out[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                .copy_from_slice(&ms[(ch * n + b) * hw..(ch * n + b + 1) * hw]);
        }
    }
    Array4::from_shape_vec((n, c, h, w), out).expect("shape")
}

/// 2-d convolution with square kernel, zero padding and bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Registers `{name}.weight` (He-uniform) and `{name}.bias` (zeros).
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let weight = store.push_uniform(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            (6.0 / fan_in).sqrt(),
            rng,
        );
        let bias = store.push_zeros(format!("{name}.bias"), &[out_channels]);
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_channels);
        let (oh, ow) = (self.out_len(h), self.out_len(w));
        let cols = im2col(x, self.kernel, self.stride, self.pad, oh, ow);
        let wmat = param_view2(ps, self.weight, self.out_channels, self.patch_len());
        let mut ymat = Array2::zeros((self.out_channels, n * oh * ow));
        general_mat_mul(T::one(), &wmat, &cols, T::zero(), &mut ymat);
        let bias = ps.get(self.bias);
        for (co, mut row) in ymat.outer_iter_mut().enumerate() {
            let b = bias[co];
            row.mapv_inplace(|v| v + b);
        }
        batch_first(&ymat, n, oh, ow)
    }

    /// Returns the input gradient; accumulates parameter gradients when
    /// `grads` is given.
    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        x: &Array4<T>,
        dy: &Array4<T>,
        grads: Option<&mut ParamStore<T>>,
    ) -> Array4<T> {
        let (n, _, oh, ow) = dy.dim();
        let dymat = channels_first(dy);
        let cols = im2col(x, self.kernel, self.stride, self.pad, oh, ow);
        if let Some(g) = grads {
            add_to_param2(g, self.weight, dymat.view(), cols.t());
            let db = g.get_mut(self.bias);
            for (co, row) in dymat.outer_iter().enumerate() {
                db[co] += row.sum();
            }
        }
        let wmat = param_view2(ps, self.weight, self.out_channels, self.patch_len());
        let mut dcols = Array2::zeros((self.patch_len(), n * oh * ow));
        general_mat_mul(T::one(), &wmat.t(), &dymat, T::zero(), &mut dcols);
        col2im(&dcols, x.dim(), self.kernel, self.stride, self.pad, oh, ow)
    }
}

/// Transposed convolution with a 2x2 kernel and stride 2 (exact upsampling by 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvTranspose2x2 {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose2x2 {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.push_uniform(
            format!("{name}.weight"),
            &[in_channels, out_channels, 2, 2],
            (6.0 / in_channels as f64).sqrt(),
            rng,
        );
        let bias = store.push_zeros(format!("{name}.bias"), &[out_channels]);
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Array4<T> {
        let (n, _, h, w) = x.dim();
        let xmat = channels_first(x);
        let wmat = param_view2(ps, self.weight, self.in_channels, self.out_channels * 4);
        let mut ymat = Array2::zeros((self.out_channels * 4, n * h * w));
        general_mat_mul(T::one(), &wmat.t(), &xmat, T::zero(), &mut ymat);
        let bias = ps.get(self.bias);
        let mut out = Array4::zeros((n, self.out_channels, 2 * h, 2 * w));
        let ys = ymat.as_slice().expect("standard layout");
        let hw = h * w;
        for b in 0..n {
            for co in 0..self.out_channels {
                let bv = bias[co];
                let mut plane = out.slice_mut(s![b, co, .., ..]);
                for a in 0..2 {
                    for bb in 0..2 {
                        let row = co * 4 + a * 2 + bb;
                        let src = &ys[row * n * hw + b * hw..row * n * hw + (b + 1) * hw];
                        for i in 0..h {
                            for j in 0..w {
                                plane[[2 * i + a, 2 * j + bb]] = src[i * w + j] + bv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        x: &Array4<T>,
        dy: &Array4<T>,
        grads: Option<&mut ParamStore<T>>,
    ) -> Array4<T> {
        let (n, _, h, w) = x.dim();
        let hw = h * w;
        let mut gmat = Array2::<T>::zeros((self.out_channels * 4, n * hw));
        {
            let gs = gmat.as_slice_mut().expect("standard layout");
            for b in 0..n {
                for co in 0..self.out_channels {
                    let plane = dy.slice(s![b, co, .., ..]);
                    for a in 0..2 {
                        for bb in 0..2 {
                            let row = co * 4 + a * 2 + bb;
                            let dst = &mut gs[row * n * hw + b * hw..row * n * hw + (b + 1) * hw];
                            for i in 0..h {
                                for j in 0..w {
                                    dst[i * w + j] = plane[[2 * i + a, 2 * j + bb]];
                                }
                            }
                        }
                    }
                }
            }
        }
        let xmat = channels_first(x);
        if let Some(g) = grads {
            add_to_param2(g, self.weight, xmat.view(), gmat.t());
            let db = g.get_mut(self.bias);
            for co in 0..self.out_channels {
                db[co] += dy.slice(s![.., co, .., ..]).sum();
            }
        }
        let wmat = param_view2(ps, self.weight, self.in_channels, self.out_channels * 4);
        let mut dxmat = Array2::zeros((self.in_channels, n * hw));
        general_mat_mul(T::one(), &wmat, &gmat, T::zero(), &mut dxmat);
        batch_first(&dxmat, n, h, w)
    }
}

/// Fully connected layer on `(batch, features)` inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.push_uniform(
            format!("{name}.weight"),
            &[out_features, in_features],
            (6.0 / in_features as f64).sqrt(),
            rng,
        );
        let bias = store.push_zeros(format!("{name}.bias"), &[out_features]);
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Array2<T>) -> Array2<T> {
        let wmat = param_view2(ps, self.weight, self.out_features, self.in_features);
        let mut y = Array2::zeros((x.nrows(), self.out_features));
        general_mat_mul(T::one(), x, &wmat.t(), T::zero(), &mut y);
        let bias = ps.get(self.bias);
        for mut row in y.outer_iter_mut() {
            for (o, v) in row.iter_mut().enumerate() {
                *v += bias[o];
            }
        }
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        x: &Array2<T>,
        dy: &Array2<T>,
        grads: Option<&mut ParamStore<T>>,
    ) -> Array2<T> {
        if let Some(g) = grads {
            add_to_param2(g, self.weight, dy.t(), x.view());
            let db = g.get_mut(self.bias);
            for row in dy.outer_iter() {
                for (o, &v) in row.iter().enumerate() {
                    db[o] += v;
                }
            }
        }
        let wmat = param_view2(ps, self.weight, self.out_features, self.in_features);
        let mut dx = Array2::zeros((dy.nrows(), self.in_features));
        general_mat_mul(T::one(), dy, &wmat, T::zero(), &mut dx);
        dx
    }
}

/// 2x2 max pooling with stride 2. Spatial sizes must be even.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MaxPool2;

impl MaxPool2 {
    /// Returns the pooled map and, per output element, the flat input index
    /// of the selected maximum (first maximum in raster order on ties).
    pub fn forward<T: Scalar>(&self, x: &Array4<T>) -> (Array4<T>, Vec<usize>) {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = (h / 2, w / 2);
        let xs = x.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut idx = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let k = base + (2 * i + di) * w + 2 * j + dj;
                        if xs[k] > xs[best] {
                            best = k;
                        }
                    }
                    out.push(xs[best]);
                    idx.push(best);
                }
            }
        }
        (
            Array4::from_shape_vec((n, c, oh, ow), out).expect("pool shape"),
            idx,
        )
    }

    pub fn backward<T: Scalar>(
        &self,
        input_dim: (usize, usize, usize, usize),
        argmax: &[usize],
        dy: &Array4<T>,
    ) -> Array4<T> {
        let (n, c, h, w) = input_dim;
        let mut dx = vec![T::zero(); n * c * h * w];
        for (&k, &g) in argmax.iter().zip(dy.iter()) {
            dx[k] += g;
        }
        Array4::from_shape_vec(input_dim, dx).expect("pool grad shape")
    }
}

pub fn relu<T: Scalar>(mut x: Array4<T>) -> Array4<T> {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
    x
}

/// Gradient of ReLU given its output `y`.
pub fn relu_backward<T: Scalar>(y: &Array4<T>, dy: &Array4<T>) -> Array4<T> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |g, &v| {
        if v <= T::zero() {
            *g = T::zero();
        }
    });
    dx
}

pub fn leaky_relu<T: Scalar>(mut x: Array4<T>, slope: T) -> Array4<T> {
    x.mapv_inplace(|v| if v > T::zero() { v } else { v * slope });
    x
}

/// Gradient of leaky ReLU given its output `y` (requires `slope > 0`).
pub fn leaky_relu_backward<T: Scalar>(y: &Array4<T>, dy: &Array4<T>, slope: T) -> Array4<T> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |g, &v| {
        if v <= T::zero() {
            *g *= slope;
        }
    });
    dx
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Gradient of the logistic function given its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: T, dy: T) -> T {
    dy * y * (T::one() - y)
}

pub fn concat_channels<T: Scalar>(a: &Array4<T>, b: &Array4<T>) -> Array4<T> {
    concatenate(Axis(1), &[a.view(), b.view()])
        .expect("matching spatial shapes")
        .as_standard_layout()
        .into_owned()
}

/// Splits a gradient of [`concat_channels`] at channel `first`.
pub fn split_channels<T: Scalar>(dy: &Array4<T>, first: usize) -> (Array4<T>, Array4<T>) {
    (
        dy.slice(s![.., ..first, .., ..]).as_standard_layout().into_owned(),
        dy.slice(s![.., first.., .., ..]).as_standard_layout().into_owned(),
    )
}
