//! Layer kernels.
//!
//! Internally a minibatch is held as `(channels, batch, height, width)` so a
//! whole batch of valid convolutions becomes one `im2col` matrix product and
//! a 1x1 convolution needs no copy at all. The public per-sample operations
//! below are the `batch == 1` case of the same kernels.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Batch {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![0.0; channels * batch * height * width],
        }
    }

    /// Packs `batch` samples, each laid out `(c, y, x)` in `flat`.
    pub fn pack(flat: &[f64], batch: usize, (c, h, w): (usize, usize, usize)) -> Self {
        let hw = h * w;
        let per = c * hw;
        debug_assert_eq!(flat.len(), batch * per);
        let mut data = vec![0.0; flat.len()];
        for b in 0..batch {
            for ch in 0..c {
                let src = &flat[b * per + ch * hw..b * per + (ch + 1) * hw];
                data[(ch * batch + b) * hw..(ch * batch + b + 1) * hw].copy_from_slice(src);
            }
        }
        Self {
            channels: c,
            batch,
            height: h,
            width: w,
            data,
        }
    }

    /// Inverse of [`Batch::pack`].
    pub fn unpack(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let per = self.channels * hw;
        let mut out = vec![0.0; self.data.len()];
        for b in 0..self.batch {
            for ch in 0..self.channels {
                let src = &self.data[(ch * self.batch + b) * hw..(ch * self.batch + b + 1) * hw];
                out[b * per + ch * hw..b * per + (ch + 1) * hw].copy_from_slice(src);
            }
        }
        out
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` (row-major).
/// `a_t` / `b_t` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the m*k, k*n and m*n buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(input: &Batch, k: usize) -> Vec<f64> {
    let (c_n, b_n, h, w) = (input.channels, input.batch, input.height, input.width);
    let (ho, wo) = (h - k + 1, w - k + 1);
    let p = ho * wo;
    let cols = b_n * p;
    let mut col = vec![0.0; c_n * k * k * cols];
    for c in 0..c_n {
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                for b in 0..b_n {
                    let plane = &input.data[(c * b_n + b) * h * w..][..h * w];
                    for y in 0..ho {
                        let src = &plane[(y + dy) * w + dx..][..wo];
                        col[row * cols + b * p + y * wo..][..wo].copy_from_slice(src);
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], c_n: usize, b_n: usize, h: usize, w: usize, k: usize) -> Batch {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let p = ho * wo;
    let cols = b_n * p;
    let mut out = Batch::zeros(c_n, b_n, h, w);
    for c in 0..c_n {
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                for b in 0..b_n {
                    let plane = &mut out.data[(c * b_n + b) * h * w..][..h * w];
                    for y in 0..ho {
                        let src = &col[row * cols + b * p + y * wo..][..wo];
                        let dst = &mut plane[(y + dy) * w + dx..][..wo];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Valid cross-correlation. Returns the output and, for `k > 1`, the
/// `im2col` matrix for reuse in the backward pass.
pub(crate) fn conv_forward(
    input: &Batch,
    weights: &[f64],
    bias: &[f64],
    out_channels: usize,
    k: usize,
) -> (Batch, Option<Vec<f64>>) {
    let (ho, wo) = (input.height - k + 1, input.width - k + 1);
    let cols = input.batch * ho * wo;
    let kk = input.channels * k * k;
    let col = (k > 1).then(|| im2col(input, k));
    let col_ref: &[f64] = col.as_deref().unwrap_or(&input.data);
    let mut out = Batch::zeros(out_channels, input.batch, ho, wo);
    for (row, &b) in out.data.chunks_exact_mut(cols).zip(bias) {
        row.fill(b);
    }
    gemm(out_channels, kk, cols, weights, false, col_ref, false, 1.0, &mut out.data);
    (out, col)
}

pub(crate) struct ParamGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn conv_backward(
    input: &Batch,
    col: Option<&[f64]>,
    weights: &[f64],
    grad_out: &Batch,
    k: usize,
    need_input_grad: bool,
) -> (Option<Batch>, ParamGrads) {
    let n = grad_out.channels;
    let cols = grad_out.batch * grad_out.height * grad_out.width;
    let kk = input.channels * k * k;
    let owned;
    let col_ref: &[f64] = match (k, col) {
        (1, _) => &input.data,
        (_, Some(c)) => c,
        (_, None) => {
            owned = im2col(input, k);
            &owned
        }
    };
    let mut gw = vec![0.0; n * kk];
    gemm(n, cols, kk, &grad_out.data, false, col_ref, true, 0.0, &mut gw);
    let gb = grad_out
        .data
        .chunks_exact(cols)
        .map(|row| row.iter().sum())
        .collect();
    let grad_in = need_input_grad.then(|| {
        let mut gcol = vec![0.0; kk * cols];
        gemm(kk, n, cols, weights, true, &grad_out.data, false, 0.0, &mut gcol);
        if k == 1 {
            Batch {
                channels: input.channels,
                batch: input.batch,
                height: input.height,
                width: input.width,
                data: gcol,
            }
        } else {
            col2im(&gcol, input.channels, input.batch, input.height, input.width, k)
        }
    });
    (grad_in, ParamGrads { weights: gw, bias: gb })
}

/// Gathers a batch into an `(features, batch)` matrix for the dense layer.
fn features_by_batch(input: &Batch) -> Vec<f64> {
    let hw = input.height * input.width;
    let b_n = input.batch;
    if hw == 1 {
        return input.data.clone();
    }
    let mut x = vec![0.0; input.data.len()];
    for c in 0..input.channels {
        for b in 0..b_n {
            let src = &input.data[(c * b_n + b) * hw..][..hw];
            for (p, &v) in src.iter().enumerate() {
                x[(c * hw + p) * b_n + b] = v;
            }
        }
    }
    x
}

fn scatter_features(x: &[f64], like: &Batch) -> Batch {
    let hw = like.height * like.width;
    let b_n = like.batch;
    let mut out = Batch::zeros(like.channels, b_n, like.height, like.width);
    if hw == 1 {
        out.data.copy_from_slice(x);
        return out;
    }
    for c in 0..like.channels {
        for b in 0..b_n {
            let dst = &mut out.data[(c * b_n + b) * hw..][..hw];
            for (p, d) in dst.iter_mut().enumerate() {
                *d = x[(c * hw + p) * b_n + b];
            }
        }
    }
    out
}

pub(crate) fn fc_forward_batch(
    input: &Batch,
    weights: &[f64],
    bias: &[f64],
    out_size: usize,
) -> Batch {
    let n = input.sample_len();
    let b_n = input.batch;
    let x = features_by_batch(input);
    let mut out = Batch::zeros(out_size, b_n, 1, 1);
    for (row, &b) in out.data.chunks_exact_mut(b_n).zip(bias) {
        row.fill(b);
    }
    gemm(out_size, n, b_n, weights, false, &x, false, 1.0, &mut out.data);
    out
}

pub(crate) fn fc_backward_batch(
    input: &Batch,
    weights: &[f64],
    grad_out: &Batch,
    need_input_grad: bool,
) -> (Option<Batch>, ParamGrads) {
    let n = input.sample_len();
    let m = grad_out.channels;
    let b_n = input.batch;
    let x = features_by_batch(input);
    let mut gw = vec![0.0; m * n];
    gemm(m, b_n, n, &grad_out.data, false, &x, true, 0.0, &mut gw);
    let gb = grad_out
        .data
        .chunks_exact(b_n)
        .map(|row| row.iter().sum())
        .collect();
    let grad_in = need_input_grad.then(|| {
        let mut gx = vec![0.0; n * b_n];
        gemm(n, m, b_n, weights, true, &grad_out.data, false, 0.0, &mut gx);
        scatter_features(&gx, input)
    });
    (grad_in, ParamGrads { weights: gw, bias: gb })
}

pub(crate) fn relu_in_place(data: &mut [f64]) {
    for v in data {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the layer input was not strictly positive.
pub(crate) fn relu_mask(input: &[f64], grad: &mut [f64]) {
    for (g, &x) in grad.iter_mut().zip(input) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
}

fn single(t: &Tensor) -> Batch {
    let (c, h, w) = t.chw();
    Batch {
        channels: c,
        batch: 1,
        height: h,
        width: w,
        data: t.data().to_vec(),
    }
}

fn conv_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = match input.dims() {
        [c, h, w] => (*c, *h, *w),
        d => return Err(Error::shape("conv2d input", "(C, H, W)", d)),
    };
    let (n, wc, k) = match weights.dims() {
        [n, wc, k1, k2] if k1 == k2 => (*n, *wc, *k1),
        d => return Err(Error::shape("conv2d weights", "(N, C, k, k)", d)),
    };
    if wc != c {
        return Err(Error::shape("conv2d channels", c, wc));
    }
    if k == 0 || k > h || k > w {
        return Err(Error::shape("conv2d kernel vs input", (k, k), (h, w)));
    }
    Ok((c, h, w, n, k))
}

/// Valid (unpadded) cross-correlation of a `C x H x W` input with
/// `N x C x k x k` filters, giving `N x (H-k+1) x (W-k+1)`.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, h, w, n, k) = conv_dims(input, weights)?;
    if bias.len() != n {
        return Err(Error::shape("conv2d bias", n, bias.len()));
    }
    let (out, _) = conv_forward(&single(input), weights.data(), bias.data(), n, k);
    Ok(Tensor::from_parts(vec![n, h - k + 1, w - k + 1], out.data))
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (_, h, w, n, k) = conv_dims(input, weights)?;
    let expected = [n, h - k + 1, w - k + 1];
    if grad_out.dims() != expected {
        return Err(Error::shape("conv2d grad_out", expected, grad_out.dims()));
    }
    let (gi, pg) = conv_backward(&single(input), None, weights.data(), &single(grad_out), k, true);
    Ok((
        Tensor::from_parts(input.dims().to_vec(), gi.expect("requested").data),
        Tensor::from_parts(weights.dims().to_vec(), pg.weights),
        Tensor::from_parts(vec![n], pg.bias),
    ))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    relu_in_place(out.data_mut());
    out
}

/// `grad_out * [x > 0]`; the subgradient at zero is zero.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.dims() != grad_out.dims() {
        return Err(Error::shape("relu grad_out", x.dims(), grad_out.dims()));
    }
    let mut g = grad_out.clone();
    relu_mask(x.data(), g.data_mut());
    Ok(g)
}

fn fc_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    let (m, n) = match weights.dims() {
        [m, n] => (*m, *n),
        d => return Err(Error::shape("fc weights", "(out, in)", d)),
    };
    if input.len() != n {
        return Err(Error::shape("fc input", n, input.len()));
    }
    Ok((m, n))
}

/// `W * x + b` for a flat input of length `n` and `W: m x n`.
pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = fc_dims(input, weights)?;
    if bias.len() != m {
        return Err(Error::shape("fc bias", m, bias.len()));
    }
    let b = Batch {
        channels: n,
        batch: 1,
        height: 1,
        width: 1,
        data: input.data().to_vec(),
    };
    let out = fc_forward_batch(&b, weights.data(), bias.data(), m);
    Ok(Tensor::from_parts(vec![m], out.data))
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn fc_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (m, n) = fc_dims(input, weights)?;
    if grad_out.len() != m {
        return Err(Error::shape("fc grad_out", m, grad_out.len()));
    }
    let b = Batch {
        channels: n,
        batch: 1,
        height: 1,
        width: 1,
        data: input.data().to_vec(),
    };
    let g = Batch {
        channels: m,
        batch: 1,
        height: 1,
        width: 1,
        data: grad_out.data().to_vec(),
    };
    let (gi, pg) = fc_backward_batch(&b, weights.data(), &g, true);
    Ok((
        Tensor::from_parts(input.dims().to_vec(), gi.expect("requested").data),
        Tensor::from_parts(vec![m, n], pg.weights),
        Tensor::from_parts(vec![m], pg.bias),
    ))
}

/// Mean squared error `(1/n) * sum((pred - target)^2)` and its gradient
/// `(2/n) * (pred - target)`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.dims() != target.dims() {
        return Err(Error::shape("mse_loss", pred.dims(), target.dims()));
    }
    let n = pred.len() as f64;
    let (loss, grad) = mse_slices(pred.data(), target.data());
    let grad = grad.into_iter().map(|g| g * 2.0 / n).collect();
    Ok((loss, Tensor::from_parts(pred.dims().to_vec(), grad)))
}

/// Returns the mean squared error and the raw residuals `pred - target`.
pub(crate) fn mse_slices(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / pred.len() as f64;
    (loss, diff)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(dims, data).unwrap()
    }

    #[test]
    fn conv_sum_of_ones() {
        let out = conv2d_forward(
            &Tensor::filled(&[1, 3, 3], 1.0),
            &Tensor::filled(&[1, 1, 3, 3], 1.0),
            &Tensor::zeros(&[1]),
        )
        .unwrap();
        assert_eq!(out.dims(), &[1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let out = conv2d_forward(&x, &Tensor::filled(&[1, 1, 1, 1], 1.0), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv_kernel_too_large() {
        let err = conv2d_forward(
            &Tensor::zeros(&[1, 2, 4]),
            &Tensor::zeros(&[1, 1, 3, 3]),
            &Tensor::zeros(&[1]),
        );
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn conv_backward_zero_grad() {
        let x = Tensor::filled(&[2, 4, 4], 0.3);
        let w = Tensor::filled(&[3, 2, 3, 3], 0.1);
        let (gi, gw, gb) = conv2d_backward(&x, &w, &Tensor::zeros(&[3, 2, 2])).unwrap();
        assert!(gi.data().iter().chain(gw.data()).chain(gb.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn conv_backward_scalar_chain_rule() {
        let x = t(&[1, 1, 1], vec![0.7]);
        let w = t(&[1, 1, 1, 1], vec![-0.4]);
        let (gi, gw, gb) = conv2d_backward(&x, &w, &t(&[1, 1, 1], vec![1.0])).unwrap();
        assert_eq!(gw.data(), &[0.7]);
        assert_eq!(gi.data(), &[-0.4]);
        assert_eq!(gb.data(), &[1.0]);
        assert!(conv2d_backward(&x, &w, &Tensor::zeros(&[2, 1, 1])).is_err());
    }

    #[test]
    fn relu_definition() {
        let x = t(&[3], vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::filled(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);

        let neg = Tensor::filled(&[2, 2], -0.5);
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
        assert!(relu_backward(&neg, &Tensor::filled(&[2, 2], 3.0))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn fc_identity_and_zero() {
        let x = t(&[3], vec![0.1, -0.2, 0.3]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(fc_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(), x.data());
        let b = t(&[2], vec![0.5, -1.5]);
        assert_eq!(fc_forward(&x, &Tensor::zeros(&[2, 3]), &b).unwrap().data(), b.data());
        assert!(fc_forward(&t(&[2], vec![0.0, 0.0]), &eye, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn mse_closed_forms() {
        let p = t(&[4], vec![0.1, 0.2, 0.3, 0.4]);
        let (l, g) = mse_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let q = t(&[4], vec![0.35, 0.45, 0.55, 0.65]);
        let (l, g) = mse_loss(&q, &p).unwrap();
        assert!((l - 0.0625).abs() < 1e-15);
        assert!(g.data().iter().all(|&v| (v - 0.125).abs() < 1e-15));
        assert!(mse_loss(&p, &t(&[2, 2], vec![0.0; 4])).is_err());
    }

    #[test]
    fn pack_unpack_inverse() {
        let flat: Vec<f64> = (0..2 * 3 * 2 * 2).map(|v| v as f64).collect();
        let b = Batch::pack(&flat, 2, (3, 2, 2));
        assert_eq!(b.data[4], 12.0);
        assert_eq!(b.unpack(), flat);
    }
}
