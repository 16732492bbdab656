//! Variational layers: forward moment propagation of (mean, variance)
//! pairs and hand-derived analytic backward passes, plus the
//! deterministic twins used by the baseline regimes.
//!
//! Linear propagation follows the vectorized diagonal form
//!   mu_z[i]  = sum_h mu_w[h,i] mu_x[h] + mu_b[i]
//!   var_z[i] = sum_h (var_x[h] var_w[h,i] + mu_x[h]^2 var_w[h,i]
//!                     + var_x[h] mu_w[h,i]^2) + var_b[i]
//! and nonlinearities use the first-order approximation
//!   mu_g = psi(mu_z), var_g = var_z * psi'(mu_z)^2.

use crate::error::{Result, VdpError};
use crate::gaussian::GaussianTensor;
use crate::numerics::{col2im, im2col, PatchLayout};
use crate::param::VariationalParameter;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Gradient of a scalar objective with respect to an activation
/// distribution (both its mean and its variance).
#[derive(Debug, Clone)]
pub struct GaussGrad {
    pub mean: Tensor,
    pub variance: Tensor,
}

impl GaussGrad {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            mean: Tensor::zeros(shape.to_vec()),
            variance: Tensor::zeros(shape.to_vec()),
        }
    }
}

/// Destination slices for one parameter block's gradients. `rho` is empty
/// in deterministic mode, where only mu is trainable.
pub struct ParamGradSink<'a> {
    pub mu: &'a mut [f64],
    pub rho: &'a mut [f64],
}

/// Sinks for a two-parameter layer (weights/kernels + bias). `None` when
/// the layer is frozen or out of the training scope.
pub type LayerSinks<'a> = Option<(ParamGradSink<'a>, ParamGradSink<'a>)>;

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// Fully connected variational layer, weights stored [n_in, n_out]
/// row-major.
#[derive(Debug, Clone)]
pub struct VdpLinear {
    pub weights: VariationalParameter,
    pub bias: VariationalParameter,
    pub n_in: usize,
    pub n_out: usize,
}

impl VdpLinear {
    pub fn init(n_in: usize, n_out: usize, pi: f64, rng: &mut SeededRng) -> Self {
        Self {
            weights: VariationalParameter::init(vec![n_in, n_out], pi, rng),
            bias: VariationalParameter::init(vec![n_out], pi, rng),
            n_in,
            n_out,
        }
    }

    pub fn from_parts(weights: VariationalParameter, bias: VariationalParameter) -> Result<Self> {
        let ws = weights.mu.shape().to_vec();
        if ws.len() != 2 || bias.mu.shape() != [ws[1]] {
            return Err(VdpError::DimensionMismatch(format!(
                "linear weights {:?} incompatible with bias {:?}",
                ws,
                bias.mu.shape()
            )));
        }
        Ok(Self { n_in: ws[0], n_out: ws[1], weights, bias })
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.n_in {
            return Err(VdpError::DimensionMismatch(format!(
                "linear layer expects {} inputs, got {}",
                self.n_in, len
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &GaussianTensor) -> Result<GaussianTensor> {
        self.check_input(x.len())?;
        let (n, m) = (self.n_in, self.n_out);
        let mx = x.mean.data();
        let vx = x.variance.data();
        let mw = self.weights.mu.data();
        let vw = self.weights.variance().data();
        let mut mz: Vec<f64> = self.bias.mu.data().to_vec();
        let mut vz: Vec<f64> = self.bias.variance().data().to_vec();
        for h in 0..n {
            let (mxh, vxh) = (mx[h], vx[h]);
            let mxh2 = mxh * mxh;
            let row_m = &mw[h * m..(h + 1) * m];
            let row_v = &vw[h * m..(h + 1) * m];
            if vxh == 0.0 {
                for i in 0..m {
                    mz[i] += row_m[i] * mxh;
                    vz[i] += mxh2 * row_v[i];
                }
            } else {
                for i in 0..m {
                    mz[i] += row_m[i] * mxh;
                    vz[i] += vxh * row_v[i] + mxh2 * row_v[i] + vxh * row_m[i] * row_m[i];
                }
            }
        }
        GaussianTensor::new(Tensor::from_vec(mz), Tensor::from_vec(vz))
    }

    /// Backward through the moment map. `x` is the cached forward input.
    /// Parameter gradients go into `sinks`; the return value is the
    /// gradient with respect to the input distribution.
    pub fn backward(
        &self,
        x: &GaussianTensor,
        d_out: &GaussGrad,
        sinks: LayerSinks<'_>,
    ) -> Result<GaussGrad> {
        self.check_input(x.len())?;
        let (n, m) = (self.n_in, self.n_out);
        let mx = x.mean.data();
        let vx = x.variance.data();
        let mw = self.weights.mu.data();
        let vw = self.weights.variance().data();
        let jw = self.weights.variance_jacobian().data();
        let dmz = d_out.mean.data();
        let dvz = d_out.variance.data();

        let mut dmx = vec![0.0; n];
        let mut dvx = vec![0.0; n];
        match sinks {
            Some((w_sink, b_sink)) => {
                let with_rho = !w_sink.rho.is_empty();
                for h in 0..n {
                    let (mxh, vxh) = (mx[h], vx[h]);
                    let mxh2 = mxh * mxh;
                    let row_m = &mw[h * m..(h + 1) * m];
                    let row_v = &vw[h * m..(h + 1) * m];
                    let row_j = &jw[h * m..(h + 1) * m];
                    let gw_mu = &mut w_sink.mu[h * m..(h + 1) * m];
                    let mut acc_m = 0.0;
                    let mut acc_v1 = 0.0;
                    let mut acc_v2 = 0.0;
                    if with_rho {
                        let gw_rho = &mut w_sink.rho[h * m..(h + 1) * m];
                        for i in 0..m {
                            let (d_m, d_v) = (dmz[i], dvz[i]);
                            gw_mu[i] += d_m * mxh + d_v * vxh * 2.0 * row_m[i];
                            gw_rho[i] += d_v * (vxh + mxh2) * row_j[i];
                            acc_m += d_m * row_m[i];
                            acc_v1 += d_v * row_v[i];
                            acc_v2 += d_v * (row_v[i] + row_m[i] * row_m[i]);
                        }
                    } else {
                        for i in 0..m {
                            let (d_m, d_v) = (dmz[i], dvz[i]);
                            gw_mu[i] += d_m * mxh + d_v * vxh * 2.0 * row_m[i];
                            acc_m += d_m * row_m[i];
                            acc_v1 += d_v * row_v[i];
                            acc_v2 += d_v * (row_v[i] + row_m[i] * row_m[i]);
                        }
                    }
                    dmx[h] = acc_m + 2.0 * mxh * acc_v1;
                    dvx[h] = acc_v2;
                }
                let jb = self.bias.variance_jacobian().data();
                for i in 0..m {
                    b_sink.mu[i] += dmz[i];
                    if !b_sink.rho.is_empty() {
                        b_sink.rho[i] += dvz[i] * jb[i];
                    }
                }
            }
            None => {
                // Frozen layer: propagate to the input only.
                for h in 0..n {
                    let (mxh, vxh) = (mx[h], vx[h]);
                    let _ = vxh;
                    let row_m = &mw[h * m..(h + 1) * m];
                    let row_v = &vw[h * m..(h + 1) * m];
                    let mut acc_m = 0.0;
                    let mut acc_v1 = 0.0;
                    let mut acc_v2 = 0.0;
                    for i in 0..m {
                        acc_m += dmz[i] * row_m[i];
                        acc_v1 += dvz[i] * row_v[i];
                        acc_v2 += dvz[i] * (row_v[i] + row_m[i] * row_m[i]);
                    }
                    dmx[h] = acc_m + 2.0 * mxh * acc_v1;
                    dvx[h] = acc_v2;
                }
            }
        }
        Ok(GaussGrad { mean: Tensor::from_vec(dmx), variance: Tensor::from_vec(dvx) })
    }

    pub fn det_forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.len())?;
        let (n, m) = (self.n_in, self.n_out);
        let mw = self.weights.mu.data();
        let mut z: Vec<f64> = self.bias.mu.data().to_vec();
        for h in 0..n {
            let xh = x.data()[h];
            let row = &mw[h * m..(h + 1) * m];
            for i in 0..m {
                z[i] += row[i] * xh;
            }
        }
        Ok(Tensor::from_vec(z))
    }

    pub fn det_backward(
        &self,
        x: &Tensor,
        d_out: &Tensor,
        sinks: LayerSinks<'_>,
    ) -> Result<Tensor> {
        self.check_input(x.len())?;
        let (n, m) = (self.n_in, self.n_out);
        let mw = self.weights.mu.data();
        let dz = d_out.data();
        let mut dx = vec![0.0; n];
        if let Some((w_sink, b_sink)) = sinks {
            for h in 0..n {
                let xh = x.data()[h];
                let row = &mw[h * m..(h + 1) * m];
                let gw = &mut w_sink.mu[h * m..(h + 1) * m];
                let mut acc = 0.0;
                for i in 0..m {
                    gw[i] += dz[i] * xh;
                    acc += dz[i] * row[i];
                }
                dx[h] = acc;
            }
            for i in 0..m {
                b_sink.mu[i] += dz[i];
            }
        } else {
            for h in 0..n {
                let row = &mw[h * m..(h + 1) * m];
                dx[h] = (0..m).map(|i| dz[i] * row[i]).sum();
            }
        }
        Ok(Tensor::from_vec(dx))
    }

    /// Deterministic forward with one sampled weight realization, for the
    /// Monte-Carlo moment oracle.
    pub fn sampled_forward(&self, x: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
        self.check_input(x.len())?;
        let (n, m) = (self.n_in, self.n_out);
        let mw = self.weights.mu.data();
        let vw = self.weights.variance().data();
        let mb = self.bias.mu.data();
        let vb = self.bias.variance().data();
        let mut z: Vec<f64> = (0..m)
            .map(|i| mb[i] + vb[i].sqrt() * rng.next_normal())
            .collect();
        for h in 0..n {
            let xh = x.data()[h];
            for i in 0..m {
                let w = mw[h * m + i] + vw[h * m + i].sqrt() * rng.next_normal();
                z[i] += w * xh;
            }
        }
        Ok(Tensor::from_vec(z))
    }
}

// ---------------------------------------------------------------------------
// Convolution (im2col + linear moment propagation)
// ---------------------------------------------------------------------------

/// Convolution realized as im2col followed by the linear moment map.
/// Kernels stored [out_ch, in_ch*kh*kw] row-major.
#[derive(Debug, Clone)]
pub struct VdpConv {
    pub kernels: VariationalParameter,
    pub bias: VariationalParameter,
    pub layout: PatchLayout,
    pub out_ch: usize,
}

/// im2col columns cached by the forward pass for reuse in backward.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub cols_mean: Tensor,
    pub cols_var: Tensor,
}

impl VdpConv {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        in_ch: usize,
        in_h: usize,
        in_w: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
        pi: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let layout = PatchLayout::new(in_ch, in_h, in_w, kh, kw, stride, padding)?;
        let k = layout.patch_len();
        Ok(Self {
            kernels: VariationalParameter::init(vec![out_ch, k], pi, rng),
            bias: VariationalParameter::init(vec![out_ch], pi, rng),
            layout,
            out_ch,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.out_ch, self.layout.out_h, self.layout.out_w]
    }

    pub fn forward(&self, x: &GaussianTensor) -> Result<(GaussianTensor, ConvCache)> {
        let cols_mean = im2col(&x.mean, &self.layout)?;
        let cols_var = im2col(&x.variance, &self.layout)?;
        let k = self.layout.patch_len();
        let l = self.layout.n_patches();
        let cm = cols_mean.data();
        let cv = cols_var.data();
        let mk = self.kernels.mu.data();
        let vk = self.kernels.variance().data();
        let mb = self.bias.mu.data();
        let vb = self.bias.variance().data();
        let mut mz = vec![0.0; self.out_ch * l];
        let mut vz = vec![0.0; self.out_ch * l];
        for o in 0..self.out_ch {
            let krow_m = &mk[o * k..(o + 1) * k];
            let krow_v = &vk[o * k..(o + 1) * k];
            let out_m = &mut mz[o * l..(o + 1) * l];
            let out_v = &mut vz[o * l..(o + 1) * l];
            out_m.fill(mb[o]);
            out_v.fill(vb[o]);
            for kk in 0..k {
                let (mw, vw) = (krow_m[kk], krow_v[kk]);
                let mw2 = mw * mw;
                let col_m = &cm[kk * l..(kk + 1) * l];
                let col_v = &cv[kk * l..(kk + 1) * l];
                for j in 0..l {
                    out_m[j] += mw * col_m[j];
                    out_v[j] += col_v[j] * vw + col_m[j] * col_m[j] * vw + col_v[j] * mw2;
                }
            }
        }
        let out = GaussianTensor::new(
            Tensor::new(self.out_shape(), mz)?,
            Tensor::new(self.out_shape(), vz)?,
        )?;
        Ok((out, ConvCache { cols_mean, cols_var }))
    }

    pub fn backward(
        &self,
        cache: &ConvCache,
        d_out: &GaussGrad,
        sinks: LayerSinks<'_>,
    ) -> Result<GaussGrad> {
        let k = self.layout.patch_len();
        let l = self.layout.n_patches();
        let cm = cache.cols_mean.data();
        let cv = cache.cols_var.data();
        let mk = self.kernels.mu.data();
        let vk = self.kernels.variance().data();
        let jk = self.kernels.variance_jacobian().data();
        let dmz = d_out.mean.data();
        let dvz = d_out.variance.data();

        let mut dcol_m = vec![0.0; k * l];
        let mut dcol_v = vec![0.0; k * l];
        let mut sinks = sinks;
        for o in 0..self.out_ch {
            let krow_m = &mk[o * k..(o + 1) * k];
            let krow_v = &vk[o * k..(o + 1) * k];
            let d_m = &dmz[o * l..(o + 1) * l];
            let d_v = &dvz[o * l..(o + 1) * l];
            for kk in 0..k {
                let (mw, vw) = (krow_m[kk], krow_v[kk]);
                let col_m = &cm[kk * l..(kk + 1) * l];
                let col_v = &cv[kk * l..(kk + 1) * l];
                let dst_m = &mut dcol_m[kk * l..(kk + 1) * l];
                let dst_v = &mut dcol_v[kk * l..(kk + 1) * l];
                let mut g_mu = 0.0;
                let mut g_var = 0.0;
                for j in 0..l {
                    dst_m[j] += d_m[j] * mw + d_v[j] * vw * 2.0 * col_m[j];
                    dst_v[j] += d_v[j] * (vw + mw * mw);
                    g_mu += d_m[j] * col_m[j] + d_v[j] * col_v[j] * 2.0 * mw;
                    g_var += d_v[j] * (col_v[j] + col_m[j] * col_m[j]);
                }
                if let Some((w_sink, _)) = sinks.as_mut() {
                    w_sink.mu[o * k + kk] += g_mu;
                    if !w_sink.rho.is_empty() {
                        w_sink.rho[o * k + kk] += g_var * jk[o * k + kk];
                    }
                }
            }
            if let Some((_, b_sink)) = sinks.as_mut() {
                b_sink.mu[o] += d_m.iter().sum::<f64>();
                if !b_sink.rho.is_empty() {
                    let jb = self.bias.variance_jacobian().data()[o];
                    b_sink.rho[o] += d_v.iter().sum::<f64>() * jb;
                }
            }
        }
        let dmx = col2im(&Tensor::new(vec![k, l], dcol_m)?, &self.layout)?;
        let dvx = col2im(&Tensor::new(vec![k, l], dcol_v)?, &self.layout)?;
        Ok(GaussGrad { mean: dmx, variance: dvx })
    }

    pub fn det_forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let cols = im2col(x, &self.layout)?;
        let k = self.layout.patch_len();
        let l = self.layout.n_patches();
        let c = cols.data();
        let mk = self.kernels.mu.data();
        let mb = self.bias.mu.data();
        let mut z = vec![0.0; self.out_ch * l];
        for o in 0..self.out_ch {
            let krow = &mk[o * k..(o + 1) * k];
            let out = &mut z[o * l..(o + 1) * l];
            out.fill(mb[o]);
            for kk in 0..k {
                let w = krow[kk];
                let col = &c[kk * l..(kk + 1) * l];
                for j in 0..l {
                    out[j] += w * col[j];
                }
            }
        }
        Ok((Tensor::new(self.out_shape(), z)?, cols))
    }

    pub fn det_backward(
        &self,
        cols: &Tensor,
        d_out: &Tensor,
        sinks: LayerSinks<'_>,
    ) -> Result<Tensor> {
        let k = self.layout.patch_len();
        let l = self.layout.n_patches();
        let c = cols.data();
        let mk = self.kernels.mu.data();
        let dz = d_out.data();
        let mut dcol = vec![0.0; k * l];
        let mut sinks = sinks;
        for o in 0..self.out_ch {
            let krow = &mk[o * k..(o + 1) * k];
            let d = &dz[o * l..(o + 1) * l];
            for kk in 0..k {
                let w = krow[kk];
                let col = &c[kk * l..(kk + 1) * l];
                let dst = &mut dcol[kk * l..(kk + 1) * l];
                let mut g = 0.0;
                for j in 0..l {
                    dst[j] += d[j] * w;
                    g += d[j] * col[j];
                }
                if let Some((w_sink, _)) = sinks.as_mut() {
                    w_sink.mu[o * k + kk] += g;
                }
            }
            if let Some((_, b_sink)) = sinks.as_mut() {
                b_sink.mu[o] += d.iter().sum::<f64>();
            }
        }
        col2im(&Tensor::new(vec![k, l], dcol)?, &self.layout)
    }

    pub fn sampled_forward(&self, x: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
        let cols = im2col(x, &self.layout)?;
        let k = self.layout.patch_len();
        let l = self.layout.n_patches();
        let c = cols.data();
        let mk = self.kernels.mu.data();
        let vk = self.kernels.variance().data();
        let mb = self.bias.mu.data();
        let vb = self.bias.variance().data();
        let mut z = vec![0.0; self.out_ch * l];
        for o in 0..self.out_ch {
            let b = mb[o] + vb[o].sqrt() * rng.next_normal();
            let out = &mut z[o * l..(o + 1) * l];
            out.fill(b);
            for kk in 0..k {
                let idx = o * k + kk;
                let w = mk[idx] + vk[idx].sqrt() * rng.next_normal();
                let col = &c[kk * l..(kk + 1) * l];
                for j in 0..l {
                    out[j] += w * col[j];
                }
            }
        }
        Tensor::new(self.out_shape(), z)
    }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu_forward(z: &GaussianTensor) -> GaussianTensor {
    let mean = z.mean.map(|x| x.max(0.0));
    let variance = Tensor::new(
        z.variance.shape().to_vec(),
        z.mean
            .data()
            .iter()
            .zip(z.variance.data())
            .map(|(&m, &v)| if m > 0.0 { v } else { 0.0 })
            .collect(),
    )
    .unwrap();
    GaussianTensor { mean, variance }
}

pub fn relu_backward(z: &GaussianTensor, d_out: &GaussGrad) -> GaussGrad {
    let gate = |i: usize| if z.mean.data()[i] > 0.0 { 1.0 } else { 0.0 };
    let mean = Tensor::new(
        z.mean.shape().to_vec(),
        (0..z.len()).map(|i| d_out.mean.data()[i] * gate(i)).collect(),
    )
    .unwrap();
    let variance = Tensor::new(
        z.mean.shape().to_vec(),
        (0..z.len())
            .map(|i| d_out.variance.data()[i] * gate(i))
            .collect(),
    )
    .unwrap();
    GaussGrad { mean, variance }
}

pub fn det_relu_forward(z: &Tensor) -> Tensor {
    z.map(|x| x.max(0.0))
}

pub fn det_relu_backward(z: &Tensor, d_out: &Tensor) -> Tensor {
    Tensor::new(
        z.shape().to_vec(),
        z.data()
            .iter()
            .zip(d_out.data())
            .map(|(&zi, &d)| if zi > 0.0 { d } else { 0.0 })
            .collect(),
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Numerically stable softmax of the mean vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Moment propagation through softmax with a diagonal Jacobian:
/// var_y[i] = var_z[i] * (s_i (1 - s_i))^2.
pub fn softmax_forward(z: &GaussianTensor) -> (GaussianTensor, Tensor) {
    let s = softmax(z.mean.data());
    let variance: Vec<f64> = z
        .variance
        .data()
        .iter()
        .zip(&s)
        .map(|(&v, &si)| {
            let j = si * (1.0 - si);
            v * j * j
        })
        .collect();
    let probs = Tensor::new(z.mean.shape().to_vec(), s).unwrap();
    (
        GaussianTensor {
            mean: probs.clone(),
            variance: Tensor::new(z.mean.shape().to_vec(), variance).unwrap(),
        },
        probs,
    )
}

/// Backward through the diagonal softmax moment map. `z` is the cached
/// pre-softmax distribution, `s` the cached softmax probabilities.
pub fn softmax_backward(z: &GaussianTensor, s: &Tensor, d_out: &GaussGrad) -> GaussGrad {
    let n = z.len();
    let sv = s.data();
    let vz = z.variance.data();
    let dmy = d_out.mean.data();
    let dvy = d_out.variance.data();
    // dvz through the diagonal map, plus the mean-path coefficients:
    // a_i collects both d(mu_y)/d(mu_z) and d(var_y)/d(mu_z) contributions,
    // each proportional to s_i (delta_ij - s_j).
    let mut a = vec![0.0; n];
    let mut dvz_out = vec![0.0; n];
    for i in 0..n {
        let j = sv[i] * (1.0 - sv[i]);
        dvz_out[i] = dvy[i] * j * j;
        a[i] = dmy[i] + dvy[i] * vz[i] * 2.0 * j * (1.0 - 2.0 * sv[i]);
    }
    let dot: f64 = a.iter().zip(sv).map(|(&ai, &si)| ai * si).sum();
    let dmz: Vec<f64> = (0..n).map(|j| sv[j] * (a[j] - dot)).collect();
    GaussGrad {
        mean: Tensor::new(z.mean.shape().to_vec(), dmz).unwrap(),
        variance: Tensor::new(z.mean.shape().to_vec(), dvz_out).unwrap(),
    }
}

pub fn det_softmax_forward(z: &Tensor) -> Tensor {
    Tensor::new(z.shape().to_vec(), softmax(z.data())).unwrap()
}

pub fn det_softmax_backward(s: &Tensor, d_out: &Tensor) -> Tensor {
    let dot: f64 = d_out.data().iter().zip(s.data()).map(|(&d, &si)| d * si).sum();
    Tensor::new(
        s.shape().to_vec(),
        s.data()
            .iter()
            .zip(d_out.data())
            .map(|(&si, &d)| si * (d - dot))
            .collect(),
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn gauss(mean: Vec<f64>, var: Vec<f64>) -> GaussianTensor {
        GaussianTensor::new(Tensor::from_vec(mean), Tensor::from_vec(var)).unwrap()
    }

    fn scalar_layer(mu_w: f64, var_w: f64, mu_b: f64, var_b: f64) -> VdpLinear {
        // Invert softplus to hit an exact effective variance.
        let rho = |v: f64| (v.exp() - 1.0).ln();
        VdpLinear::from_parts(
            VariationalParameter::new(
                Tensor::new(vec![1, 1], vec![mu_w]).unwrap(),
                Tensor::new(vec![1, 1], vec![rho(var_w)]).unwrap(),
            )
            .unwrap(),
            VariationalParameter::new(
                Tensor::from_vec(vec![mu_b]),
                Tensor::from_vec(vec![rho(var_b)]),
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn linear_scalar_moment_example() {
        // mu_x=2, var_x=1, mu_w=3, var_w=4, zero bias:
        // mu_z = 6, var_z = 1*4 + 4*4 + 1*9 = 29.
        let layer = scalar_layer(3.0, 4.0, 0.0, 1e-300);
        let out = layer.forward(&gauss(vec![2.0], vec![1.0])).unwrap();
        assert!((out.mean.data()[0] - 6.0).abs() < 1e-12);
        assert!((out.variance.data()[0] - 29.0).abs() < 1e-10);
    }

    #[test]
    fn linear_deterministic_input_reduction() {
        // var_x = 0: var_z = sum_h mu_x^2 var_w + var_b.
        let layer = scalar_layer(3.0, 4.0, 1.0, 2.0);
        let out = layer.forward(&gauss(vec![2.0], vec![0.0])).unwrap();
        assert!((out.mean.data()[0] - 7.0).abs() < 1e-12);
        assert!((out.variance.data()[0] - (4.0 * 4.0 + 2.0)).abs() < 1e-10);
    }

    #[test]
    fn linear_zero_variance_closure() {
        let layer = scalar_layer(1.5, 1e-300, -0.25, 1e-300);
        let out = layer.forward(&gauss(vec![2.0], vec![0.0])).unwrap();
        assert!((out.mean.data()[0] - 2.75).abs() < 1e-12);
        assert!(out.variance.data()[0] < 1e-290);
        let det = layer.det_forward(&Tensor::from_vec(vec![2.0])).unwrap();
        assert_eq!(det.data()[0], out.mean.data()[0]);
    }

    #[test]
    fn linear_dimension_mismatch_errors() {
        let mut rng = SeededRng::new(1);
        let layer = VdpLinear::init(3, 2, -2.0, &mut rng);
        let bad = gauss(vec![1.0, 2.0], vec![0.0, 0.0]);
        assert!(layer.forward(&bad).is_err());
    }

    #[test]
    fn relu_moment_examples() {
        let dead = relu_forward(&gauss(vec![-1.0], vec![4.0]));
        assert_eq!(dead.mean.data()[0], 0.0);
        assert_eq!(dead.variance.data()[0], 0.0);
        let live = relu_forward(&gauss(vec![2.0], vec![3.0]));
        assert_eq!(live.mean.data()[0], 2.0);
        assert_eq!(live.variance.data()[0], 3.0);
        let certain = relu_forward(&gauss(vec![5.0, -5.0], vec![0.0, 0.0]));
        assert_eq!(certain.variance.data(), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_symmetric_two_class() {
        let v = 0.8;
        let (out, _) = softmax_forward(&gauss(vec![1.0, 1.0], vec![v, v]));
        assert!((out.mean.data()[0] - 0.5).abs() < 1e-15);
        assert!((out.variance.data()[0] - v / 16.0).abs() < 1e-15);
        assert!((out.variance.data()[1] - v / 16.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_logits_stable() {
        let (out, _) = softmax_forward(&gauss(vec![1000.0, 0.0], vec![0.0, 0.0]));
        assert!(out.mean.all_finite());
        assert!((out.mean.data()[0] - 1.0).abs() < 1e-12);
        assert!(out.variance.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn conv_1x1_matches_scalar_linear() {
        let linear = scalar_layer(3.0, 4.0, 0.5, 1.0);
        let conv = VdpConv {
            kernels: linear.weights.clone(),
            bias: linear.bias.clone(),
            layout: PatchLayout::new(1, 1, 1, 1, 1, 1, 0).unwrap(),
            out_ch: 1,
        };
        let x = GaussianTensor::new(
            Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap(),
            Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap(),
        )
        .unwrap();
        let (out, _) = conv.forward(&x).unwrap();
        let lin = linear.forward(&gauss(vec![2.0], vec![1.0])).unwrap();
        assert!((out.mean.data()[0] - lin.mean.data()[0]).abs() < 1e-12);
        assert!((out.variance.data()[0] - lin.variance.data()[0]).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_linear_on_flattened_patches() {
        let mut rng = SeededRng::new(42);
        let conv = VdpConv::init(1, 3, 3, 1, 2, 2, 1, 0, -1.5, &mut rng).unwrap();
        let mean = Tensor::new(vec![1, 3, 3], (0..9).map(|i| 0.3 * i as f64 - 1.0).collect()).unwrap();
        let var = Tensor::new(vec![1, 3, 3], (0..9).map(|i| 0.1 * (i + 1) as f64).collect()).unwrap();
        let x = GaussianTensor::new(mean.clone(), var.clone()).unwrap();
        let (out, _) = conv.forward(&x).unwrap();

        // Equivalent single-output linear layer on each flattened patch.
        let k = conv.layout.patch_len();
        let w = VariationalParameter::new(
            Tensor::new(vec![k, 1], conv.kernels.mu.data().to_vec()).unwrap(),
            Tensor::new(vec![k, 1], conv.kernels.rho().data().to_vec()).unwrap(),
        )
        .unwrap();
        let linear = VdpLinear::from_parts(w, conv.bias.clone()).unwrap();
        let cols_m = im2col(&mean, &conv.layout).unwrap();
        let cols_v = im2col(&var, &conv.layout).unwrap();
        let l = conv.layout.n_patches();
        for j in 0..l {
            let pm: Vec<f64> = (0..k).map(|r| cols_m.data()[r * l + j]).collect();
            let pv: Vec<f64> = (0..k).map(|r| cols_v.data()[r * l + j]).collect();
            let expect = linear.forward(&gauss(pm, pv)).unwrap();
            assert!((out.mean.data()[j] - expect.mean.data()[0]).abs() < 1e-12);
            assert!((out.variance.data()[j] - expect.variance.data()[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_zero_variance_closure() {
        let mut rng = SeededRng::new(7);
        let mut conv = VdpConv::init(2, 4, 4, 3, 3, 3, 1, 1, -5.0, &mut rng).unwrap();
        let rho_floor = Tensor::full(conv.kernels.mu.shape().to_vec(), -700.0);
        conv.kernels.set_rho(rho_floor).unwrap();
        conv.bias
            .set_rho(Tensor::full(vec![3], -700.0))
            .unwrap();
        let mean = Tensor::new(vec![2, 4, 4], (0..32).map(|i| (i as f64).sin()).collect()).unwrap();
        let x = GaussianTensor::deterministic(mean.clone());
        let (out, _) = conv.forward(&x).unwrap();
        assert!(out.variance.data().iter().all(|&v| v < 1e-290));
        let (det, _) = conv.det_forward(&mean).unwrap();
        for (a, b) in out.mean.data().iter().zip(det.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
