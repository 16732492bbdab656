//! Elementwise scalar kernels, Gaussian sampling, im2col patch extraction
//! and the central finite-difference gradient oracle.

use crate::error::{Result, VdpError};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// softplus(x) = ln(1 + e^x), stable for large |x| via
/// max(x, 0) + ln(1 + e^-|x|).
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// d softplus / dx = sigmoid(x), stable in both tails.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(rho: &Tensor) -> Tensor {
    rho.map(softplus_scalar)
}

/// Independent elementwise draws from N(mean, variance).
pub fn gaussian_sample(rng: &mut SeededRng, mean: &Tensor, variance: &Tensor) -> Result<Tensor> {
    mean.same_shape(variance)?;
    let data = mean
        .data()
        .iter()
        .zip(variance.data())
        .map(|(&m, &v)| m + v.sqrt() * rng.next_normal())
        .collect();
    Tensor::new(mean.shape().to_vec(), data)
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Patch geometry shared by im2col and col2im.
#[derive(Debug, Clone, Copy)]
pub struct PatchLayout {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PatchLayout {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let out_h = conv_out_dim(height, kh, stride, padding);
        let out_w = conv_out_dim(width, kw, stride, padding);
        match (out_h, out_w) {
            (Some(out_h), Some(out_w)) if out_h >= 1 && out_w >= 1 => Ok(Self {
                channels,
                height,
                width,
                kh,
                kw,
                stride,
                padding,
                out_h,
                out_w,
            }),
            _ => Err(VdpError::KernelTooLarge {
                kh,
                kw,
                h: height + 2 * padding,
                w: width + 2 * padding,
            }),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn n_patches(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Extract receptive-field columns from a C x H x W image. Column j holds
/// the row-major vectorized patch under output location j; out-of-bounds
/// taps read zero. Output is (C*kh*kw) x L, row-major.
pub fn im2col(image: &Tensor, layout: &PatchLayout) -> Result<Tensor> {
    let expected = vec![layout.channels, layout.height, layout.width];
    if image.shape() != expected.as_slice() {
        return Err(VdpError::ShapeMismatch { expected, got: image.shape().to_vec() });
    }
    let l = layout.n_patches();
    let k = layout.patch_len();
    let mut cols = vec![0.0; k * l];
    let src = image.data();
    for c in 0..layout.channels {
        for ky in 0..layout.kh {
            for kx in 0..layout.kw {
                let row = (c * layout.kh + ky) * layout.kw + kx;
                for oy in 0..layout.out_h {
                    let iy = (oy * layout.stride + ky) as isize - layout.padding as isize;
                    for ox in 0..layout.out_w {
                        let ix = (ox * layout.stride + kx) as isize - layout.padding as isize;
                        let col = oy * layout.out_w + ox;
                        if iy >= 0
                            && (iy as usize) < layout.height
                            && ix >= 0
                            && (ix as usize) < layout.width
                        {
                            cols[row * l + col] =
                                src[(c * layout.height + iy as usize) * layout.width + ix as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![k, l], cols)
}

/// Adjoint of im2col: scatter-add columns back into a C x H x W image,
/// summing overlapping taps.
pub fn col2im(cols: &Tensor, layout: &PatchLayout) -> Result<Tensor> {
    let l = layout.n_patches();
    let k = layout.patch_len();
    if cols.shape() != [k, l] {
        return Err(VdpError::ShapeMismatch { expected: vec![k, l], got: cols.shape().to_vec() });
    }
    let mut image = vec![0.0; layout.channels * layout.height * layout.width];
    let src = cols.data();
    for c in 0..layout.channels {
        for ky in 0..layout.kh {
            for kx in 0..layout.kw {
                let row = (c * layout.kh + ky) * layout.kw + kx;
                for oy in 0..layout.out_h {
                    let iy = (oy * layout.stride + ky) as isize - layout.padding as isize;
                    for ox in 0..layout.out_w {
                        let ix = (ox * layout.stride + kx) as isize - layout.padding as isize;
                        if iy >= 0
                            && (iy as usize) < layout.height
                            && ix >= 0
                            && (ix as usize) < layout.width
                        {
                            image[(c * layout.height + iy as usize) * layout.width + ix as usize] +=
                                src[row * l + oy * layout.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![layout.channels, layout.height, layout.width], image)
}

/// Central finite differences: (f(p + h e_i) - f(p - h e_i)) / 2h.
pub fn finite_difference_gradient<F>(loss_fn: F, params: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> f64,
{
    assert!(h > 0.0);
    let mut probe = params.clone();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = loss_fn(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = loss_fn(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(VdpError::NonFinite(format!(
                "finite-difference probe at coordinate {i}"
            )));
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Tensor::new(params.shape().to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_at_zero_is_ln2() {
        assert!((softplus_scalar(0.0) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn softplus_tails() {
        let lo = softplus_scalar(-40.0);
        assert!(lo > 0.0, "no underflow to zero");
        assert!((lo - (-40.0f64).exp()).abs() < 1e-25);
        assert!((softplus_scalar(50.0) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn softplus_monotone_and_positive() {
        let xs: Vec<f64> = (-100..100).map(|i| i as f64 * 0.37).collect();
        for w in xs.windows(2) {
            assert!(softplus_scalar(w[0]) < softplus_scalar(w[1]));
            assert!(softplus_scalar(w[0]) > 0.0);
        }
    }

    #[test]
    fn gaussian_sample_zero_variance_is_mean() {
        let mut rng = SeededRng::new(1);
        let mean = Tensor::from_vec(vec![1.0, -2.0, 3.5]);
        let var = Tensor::zeros(vec![3]);
        let s = gaussian_sample(&mut rng, &mean, &var).unwrap();
        assert_eq!(s.data(), mean.data());
    }

    #[test]
    fn gaussian_sample_deterministic_per_seed() {
        let mean = Tensor::zeros(vec![16]);
        let var = Tensor::full(vec![16], 2.0);
        let a = gaussian_sample(&mut SeededRng::new(9), &mean, &var).unwrap();
        let b = gaussian_sample(&mut SeededRng::new(9), &mean, &var).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn gaussian_sample_shape_mismatch_errors() {
        let mut rng = SeededRng::new(1);
        let mean = Tensor::zeros(vec![3]);
        let var = Tensor::zeros(vec![4]);
        assert!(gaussian_sample(&mut rng, &mean, &var).is_err());
    }

    #[test]
    fn im2col_whole_image_patch() {
        let img = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let layout = PatchLayout::new(1, 3, 3, 3, 3, 1, 0).unwrap();
        let cols = im2col(&img, &layout).unwrap();
        assert_eq!(cols.shape(), &[9, 1]);
        assert_eq!(cols.data(), img.data());
    }

    #[test]
    fn im2col_disjoint_quadrants() {
        let img = Tensor::new(vec![1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let layout = PatchLayout::new(1, 4, 4, 2, 2, 2, 0).unwrap();
        let cols = im2col(&img, &layout).unwrap();
        assert_eq!(cols.shape(), &[4, 4]);
        // Column 0 is the top-left quadrant.
        let l = 4;
        let col0: Vec<f64> = (0..4).map(|r| cols.data()[r * l]).collect();
        assert_eq!(col0, vec![0.0, 1.0, 4.0, 5.0]);
        let col3: Vec<f64> = (0..4).map(|r| cols.data()[r * l + 3]).collect();
        assert_eq!(col3, vec![10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn im2col_padded_column_sums() {
        let img = Tensor::full(vec![1, 3, 3], 1.0);
        let layout = PatchLayout::new(1, 3, 3, 3, 3, 1, 1).unwrap();
        let cols = im2col(&img, &layout).unwrap();
        assert_eq!(cols.shape(), &[9, 9]);
        let l = 9;
        let sums: Vec<f64> = (0..9)
            .map(|j| (0..9).map(|r| cols.data()[r * l + j]).sum())
            .collect();
        assert_eq!(sums, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn im2col_kernel_too_large_errors() {
        assert!(PatchLayout::new(1, 2, 2, 3, 3, 1, 0).is_err());
    }

    #[test]
    fn col2im_preserves_mass_without_padding() {
        let img = Tensor::new(vec![1, 4, 4], (1..=16).map(f64::from).collect()).unwrap();
        let layout = PatchLayout::new(1, 4, 4, 2, 2, 2, 0).unwrap();
        let cols = im2col(&img, &layout).unwrap();
        let back = col2im(&cols, &layout).unwrap();
        // Stride equals kernel, so patches tile exactly.
        assert_eq!(back.data(), img.data());
        let overlap_layout = PatchLayout::new(1, 4, 4, 2, 2, 1, 0).unwrap();
        let overlap_cols = im2col(&img, &overlap_layout).unwrap();
        let total: f64 = overlap_cols.data().iter().sum();
        let scattered: f64 = col2im(&overlap_cols, &overlap_layout).unwrap().data().iter().sum();
        assert!((total - scattered).abs() < 1e-9);
    }

    #[test]
    fn finite_difference_quadratic() {
        let p = Tensor::from_vec(vec![3.0]);
        let g = finite_difference_gradient(|t| t.data()[0] * t.data()[0], &p, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_difference_constant_is_zero() {
        let p = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let g = finite_difference_gradient(|_| 4.25, &p, 1e-5).unwrap();
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn finite_difference_softplus_sum_at_zero() {
        let p = Tensor::zeros(vec![5]);
        let g = finite_difference_gradient(
            |t| t.data().iter().map(|&x| softplus_scalar(x)).sum(),
            &p,
            1e-5,
        )
        .unwrap();
        for &gi in g.data() {
            assert!((gi - 0.5).abs() < 1e-8);
        }
    }
}
