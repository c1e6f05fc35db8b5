//! Radix-2 FFT with orthonormal scaling.
//!
//! Both directions scale by `1/sqrt(n)` per axis, so `fft2` and `ifft2` are
//! unitary and mutual inverses. Only power-of-two extents are supported.
//! Spectra are in DFT order (DC at index 0); callers that think in centered
//! k-space coordinates map indices via [`crate::encoding::centered_index`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ComplexTensor;

fn check_pow2(n: usize, what: &str) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::UnsupportedSize(format!(
            "{} extent {} is not a power of two",
            what, n
        )));
    }
    Ok(())
}

/// In-place radix-2 FFT of split real/imag buffers. Twiddles are computed in
/// f64 and cast down, which keeps f32 transforms near machine precision.
fn fft_1d<T: Scalar>(re: &mut [T], im: &mut [T], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }

    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let sign = if inverse { 1.0f64 } else { -1.0f64 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let wr = T::of_f64((ang * k as f64).cos());
                let wi = T::of_f64((ang * k as f64).sin());
                let i = start + k;
                let j = i + half;
                let tr = wr * re[j] - wi * im[j];
                let ti = wr * im[j] + wi * re[j];
                re[j] = re[i] - tr;
                im[j] = im[i] - ti;
                re[i] = re[i] + tr;
                im[i] = im[i] + ti;
            }
        }
        len *= 2;
    }

    let scale = T::of_f64(1.0 / (n as f64).sqrt());
    for v in re.iter_mut() {
        *v = *v * scale;
    }
    for v in im.iter_mut() {
        *v = *v * scale;
    }
}

/// 2D transform on split planes of extent `h x w` (row-major).
pub(crate) fn fft2_planes<T: Scalar>(
    re: &mut [T],
    im: &mut [T],
    h: usize,
    w: usize,
    inverse: bool,
) -> Result<()> {
    check_pow2(h, "row")?;
    check_pow2(w, "column")?;
    debug_assert_eq!(re.len(), h * w);

    for y in 0..h {
        fft_1d(&mut re[y * w..(y + 1) * w], &mut im[y * w..(y + 1) * w], inverse);
    }

    let mut col_re = vec![T::zero(); h];
    let mut col_im = vec![T::zero(); h];
    for x in 0..w {
        for y in 0..h {
            col_re[y] = re[y * w + x];
            col_im[y] = im[y * w + x];
        }
        fft_1d(&mut col_re, &mut col_im, inverse);
        for y in 0..h {
            re[y * w + x] = col_re[y];
            im[y * w + x] = col_im[y];
        }
    }
    Ok(())
}

fn fft2_impl<T: Scalar>(x: &ComplexTensor<T>, inverse: bool) -> Result<ComplexTensor<T>> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "fft2 expects a 2D tensor, got {:?}",
            shape
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut re = x.re.clone().into_data();
    let mut im = x.im.clone().into_data();
    fft2_planes(&mut re, &mut im, h, w, inverse)?;
    Ok(ComplexTensor {
        re: crate::tensor::RealTensor::new(vec![h, w], re)?,
        im: crate::tensor::RealTensor::new(vec![h, w], im)?,
    })
}

/// Unitary 2D FFT of an `h x w` complex image.
pub fn fft2<T: Scalar>(x: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    fft2_impl(x, false)
}

/// Unitary 2D inverse FFT; exact inverse of [`fft2`] up to rounding.
pub fn ifft2<T: Scalar>(x: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    fft2_impl(x, true)
}

/// Unitary 1D FFT along the leading axis of a `[n]`-shaped tensor.
pub fn fft1<T: Scalar>(x: &ComplexTensor<T>, inverse: bool) -> Result<ComplexTensor<T>> {
    let shape = x.shape();
    if shape.len() != 1 {
        return Err(Error::Dimension(format!(
            "fft1 expects a 1D tensor, got {:?}",
            shape
        )));
    }
    check_pow2(shape[0], "length")?;
    let mut re = x.re.clone().into_data();
    let mut im = x.im.clone().into_data();
    fft_1d(&mut re, &mut im, inverse);
    Ok(ComplexTensor {
        re: crate::tensor::RealTensor::new(shape.to_vec(), re)?,
        im: crate::tensor::RealTensor::new(shape.to_vec(), im)?,
    })
}
