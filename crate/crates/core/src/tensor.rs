//! Dense row-major tensors over real scalars, plus the two-plane complex
//! tensor built from them.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense real tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RealTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> RealTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the buffer under a new shape of identical volume.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Fixed-order (row-major sequential) sum, for determinism.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc = acc + v;
        }
        acc
    }

    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for &v in &self.data {
            let a = v.abs();
            if a > m {
                m = a;
            }
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element-by-element to another precision.
    pub fn cast<U: Scalar>(&self) -> RealTensor<U> {
        RealTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }
}

fn zip_check<T: Scalar>(a: &RealTensor<T>, b: &RealTensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Dimension(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

impl<T: Scalar> RealTensor<T> {
    pub fn add(&self, other: &Self) -> Result<Self> {
        zip_check(self, other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        zip_check(self, other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }
}

/// Complex tensor stored as two identically shaped real planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor<T> {
    pub re: RealTensor<T>,
    pub im: RealTensor<T>,
}

impl<T: Scalar> ComplexTensor<T> {
    pub fn new(re: RealTensor<T>, im: RealTensor<T>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::Dimension(format!(
                "real/imag shape mismatch: {:?} vs {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: RealTensor::zeros(shape),
            im: RealTensor::zeros(shape),
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> Complex<T>) -> Self {
        let n: usize = shape.iter().product();
        let mut re = Vec::with_capacity(n);
        let mut im = Vec::with_capacity(n);
        for i in 0..n {
            let z = f(i);
            re.push(z.re);
            im.push(z.im);
        }
        Self {
            re: RealTensor::new(shape.to_vec(), re).unwrap(),
            im: RealTensor::new(shape.to_vec(), im).unwrap(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn at(&self, i: usize) -> Complex<T> {
        Complex::new(self.re.data()[i], self.im.data()[i])
    }

    pub fn set(&mut self, i: usize, z: Complex<T>) {
        self.re.data_mut()[i] = z.re;
        self.im.data_mut()[i] = z.im;
    }

    pub fn magnitude(&self) -> RealTensor<T> {
        RealTensor::from_fn(self.shape(), |i| self.at(i).norm())
    }

    pub fn conj(&self) -> Self {
        Self {
            re: self.re.clone(),
            im: self.im.map(|v| -v),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            re: self.re.add(&other.re)?,
            im: self.im.add(&other.im)?,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            re: self.re.sub(&other.re)?,
            im: self.im.sub(&other.im)?,
        })
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            re: self.re.scale(c),
            im: self.im.scale(c),
        }
    }

    /// Elementwise complex product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        zip_check(&self.re, &other.re)?;
        let mut out = Self::zeros(self.shape());
        for i in 0..self.len() {
            out.set(i, self.at(i) * other.at(i));
        }
        Ok(out)
    }

    /// `sum_i conj(self_i) * other_i`, accumulated in f64.
    pub fn inner(&self, other: &Self) -> Result<Complex<f64>> {
        zip_check(&self.re, &other.re)?;
        let mut acc = Complex::new(0.0f64, 0.0f64);
        for i in 0..self.len() {
            let a = self.at(i);
            let b = other.at(i);
            acc += Complex::new(a.re.as_f64(), a.im.as_f64()).conj()
                * Complex::new(b.re.as_f64(), b.im.as_f64());
        }
        Ok(acc)
    }

    /// Squared Frobenius norm, accumulated in f64.
    pub fn norm_sqr(&self) -> f64 {
        let mut acc = 0.0f64;
        for i in 0..self.len() {
            let z = self.at(i);
            acc += z.re.as_f64() * z.re.as_f64() + z.im.as_f64() * z.im.as_f64();
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.len() {
            let z = self.at(i);
            let a = (z.re.as_f64() * z.re.as_f64() + z.im.as_f64() * z.im.as_f64()).sqrt();
            if a > m {
                m = a;
            }
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.re.all_finite() && self.im.all_finite()
    }

    pub fn cast<U: Scalar>(&self) -> ComplexTensor<U> {
        ComplexTensor {
            re: self.re.cast(),
            im: self.im.cast(),
        }
    }

    /// Stacks the two planes into a real tensor of shape `[2, ...]`
    /// (channel 0 real, channel 1 imaginary) for network consumption.
    pub fn to_stacked(&self) -> RealTensor<T> {
        let mut shape = vec![2];
        shape.extend_from_slice(self.shape());
        let mut data = Vec::with_capacity(2 * self.len());
        data.extend_from_slice(self.re.data());
        data.extend_from_slice(self.im.data());
        RealTensor::new(shape, data).unwrap()
    }

    /// Inverse of [`to_stacked`](Self::to_stacked).
    pub fn from_stacked(t: &RealTensor<T>) -> Result<Self> {
        let shape = t.shape();
        if shape.is_empty() || shape[0] != 2 {
            return Err(Error::Dimension(format!(
                "stacked complex tensor needs leading extent 2, got {:?}",
                shape
            )));
        }
        let inner = shape[1..].to_vec();
        let n: usize = inner.iter().product();
        let re = RealTensor::new(inner.clone(), t.data()[..n].to_vec())?;
        let im = RealTensor::new(inner, t.data()[n..].to_vec())?;
        Self::new(re, im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_volume() {
        let r = RealTensor::<f64>::new(vec![2, 3], vec![0.0; 5]);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn complex_requires_matching_planes() {
        let re = RealTensor::<f64>::zeros(&[2, 2]);
        let im = RealTensor::<f64>::zeros(&[2, 3]);
        assert!(ComplexTensor::new(re, im).is_err());
    }

    #[test]
    fn stacked_round_trip() {
        let t = ComplexTensor::<f64>::from_fn(&[3, 4], |i| {
            Complex::new(i as f64, -(i as f64) * 0.5)
        });
        let s = t.to_stacked();
        assert_eq!(s.shape(), &[2, 3, 4]);
        let back = ComplexTensor::from_stacked(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn inner_product_is_conjugate_linear() {
        let a = ComplexTensor::<f64>::from_fn(&[4], |i| Complex::new(1.0 + i as f64, 2.0));
        let b = ComplexTensor::<f64>::from_fn(&[4], |i| Complex::new(0.5, i as f64));
        let ab = a.inner(&b).unwrap();
        let ba = b.inner(&a).unwrap();
        assert!((ab - ba.conj()).norm() < 1e-12);
    }
}
