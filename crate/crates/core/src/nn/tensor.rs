use super::Real;
use crate::error::{OocsError, Result};
use crate::imageops::ImageTensor;

/// Dense NHWC activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![T::zero(); n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * h * w * c {
            return Err(OocsError::Dimension(format!(
                "tensor data length {} does not match {n}x{h}x{w}x{c}",
                data.len()
            )));
        }
        Ok(Self { n, h, w, c, data })
    }

    /// Stacks equally shaped images into a batch.
    pub fn from_images(images: &[&ImageTensor]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| OocsError::Dimension("empty image batch".into()))?;
        let (h, w, c) = (first.height(), first.width(), first.channels());
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for im in images {
            if (im.height(), im.width(), im.channels()) != (h, w, c) {
                return Err(OocsError::Dimension(format!(
                    "batch mixes image shapes {h}x{w}x{c} and {}x{}x{}",
                    im.height(),
                    im.width(),
                    im.channels()
                )));
            }
            data.extend(im.data().iter().map(|&v| T::from_f64(v)));
        }
        Ok(Self {
            n: images.len(),
            h,
            w,
            c,
            data,
        })
    }

    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// Row `i` of a `(n, 1, 1, c)` tensor, or the flattened sample otherwise.
    pub fn row(&self, i: usize) -> &[T] {
        self.sample(i)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.n, self.h, self.w, self.c) == (other.n, other.h, other.w, other.c)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            n: self.n,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}
