use super::{NnError, Real};

/// Dense N-dimensional array in C order.
///
/// Batched activations use NCHW (2D) or NCDHW (3D) layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.is_empty() {
            return Err(NnError::Shape(format!("data length {} does not match shape {shape:?}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NnError::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<(), NnError> {
        same_shape(self, other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|v| *v = *v * factor);
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Contiguous view of sample `n` along the batch axis.
    pub fn sample(&self, n: usize) -> &[T] {
        let per = self.data.len() / self.shape[0];
        &self.data[n * per..(n + 1) * per]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let per = self.data.len() / self.shape[0];
        &mut self.data[n * per..(n + 1) * per]
    }

    /// Stacks equally shaped samples along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self, NnError> {
        let first = items.first().ok_or_else(|| NnError::Shape("cannot stack zero tensors".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            same_shape(first, t)?;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Concatenates batched tensors along the channel axis (axis 1).
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Result<Self, NnError> {
        if a.shape.len() < 2
            || a.shape.len() != b.shape.len()
            || a.shape[0] != b.shape[0]
            || a.shape[2..] != b.shape[2..]
        {
            return Err(NnError::Shape(format!("cannot concatenate {:?} and {:?} along channels", a.shape, b.shape)));
        }
        let n = a.shape[0];
        let mut shape = a.shape.clone();
        shape[1] += b.shape[1];
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            data.extend_from_slice(a.sample(i));
            data.extend_from_slice(b.sample(i));
        }
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::concat_channels`]: the first `channels` go left.
    pub fn split_channels(&self, channels: usize) -> Result<(Self, Self), NnError> {
        if self.shape.len() < 2 || channels > self.shape[1] {
            return Err(NnError::Shape(format!("cannot split {channels} channels off {:?}", self.shape)));
        }
        let n = self.shape[0];
        let spatial: usize = self.shape[2..].iter().product();
        let mut left_shape = self.shape.clone();
        left_shape[1] = channels;
        let mut right_shape = self.shape.clone();
        right_shape[1] -= channels;
        let mut left = Vec::with_capacity(n * channels * spatial);
        let mut right = Vec::with_capacity(self.len() - n * channels * spatial);
        for i in 0..n {
            let s = self.sample(i);
            left.extend_from_slice(&s[..channels * spatial]);
            right.extend_from_slice(&s[channels * spatial..]);
        }
        Ok((Tensor { shape: left_shape, data: left }, Tensor { shape: right_shape, data: right }))
    }
}

pub(crate) fn same_shape<T>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(), NnError> {
    if a.shape != b.shape {
        return Err(NnError::Shape(format!("shape mismatch: {:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_is_identity() {
        let a = Tensor::<f32>::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2, 2], (0..8).map(|v| v as f32 * 10.0).collect()).unwrap();
        let c = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(&c.data()[..6], &[1.0, 2.0, 0.0, 10.0, 20.0, 30.0]);
        let (l, r) = c.split_channels(1).unwrap();
        assert_eq!(l, a);
        assert_eq!(r, b);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::zeros(&[2, 3]).reshape(&[3, 2]).is_ok());
    }
}
