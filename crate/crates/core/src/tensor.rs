//! Dense row-major tensors and the handful of value-level kernels the
//! model needs outside of the differentiation tape.

use serde::{Deserialize, Serialize};

use crate::error::{MsanError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(MsanError::dim("Tensor::new", "positive extents", format!("{shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(MsanError::dim("Tensor::new", expected, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector tensor");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (rows, cols) for a matrix; vectors are treated as a single column.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => (self.data.len(), 1),
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        let (_, cols) = self.dims2();
        self.data[r * cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(MsanError::NonFinite(context.to_string()))
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(MsanError::dim(
                "zip_map",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// Matrix product for 2-D tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (r, k) = self.dims2();
        let (k2, c) = other.dims2();
        if self.shape.len() != 2 || other.shape.len() != 2 || k != k2 {
            return Err(MsanError::dim(
                "matmul",
                format!("[_ x {k}] * [{k} x _]"),
                format!("{:?} * {:?}", self.shape, other.shape),
            ));
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[p * c..(p + 1) * c];
                for (o, &b) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![r, c], out)
    }

    /// Matrix times vector.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (r, c) = self.dims2();
        if self.shape.len() != 2 || x.len() != c {
            return Err(MsanError::dim(
                "matvec",
                format!("vector of length {c}"),
                format!("length {} against {:?}", x.len(), self.shape),
            ));
        }
        Ok(matvec_raw(&self.data, r, c, x))
    }
}

pub(crate) fn matvec_raw(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    m.chunks_exact(cols)
        .take(rows)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax over a slice.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// log-softmax over a slice, computed as `x - max - ln(sum exp(x - max))`.
pub fn log_softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    x.iter().map(|&v| v - lse).collect()
}

/// `M x + b`.
pub fn affine(m: &Tensor, x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, c) = m.dims2();
    if m.shape().len() != 2 {
        return Err(MsanError::dim("affine", "matrix", format!("{:?}", m.shape())));
    }
    if x.shape() != [c] {
        return Err(MsanError::dim("affine", format!("x of shape [{c}]"), format!("{:?}", x.shape())));
    }
    if b.shape() != [r] {
        return Err(MsanError::dim("affine", format!("b of shape [{r}]"), format!("{:?}", b.shape())));
    }
    let mut out = matvec_raw(m.data(), r, c, x.data());
    for (o, bv) in out.iter_mut().zip(b.data()) {
        *o += bv;
    }
    let t = Tensor::vector(out);
    t.ensure_finite("affine")?;
    Ok(t)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 1 {
        return Err(MsanError::dim("softmax", "vector", format!("{:?}", x.shape())));
    }
    Ok(Tensor::vector(softmax_slice(x.data())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn affine_identity() {
        let out = affine(
            &Tensor::identity(2),
            &Tensor::vector(vec![3.0, 4.0]),
            &Tensor::vector(vec![0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_hand_example() {
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = affine(&m, &Tensor::vector(vec![1.0, 1.0]), &Tensor::vector(vec![1.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[4.0, 7.0]);
    }

    #[test]
    fn affine_zero_matrix_returns_bias() {
        let out = affine(
            &Tensor::zeros(&[2, 2]),
            &Tensor::vector(vec![-9.0, 11.0]),
            &Tensor::vector(vec![5.0, 6.0]),
        )
        .unwrap();
        assert_eq!(out.data(), &[5.0, 6.0]);
    }

    #[test]
    fn affine_shape_mismatch() {
        let err = affine(
            &Tensor::zeros(&[2, 3]),
            &Tensor::vector(vec![1.0, 2.0]),
            &Tensor::vector(vec![0.0, 0.0]),
        );
        assert!(matches!(err, Err(MsanError::Dimension { .. })));
    }

    #[test]
    fn nonlinearity_fixed_points() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert_eq!(tanh(&Tensor::vector(vec![0.0])).data(), &[0.0]);
        let s = softmax(&Tensor::vector(vec![2.5, 2.5, 2.5])).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tensor_rejects_bad_shape() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_on_simplex(v in proptest::collection::vec(-1e4f64..1e4, 1..24)) {
            let s = softmax_slice(&v);
            prop_assert!(s.iter().all(|&p| p >= 0.0 && p.is_finite()));
            let total: f64 = s.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }

        #[test]
        fn sigmoid_in_unit_interval(x in -30.0f64..30.0) {
            let s = sigmoid_scalar(x);
            prop_assert!(s > 0.0 && s < 1.0);
        }

        #[test]
        fn log_softmax_matches_softmax(v in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let s = softmax_slice(&v);
            let ls = log_softmax_slice(&v);
            for (p, lp) in s.iter().zip(&ls) {
                prop_assert!((p.ln() - lp).abs() < 1e-9);
            }
        }
    }
}
