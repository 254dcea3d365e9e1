use std::fmt;

use super::NdError;

/// Dense row-major array of `f64`.
///
/// Tensors are immutable once built; every operation returns a new value.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `shape` accounts for every element.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, NdError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NdError::Dimension(format!(
                "shape {:?} holds {} elements but {} were supplied",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// A rank-0 tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a tensor holding exactly one element.
    pub fn item(&self) -> Result<f64, NdError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(NdError::Contract(format!(
                "item() needs one element, tensor has shape {:?}",
                self.shape
            )))
        }
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    /// Flat offset of a coordinate.
    pub fn offset(&self, coord: &[usize]) -> usize {
        debug_assert_eq!(coord.len(), self.shape.len());
        coord
            .iter()
            .zip(self.strides())
            .map(|(i, s)| i * s)
            .sum()
    }

    /// Coordinate of a flat offset.
    pub fn coord(&self, mut offset: usize) -> Vec<usize> {
        let strides = self.strides();
        let mut coord = vec![0; self.shape.len()];
        for (c, s) in coord.iter_mut().zip(strides) {
            *c = offset / s;
            offset %= s;
        }
        coord
    }

    pub fn get(&self, coord: &[usize]) -> f64 {
        self.data[self.offset(coord)]
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self, NdError> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self, NdError> {
        if self.shape != other.shape {
            return Err(NdError::shape_mismatch("zip_map", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Axis permutation; `axes[i]` names the source axis of output axis `i`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self, NdError> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(NdError::Dimension(format!(
                "invalid permutation {:?} for shape {:?}",
                axes, self.shape
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides = self.strides();
        let perm_strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut coord = vec![0usize; rank];
        for _ in 0..self.data.len() {
            let src: usize = coord.iter().zip(&perm_strides).map(|(c, s)| c * s).sum();
            data.push(self.data[src]);
            for ax in (0..rank).rev() {
                coord[ax] += 1;
                if coord[ax] < out_shape[ax] {
                    break;
                }
                coord[ax] = 0;
            }
        }
        Self::new(&out_shape, data)
    }

    /// Row-major matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Self, NdError> {
        let (m, k) = dims2(self, "matmul")?;
        let (k2, n) = dims2(rhs, "matmul")?;
        if k != k2 {
            return Err(NdError::shape_mismatch("matmul", &self.shape, &rhs.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(&self.data, &rhs.data, &mut out, m, k, n);
        Self::new(&[m, n], out)
    }

    pub fn transpose2(&self) -> Result<Self, NdError> {
        dims2(self, "transpose")?;
        self.permute(&[1, 0])
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

pub(crate) fn dims2(t: &Tensor, op: &str) -> Result<(usize, usize), NdError> {
    match t.shape() {
        &[a, b] => Ok((a, b)),
        s => Err(NdError::Dimension(format!("{op} expects a rank-2 tensor, got {s:?}"))),
    }
}

pub(crate) fn dims3(t: &Tensor, op: &str) -> Result<(usize, usize, usize), NdError> {
    match t.shape() {
        &[a, b, c] => Ok((a, b, c)),
        s => Err(NdError::Dimension(format!("{op} expects a rank-3 tensor, got {s:?}"))),
    }
}

/// `out += a[m×k] · b[k×n]`
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.6}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ... ({} more)", self.data.len() - SHOWN)?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_identity_and_dot() {
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap(), m);

        let row = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let col = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(row.matmul(&col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(p.get(&[c, a, b]), t.get(&[a, b, c]));
                }
            }
        }
        assert!(t.permute(&[0, 0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn coord_offset_round_trip(shape in prop::collection::vec(1usize..5, 1..5), seed in 0usize..10_000) {
            let t = Tensor::zeros(&shape);
            let off = seed % t.len();
            prop_assert_eq!(t.offset(&t.coord(off)), off);
        }
    }
}
