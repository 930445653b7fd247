//! Dense row-major f64 tensors.
//!
//! [`Tensor`] is a plain value type: shape plus a flat buffer, no graph
//! attached. The differentiable graph lives in the tape (see
//! [`super::tape`]); tensors are what flows through it and what comes out of
//! it. Everything is `f64` — the whole pipeline runs in double precision so
//! that gradient checks against central differences are meaningful.
//!
//! Broadcasting follows the trailing-dimension rule: when combining `a` and
//! `b`, the shape of `b` is right-aligned against the shape of `a`, and each
//! aligned dimension must either match or be 1 in `b`. Only the second
//! operand broadcasts; the output always has the shape of `a`.

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and a row-major buffer.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeElementCount {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// All-zero tensor.
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Tensor filled with one value.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Rank-1 scalar wrapper: shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Build by calling `f` with the row-major linear index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The value of a rank-anything tensor holding exactly one element.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (d, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[d]);
            off = off * self.shape[d] + i;
        }
        off
    }

    /// Element at a multi-index (convenience for tests and small code paths).
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeElementCount {
                shape: shape.to_vec(),
                expected,
                actual: self.data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// 2-D transpose.
    pub fn transposed(&self) -> Result<Tensor> {
        let [r, c] = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }

    /// The two dimensions of a rank-2 tensor, or a shape error naming `op`.
    pub fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.shape.as_slice() {
            &[r, c] => Ok([r, c]),
            _ => Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: vec![],
            }),
        }
    }

    /// Strides of `b`'s buffer aligned to `target` under the trailing-dimension
    /// broadcast rule, or a shape error. A stride of 0 marks a broadcast axis.
    fn broadcast_strides(&self, target: &[usize], op: &'static str) -> Result<Vec<usize>> {
        if self.shape.len() > target.len() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: target.to_vec(),
                rhs: self.shape.clone(),
            });
        }
        // Natural strides of self.
        let mut nat = vec![0usize; self.shape.len()];
        let mut acc = 1;
        for d in (0..self.shape.len()).rev() {
            nat[d] = acc;
            acc *= self.shape[d];
        }
        let offset = target.len() - self.shape.len();
        let mut strides = vec![0usize; target.len()];
        for d in 0..target.len() {
            if d < offset {
                strides[d] = 0;
            } else {
                let bs = self.shape[d - offset];
                if bs == target[d] {
                    strides[d] = nat[d - offset];
                } else if bs == 1 {
                    strides[d] = 0;
                } else {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: target.to_vec(),
                        rhs: self.shape.clone(),
                    });
                }
            }
        }
        Ok(strides)
    }

    /// Elementwise combine with trailing-dimension broadcasting of `b` toward
    /// `self`. The output has `self`'s shape.
    pub fn broadcast_zip(&self, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == b.shape {
            // Fast path: identical shapes, no index arithmetic.
            let data = self
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| f(x, y))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        let strides = b.broadcast_strides(&self.shape, op)?;
        let mut out = vec![0.0; self.data.len()];
        let mut idx = vec![0usize; self.shape.len()];
        let mut b_off = 0usize;
        for (lin, slot) in out.iter_mut().enumerate() {
            *slot = f(self.data[lin], b.data[b_off]);
            // Odometer increment of the multi-index, keeping b_off in step.
            for d in (0..self.shape.len()).rev() {
                idx[d] += 1;
                b_off += strides[d];
                if idx[d] < self.shape[d] {
                    break;
                }
                b_off -= strides[d] * self.shape[d];
                idx[d] = 0;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Sum a gradient of `self.shape` down to `target` — the adjoint of
    /// broadcasting `target` up to `self.shape`.
    pub fn reduce_to(&self, target: &[usize]) -> Result<Tensor> {
        if self.shape.as_slice() == target {
            return Ok(self.clone());
        }
        let strides = Tensor::zeros(target).broadcast_strides(&self.shape, "reduce_to")?;
        let n: usize = target.iter().product();
        let mut out = vec![0.0; n];
        let mut idx = vec![0usize; self.shape.len()];
        let mut t_off = 0usize;
        for lin in 0..self.data.len() {
            out[t_off] += self.data[lin];
            for d in (0..self.shape.len()).rev() {
                idx[d] += 1;
                t_off += strides[d];
                if idx[d] < self.shape[d] {
                    break;
                }
                t_off -= strides[d] * self.shape[d];
                idx[d] = 0;
            }
        }
        Ok(Tensor {
            shape: target.to_vec(),
            data: out,
        })
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        let [m, k] = self.dims2("matmul")?;
        let [k2, n] = b.dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        // i-k-j loop order: the inner loop walks both `b` and `out` rows
        // contiguously, which the compiler vectorizes.
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = self.data[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b.data[p * n..(p + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }
}

/// Split a shape around `axis` into `(outer, len, inner)` so that lane `l` of
/// outer block `o` at inner position `r` sits at `(o * len + l) * inner + r`.
pub fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::AxisOutOfRange {
            axis,
            shape: shape.to_vec(),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, len, inner))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn offset_is_row_major() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(t.at(&[0, 0, 0]), 0.0);
        assert_eq!(t.at(&[0, 0, 3]), 3.0);
        assert_eq!(t.at(&[0, 1, 0]), 4.0);
        assert_eq!(t.at(&[1, 0, 0]), 12.0);
        assert_eq!(t.at(&[1, 2, 3]), 23.0);
    }

    #[test]
    fn broadcast_matching_trailing_dims() {
        // [2,3] + [3] broadcasts the row.
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        let b = Tensor::new(vec![3], vec![10.0, 20.0, 30.0]).unwrap();
        let c = a.broadcast_zip(&b, "add", |x, y| x + y).unwrap();
        assert_eq!(c.data(), &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]);
    }

    #[test]
    fn broadcast_size_one_axis() {
        // [2,3] * [2,1] broadcasts along columns.
        let a = Tensor::from_fn(&[2, 3], |i| (i + 1) as f64);
        let b = Tensor::new(vec![2, 1], vec![2.0, 10.0]).unwrap();
        let c = a.broadcast_zip(&b, "mul", |x, y| x * y).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0, 6.0, 40.0, 50.0, 60.0]);
    }

    #[test]
    fn broadcast_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2]);
        // Trailing rule aligns [2] against the 3-axis: not compatible.
        assert!(a.broadcast_zip(&b, "add", |x, y| x + y).is_err());
        // And a longer shape never broadcasts against a shorter one.
        let c = Tensor::zeros(&[1, 2, 3]);
        assert!(a.broadcast_zip(&c, "add", |x, y| x + y).is_err());
    }

    #[test]
    fn reduce_to_undoes_broadcast() {
        let g = Tensor::from_fn(&[2, 3], |i| i as f64);
        let r = g.reduce_to(&[3]).unwrap();
        assert_eq!(r.data(), &[3.0, 5.0, 7.0]);
        let r2 = g.reduce_to(&[2, 1]).unwrap();
        assert_eq!(r2.data(), &[3.0, 12.0]);
    }

    #[test]
    fn matmul_known_product() {
        // Worked 2x2 * 2x1 product, checked by hand.
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn transpose_round_trips() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        let t = a.transposed().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.at(&[2, 1]), a.at(&[1, 2]));
        assert_eq!(t.transposed().unwrap(), a);
    }

    #[test]
    fn axis_split_blocks() {
        assert_eq!(axis_split(&[2, 3, 4], 1).unwrap(), (2, 3, 4));
        assert_eq!(axis_split(&[5], 0).unwrap(), (1, 5, 1));
        assert!(axis_split(&[5], 1).is_err());
    }
}
