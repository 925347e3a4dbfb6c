use crate::{GradError, Result};

/// Dense row-major `f64` array with an explicit shape.
///
/// Rank 0 is not used; scalars are shape `[1]`. Rank 1 tensors are treated as
/// a single row where a 2-D view is needed (bias vectors, logits).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(GradError::contract(
                "tensor",
                format!("shape {:?} wants {} elements, got {}", shape, len, data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows/cols of the 2-D view: `[n]` reads as one row of n, `[r, c]` as is.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        dims2_of(&self.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dims2_of(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.len() {
        1 => Ok((1, shape[0])),
        2 => Ok((shape[0], shape[1])),
        _ => Err(GradError::contract(
            "tensor",
            format!("expected rank 1 or 2, got shape {:?}", shape),
        )),
    }
}
