use crate::autodiff::DiffError;

/// Dense n-dimensional `f32` array, row-major, with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self, DiffError> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(DiffError::ShapeMismatch(format!(
                "buffer of {} values does not fill shape {:?} ({} values)",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    /// 2-D constructor used throughout the sample pipeline.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, DiffError> {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Installs a gradient buffer; the length must match the value buffer.
    pub fn set_grad(&mut self, grad: Vec<f32>) -> Result<(), DiffError> {
        if grad.len() != self.data.len() {
            return Err(DiffError::ShapeMismatch(format!(
                "gradient of {} values for a tensor of {}",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn iter_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row view of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f32] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn grad_slot_must_match_shape() {
        let mut t = Tensor::zeros(&[4]);
        assert!(t.set_grad(vec![0.0; 3]).is_err());
        assert!(t.set_grad(vec![1.0; 4]).is_ok());
        assert_eq!(t.grad().unwrap(), &[1.0; 4]);
        t.clear_grad();
        assert!(t.grad().is_none());
    }
}
