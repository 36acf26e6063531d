/// Dense real tensor, row-major in the listed shape order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        let expected: usize = shape.iter().product();
        assert_eq!(data.len(), expected, "shape {shape:?} expects {expected} values");
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Flat offset for [b, i, j, c] in a rank-4 tensor.
    #[inline]
    pub fn idx4(&self, b: usize, i: usize, j: usize, c: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((b * self.shape[1] + i) * self.shape[2] + j) * self.shape[3] + c
    }
}
