use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Conditioning embedding: `tokens × dims` scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    values: Tensor,
    quantized: bool,
}

impl EmbeddingMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "embedding must be tokens×dims, got {:?}",
                values.shape()
            )));
        }
        Ok(Self {
            values,
            quantized: false,
        })
    }

    pub fn zeros(tokens: usize, dims: usize) -> Self {
        Self::new(Tensor::zeros(&[tokens, dims])).expect("2-d shape")
    }

    pub(crate) fn from_quantized(values: Tensor) -> Result<Self> {
        let mut e = Self::new(values)?;
        e.quantized = true;
        Ok(e)
    }

    pub fn tokens(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dims(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_quantized(&self) -> bool {
        self.quantized
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Tensor {
        self.quantized = false;
        &mut self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }
}
