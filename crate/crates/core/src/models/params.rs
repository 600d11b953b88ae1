use rand::Rng;

use crate::ad::{Gradients, Tape, Tensor, Var};
use crate::{Error, Result};

/// One matrix-shaped block inside a [`ParamVector`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat trainable storage plus the offset table of its matrix blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    blocks: Vec<Block>,
}

impl ParamVector {
    /// Zero-filled storage for blocks of the given `(rows, cols)` shapes.
    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        let mut blocks = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for &(rows, cols) in shapes {
            blocks.push(Block { offset, rows, cols });
            offset += rows * cols;
        }
        Self {
            values: vec![0.0; offset],
            blocks,
        }
    }

    pub fn from_values(shapes: &[(usize, usize)], values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(shapes);
        if values.len() != p.values.len() {
            return Err(Error::Dimension(format!(
                "parameter payload has {} values, layout needs {}",
                values.len(),
                p.values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    /// Fills block `i` with `U(-bound_i, bound_i)`.
    pub fn fill_uniform<R: Rng + ?Sized>(&mut self, bounds: &[f64], rng: &mut R) {
        for (block, &bound) in self.blocks.iter().zip(bounds) {
            for v in &mut self.values[block.range()] {
                *v = if bound > 0.0 {
                    rng.random_range(-bound..bound)
                } else {
                    0.0
                };
            }
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[self.blocks[i].range()]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.blocks[i].range();
        &mut self.values[r]
    }

    /// Records every block on the tape, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundParams> {
        let mut vars = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let t = Tensor::matrix(b.rows, b.cols, self.values[b.range()].to_vec());
            vars.push(if trainable {
                tape.leaf(t)?
            } else {
                tape.constant(t)?
            });
        }
        Ok(BoundParams { vars })
    }
}

/// Tape handles for the blocks of a [`ParamVector`], in block order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    /// Appends the flat gradient, laid out like the source [`ParamVector`].
    pub fn gradient_into(&self, grads: &Gradients, out: &mut Vec<f64>) {
        for &v in &self.vars {
            grads.extend_into(v, out);
        }
    }
}
