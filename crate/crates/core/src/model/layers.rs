use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::features::{EncodedExample, EmbeddingTable};

/// Uniform Glorot initialization.
pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..=limit))
}

pub(crate) fn uniform(rows: usize, cols: usize, half: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-half..=half))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Word, POS and two relative-position lookup tables, concatenated per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingLayer {
    pub word: Array2<f64>,
    pub pos: Array2<f64>,
    pub relpos1: Array2<f64>,
    pub relpos2: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputSizes {
    pub vocab: usize,
    pub pos: usize,
    pub relpos: usize,
    pub classes: usize,
}

impl EmbeddingLayer {
    pub fn new(
        words: EmbeddingTable,
        sizes: InputSizes,
        pos_dim: usize,
        relpos_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert_eq!(words.matrix.nrows(), sizes.vocab, "embedding rows must match vocabulary");
        EmbeddingLayer {
            word: words.matrix,
            pos: uniform(sizes.pos, pos_dim, 0.5 / pos_dim as f64, rng),
            relpos1: uniform(sizes.relpos, relpos_dim, 0.5 / relpos_dim as f64, rng),
            relpos2: uniform(sizes.relpos, relpos_dim, 0.5 / relpos_dim as f64, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EmbeddingLayer {
            word: Array2::zeros(self.word.raw_dim()),
            pos: Array2::zeros(self.pos.raw_dim()),
            relpos1: Array2::zeros(self.relpos1.raw_dim()),
            relpos2: Array2::zeros(self.relpos2.raw_dim()),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.word.ncols() + self.pos.ncols() + self.relpos1.ncols() + self.relpos2.ncols()
    }

    fn columns(&self) -> [std::ops::Range<usize>; 4] {
        let a = self.word.ncols();
        let b = a + self.pos.ncols();
        let c = b + self.relpos1.ncols();
        [0..a, a..b, b..c, c..c + self.relpos2.ncols()]
    }

    /// One row per token.
    pub fn lookup(&self, ex: &EncodedExample) -> Array2<f64> {
        let mut x = Array2::zeros((ex.length, self.output_dim()));
        self.lookup_into(ex, x.view_mut());
        x
    }

    pub fn lookup_into(&self, ex: &EncodedExample, mut out: ndarray::ArrayViewMut2<f64>) {
        let [cw, cp, c1, c2] = self.columns();
        for t in 0..ex.length {
            let mut row = out.row_mut(t);
            row.slice_mut(s![cw.clone()]).assign(&self.word.row(ex.word_ids[t]));
            row.slice_mut(s![cp.clone()]).assign(&self.pos.row(ex.pos_ids[t]));
            row.slice_mut(s![c1.clone()]).assign(&self.relpos1.row(ex.relpos1_ids[t]));
            row.slice_mut(s![c2.clone()]).assign(&self.relpos2.row(ex.relpos2_ids[t]));
        }
    }

    /// Scatters token-row gradients back into the tables of `grad`.
    pub fn backward(&self, ex: &EncodedExample, dx: ArrayView2<f64>, grad: &mut EmbeddingLayer) {
        let [cw, cp, c1, c2] = self.columns();
        for t in 0..ex.length {
            let row = dx.row(t);
            let mut g = grad.word.row_mut(ex.word_ids[t]);
            g += &row.slice(s![cw.clone()]);
            let mut g = grad.pos.row_mut(ex.pos_ids[t]);
            g += &row.slice(s![cp.clone()]);
            let mut g = grad.relpos1.row_mut(ex.relpos1_ids[t]);
            g += &row.slice(s![c1.clone()]);
            let mut g = grad.relpos2.row_mut(ex.relpos2_ids[t]);
            g += &row.slice(s![c2.clone()]);
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        vec![
            ("embedding.word", &self.word),
            ("embedding.pos", &self.pos),
            ("embedding.relpos1", &self.relpos1),
            ("embedding.relpos2", &self.relpos2),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.word, &mut self.pos, &mut self.relpos1, &mut self.relpos2]
    }
}

/// Fully-connected map from features to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl OutputLayer {
    pub fn new(inputs: usize, classes: usize, rng: &mut impl Rng) -> Self {
        OutputLayer {
            w: glorot(inputs, classes, rng),
            b: Array2::zeros((1, classes)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        OutputLayer {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
        }
    }

    pub fn forward(&self, features: &Array2<f64>) -> Array2<f64> {
        features.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients and returns the feature gradient.
    pub fn backward(
        &self,
        features: &Array2<f64>,
        dlogits: &Array2<f64>,
        grad: &mut OutputLayer,
    ) -> Array2<f64> {
        grad.w += &features.t().dot(dlogits);
        grad.b += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
        dlogits.dot(&self.w.t())
    }
}

/// Inverted dropout mask: kept units are scaled by `1 / keep`.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(
    shape: (usize, usize),
    keep: f64,
    rng: &mut R,
) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}
