//! Multi-width convolution over token embeddings, ReLU, max-over-time
//! pooling, then the shared dropout + affine output.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::layers::{glorot, EmbeddingLayer, OutputLayer};
use super::{CnnConfig, Network};
use crate::features::{EncodedExample, POS_UNK_ID};
use crate::features::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank {
    pub width: usize,
    /// `(width * input_dim, filters)`; window rows are flattened token-major.
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    pub config: CnnConfig,
    pub emb: EmbeddingLayer,
    pub convs: Vec<ConvBank>,
    pub out: OutputLayer,
}

pub struct CnnCache {
    examples: Vec<ExampleCache>,
}

struct ExampleCache {
    padded: EncodedExample,
    windows: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    argmax: Vec<Vec<usize>>,
}

/// Right-pads to `min_len` tokens with the padding word, unknown POS, and
/// relative positions continuing past the last token.
pub(crate) fn pad_example(ex: &EncodedExample, min_len: usize, relpos_max: usize) -> EncodedExample {
    if ex.length >= min_len {
        return ex.clone();
    }
    let mut p = ex.clone();
    let extra = min_len - ex.length;
    let cont = |v: &mut Vec<usize>| {
        let last = v.last().copied().unwrap_or(0);
        v.extend((1..=extra).map(|k| (last + k).min(relpos_max)));
    };
    p.word_ids.extend(std::iter::repeat_n(Vocabulary::PAD_ID, extra));
    p.pos_ids.extend(std::iter::repeat_n(POS_UNK_ID, extra));
    cont(&mut p.relpos1_ids);
    cont(&mut p.relpos2_ids);
    p.length = min_len;
    p
}

impl Cnn {
    pub fn new(config: CnnConfig, emb: EmbeddingLayer, classes: usize, rng: &mut impl Rng) -> Self {
        let d = emb.output_dim();
        let f = config.filters_per_width;
        let convs = config
            .filter_widths
            .iter()
            .map(|&k| ConvBank {
                width: k,
                w: glorot(k * d, f, rng),
                b: Array2::zeros((1, f)),
            })
            .collect();
        let out = OutputLayer::new(config.filter_widths.len() * f, classes, rng);
        Cnn {
            config,
            emb,
            convs,
            out,
        }
    }

    pub fn pooled_dim(&self) -> usize {
        self.convs.len() * self.config.filters_per_width
    }

    fn max_width(&self) -> usize {
        self.convs.iter().map(|c| c.width).max().unwrap_or(1)
    }

    fn example_forward(&self, ex: &EncodedExample) -> (Array1<f64>, ExampleCache) {
        let padded = pad_example(ex, self.max_width(), self.emb.relpos1.nrows() - 1);
        let x = self.emb.lookup(&padded);
        let d = x.ncols();
        let t = padded.length;
        let flat = x.as_slice().expect("lookup output is contiguous");
        let f = self.config.filters_per_width;
        let mut pooled = Array1::zeros(self.pooled_dim());
        let mut windows = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut argmax = Vec::with_capacity(self.convs.len());
        for (ci, conv) in self.convs.iter().enumerate() {
            let k = conv.width;
            let n = t - k + 1;
            let u = Array2::from_shape_fn((n, k * d), |(j, c)| flat[j * d + c]);
            let z = u.dot(&conv.w) + &conv.b;
            let mut best = vec![0usize; f];
            for fi in 0..f {
                let col = z.column(fi);
                let mut j_best = 0;
                for j in 1..n {
                    if col[j] > col[j_best] {
                        j_best = j;
                    }
                }
                best[fi] = j_best;
                pooled[ci * f + fi] = col[j_best].max(0.0);
            }
            windows.push(u);
            pre.push(z);
            argmax.push(best);
        }
        (
            pooled,
            ExampleCache {
                padded,
                windows,
                pre,
                argmax,
            },
        )
    }
}

impl Network for Cnn {
    type Cache = CnnCache;

    fn features(&self, batch: &[&EncodedExample]) -> (Array2<f64>, CnnCache) {
        let mut feats = Array2::zeros((batch.len(), self.pooled_dim()));
        let mut examples = Vec::with_capacity(batch.len());
        for (i, ex) in batch.iter().enumerate() {
            let (p, cache) = self.example_forward(ex);
            feats.row_mut(i).assign(&p);
            examples.push(cache);
        }
        (feats, CnnCache { examples })
    }

    fn features_backward(&self, cache: CnnCache, dfeat: ArrayView2<f64>, grad: &mut Self) {
        let f = self.config.filters_per_width;
        let d = self.emb.output_dim();
        for (i, ex) in cache.examples.iter().enumerate() {
            let mut dx = Array2::<f64>::zeros((ex.padded.length, d));
            for (ci, conv) in self.convs.iter().enumerate() {
                let z = &ex.pre[ci];
                let mut dz = Array2::zeros(z.raw_dim());
                for fi in 0..f {
                    let j = ex.argmax[ci][fi];
                    if z[[j, fi]] > 0.0 {
                        dz[[j, fi]] = dfeat[[i, ci * f + fi]];
                    }
                }
                let g = &mut grad.convs[ci];
                g.w += &ex.windows[ci].t().dot(&dz);
                g.b += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
                let du = dz.dot(&conv.w.t());
                let k = conv.width;
                for j in 0..du.nrows() {
                    let row = du.row(j);
                    for o in 0..k {
                        let mut target = dx.row_mut(j + o);
                        target += &row.slice(s![o * d..(o + 1) * d]);
                    }
                }
            }
            self.emb.backward(&ex.padded, dx.view(), &mut grad.emb);
        }
    }

    fn output(&self) -> &OutputLayer {
        &self.out
    }

    fn output_mut(&mut self) -> &mut OutputLayer {
        &mut self.out
    }

    fn embedding_mut(&mut self) -> &mut EmbeddingLayer {
        &mut self.emb
    }

    fn dropout_keep(&self) -> f64 {
        self.config.dropout_keep
    }

    fn l2_lambda(&self) -> f64 {
        self.config.l2_lambda
    }

    fn zeros_like(&self) -> Self {
        Cnn {
            config: self.config.clone(),
            emb: self.emb.zeros_like(),
            convs: self
                .convs
                .iter()
                .map(|c| ConvBank {
                    width: c.width,
                    w: Array2::zeros(c.w.raw_dim()),
                    b: Array2::zeros(c.b.raw_dim()),
                })
                .collect(),
            out: self.out.zeros_like(),
        }
    }

    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut v: Vec<(String, &Array2<f64>)> = self
            .emb
            .tensors()
            .into_iter()
            .map(|(n, t)| (n.to_owned(), t))
            .collect();
        for c in &self.convs {
            v.push((format!("conv{}.w", c.width), &c.w));
            v.push((format!("conv{}.b", c.width), &c.b));
        }
        v.push(("output.w".into(), &self.out.w));
        v.push(("output.b".into(), &self.out.b));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.emb.tensors_mut();
        for c in &mut self.convs {
            v.push(&mut c.w);
            v.push(&mut c.b);
        }
        v.push(&mut self.out.w);
        v.push(&mut self.out.b);
        v
    }
}
