//! Bidirectional LSTM. Each direction reads only the real tokens of each
//! example; the final `h` and `c` of both directions are concatenated into a
//! `4 * units` feature vector.
//!
//! Batches are processed in descending length order, so the examples still
//! running at step `t` are always a prefix of the batch.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::layers::{glorot, sigmoid, EmbeddingLayer, OutputLayer};
use super::{Network, RnnConfig};
use crate::features::EncodedExample;

/// Gate blocks are laid out `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array2<f64>,
}

impl LstmParams {
    fn new(input: usize, units: usize, rng: &mut impl Rng) -> Self {
        let mut b = Array2::zeros((1, 4 * units));
        b.slice_mut(s![.., units..2 * units]).fill(1.0);
        LstmParams {
            wx: glorot(input, 4 * units, rng),
            wh: glorot(units, 4 * units, rng),
            b,
        }
    }

    fn zeros_like(&self) -> Self {
        LstmParams {
            wx: Array2::zeros(self.wx.raw_dim()),
            wh: Array2::zeros(self.wh.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
        }
    }

    fn units(&self) -> usize {
        self.wh.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rnn {
    pub config: RnnConfig,
    pub emb: EmbeddingLayer,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub out: OutputLayer,
}

struct Step {
    /// Activated gates `[i, f, g, o]`, `(n_t, 4H)`.
    gates: Array2<f64>,
    c_prev: Array2<f64>,
    h_prev: Array2<f64>,
    tanh_c: Array2<f64>,
}

struct DirectionCache {
    steps: Vec<Step>,
}

pub struct RnnCache {
    /// Batch positions in processing order (descending length).
    order: Vec<usize>,
    lengths: Vec<usize>,
    offsets: Vec<usize>,
    x: Array2<f64>,
    dirs: [DirectionCache; 2],
    batch: Vec<EncodedExample>,
}

impl Rnn {
    pub fn new(config: RnnConfig, emb: EmbeddingLayer, classes: usize, rng: &mut impl Rng) -> Self {
        let d = emb.output_dim();
        let h = config.lstm_units;
        let fwd = LstmParams::new(d, h, rng);
        let bwd = LstmParams::new(d, h, rng);
        let out = OutputLayer::new(4 * h, classes, rng);
        Rnn {
            config,
            emb,
            fwd,
            bwd,
            out,
        }
    }

    fn run_direction(
        params: &LstmParams,
        xw: &Array2<f64>,
        lengths: &[usize],
        offsets: &[usize],
        backward: bool,
        finals: &mut Array2<f64>,
        col: usize,
    ) -> DirectionCache {
        let units = params.units();
        let max_len = lengths.first().copied().unwrap_or(0);
        let mut h = Array2::<f64>::zeros((lengths.len(), units));
        let mut c = Array2::<f64>::zeros((lengths.len(), units));
        let mut steps = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let n = lengths.iter().take_while(|&&l| l > t).count();
            let h_prev = h.slice(s![..n, ..]).to_owned();
            let c_prev = c.slice(s![..n, ..]).to_owned();
            let mut gates = h_prev.dot(&params.wh) + &params.b;
            for r in 0..n {
                let src = if backward {
                    offsets[r] + lengths[r] - 1 - t
                } else {
                    offsets[r] + t
                };
                let mut row = gates.row_mut(r);
                row += &xw.row(src);
            }
            gates.slice_mut(s![.., ..2 * units]).mapv_inplace(sigmoid);
            gates.slice_mut(s![.., 2 * units..3 * units]).mapv_inplace(f64::tanh);
            gates.slice_mut(s![.., 3 * units..]).mapv_inplace(sigmoid);
            let i_g = gates.slice(s![.., ..units]);
            let f_g = gates.slice(s![.., units..2 * units]);
            let g_g = gates.slice(s![.., 2 * units..3 * units]);
            let o_g = gates.slice(s![.., 3 * units..]);
            let c_new = &f_g * &c_prev + &i_g * &g_g;
            let tanh_c = c_new.mapv(f64::tanh);
            let h_new = &o_g * &tanh_c;
            h.slice_mut(s![..n, ..]).assign(&h_new);
            c.slice_mut(s![..n, ..]).assign(&c_new);
            for r in 0..n {
                if lengths[r] == t + 1 {
                    finals.slice_mut(s![r, col..col + units]).assign(&h_new.row(r));
                    finals
                        .slice_mut(s![r, col + units..col + 2 * units])
                        .assign(&c_new.row(r));
                }
            }
            steps.push(Step {
                gates,
                c_prev,
                h_prev,
                tanh_c,
            });
        }
        DirectionCache { steps }
    }

    /// Returns the gradient with respect to the projected inputs `x · wx`.
    #[allow(clippy::too_many_arguments)]
    fn backprop_direction(
        params: &LstmParams,
        cache: &DirectionCache,
        lengths: &[usize],
        offsets: &[usize],
        backward: bool,
        dfinal: ArrayView2<f64>,
        total_rows: usize,
        grad: &mut LstmParams,
    ) -> Array2<f64> {
        let units = params.units();
        let mut dxw = Array2::<f64>::zeros((total_rows, 4 * units));
        let mut dh = Array2::<f64>::zeros((0, units));
        let mut dc = Array2::<f64>::zeros((0, units));
        for (t, step) in cache.steps.iter().enumerate().rev() {
            let n = step.gates.nrows();
            if dh.nrows() < n {
                let mut grown_h = Array2::zeros((n, units));
                let mut grown_c = Array2::zeros((n, units));
                grown_h.slice_mut(s![..dh.nrows(), ..]).assign(&dh);
                grown_c.slice_mut(s![..dc.nrows(), ..]).assign(&dc);
                dh = grown_h;
                dc = grown_c;
            }
            for r in 0..n {
                if lengths[r] == t + 1 {
                    let mut row = dh.row_mut(r);
                    row += &dfinal.slice(s![r, ..units]);
                    let mut row = dc.row_mut(r);
                    row += &dfinal.slice(s![r, units..]);
                }
            }
            let g = &step.gates;
            let i_g = g.slice(s![.., ..units]);
            let f_g = g.slice(s![.., units..2 * units]);
            let g_g = g.slice(s![.., 2 * units..3 * units]);
            let o_g = g.slice(s![.., 3 * units..]);
            let dc_total = &dc + &(&dh * &o_g * &step.tanh_c.mapv(|v| 1.0 - v * v));
            let mut dgates = Array2::<f64>::zeros((n, 4 * units));
            dgates
                .slice_mut(s![.., ..units])
                .assign(&(&dc_total * &g_g * &i_g.mapv(|v| v * (1.0 - v))));
            dgates
                .slice_mut(s![.., units..2 * units])
                .assign(&(&dc_total * &step.c_prev * &f_g.mapv(|v| v * (1.0 - v))));
            dgates
                .slice_mut(s![.., 2 * units..3 * units])
                .assign(&(&dc_total * &i_g * &g_g.mapv(|v| 1.0 - v * v)));
            dgates
                .slice_mut(s![.., 3 * units..])
                .assign(&(&dh * &step.tanh_c * &o_g.mapv(|v| v * (1.0 - v))));

            grad.wh += &step.h_prev.t().dot(&dgates);
            grad.b += &dgates.sum_axis(Axis(0)).insert_axis(Axis(0));
            for r in 0..n {
                let src = if backward {
                    offsets[r] + lengths[r] - 1 - t
                } else {
                    offsets[r] + t
                };
                dxw.row_mut(src).assign(&dgates.row(r));
            }
            dh = dgates.dot(&params.wh.t());
            dc = &dc_total * &f_g;
        }
        dxw
    }
}

impl Network for Rnn {
    type Cache = RnnCache;

    fn features(&self, batch: &[&EncodedExample]) -> (Array2<f64>, RnnCache) {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.sort_by(|&a, &b| batch[b].length.cmp(&batch[a].length));
        let lengths: Vec<usize> = order.iter().map(|&i| batch[i].length).collect();
        assert!(lengths.iter().all(|&l| l >= 1), "sequences must be non-empty");
        let mut offsets = Vec::with_capacity(order.len());
        let mut total = 0;
        for &l in &lengths {
            offsets.push(total);
            total += l;
        }
        let d = self.emb.output_dim();
        let mut x = Array2::<f64>::zeros((total, d));
        for (r, &i) in order.iter().enumerate() {
            self.emb
                .lookup_into(batch[i], x.slice_mut(s![offsets[r]..offsets[r] + lengths[r], ..]));
        }
        let units = self.config.lstm_units;
        let mut sorted_feats = Array2::<f64>::zeros((batch.len(), 4 * units));
        let xw_f = x.dot(&self.fwd.wx);
        let fwd = Self::run_direction(&self.fwd, &xw_f, &lengths, &offsets, false, &mut sorted_feats, 0);
        let xw_b = x.dot(&self.bwd.wx);
        let bwd = Self::run_direction(&self.bwd, &xw_b, &lengths, &offsets, true, &mut sorted_feats, 2 * units);
        let mut feats = Array2::<f64>::zeros(sorted_feats.raw_dim());
        for (r, &i) in order.iter().enumerate() {
            feats.row_mut(i).assign(&sorted_feats.row(r));
        }
        let cache = RnnCache {
            order: order.clone(),
            lengths,
            offsets,
            x,
            dirs: [fwd, bwd],
            batch: order.iter().map(|&i| batch[i].clone()).collect(),
        };
        (feats, cache)
    }

    fn features_backward(&self, cache: RnnCache, dfeat: ArrayView2<f64>, grad: &mut Self) {
        let units = self.config.lstm_units;
        let mut sorted = Array2::<f64>::zeros(dfeat.raw_dim());
        for (r, &i) in cache.order.iter().enumerate() {
            sorted.row_mut(r).assign(&dfeat.row(i));
        }
        let total = cache.x.nrows();
        let [fwd_cache, bwd_cache] = &cache.dirs;
        let dxw_f = Self::backprop_direction(
            &self.fwd,
            fwd_cache,
            &cache.lengths,
            &cache.offsets,
            false,
            sorted.slice(s![.., ..2 * units]),
            total,
            &mut grad.fwd,
        );
        let dxw_b = Self::backprop_direction(
            &self.bwd,
            bwd_cache,
            &cache.lengths,
            &cache.offsets,
            true,
            sorted.slice(s![.., 2 * units..]),
            total,
            &mut grad.bwd,
        );
        grad.fwd.wx += &cache.x.t().dot(&dxw_f);
        grad.bwd.wx += &cache.x.t().dot(&dxw_b);
        let dx = dxw_f.dot(&self.fwd.wx.t()) + dxw_b.dot(&self.bwd.wx.t());
        for (r, ex) in cache.batch.iter().enumerate() {
            let rows = dx.slice(s![cache.offsets[r]..cache.offsets[r] + cache.lengths[r], ..]);
            self.emb.backward(ex, rows, &mut grad.emb);
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
        Rnn {
            config: self.config.clone(),
            emb: self.emb.zeros_like(),
            fwd: self.fwd.zeros_like(),
            bwd: self.bwd.zeros_like(),
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
        for (dir, p) in [("fwd", &self.fwd), ("bwd", &self.bwd)] {
            v.push((format!("lstm_{dir}.wx"), &p.wx));
            v.push((format!("lstm_{dir}.wh"), &p.wh));
            v.push((format!("lstm_{dir}.b"), &p.b));
        }
        v.push(("output.w".into(), &self.out.w));
        v.push(("output.b".into(), &self.out.b));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.emb.tensors_mut();
        for p in [&mut self.fwd, &mut self.bwd] {
            v.push(&mut p.wx);
            v.push(&mut p.wh);
            v.push(&mut p.b);
        }
        v.push(&mut self.out.w);
        v.push(&mut self.out.b);
        v
    }
}
