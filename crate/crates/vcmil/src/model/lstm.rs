//! Two-layer LSTM aggregator: a simpler video classifier that reads the
//! segment sequence and scores the final hidden state. Hidden width equals
//! the incoming feature dim.

use super::{Linear, ModelConfig, ParamBuilder};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct LstmLayer {
    /// Input-to-gates `[dim_in, 4*hidden]`, gate order i, f, g, o.
    wx: Tensor,
    /// Hidden-to-gates `[hidden, 4*hidden]`.
    wh: Tensor,
    b: Tensor,
}

pub struct LstmNet {
    pub dim: usize,
    layers: Vec<LstmLayer>,
    cls_head: Linear,
}

impl LstmNet {
    pub(crate) fn init(config: &ModelConfig, b: &mut ParamBuilder) -> LstmNet {
        let dim = config.working_dim();
        let bound = 1.0 / (dim as f32).sqrt();
        let layers = (0..2)
            .map(|l| {
                let p = |s: &str| format!("lstm.layer{}.{}", l, s);
                LstmLayer {
                    wx: b.uniform(&p("wx"), vec![dim, 4 * dim], bound),
                    wh: b.uniform(&p("wh"), vec![dim, 4 * dim], bound),
                    b: b.uniform(&p("b"), vec![4 * dim], bound),
                }
            })
            .collect();
        let cls_head = b.linear_xavier("lstm.cls_head", dim, 1);
        LstmNet {
            dim,
            layers,
            cls_head,
        }
    }

    /// `segments`: `[seq_len, dim]`. Returns the video probability `[1, 1]`.
    pub fn forward(&self, segments: &Tensor) -> Result<Tensor> {
        let shape = segments.shape();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::shape(
                "lstm.forward",
                format!("expected [*, {}] segments, got {:?}", self.dim, shape),
            ));
        }
        let seq_len = shape[0];
        let h_dim = self.dim;

        let mut inputs: Vec<Tensor> = (0..seq_len)
            .map(|t| segments.slice_rows(t, t + 1))
            .collect::<Result<_>>()?;
        let mut final_h = None;
        for layer in &self.layers {
            let mut h = Tensor::zeros(vec![1, h_dim]);
            let mut c = Tensor::zeros(vec![1, h_dim]);
            let mut outputs = Vec::with_capacity(seq_len);
            for x_t in &inputs {
                let pre = x_t
                    .matmul(&layer.wx)?
                    .add(&h.matmul(&layer.wh)?)?
                    .add_bias(&layer.b)?;
                let i = pre.slice_cols(0, h_dim)?.sigmoid();
                let f = pre.slice_cols(h_dim, 2 * h_dim)?.sigmoid();
                let g = pre.slice_cols(2 * h_dim, 3 * h_dim)?.tanh();
                let o = pre.slice_cols(3 * h_dim, 4 * h_dim)?.sigmoid();
                c = f.mul(&c)?.add(&i.mul(&g)?)?;
                h = o.mul(&c.tanh())?;
                outputs.push(h.clone());
            }
            final_h = Some(h);
            inputs = outputs;
        }
        let h = final_h.expect("layers and sequence are non-empty");
        Ok(self.cls_head.forward(&h)?.sigmoid())
    }
}
