//! Transformer aggregator over the segment sequence.
//!
//! A learned classification token is prepended to the segments, learned
//! positional encodings are added, and pre-layer-norm blocks with unmasked
//! bidirectional attention refine the sequence. The classification token's
//! final state drives the video-level probability; the remaining rows are the
//! refined segment features y_i.

use super::{Linear, ModelConfig, ParamBuilder, Phase};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LN_EPS: f32 = 1e-5;

struct HeadProj {
    /// Query, key, and value projections, each `[dim_model, head_dim]`.
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
}

struct LayerNormParams {
    gamma: Tensor,
    beta: Tensor,
}

struct BertLayer {
    ln1: LayerNormParams,
    heads: Vec<HeadProj>,
    attn_out: Linear,
    ln2: LayerNormParams,
    ffn1: Linear,
    ffn2: Linear,
}

pub struct BertNet {
    pub seq_len: usize,
    pub dim_in: usize,
    pub dim_model: usize,
    dropout_p: f32,
    /// Present only when `dim_model` differs from the incoming feature dim.
    input_proj: Option<Linear>,
    cls_token: Tensor,
    /// `[seq_len + 1, dim_model]`: one row for the token, then the segments.
    positional: Tensor,
    layers: Vec<BertLayer>,
    cls_head: Linear,
}

pub struct BertOutput {
    pub y_cls: Tensor,
    pub p_video: Tensor,
    pub y_i: Tensor,
    /// Post-softmax attention rows, indexed `[layer][head]`.
    pub attention: Vec<Vec<Tensor>>,
}

impl BertNet {
    pub(crate) fn init(config: &ModelConfig, b: &mut ParamBuilder) -> BertNet {
        let dim_in = config.working_dim();
        let dm = config.dim_model();
        let bc = &config.bert;
        let head_dim = dm / bc.heads;

        let input_proj = if dim_in != dm {
            Some(b.linear_gaussian("bert.input_proj", dim_in, dm))
        } else {
            None
        };
        let cls_token = b.gaussian("bert.cls_token", vec![1, dm], 0.02);
        let positional = b.gaussian("bert.positional", vec![bc.seq_len + 1, dm], 0.02);

        let layers = (0..bc.layers)
            .map(|l| {
                let p = |s: &str| format!("bert.layer{}.{}", l, s);
                BertLayer {
                    ln1: LayerNormParams {
                        gamma: b.fill(&p("ln1.gamma"), vec![dm], 1.0),
                        beta: b.fill(&p("ln1.beta"), vec![dm], 0.0),
                    },
                    heads: (0..bc.heads)
                        .map(|h| HeadProj {
                            wq: b.gaussian(&p(&format!("head{}.wq", h)), vec![dm, head_dim], 0.02),
                            wk: b.gaussian(&p(&format!("head{}.wk", h)), vec![dm, head_dim], 0.02),
                            wv: b.gaussian(&p(&format!("head{}.wv", h)), vec![dm, head_dim], 0.02),
                        })
                        .collect(),
                    attn_out: b.linear_gaussian(&p("attn_out"), dm, dm),
                    ln2: LayerNormParams {
                        gamma: b.fill(&p("ln2.gamma"), vec![dm], 1.0),
                        beta: b.fill(&p("ln2.beta"), vec![dm], 0.0),
                    },
                    ffn1: b.linear_gaussian(&p("ffn1"), dm, bc.ff_mult * dm),
                    ffn2: b.linear_gaussian(&p("ffn2"), bc.ff_mult * dm, dm),
                }
            })
            .collect();

        let cls_head = b.linear_gaussian("bert.cls_head", dm, 1);
        BertNet {
            seq_len: bc.seq_len,
            dim_in,
            dim_model: dm,
            dropout_p: bc.dropout_p,
            input_proj,
            cls_token,
            positional,
            layers,
            cls_head,
        }
    }

    /// `segments`: `[seq_len, dim_in]`.
    pub fn forward(&self, segments: &Tensor, phase: &mut Phase) -> Result<BertOutput> {
        let shape = segments.shape();
        if shape != vec![self.seq_len, self.dim_in] {
            return Err(Error::shape(
                "bert.forward",
                format!(
                    "expected [{}, {}] segments, got {:?}",
                    self.seq_len, self.dim_in, shape
                ),
            ));
        }
        let projected = match &self.input_proj {
            Some(p) => p.forward(segments)?,
            None => segments.clone(),
        };
        let mut x =
            Tensor::concat_rows(&[self.cls_token.clone(), projected])?.add(&self.positional)?;

        let head_dim = self.dim_model / self.layers[0].heads.len();
        let scale = 1.0 / (head_dim as f32).sqrt();
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let normed = x.layer_norm(&layer.ln1.gamma, &layer.ln1.beta, LN_EPS)?;
            let mut outs = Vec::with_capacity(layer.heads.len());
            let mut probs_l = Vec::with_capacity(layer.heads.len());
            for head in &layer.heads {
                let q = normed.matmul(&head.wq)?;
                let k = normed.matmul(&head.wk)?;
                let v = normed.matmul(&head.wv)?;
                let probs = q.matmul(&k.transpose()?)?.scale(scale).softmax(1)?;
                outs.push(probs.matmul(&v)?);
                probs_l.push(probs);
            }
            attention.push(probs_l);
            let merged = Tensor::concat_cols(&outs)?;
            let attn = phase.apply_dropout(&layer.attn_out.forward(&merged)?, self.dropout_p);
            x = x.add(&attn)?;

            let normed2 = x.layer_norm(&layer.ln2.gamma, &layer.ln2.beta, LN_EPS)?;
            let ff = layer.ffn2.forward(&layer.ffn1.forward(&normed2)?.gelu())?;
            let ff = phase.apply_dropout(&ff, self.dropout_p);
            x = x.add(&ff)?;
        }

        let y_cls = x.slice_rows(0, 1)?;
        let y_i = x.slice_rows(1, self.seq_len + 1)?;
        let p_video = self.cls_head.forward(&y_cls)?.sigmoid();
        Ok(BertOutput {
            y_cls,
            p_video,
            y_i,
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BertConfig, Model, ModelConfig};
    use crate::rng::{stream, stream_rng};

    fn net(layers: usize, heads: usize, seq_len: usize, dim: usize, seed: u64) -> BertNet {
        let config = ModelConfig {
            feature_dim: dim,
            bert: BertConfig {
                layers,
                heads,
                seq_len,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut rng = stream_rng(seed, stream::MODEL_INIT, 0);
        let mut b = ParamBuilder::new(&mut rng);
        BertNet::init(&config, &mut b)
    }

    fn demo_input(seq_len: usize, dim: usize) -> Tensor {
        Tensor::constant(
            (0..seq_len * dim)
                .map(|i| ((i * 31 % 17) as f32 - 8.0) / 8.0)
                .collect(),
            vec![seq_len, dim],
        )
        .unwrap()
    }

    #[test]
    fn attention_rows_sum_to_one_for_every_layer_and_head() {
        let net = net(2, 4, 6, 8, 3);
        let out = net.forward(&demo_input(6, 8), &mut Phase::Eval).unwrap();
        assert_eq!(out.attention.len(), 2);
        for layer in &out.attention {
            assert_eq!(layer.len(), 4);
            for probs in layer {
                assert_eq!(probs.shape(), vec![7, 7]);
                let d = probs.to_vec();
                for r in 0..7 {
                    let sum: f32 = d[r * 7..(r + 1) * 7].iter().sum();
                    assert!((sum - 1.0).abs() < 1e-5, "row {} sums to {}", r, sum);
                }
            }
        }
    }

    #[test]
    fn permuting_segments_changes_the_video_probability() {
        let net = net(1, 2, 4, 8, 9);
        let x = demo_input(4, 8);
        let p1 = net.forward(&x, &mut Phase::Eval).unwrap().p_video.value();

        let d = x.to_vec();
        let mut perm = Vec::new();
        for r in [2usize, 0, 3, 1] {
            perm.extend_from_slice(&d[r * 8..(r + 1) * 8]);
        }
        let xp = Tensor::constant(perm, vec![4, 8]).unwrap();
        let p2 = net.forward(&xp, &mut Phase::Eval).unwrap().p_video.value();
        assert_ne!(p1, p2);
    }

    #[test]
    fn wrong_sequence_length_is_a_shape_error() {
        let net = net(1, 1, 4, 8, 0);
        assert!(net.forward(&demo_input(5, 8), &mut Phase::Eval).is_err());
        assert!(net.forward(&demo_input(4, 6), &mut Phase::Eval).is_err());
    }

    #[test]
    fn dim_model_override_inserts_projection() {
        let config = ModelConfig {
            feature_dim: 10,
            bert: BertConfig {
                dim_model: Some(8),
                layers: 1,
                heads: 2,
                seq_len: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut rng = stream_rng(0, stream::MODEL_INIT, 0);
        let mut b = ParamBuilder::new(&mut rng);
        let net = BertNet::init(&config, &mut b);
        assert!(net.input_proj.is_some());
        let out = net.forward(&demo_input(3, 10), &mut Phase::Eval).unwrap();
        assert_eq!(out.y_i.shape(), vec![3, 8]);
        assert_eq!(out.y_cls.shape(), vec![1, 8]);
    }

    /// Straight-line reference for a single-layer, single-head network on a
    /// two-segment input, written directly from the block definition with
    /// plain f32 loops and no shared tensor code.
    fn reference_forward(net: &BertNet, segments: &[f32; 4]) -> (f32, Vec<f32>) {
        let dm = 2;
        let s = 3; // cls + 2 segments
        let get = |t: &Tensor| t.to_vec();
        let cls = get(&net.cls_token);
        let pos = get(&net.positional);
        let layer = &net.layers[0];
        let (g1, b1) = (get(&layer.ln1.gamma), get(&layer.ln1.beta));
        let (g2, b2) = (get(&layer.ln2.gamma), get(&layer.ln2.beta));
        let wq = get(&net.layers[0].heads[0].wq);
        let wk = get(&net.layers[0].heads[0].wk);
        let wv = get(&net.layers[0].heads[0].wv);
        let (wo, bo) = (get(&layer.attn_out.w), get(&layer.attn_out.b));
        let (w1, bf1) = (get(&layer.ffn1.w), get(&layer.ffn1.b));
        let (w2, bf2) = (get(&layer.ffn2.w), get(&layer.ffn2.b));
        let (wc, bc) = (get(&net.cls_head.w), get(&net.cls_head.b));

        let mut x = vec![0.0f32; s * dm];
        x[..dm].copy_from_slice(&cls);
        x[dm..].copy_from_slice(segments);
        for i in 0..s * dm {
            x[i] += pos[i];
        }

        let layer_norm = |row: &[f32], g: &[f32], b: &[f32]| -> Vec<f32> {
            let mean = row.iter().sum::<f32>() / row.len() as f32;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / row.len() as f32;
            row.iter()
                .zip(g.iter().zip(b))
                .map(|(v, (gi, bi))| (v - mean) / (var + LN_EPS).sqrt() * gi + bi)
                .collect()
        };
        let matvec = |row: &[f32], w: &[f32], dout: usize| -> Vec<f32> {
            (0..dout)
                .map(|j| row.iter().enumerate().map(|(i, v)| v * w[i * dout + j]).sum())
                .collect()
        };

        let normed: Vec<Vec<f32>> = (0..s)
            .map(|r| layer_norm(&x[r * dm..(r + 1) * dm], &g1, &b1))
            .collect();
        let q: Vec<Vec<f32>> = normed.iter().map(|r| matvec(r, &wq, dm)).collect();
        let k: Vec<Vec<f32>> = normed.iter().map(|r| matvec(r, &wk, dm)).collect();
        let v: Vec<Vec<f32>> = normed.iter().map(|r| matvec(r, &wv, dm)).collect();
        let scale = 1.0 / (dm as f32).sqrt();
        let mut attn_out_rows = Vec::new();
        for qi in &q {
            let logits: Vec<f32> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale)
                .collect();
            let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f32 = exps.iter().sum();
            let probs: Vec<f32> = exps.iter().map(|e| e / z).collect();
            let mut row = vec![0.0f32; dm];
            for (p, vj) in probs.iter().zip(&v) {
                for c in 0..dm {
                    row[c] += p * vj[c];
                }
            }
            attn_out_rows.push(row);
        }
        let mut h = x.clone();
        for r in 0..s {
            let proj = matvec(&attn_out_rows[r], &wo, dm);
            for c in 0..dm {
                h[r * dm + c] += proj[c] + bo[c];
            }
        }
        let mut y = h.clone();
        for r in 0..s {
            let normed2 = layer_norm(&h[r * dm..(r + 1) * dm], &g2, &b2);
            let hidden: Vec<f32> = matvec(&normed2, &w1, dm * 4)
                .iter()
                .zip(&bf1)
                .map(|(v, b)| {
                    let x = (v + b) as f64;
                    (0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))) as f32
                })
                .collect();
            let out = matvec(&hidden, &w2, dm);
            for c in 0..dm {
                y[r * dm + c] += out[c] + bf2[c];
            }
        }
        let y_cls = &y[..dm];
        let logit: f32 = y_cls.iter().enumerate().map(|(i, v)| v * wc[i]).sum::<f32>() + bc[0];
        let p = 1.0 / (1.0 + (-logit).exp());
        (p, y[dm..].to_vec())
    }

    #[test]
    fn single_head_forward_matches_straight_line_reference() {
        let net = net(1, 1, 2, 2, 17);
        let segments = [0.3f32, -0.8, 1.1, 0.4];
        let input = Tensor::constant(segments.to_vec(), vec![2, 2]).unwrap();
        let out = net.forward(&input, &mut Phase::Eval).unwrap();
        let (ref_p, ref_yi) = reference_forward(&net, &segments);
        assert!(
            (out.p_video.value() - ref_p).abs() < 1e-5,
            "p {} vs reference {}",
            out.p_video.value(),
            ref_p
        );
        for (a, b) in out.y_i.to_vec().iter().zip(&ref_yi) {
            assert!((a - b).abs() < 1e-5, "{} vs {}", a, b);
        }
    }

    #[test]
    fn full_model_gradcheck_on_tiny_transformer() {
        use crate::tensor::gradcheck::{check_gradients, GradCheckConfig};
        let config = ModelConfig {
            feature_dim: 4,
            bert: BertConfig {
                layers: 1,
                heads: 1,
                seq_len: 3,
                ..Default::default()
            },
            mil_dropout: 0.0,
            ..Default::default()
        };
        let model = Model::new(config, 0).unwrap();
        let snippets = Tensor::constant(
            (0..12).map(|i| (i as f32 - 6.0) / 4.0).collect(),
            vec![3, 4],
        )
        .unwrap();
        let pooling = Tensor::constant(
            vec![
                1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0,
            ],
            vec![3, 3],
        )
        .unwrap();
        // Mean rather than sum keeps the probe loss near 1 so f32 rounding in
        // the stored loss stays below the finite-difference floor.
        let report = check_gradients(
            model.named_params(),
            || {
                let out = model.forward(&snippets, &pooling, &mut Phase::Eval)?;
                out.scores.mean().add(&out.p_video.mean())
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(
            report.passed(),
            "worst {:?} (max abs {}, rel {}, kinks {})",
            report.worst,
            report.max_abs_diff,
            report.max_rel_diff,
            report.kinks
        );
        // The 512-wide ReLU layer virtually guarantees a few kink crossings at
        // h = 1e-3; they must stay a tiny fraction of the entries checked.
        assert!(
            report.kinks * 100 < report.checked,
            "kinks {} of {}",
            report.kinks,
            report.checked
        );
    }
}
