//! Training objectives: MIL ranking over snippet scores, video-level binary
//! cross-entropy, and feature-magnitude selection with its paired losses.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probability clamp for cross-entropy terms.
pub const PROB_EPS: f32 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum LossMode {
    /// Ranking hinge + smoothness + sparsity + video-classification BCE.
    MilBert,
    /// Magnitude-driven BCE blended with video-classification BCE, plus the
    /// magnitude separation hinge.
    RtfmBert,
}

impl LossMode {
    pub fn parse(s: &str) -> Result<LossMode> {
        match s {
            "mil_bert" => Ok(LossMode::MilBert),
            "rtfm_bert" => Ok(LossMode::RtfmBert),
            other => Err(Error::Config(format!(
                "unknown mode '{}' (expected mil_bert or rtfm_bert)",
                other
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossMode::MilBert => "mil_bert",
            LossMode::RtfmBert => "rtfm_bert",
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub lambda_smooth: f32,
    pub lambda_sparse: f32,
    /// Weight on the video-classification BCE in the blended objective;
    /// `1 - beta` goes to the magnitude BCE.
    pub beta: f32,
    /// How many top-magnitude segments feed the magnitude losses.
    pub rtfm_k: usize,
    /// Target separation between abnormal and normal mean top-k magnitudes.
    pub rtfm_margin: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_smooth: 8e-5,
            lambda_sparse: 8e-5,
            beta: 0.5,
            rtfm_k: 3,
            rtfm_margin: 100.0,
        }
    }
}

/// The three pieces of the ranking objective, kept separate so logs and tests
/// can inspect them. `total` wires them together in the graph.
pub struct MilRankingTerms {
    pub hinge: Tensor,
    pub smooth: Tensor,
    pub sparse: Tensor,
    pub total: Tensor,
}

/// Ranking loss between one abnormal and one normal bag of snippet scores.
///
/// `hinge = max(0, 1 - max(abnormal) + max(normal))`; smoothness is the sum of
/// squared first differences of the abnormal scores and sparsity their sum,
/// both weighted by their lambdas. Regularizers touch only the abnormal bag.
pub fn mil_ranking_loss(
    abnormal_scores: &Tensor,
    normal_scores: &Tensor,
    config: &LossConfig,
) -> Result<MilRankingTerms> {
    let max_a = abnormal_scores.max()?;
    let max_n = normal_scores.max()?;
    let hinge = max_n.sub(&max_a)?.add_scalar(1.0).relu();

    let m = abnormal_scores.shape()[0];
    let smooth = if m >= 2 {
        let head = abnormal_scores.slice_rows(0, m - 1)?;
        let tail = abnormal_scores.slice_rows(1, m)?;
        let diff = head.sub(&tail)?;
        diff.mul(&diff)?.sum()
    } else {
        Tensor::scalar(0.0)
    };
    let sparse = abnormal_scores.sum();

    let total = hinge
        .add(&smooth.scale(config.lambda_smooth))?
        .add(&sparse.scale(config.lambda_sparse))?;
    Ok(MilRankingTerms {
        hinge,
        smooth,
        sparse,
        total,
    })
}

/// `-ln(p_abnormal) - ln(1 - p_normal)`, probabilities clamped away from the
/// boundaries so the logs stay finite.
pub fn video_bce_loss(p_abnormal: &Tensor, p_normal: &Tensor) -> Result<Tensor> {
    let pa = p_abnormal.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let pn = p_normal.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let term_a = pa.ln().neg();
    let term_n = pn.neg().add_scalar(1.0).ln().neg();
    term_a.sum().add(&term_n.sum())
}

/// Indices of the `k` largest Euclidean row norms of `features`, descending by
/// magnitude; ties resolve to the lower row index. `k` is capped at the row
/// count.
pub fn rtfm_select_topk(features: &[Vec<f32>], k: usize) -> Vec<usize> {
    let mut mags: Vec<(usize, f64)> = features
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let m: f64 = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            (i, m)
        })
        .collect();
    mags.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    mags.truncate(k.min(features.len()));
    mags.into_iter().map(|(i, _)| i).collect()
}

pub struct RtfmTerms {
    /// BCE on the mean score of the top-k-magnitude segments of each bag
    /// (abnormal toward 1, normal toward 0).
    pub bce: Tensor,
    /// Hinge pushing abnormal mean top-k magnitude above normal by a margin.
    pub rank: Tensor,
    /// Segment indices the abnormal bag selected, for inspection.
    pub topk_abnormal: Vec<usize>,
    pub topk_normal: Vec<usize>,
}

/// Feature-magnitude objective over one abnormal and one normal bag.
///
/// Selection runs on the (detached) segment features; scores and magnitudes
/// of the selected segments stay in the graph.
pub fn rtfm_loss(
    abnormal_features: &Tensor,
    abnormal_scores: &Tensor,
    normal_features: &Tensor,
    normal_scores: &Tensor,
    config: &LossConfig,
) -> Result<RtfmTerms> {
    let rows = |t: &Tensor| -> Vec<Vec<f32>> {
        let (r, c) = t.rows_cols();
        let d = t.to_vec();
        (0..r).map(|i| d[i * c..(i + 1) * c].to_vec()).collect()
    };
    let idx_a = rtfm_select_topk(&rows(abnormal_features), config.rtfm_k);
    let idx_n = rtfm_select_topk(&rows(normal_features), config.rtfm_k);

    let mean_score_a = abnormal_scores.gather_rows(&idx_a)?.mean();
    let mean_score_n = normal_scores.gather_rows(&idx_n)?.mean();
    let bce = video_bce_loss(&mean_score_a, &mean_score_n)?;

    let mag_a = abnormal_features.row_l2_norms().gather_rows(&idx_a)?.mean();
    let mag_n = normal_features.row_l2_norms().gather_rows(&idx_n)?.mean();
    let rank = mag_n.sub(&mag_a)?.add_scalar(config.rtfm_margin).relu();

    Ok(RtfmTerms {
        bce,
        rank,
        topk_abnormal: idx_a,
        topk_normal: idx_n,
    })
}

/// Everything a combined objective can draw from. Populate what the mode
/// needs; missing required parts are a contract error.
pub struct LossParts {
    pub ranking: Option<MilRankingTerms>,
    pub video_bce: Option<Tensor>,
    pub rtfm: Option<RtfmTerms>,
}

/// Scalar training loss for the given mode.
///
/// `MilBert`: ranking total + video BCE, unweighted.
/// `RtfmBert`: `beta * video BCE + (1 - beta) * magnitude BCE + magnitude
/// hinge`.
pub fn combined_loss(mode: LossMode, parts: &LossParts, config: &LossConfig) -> Result<Tensor> {
    match mode {
        LossMode::MilBert => {
            let ranking = parts
                .ranking
                .as_ref()
                .ok_or_else(|| Error::Contract("mil_bert loss needs ranking terms".into()))?;
            let bce = parts
                .video_bce
                .as_ref()
                .ok_or_else(|| Error::Contract("mil_bert loss needs video BCE".into()))?;
            ranking.total.add(bce)
        }
        LossMode::RtfmBert => {
            let bce = parts
                .video_bce
                .as_ref()
                .ok_or_else(|| Error::Contract("rtfm_bert loss needs video BCE".into()))?;
            let rtfm = parts
                .rtfm
                .as_ref()
                .ok_or_else(|| Error::Contract("rtfm_bert loss needs magnitude terms".into()))?;
            bce.scale(config.beta)
                .add(&rtfm.bce.scale(1.0 - config.beta))?
                .add(&rtfm.rank)
        }
    }
}
