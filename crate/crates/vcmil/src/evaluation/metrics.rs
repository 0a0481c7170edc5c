//! Frame-level ranking metrics, computed in f64 throughout.

use crate::error::{Error, Result};

fn check_lengths(name: &'static str, scores: &[f32], gt: &[u8]) -> Result<()> {
    if scores.len() != gt.len() {
        return Err(Error::Contract(format!(
            "{}: {} scores vs {} ground-truth frames",
            name,
            scores.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Area under the ROC curve via the Mann-Whitney rank statistic. Tied scores
/// receive mid-ranks, which reproduces the pairwise rule
/// `[#(pos > neg) + 0.5 * #(pos == neg)] / (#pos * #neg)` exactly.
pub fn roc_auc(scores: &[f32], gt: &[u8]) -> Result<f64> {
    check_lengths("roc_auc", scores, gt)?;
    let n_pos = gt.iter().filter(|&&g| g != 0).count();
    let n_neg = gt.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC-AUC needs both classes in the ground truth".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Mid-ranks are half-integers and their running sum stays well under
    // 2^53, so the accumulation below is exact.
    let mut pos_rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if gt[idx] != 0 {
                pos_rank_sum += mid_rank;
            }
        }
        i = j + 1;
    }

    let np = n_pos as f64;
    let u = pos_rank_sum - np * (np + 1.0) / 2.0;
    Ok(u / (np * n_neg as f64))
}

/// Average precision over descending-score thresholds with ties grouped:
/// `AP = sum_n (R_n - R_{n-1}) * P_n`.
pub fn average_precision(scores: &[f32], gt: &[u8]) -> Result<f64> {
    check_lengths("average_precision", scores, gt)?;
    let total_pos = gt.iter().filter(|&&g| g != 0).count();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive frame".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut ap = 0.0f64;
    let mut prev_recall = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if gt[idx] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}
