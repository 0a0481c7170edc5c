//! Fixed 32-segment temporal pooling and its inverse.
//!
//! Segment `i` covers snippets `[floor(i*N/32), max(floor((i+1)*N/32),
//! floor(i*N/32) + 1))`. For N >= 32 this partitions the snippets into
//! contiguous groups whose sizes differ by at most one; for N < 32 each
//! segment holds exactly one snippet (nearest-index repetition), so short
//! videos still produce all 32 segments. Segment features are the mean of
//! their group.

use super::features::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_SEGMENTS: usize = 32;

#[derive(Debug, Clone)]
pub struct SegmentedVideo {
    /// `NUM_SEGMENTS x D` mean-pooled features.
    pub segments: FeatureMatrix,
    /// For each snippet, the first segment that covers it. Monotone
    /// non-decreasing; surjective onto all segments when N >= 32.
    pub assignment: Vec<usize>,
}

fn group_bounds(i: usize, n: usize) -> (usize, usize) {
    let start = i * n / NUM_SEGMENTS;
    let end = ((i + 1) * n / NUM_SEGMENTS).max(start + 1);
    (start, end)
}

pub fn segment(features: &FeatureMatrix) -> Result<SegmentedVideo> {
    let (n, d) = (features.n, features.d);
    if n == 0 {
        return Err(Error::Contract("cannot segment a video with no snippets".into()));
    }
    let mut data = vec![0.0f32; NUM_SEGMENTS * d];
    for i in 0..NUM_SEGMENTS {
        let (start, end) = group_bounds(i, n);
        let count = (end - start) as f64;
        for c in 0..d {
            let mut acc = 0.0f64;
            for j in start..end {
                acc += features.data[j * d + c] as f64;
            }
            data[i * d + c] = (acc / count) as f32;
        }
    }
    let mut assignment = vec![usize::MAX; n];
    for i in (0..NUM_SEGMENTS).rev() {
        let (start, end) = group_bounds(i, n);
        for j in start..end {
            assignment[j] = i;
        }
    }
    debug_assert!(assignment.iter().all(|&a| a < NUM_SEGMENTS));
    Ok(SegmentedVideo {
        segments: FeatureMatrix::new(NUM_SEGMENTS, d, data)?,
        assignment,
    })
}

/// Constant `NUM_SEGMENTS x N` averaging matrix realizing the same grouping
/// as [`segment`], so pooling can sit inside a differentiable graph (left
/// multiply: `pooling_matrix(n) @ snippets`).
pub fn pooling_matrix(n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Contract("cannot pool a video with no snippets".into()));
    }
    let mut data = vec![0.0f32; NUM_SEGMENTS * n];
    for i in 0..NUM_SEGMENTS {
        let (start, end) = group_bounds(i, n);
        let w = 1.0 / (end - start) as f32;
        for j in start..end {
            data[i * n + j] = w;
        }
    }
    Tensor::constant(data, vec![NUM_SEGMENTS, n])
}

/// Map per-segment scores back to per-snippet scores through the assignment
/// recorded at segmentation time.
pub fn inverse_segment(seg_scores: &[f32], assignment: &[usize]) -> Result<Vec<f32>> {
    if seg_scores.len() != NUM_SEGMENTS {
        return Err(Error::Contract(format!(
            "expected {} segment scores, got {}",
            NUM_SEGMENTS,
            seg_scores.len()
        )));
    }
    if assignment.is_empty() {
        return Err(Error::Contract("empty segment assignment".into()));
    }
    if let Some(&bad) = assignment.iter().find(|&&a| a >= NUM_SEGMENTS) {
        return Err(Error::Contract(format!(
            "assignment references segment {} of {}",
            bad, NUM_SEGMENTS
        )));
    }
    Ok(assignment.iter().map(|&a| seg_scores[a]).collect())
}
