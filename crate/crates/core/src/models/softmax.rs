use crate::optim::{axpy, dot, EmbeddingMatrix, RowGrads};

/// Full-softmax cross-entropy of `target` given logits `q · W_poi[j]` over
/// every POI `j`.
///
/// Accumulates `∂L/∂W_poi` into `poi_grads` and `∂L/∂q` into `dq`, and
/// returns the loss `logsumexp(z) - z[target]`.
pub fn softmax_cross_entropy(q: &[f64], poi: &EmbeddingMatrix, target: usize, poi_grads: &mut RowGrads, dq: &mut [f64]) -> f64 {
    let n = poi.rows();
    let mut logits: Vec<f64> = (0..n).map(|j| dot(q, poi.row(j))).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in &mut logits {
        *z = (*z - max).exp();
        sum += *z;
    }
    let loss = sum.ln() + max - dot(q, poi.row(target));
    for (j, e) in logits.iter().enumerate() {
        let mut g = e / sum;
        if j == target {
            g -= 1.0;
        }
        poi_grads.add(j, g, q);
        axpy(g, poi.row(j), dq);
    }
    loss
}
