//! InfoNCE.
//!
//! For a query `q`, positive `k⁺` and negatives `k⁻`:
//!
//! ```text
//! L = -log( exp(sim(q,k⁺)/τ) / (exp(sim(q,k⁺)/τ) + Σ exp(sim(q,k⁻)/τ)) )
//!   = logsumexp({sim(q,k)/τ : k ∈ {k⁺} ∪ k⁻}) - sim(q,k⁺)/τ
//! ```
//!
//! with `sim` the cosine similarity. In a training batch every other pair's
//! positive acts as an extra negative, unless it is the same knowledge text.

use super::{cosine, dot, ProjectionHead, RetrieverError};

/// Single-query InfoNCE with log-sum-exp stabilization.
pub fn info_nce_loss(q: &[f64], pos: &[f64], negs: &[Vec<f64>], tau: f64) -> Result<f64, RetrieverError> {
    if !(tau > 0.0) {
        return Err(RetrieverError::Config(format!("temperature must be > 0, got {tau}")));
    }
    if negs.is_empty() {
        return Err(RetrieverError::Config("at least one negative is required".into()));
    }
    for v in std::iter::once(pos).chain(negs.iter().map(Vec::as_slice)) {
        if v.len() != q.len() {
            return Err(RetrieverError::DimensionMismatch {
                expected: q.len(),
                got: v.len(),
            });
        }
    }
    let pos_logit = cosine(q, pos) / tau;
    let logits: Vec<f64> = std::iter::once(pos_logit)
        .chain(negs.iter().map(|n| cosine(q, n) / tau))
        .collect();
    Ok((log_sum_exp(&logits) - pos_logit).max(0.0))
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// A training pair as provider embeddings, before the head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
    /// Pairs sharing a key share their positive and are never each
    /// other's in-batch negatives.
    pub positive_key: String,
}

struct Projected {
    unit: Vec<f64>,
    norm: f64,
}

fn project(head: &ProjectionHead, x: &[f64]) -> Projected {
    let u = head.apply(x);
    let norm = dot(&u, &u).sqrt();
    let unit = if norm > 0.0 { u.iter().map(|v| v / norm).collect() } else { u };
    Projected { unit, norm }
}

/// Accumulates `dL/dW` for `unit = W·x / |W·x|` given `dL/dunit`.
fn backprop(grad_w: &mut [f64], dim_in: usize, p: &Projected, g_unit: &[f64], x: &[f64]) {
    if p.norm == 0.0 {
        return;
    }
    let along = dot(&p.unit, g_unit);
    for (r, row) in grad_w.chunks_exact_mut(dim_in).enumerate() {
        let du = (g_unit[r] - p.unit[r] * along) / p.norm;
        if du != 0.0 {
            for (w, xi) in row.iter_mut().zip(x) {
                *w += du * xi;
            }
        }
    }
}

/// Mean InfoNCE over the batch with in-batch negatives, and its analytic
/// gradient with respect to the head weights (row-major, like the head).
pub fn batch_loss_and_grad(head: &ProjectionHead, batch: &[&EncodedPair]) -> (f64, Vec<f64>) {
    let tau = head.temperature();
    let dim_in = head.dim_in();
    let b = batch.len();
    let mut grad = vec![0.0; head.weights().len()];
    if b == 0 {
        return (0.0, grad);
    }

    let queries: Vec<Projected> = batch.iter().map(|p| project(head, &p.query)).collect();
    let positives: Vec<Projected> = batch.iter().map(|p| project(head, &p.positive)).collect();
    let negatives: Vec<Vec<Projected>> = batch
        .iter()
        .map(|p| p.negatives.iter().map(|n| project(head, n)).collect())
        .collect();

    let dim_out = head.dim_out();
    let mut g_q = vec![vec![0.0; dim_out]; b];
    let mut g_p = vec![vec![0.0; dim_out]; b];
    let mut g_n: Vec<Vec<Vec<f64>>> = negatives.iter().map(|ns| vec![vec![0.0; dim_out]; ns.len()]).collect();

    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..b {
        // (is_positive_slot, batch index or negative index, logit)
        let mut cands: Vec<(Option<usize>, Option<usize>, f64)> = Vec::new();
        for j in 0..b {
            if j == i || batch[j].positive_key != batch[i].positive_key {
                cands.push((Some(j), None, dot(&queries[i].unit, &positives[j].unit) / tau));
            }
        }
        for (k, n) in negatives[i].iter().enumerate() {
            cands.push((None, Some(k), dot(&queries[i].unit, &n.unit) / tau));
        }
        if cands.len() < 2 {
            continue;
        }
        counted += 1;
        let logits: Vec<f64> = cands.iter().map(|c| c.2).collect();
        let lse = log_sum_exp(&logits);
        let pos_logit = dot(&queries[i].unit, &positives[i].unit) / tau;
        total += lse - pos_logit;

        for (slot, neg, logit) in &cands {
            let mut g = (logit - lse).exp();
            if *slot == Some(i) {
                g -= 1.0;
            }
            let g = g / tau;
            let target = match (slot, neg) {
                (Some(j), _) => &positives[*j].unit,
                (None, Some(k)) => &negatives[i][*k].unit,
                _ => unreachable!(),
            };
            for d in 0..dim_out {
                g_q[i][d] += g * target[d];
            }
            let sink = match (slot, neg) {
                (Some(j), _) => &mut g_p[*j],
                (None, Some(k)) => &mut g_n[i][*k],
                _ => unreachable!(),
            };
            for d in 0..dim_out {
                sink[d] += g * queries[i].unit[d];
            }
        }
    }
    if counted == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / counted as f64;
    for i in 0..b {
        g_q[i].iter_mut().for_each(|x| *x *= scale);
        g_p[i].iter_mut().for_each(|x| *x *= scale);
        backprop(&mut grad, dim_in, &queries[i], &g_q[i], &batch[i].query);
        backprop(&mut grad, dim_in, &positives[i], &g_p[i], &batch[i].positive);
        for (k, n) in negatives[i].iter().enumerate() {
            g_n[i][k].iter_mut().for_each(|x| *x *= scale);
            backprop(&mut grad, dim_in, n, &g_n[i][k], &batch[i].negatives[k]);
        }
    }
    (total * scale, grad)
}
