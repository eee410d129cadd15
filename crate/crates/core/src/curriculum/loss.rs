//! Scalar loss functions and their derivatives, evaluated in f64.

use log::warn;

use crate::model::sigmoid;

/// Floor applied inside the literal (difference of sigmoids) mode.
pub const LITERAL_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseMode {
    /// `-ln σ(s⁺ - s⁻)`.
    #[default]
    Pairwise,
    /// `-ln clamp(σ(s⁺) - σ(s⁻), ε, 1)`.
    Literal,
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Loss and its derivatives with respect to the positive and negative score.
pub fn pairwise_loss(pos: f64, neg: f64, mode: PairwiseMode) -> (f64, f64, f64) {
    match mode {
        PairwiseMode::Pairwise => {
            let x = pos - neg;
            let s = sigmoid(-x);
            (softplus(-x), -s, s)
        }
        PairwiseMode::Literal => {
            let (a, b) = (sigmoid(pos), sigmoid(neg));
            let diff = a - b;
            if diff <= LITERAL_EPS {
                return (-LITERAL_EPS.ln(), 0.0, 0.0);
            }
            (-diff.ln(), -a * (1.0 - a) / diff, b * (1.0 - b) / diff)
        }
    }
}

/// Binary cross-entropy on a logit: loss and d/dlogit.
pub fn bce_logit(logit: f64, label: bool) -> (f64, f64) {
    let s = sigmoid(logit);
    if label {
        (softplus(-logit), s - 1.0)
    } else {
        (softplus(logit), s)
    }
}

/// Meta-path type prediction: summed binary cross-entropy over meta-paths.
pub fn loss_mtp(logits: &[f64], labels: &[bool]) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let grads = logits
        .iter()
        .zip(labels)
        .map(|(&x, &y)| {
            let (l, g) = bce_logit(x, y);
            total += l;
            g
        })
        .collect();
    (total, grads)
}

/// `-ln(score_pos) - ln(1 - score_neg)`.
pub fn loss_rec(score_pos: f64, score_neg: f64) -> f64 {
    -score_pos.ln() - (1.0 - score_neg).ln()
}

/// Recommendation loss on clamped logits, with derivatives. A clamped logit
/// has zero derivative.
pub fn loss_rec_logits(pos: (f64, bool), neg: (f64, bool)) -> (f64, f64, f64) {
    let (lp, gp) = bce_logit(pos.0, true);
    let (ln, gn) = bce_logit(neg.0, false);
    (lp + ln, if pos.1 { 0.0 } else { gp }, if neg.1 { 0.0 } else { gn })
}

/// InfoNCE over similarities, positive first. Returns the loss and
/// d/dsim for every entry.
pub fn info_nce(sims: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let loss = -(logits[0] - m) + z.ln();
    let grads = logits
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let p = (l - m).exp() / z;
            (p - if k == 0 { 1.0 } else { 0.0 }) / tau
        })
        .collect();
    (loss, grads)
}

/// Contrastive loss from representations.
pub fn loss_scl(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> f64 {
    let mut sims = vec![cosine_grad(anchor, positive).0];
    sims.extend(negatives.iter().map(|n| cosine_grad(anchor, n).0));
    info_nce(&sims, tau).0
}

/// Cosine similarity and its gradients with respect to both arguments. A
/// zero-norm side yields similarity 0 and zero gradients.
pub fn cosine_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        warn!("zero-norm representation in contrastive loss; cosine treated as 0");
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let sim = dot / (na * nb);
    let da = a.iter().zip(b).map(|(x, y)| y / (na * nb) - sim * x / (na * na)).collect();
    let db = a.iter().zip(b).map(|(x, y)| x / (na * nb) - sim * y / (nb * nb)).collect();
    (sim, da, db)
}
