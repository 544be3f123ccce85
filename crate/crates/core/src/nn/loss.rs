use crate::scalar::Scalar;

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` before taking logs.
pub const PROB_CLIP: f64 = 1e-7;

/// Mean binary cross-entropy `-mean(w*y*ln p + (1-y)*ln(1-p))` and its
/// gradient with respect to each `p`. Where clipping is active the
/// gradient is zero, matching the clipped loss.
pub fn bce_loss<T: Scalar>(p: &[T], y: &[T], positive_weight: f64) -> (T, Vec<T>) {
    assert_eq!(p.len(), y.len(), "prediction and label counts differ");
    let n = T::of(p.len() as f64);
    let lo = T::of(PROB_CLIP);
    let hi = T::one() - lo;
    let w = T::of(positive_weight);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(y) {
        let q = pi.max(lo).min(hi);
        loss -= w * yi * q.ln() + (T::one() - yi) * (T::one() - q).ln();
        let g = if pi < lo || pi > hi {
            T::zero()
        } else {
            (-w * yi / q + (T::one() - yi) / (T::one() - q)) / n
        };
        grad.push(g);
    }
    (loss / n, grad)
}
