use super::Scalar;

/// Lower clamp on the target probability inside the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Max-subtracted exponential normalization.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln(p_target)` with `p_target` clamped to `[1e-12, 1]`.
pub fn cross_entropy<T: Scalar>(probs: &[T], target: usize) -> f64 {
    -probs[target].f64().clamp(PROB_FLOOR, 1.0).ln()
}

/// Cross-entropy against an explicit one-hot vector.
pub fn cross_entropy_onehot<T: Scalar>(probs: &[T], onehot: &[T]) -> f64 {
    let target = onehot
        .iter()
        .position(|&v| v == T::one())
        .expect("one-hot target has a 1");
    cross_entropy(probs, target)
}

pub fn one_hot<T: Scalar>(target: usize, classes: usize) -> Vec<T> {
    (0..classes)
        .map(|c| if c == target { T::one() } else { T::zero() })
        .collect()
}

pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
