//! Two-neuron presentation attack detection head.
//!
//! Neuron 0 scores the attack class and neuron 1 the bona-fide class. The
//! softmax probability of neuron 1 is the scalar prediction used by the
//! binary cross-entropy loss and by every score-based metric; the hard
//! decision is the argmax over the two neurons.

use ndarray::{array, Array1, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::label::Label;
use crate::nn::{cast, sigmoid, trunc_normal, Linear, Real};

/// Clamp applied to probabilities before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights<T> {
    /// `2 × d` weights and 2 biases.
    pub linear: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<T> {
    pub logits: Array1<T>,
    /// Bona-fide probability.
    pub prob: T,
}

impl<T: Real> HeadWeights<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            linear: Linear::zeros(2, dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, std: f64, rng: &mut R) -> Self {
        let mut head = Self::zeros(dim);
        head.linear.weight = trunc_normal(rng, (2, dim), std);
        head
    }

    pub fn dim(&self) -> usize {
        self.linear.in_dim()
    }

    /// Accumulates weight gradients and returns the feature gradient.
    pub fn backward(&self, feature: ArrayView1<T>, dlogits: ArrayView1<T>, grads: &mut HeadWeights<T>) -> Array1<T> {
        for i in 0..2 {
            let mut row = grads.linear.weight.row_mut(i);
            row.scaled_add(dlogits[i], &feature);
            grads.linear.bias[i] += dlogits[i];
        }
        self.linear.weight.t().dot(&dlogits)
    }
}

/// Bona-fide probability of a logit pair, `softmax(logits)[1]`.
pub fn bonafide_probability<T: Real>(logits: ArrayView1<T>) -> T {
    sigmoid(logits[1] - logits[0])
}

pub fn head_forward<T: Real>(feature: ArrayView1<T>, head: &HeadWeights<T>) -> Result<HeadOutput<T>> {
    if feature.len() != head.dim() {
        return Err(Error::shape("head input", &[head.dim()], &[feature.len()]));
    }
    let logits = head.linear.weight.dot(&feature) + &head.linear.bias;
    let prob = bonafide_probability(logits.view());
    Ok(HeadOutput { logits, prob })
}

fn check_target<T: Real>(y: T) -> Result<()> {
    if y == T::zero() || y == T::one() {
        Ok(())
    } else {
        Err(Error::Domain(format!("BCE target must be 0 or 1, got {y}")))
    }
}

/// `-(y log p + (1 - y) log(1 - p))` with `p` clamped to `[ε, 1 - ε]`.
pub fn bce_loss<T: Real>(prob: T, y: T) -> Result<T> {
    check_target(y)?;
    let eps = cast::<T>(BCE_EPS);
    let p = prob.max(eps).min(T::one() - eps);
    Ok(-(y * p.ln() + (T::one() - y) * (T::one() - p).ln()))
}

/// Gradient of [`bce_loss`] with respect to the two logits.
pub fn bce_logit_grad<T: Real>(prob: T, y: T) -> Result<Array1<T>> {
    check_target(y)?;
    let eps = cast::<T>(BCE_EPS);
    if prob < eps || prob > T::one() - eps {
        // clamped region: the loss is locally constant
        return Ok(Array1::zeros(2));
    }
    // d/dp of the loss times dp/d(l1 - l0)
    let dp = -y / prob + (T::one() - y) / (T::one() - prob);
    let dz = dp * prob * (T::one() - prob);
    Ok(array![-dz, dz])
}

/// Mean BCE over paired probabilities and targets.
pub fn bce_mean<T: Real>(probs: &[T], targets: &[T]) -> Result<T> {
    if probs.is_empty() || probs.len() != targets.len() {
        return Err(Error::shape("bce batch", &[probs.len()], &[targets.len()]));
    }
    let total = probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| bce_loss(p, y))
        .sum::<Result<T>>()?;
    Ok(total / cast(probs.len() as f64))
}

/// Argmax over the two neurons; an exact tie resolves to attack.
pub fn predict<T: Real>(logits: ArrayView1<T>) -> Label {
    if logits[1] > logits[0] {
        Label::BonaFide
    } else {
        Label::Attack
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn probability_examples() {
        assert_eq!(bonafide_probability(array![0.0f64, 0.0].view()), 0.5);
        let p = bonafide_probability(array![0.0f64, 3.0f64.ln()].view());
        assert!((p - 0.75).abs() < 1e-12);
        let head = HeadWeights::<f64>::zeros(4);
        let out = head_forward(array![1.0, -2.0, 3.0, 9.0].view(), &head).unwrap();
        assert_eq!(out.prob, 0.5);
    }

    #[test]
    fn bce_examples() {
        assert!(bce_loss(1.0 - BCE_EPS, 1.0).unwrap() < 1e-6);
        assert!((bce_loss(0.5f64, 1.0).unwrap() - 0.693_147_2).abs() < 1e-6);
        assert!((bce_loss(0.5f64, 0.0).unwrap() - 0.693_147_2).abs() < 1e-6);
        assert!(bce_loss(0.0f64, 1.0).unwrap().is_finite());
        assert!(matches!(bce_loss(0.5f64, 0.5), Err(Error::Domain(_))));
        assert!((bce_mean(&[0.5f64, 0.5], &[0.0, 1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_is_monotone_on_grid() {
        let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        for w in grid.windows(2) {
            assert!(bce_loss(w[1], 1.0).unwrap() < bce_loss(w[0], 1.0).unwrap());
            assert!(bce_loss(w[1], 0.0).unwrap() > bce_loss(w[0], 0.0).unwrap());
        }
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict(array![1.0f64, 2.0].view()), Label::BonaFide);
        assert_eq!(predict(array![2.0f64, 1.0].view()), Label::Attack);
        assert_eq!(predict(array![1.0f64, 1.0].view()), Label::Attack);
    }

    #[test]
    fn logit_grad_matches_finite_difference() {
        for &(l0, l1, y) in &[(0.3, -0.2, 1.0), (1.5, 0.5, 0.0), (-2.0, 2.5, 1.0)] {
            let loss = |a: f64, b: f64| bce_loss(bonafide_probability(array![a, b].view()), y).unwrap();
            let g = bce_logit_grad(bonafide_probability(array![l0, l1].view()), y).unwrap();
            let h = 1e-6;
            let d0 = (loss(l0 + h, l1) - loss(l0 - h, l1)) / (2.0 * h);
            let d1 = (loss(l0, l1 + h) - loss(l0, l1 - h)) / (2.0 * h);
            assert!((g[0] - d0).abs() < 1e-8 && (g[1] - d1).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn swapped_logits_complement(a in -30.0f64..30.0, b in -30.0f64..30.0) {
            let p = bonafide_probability(array![a, b].view());
            let q = bonafide_probability(array![b, a].view());
            prop_assert!((p + q - 1.0).abs() < 1e-9);
        }

        #[test]
        fn argmax_agrees_with_probability(a in -30.0f64..30.0, b in -30.0f64..30.0) {
            prop_assume!(a != b);
            let p = bonafide_probability(array![a, b].view());
            prop_assert_eq!(predict(array![a, b].view()) == Label::BonaFide, p > 0.5);
        }
    }
}
