//! Vote model: one linear map from an episode's 120 features to a logit,
//! applied to both episodes and normalized with a two-way softmax.

use nalgebra::{DMatrix, DVector};

use super::features::{vote_features, views, VOTE_FEATURES};
use crate::error::{Error, Result};
use crate::game::{SessionRecord, NUM_PLAYERS};
use crate::nn::{Matrix, ParamSet};

pub(crate) const WEIGHT: &str = "vote.w";
pub(crate) const BIAS: &str = "vote.b";

/// All-zero vote model, which is indifferent between any two episodes.
pub fn init_vote_model() -> ParamSet {
    let mut p = ParamSet::new();
    p.insert(WEIGHT, Matrix::zeros(VOTE_FEATURES, 1));
    p.insert(BIAS, Matrix::zeros(1, 1));
    p
}

fn weights(params: &ParamSet) -> Result<(&[f64], f64)> {
    let w = params
        .get(WEIGHT)
        .filter(|m| m.shape() == (VOTE_FEATURES, 1))
        .ok_or_else(|| Error::shape("vote model", "expected `vote.w` of shape 120x1"))?;
    let b = params
        .get(BIAS)
        .filter(|m| m.shape() == (1, 1))
        .ok_or_else(|| Error::shape("vote model", "expected `vote.b` of shape 1x1"))?;
    Ok((w.data(), b.scalar_value()))
}

pub fn vote_logit(params: &ParamSet, features: &[f64]) -> Result<f64> {
    let (w, b) = weights(params)?;
    if features.len() != VOTE_FEATURES {
        return Err(Error::shape(
            "vote_logit",
            format!("{} features, expected {VOTE_FEATURES}", features.len()),
        ));
    }
    Ok(dot(w, features) + b)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(p_A, p_B)`: softmax of the two episode logits. The computation treats
/// its arguments symmetrically, so swapping them swaps the result exactly.
pub fn vote_forward(params: &ParamSet, a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let la = vote_logit(params, a)?;
    let lb = vote_logit(params, b)?;
    Ok(two_way_softmax(la, lb))
}

pub fn two_way_softmax(la: f64, lb: f64) -> (f64, f64) {
    let m = la.max(lb);
    let ea = (la - m).exp();
    let eb = (lb - m).exp();
    let total = ea + eb;
    (ea / total, eb / total)
}

/// Logistic function evaluated so that `σ(-z)` and `1 - σ(z)` are never
/// mixed up by rounding.
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// One training example: the feature difference `x_A − x_B` seen by a
/// participant and whether they preferred episode A.
#[derive(Debug, Clone)]
pub struct VoteExample {
    pub diff: Vec<f64>,
    pub prefers_a: bool,
}

/// Four examples per session, one per participant.
pub fn vote_examples(sessions: &[&SessionRecord]) -> Result<Vec<VoteExample>> {
    let mut out = Vec::with_capacity(sessions.len() * NUM_PLAYERS);
    for s in sessions {
        let a = views(&s.episode_a().rounds);
        let b = views(&s.episode_b().rounds);
        for i in 0..NUM_PLAYERS {
            let xa = vote_features(&a, i)?;
            let xb = vote_features(&b, i)?;
            out.push(VoteExample {
                diff: xa.iter().zip(&xb).map(|(p, q)| p - q).collect(),
                prefers_a: s.votes[i] == 1,
            });
        }
    }
    Ok(out)
}

/// Signed margin: positive when the model leans towards the recorded vote.
fn margin(w: &[f64], ex: &VoteExample) -> f64 {
    let z = dot(w, &ex.diff);
    if ex.prefers_a {
        z
    } else {
        -z
    }
}

fn objective(w: &[f64], examples: &[VoteExample], l2: f64) -> f64 {
    let n = examples.len() as f64;
    let ce: f64 = examples.iter().map(|ex| softplus(-margin(w, ex))).sum::<f64>() / n;
    ce + l2 * dot(w, w)
}

const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_TOLERANCE: f64 = 1e-12;

/// Minimizes mean vote cross-entropy plus `l2 · ‖W‖²` by damped Newton
/// iterations from zero. The bias cancels between the two episodes and
/// stays at zero.
pub fn train_vote_model(sessions: &[&SessionRecord], l2: f64) -> Result<ParamSet> {
    let examples = vote_examples(sessions)?;
    train_vote_on_examples(&examples, l2)
}

pub fn train_vote_on_examples(examples: &[VoteExample], l2: f64) -> Result<ParamSet> {
    if examples.is_empty() {
        return Err(Error::Empty("vote training data".into()));
    }
    if !(l2 > 0.0 && l2.is_finite()) {
        return Err(Error::Validation(format!(
            "vote l2 coefficient must be positive and finite, got {l2}"
        )));
    }
    let d = VOTE_FEATURES;
    let n = examples.len() as f64;
    let mut w = vec![0.0; d];
    let mut current = objective(&w, examples, l2);
    for _ in 0..NEWTON_MAX_ITERS {
        let mut grad = DVector::<f64>::zeros(d);
        let mut hess = DMatrix::<f64>::zeros(d, d);
        for ex in examples {
            let m = margin(&w, ex);
            // d/dz of softplus(-m), with m = ±z
            let residual = if ex.prefers_a { -logistic(-m) } else { logistic(-m) };
            let curvature = logistic(m) * logistic(-m);
            for (k, x) in ex.diff.iter().enumerate() {
                if *x == 0.0 {
                    continue;
                }
                grad[k] += residual * x;
                for (l, y) in ex.diff.iter().enumerate().take(k + 1) {
                    hess[(k, l)] += curvature * x * y;
                }
            }
        }
        for k in 0..d {
            grad[k] = grad[k] / n + 2.0 * l2 * w[k];
            for l in 0..=k {
                let v = hess[(k, l)] / n + if k == l { 2.0 * l2 } else { 0.0 };
                hess[(k, l)] = v;
                hess[(l, k)] = v;
            }
        }
        let chol = hess
            .cholesky()
            .ok_or_else(|| Error::Validation("vote Hessian is not positive definite".into()))?;
        let step = chol.solve(&grad);
        let decrement = grad.dot(&step);
        if !decrement.is_finite() {
            return Err(Error::NonFinite("vote model Newton step".into()));
        }
        if decrement < NEWTON_TOLERANCE {
            break;
        }
        let mut t = 1.0;
        loop {
            let candidate: Vec<f64> = w.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let value = objective(&candidate, examples, l2);
            if value <= current || t < 1e-10 {
                w = candidate;
                current = value;
                break;
            }
            t *= 0.5;
        }
    }
    let mut p = init_vote_model();
    p.insert(WEIGHT, Matrix::from_vec(d, 1, w)?);
    Ok(p)
}

/// Mean cross-entropy of recorded votes.
pub fn vote_cross_entropy(params: &ParamSet, sessions: &[&SessionRecord]) -> Result<f64> {
    let (w, _) = weights(params)?;
    let examples = vote_examples(sessions)?;
    if examples.is_empty() {
        return Err(Error::Empty("vote evaluation data".into()));
    }
    Ok(examples.iter().map(|ex| softplus(-margin(w, ex))).sum::<f64>() / examples.len() as f64)
}

/// Fraction of recorded votes on the side the model gives more than half
/// the probability. Exact indifference counts as a miss.
pub fn vote_accuracy(params: &ParamSet, sessions: &[&SessionRecord]) -> Result<f64> {
    let (w, _) = weights(params)?;
    let examples = vote_examples(sessions)?;
    if examples.is_empty() {
        return Err(Error::Empty("vote evaluation data".into()));
    }
    let hits = examples.iter().filter(|ex| margin(w, ex) > 0.0).count();
    Ok(hits as f64 / examples.len() as f64)
}
