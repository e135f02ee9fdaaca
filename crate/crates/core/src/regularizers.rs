//! Sparsity-inducing mechanisms for the representation layer.
//!
//! The distributional regularizers treat each hidden unit's activation, across
//! inputs, as a random variable whose mean `beta_hat` is estimated on a
//! mini-batch, and penalize its KL divergence from a target distribution with
//! mean `beta`. The Set-KL variants measure the divergence to the closest
//! member of the set of targets that are at least as sparse as `beta`; for
//! one-parameter exponential families this is the plain KL clipped to zero
//! inside the set:
//!
//! ```text
//! SKL_exp(beta_hat; beta) = ln(beta_hat) + beta / beta_hat - ln(beta) - 1   if beta_hat > beta
//!                         = 0                                                otherwise
//! ```
//!
//! The remaining mechanisms (activation and weight norms, dropout, top-k and
//! winner-take-all truncation) are the usual competitors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{Activation, Gradients, MlpParams};
use crate::seed::SimRng;

/// Bernoulli means are clamped into `[EPS, 1 - EPS]` inside training so that
/// a unit masked to exactly zero does not produce an infinite penalty.
const BERNOULLI_EPS: f64 = 1e-6;

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be non-negative and finite, got {v}")))
    }
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// `KL(p_beta || p_beta_hat)` for exponential distributions with means
/// `beta` and `beta_hat`.
pub fn kl_exponential(beta_hat: f64, beta: f64) -> Result<f64> {
    check_positive("beta", beta)?;
    check_positive("beta_hat", beta_hat)?;
    // log(b^/b) + b/b^ - 1 written as x - log(1 + x) with x = b/b^ - 1,
    // which stays accurate and non-negative when b^ is close to b
    let x = beta / beta_hat - 1.0;
    Ok((x - x.ln_1p()).max(0.0))
}

/// Derivative of [`kl_exponential`] with respect to `beta_hat`.
pub fn kl_exponential_grad(beta_hat: f64, beta: f64) -> Result<f64> {
    check_positive("beta", beta)?;
    check_positive("beta_hat", beta_hat)?;
    Ok(1.0 / beta_hat - beta / (beta_hat * beta_hat))
}

/// Set-KL to the exponential distributions with mean at most `beta`.
///
/// A unit with `beta_hat = 0` (never active) is treated as the point mass at
/// zero, which already lies in the limit of the set, so it costs nothing.
pub fn skl_exponential(beta_hat: f64, beta: f64) -> Result<f64> {
    check_positive("beta", beta)?;
    check_non_negative("beta_hat", beta_hat)?;
    if beta_hat > beta {
        kl_exponential(beta_hat, beta)
    } else {
        Ok(0.0)
    }
}

/// Derivative of [`skl_exponential`]:
/// `(1 / beta_hat - beta / beta_hat^2) * 1[beta_hat > beta]`.
pub fn skl_exponential_grad(beta_hat: f64, beta: f64) -> Result<f64> {
    check_positive("beta", beta)?;
    check_non_negative("beta_hat", beta_hat)?;
    if beta_hat > beta {
        kl_exponential_grad(beta_hat, beta)
    } else {
        Ok(0.0)
    }
}

/// Set-KL to the exponential distributions whose mean lies in `[lo, hi]`.
///
/// Mean and natural parameter `-1/beta` are monotonically related, so the
/// interval is convex in the natural parameter and the divergence clips to
/// the nearer endpoint. `lo = 0` leaves the lower side open, which reduces
/// to [`skl_exponential`] with `beta = hi`.
pub fn skl_exponential_interval(beta_hat: f64, lo: f64, hi: f64) -> Result<f64> {
    check_non_negative("lo", lo)?;
    check_positive("hi", hi)?;
    check_non_negative("beta_hat", beta_hat)?;
    if lo > hi {
        return Err(Error::invalid(format!("empty interval [{lo}, {hi}]")));
    }
    if beta_hat > hi {
        kl_exponential(beta_hat, hi)
    } else if beta_hat < lo {
        if beta_hat == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl_exponential(beta_hat, lo)
    } else {
        Ok(0.0)
    }
}

/// `KL(Bern(beta) || Bern(beta_hat))`.
pub fn kl_bernoulli(beta_hat: f64, beta: f64) -> Result<f64> {
    check_open_unit("beta", beta)?;
    check_open_unit("beta_hat", beta_hat)?;
    Ok(beta * (beta / beta_hat).ln() + (1.0 - beta) * ((1.0 - beta) / (1.0 - beta_hat)).ln())
}

pub fn kl_bernoulli_grad(beta_hat: f64, beta: f64) -> Result<f64> {
    check_open_unit("beta", beta)?;
    check_open_unit("beta_hat", beta_hat)?;
    Ok(-beta / beta_hat + (1.0 - beta) / (1.0 - beta_hat))
}

/// Set-KL to the Bernoulli distributions with mean at most `beta`.
pub fn skl_bernoulli(beta_hat: f64, beta: f64) -> Result<f64> {
    check_open_unit("beta", beta)?;
    check_open_unit("beta_hat", beta_hat)?;
    if beta_hat > beta {
        kl_bernoulli(beta_hat, beta)
    } else {
        Ok(0.0)
    }
}

pub fn skl_bernoulli_grad(beta_hat: f64, beta: f64) -> Result<f64> {
    check_open_unit("beta", beta)?;
    check_open_unit("beta_hat", beta_hat)?;
    if beta_hat > beta {
        kl_bernoulli_grad(beta_hat, beta)
    } else {
        Ok(0.0)
    }
}

/// Which divergence a distributional regularizer uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Divergence {
    SklExponential,
    KlExponential,
    SklBernoulli,
    KlBernoulli,
}

impl Divergence {
    /// Summed penalty over units and its derivative per unit, as used inside
    /// training. Dead units (`beta_hat = 0`) contribute nothing to the
    /// exponential KL, whose value is unbounded there while its gradient path
    /// through a dead ReLU unit is zero anyway.
    pub fn penalty(self, beta_hats: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(beta_hats.len());
        for &b in beta_hats {
            let (v, g) = match self {
                Divergence::SklExponential => (skl_exponential(b, beta)?, skl_exponential_grad(b, beta)?),
                Divergence::KlExponential if b == 0.0 => (0.0, 0.0),
                Divergence::KlExponential => (kl_exponential(b, beta)?, kl_exponential_grad(b, beta)?),
                Divergence::SklBernoulli => {
                    let b = b.clamp(BERNOULLI_EPS, 1.0 - BERNOULLI_EPS);
                    (skl_bernoulli(b, beta)?, skl_bernoulli_grad(b, beta)?)
                }
                Divergence::KlBernoulli => {
                    let b = b.clamp(BERNOULLI_EPS, 1.0 - BERNOULLI_EPS);
                    (kl_bernoulli(b, beta)?, kl_bernoulli_grad(b, beta)?)
                }
            };
            total += v;
            grads.push(g);
        }
        Ok((total, grads))
    }
}

/// Per-unit mean activation over a mini-batch.
pub fn node_means(batch: &Matrix) -> Vec<f64> {
    batch.column_means()
}

/// 0/1 indicator of the `k` largest entries; ties go to the lower index.
pub fn topk_indicator(acts: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > acts.len() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", acts.len())));
    }
    let mut keep = vec![0.0; acts.len()];
    if k == acts.len() {
        keep.fill(1.0);
        return Ok(keep);
    }
    let mut order: Vec<usize> = (0..acts.len()).collect();
    // stable sort keeps ascending index order among equal values
    order.sort_by(|&a, &b| acts[b].total_cmp(&acts[a]));
    for &i in &order[..k] {
        keep[i] = 1.0;
    }
    Ok(keep)
}

/// Keeps the `k` largest activations of one instance, zeroing the rest.
pub fn ksparse_mask(acts: &[f64], k: usize) -> Result<Vec<f64>> {
    let keep = topk_indicator(acts, k)?;
    Ok(acts.iter().zip(&keep).map(|(a, m)| a * m).collect())
}

/// Number of winners per column: `ceil(k_percent / 100 * m)`, at least one.
pub fn wta_count(k_percent: f64, m: usize) -> usize {
    let x = k_percent / 100.0 * m as f64;
    // guard against 12.5% * 8 landing at 1.0000000000000002
    ((x - 1e-9).ceil() as usize).clamp(1, m.max(1))
}

/// 0/1 indicator keeping, in every column (unit), the `ceil(k% * m)` largest
/// activations across the `m` instances; ties go to the lower row.
pub fn wta_indicator(batch: &Matrix, k_percent: f64) -> Result<Matrix> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::invalid(format!("k_percent {k_percent} outside (0, 100]")));
    }
    let m = batch.rows();
    let keep_n = wta_count(k_percent, m);
    let mut mask = Matrix::zeros(m, batch.cols());
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for c in 0..batch.cols() {
        order.clear();
        order.extend(0..m);
        order.sort_by(|&a, &b| batch.get(b, c).total_cmp(&batch.get(a, c)));
        for &r in &order[..keep_n.min(m)] {
            mask.set(r, c, 1.0);
        }
    }
    Ok(mask)
}

/// Winner-take-all truncation of a batch of activations.
pub fn wta_mask(batch: &Matrix, k_percent: f64) -> Result<Matrix> {
    let mut out = batch.clone();
    out.hadamard_inplace(&wta_indicator(batch, k_percent)?)?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    L2,
}

/// Batch mean of `sum_j |phi_j|` (L1) or `sum_j phi_j^2` (L2), and its
/// gradient with respect to each activation.
pub fn activation_penalty(batch: &Matrix, norm: Norm) -> (f64, Matrix) {
    let m = batch.rows().max(1) as f64;
    let mut grad = batch.clone();
    let total: f64 = match norm {
        Norm::L1 => {
            grad.map_inplace(|v| {
                if v > 0.0 {
                    1.0 / m
                } else if v < 0.0 {
                    -1.0 / m
                } else {
                    0.0
                }
            });
            batch.as_slice().iter().map(|v| v.abs()).sum()
        }
        Norm::L2 => {
            grad.map_inplace(|v| 2.0 * v / m);
            batch.as_slice().iter().map(|v| v * v).sum()
        }
    };
    (total / m, grad)
}

/// Norm penalty over every weight matrix and the value head (biases are not
/// penalized), with its gradient.
pub fn weight_penalty(params: &MlpParams, norm: Norm) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(params);
    let mut total = 0.0;
    let visit = |w: &[f64], g: &mut [f64], total: &mut f64| {
        for (&v, gv) in w.iter().zip(g.iter_mut()) {
            match norm {
                Norm::L1 => {
                    *total += v.abs();
                    *gv = if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
                Norm::L2 => {
                    *total += v * v;
                    *gv = 2.0 * v;
                }
            }
        }
    };
    for (l, g) in params.layers.iter().zip(grads.layers.iter_mut()) {
        visit(l.weights.as_slice(), g.weights.as_mut_slice(), &mut total);
    }
    visit(&params.value_head, &mut grads.value_head, &mut total);
    (total, grads)
}

/// Inverted dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 - p)`.
pub fn dropout_mask(width: usize, p: f64, rng: &mut SimRng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..width)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect())
}

/// Choice of sparsity mechanism and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizerSpec {
    None,
    SklExp {
        beta: f64,
        lambda: f64,
    },
    KlExp {
        beta: f64,
        lambda: f64,
    },
    SklBern {
        beta: f64,
        lambda: f64,
    },
    KlBern {
        beta: f64,
        lambda: f64,
    },
    L1Weights {
        lambda: f64,
    },
    L2Weights {
        lambda: f64,
    },
    L1Acts {
        lambda: f64,
    },
    L2Acts {
        lambda: f64,
    },
    Dropout {
        p: f64,
    },
    /// Top-k truncation, optionally followed by an exponential Set-KL on the
    /// truncated activations when `beta` and `lambda` are both given.
    Ksparse {
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
    },
    Wta {
        k_percent: f64,
    },
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec::None
    }
}

impl RegularizerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            RegularizerSpec::None => "none",
            RegularizerSpec::SklExp { .. } => "skl_exp",
            RegularizerSpec::KlExp { .. } => "kl_exp",
            RegularizerSpec::SklBern { .. } => "skl_bern",
            RegularizerSpec::KlBern { .. } => "kl_bern",
            RegularizerSpec::L1Weights { .. } => "l1_weights",
            RegularizerSpec::L2Weights { .. } => "l2_weights",
            RegularizerSpec::L1Acts { .. } => "l1_acts",
            RegularizerSpec::L2Acts { .. } => "l2_acts",
            RegularizerSpec::Dropout { .. } => "dropout",
            RegularizerSpec::Ksparse { .. } => "ksparse",
            RegularizerSpec::Wta { .. } => "wta",
        }
    }

    /// The distributional part of the regularizer, if any.
    pub fn divergence(&self) -> Option<(Divergence, f64, f64)> {
        match *self {
            RegularizerSpec::SklExp { beta, lambda } => Some((Divergence::SklExponential, beta, lambda)),
            RegularizerSpec::KlExp { beta, lambda } => Some((Divergence::KlExponential, beta, lambda)),
            RegularizerSpec::SklBern { beta, lambda } => Some((Divergence::SklBernoulli, beta, lambda)),
            RegularizerSpec::KlBern { beta, lambda } => Some((Divergence::KlBernoulli, beta, lambda)),
            RegularizerSpec::Ksparse {
                beta: Some(beta),
                lambda: Some(lambda),
                ..
            } => Some((Divergence::SklExponential, beta, lambda)),
            _ => None,
        }
    }

    /// Whether the mechanism targets activation sparsity (as opposed to
    /// generic regularization or none).
    pub fn targets_sparsity(&self) -> bool {
        !matches!(
            self,
            RegularizerSpec::None
                | RegularizerSpec::L1Weights { .. }
                | RegularizerSpec::L2Weights { .. }
                | RegularizerSpec::Dropout { .. }
        )
    }

    pub fn validate(&self, width: usize, activation: Activation) -> Result<()> {
        match *self {
            RegularizerSpec::None => Ok(()),
            RegularizerSpec::SklExp { beta, lambda } | RegularizerSpec::KlExp { beta, lambda } => {
                check_positive("beta", beta)?;
                check_non_negative("lambda", lambda)
            }
            RegularizerSpec::SklBern { beta, lambda } | RegularizerSpec::KlBern { beta, lambda } => {
                check_open_unit("beta", beta)?;
                check_non_negative("lambda", lambda)?;
                if activation != Activation::Sigmoid {
                    return Err(Error::invalid("Bernoulli targets need sigmoid activations"));
                }
                Ok(())
            }
            RegularizerSpec::L1Weights { lambda }
            | RegularizerSpec::L2Weights { lambda }
            | RegularizerSpec::L1Acts { lambda }
            | RegularizerSpec::L2Acts { lambda } => check_non_negative("lambda", lambda),
            RegularizerSpec::Dropout { p } => {
                if (0.0..1.0).contains(&p) {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")))
                }
            }
            RegularizerSpec::Ksparse { k, beta, lambda } => {
                if k == 0 || k > width {
                    return Err(Error::invalid(format!("k = {k} outside 1..={width}")));
                }
                match (beta, lambda) {
                    (None, None) => Ok(()),
                    (Some(b), Some(l)) => {
                        check_positive("beta", b)?;
                        check_non_negative("lambda", l)
                    }
                    _ => Err(Error::invalid("k-sparse Set-KL needs both beta and lambda")),
                }
            }
            RegularizerSpec::Wta { k_percent } => {
                if k_percent > 0.0 && k_percent <= 100.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("k_percent {k_percent} outside (0, 100]")))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;

    /// Adaptive Simpson quadrature of `KL(p_beta || p_beta_hat)` for
    /// exponential densities, integrated over `[0, 60 beta]`.
    fn kl_exponential_quadrature(beta_hat: f64, beta: f64) -> f64 {
        let f = |y: f64| {
            let p = (-y / beta).exp() / beta;
            let log_ratio = (beta_hat / beta).ln() - y / beta + y / beta_hat;
            p * log_ratio
        };
        adaptive_simpson(&f, 0.0, 60.0 * beta, 1e-10, 24)
    }

    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
            let m = 0.5 * (a + b);
            let fm = f(m);
            (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
        }
        #[allow(clippy::too_many_arguments)]
        fn recurse(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            fa: f64,
            b: f64,
            fb: f64,
            m: f64,
            fm: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let (lm, flm, left) = simpson(f, a, fa, m, fm);
            let (rm, frm, right) = simpson(f, m, fm, b, fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                return left + right + delta / 15.0;
            }
            recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
        }
        let (fa, fb) = (f(a), f(b));
        let (m, fm, whole) = simpson(f, a, fa, b, fb);
        recurse(f, a, fa, b, fb, m, fm, whole, tol, depth)
    }

    #[test]
    fn skl_exponential_examples() {
        assert_eq!(skl_exponential(0.05, 0.1).unwrap(), 0.0);
        assert_eq!(skl_exponential(0.1, 0.1).unwrap(), 0.0);
        let v = skl_exponential(0.2, 0.1).unwrap();
        assert!((v - (2f64.ln() - 0.5)).abs() < 1e-15);
        assert!((v - 0.193147).abs() < 1e-6);
        assert!((v - kl_exponential_quadrature(0.2, 0.1)).abs() < 1e-8);
        assert_eq!(skl_exponential(0.0, 0.1).unwrap(), 0.0);
        assert!(skl_exponential(0.2, 0.0).is_err());
        assert!(skl_exponential(0.2, -1.0).is_err());
    }

    #[test]
    fn skl_exponential_grad_examples() {
        assert!((skl_exponential_grad(0.2, 0.1).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(skl_exponential_grad(0.05, 0.1).unwrap(), 0.0);
        assert_eq!(skl_exponential_grad(0.1, 0.1).unwrap(), 0.0);
        // formula itself vanishes at the boundary, so the penalty is C^1 there
        assert!(kl_exponential_grad(0.1, 0.1).unwrap().abs() < 1e-12);
        let h = 1e-6;
        let fd = (skl_exponential(0.2 + h, 0.1).unwrap() - skl_exponential(0.2 - h, 0.1).unwrap()) / (2.0 * h);
        assert!((fd - 2.5).abs() < 1e-6);
    }

    #[test]
    fn kl_exponential_examples() {
        assert_eq!(kl_exponential(0.1, 0.1).unwrap(), 0.0);
        let v = kl_exponential(0.05, 0.1).unwrap();
        assert!((v - (0.5f64.ln() + 1.0)).abs() < 1e-15);
        assert!((v - 0.306853).abs() < 1e-6);
        assert!((v - kl_exponential_quadrature(0.05, 0.1)).abs() < 1e-8);
        assert!(kl_exponential(0.0, 0.1).is_err());
        assert!(kl_exponential(0.1, 0.0).is_err());
    }

    #[test]
    fn bernoulli_examples() {
        assert_eq!(kl_bernoulli(0.1, 0.1).unwrap(), 0.0);
        let v = kl_bernoulli(0.5, 0.1).unwrap();
        assert!((v - (0.1 * 0.2f64.ln() + 0.9 * 1.8f64.ln())).abs() < 1e-15);
        assert!((v - 0.368064).abs() < 1e-6);
        assert_eq!(skl_bernoulli(0.05, 0.1).unwrap(), 0.0);
        assert_eq!(skl_bernoulli(0.5, 0.1).unwrap(), v);
        for bad in [0.0, 1.0, -0.1, 1.5] {
            assert!(kl_bernoulli(bad, 0.1).is_err());
            assert!(kl_bernoulli(0.1, bad).is_err());
        }
        let h = 1e-6;
        let fd = (kl_bernoulli(0.3 + h, 0.1).unwrap() - kl_bernoulli(0.3 - h, 0.1).unwrap()) / (2.0 * h);
        assert!((fd - kl_bernoulli_grad(0.3, 0.1).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn interval_set_kl_clips_to_nearest_endpoint() {
        let (lo, hi) = (0.05, 0.2);
        assert_eq!(skl_exponential_interval(0.1, lo, hi).unwrap(), 0.0);
        assert_eq!(skl_exponential_interval(0.3, lo, hi).unwrap(), kl_exponential(0.3, hi).unwrap());
        assert_eq!(skl_exponential_interval(0.01, lo, hi).unwrap(), kl_exponential(0.01, lo).unwrap());
        for b in [0.0, 0.05, 0.1, 0.15, 0.3] {
            assert_eq!(skl_exponential_interval(b, 0.0, 0.1).unwrap(), skl_exponential(b, 0.1).unwrap());
        }
        assert!(skl_exponential_interval(0.1, 0.3, 0.2).is_err());
    }

    proptest! {
        #[test]
        fn set_kl_is_clipped_kl(beta_hat in 0.01f64..5.0, beta in 0.01f64..5.0) {
            let skl = skl_exponential(beta_hat, beta).unwrap();
            prop_assert!(skl >= 0.0);
            if beta_hat > beta {
                prop_assert_eq!(skl, kl_exponential(beta_hat, beta).unwrap());
            } else {
                prop_assert_eq!(skl, 0.0);
            }
            let bern_hat = beta_hat / 5.01;
            let bern = beta / 5.01;
            prop_assert!(skl_bernoulli(bern_hat, bern).unwrap() >= 0.0);
            prop_assert!(kl_bernoulli(bern_hat, bern).unwrap() >= -1e-15);
        }

        #[test]
        fn kl_matches_quadrature(beta_hat in 0.05f64..2.0, beta in 0.05f64..2.0) {
            let closed = kl_exponential(beta_hat, beta).unwrap();
            prop_assert!(closed >= -1e-15);
            prop_assert!((closed - kl_exponential_quadrature(beta_hat, beta)).abs() < 1e-6);
        }

        #[test]
        fn ksparse_keeps_exactly_k(v in prop::collection::vec(-5.0f64..5.0, 1..40), k_frac in 0.0f64..1.0) {
            let k = 1 + ((v.len() - 1) as f64 * k_frac) as usize;
            let out = ksparse_mask(&v, k).unwrap();
            let ind = topk_indicator(&v, k).unwrap();
            prop_assert_eq!(ind.iter().filter(|&&x| x == 1.0).count(), k);
            let min_kept = v.iter().zip(&ind).filter(|(_, &m)| m == 1.0).map(|(x, _)| *x).fold(f64::INFINITY, f64::min);
            let max_dropped = v.iter().zip(&ind).filter(|(_, &m)| m == 0.0).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_kept >= max_dropped);
            for ((o, x), m) in out.iter().zip(&v).zip(&ind) {
                prop_assert_eq!(*o, x * m);
            }
        }
    }

    #[test]
    fn set_kl_midpoint_convex_in_natural_parameter() {
        // natural parameter eta = -1 / beta_hat
        let beta = 0.1;
        let f = |eta: f64| skl_exponential(-1.0 / eta, beta).unwrap();
        let etas: Vec<f64> = (1..400).map(|i| -100.0 + i as f64 * 0.24).collect();
        for w in etas.windows(3) {
            let mid = f(0.5 * (w[0] + w[2]));
            assert!(mid <= 0.5 * (f(w[0]) + f(w[2])) + 1e-12);
        }
    }

    #[test]
    fn ksparse_examples() {
        assert_eq!(ksparse_mask(&[2.0, 0.5, 3.0, 1.0], 2).unwrap(), vec![2.0, 0.0, 3.0, 0.0]);
        assert_eq!(ksparse_mask(&[1.0, 1.0, 1.0], 2).unwrap(), vec![1.0, 1.0, 0.0]);
        let v = [0.3, -1.0, 2.0];
        assert_eq!(ksparse_mask(&v, 3).unwrap(), v.to_vec());
        assert!(ksparse_mask(&v, 0).is_err());
        assert!(ksparse_mask(&v, 4).is_err());
    }

    #[test]
    fn wta_examples() {
        let col = Matrix::from_rows(&[[4.0], [1.0], [3.0], [2.0]]).unwrap();
        assert_eq!(wta_mask(&col, 25.0).unwrap().column(0), vec![4.0, 0.0, 0.0, 0.0]);
        let b = Matrix::from_rows(&[[4.0, 0.1], [1.0, 0.7], [3.0, 0.2]]).unwrap();
        assert_eq!(wta_mask(&b, 100.0).unwrap(), b);
        assert!(wta_mask(&b, 0.0).is_err());
        assert!(wta_mask(&b, 101.0).is_err());
        assert_eq!(wta_count(6.25, 64), 4);
        assert_eq!(wta_count(12.5, 8), 1);
        assert_eq!(wta_count(25.0, 5), 2);
    }

    #[test]
    fn activation_penalty_examples() {
        let zeros = Matrix::zeros(3, 4);
        let (v, g) = activation_penalty(&zeros, Norm::L1);
        assert_eq!(v, 0.0);
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
        let one = Matrix::from_rows(&[[1.0, -2.0]]).unwrap();
        assert_eq!(activation_penalty(&one, Norm::L2).0, 5.0);
        assert_eq!(activation_penalty(&one, Norm::L1).0, 3.0);
    }

    #[test]
    fn activation_penalty_gradients_match_finite_differences() {
        let batch = Matrix::from_rows(&[[0.3, -1.2, 2.0], [0.7, 0.4, -0.9]]).unwrap();
        for norm in [Norm::L1, Norm::L2] {
            let (_, g) = activation_penalty(&batch, norm);
            let h = 1e-6;
            for i in 0..batch.as_slice().len() {
                let mut up = batch.clone();
                up.as_mut_slice()[i] += h;
                let mut down = batch.clone();
                down.as_mut_slice()[i] -= h;
                let fd = (activation_penalty(&up, norm).0 - activation_penalty(&down, norm).0) / (2.0 * h);
                let a = g.as_slice()[i];
                assert!((a - fd).abs() / a.abs().max(1e-8) < 1e-4, "{norm:?} {i}");
            }
        }
    }

    #[test]
    fn dropout_mask_properties() {
        let mut rng = rng_from_seed(4);
        assert!(dropout_mask(16, 0.0, &mut rng).unwrap().iter().all(|&v| v == 1.0));
        let m = dropout_mask(100_000, 0.3, &mut rng).unwrap();
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(m.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-15));
        assert_eq!(
            dropout_mask(32, 0.5, &mut rng_from_seed(1)).unwrap(),
            dropout_mask(32, 0.5, &mut rng_from_seed(1)).unwrap()
        );
        assert!(dropout_mask(4, 1.0, &mut rng).is_err());
    }

    #[test]
    fn divergence_penalty_handles_dead_units() {
        let (v, g) = Divergence::KlExponential.penalty(&[0.0, 0.1, 0.2], 0.1).unwrap();
        assert!((v - kl_exponential(0.2, 0.1).unwrap()).abs() < 1e-15);
        assert_eq!(g[0], 0.0);
        let (v, _) = Divergence::SklExponential.penalty(&[0.0, 0.05], 0.1).unwrap();
        assert_eq!(v, 0.0);
        let (v, _) = Divergence::KlBernoulli.penalty(&[0.0, 0.5], 0.1).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn spec_validation_and_serde() {
        assert_eq!(RegularizerSpec::SklExp { beta: 0.1, lambda: 0.01 }.name(), "skl_exp");
        assert!(RegularizerSpec::SklBern { beta: 0.1, lambda: 0.01 }
            .validate(256, Activation::Relu)
            .is_err());
        assert!(RegularizerSpec::Ksparse { k: 300, beta: None, lambda: None }
            .validate(256, Activation::Relu)
            .is_err());
        assert!(RegularizerSpec::Ksparse { k: 16, beta: Some(0.1), lambda: None }
            .validate(256, Activation::Relu)
            .is_err());
        assert!(RegularizerSpec::SklExp { beta: 0.0, lambda: 0.01 }
            .validate(256, Activation::Relu)
            .is_err());
        assert!(RegularizerSpec::Wta { k_percent: 6.25 }.validate(256, Activation::Relu).is_ok());
    }
}
