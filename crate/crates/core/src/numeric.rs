//! Numeric kernels: tempered softmax, entropy, divergences and the analytic
//! derivative of softmax entropy with respect to temperature.
//!
//! All functions are pure and work in natural-log units (nats).

use crate::error::{Error, Result};
use crate::tensor::ProbVector;

/// Floor applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// `sign` with `sign(0) == 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 logits, got {}", logits.len())));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("temperature must be positive and finite, got {tau}")));
    }
    Ok(())
}

/// Shifted scaled logits `u_j = z_j/tau - max_k z_k/tau` and `log Σ exp(u_j)`.
fn shifted(logits: &[f64], tau: f64) -> (Vec<f64>, f64) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z / tau));
    let u: Vec<f64> = logits.iter().map(|&z| z / tau - max).collect();
    let lse = u.iter().map(|v| v.exp()).sum::<f64>().ln();
    (u, lse)
}

/// `log softmax(z / tau)`, computed with max subtraction.
pub fn log_softmax_tempered(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_logits(logits)?;
    check_tau(tau)?;
    let (u, lse) = shifted(logits, tau);
    Ok(u.into_iter().map(|v| v - lse).collect())
}

/// `p_k = exp(z_k/tau) / Σ_j exp(z_j/tau)`.
pub fn tempered_softmax(logits: &[f64], tau: f64) -> Result<ProbVector> {
    check_logits(logits)?;
    check_tau(tau)?;
    let (u, _) = shifted(logits, tau);
    let e: Vec<f64> = u.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(ProbVector::from_normalized(e.into_iter().map(|v| v / s).collect()))
}

/// Shannon entropy `-Σ p log p` with `0 log 0 = 0`.
pub fn entropy(p: &ProbVector) -> f64 {
    let h: f64 = p
        .probs()
        .iter()
        .filter(|&&pk| pk > 0.0)
        .map(|&pk| -pk * pk.max(PROB_FLOOR).ln())
        .sum();
    h.max(0.0)
}

/// `KL(target || approx) = Σ target_k (log target_k - log approx_k)`.
///
/// `approx` entries are floored at [`PROB_FLOOR`]; zero-mass target entries
/// contribute nothing.
pub fn kl_divergence(target: &ProbVector, approx: &ProbVector) -> Result<f64> {
    if target.classes() != approx.classes() {
        return Err(Error::Shape { expected: vec![target.classes()], got: vec![approx.classes()] });
    }
    let kl: f64 = target
        .probs()
        .iter()
        .zip(approx.probs())
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &a)| t * (t.max(PROB_FLOOR).ln() - a.max(PROB_FLOOR).ln()))
        .sum();
    Ok(kl.max(0.0))
}

/// `-log softmax(z)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, classes: logits.len() });
    }
    let ls = log_softmax_tempered(logits, 1.0)?;
    Ok(-ls[label])
}

/// Gradient of [`cross_entropy`] with respect to the logits: `softmax(z) - onehot(label)`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, classes: logits.len() });
    }
    let mut g = tempered_softmax(logits, 1.0)?.into_vec();
    g[label] -= 1.0;
    Ok(g)
}

/// Carlini-Wagner style margin `max_{k != y} z_k - z_y` and the index of the
/// runner-up class (lowest index on ties).
pub fn margin(logits: &[f64], label: usize) -> Result<(f64, usize)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, classes: logits.len() });
    }
    check_logits(logits)?;
    let mut best = usize::MAX;
    for (k, &z) in logits.iter().enumerate() {
        if k != label && (best == usize::MAX || z > logits[best]) {
            best = k;
        }
    }
    Ok((logits[best] - logits[label], best))
}

/// Entropy of `softmax(z / tau)`, evaluated in shifted log space.
pub fn tempered_entropy(logits: &[f64], tau: f64) -> Result<f64> {
    check_logits(logits)?;
    check_tau(tau)?;
    let (u, lse) = shifted(logits, tau);
    // H = lse - Σ p_j u_j
    let mean_u: f64 = u.iter().map(|&v| (v - lse).exp() * v).sum();
    Ok((lse - mean_u).max(0.0))
}

/// Analytic `∂H(softmax(z/τ))/∂τ`.
///
/// With `q_j = exp(z_j/τ)` the derivative is
/// `[(Σq)(Σ q log²q) - (Σ q log q)²] / (τ (Σq)²)`, i.e. the variance of
/// `log q` under `p = softmax(z/τ)` divided by `τ`. The variance is invariant
/// to shifting `log q`, so it is evaluated on max-shifted values with a
/// two-pass mean/variance, which is nonnegative by construction.
pub fn entropy_temp_gradient(logits: &[f64], tau: f64) -> Result<f64> {
    check_logits(logits)?;
    check_tau(tau)?;
    let (u, lse) = shifted(logits, tau);
    let p: Vec<f64> = u.iter().map(|&v| (v - lse).exp()).collect();
    let mean: f64 = p.iter().zip(&u).map(|(pj, uj)| pj * uj).sum();
    let var: f64 = p.iter().zip(&u).map(|(pj, uj)| pj * (uj - mean) * (uj - mean)).sum();
    let g = var / tau;
    if !g.is_finite() {
        return Err(Error::Numeric(format!("entropy temperature gradient overflowed at tau {tau}")));
    }
    Ok(g)
}

/// Finite-difference helpers used to verify analytic gradients.
pub mod finite_diff {
    /// Central difference `(f(x+h) - f(x-h)) / 2h`.
    pub fn central(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    /// Central-difference gradient of `f` at `x`, perturbing one coordinate at a time.
    pub fn gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = probe[i];
                probe[i] = orig + h;
                let plus = f(&probe);
                probe[i] = orig - h;
                let minus = f(&probe);
                probe[i] = orig;
                (plus - minus) / (2.0 * h)
            })
            .collect()
    }

    /// `|a - b| / max(|a|, |b|)`, zero when both are zero.
    pub fn relative_error(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale == 0.0 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    }

    /// `‖a - b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both are zero.
    pub fn relative_error_norm(a: &[f64], b: &[f64]) -> f64 {
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
        let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }
}

#[cfg(test)]
mod tests {
    use super::finite_diff::{central, gradient, relative_error};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        for tau in [0.5, 1.0, 7.0] {
            let p = tempered_softmax(&[3.0; 5], tau).unwrap();
            assert!(p.probs().iter().all(|&v| approx(v, 0.2, 1e-15)));
        }
    }

    #[test]
    fn softmax_hand_value() {
        let p = tempered_softmax(&[0.0, 4f64.ln()], 1.0).unwrap();
        assert!(approx(p.probs()[0], 0.2, 1e-15));
        assert!(approx(p.probs()[1], 0.8, 1e-15));
        let hot = tempered_softmax(&[0.0, 4f64.ln()], 10.0).unwrap();
        assert!((hot.probs()[1] - 0.5).abs() < (0.8 - 0.5));
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(tempered_softmax(&[0.0, 1.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(tempered_softmax(&[0.0, 1.0], -2.0), Err(Error::Domain(_))));
        assert!(matches!(tempered_softmax(&[0.0, f64::NAN], 1.0), Err(Error::InvalidInput(_))));
        assert!(tempered_softmax(&[0.0], 1.0).is_err());
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = tempered_softmax(&[1000.0, 999.0, -1000.0], 1.0).unwrap();
        assert!(p.probs().iter().all(|v| v.is_finite()));
        let g = entropy_temp_gradient(&[1e4, -1e4, 3.0], 1.0).unwrap();
        assert!(g.is_finite() && g >= 0.0);
    }

    #[test]
    fn entropy_known_values() {
        assert!(approx(entropy(&ProbVector::uniform(10)), 10f64.ln(), 1e-12));
        assert_eq!(entropy(&ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap()), 0.0);
        // term-by-term oracle
        let oracle = -(0.2f64 * 0.2f64.ln() + 0.8 * 0.8f64.ln());
        let h = entropy(&ProbVector::new(vec![0.2, 0.8]).unwrap());
        assert!(approx(h, oracle, 1e-15));
        assert!(approx(h, 0.500_402_423_538_188_4, 1e-15));
    }

    #[test]
    fn tempered_entropy_agrees_with_entropy_of_softmax() {
        let z = [0.3, -1.2, 2.5, 0.0];
        for tau in [1.0, 2.5, 9.0] {
            let a = tempered_entropy(&z, tau).unwrap();
            let b = entropy(&tempered_softmax(&z, tau).unwrap());
            assert!(approx(a, b, 1e-14), "{a} vs {b}");
        }
    }

    #[test]
    fn kl_values() {
        let p = ProbVector::new(vec![0.1, 0.6, 0.3]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let u = ProbVector::uniform(2);
        let q = ProbVector::new(vec![0.2, 0.8]).unwrap();
        let oracle = 0.5 * (0.5f64.ln() - 0.2f64.ln()) + 0.5 * (0.5f64.ln() - 0.8f64.ln());
        assert!(approx(kl_divergence(&u, &q).unwrap(), oracle, 1e-15));
        assert!(approx(oracle, 0.223_143_551_314_209_76, 1e-15));
        assert!(kl_divergence(&u, &ProbVector::uniform(3)).is_err());
    }

    #[test]
    fn kl_handles_zero_mass() {
        let onehot = ProbVector::new(vec![1.0, 0.0]).unwrap();
        let other = ProbVector::new(vec![0.0, 1.0]).unwrap();
        let v = kl_divergence(&onehot, &other).unwrap();
        assert!(v.is_finite());
        assert!(approx(v, -PROB_FLOOR.ln(), 1e-9));
    }

    #[test]
    fn kl_nonnegative_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let c = rng.random_range(2..8);
            let a: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
            let b: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
            let p = tempered_softmax(&a, 1.0).unwrap();
            let q = tempered_softmax(&b, 1.0).unwrap();
            assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn cross_entropy_values_and_gradient() {
        assert!(approx(cross_entropy(&[2.0; 4], 3).unwrap(), 4f64.ln(), 1e-15));
        assert!(approx(cross_entropy(&[0.0, 4f64.ln()], 1).unwrap(), -(0.8f64.ln()), 1e-15));
        assert!(approx(-(0.8f64.ln()), 0.22314, 1e-5));
        assert!(matches!(cross_entropy(&[0.0, 1.0], 2), Err(Error::LabelOutOfRange { .. })));

        let z = [0.4, -1.1, 2.0, 0.7];
        let g = cross_entropy_grad(&z, 2).unwrap();
        let fd = gradient(|v| cross_entropy(v, 2).unwrap(), &z, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!(relative_error(*a, *b) < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn margin_picks_runner_up() {
        let (m, k) = margin(&[1.0, 3.0, 3.0, 0.5], 0).unwrap();
        assert_eq!(k, 1);
        assert_eq!(m, 2.0);
        let (m, k) = margin(&[1.0, 3.0, 2.0], 1).unwrap();
        assert_eq!((m, k), (-1.0, 2));
    }

    #[test]
    fn entropy_gradient_cases() {
        assert_eq!(entropy_temp_gradient(&[1.5; 6], 3.0).unwrap(), 0.0);
        let z = [0.3, -1.7, 2.2, 0.9, -0.4];
        let g = entropy_temp_gradient(&z, 2.0).unwrap();
        let fd = central(|t| entropy(&tempered_softmax(&z, t).unwrap()), 2.0, 1e-5);
        assert!(relative_error(g, fd) < 1e-6, "{g} vs {fd}");
        assert!(entropy_temp_gradient(&z, 0.0).is_err());
    }

    #[test]
    fn entropy_gradient_matches_raw_formula_for_moderate_logits() {
        // direct evaluation with raw q_j = exp(z_j / tau)
        let z: [f64; 4] = [0.3, -1.7, 2.2, 0.9];
        let tau = 1.7;
        let q: Vec<f64> = z.iter().map(|v| (v / tau).exp()).collect();
        let s: f64 = q.iter().sum();
        let s1: f64 = q.iter().map(|v| v * v.ln()).sum();
        let s2: f64 = q.iter().map(|v| v * v.ln() * v.ln()).sum();
        let raw = (s * s2 - s1 * s1) / (tau * s * s);
        let g = entropy_temp_gradient(&z, tau).unwrap();
        assert!(relative_error(g, raw) < 1e-12);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(3.0), 1.0);
        assert_eq!(sign(-1e-300), -1.0);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-20.0f64..20.0, 2..12)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(z in logits(), shift in -50.0f64..50.0) {
            for tau in [1.0, 5.0, 10.0] {
                let p = tempered_softmax(&z, tau).unwrap();
                let s: f64 = p.probs().iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-9);
                let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
                let q = tempered_softmax(&shifted, tau).unwrap();
                for (a, b) in p.probs().iter().zip(q.probs()) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn entropy_non_decreasing_in_tau(z in logits(), t1 in 1.0f64..10.0, t2 in 1.0f64..10.0) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let h_lo = entropy(&tempered_softmax(&z, lo).unwrap());
            let h_hi = entropy(&tempered_softmax(&z, hi).unwrap());
            prop_assert!(h_hi >= h_lo - 1e-12);
        }

        #[test]
        fn kl_zero_iff_equal(a in logits()) {
            let p = tempered_softmax(&a, 1.0).unwrap();
            prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        }
    }
}
