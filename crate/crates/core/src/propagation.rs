//! Node-wise inter-channel propagation (stage two).
//!
//! Every node refines its own row: channel `b` sends
//! `beta * (1 - xi_a) * xi_b * R[a, b] * (x_b - m_b)` to channel `a`, where
//! `xi` is the node's pseudo-confidence per channel and `R` the Pearson
//! correlation between stage-one channels. Over the whole matrix this is
//! `X + beta * (1 - XI) ⊙ ((XI ⊙ (X - 1 m^T)) R)`.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::confidence::{check_alpha, confidence_of, SpdsMatrix};
use crate::error::{PcfiError, Result};

/// Pearson correlation between channels with a zeroed diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub r: Array2<f64>,
    pub means: Array1<f64>,
    /// Sample standard deviations (`N - 1` denominator); 0 for constant
    /// channels.
    pub stds: Array1<f64>,
}

pub fn correlation(xhat: &Array2<f64>) -> Result<CorrelationMatrix> {
    let (n, f) = xhat.dim();
    if n < 2 {
        return Err(PcfiError::input(format!(
            "correlation needs at least 2 rows, got {n}"
        )));
    }
    let means = xhat.mean_axis(Axis(0)).expect("n >= 2");
    let mut centered = xhat - &means.view().insert_axis(Axis(0));

    // exactly constant columns carry no signal; zero them so rounding in the
    // mean cannot fake a correlation
    for (d, mut col) in centered.axis_iter_mut(Axis(1)).enumerate() {
        let c = xhat.column(d);
        if c.iter().all(|&v| v == c[0]) {
            col.fill(0.0);
        }
    }

    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let stds = cov.diag().mapv(f64::sqrt);
    let mut r = Array2::zeros((f, f));
    for a in 0..f {
        for b in 0..f {
            if a == b {
                continue;
            }
            let v = cov[[a, b]] / (stds[a] * stds[b]);
            r[[a, b]] = if v.is_finite() {
                v.clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
    }
    // symmetric by construction up to the dot kernel's rounding
    for a in 0..f {
        for b in a + 1..f {
            r[[b, a]] = r[[a, b]];
        }
    }
    Ok(CorrelationMatrix { r, means, stds })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    pub alpha: f64,
    /// Step size; 0 disables the stage.
    pub beta: f64,
}

impl PropagationConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(PcfiError::input(format!("beta must be >= 0, got {beta}")));
        }
        Ok(PropagationConfig { alpha, beta })
    }
}

fn check_inputs(xhat: &Array2<f64>, s: &SpdsMatrix, cfg: &PropagationConfig) -> Result<()> {
    PropagationConfig::new(cfg.alpha, cfg.beta)?;
    if xhat.dim() != s.dim() {
        return Err(PcfiError::shape(
            format!("SPD-S {:?}", xhat.dim()),
            format!("{:?}", s.dim()),
        ));
    }
    Ok(())
}

/// Vectorized stage two. `cfg.alpha` is used for the confidences; it need not
/// equal the base stored in `s`.
pub fn propagate_stage2(
    xhat: &Array2<f64>,
    s: &SpdsMatrix,
    cfg: &PropagationConfig,
) -> Result<Array2<f64>> {
    check_inputs(xhat, s, cfg)?;
    if cfg.beta == 0.0 {
        return Ok(xhat.clone());
    }
    let corr = correlation(xhat)?;
    Ok(propagate_with(xhat, s, cfg, &corr))
}

/// Stage two with a precomputed correlation matrix.
pub fn propagate_with(
    xhat: &Array2<f64>,
    s: &SpdsMatrix,
    cfg: &PropagationConfig,
    corr: &CorrelationMatrix,
) -> Array2<f64> {
    let xi = s.distances().mapv(|d| confidence_of(cfg.alpha, d));
    let mut sent = xhat - &corr.means.view().insert_axis(Axis(0));
    sent *= &xi;
    let received = sent.dot(&corr.r);
    let mut out = xhat.clone();
    Zip::from(&mut out)
        .and(&received)
        .and(&xi)
        .for_each(|o, &g, &c| {
            let gate = 1.0 - c;
            if gate != 0.0 {
                *o += cfg.beta * gate * g;
            }
        });
    out
}

/// Upper bound on `N * F^2` for [`stage2_bruteforce_oracle`].
pub const ORACLE_MAX_WORK: usize = 1_000_000;

/// Literal per-node construction: materializes every `F×F` matrix `B` and
/// applies `x_i + B (x_i - m)`. Only meant for small inputs.
pub fn stage2_bruteforce_oracle(
    xhat: &Array2<f64>,
    s: &SpdsMatrix,
    cfg: &PropagationConfig,
) -> Result<Array2<f64>> {
    check_inputs(xhat, s, cfg)?;
    let (n, f) = xhat.dim();
    if n * f * f > ORACLE_MAX_WORK {
        return Err(PcfiError::input(format!(
            "oracle limited to N*F^2 <= {ORACLE_MAX_WORK}, got {}",
            n * f * f
        )));
    }
    let corr = correlation(xhat)?;
    let mut out = xhat.clone();
    let mut b = Array2::<f64>::zeros((f, f));
    for i in 0..n {
        for a in 0..f {
            for c in 0..f {
                b[[a, c]] = if a == c {
                    0.0
                } else {
                    let xi_a = confidence_of(cfg.alpha, s.get(i, a));
                    let xi_c = confidence_of(cfg.alpha, s.get(i, c));
                    cfg.beta * (1.0 - xi_a) * xi_c * corr.r[[a, c]]
                };
            }
        }
        let dev = &xhat.row(i) - &corr.means;
        let update = b.dot(&dev);
        for a in 0..f {
            out[[i, a]] += update[a];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::UNREACHABLE;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn correlation_examples() {
        let x = array![
            [1.0, 1.0, -1.0, 4.0],
            [2.0, 2.0, -2.0, 4.0],
            [4.0, 4.0, -4.0, 4.0]
        ];
        let c = correlation(&x).unwrap();
        assert!((c.r[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((c.r[[0, 2]] + 1.0).abs() < 1e-12);
        for d in 0..4 {
            assert_eq!(c.r[[d, d]], 0.0);
            assert_eq!(c.r[[3, d]], 0.0);
            assert_eq!(c.r[[d, 3]], 0.0);
        }
        assert_eq!(c.stds[3], 0.0);
        assert!(correlation(&array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn constant_channel_with_inexact_mean() {
        let x = Array2::from_shape_fn((7, 2), |(i, d)| if d == 0 { 0.1 } else { i as f64 });
        let c = correlation(&x).unwrap();
        assert_eq!(c.r[[0, 1]], 0.0);
    }

    #[test]
    fn hand_computed_toy() {
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let s = SpdsMatrix::new(array![[0, 0], [0, 0], [0, 1]], 0.5).unwrap();
        let cfg = PropagationConfig::new(0.5, 0.1).unwrap();
        let out = propagate_stage2(&x, &s, &cfg).unwrap();
        assert!((out[[2, 1]] - 3.05).abs() < 1e-12);
        for (idx, &v) in out.indexed_iter() {
            if idx != (2, 1) {
                assert_eq!(v, x[idx]);
            }
        }
        let oracle = stage2_bruteforce_oracle(&x, &s, &cfg).unwrap();
        assert!((oracle[[2, 1]] - 3.05).abs() < 1e-12);
    }

    #[test]
    fn identities() {
        let x = array![[1.0, 3.0], [2.0, -1.0], [0.5, 2.0]];
        let s = SpdsMatrix::new(array![[0, 2], [1, 1], [3, 0]], 0.6).unwrap();
        let zero = PropagationConfig::new(0.6, 0.0).unwrap();
        assert_eq!(propagate_stage2(&x, &s, &zero).unwrap(), x);
        assert_eq!(stage2_bruteforce_oracle(&x, &s, &zero).unwrap(), x);

        let single = array![[1.0], [4.0], [2.0]];
        let s1 = SpdsMatrix::new(array![[0], [1], [2]], 0.6).unwrap();
        let cfg = PropagationConfig::new(0.6, 5.0).unwrap();
        assert_eq!(propagate_stage2(&single, &s1, &cfg).unwrap(), single);
        assert_eq!(
            stage2_bruteforce_oracle(&single, &s1, &cfg).unwrap(),
            single
        );
    }

    #[test]
    fn rejects_bad_config() {
        assert!(PropagationConfig::new(0.5, -1.0).is_err());
        assert!(PropagationConfig::new(1.0, 1.0).is_err());
        let x = Array2::<f64>::zeros((3, 2));
        let s = SpdsMatrix::new(Array2::zeros((3, 3)), 0.5).unwrap();
        assert!(propagate_stage2(&x, &s, &PropagationConfig::new(0.5, 1.0).unwrap()).is_err());
        let big = Array2::<f64>::zeros((20_000, 8));
        let sb = SpdsMatrix::new(Array2::zeros((20_000, 8)), 0.5).unwrap();
        assert!(
            stage2_bruteforce_oracle(&big, &sb, &PropagationConfig::new(0.5, 1.0).unwrap())
                .is_err()
        );
    }

    fn instance() -> impl Strategy<Value = (Array2<f64>, SpdsMatrix, PropagationConfig)> {
        (2usize..30, 1usize..8).prop_flat_map(|(n, f)| {
            (
                proptest::collection::vec(-10.0f64..10.0, n * f),
                proptest::collection::vec(prop_oneof![8 => 0u32..6, 1 => Just(UNREACHABLE)], n * f),
                0.05f64..0.95,
                0.0f64..2.0,
            )
                .prop_map(move |(x, s, a, b)| {
                    (
                        Array2::from_shape_vec((n, f), x).unwrap(),
                        SpdsMatrix::new(Array2::from_shape_vec((n, f), s).unwrap(), a).unwrap(),
                        PropagationConfig::new(a, b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn vectorized_matches_oracle((x, s, cfg) in instance()) {
            let fast = propagate_stage2(&x, &s, &cfg).unwrap();
            let slow = stage2_bruteforce_oracle(&x, &s, &cfg).unwrap();
            for (a, b) in fast.iter().zip(slow.iter()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
            for ((i, d), &v) in fast.indexed_iter() {
                if s.get(i, d) == 0 {
                    prop_assert_eq!(v, x[[i, d]]);
                }
            }
        }

        #[test]
        fn correlation_is_bounded_and_symmetric((x, _s, _cfg) in instance()) {
            let c = correlation(&x).unwrap();
            let f = x.ncols();
            for a in 0..f {
                prop_assert_eq!(c.r[[a, a]], 0.0);
                for b in 0..f {
                    prop_assert_eq!(c.r[[a, b]], c.r[[b, a]]);
                    prop_assert!(c.r[[a, b]].abs() <= 1.0 + 1e-12);
                }
            }
        }

        #[test]
        fn update_scales_with_source_confidence(
            (x, s, cfg) in instance(),
            node in 0usize..30,
        ) {
            // doubling S at (i, b) scales b's contribution to a by alpha^S
            let (n, f) = x.dim();
            prop_assume!(f >= 2);
            let i = node % n;
            let (a, b) = (0, 1);
            let sb = s.get(i, b);
            let sa = s.get(i, a);
            prop_assume!(sb != UNREACHABLE && sb > 0 && sb < 1000 && sa != 0);
            let corr = correlation(&x).unwrap();
            let contribution = |sbv: u32| {
                let xi_a = confidence_of(cfg.alpha, sa);
                let xi_b = confidence_of(cfg.alpha, sbv);
                cfg.beta * (1.0 - xi_a) * xi_b * corr.r[[a, b]] * (x[[i, b]] - corr.means[b])
            };
            let before = contribution(sb);
            let after = contribution(2 * sb);
            let predicted = before * cfg.alpha.powi(sb as i32);
            prop_assert!((after - predicted).abs() <= 1e-12 * (1.0 + before.abs()));

            // and the vectorized result moves by exactly that difference
            let mut doubled = s.distances().clone();
            doubled[[i, b]] = 2 * sb;
            let s2 = SpdsMatrix::new(doubled, s.alpha()).unwrap();
            let y1 = propagate_with(&x, &s, &cfg, &corr);
            let y2 = propagate_with(&x, &s2, &cfg, &corr);
            prop_assert!(((y2[[i, a]] - y1[[i, a]]) - (after - before)).abs() <= 1e-9);
        }
    }
}
