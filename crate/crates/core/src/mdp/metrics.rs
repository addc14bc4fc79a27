use crate::error::MdpError;

use super::SIMPLEX_TOL;

/// Distances between two categorical distributions on the same support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionMetrics {
    pub l1: f64,
    /// Largest single-outcome gap, `max |p - q|`.
    pub tv: f64,
    /// `KL(p, q)`; `+inf` when `q` misses part of the support of `p`.
    pub kl: f64,
    /// `KL(p, q) + KL(q, p)`.
    pub kl_sym: f64,
}

fn check_simplex(v: &[f64], name: &str) -> Result<(), MdpError> {
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(MdpError::Distribution(format!("{name} has a negative or non-finite entry")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(MdpError::Distribution(format!("{name} sums to {sum}")));
    }
    Ok(())
}

pub fn distribution_metrics(p: &[f64], q: &[f64]) -> Result<DistributionMetrics, MdpError> {
    if p.len() != q.len() {
        return Err(MdpError::Distribution(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    check_simplex(p, "p")?;
    check_simplex(q, "q")?;
    let kl = kl_divergence(p, q);
    Ok(DistributionMetrics {
        l1: l1_distance(p, q),
        tv: p
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
        kl,
        kl_sym: kl + kl_divergence(q, p),
    })
}

/// `sum |p - q|` without validation; callers guarantee equal lengths.
pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return f64::INFINITY;
        }
        acc += a * (a / b).ln();
    }
    acc.max(0.0)
}

/// `KL(p, q) + KL(q, p)` without validation.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    kl_divergence(p, q) + kl_divergence(q, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_distributions() {
        let m = distribution_metrics(&[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(m, DistributionMetrics { l1: 0.0, tv: 0.0, kl: 0.0, kl_sym: 0.0 });
    }

    #[test]
    fn disjoint_supports() {
        let m = distribution_metrics(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(m.l1, 2.0);
        assert_eq!(m.tv, 1.0);
        assert!(m.kl.is_infinite() && m.kl_sym.is_infinite());
    }

    #[test]
    fn shifted_pair() {
        let m = distribution_metrics(&[0.75, 0.25], &[0.25, 0.75]).unwrap();
        assert!((m.l1 - 1.0).abs() < 1e-15);
        assert!((m.tv - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(distribution_metrics(&[1.0], &[0.5, 0.5]).is_err());
        assert!(distribution_metrics(&[0.6, 0.6], &[0.5, 0.5]).is_err());
        assert!(distribution_metrics(&[1.2, -0.2], &[0.5, 0.5]).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn pinsker_chain(p in simplex(4), q in simplex(4)) {
            let m = distribution_metrics(&p, &q).unwrap();
            prop_assert!(m.tv <= m.l1 / 2.0 + 1e-12);
            if m.kl.is_finite() {
                prop_assert!(m.l1 / 2.0 <= (m.kl / 2.0).sqrt() + 1e-12);
            }
        }
    }
}
