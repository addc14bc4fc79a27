use serde::{Deserialize, Serialize};

use crate::error::IdentifyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Keep {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    /// An observed outcome is impossible under the eliminated model.
    ZeroProbability,
    LogLikelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EliminationVerdict {
    pub keep: Keep,
    pub reason: Reason,
}

/// Pairwise elimination between two next-state distributions.
///
/// An outcome impossible under `p2` keeps the first model; otherwise one
/// impossible under `p1` keeps the second; otherwise the first survives iff
/// `sum log(p1 / p2) >= 0`. Empty samples keep the first.
pub fn likelihood_ratio_test(
    p1: &[f64],
    p2: &[f64],
    samples: &[usize],
) -> Result<EliminationVerdict, IdentifyError> {
    if p1.len() != p2.len() {
        return Err(IdentifyError::InvalidParameter(format!(
            "distribution lengths differ: {} vs {}",
            p1.len(),
            p2.len()
        )));
    }
    if let Some(&outcome) = samples.iter().find(|&&x| x >= p1.len()) {
        return Err(IdentifyError::SampleOutOfRange {
            outcome,
            len: p1.len(),
        });
    }
    if samples.iter().any(|&x| p2[x] == 0.0) {
        return Ok(EliminationVerdict {
            keep: Keep::First,
            reason: Reason::ZeroProbability,
        });
    }
    if samples.iter().any(|&x| p1[x] == 0.0) {
        return Ok(EliminationVerdict {
            keep: Keep::Second,
            reason: Reason::ZeroProbability,
        });
    }
    let llr: f64 = samples.iter().map(|&x| (p1[x] / p2[x]).ln()).sum();
    Ok(EliminationVerdict {
        keep: if llr >= 0.0 { Keep::First } else { Keep::Second },
        reason: Reason::LogLikelihood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_samples_keep_first() {
        let v = likelihood_ratio_test(&[0.2, 0.8], &[0.8, 0.2], &[]).unwrap();
        assert_eq!(v.keep, Keep::First);
        assert_eq!(v.reason, Reason::LogLikelihood);
    }

    #[test]
    fn zero_probability_branches() {
        let v = likelihood_ratio_test(&[0.5, 0.5], &[1.0, 0.0], &[0, 1]).unwrap();
        assert_eq!(v, EliminationVerdict { keep: Keep::First, reason: Reason::ZeroProbability });
        let v = likelihood_ratio_test(&[1.0, 0.0], &[0.5, 0.5], &[0, 1]).unwrap();
        assert_eq!(v, EliminationVerdict { keep: Keep::Second, reason: Reason::ZeroProbability });
    }

    #[test]
    fn out_of_range_sample() {
        assert!(matches!(
            likelihood_ratio_test(&[0.5, 0.5], &[0.5, 0.5], &[2]),
            Err(IdentifyError::SampleOutOfRange { outcome: 2, len: 2 })
        ));
    }

    #[test]
    fn log_space_survives_long_sample_lists() {
        // 10^5 samples: a linear-space product would underflow to 0/0.
        let samples: Vec<usize> = (0..100_000).map(|k| usize::from(k % 3 == 0)).collect();
        let v = likelihood_ratio_test(&[0.6, 0.4], &[0.5, 0.5], &samples).unwrap();
        assert_eq!(v.keep, Keep::First);
    }

    proptest! {
        #[test]
        fn identical_models_keep_first(
            raw in prop::collection::vec(0.01f64..1.0, 2..6),
            picks in prop::collection::vec(0usize..100, 0..50),
        ) {
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let samples: Vec<usize> = picks.iter().map(|k| k % p.len()).collect();
            prop_assert_eq!(likelihood_ratio_test(&p, &p, &samples).unwrap().keep, Keep::First);
        }
    }
}
