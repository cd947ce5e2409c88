use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Prior `p(y)` over the (possibly augmented) label space.
///
/// The first `n_labelled` entries share one value and the trailing
/// `n_augmented` entries share another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    probs: Vec<f64>,
    n_labelled: usize,
    n_augmented: usize,
}

/// Half the mass spread over the labelled classes and half over the
/// augmented components; uniform over the labelled classes when there are
/// no augmented components.
pub fn build_class_prior(n_labelled: usize, n_augmented: usize) -> Result<ClassPrior> {
    if n_labelled == 0 {
        return Err(config("class prior needs at least one labelled class"));
    }
    let raw: Vec<f64> = if n_augmented == 0 {
        vec![1.0 / n_labelled as f64; n_labelled]
    } else {
        let head = 1.0 / (2 * n_labelled) as f64;
        let tail = 1.0 / (2 * n_augmented) as f64;
        std::iter::repeat_n(head, n_labelled)
            .chain(std::iter::repeat_n(tail, n_augmented))
            .collect()
    };
    let total: f64 = raw.iter().sum();
    Ok(ClassPrior {
        probs: raw.iter().map(|p| p / total).collect(),
        n_labelled,
        n_augmented,
    })
}

impl ClassPrior {
    pub fn uniform(k: usize) -> Result<Self> {
        build_class_prior(k, 0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn n_labelled(&self) -> usize {
        self.n_labelled
    }

    pub fn n_augmented(&self) -> usize {
        self.n_augmented
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn split_prior_for_five_plus_forty() {
        let p = build_class_prior(5, 40).unwrap();
        assert_eq!(p.len(), 45);
        for &v in &p.probs()[..5] {
            assert!((v - 0.1).abs() < 1e-15);
        }
        for &v in &p.probs()[5..] {
            assert!((v - 1.0 / 80.0).abs() < 1e-15);
        }
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_and_symmetric_cases() {
        let p = build_class_prior(3, 0).unwrap();
        assert!(p.probs().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-16));
        assert_eq!(build_class_prior(1, 1).unwrap().probs(), &[0.5, 0.5]);
        assert!(build_class_prior(0, 4).is_err());
    }

    proptest! {
        #[test]
        fn prior_is_normalised_and_blockwise_constant(nl in 1usize..60, na in 0usize..80) {
            let p = build_class_prior(nl, na).unwrap();
            prop_assert_eq!(p.len(), nl + na);
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-14);
            prop_assert!(p.probs()[..nl].iter().all(|&v| v == p.probs()[0]));
            prop_assert!(p.probs()[nl..].iter().all(|&v| v == p.probs()[nl]));
        }
    }
}
