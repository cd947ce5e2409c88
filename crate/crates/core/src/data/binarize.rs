use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{contract, Result};

/// Dynamic binarisation: every entry becomes an independent
/// `Bernoulli(entry)` draw.
pub fn binarize_batch<R: Rng + ?Sized>(batch: &Tensor, rng: &mut R) -> Result<Tensor> {
    if let Some(bad) = batch.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(contract(format!("cannot binarise value {bad} outside [0, 1]")));
    }
    let data = batch
        .data()
        .iter()
        .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(batch.shape().to_vec(), data)
}
