//! Training objectives: teacher-forced generation loss over text variants,
//! symmetric contrastive loss between EEG and text embeddings, and their
//! weighted sum.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{GlimError, Result};
use crate::lm::FrozenLm;
use crate::nn::{log_softmax_last, scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the generation term; the contrastive term gets `1 - lambda`.
    pub lambda: f64,
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.5,
            temperature: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(GlimError::config(format!("loss.lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GlimError::config("loss.temperature must be positive"));
        }
        Ok(())
    }
}

/// Mean teacher-forced NLL over every (sample, variant) pair. `memory` is
/// (B, Q, D); `targets[i]` holds the K token sequences of sample i.
pub fn lm_loss(lm: &FrozenLm, memory: &Tensor, targets: &[Vec<Vec<u32>>]) -> Result<Tensor> {
    let (b, q, _) = memory.dims3()?;
    if targets.len() != b {
        return Err(GlimError::config(format!("{} target sets for {b} memories", targets.len())));
    }
    let k = targets.first().map_or(0, Vec::len);
    if k == 0 || targets.iter().any(|t| t.len() != k) {
        return Err(GlimError::config("every sample needs the same nonzero number of targets"));
    }
    let rows: Vec<u32> = (0..b as u32).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let idx = Tensor::from_vec(rows, b * k, memory.device())?;
    let mem = memory.index_select(&idx, 0)?;
    let flat: Vec<Vec<u32>> = targets.iter().flatten().cloned().collect();
    let nll = lm.teacher_forced_nll(&mem, &vec![q; b * k], &flat)?;
    Ok(nll.mean_all()?)
}

fn unit_rows(x: &Tensor, what: &str) -> Result<Tensor> {
    let norms = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let min = scalar(&norms.flatten_all()?.min(0)?)?;
    if !(min > 1e-12) {
        return Err(GlimError::numerical(format!("{what} embedding with zero norm; cosine similarity undefined")));
    }
    Ok(x.broadcast_div(&norms)?)
}

/// Cosine-similarity matrix (B, B) between rows of `a` and `b`.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let a = unit_rows(a, "EEG")?;
    let b = unit_rows(b, "text")?;
    Ok(a.matmul(&b.t()?)?)
}

/// Symmetric InfoNCE over the temperature-scaled cosine matrix, averaged
/// over both directions and the batch.
pub fn cmc_loss(e_x: &Tensor, e_y: &Tensor, temperature: f64) -> Result<Tensor> {
    let (b, _) = e_x.dims2()?;
    if e_y.dims2()?.0 != b || b == 0 {
        return Err(GlimError::config("contrastive loss needs equally sized nonempty batches"));
    }
    let s = (cosine_matrix(e_x, e_y)? / temperature)?;
    let eye: Vec<f32> = (0..b * b).map(|i| if i / b == i % b { 1.0 } else { 0.0 }).collect();
    let eye = Tensor::from_vec(eye, (b, b), s.device())?.to_dtype(s.dtype())?;
    let rows = (log_softmax_last(&s)? * &eye)?.sum_all()?;
    let cols = (log_softmax_last(&s.t()?)? * &eye)?.sum_all()?;
    Ok(((rows + cols)? * (-0.5 / b as f64))?)
}

/// `lambda · lm + (1 - lambda) · cmc`. At the endpoints the unused term is
/// skipped entirely.
pub fn total_loss(lm: &Tensor, cmc: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(GlimError::config(format!("lambda {lambda} outside [0, 1]")));
    }
    if lambda == 1.0 {
        return Ok(lm.clone());
    }
    if lambda == 0.0 {
        return Ok(cmc.clone());
    }
    Ok(((lm * lambda)? + (cmc * (1.0 - lambda))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn t2(v: Vec<f64>, b: usize, d: usize) -> Tensor {
        Tensor::from_vec(v, (b, d), &Device::Cpu).unwrap()
    }

    fn randn(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Vec<f64> {
        (0..b * d).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn single_pair_contrastive_loss_is_zero() {
        let e = t2(vec![0.3, -1.2, 2.0], 1, 3);
        assert_eq!(scalar(&cmc_loss(&e, &e.clone(), 1.0).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_pairs_match_hand_value() {
        let e = t2(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let l = scalar(&cmc_loss(&e, &e, 1.0).unwrap()).unwrap();
        assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_embedding_is_a_numerical_error() {
        let a = t2(vec![1.0, 0.0, 0.0, 0.0], 2, 2);
        assert!(matches!(cmc_loss(&a, &a, 1.0), Err(GlimError::Numerical { .. })));
    }

    #[test]
    fn contrastive_loss_symmetries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let b = rng.random_range(2..7);
            let x = randn(&mut rng, b, 5);
            let y = randn(&mut rng, b, 5);
            let base = scalar(&cmc_loss(&t2(x.clone(), b, 5), &t2(y.clone(), b, 5), 0.7).unwrap()).unwrap();
            assert!(base >= 0.0);
            let swapped = scalar(&cmc_loss(&t2(y.clone(), b, 5), &t2(x.clone(), b, 5), 0.7).unwrap()).unwrap();
            assert!((base - swapped).abs() < 1e-12);
            let mut perm: Vec<usize> = (0..b).collect();
            perm.rotate_left(1);
            let px: Vec<f64> = perm.iter().flat_map(|&i| x[i * 5..i * 5 + 5].to_vec()).collect();
            let py: Vec<f64> = perm.iter().flat_map(|&i| y[i * 5..i * 5 + 5].to_vec()).collect();
            let permuted = scalar(&cmc_loss(&t2(px, b, 5), &t2(py, b, 5), 0.7).unwrap()).unwrap();
            assert!((base - permuted).abs() < 1e-12);
            let scaled: Vec<f64> = x
                .chunks(5)
                .flat_map(|r| {
                    let c: f64 = rng.random_range(0.01..100.0);
                    r.iter().map(move |v| v * c).collect::<Vec<_>>()
                })
                .collect();
            let rescaled = scalar(&cmc_loss(&t2(scaled, b, 5), &t2(y, b, 5), 0.7).unwrap()).unwrap();
            assert!((base - rescaled).abs() < 1e-6);
        }
    }

    #[test]
    fn total_loss_is_the_affine_combination() {
        let lm = Tensor::new(2.0f64, &Device::Cpu).unwrap();
        let cmc = Tensor::new(4.0f64, &Device::Cpu).unwrap();
        assert_eq!(scalar(&total_loss(&lm, &cmc, 0.5).unwrap()).unwrap(), 3.0);
        assert_eq!(scalar(&total_loss(&lm, &cmc, 1.0).unwrap()).unwrap(), 2.0);
        assert_eq!(scalar(&total_loss(&lm, &cmc, 0.0).unwrap()).unwrap(), 4.0);
        assert!(matches!(total_loss(&lm, &cmc, 1.5), Err(GlimError::Config(_))));
        assert!(LossConfig { lambda: -0.1, temperature: 1.0 }.validate().is_err());
    }

    #[test]
    fn ragged_variant_counts_are_rejected() {
        let lm = crate::lm::FrozenLm::new_random(
            crate::lm::LmConfig {
                vocab_size: 10,
                d_model: 4,
                n_heads: 1,
                n_encoder_layers: 1,
                n_decoder_layers: 1,
                d_ff: 8,
                ..Default::default()
            },
            0,
            DType::F64,
            false,
        )
        .unwrap();
        let mem = Tensor::zeros((2, 3, 4), DType::F64, &Device::Cpu).unwrap();
        let targets = vec![vec![vec![5, 6]], vec![vec![5], vec![7]]];
        assert!(lm_loss(&lm, &mem, &targets).is_err());
    }
}
