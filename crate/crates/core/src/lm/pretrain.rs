//! One-off pretraining of the stand-in LM on the template grammar, mixing
//! span denoising, paraphrasing (stimulus → variant) and prefix
//! continuation. The result is frozen and shipped as a fixture.

use candle_core::DType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FrozenLm, LmConfig, Tokenizer, MASK};
use crate::error::{GlimError, Result};
use crate::nn::optim::{OptimConfig, Trainer};
use crate::nn::{scalar, ParamStore};
use crate::synth::{gen_corpus, grammar, WorldConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub seed: u64,
    /// Sentences sampled from the grammar for the pretraining corpus.
    pub n_sentences: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-token probability of starting a masked span.
    pub mask_prob: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            seed: 11,
            n_sentences: 4000,
            steps: 3000,
            batch_size: 64,
            lr: 2e-3,
            mask_prob: 0.15,
        }
    }
}

/// Vocabulary over everything the grammar, its paraphrases and the
/// zero-shot label texts can produce.
pub fn grammar_tokenizer(extra: &[String]) -> Tokenizer {
    let mut texts: Vec<String> = grammar::surface_strings().iter().map(|s| s.to_string()).collect();
    texts.extend(extra.iter().cloned());
    Tokenizer::from_texts(texts.iter().map(String::as_str))
}

struct Pair {
    source: Vec<u32>,
    target: Vec<u32>,
}

fn mask_spans<R: Rng>(ids: &[u32], p: f64, rng: &mut R) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if rng.random_bool(p) {
            let span = rng.random_range(1..=3usize).min(ids.len() - i);
            out.push(MASK);
            i += span;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

pub struct PretrainOutcome {
    pub lm: FrozenLm,
    pub tokenizer: Tokenizer,
    /// Mean loss over each block of 100 steps.
    pub loss_curve: Vec<f64>,
}

pub fn pretrain(cfg: &PretrainConfig, lm_cfg: LmConfig) -> Result<PretrainOutcome> {
    let world = WorldConfig {
        n_sentences: cfg.n_sentences,
        grammar_seed: cfg.seed,
        ..WorldConfig::default()
    };
    let corpus = gen_corpus(&world)?;
    let tok = grammar_tokenizer(&[]);
    let lm_cfg = LmConfig {
        vocab_size: tok.vocab_size(),
        frozen: false,
        ..lm_cfg
    };
    let lm = FrozenLm::build(lm_cfg.clone(), ParamStore::new(cfg.seed, DType::F32, true))?;
    let groups: Vec<Vec<Vec<u32>>> = corpus
        .iter()
        .map(|r| {
            std::iter::once(&r.stimulus_text)
                .chain(r.variants.iter().map(|v| &v.text))
                .map(|t| tok.tokenize(t).ids)
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7072);
    let optim = OptimConfig {
        lr: cfg.lr,
        ..OptimConfig::default()
    };
    let mut trainer = Trainer::new(lm.store.vars(), optim, cfg.steps)?;
    let mut curve = Vec::new();
    let mut acc = 0.0;
    for step in 0..cfg.steps {
        let mut pairs = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let g = &groups[rng.random_range(0..groups.len())];
            let pick = &g[rng.random_range(0..g.len())];
            let pair = match rng.random_range(0..3) {
                0 => Pair {
                    source: mask_spans(pick, cfg.mask_prob, &mut rng),
                    target: pick.clone(),
                },
                1 => Pair {
                    source: g[0].clone(),
                    target: g[rng.random_range(1..g.len())].clone(),
                },
                _ => {
                    let k = rng.random_range(1..pick.len().max(2));
                    Pair {
                        source: pick[..k.min(pick.len())].to_vec(),
                        target: pick[k.min(pick.len() - 1)..].to_vec(),
                    }
                }
            };
            pairs.push(pair);
        }
        let sources: Vec<Vec<u32>> = pairs.iter().map(|p| p.source.clone()).collect();
        let targets: Vec<Vec<u32>> = pairs.iter().map(|p| p.target.clone()).collect();
        let (memory, lens) = lm.encode_ids(&sources)?;
        let loss = lm.teacher_forced_nll(&memory, &lens, &targets)?.mean_all()?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(GlimError::numerical(format!("pretraining loss diverged at step {step}")));
        }
        trainer.step(&loss)?;
        acc += value;
        if (step + 1) % 100 == 0 || step + 1 == cfg.steps {
            let n = (step % 100 + 1) as f64;
            curve.push(acc / n);
            log::info!("lm pretrain step {} loss {:.4}", step + 1, acc / n);
            acc = 0.0;
        }
    }
    let snapshot = lm.store.snapshot()?;
    let frozen = FrozenLm::build(
        LmConfig { frozen: true, ..lm_cfg },
        ParamStore::from_tensors(snapshot, DType::F32, false),
    )?;
    Ok(PretrainOutcome {
        lm: frozen,
        tokenizer: tok,
        loss_curve: curve,
    })
}
