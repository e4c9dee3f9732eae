//! Deterministic beam search over the decoder.
//!
//! Each step keeps the `width` best continuations by cumulative
//! log-probability, ties broken by token id and then by beam order.
//! Hypotheses that emit EOS leave the beam but keep their slot, so width 1
//! is exactly greedy decoding. The final choice maximizes
//! `logp / (len + 1)^0.75` over all finished hypotheses and the greedy one.

use candle_core::{DType, Tensor};

use super::{FrozenLm, Tokenizer, BOS, EOS};
use crate::error::Result;
use crate::nn::log_softmax_last;

pub const LENGTH_ALPHA: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub logp: f64,
}

impl Hypothesis {
    pub fn score(&self) -> f64 {
        self.logp / ((self.tokens.len() + 1) as f64).powf(LENGTH_ALPHA)
    }
}

fn better(a: &Hypothesis, b: &Hypothesis) -> bool {
    let (sa, sb) = (a.score(), b.score());
    sa > sb || (sa == sb && a.tokens < b.tokens)
}

/// Last-position log-probabilities for equal-length decoder prefixes, each
/// attending to memory row `rows[i]`.
fn next_logprobs(lm: &FrozenLm, memory: &Tensor, mem_lens: &[usize], prefixes: &[Vec<u32>], rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    let t = prefixes[0].len();
    let flat: Vec<u32> = prefixes.iter().flatten().copied().collect();
    let ids = Tensor::from_vec(flat, (prefixes.len(), t), lm.device())?;
    let idx = Tensor::from_vec(rows.iter().map(|&r| r as u32).collect::<Vec<_>>(), rows.len(), lm.device())?;
    let mem = memory.index_select(&idx, 0)?;
    let lens: Vec<usize> = rows.iter().map(|&r| mem_lens[r]).collect();
    let logits = lm.decode_logits(&mem, &lens, &ids)?.narrow(1, t - 1, 1)?.squeeze(1)?;
    let lp = log_softmax_last(&logits)?.to_dtype(DType::F64)?;
    Ok(lp.to_vec2::<f64>()?)
}

fn start(lm: &FrozenLm, tok: Option<&Tokenizer>) -> Vec<u32> {
    let mut s = vec![BOS];
    s.extend(lm.prefix_ids(tok));
    s
}

/// Greedy argmax decoding (ties → lowest token id) for every memory row.
pub fn greedy(lm: &FrozenLm, memory: &Tensor, mem_lens: &[usize], max_len: usize, tok: Option<&Tokenizer>) -> Result<Vec<Hypothesis>> {
    let b = mem_lens.len();
    let head = start(lm, tok);
    let mut hyps: Vec<Hypothesis> = vec![Hypothesis { tokens: vec![], logp: 0.0 }; b];
    let mut live: Vec<usize> = (0..b).collect();
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let prefixes: Vec<Vec<u32>> = live.iter().map(|&i| [head.clone(), hyps[i].tokens.clone()].concat()).collect();
        let lp = next_logprobs(lm, memory, mem_lens, &prefixes, &live)?;
        let mut still = Vec::new();
        for (row, &i) in lp.iter().zip(&live) {
            let (best, v) = row
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            hyps[i].logp += v;
            if best as u32 != EOS {
                hyps[i].tokens.push(best as u32);
                still.push(i);
            }
        }
        live = still;
    }
    Ok(hyps)
}

/// Beam search for every memory row.
pub fn beam_search(
    lm: &FrozenLm,
    memory: &Tensor,
    mem_lens: &[usize],
    width: usize,
    max_len: usize,
    tok: Option<&Tokenizer>,
) -> Result<Vec<Hypothesis>> {
    let b = mem_lens.len();
    let width = width.max(1);
    let head = start(lm, tok);
    let mut beams: Vec<Vec<Hypothesis>> = vec![vec![Hypothesis { tokens: vec![], logp: 0.0 }]; b];
    let mut finished: Vec<Vec<Hypothesis>> = vec![Vec::new(); b];
    for _ in 0..max_len {
        let mut prefixes = Vec::new();
        let mut rows = Vec::new();
        for (i, bs) in beams.iter().enumerate() {
            for h in bs {
                prefixes.push([head.clone(), h.tokens.clone()].concat());
                rows.push(i);
            }
        }
        if prefixes.is_empty() {
            break;
        }
        let lp = next_logprobs(lm, memory, mem_lens, &prefixes, &rows)?;
        let mut cursor = 0;
        for i in 0..b {
            let n = beams[i].len();
            if n == 0 {
                continue;
            }
            // (logp, token, beam)
            let mut cands: Vec<(f64, u32, usize)> = Vec::new();
            for (k, h) in beams[i].iter().enumerate() {
                let row = &lp[cursor + k];
                let mut order: Vec<usize> = (0..row.len()).collect();
                order.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
                for &v in order.iter().take(width) {
                    cands.push((h.logp + row[v], v as u32, k));
                }
            }
            cursor += n;
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            for &(logp, v, k) in cands.iter().take(width) {
                let mut tokens = beams[i][k].tokens.clone();
                if v == EOS {
                    finished[i].push(Hypothesis { tokens, logp });
                } else {
                    tokens.push(v);
                    next.push(Hypothesis { tokens, logp });
                }
            }
            if finished[i].len() >= width {
                next.clear();
            }
            beams[i] = next;
        }
    }
    let greedy = greedy(lm, memory, mem_lens, max_len, tok)?;
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let mut best = greedy[i].clone();
        for h in finished[i].iter().chain(beams[i].iter()) {
            if better(h, &best) {
                best = h.clone();
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Decodes memory rows to text.
pub fn generate(
    lm: &FrozenLm,
    tok: &Tokenizer,
    memory: &Tensor,
    mem_lens: &[usize],
    width: usize,
    max_len: usize,
) -> Result<Vec<String>> {
    let hyps = beam_search(lm, memory, mem_lens, width, max_len, Some(tok))?;
    Ok(hyps.iter().map(|h| tok.detokenize(&h.tokens)).collect())
}

/// Log-probability of a token sequence (followed by EOS unless `open`).
pub fn sequence_logp(lm: &FrozenLm, memory: &Tensor, mem_len: usize, tokens: &[u32], open: bool) -> Result<f64> {
    let mut ids = vec![BOS];
    ids.extend_from_slice(tokens);
    let t = ids.len();
    let ids_t = Tensor::from_vec(ids.clone(), (1, t), lm.device())?;
    let lp = log_softmax_last(&lm.decode_logits(memory, &[mem_len], &ids_t)?)?
        .to_dtype(DType::F64)?
        .squeeze(0)?
        .to_vec2::<f64>()?;
    let mut total = 0.0;
    for (step, row) in lp.iter().enumerate() {
        let next = if step + 1 < t { ids[step + 1] } else if open { break } else { EOS };
        total += row[next as usize];
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use candle_core::Device;

    fn lm(seed: u64) -> FrozenLm {
        let cfg = LmConfig {
            vocab_size: 12,
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            d_ff: 16,
            max_len: 8,
            ..LmConfig::default()
        };
        FrozenLm::new_random(cfg, seed, DType::F64, false).unwrap()
    }

    fn memory(seed: u64, b: usize) -> Tensor {
        let v: Vec<f64> = (0..b * 3 * 8).map(|i| ((i as f64 + seed as f64) * 0.731).sin()).collect();
        Tensor::from_vec(v, (b, 3, 8), &Device::Cpu).unwrap()
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..5 {
            let lm = lm(seed);
            let mem = memory(seed, 3);
            let g = greedy(&lm, &mem, &[3, 2, 1], 8, None).unwrap();
            let b = beam_search(&lm, &mem, &[3, 2, 1], 1, 8, None).unwrap();
            assert_eq!(g, b);
        }
    }

    #[test]
    fn beam_never_scores_below_greedy_and_is_deterministic() {
        for seed in 0..5 {
            let lm = lm(seed);
            let mem = memory(seed, 2);
            let g = greedy(&lm, &mem, &[3, 3], 8, None).unwrap();
            let b1 = beam_search(&lm, &mem, &[3, 3], 4, 8, None).unwrap();
            let b2 = beam_search(&lm, &mem, &[3, 3], 4, 8, None).unwrap();
            assert_eq!(b1, b2);
            for (g, b) in g.iter().zip(&b1) {
                assert!(b.score() >= g.score());
            }
        }
    }

    #[test]
    fn hypothesis_logp_matches_rescoring() {
        let lm = lm(3);
        let mem = memory(3, 1);
        for h in beam_search(&lm, &mem, &[3], 3, 8, None).unwrap() {
            let open = h.tokens.len() == 8;
            let re = sequence_logp(&lm, &mem, 3, &h.tokens, open).unwrap();
            assert!((re - h.logp).abs() < 1e-9);
        }
    }
}
