//! Text-overlap, ranking and classification metrics plus Welch's t-test.
//!
//! Text metrics lowercase and split into alphanumeric word runs
//! (apostrophes kept). BLEU is unsmoothed sentence BLEU with uniform
//! weights over 1..=n grams. Ranking ties go to the lower index.

use std::collections::HashMap;

use crate::error::{GlimError, Result};

pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn ngram_counts(w: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if w.len() >= n {
        for g in w.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Multi-reference BLEU-n (n = 1 or 2).
pub fn bleu_n(hypothesis: &str, references: &[String], n: usize) -> Result<f64> {
    if references.is_empty() {
        return Err(GlimError::config("BLEU needs at least one reference"));
    }
    if n == 0 || n > 4 {
        return Err(GlimError::config("BLEU order must be in 1..=4"));
    }
    let hyp = words(hypothesis);
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| words(r)).collect();
    let mut log_sum = 0.0;
    for k in 1..=n {
        let hc = ngram_counts(&hyp, k);
        let total: usize = hc.values().sum();
        if total == 0 {
            return Ok(0.0);
        }
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, k)).collect();
        let clipped: usize = hc
            .iter()
            .map(|(g, &c)| c.min(ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return Ok(0.0);
        }
        log_sum += (clipped as f64 / total as f64).ln() / n as f64;
    }
    let c = hyp.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| ((l as i64 - c as i64).abs(), l))
        .expect("nonempty");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * log_sum.exp())
}

/// Clipped unigram overlap divided by the reference length.
pub fn rouge1_recall(hypothesis: &str, reference: &str) -> f64 {
    let r = words(reference);
    if r.is_empty() {
        return 0.0;
    }
    let h = words(hypothesis);
    let hc = ngram_counts(&h, 1);
    let rc = ngram_counts(&r, 1);
    let overlap: usize = rc.iter().map(|(g, &c)| c.min(hc.get(g).copied().unwrap_or(0))).sum();
    overlap as f64 / r.len() as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Position of `truth` when `scores` are sorted descending, ties broken by
/// index order.
pub fn rank_of(scores: &[f64], truth: usize) -> usize {
    let s = scores[truth];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < truth))
        .count()
}

/// For each EEG embedding `i`, whether text `i` is among the top `k`
/// candidates by cosine similarity. `e_y` may hold extra distractors after
/// the matched texts.
pub fn retrieval_hits(e_x: &[Vec<f64>], e_y: &[Vec<f64>], k: usize) -> Result<Vec<bool>> {
    if e_x.is_empty() || e_x.len() > e_y.len() {
        return Err(GlimError::config(format!(
            "retrieval needs 1..={} queries, got {}",
            e_y.len(),
            e_x.len()
        )));
    }
    Ok(e_x
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let s: Vec<f64> = e_y.iter().map(|y| cosine(x, y)).collect();
            rank_of(&s, i) < k
        })
        .collect())
}

/// Top-k retrieval accuracy within one group of matched pairs.
pub fn retrieval_accuracy(e_x: &[Vec<f64>], e_y: &[Vec<f64>], k: usize) -> Result<f64> {
    if e_x.len() != e_y.len() {
        return Err(GlimError::config(format!(
            "retrieval group sizes differ: {} EEG vs {} text",
            e_x.len(),
            e_y.len()
        )));
    }
    let hits = retrieval_hits(e_x, e_y, k)?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Softmax over cosine similarities to each label embedding.
pub fn zero_shot_classify(e_x: &[f64], labels: &[Vec<f64>]) -> Result<Vec<f64>> {
    if labels.len() < 2 {
        return Err(GlimError::config("zero-shot classification needs at least two labels"));
    }
    let s: Vec<f64> = labels.iter().map(|l| cosine(e_x, l)).collect();
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// Whether `truth` is among the `k` most probable labels.
pub fn top_k_hit(probs: &[f64], truth: usize, k: usize) -> bool {
    rank_of(probs, truth) < k
}

/// Absolute and relative improvement of a score over its noise-input
/// counterpart. The relative value is absent when the baseline is zero.
pub fn improvement_scores(metric: f64, metric_noise: f64) -> (f64, Option<f64>) {
    let abs = metric - metric_noise;
    let rel = (metric_noise != 0.0).then(|| abs / metric_noise);
    (abs, rel)
}

fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| ≥ |t|)` of Student's t with `df`
/// degrees of freedom. Accurate to about 1e-10 over practical ranges.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance t-test. Returns `(t, two-sided p)`. When both
/// samples have zero variance, `p` is 1 for equal means (t = 0) and 0
/// otherwise (t = ±inf).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(GlimError::config("Welch's t-test needs at least two values per sample"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            (0.0, 1.0)
        } else {
            ((ma - mb).signum() * f64::INFINITY, 0.0)
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Ok((t, t_two_sided_p(t, df)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn bleu_hand_values() {
        assert_eq!(bleu_n("the cat sat", &s(&["the cat"]), 1).unwrap(), 2.0 / 3.0);
        assert_eq!(bleu_n("a b c", &s(&["x y", "a b c"]), 1).unwrap(), 1.0);
        assert_eq!(bleu_n("a b c", &s(&["x y", "a b c"]), 2).unwrap(), 1.0);
        assert_eq!(bleu_n("p q", &s(&["a b"]), 1).unwrap(), 0.0);
        assert_eq!(bleu_n("", &s(&["a b"]), 1).unwrap(), 0.0);
        // short hypothesis: BP = exp(1 - 4/2)
        let v = bleu_n("a b", &s(&["a b c d"]), 1).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!(bleu_n("a", &s(&[]), 1).is_err());
    }

    #[test]
    fn rouge_hand_values() {
        assert_eq!(rouge1_recall("a b", "a c d"), 1.0 / 3.0);
        assert_eq!(rouge1_recall("He was a man.", "he was a man"), 1.0);
        assert_eq!(rouge1_recall("", "a"), 0.0);
    }

    #[test]
    fn retrieval_ties_prefer_lower_index() {
        let ex = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let ey = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(retrieval_hits(&ex, &ey, 1).unwrap(), vec![true, false]);
        assert_eq!(retrieval_accuracy(&ex, &ey, 2).unwrap(), 1.0);
        assert!(retrieval_accuracy(&ex, &ey[..1], 1).is_err());
    }

    #[test]
    fn zero_shot_symmetry_and_argmax() {
        let p = zero_shot_classify(&[1.0, 2.0], &[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = zero_shot_classify(&[0.0, 3.0], &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(p[1] > p[0] && p[1] > p[2]);
        assert!(zero_shot_classify(&[1.0], &[vec![1.0]]).is_err());
    }

    #[test]
    fn improvement_arithmetic() {
        let (a, r) = improvement_scores(0.2, 0.1);
        assert!((a - 0.1).abs() < 1e-15 && (r.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(improvement_scores(0.3, 0.3), (0.0, Some(0.0)));
        assert_eq!(improvement_scores(0.3, 0.0).1, None);
    }

    #[test]
    fn welch_edge_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(welch_t_test(&a, &a).unwrap(), (0.0, 1.0));
        assert_eq!(welch_t_test(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), (0.0, 1.0));
        assert_eq!(welch_t_test(&[3.0, 3.0], &[2.0, 2.0]).unwrap().1, 0.0);
        let (t1, p1) = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        let (t2, p2) = welch_t_test(&[2.0, 3.0, 4.0, 5.0, 6.5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t1, -t2);
        assert!((p1 - p2).abs() < 1e-15);
        assert!(welch_t_test(&[1.0], &a).is_err());
    }

    #[test]
    fn t_tail_known_values() {
        // df = 1 is Cauchy: P(|T| > 1) = 1/2
        assert!((t_two_sided_p(1.0, 1.0) - 0.5).abs() < 1e-12);
        // df = 2 has the closed form 1 - |t| / sqrt(2 + t^2)
        for t in [0.3f64, 1.0, 2.5, 7.0] {
            let want = 1.0 - t / (2.0 + t * t).sqrt();
            assert!((t_two_sided_p(t, 2.0) - want).abs() < 1e-12);
        }
    }
}
