use candle_core::{DType, Device, Tensor};
use glim_core::data::preprocess::{preprocess_trial, PreprocessOptions, RawEeg};
use glim_core::data::SampleRate;
use glim_core::eval::metrics::{bleu_n, rouge1_recall};
use glim_core::lm::{FrozenLm, LmConfig};
use glim_core::nn::softmax_last;
use glim_core::objectives::cmc_loss;
use glim_core::synth::{build_world, TextEmbedder, WorldConfig};
use proptest::prelude::*;

fn mat(rows: &[Vec<f64>]) -> Tensor {
    let d = rows[0].len();
    Tensor::from_vec(rows.concat(), (rows.len(), d), &Device::Cpu).unwrap()
}

fn val(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

fn pairs() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..7, 2usize..6).prop_flat_map(|(b, d)| {
        let row = prop::collection::vec(-3.0f64..3.0, d).prop_filter("nonzero", |r| r.iter().any(|x| x.abs() > 1e-3));
        (prop::collection::vec(row.clone(), b), prop::collection::vec(row, b))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn contrastive_loss_is_nonnegative_and_scale_free(
        (x, y) in pairs(),
        scales in prop::collection::vec(0.01f64..100.0, 12),
        t in 0.05f64..2.0,
    ) {
        let base = val(&cmc_loss(&mat(&x), &mat(&y), t).unwrap());
        prop_assert!(base >= -1e-12);
        let sx: Vec<Vec<f64>> = x.iter().enumerate().map(|(i, r)| r.iter().map(|v| v * scales[i]).collect()).collect();
        let sy: Vec<Vec<f64>> = y.iter().enumerate().map(|(i, r)| r.iter().map(|v| v * scales[6 + i]).collect()).collect();
        let scaled = val(&cmc_loss(&mat(&sx), &mat(&sy), t).unwrap());
        prop_assert!((scaled - base).abs() < 1e-6);
        let swapped = val(&cmc_loss(&mat(&y), &mat(&x), t).unwrap());
        prop_assert!((swapped - base).abs() < 1e-9);
    }

    #[test]
    fn contrastive_loss_ignores_pair_order((x, y) in pairs(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let px: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
        let py: Vec<Vec<f64>> = order.iter().map(|&i| y[i].clone()).collect();
        let a = val(&cmc_loss(&mat(&x), &mat(&y), 1.0).unwrap());
        let b = val(&cmc_loss(&mat(&px), &mat(&py), 1.0).unwrap());
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn text_metrics_stay_in_unit_interval(
        hyp in prop::collection::vec(0usize..5, 0..10),
        refs in prop::collection::vec(prop::collection::vec(0usize..5, 1..10), 1..4),
    ) {
        let w = ["the", "film", "is", "good", "bad"];
        let s = |v: &[usize]| v.iter().map(|&i| w[i]).collect::<Vec<_>>().join(" ");
        let refs: Vec<String> = refs.iter().map(|r| s(r)).collect();
        let h = s(&hyp);
        for n in [1, 2] {
            let b = bleu_n(&h, &refs, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
        }
        let r = rouge1_recall(&h, &refs[0]);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(bleu_n(&refs[0], &refs[..1], 1).unwrap(), 1.0);
    }

    #[test]
    fn preprocessing_is_deterministic(
        t in 50usize..1500,
        c in 1usize..20,
        rate in prop::sample::select(vec![128u32, 250, 500, 1000]),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f32> = (0..t * c).map(|_| rng.random_range(-50.0..50.0)).collect();
        let raw = RawEeg::new(vals, t, c, SampleRate::hz(rate)).unwrap();
        match (preprocess_trial(&raw, &PreprocessOptions::default()), preprocess_trial(&raw, &PreprocessOptions::default())) {
            (Ok(a), Ok(b)) => {
                let bits = |x: &glim_core::data::EegTrial| x.to_padded().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&a), bits(&b));
            }
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "non-deterministic outcome"),
        }
    }
}

#[test]
fn next_token_distributions_sum_to_one() {
    let cfg = LmConfig {
        vocab_size: 40,
        d_model: 16,
        n_heads: 2,
        n_encoder_layers: 1,
        n_decoder_layers: 2,
        d_ff: 32,
        max_len: 12,
        ..LmConfig::default()
    };
    let lm = FrozenLm::new_random(cfg, 7, DType::F64, false).unwrap();
    let memory = Tensor::randn(0.0f64, 1.0, (3, 5, 16), &Device::Cpu).unwrap();
    let ids = Tensor::from_vec((0..24u32).map(|i| i % 40).collect::<Vec<_>>(), (3, 8), &Device::Cpu).unwrap();
    let p = softmax_last(&lm.decode_logits(&memory, &[5, 3, 1], &ids).unwrap()).unwrap();
    let sums = p.sum(2).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    for s in sums {
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }
}

/// Fixed pseudo-random embedding per text.
struct HashEmbedder(usize);

impl TextEmbedder for HashEmbedder {
    fn embed_texts(&self, texts: &[String]) -> glim_core::error::Result<Vec<Vec<f32>>> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        Ok(texts
            .iter()
            .map(|t| {
                let h = t.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(h);
                (0..self.0).map(|_| StandardNormal.sample(&mut rng)).collect()
            })
            .collect())
    }
}

/// Held-out squared correlation between embeddings and their kernel-ridge
/// reconstruction from the valid region of each trial.
fn information_proxy(snr_db: f64) -> f64 {
    let cfg = WorldConfig {
        n_sentences: 48,
        snr_db,
        subjects_per_dataset: 1,
        group_mixture: [1.0, 1.0, 0.0, 0.0, 0.0],
        channels: 16,
        embed_dim: 8,
        ..WorldConfig::default()
    };
    let (ds, emb) = build_world(&cfg, &HashEmbedder(8)).unwrap();
    let len = ds.samples.iter().map(|s| s.trial.valid_region().len()).max().unwrap();
    let feats: Vec<Vec<f64>> = ds
        .samples
        .iter()
        .map(|s| {
            let mut v: Vec<f64> = s.trial.valid_region().iter().map(|&x| x as f64).collect();
            v.resize(len, 0.0);
            v
        })
        .collect();
    let y: Vec<&Vec<f32>> = ds.samples.iter().map(|s| &emb[s.record]).collect();
    let n = feats.len();
    let n_tr = n * 3 / 4;
    let k = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut g = nalgebra::DMatrix::<f64>::zeros(n_tr, n_tr);
    for i in 0..n_tr {
        for j in 0..n_tr {
            g[(i, j)] = k(&feats[i], &feats[j]);
        }
    }
    let ridge = 1e-2 * g.trace() / n_tr as f64;
    for i in 0..n_tr {
        g[(i, i)] += ridge;
    }
    let chol = g.cholesky().expect("positive definite");
    let d = y[0].len();
    let (mut num, mut den_p, mut den_y) = (0.0, 0.0, 0.0);
    for c in 0..d {
        let t = nalgebra::DVector::from_iterator(n_tr, (0..n_tr).map(|i| y[i][c] as f64));
        let alpha = chol.solve(&t);
        let preds: Vec<f64> = (n_tr..n).map(|i| (0..n_tr).map(|j| alpha[j] * k(&feats[i], &feats[j])).sum()).collect();
        let truth: Vec<f64> = (n_tr..n).map(|i| y[i][c] as f64).collect();
        let mp = preds.iter().sum::<f64>() / preds.len() as f64;
        let mt = truth.iter().sum::<f64>() / truth.len() as f64;
        for (p, t) in preds.iter().zip(&truth) {
            num += (p - mp) * (t - mt);
            den_p += (p - mp).powi(2);
            den_y += (t - mt).powi(2);
        }
    }
    num * num / (den_p * den_y)
}

#[test]
fn lower_snr_never_carries_more_information() {
    let grid = [f64::INFINITY, 20.0, 10.0, 0.0, -10.0];
    let r2: Vec<f64> = grid.iter().map(|&s| information_proxy(s)).collect();
    println!("{grid:?} -> {r2:?}");
    for w in r2.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{r2:?}");
    }
    assert!(r2[0] > 0.5 && r2[4] < r2[0]);
}
