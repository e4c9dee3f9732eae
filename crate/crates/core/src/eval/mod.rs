//! Evaluation of a trained model: generation overlap, within-group
//! retrieval, zero-shot classification and judged classification of
//! generated text, each paired with the same metric under Gaussian-noise
//! inputs.

pub mod judge;
pub mod metrics;
pub mod report;

use std::collections::BTreeMap;

use candle_core::DType;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Dataset, DomainPrompt, EegTrial, Relation, Sentiment};
use crate::encoder::Mode;
use crate::error::{GlimError, Result};
use crate::lm::generate::generate;
use crate::lm::{FrozenLm, Tokenizer};
use crate::mtv::VariantType;
use crate::synth::derive_seed;
use crate::synth::grammar::{corpus_label_texts, relation_label_texts, sentiment_label_texts};
use crate::train::{GlimModel, TextBank};
use judge::{Judge, JudgeTask};
use metrics::{bleu_n, retrieval_hits, rouge1_recall, top_k_hit, zero_shot_classify};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    Bleu1,
    Bleu2,
    Rouge1,
    RetrievalAcc1,
    RetrievalAcc5,
    SentimentAcc,
    RelationAcc1,
    RelationAcc3,
    CorpusAcc,
    JudgeSentimentAcc,
    JudgeRelationAcc,
    JudgeCorpusAcc,
}

impl Metric {
    pub const ALL: [Metric; 12] = [
        Metric::Bleu1,
        Metric::Bleu2,
        Metric::Rouge1,
        Metric::RetrievalAcc1,
        Metric::RetrievalAcc5,
        Metric::SentimentAcc,
        Metric::RelationAcc1,
        Metric::RelationAcc3,
        Metric::CorpusAcc,
        Metric::JudgeSentimentAcc,
        Metric::JudgeRelationAcc,
        Metric::JudgeCorpusAcc,
    ];

    /// CSV column name.
    pub fn key(self) -> &'static str {
        match self {
            Metric::Bleu1 => "bleu1_mtv",
            Metric::Bleu2 => "bleu2_mtv",
            Metric::Rouge1 => "rouge1_raw",
            Metric::RetrievalAcc1 => "retrieval_acc1",
            Metric::RetrievalAcc5 => "retrieval_acc5",
            Metric::SentimentAcc => "sentiment_acc1",
            Metric::RelationAcc1 => "relation_acc1",
            Metric::RelationAcc3 => "relation_acc3",
            Metric::CorpusAcc => "corpus_acc",
            Metric::JudgeSentimentAcc => "judged_sentiment_acc",
            Metric::JudgeRelationAcc => "judged_relation_acc",
            Metric::JudgeCorpusAcc => "judged_corpus_acc",
        }
    }

    /// Table header.
    pub fn label(self) -> &'static str {
        match self {
            Metric::Bleu1 => "BLEU1@MTV",
            Metric::Bleu2 => "BLEU2@MTV",
            Metric::Rouge1 => "ROUGE1@RAW",
            Metric::RetrievalAcc1 => "Ret ACC-1",
            Metric::RetrievalAcc5 => "Ret ACC-5",
            Metric::SentimentAcc => "Senti ACC",
            Metric::RelationAcc1 => "Rel ACC-1",
            Metric::RelationAcc3 => "Rel ACC-3",
            Metric::CorpusAcc => "Corpus ACC",
            Metric::JudgeSentimentAcc => "Senti (gen)",
            Metric::JudgeRelationAcc => "Rel (gen)",
            Metric::JudgeCorpusAcc => "Corpus (gen)",
        }
    }

    pub fn from_key(key: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.key() == key)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Retrieval group size.
    pub group_size: usize,
    pub beam_width: usize,
    pub max_len: usize,
    /// Whether to run beam-search generation (text metrics need it).
    pub generate: bool,
    pub noise_seed: u64,
    /// Independent noise draws per sample; noise metrics are averaged.
    pub noise_repeats: usize,
    /// Match each channel's noise mean and spread to the replaced trial.
    pub noise_matched: bool,
    pub distractor_seed: u64,
    pub batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            group_size: 24,
            beam_width: 4,
            max_len: 40,
            generate: true,
            noise_seed: 7,
            noise_repeats: 1,
            noise_matched: false,
            distractor_seed: 11,
            batch: 32,
        }
    }
}

pub type Scores = BTreeMap<Metric, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: usize,
    pub record: usize,
    pub group: String,
    pub subject: String,
    pub generation: Option<String>,
    pub noise_generation: Option<String>,
    pub eeg: Scores,
    pub noise: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub group: String,
    pub subject: String,
    pub n: usize,
    /// Distractor texts added to fill short retrieval groups.
    pub padded_texts: usize,
    pub eeg: Scores,
    pub noise: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantScores {
    pub tag: VariantType,
    pub eeg: Vec<f64>,
    pub noise: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<Row>,
    pub overall: Row,
    pub samples: Vec<SampleEval>,
    /// Per-sample BLEU-1 against each variant type's references.
    pub variants: Vec<VariantScores>,
}

/// Replaces the valid region with i.i.d. Gaussian samples. When `matched`,
/// each channel is rescaled to the replaced channel's mean and spread.
pub fn noise_trial<R: Rng + ?Sized>(trial: &EegTrial, rng: &mut R, matched: bool) -> Result<EegTrial> {
    let (t, c) = (trial.valid_time_len(), trial.valid_channels());
    let mut v: Vec<f32> = (0..t * c).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    if matched && t > 0 {
        let src = trial.valid_region();
        for ch in 0..c {
            let col: Vec<f64> = (0..t).map(|i| src[i * c + ch] as f64).collect();
            let m = col.iter().sum::<f64>() / t as f64;
            let sd = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / t as f64).sqrt();
            for i in 0..t {
                v[i * c + ch] = (v[i * c + ch] as f64 * sd + m) as f32;
            }
        }
    }
    trial.with_valid_region(v)
}

/// One retrieval group: test-sample positions, then distractor records.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalGroup {
    pub members: Vec<usize>,
    pub distractors: Vec<usize>,
}

/// Groups test samples by (task, subject, dataset, corpus), cuts each into
/// chunks of `size`, and fills short chunks with texts of the same corpus.
pub fn retrieval_groups(dataset: &Dataset, ids: &[usize], size: usize, seed: u64) -> Vec<RetrievalGroup> {
    let mut keyed: BTreeMap<(DomainPrompt, Corpus), Vec<usize>> = BTreeMap::new();
    for (pos, &id) in ids.iter().enumerate() {
        let s = dataset.sample(id);
        keyed.entry((s.prompt, dataset.records[s.record].corpus)).or_default().push(pos);
    }
    let mut out = Vec::new();
    for ((_, corpus), members) in keyed {
        for chunk in members.chunks(size.max(1)) {
            let taken: Vec<usize> = chunk.iter().map(|&p| dataset.sample(ids[p]).record).collect();
            let mut pool: Vec<usize> = dataset
                .records
                .iter()
                .filter(|r| r.corpus == corpus && !taken.contains(&r.id))
                .map(|r| r.id)
                .collect();
            let need = size.saturating_sub(chunk.len());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, out.len() as u64));
            pool.shuffle(&mut rng);
            if pool.len() < need {
                log::warn!("retrieval group short of distractors: {} of {need}", pool.len());
            }
            pool.truncate(need);
            out.push(RetrievalGroup {
                members: chunk.to_vec(),
                distractors: pool,
            });
        }
    }
    out
}

struct Labels {
    corpus: Vec<Vec<f64>>,
    sentiment: Vec<Vec<f64>>,
    relation: Vec<Vec<f64>>,
}

struct Pass {
    e_x: Vec<Vec<f64>>,
    gens: Option<Vec<String>>,
}

fn to_rows(t: &candle_core::Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec2::<f64>()?)
}

fn run_pass(model: &GlimModel, lm: &FrozenLm, tok: &Tokenizer, trials: &[EegTrial], prompts: &[DomainPrompt], cfg: &EvalConfig) -> Result<Pass> {
    let mut e_x = Vec::with_capacity(trials.len());
    let mut gens = cfg.generate.then(Vec::new);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (tc, pc) in trials.chunks(cfg.batch.max(1)).zip(prompts.chunks(cfg.batch.max(1))) {
        let refs: Vec<&EegTrial> = tc.iter().collect();
        let hidden = model.encoder.encode(&refs, pc, Mode::Eval, &mut rng)?;
        let out = model.eeg.forward(&hidden)?;
        e_x.extend(to_rows(&out.e)?);
        if let Some(g) = gens.as_mut() {
            let z = out.z.to_dtype(lm.dtype())?;
            let q = z.dim(1)?;
            g.extend(generate(lm, tok, &z, &vec![q; tc.len()], cfg.beam_width, cfg.max_len)?);
        }
    }
    Ok(Pass { e_x, gens })
}

/// Mean of unit-normalised prompt embeddings.
fn class_vector<'a>(rows: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    for r in rows {
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        if acc.is_empty() {
            acc = vec![0.0; r.len()];
        }
        for (a, x) in acc.iter_mut().zip(r) {
            *a += x / n;
        }
    }
    acc
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn score_pass(
    dataset: &Dataset,
    ids: &[usize],
    pass: &Pass,
    groups: &[RetrievalGroup],
    e_y: &[Vec<f64>],
    labels: &Labels,
    judge: &dyn Judge,
) -> Result<Vec<Scores>> {
    let mut out: Vec<Scores> = vec![Scores::new(); ids.len()];
    for g in groups {
        let xs: Vec<Vec<f64>> = g.members.iter().map(|&p| pass.e_x[p].clone()).collect();
        let ys: Vec<Vec<f64>> = g
            .members
            .iter()
            .map(|&p| dataset.sample(ids[p]).record)
            .chain(g.distractors.iter().copied())
            .map(|r| e_y[r].clone())
            .collect();
        for (k, m) in [(1, Metric::RetrievalAcc1), (5, Metric::RetrievalAcc5)] {
            for (&p, hit) in g.members.iter().zip(retrieval_hits(&xs, &ys, k)?) {
                out[p].insert(m, hit as u8 as f64);
            }
        }
    }
    for (p, &id) in ids.iter().enumerate() {
        let rec = dataset.record_of(dataset.sample(id));
        let ex = &pass.e_x[p];
        let s = &mut out[p];
        let probs = zero_shot_classify(ex, &labels.corpus)?;
        s.insert(Metric::CorpusAcc, top_k_hit(&probs, rec.corpus.index(), 1) as u8 as f64);
        if let Some(sent) = rec.sentiment {
            let probs = zero_shot_classify(ex, &labels.sentiment)?;
            s.insert(Metric::SentimentAcc, top_k_hit(&probs, sent.index(), 1) as u8 as f64);
        }
        if let Some(rel) = rec.relation {
            let probs = zero_shot_classify(ex, &labels.relation)?;
            s.insert(Metric::RelationAcc1, top_k_hit(&probs, rel.index(), 1) as u8 as f64);
            s.insert(Metric::RelationAcc3, top_k_hit(&probs, rel.index(), 3) as u8 as f64);
        }
        if let Some(gens) = &pass.gens {
            let g = &gens[p];
            let refs: Vec<String> = rec.variants.iter().map(|v| v.text.clone()).collect();
            s.insert(Metric::Bleu1, bleu_n(g, &refs, 1)?);
            s.insert(Metric::Bleu2, bleu_n(g, &refs, 2)?);
            s.insert(Metric::Rouge1, rouge1_recall(g, &rec.stimulus_text));
            let hit = |task, truth: usize| -> Result<f64> { Ok((judge.classify(g, task)? == Some(truth)) as u8 as f64) };
            s.insert(Metric::JudgeCorpusAcc, hit(JudgeTask::Corpus, rec.corpus.index())?);
            if let Some(sent) = rec.sentiment {
                s.insert(Metric::JudgeSentimentAcc, hit(JudgeTask::Sentiment, sent.index())?);
            }
            if let Some(rel) = rec.relation {
                s.insert(Metric::JudgeRelationAcc, hit(JudgeTask::Relation, rel.index())?);
            }
        }
    }
    Ok(out)
}

fn aggregate(group: String, subject: String, samples: &[&SampleEval], padded: usize) -> Row {
    let agg = |pick: &dyn Fn(&SampleEval) -> &Scores| {
        let mut s = Scores::new();
        for m in Metric::ALL {
            let v: Vec<f64> = samples.iter().filter_map(|e| pick(e).get(&m).copied()).collect();
            if !v.is_empty() {
                s.insert(m, mean(&v));
            }
        }
        s
    };
    Row {
        group,
        subject,
        n: samples.len(),
        padded_texts: padded,
        eeg: agg(&|e| &e.eeg),
        noise: agg(&|e| &e.noise),
    }
}

/// Full evaluation of `ids` with paired noise-input metrics. With
/// `noise_only`, the EEG columns are left empty.
pub fn evaluate(
    model: &GlimModel,
    lm: &FrozenLm,
    tok: &Tokenizer,
    dataset: &Dataset,
    ids: &[usize],
    cfg: &EvalConfig,
    judge: &dyn Judge,
    noise_only: bool,
) -> Result<EvalReport> {
    if ids.is_empty() {
        return Err(GlimError::config("nothing to evaluate"));
    }
    let mut bank = TextBank::build(lm, tok, &dataset.records)?;
    let mut prompts_of = |texts: Vec<Vec<String>>| -> Result<Vec<Vec<usize>>> {
        texts.iter().map(|t| bank.extend(lm, tok, t)).collect()
    };
    let corpus_e = prompts_of(Corpus::ALL.iter().map(|&c| corpus_label_texts(c)).collect())?;
    let sent_e = prompts_of(Sentiment::ALL.iter().map(|&c| sentiment_label_texts(c)).collect())?;
    let rel_e = prompts_of(Relation::ALL.iter().map(|&c| relation_label_texts(c)).collect())?;
    let all: Vec<usize> = (0..bank.latents.len()).collect();
    let mut e_bank = Vec::with_capacity(all.len());
    for chunk in all.chunks(64) {
        e_bank.extend(to_rows(&model.text_embed(&bank, chunk)?)?);
    }
    let pick = |classes: &[Vec<usize>]| classes.iter().map(|idx| class_vector(idx.iter().map(|&i| &e_bank[i]))).collect::<Vec<_>>();
    let labels = Labels {
        corpus: pick(&corpus_e),
        sentiment: pick(&sent_e),
        relation: pick(&rel_e),
    };
    let e_y = &e_bank[..dataset.records.len()];
    let groups = retrieval_groups(dataset, ids, cfg.group_size, cfg.distractor_seed);
    let prompts: Vec<DomainPrompt> = ids.iter().map(|&i| dataset.sample(i).prompt).collect();

    let eeg = if noise_only {
        None
    } else {
        let trials: Vec<EegTrial> = ids.iter().map(|&i| dataset.sample(i).trial.clone()).collect();
        let pass = run_pass(model, lm, tok, &trials, &prompts, cfg)?;
        let scores = score_pass(dataset, ids, &pass, &groups, e_y, &labels, judge)?;
        Some((pass, scores))
    };
    let mut noise_scores: Vec<Vec<Scores>> = Vec::new();
    let mut noise_gens = None;
    for rep in 0..cfg.noise_repeats.max(1) {
        let trials = ids
            .iter()
            .map(|&i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.noise_seed ^ ((rep as u64) << 32), i as u64));
                noise_trial(&dataset.sample(i).trial, &mut rng, cfg.noise_matched)
            })
            .collect::<Result<Vec<_>>>()?;
        let pass = run_pass(model, lm, tok, &trials, &prompts, cfg)?;
        noise_scores.push(score_pass(dataset, ids, &pass, &groups, e_y, &labels, judge)?);
        if rep == 0 {
            noise_gens = pass.gens;
        }
    }
    let mut samples = Vec::with_capacity(ids.len());
    for (p, &id) in ids.iter().enumerate() {
        let s = dataset.sample(id);
        let mut noise = Scores::new();
        for m in Metric::ALL {
            let v: Vec<f64> = noise_scores.iter().filter_map(|r| r[p].get(&m).copied()).collect();
            if !v.is_empty() {
                noise.insert(m, mean(&v));
            }
        }
        let subject = s
            .prompt
            .subject
            .map(|i| dataset.dictionaries.subjects[i as usize].clone())
            .unwrap_or_else(|| "UNKNOWN".into());
        samples.push(SampleEval {
            id,
            record: s.record,
            group: dataset.records[s.record].group.name().to_string(),
            subject,
            generation: eeg.as_ref().and_then(|(pass, _)| pass.gens.as_ref().map(|g| g[p].clone())),
            noise_generation: noise_gens.as_ref().map(|g| g[p].clone()),
            eeg: eeg.as_ref().map(|(_, sc)| sc[p].clone()).unwrap_or_default(),
            noise,
        });
    }
    let mut padded: BTreeMap<(String, String), usize> = BTreeMap::new();
    for g in &groups {
        let first = &samples[g.members[0]];
        *padded.entry((first.group.clone(), first.subject.clone())).or_default() += g.distractors.len();
    }
    let mut keyed: BTreeMap<(String, String), Vec<&SampleEval>> = BTreeMap::new();
    for s in &samples {
        keyed.entry((s.group.clone(), s.subject.clone())).or_default().push(s);
    }
    let rows: Vec<Row> = keyed
        .iter()
        .map(|(k, v)| aggregate(k.0.clone(), k.1.clone(), v, padded.get(k).copied().unwrap_or(0)))
        .collect();
    let overall = aggregate(
        "all".into(),
        "all".into(),
        &samples.iter().collect::<Vec<_>>(),
        padded.values().sum(),
    );
    let variants = if cfg.generate {
        variant_scores(dataset, &samples)?
    } else {
        Vec::new()
    };
    Ok(EvalReport {
        rows,
        overall,
        samples,
        variants,
    })
}

/// BLEU-1 of each generation against the references of one variant type.
pub fn variant_scores(dataset: &Dataset, samples: &[SampleEval]) -> Result<Vec<VariantScores>> {
    let mut out = Vec::new();
    for tag in VariantType::ALL {
        let (mut eeg, mut noise) = (Vec::new(), Vec::new());
        for s in samples {
            let refs: Vec<String> = dataset.records[s.record]
                .variants
                .iter()
                .filter(|v| v.tag == tag)
                .map(|v| v.text.clone())
                .collect();
            if refs.is_empty() {
                continue;
            }
            if let Some(g) = &s.generation {
                eeg.push(bleu_n(g, &refs, 1)?);
            }
            if let Some(g) = &s.noise_generation {
                noise.push(bleu_n(g, &refs, 1)?);
            }
        }
        out.push(VariantScores { tag, eeg, noise });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleRate;

    #[test]
    fn noise_keeps_the_validity_mask() {
        let t = EegTrial::from_valid((0..300).map(|i| i as f32).collect(), 100, 3, SampleRate::hz(128)).unwrap();
        let n = noise_trial(&t, &mut ChaCha8Rng::seed_from_u64(1), false).unwrap();
        assert_eq!((n.valid_time_len(), n.valid_channels()), (100, 3));
        assert_ne!(n.valid_region(), t.valid_region());
        let m = noise_trial(&t, &mut ChaCha8Rng::seed_from_u64(1), true).unwrap();
        let col0: Vec<f64> = (0..100).map(|i| m.get(i, 0) as f64).collect();
        let mean = col0.iter().sum::<f64>() / 100.0;
        assert!((mean - 148.5).abs() < 30.0);
    }

    #[test]
    fn metric_keys_round_trip() {
        for m in Metric::ALL {
            assert_eq!(Metric::from_key(m.key()), Some(m));
        }
    }
}
