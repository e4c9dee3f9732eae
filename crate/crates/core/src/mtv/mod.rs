//! Multiple text variants: eight paraphrases per stimulus, two each of
//! lexical simplification, semantic clarity and syntax simplification, plus
//! one general rewrite and one general simplification.

mod http;

pub use http::{HttpConfig, HttpParaphraser};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Group, Relation, SampleRecord, Sentiment, TextVariant};
use crate::error::{GlimError, Result};
use crate::synth::grammar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantType {
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "SC")]
    Sc,
    #[serde(rename = "SS")]
    Ss,
    #[serde(rename = "GR")]
    Gr,
    #[serde(rename = "GS")]
    Gs,
}

impl VariantType {
    pub const ALL: [VariantType; 5] = [VariantType::Ls, VariantType::Sc, VariantType::Ss, VariantType::Gr, VariantType::Gs];

    pub fn name(self) -> &'static str {
        match self {
            VariantType::Ls => "LS",
            VariantType::Sc => "SC",
            VariantType::Ss => "SS",
            VariantType::Gr => "GR",
            VariantType::Gs => "GS",
        }
    }

    pub fn count(self) -> usize {
        match self {
            VariantType::Ls | VariantType::Sc | VariantType::Ss => 2,
            VariantType::Gr | VariantType::Gs => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(s))
    }
}

/// Number of variants per stimulus.
pub const K_VARIANTS: usize = 8;

/// Tags in taxonomy order: LS, LS, SC, SC, SS, SS, GR, GS.
pub fn variant_tags() -> Vec<VariantType> {
    VariantType::ALL
        .iter()
        .flat_map(|&t| std::iter::repeat_n(t, t.count()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VariantSpec {
    pub kind: VariantType,
    pub template: String,
}

impl VariantSpec {
    pub fn new(kind: VariantType) -> Self {
        let template = match kind {
            VariantType::Ls => "..., focusing on the choice of words used in the sentence, such as using simpler and more common words, avoiding jargon and technical terms.",
            VariantType::Sc => "..., ensuring the meaning of sentence is clear and unambiguous, such as limiting the use of pronouns, completing the missing subject or object.",
            VariantType::Ss => "..., altering the structure of sentence to make it easier to understand, such as using active voice, reducing clauses to phrases.",
            VariantType::Gr => "To English: ...",
            VariantType::Gs => "Summarize: ...",
        };
        VariantSpec {
            kind,
            template: template.to_string(),
        }
    }

    pub fn count(&self) -> usize {
        self.kind.count()
    }
}

/// Label hints passed to the paraphraser so it keeps the core semantics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantLabels {
    pub group: Group,
    pub sentiment: Option<Sentiment>,
    pub relation: Option<Relation>,
}

impl VariantLabels {
    pub fn of(record: &SampleRecord) -> Self {
        VariantLabels {
            group: record.group,
            sentiment: record.sentiment,
            relation: record.relation,
        }
    }
}

pub fn build_instruction(spec: &VariantSpec, labels: &VariantLabels) -> Result<String> {
    let group = labels.group;
    if group.has_sentiment() && labels.sentiment.is_none() {
        return Err(GlimError::config(format!("group {group} requires a sentiment label")));
    }
    if group.has_relation() && labels.relation.is_none() {
        return Err(GlimError::config(format!("group {group} requires a relation label")));
    }
    match spec.kind {
        VariantType::Gr => return Ok("To English: ".into()),
        VariantType::Gs => return Ok("Summarize: ".into()),
        _ => {}
    }
    let body = spec.template.trim_start_matches("...").trim_start_matches(',').trim();
    let mut out = format!("Rewrite the following sentence, {body}");
    if let Some(s) = labels.sentiment {
        out.push_str(&format!(" Keep the {} sentiment.", s.name()));
    }
    match labels.relation {
        Some(r) => out.push_str(&format!(" Keep the relation type: {}.", r.name())),
        None if group.corpus() == crate::data::Corpus::Biography => {
            let names: Vec<&str> = Relation::ALL.iter().map(|r| r.name()).collect();
            out.push_str(&format!(" Candidate relation types: {}.", names.join(", ")));
        }
        None => {}
    }
    Ok(out)
}

/// Produces the variants of one type for a sentence.
pub trait Paraphraser {
    fn paraphrase(&self, text: &str, spec: &VariantSpec, instruction: &str, seed: u64) -> Result<Vec<String>>;
}

/// Deterministic paraphraser for sentences of the synthetic grammar.
#[derive(Clone, Copy, Debug, Default)]
pub struct BuiltinParaphraser;

/// Whitespace and casing normalization; content words are untouched.
pub fn normalize(text: &str) -> String {
    let joined = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut out = grammar::capitalize(&joined);
    if !out.is_empty() && !out.ends_with(['.', '!', '?']) {
        out.push('.');
    }
    out
}

impl Paraphraser for BuiltinParaphraser {
    fn paraphrase(&self, text: &str, spec: &VariantSpec, _instruction: &str, seed: u64) -> Result<Vec<String>> {
        if spec.kind == VariantType::Gr {
            return Ok(vec![normalize(text)]);
        }
        let frame = grammar::parse(text)
            .ok_or_else(|| GlimError::Unsupported(format!("builtin paraphraser cannot parse {text:?}")))?;
        let out = match spec.kind {
            VariantType::Ls => (0..spec.count() as u64)
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ i);
                    frame.simplified(&mut rng)
                })
                .collect(),
            VariantType::Sc => vec![frame.explicit(0), frame.explicit(1)],
            VariantType::Ss => vec![frame.flattened(0), frame.flattened(1)],
            VariantType::Gs => vec![frame.head_clause()],
            VariantType::Gr => unreachable!(),
        };
        Ok(out)
    }
}

/// Builds the eight tagged variants in taxonomy order. A failing paraphraser
/// is replaced by the builtin engine for that variant type, with a warning.
pub fn generate_variants(
    text: &str,
    labels: &VariantLabels,
    paraphraser: &dyn Paraphraser,
    seed: u64,
) -> Result<Vec<TextVariant>> {
    let mut out = Vec::with_capacity(K_VARIANTS);
    for kind in VariantType::ALL {
        let spec = VariantSpec::new(kind);
        let instruction = build_instruction(&spec, labels)?;
        let texts = match paraphraser.paraphrase(text, &spec, &instruction, seed) {
            Ok(t) if t.len() == spec.count() && t.iter().all(|s| !s.trim().is_empty()) => t,
            Ok(_) => {
                log::warn!("paraphraser returned an unusable {} answer; using builtin", kind.name());
                BuiltinParaphraser.paraphrase(text, &spec, &instruction, seed)?
            }
            Err(e) => {
                log::warn!("paraphraser failed for {}: {e}; using builtin", kind.name());
                BuiltinParaphraser.paraphrase(text, &spec, &instruction, seed)?
            }
        };
        out.extend(texts.into_iter().map(|text| TextVariant { tag: kind, text }));
    }
    Ok(out)
}

/// Rebuilds the variants of every record with `paraphraser`; the seed of
/// record `i` is `derive_seed(master_seed, i)`.
pub fn regenerate_variants(records: &mut [SampleRecord], paraphraser: &dyn Paraphraser, master_seed: u64) -> Result<()> {
    for (i, r) in records.iter_mut().enumerate() {
        let seed = crate::synth::derive_seed(master_seed, i as u64);
        r.variants = generate_variants(&r.stimulus_text, &VariantLabels::of(r), paraphraser, seed)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::grammar::{extract_labels, Frame};

    fn labels() -> VariantLabels {
        VariantLabels {
            group: Group::I,
            sentiment: Some(Sentiment::Positive),
            relation: None,
        }
    }

    #[test]
    fn instructions_carry_the_fixed_templates() {
        let l = labels();
        assert!(build_instruction(&VariantSpec::new(VariantType::Gr), &l).unwrap().starts_with("To English: "));
        assert!(build_instruction(&VariantSpec::new(VariantType::Gs), &l).unwrap().starts_with("Summarize: "));
        let ls = build_instruction(&VariantSpec::new(VariantType::Ls), &l).unwrap();
        assert!(ls.contains("simpler and more common words"));
        assert!(ls.contains("positive"));
    }

    #[test]
    fn missing_required_labels_are_errors() {
        let l = VariantLabels {
            group: Group::I,
            sentiment: None,
            relation: None,
        };
        assert!(build_instruction(&VariantSpec::new(VariantType::Ls), &l).is_err());
        let l = VariantLabels {
            group: Group::III,
            sentiment: None,
            relation: None,
        };
        assert!(build_instruction(&VariantSpec::new(VariantType::Gr), &l).is_err());
    }

    #[test]
    fn variant_counts_total_eight() {
        assert_eq!(VariantType::ALL.iter().map(|t| t.count()).sum::<usize>(), K_VARIANTS);
        assert_eq!(variant_tags().len(), K_VARIANTS);
    }

    #[test]
    fn builtin_variants_are_deterministic_and_label_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..300 {
            let (frame, group) = if i % 2 == 0 {
                (Frame::sample_movie(&mut rng, Sentiment::ALL[i % 3]), Group::I)
            } else {
                (Frame::sample_bio(&mut rng, Relation::ALL[i % 9]), Group::III)
            };
            let planted = frame.labels();
            let l = VariantLabels {
                group,
                sentiment: planted.sentiment,
                relation: planted.relation,
            };
            let text = frame.render();
            let a = generate_variants(&text, &l, &BuiltinParaphraser, i as u64).unwrap();
            let b = generate_variants(&text, &l, &BuiltinParaphraser, i as u64).unwrap();
            assert_eq!(a, b);
            let tags: Vec<_> = a.iter().map(|v| v.tag).collect();
            assert_eq!(tags, variant_tags());
            for v in &a {
                assert!(!v.text.is_empty());
                assert_eq!(extract_labels(&v.text), planted, "{}", v.text);
            }
            assert_eq!(a[6].text, text);
        }
    }

    #[test]
    fn gr_only_normalizes() {
        assert_eq!(normalize("  the film   is dull "), "The film is dull.");
    }

    struct Broken;
    impl Paraphraser for Broken {
        fn paraphrase(&self, _: &str, spec: &VariantSpec, _: &str, _: u64) -> Result<Vec<String>> {
            match spec.kind {
                VariantType::Sc => Err(GlimError::Http("down".into())),
                VariantType::Ss => Ok(vec![String::new(), "x".into()]),
                _ => Ok(vec!["ok".to_string(); spec.count()]),
            }
        }
    }

    #[test]
    fn failing_client_falls_back_without_dropping_variants() {
        let text = "The film is superb, and the acting is compelling.";
        let v = generate_variants(text, &labels(), &Broken, 1).unwrap();
        assert_eq!(v.len(), K_VARIANTS);
        assert_eq!(v[0].text, "ok");
        assert_ne!(v[2].text, "ok");
        assert!(v.iter().all(|x| !x.text.is_empty()));
    }
}
