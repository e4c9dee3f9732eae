//! Classification of generated text into semantic categories.

use crate::data::{Corpus, Relation, Sentiment};
use crate::error::Result;
use crate::synth::grammar::extract_labels;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JudgeTask {
    Corpus,
    Sentiment,
    Relation,
}

impl JudgeTask {
    pub fn n_classes(self) -> usize {
        match self {
            JudgeTask::Corpus => Corpus::ALL.len(),
            JudgeTask::Sentiment => Sentiment::ALL.len(),
            JudgeTask::Relation => Relation::ALL.len(),
        }
    }
}

/// Returns a class index, or `None` when the text gives no verdict.
pub trait Judge {
    fn classify(&self, text: &str, task: JudgeTask) -> Result<Option<usize>>;
}

/// Deterministic judge built on the grammar's keyword re-parser.
pub struct KeywordJudge;

impl Judge for KeywordJudge {
    fn classify(&self, text: &str, task: JudgeTask) -> Result<Option<usize>> {
        let l = extract_labels(text);
        Ok(match task {
            JudgeTask::Corpus => l.corpus.map(Corpus::index),
            JudgeTask::Sentiment => l.sentiment.map(Sentiment::index),
            JudgeTask::Relation => l.relation.map(Relation::index),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_corpus, WorldConfig};

    #[test]
    fn keyword_judge_recovers_planted_labels() {
        let corpus = gen_corpus(&WorldConfig {
            n_sentences: 100,
            ..WorldConfig::default()
        })
        .unwrap();
        for r in corpus {
            let j = KeywordJudge;
            assert_eq!(j.classify(&r.stimulus_text, JudgeTask::Corpus).unwrap(), Some(r.corpus.index()));
            if let Some(s) = r.sentiment {
                assert_eq!(j.classify(&r.stimulus_text, JudgeTask::Sentiment).unwrap(), Some(s.index()));
            }
            if let Some(rel) = r.relation {
                assert_eq!(j.classify(&r.stimulus_text, JudgeTask::Relation).unwrap(), Some(rel.index()));
            }
        }
        assert_eq!(KeywordJudge.classify("zzz", JudgeTask::Corpus).unwrap(), None);
    }
}
