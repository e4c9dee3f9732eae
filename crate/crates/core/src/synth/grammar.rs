//! Template grammar for the synthetic corpus.
//!
//! Sentences are rendered from [`Frame`]s: a template id plus one lexicon
//! entry per slot. Movie-review frames plant a sentiment through their
//! adjectives; biography frames plant a relation through the relation
//! object (objects are unique to one relation). Templates are invertible:
//! [`parse`] recovers the frame from a rendered sentence, which is what the
//! built-in paraphraser relies on. [`extract_labels`] is a separate keyword
//! re-parser used to check that paraphrases keep their labels.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::Rng;
use regex::Regex;

use crate::data::{Corpus, Relation, Sentiment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Noun,
    Adj,
    Aspect,
    Adj2,
    Director,
    Person,
    Pronoun,
    RelActive,
    RelFormal,
    Object,
    Profession,
    Place,
    Year,
}

pub struct Entry {
    pub text: &'static str,
    /// Simpler, more common alternatives (lexical simplification).
    pub simple: &'static [&'static str],
    /// Sentiment index, relation index or gender, depending on the slot.
    pub class: usize,
}

const fn e(text: &'static str, simple: &'static [&'static str], class: usize) -> Entry {
    Entry { text, simple, class }
}

const NOUNS: &[Entry] = &[
    e("film", &[], 0),
    e("movie", &[], 0),
    e("picture", &["movie", "film"], 0),
    e("feature", &["film", "movie"], 0),
];

// class = Sentiment index: 0 neutral, 1 negative, 2 positive
const ADJECTIVES: &[Entry] = &[
    e("conventional", &["ordinary", "average"], 0),
    e("unremarkable", &["plain", "average"], 0),
    e("modest", &["simple", "ordinary"], 0),
    e("predictable", &["expected", "plain"], 0),
    e("dreadful", &["awful", "bad"], 1),
    e("tedious", &["boring", "dull"], 1),
    e("incoherent", &["confusing", "messy"], 1),
    e("lifeless", &["flat", "dull"], 1),
    e("magnificent", &["great", "wonderful"], 2),
    e("delightful", &["lovely", "charming"], 2),
    e("superb", &["excellent", "great"], 2),
    e("compelling", &["gripping", "strong"], 2),
];

const ASPECTS: &[Entry] = &[
    e("screenplay", &["script", "story"], 0),
    e("cinematography", &["camera work", "photography"], 0),
    e("soundtrack", &["music"], 0),
    e("acting", &[], 0),
    e("editing", &["cutting"], 0),
];

const DIRECTORS: &[Entry] = &[
    e("Anna Berg", &[], 0),
    e("Paul Reyes", &[], 0),
    e("Mira Cole", &[], 0),
    e("Jon Park", &[], 0),
    e("Lena Ruiz", &[], 0),
];

// class = gender: 0 he, 1 she
const PERSONS: &[Entry] = &[
    e("Albert Novak", &[], 0),
    e("Thomas Reed", &[], 0),
    e("Victor Hale", &[], 0),
    e("Samuel Ortiz", &[], 0),
    e("George Lind", &[], 0),
    e("Daniel Moore", &[], 0),
    e("Clara Novak", &[], 1),
    e("Helen Brooks", &[], 1),
    e("Maria Ortiz", &[], 1),
    e("Ingrid Lind", &[], 1),
    e("Ruth Moore", &[], 1),
    e("Alice Grant", &[], 1),
];

const PRONOUNS: &[Entry] = &[e("he", &[], 0), e("she", &[], 1)];

// Indexed by Relation::index().
const REL_ACTIVE: &[Entry] = &[
    e("received", &["won", "got"], 0),
    e("graduated from", &["studied at", "went to school at"], 1),
    e("worked for", &["had a job at", "worked at"], 2),
    e("founded", &["started", "set up"], 3),
    e("served as", &["worked as", "was"], 4),
    e("was a citizen of", &["came from", "was a national of"], 5),
    e("joined", &["became part of", "was in"], 6),
    e("traveled to", &["went to", "visited"], 7),
    e("married", &["wed"], 8),
];

const REL_FORMAL: &[Entry] = &[
    e("was awarded", &["won", "got"], 0),
    e("was educated at", &["studied at", "went to school at"], 1),
    e("was employed by", &["had a job at", "worked at"], 2),
    e("was the founder of", &["started", "set up"], 3),
    e("was appointed", &["worked as", "was"], 4),
    e("held citizenship of", &["came from", "was a national of"], 5),
    e("was a member of", &["became part of", "was in"], 6),
    e("paid a visit to", &["went to", "visited"], 7),
    e("was married to", &["wed"], 8),
];

const OBJECTS: &[Entry] = &[
    e("the Nobel Prize", &[], 0),
    e("the Pulitzer Prize", &[], 0),
    e("the Medal of Honor", &[], 0),
    e("the Turing Award", &[], 0),
    e("Harvard University", &[], 1),
    e("Oxford University", &[], 1),
    e("Yale University", &[], 1),
    e("the Sorbonne", &[], 1),
    e("General Electric", &[], 2),
    e("the Ford Motor Company", &[], 2),
    e("Siemens", &[], 2),
    e("the Boeing Company", &[], 2),
    e("a publishing house", &[], 3),
    e("a research institute", &[], 3),
    e("a small bank", &[], 3),
    e("a theater company", &[], 3),
    e("mayor of the city", &[], 4),
    e("chief justice", &[], 4),
    e("head coach", &[], 4),
    e("chief engineer", &[], 4),
    e("France", &[], 5),
    e("Canada", &[], 5),
    e("Brazil", &[], 5),
    e("Japan", &[], 5),
    e("the Liberal Party", &[], 6),
    e("the Labour Party", &[], 6),
    e("the Green Party", &[], 6),
    e("the Conservative Party", &[], 6),
    e("Egypt", &[], 7),
    e("India", &[], 7),
    e("Mexico", &[], 7),
    e("Norway", &[], 7),
    e("Anna Weiss", &[], 8),
    e("Peter Blum", &[], 8),
    e("Laura Stein", &[], 8),
    e("Martin Kraus", &[], 8),
];

const PROFESSIONS: &[Entry] = &[
    e("lawyer", &[], 0),
    e("journalist", &["reporter"], 0),
    e("physician", &["doctor"], 0),
    e("painter", &["artist"], 0),
    e("teacher", &[], 0),
    e("banker", &[], 0),
];

const PLACES: &[Entry] = &[
    e("Vienna", &[], 0),
    e("Boston", &[], 0),
    e("Lyon", &[], 0),
    e("Dublin", &[], 0),
];

const YEARS: &[Entry] = &[
    e("1921", &[], 0),
    e("1935", &[], 0),
    e("1948", &[], 0),
    e("1952", &[], 0),
    e("1967", &[], 0),
];

pub fn entries(slot: Slot) -> &'static [Entry] {
    match slot {
        Slot::Noun => NOUNS,
        Slot::Adj | Slot::Adj2 => ADJECTIVES,
        Slot::Aspect => ASPECTS,
        Slot::Director => DIRECTORS,
        Slot::Person => PERSONS,
        Slot::Pronoun => PRONOUNS,
        Slot::RelActive => REL_ACTIVE,
        Slot::RelFormal => REL_FORMAL,
        Slot::Object => OBJECTS,
        Slot::Profession => PROFESSIONS,
        Slot::Place => PLACES,
        Slot::Year => YEARS,
    }
}

#[derive(Clone, Copy, Debug)]
enum Piece {
    Lit(&'static str),
    S(Slot),
}

use Piece::{Lit, S};

struct Template {
    corpus: Corpus,
    pieces: &'static [Piece],
}

const TEMPLATES: &[Template] = &[
    Template {
        corpus: Corpus::MovieReview,
        pieces: &[Lit("the "), S(Slot::Noun), Lit(" is "), S(Slot::Adj), Lit(", and the "), S(Slot::Aspect), Lit(" is "), S(Slot::Adj2), Lit(".")],
    },
    Template {
        corpus: Corpus::MovieReview,
        pieces: &[Lit("with its "), S(Slot::Adj2), Lit(" "), S(Slot::Aspect), Lit(", this "), S(Slot::Noun), Lit(" by "), S(Slot::Director), Lit(" is "), S(Slot::Adj), Lit(".")],
    },
    Template {
        corpus: Corpus::MovieReview,
        pieces: &[Lit("the "), S(Slot::Aspect), Lit(" that "), S(Slot::Director), Lit(" gave the "), S(Slot::Noun), Lit(" is "), S(Slot::Adj2), Lit(", and it is "), S(Slot::Adj), Lit(" overall.")],
    },
    Template {
        corpus: Corpus::MovieReview,
        pieces: &[Lit("this "), S(Slot::Noun), Lit(" was directed by "), S(Slot::Director), Lit(", and it feels "), S(Slot::Adj), Lit(".")],
    },
    Template {
        corpus: Corpus::Biography,
        pieces: &[S(Slot::Person), Lit(" "), S(Slot::RelActive), Lit(" "), S(Slot::Object), Lit(".")],
    },
    Template {
        corpus: Corpus::Biography,
        pieces: &[Lit("born in "), S(Slot::Place), Lit(" in "), S(Slot::Year), Lit(", "), S(Slot::Person), Lit(" later "), S(Slot::RelActive), Lit(" "), S(Slot::Object), Lit(".")],
    },
    Template {
        corpus: Corpus::Biography,
        pieces: &[S(Slot::Person), Lit(" was a "), S(Slot::Profession), Lit(" who "), S(Slot::RelActive), Lit(" "), S(Slot::Object), Lit(".")],
    },
    Template {
        corpus: Corpus::Biography,
        pieces: &[S(Slot::Person), Lit(" trained as a "), S(Slot::Profession), Lit(", and later "), S(Slot::Pronoun), Lit(" "), S(Slot::RelActive), Lit(" "), S(Slot::Object), Lit(".")],
    },
    Template {
        corpus: Corpus::Biography,
        pieces: &[S(Slot::Person), Lit(" "), S(Slot::RelFormal), Lit(" "), S(Slot::Object), Lit(" in "), S(Slot::Year), Lit(".")],
    },
];

/// A parsed or sampled sentence: template plus one lexicon index per slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub template: usize,
    pub slots: BTreeMap<Slot, usize>,
}

/// Labels a sentence carries according to its frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Labels {
    pub corpus: Option<Corpus>,
    pub sentiment: Option<Sentiment>,
    pub relation: Option<Relation>,
}

pub fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn pick<R: Rng + ?Sized>(rng: &mut R, entries: &[Entry], class: Option<usize>) -> usize {
    let candidates: Vec<usize> = (0..entries.len())
        .filter(|&i| class.is_none_or(|c| entries[i].class == c))
        .collect();
    candidates[rng.random_range(0..candidates.len())]
}

impl Frame {
    pub fn corpus(&self) -> Corpus {
        TEMPLATES[self.template].corpus
    }

    fn word(&self, slot: Slot) -> Option<&'static str> {
        self.slots.get(&slot).map(|&i| entries(slot)[i].text)
    }

    fn entry(&self, slot: Slot) -> Option<&'static Entry> {
        self.slots.get(&slot).map(|&i| &entries(slot)[i])
    }

    pub fn labels(&self) -> Labels {
        Labels {
            corpus: Some(self.corpus()),
            sentiment: self.entry(Slot::Adj).map(|e| Sentiment::ALL[e.class]),
            relation: self.entry(Slot::Object).map(|e| Relation::ALL[e.class]),
        }
    }

    /// Samples a movie-review frame with the given sentiment.
    pub fn sample_movie<R: Rng + ?Sized>(rng: &mut R, sentiment: Sentiment) -> Frame {
        let template = rng.random_range(0..4);
        Self::fill(rng, template, Some(sentiment.index()), None)
    }

    /// Samples a biography frame planting the given relation.
    pub fn sample_bio<R: Rng + ?Sized>(rng: &mut R, relation: Relation) -> Frame {
        let template = 4 + rng.random_range(0..5);
        Self::fill(rng, template, None, Some(relation.index()))
    }

    fn fill<R: Rng + ?Sized>(rng: &mut R, template: usize, sentiment: Option<usize>, relation: Option<usize>) -> Frame {
        let mut slots = BTreeMap::new();
        for piece in TEMPLATES[template].pieces {
            if let S(slot) = *piece {
                let class = match slot {
                    Slot::Adj | Slot::Adj2 => sentiment,
                    Slot::RelActive | Slot::RelFormal | Slot::Object => relation,
                    _ => None,
                };
                if slot != Slot::Pronoun {
                    slots.insert(slot, pick(rng, entries(slot), class));
                }
            }
        }
        if TEMPLATES[template].pieces.iter().any(|p| matches!(p, S(Slot::Pronoun))) {
            let gender = PERSONS[slots[&Slot::Person]].class;
            slots.insert(Slot::Pronoun, gender);
        }
        Frame { template, slots }
    }

    /// Renders the frame's own template.
    pub fn render(&self) -> String {
        self.render_with(&BTreeMap::new())
    }

    fn render_with(&self, overrides: &BTreeMap<Slot, String>) -> String {
        let mut out = String::new();
        for piece in TEMPLATES[self.template].pieces {
            match *piece {
                Lit(s) => out.push_str(s),
                S(slot) => match overrides.get(&slot) {
                    Some(s) => out.push_str(s),
                    None => out.push_str(self.word(slot).unwrap_or("")),
                },
            }
        }
        capitalize(&out)
    }

    /// Same template, with every slot that has simpler alternatives replaced
    /// by a randomly chosen one.
    pub fn simplified<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let mut overrides = BTreeMap::new();
        for (&slot, &i) in &self.slots {
            let entry = &entries(slot)[i];
            if !entry.simple.is_empty() {
                let choice = entry.simple[rng.random_range(0..entry.simple.len())];
                overrides.insert(slot, choice.to_string());
            }
        }
        self.render_with(&overrides)
    }

    /// Active-voice relation phrase for a biography frame.
    fn active_verb(&self) -> &'static str {
        let rel = self.entry(Slot::Object).map(|e| e.class).unwrap_or(0);
        REL_ACTIVE[rel].text
    }

    /// Variants with every referent spelled out (no pronouns, explicit
    /// subject and object). `which` selects one of two phrasings.
    pub fn explicit(&self, which: usize) -> String {
        match self.corpus() {
            Corpus::MovieReview => {
                let noun = self.word(Slot::Noun).unwrap_or("film");
                let adj = self.word(Slot::Adj).unwrap_or("");
                let by = self.word(Slot::Director).map(|d| format!(" by {d}")).unwrap_or_default();
                let tail = match (self.word(Slot::Aspect), self.word(Slot::Adj2)) {
                    (Some(a), Some(b)) if which == 0 => format!(", and the {a} of the {noun} is {b}"),
                    (Some(a), Some(b)) => format!(", and the {noun} has {b} {a}"),
                    _ => String::new(),
                };
                if which == 0 {
                    format!("The {noun}{by} is {adj}{tail}.")
                } else {
                    match self.word(Slot::Director) {
                        Some(d) => format!("{d} made the {noun}, and the {noun} is {adj}{tail}."),
                        None => format!("The {noun} is {adj}{tail}."),
                    }
                }
            }
            Corpus::Biography => {
                let person = self.word(Slot::Person).unwrap_or("");
                let object = self.word(Slot::Object).unwrap_or("");
                let verb = self.active_verb();
                if which == 0 {
                    match (self.word(Slot::Profession), self.word(Slot::Place)) {
                        (Some(p), _) => format!("{person}, a {p}, {verb} {object}."),
                        (None, Some(place)) => format!("{person} was born in {place}, and {person} {verb} {object}."),
                        _ => format!("{person} {verb} {object}."),
                    }
                } else {
                    format!("{person} is the person who {verb} {object}.")
                }
            }
        }
    }

    /// Active voice, reduced clauses. `which` selects one of two phrasings.
    pub fn flattened(&self, which: usize) -> String {
        match self.corpus() {
            Corpus::MovieReview => {
                let noun = self.word(Slot::Noun).unwrap_or("film");
                let adj = self.word(Slot::Adj).unwrap_or("");
                if which == 0 {
                    let mut s = format!("The {noun} is {adj}.");
                    if let (Some(a), Some(b)) = (self.word(Slot::Aspect), self.word(Slot::Adj2)) {
                        s.push_str(&format!(" The {a} is {b}."));
                    }
                    if let Some(d) = self.word(Slot::Director) {
                        s.push_str(&format!(" {d} directed the {noun}."));
                    }
                    s
                } else {
                    match self.word(Slot::Director) {
                        Some(d) => format!("{d} made a {adj} {noun}."),
                        None => format!("This is a {adj} {noun}."),
                    }
                }
            }
            Corpus::Biography => {
                let person = self.word(Slot::Person).unwrap_or("");
                let object = self.word(Slot::Object).unwrap_or("");
                let verb = self.active_verb();
                if which == 0 {
                    let mut s = format!("{person} {verb} {object}.");
                    if let Some(p) = self.word(Slot::Profession) {
                        s.push_str(&format!(" {person} was a {p}."));
                    }
                    if let Some(place) = self.word(Slot::Place) {
                        s.push_str(&format!(" {person} was born in {place}."));
                    }
                    s
                } else {
                    let mut s = format!("{person} {verb} {object}");
                    if let Some(y) = self.word(Slot::Year) {
                        s.push_str(&format!(" in {y}"));
                    }
                    if let Some(p) = self.word(Slot::Profession) {
                        s.push_str(&format!(" as a {p}"));
                    }
                    s.push('.');
                    s
                }
            }
        }
    }

    /// The core statement alone.
    pub fn head_clause(&self) -> String {
        match self.corpus() {
            Corpus::MovieReview => format!(
                "The {} is {}.",
                self.word(Slot::Noun).unwrap_or("film"),
                self.word(Slot::Adj).unwrap_or("")
            ),
            Corpus::Biography => format!(
                "{} {} {}.",
                self.word(Slot::Person).unwrap_or(""),
                self.active_verb(),
                self.word(Slot::Object).unwrap_or("")
            ),
        }
    }
}

fn template_regexes() -> &'static Vec<Regex> {
    static CACHE: OnceLock<Vec<Regex>> = OnceLock::new();
    CACHE.get_or_init(|| {
        TEMPLATES
            .iter()
            .map(|t| {
                let mut pattern = String::from("^");
                for piece in t.pieces {
                    match *piece {
                        Lit(s) => pattern.push_str(&regex::escape(s)),
                        S(slot) => {
                            let mut forms: Vec<&str> = entries(slot).iter().map(|e| e.text).collect();
                            forms.sort_by_key(|f| std::cmp::Reverse(f.len()));
                            let alts: Vec<String> = forms.iter().map(|f| regex::escape(f)).collect();
                            pattern.push_str(&format!("({})", alts.join("|")));
                        }
                    }
                }
                pattern.push('$');
                Regex::new(&pattern).expect("template regex")
            })
            .collect()
    })
}

/// Recovers the frame of a sentence rendered from one of the templates.
pub fn parse(text: &str) -> Option<Frame> {
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut lowered = text.clone();
    if let Some(c) = text.chars().next() {
        lowered = c.to_lowercase().collect::<String>() + &text[c.len_utf8()..];
    }
    for (template, re) in template_regexes().iter().enumerate() {
        for candidate in [&text, &lowered] {
            let Some(caps) = re.captures(candidate) else { continue };
            let mut slots = BTreeMap::new();
            let mut ok = true;
            let slot_pieces = TEMPLATES[template].pieces.iter().filter_map(|p| match p {
                S(s) => Some(*s),
                Lit(_) => None,
            });
            for (k, slot) in slot_pieces.enumerate() {
                let found = &caps[k + 1];
                match entries(slot).iter().position(|e| e.text == found) {
                    Some(i) => {
                        if slots.insert(slot, i).is_some_and(|prev| prev != i) {
                            ok = false;
                        }
                    }
                    None => ok = false,
                }
            }
            if !ok {
                continue;
            }
            let frame = Frame { template, slots };
            if frame.is_consistent() {
                return Some(frame);
            }
        }
    }
    None
}

impl Frame {
    fn is_consistent(&self) -> bool {
        let class = |s: Slot| self.entry(s).map(|e| e.class);
        if let (Some(a), Some(b)) = (class(Slot::Adj), class(Slot::Adj2)) {
            if a != b {
                return false;
            }
        }
        if let Some(obj) = class(Slot::Object) {
            for verb in [Slot::RelActive, Slot::RelFormal] {
                if class(verb).is_some_and(|c| c != obj) {
                    return false;
                }
            }
        }
        if let (Some(p), Some(g)) = (class(Slot::Person), class(Slot::Pronoun)) {
            if p != g {
                return false;
            }
        }
        true
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn contains_phrase(haystack: &[String], phrase: &str) -> bool {
    let needle = words(phrase);
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle.as_slice())
}

fn all_forms(entry: &Entry) -> impl Iterator<Item = &'static str> + '_ {
    std::iter::once(entry.text).chain(entry.simple.iter().copied())
}

/// Keyword re-parser: recovers labels from any sentence built from the
/// lexicon, including paraphrases that no template produces.
pub fn extract_labels(text: &str) -> Labels {
    let w = words(text);
    let classes_in = |list: &[Entry]| {
        let mut found: Vec<usize> = list
            .iter()
            .filter(|e| all_forms(e).any(|f| contains_phrase(&w, f)))
            .map(|e| e.class)
            .collect();
        found.sort_unstable();
        found.dedup();
        found
    };
    let sentiment = match classes_in(ADJECTIVES).as_slice() {
        [c] => Some(Sentiment::ALL[*c]),
        _ => None,
    };
    let relation = match classes_in(OBJECTS).as_slice() {
        [c] => Some(Relation::ALL[*c]),
        _ => None,
    };
    let movie = [NOUNS, ASPECTS, DIRECTORS]
        .iter()
        .any(|list| list.iter().any(|e| all_forms(e).any(|f| contains_phrase(&w, f))));
    let bio = relation.is_some() || PERSONS.iter().any(|e| contains_phrase(&w, e.text));
    let corpus = match (movie, bio) {
        (true, false) => Some(Corpus::MovieReview),
        (false, true) => Some(Corpus::Biography),
        _ => None,
    };
    Labels {
        corpus,
        sentiment,
        relation,
    }
}

/// Every surface string the grammar and its paraphrases can emit: template
/// literals, lexicon forms and the fixed phrases of the paraphrase renderings.
pub fn surface_strings() -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    for t in TEMPLATES {
        for piece in t.pieces {
            if let Lit(s) = *piece {
                out.push(s);
            }
        }
    }
    let lists = [NOUNS, ADJECTIVES, ASPECTS, DIRECTORS, PERSONS, PRONOUNS, REL_ACTIVE, REL_FORMAL, OBJECTS, PROFESSIONS, PLACES, YEARS];
    for list in lists {
        for entry in list {
            out.extend(all_forms(entry));
        }
    }
    out.extend([
        "the of has made and directed was born in a this is as person who",
        "a review of a film about the movie, its acting and its story",
        "the life of a person: where he was born, where she worked and whom they married",
        "the film is good. the film is bad. the movie is okay.",
        "to english: summarize:",
    ]);
    out
}

/// Deterministic frame for label prompts: every slot takes the `k`-th entry
/// of its class-filtered lexicon.
fn label_frame(template: usize, sentiment: Option<usize>, relation: Option<usize>, k: usize) -> Frame {
    let mut slots = BTreeMap::new();
    for piece in TEMPLATES[template].pieces {
        if let S(slot) = *piece {
            let class = match slot {
                Slot::Adj | Slot::Adj2 => sentiment,
                Slot::RelActive | Slot::RelFormal | Slot::Object => relation,
                _ => None,
            };
            let pool: Vec<usize> = (0..entries(slot).len())
                .filter(|&i| class.is_none_or(|c| entries(slot)[i].class == c))
                .collect();
            if slot != Slot::Pronoun {
                slots.insert(slot, pool[k % pool.len()]);
            }
        }
    }
    if TEMPLATES[template].pieces.iter().any(|p| matches!(p, S(Slot::Pronoun))) {
        slots.insert(Slot::Pronoun, PERSONS[slots[&Slot::Person]].class);
    }
    Frame { template, slots }
}

fn templates_of(corpus: Corpus) -> impl Iterator<Item = usize> {
    (0..TEMPLATES.len()).filter(move |&t| TEMPLATES[t].corpus == corpus)
}

/// Zero-shot prompt ensembles: in-domain sentences whose embeddings are
/// averaged into one class vector.
pub fn corpus_label_texts(corpus: Corpus) -> Vec<String> {
    let mut out = Vec::new();
    for t in templates_of(corpus) {
        for k in 0..3 {
            out.push(label_frame(t, Some(k), Some(3 * k), k).render());
        }
    }
    out
}

pub fn sentiment_label_texts(sentiment: Sentiment) -> Vec<String> {
    let mut out = Vec::new();
    for t in templates_of(Corpus::MovieReview) {
        for k in 0..4 {
            out.push(label_frame(t, Some(sentiment.index()), None, k).render());
        }
    }
    out
}

pub fn relation_label_texts(relation: Relation) -> Vec<String> {
    let mut out = Vec::new();
    for t in templates_of(Corpus::Biography) {
        for k in 0..4 {
            out.push(label_frame(t, None, Some(relation.index()), k).render());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_frames(n: usize) -> Vec<Frame> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    Frame::sample_movie(&mut rng, Sentiment::ALL[i % 3])
                } else {
                    Frame::sample_bio(&mut rng, Relation::ALL[i % 9])
                }
            })
            .collect()
    }

    #[test]
    fn rendered_sentences_parse_back_to_their_frame() {
        for frame in sample_frames(500) {
            let text = frame.render();
            let parsed = parse(&text).unwrap_or_else(|| panic!("unparsed: {text}"));
            assert_eq!(parsed.render(), text);
            assert_eq!(parsed.labels(), frame.labels());
        }
    }

    #[test]
    fn keyword_labels_match_planted_labels() {
        for frame in sample_frames(500) {
            let planted = frame.labels();
            let texts = [
                frame.render(),
                frame.simplified(&mut ChaCha8Rng::seed_from_u64(1)),
                frame.explicit(0),
                frame.explicit(1),
                frame.flattened(0),
                frame.flattened(1),
                frame.head_clause(),
            ];
            for t in texts {
                let found = extract_labels(&t);
                assert_eq!(found.corpus, planted.corpus, "{t}");
                assert_eq!(found.sentiment, planted.sentiment, "{t}");
                assert_eq!(found.relation, planted.relation, "{t}");
            }
        }
    }

    #[test]
    fn pronoun_agrees_with_person() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let f = Frame::sample_bio(&mut rng, Relation::Visit);
            if let Some(&p) = f.slots.get(&Slot::Pronoun) {
                assert_eq!(p, PERSONS[f.slots[&Slot::Person]].class);
            }
        }
        assert!(parse("Albert Novak trained as a lawyer, and later she married Anna Weiss.").is_none());
    }

    #[test]
    fn foreign_text_does_not_parse() {
        assert!(parse("He was a man.").is_none());
        assert_eq!(extract_labels("nothing relevant here").corpus, None);
    }

    #[test]
    fn objects_and_adjective_forms_are_class_unique() {
        for list in [ADJECTIVES, OBJECTS] {
            for a in list {
                for b in list {
                    if a.class != b.class {
                        for fa in all_forms(a) {
                            assert!(all_forms(b).all(|fb| fb != fa), "{fa} shared across classes");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn label_prompts_carry_their_class() {
        for c in Corpus::ALL {
            for t in corpus_label_texts(c) {
                assert_eq!(parse(&t).map(|f| f.corpus()), Some(c), "{t}");
            }
        }
        for s in Sentiment::ALL {
            let texts = sentiment_label_texts(s);
            assert_eq!(texts.len(), 16);
            for t in texts {
                assert_eq!(extract_labels(&t).sentiment, Some(s), "{t}");
            }
        }
        for r in Relation::ALL {
            for t in relation_label_texts(r) {
                assert_eq!(extract_labels(&t).relation, Some(r), "{t}");
            }
        }
    }
}
