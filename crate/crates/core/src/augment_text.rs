//! Flip-aware weak text adaptation, EDA-style strong text augmentation, and
//! cosine-similarity filtering of strong candidates against the weak text.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment_image::AugmentationRecord;
use crate::embedder::{cosine_similarity, Embedder};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::types::Expression;

const BUNDLED_MIRROR: &str = include_str!("../assets/mirror.tsv");
const BUNDLED_SYNONYMS: &str = include_str!("../assets/synonyms.tsv");
const BUNDLED_STOPWORDS: &str = include_str!("../assets/stopwords.txt");

pub const DEFAULT_CANDIDATE_COUNT: usize = 10;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Word pairs swapped when the image is mirrored horizontally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionLexicon {
    mirror: HashMap<String, String>,
}

impl PositionLexicon {
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Self> {
        let mut mirror = HashMap::new();
        for (a, b) in pairs {
            let (a, b) = (a.as_ref().to_lowercase(), b.as_ref().to_lowercase());
            if a == b {
                return Err(Error::Config(format!("mirror pair maps {a:?} to itself")));
            }
            for (from, to) in [(&a, &b), (&b, &a)] {
                if let Some(prev) = mirror.insert(from.clone(), to.clone()) {
                    if &prev != to {
                        return Err(Error::Config(format!("{from:?} mirrors to both {prev:?} and {to:?}")));
                    }
                }
            }
        }
        Ok(Self { mirror })
    }

    /// `wordA<TAB>wordB` per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("mirror lexicon line {}: expected wordA<TAB>wordB", n + 1)))?;
            pairs.push((a.trim().to_string(), b.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn mirror(&self, word: &str) -> Option<&str> {
        self.mirror.get(word).map(String::as_str)
    }
}

impl Default for PositionLexicon {
    fn default() -> Self {
        Self::parse(BUNDLED_MIRROR).expect("bundled mirror lexicon parses")
    }
}

/// `word<TAB>syn1,syn2,...` per line, lowercase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: HashMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, syns) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("synonym lexicon line {}: expected word<TAB>syn1,syn2", n + 1)))?;
            let word = word.trim().to_lowercase();
            let syns: Vec<String> = syns
                .split(',')
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty() && *s != word && !s.contains(char::is_whitespace))
                .collect();
            if !syns.is_empty() {
                entries.insert(word, syns);
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn from_map(map: HashMap<String, Vec<String>>) -> Self {
        Self { entries: map }
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.entries.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SYNONYMS).expect("bundled synonym lexicon parses")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect(),
        )
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_STOPWORDS)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

/// Strong text op parameters (EDA convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdaParams {
    pub n_sr: usize,
    pub n_ri: usize,
    pub p_rd: f64,
}

impl Default for EdaParams {
    fn default() -> Self {
        Self {
            n_sr: 1,
            n_ri: 1,
            p_rd: 0.1,
        }
    }
}

/// Lexical resources used by the strong text ops.
#[derive(Debug, Clone, Default)]
pub struct TextResources {
    pub synonyms: SynonymLexicon,
    pub stopwords: StopWords,
}

impl TextResources {
    pub fn bundled() -> Self {
        Self {
            synonyms: SynonymLexicon::bundled(),
            stopwords: StopWords::bundled(),
        }
    }

    fn replaceable<'a>(&self, tokens: &'a [String]) -> Vec<&'a String> {
        let mut seen = HashSet::new();
        tokens
            .iter()
            .filter(|t| !self.stopwords.contains(t) && !self.synonyms.synonyms(t).is_empty())
            .filter(|t| seen.insert(t.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextOp {
    SynonymReplacement,
    RandomInsertion,
    RandomSwap,
    RandomDeletion,
}

/// Mirrors every position word at once when the paired image was flipped.
pub fn weak_text_adapt(expression: &Expression, record: &AugmentationRecord, lexicon: &PositionLexicon) -> Expression {
    if !record.horizontal_flipped {
        return expression.clone();
    }
    let tokens: Vec<&str> = expression
        .tokens()
        .iter()
        .map(|t| lexicon.mirror(t).unwrap_or(t))
        .collect();
    if tokens.iter().zip(expression.tokens()).all(|(a, b)| *a == b.as_str()) {
        return expression.clone();
    }
    Expression::from_tokens(&tokens).expect("token count is unchanged")
}

fn synonym_replacement<R: Rng + ?Sized>(tokens: &[String], n: usize, res: &TextResources, rng: &mut R) -> Vec<String> {
    let mut out = tokens.to_vec();
    let mut candidates = res.replaceable(tokens);
    candidates.shuffle(rng);
    for word in candidates.into_iter().take(n) {
        let syn = res
            .synonyms
            .synonyms(word)
            .choose(rng)
            .expect("replaceable words have synonyms")
            .clone();
        for t in out.iter_mut().filter(|t| *t == word) {
            *t = syn.clone();
        }
    }
    out
}

fn random_insertion<R: Rng + ?Sized>(tokens: &[String], n: usize, res: &TextResources, rng: &mut R) -> Vec<String> {
    let mut out = tokens.to_vec();
    for _ in 0..n {
        let candidates = res.replaceable(&out);
        let Some(word) = candidates.choose(rng) else {
            break;
        };
        let syn = res
            .synonyms
            .synonyms(word)
            .choose(rng)
            .expect("replaceable words have synonyms")
            .clone();
        let at = rng.gen_range(0..=out.len());
        out.insert(at, syn);
    }
    out
}

fn random_swap<R: Rng + ?Sized>(tokens: &[String], rng: &mut R) -> Vec<String> {
    let mut out = tokens.to_vec();
    if out.len() >= 2 {
        let i = rng.gen_range(0..out.len());
        let mut j = rng.gen_range(0..out.len() - 1);
        if j >= i {
            j += 1;
        }
        out.swap(i, j);
    }
    out
}

fn random_deletion<R: Rng + ?Sized>(tokens: &[String], p: f64, rng: &mut R) -> Vec<String> {
    if tokens.len() <= 1 {
        return tokens.to_vec();
    }
    let p = p.clamp(0.0, 1.0);
    let kept: Vec<String> = tokens.iter().filter(|_| !rng.gen_bool(p)).cloned().collect();
    if kept.is_empty() {
        vec![tokens[rng.gen_range(0..tokens.len())].clone()]
    } else {
        kept
    }
}

/// Applies one op to the token list.
pub fn apply_text_op<R: Rng + ?Sized>(
    expression: &Expression,
    op: TextOp,
    params: &EdaParams,
    res: &TextResources,
    rng: &mut R,
) -> Expression {
    let tokens = expression.tokens();
    let out = match op {
        TextOp::SynonymReplacement => synonym_replacement(tokens, params.n_sr, res, rng),
        TextOp::RandomInsertion => random_insertion(tokens, params.n_ri, res, rng),
        TextOp::RandomSwap => random_swap(tokens, rng),
        TextOp::RandomDeletion => random_deletion(tokens, params.p_rd, rng),
    };
    if out == tokens {
        return expression.clone();
    }
    Expression::from_tokens(&out).expect("text ops never empty the sentence")
}

/// Applies exactly one of SR / RI / RS / RD, chosen uniformly.
pub fn strong_text_augment<R: Rng + ?Sized>(
    expression: &Expression,
    params: &EdaParams,
    res: &TextResources,
    rng: &mut R,
) -> (Expression, TextOp) {
    let op = [
        TextOp::SynonymReplacement,
        TextOp::RandomInsertion,
        TextOp::RandomSwap,
        TextOp::RandomDeletion,
    ][rng.gen_range(0..4)];
    (apply_text_op(expression, op, params, res, rng), op)
}

/// `count` independent strong augmentations, candidate `j` drawn from sub-seed `j`.
pub fn generate_candidates(
    expression: &Expression,
    count: usize,
    seed: SeedTree,
    params: &EdaParams,
    res: &TextResources,
) -> Vec<Expression> {
    (0..count as u64)
        .map(|j| strong_text_augment(expression, params, res, &mut seed.index(j).rng()).0)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub text: Expression,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextCandidateSet {
    pub weak_text: Expression,
    pub candidates: Vec<ScoredCandidate>,
    /// Candidates with similarity at or above the threshold, in generation order.
    pub retained: Vec<ScoredCandidate>,
    pub threshold: f64,
}

/// Scores each candidate against the weak text and drops those below `threshold`.
/// No ranking: survivors keep their generation order.
pub fn semantic_filter(
    weak_text: &Expression,
    candidates: &[Expression],
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<TextCandidateSet> {
    let weak_vec = embedder.embed(weak_text)?;
    if weak_vec.norm() == 0.0 {
        return Err(Error::ZeroNorm {
            text: weak_text.raw().to_string(),
        });
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let v = embedder.embed(c)?;
        let similarity = cosine_similarity(&v, &weak_vec).ok_or_else(|| {
            if v.dimension() != weak_vec.dimension() {
                Error::Shape(format!(
                    "embedding of {:?} has dimension {}, weak text has {}",
                    c.raw(),
                    v.dimension(),
                    weak_vec.dimension()
                ))
            } else {
                Error::ZeroNorm {
                    text: c.raw().to_string(),
                }
            }
        })?;
        scored.push(ScoredCandidate {
            text: c.clone(),
            similarity,
        });
    }
    let retained = scored.iter().filter(|c| c.similarity >= threshold).cloned().collect();
    Ok(TextCandidateSet {
        weak_text: weak_text.clone(),
        candidates: scored,
        retained,
        threshold,
    })
}

/// Uniform pick among retained candidates, or the weak text when none survived.
pub fn pick_training_text<R: Rng + ?Sized>(set: &TextCandidateSet, rng: &mut R) -> Expression {
    set.retained
        .choose(rng)
        .map(|c| c.text.clone())
        .unwrap_or_else(|| set.weak_text.clone())
}
