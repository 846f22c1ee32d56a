use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::types::Expression;

/// Token vocabulary; id 0 is the reserved unknown token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const UNKNOWN: &'static str = "<unk>";

    /// Sorted, de-duplicated tokens of the corpus after the unknown token.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a Expression>) -> Self {
        let words: BTreeSet<&str> = corpus
            .into_iter()
            .flat_map(|e| e.tokens().iter().map(String::as_str))
            .filter(|t| *t != Self::UNKNOWN)
            .collect();
        let mut tokens = vec![Self::UNKNOWN.to_string()];
        tokens.extend(words.into_iter().map(str::to_string));
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn ids(&self, expression: &Expression) -> Vec<usize> {
        expression.tokens().iter().map(|t| self.id(t)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(mut tokens: Vec<String>) -> Self {
        if tokens.first().map(String::as_str) != Some(Self::UNKNOWN) {
            tokens.retain(|t| t != Self::UNKNOWN);
            tokens.insert(0, Self::UNKNOWN.to_string());
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_tokens_map_to_zero() {
        let corpus = [
            Expression::new("red circle").unwrap(),
            Expression::new("blue circle").unwrap(),
        ];
        let v = Vocabulary::build(&corpus);
        assert_eq!(v.tokens(), ["<unk>", "blue", "circle", "red"]);
        assert_eq!(v.ids(&Expression::new("red zebra").unwrap()), vec![3, 0]);
    }
}
