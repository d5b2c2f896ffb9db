use std::path::Path;

use rand::Rng;

use super::validate_text;
use crate::error::{FastError, Result};

const BUNDLED: &str = include_str!("../../assets/words.txt");

/// Vocabulary for word sampling; entries are 1–20 printable ASCII characters.
#[derive(Clone, Debug, PartialEq)]
pub struct WordList(Vec<String>);

impl WordList {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled word list is valid")
    }

    /// One word per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let words: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        for w in &words {
            validate_text(w).map_err(|e| FastError::InsufficientAssets(format!("word list entry `{w}`: {e}")))?;
        }
        Ok(Self(words))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        &self.0[rng.gen_range(0..self.0.len())]
    }
}
