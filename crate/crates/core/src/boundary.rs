//! Boundary tokens: the decoded token texts at which the deviation index is
//! evaluated (sentence and paragraph terminators by default).

use serde::{Deserialize, Serialize};

pub const DEFAULT_BOUNDARIES: [&str; 7] = ["\n\n", ".\n\n", ". ", ".", "?", "!", ";"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoundarySet(Vec<String>);

impl Default for BoundarySet {
    fn default() -> Self {
        Self::new(DEFAULT_BOUNDARIES)
    }
}

impl BoundarySet {
    pub fn new<I, S>(members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(members.into_iter().map(Into::into).collect())
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn contains_token(&self, token_text: &str) -> bool {
        is_boundary(token_text, self)
    }
}

/// Suffix match of a decoded token against the boundary set.
///
/// A token matches a member `b` when the raw text ends with `b`, or when the
/// text with trailing whitespace removed ends with `b` with its own trailing
/// whitespace removed. Whitespace-only members (`"\n\n"`) only match raw.
pub fn is_boundary(token_text: &str, set: &BoundarySet) -> bool {
    let trimmed = token_text.trim_end();
    set.iter().any(|b| {
        if token_text.ends_with(b) {
            return true;
        }
        let b = b.trim_end();
        !b.is_empty() && trimmed.ends_with(b)
    })
}
