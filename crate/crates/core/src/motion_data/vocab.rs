use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into the condition-embedding table. Prompt ids are `0..K`; the
/// empty condition is `K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionId(pub usize);

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Closed prompt vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionVocab {
    prompts: Vec<String>,
}

impl ConditionVocab {
    pub fn new(prompts: Vec<String>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::InvalidConfig("vocabulary needs at least one prompt".into()));
        }
        for (i, p) in prompts.iter().enumerate() {
            if prompts[..i].contains(p) {
                return Err(Error::InvalidConfig(format!("duplicate prompt {p:?}")));
            }
        }
        Ok(ConditionVocab { prompts })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// The empty condition ∅.
    pub fn null_id(&self) -> ConditionId {
        ConditionId(self.prompts.len())
    }

    /// Number of embedding rows, including ∅.
    pub fn table_rows(&self) -> usize {
        self.prompts.len() + 1
    }

    pub fn id_of(&self, prompt: &str) -> Option<ConditionId> {
        self.prompts.iter().position(|p| p == prompt).map(ConditionId)
    }

    pub fn prompt(&self, id: ConditionId) -> Option<&str> {
        self.prompts.get(id.0).map(String::as_str)
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn ids(&self) -> impl Iterator<Item = ConditionId> {
        (0..self.prompts.len()).map(ConditionId)
    }

    /// True for prompt ids and ∅.
    pub fn contains(&self, id: ConditionId) -> bool {
        id.0 <= self.prompts.len()
    }
}
