//! Type-level prompt instantiation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_POSITIVE: &str = "A image with [cls] defect type";
pub const DEFAULT_NEGATIVE: &str = "A image with flawless [obj]";

/// Prompt templates with `[cls]` (defect type) and `[obj]` (object category)
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub positive: String,
    pub negative: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            positive: DEFAULT_POSITIVE.into(),
            negative: DEFAULT_NEGATIVE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub positive: String,
    pub negative: String,
}

impl PromptTemplates {
    pub fn instantiate(&self, label: &str, object: &str) -> Result<PromptPair> {
        if label.is_empty() {
            return Err(Error::Argument("prompt label must be non-empty".into()));
        }
        let fill = |t: &str| t.replace("[cls]", label).replace("[obj]", object);
        Ok(PromptPair {
            positive: fill(&self.positive),
            negative: fill(&self.negative),
        })
    }
}

/// Instantiates the default templates.
pub fn instantiate_prompts(label: &str, object: &str) -> Result<PromptPair> {
    PromptTemplates::default().instantiate(label, object)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_templates() {
        let p = instantiate_prompts("scratch", "wood").unwrap();
        assert_eq!(p.positive, "A image with scratch defect type");
        assert_eq!(p.negative, "A image with flawless wood");
        assert_eq!(p, instantiate_prompts("scratch", "wood").unwrap());
    }

    #[test]
    fn label_is_verbatim() {
        let p = instantiate_prompts("hole", "leather").unwrap();
        assert!(p.positive.contains("hole"));
    }

    #[test]
    fn custom_templates_and_empty_label() {
        let t = PromptTemplates {
            positive: "[obj] with [cls]".into(),
            negative: "perfect [obj], no [cls]".into(),
        };
        let p = t.instantiate("crack", "tile").unwrap();
        assert_eq!(p.positive, "tile with crack");
        assert_eq!(p.negative, "perfect tile, no crack");
        assert!(matches!(t.instantiate("", "tile"), Err(Error::Argument(_))));
    }
}
