//! Benchmark categories, the fixed category → task-family map, and the
//! versioned subcategory taxonomy.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    #[serde(alias = "Element Editing", alias = "E.E.")]
    ElementEditing,
    #[serde(alias = "Partial Reference", alias = "P.R.")]
    PartialReference,
    #[serde(alias = "Script Continuation", alias = "S.C.")]
    ScriptContinuation,
    #[serde(alias = "Physical Simulation", alias = "P.S.")]
    PhysicalSimulation,
    #[serde(alias = "Perception", alias = "Perc.")]
    Perception,
    #[serde(alias = "Logical Reasoning", alias = "L.R.")]
    LogicalReasoning,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::ElementEditing,
        Category::PartialReference,
        Category::ScriptContinuation,
        Category::PhysicalSimulation,
        Category::Perception,
        Category::LogicalReasoning,
    ];

    pub fn task_family(self) -> TaskFamily {
        match self {
            Category::ElementEditing | Category::PartialReference | Category::ScriptContinuation => {
                TaskFamily::PromptFollowing
            }
            Category::PhysicalSimulation | Category::LogicalReasoning => TaskFamily::PhysicalLogical,
            Category::Perception => TaskFamily::Perception,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::ElementEditing => "element_editing",
            Category::PartialReference => "partial_reference",
            Category::ScriptContinuation => "script_continuation",
            Category::PhysicalSimulation => "physical_simulation",
            Category::Perception => "perception",
            Category::LogicalReasoning => "logical_reasoning",
        }
    }

    /// Short column label used in report tables.
    pub fn abbreviation(self) -> &'static str {
        match self {
            Category::ElementEditing => "E.E.",
            Category::PartialReference => "P.R.",
            Category::ScriptContinuation => "S.C.",
            Category::PhysicalSimulation => "P.S.",
            Category::Perception => "Perc.",
            Category::LogicalReasoning => "L.R.",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| Error::InvalidInput(alloc::format!("unknown category `{s}`")))
    }
}

/// The three training task families the categories are folded into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    PromptFollowing,
    PhysicalLogical,
    Perception,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 3] = [TaskFamily::PromptFollowing, TaskFamily::PhysicalLogical, TaskFamily::Perception];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::PromptFollowing => "prompt_following",
            TaskFamily::PhysicalLogical => "physical_logical",
            TaskFamily::Perception => "perception",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        TaskFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == key)
            .ok_or_else(|| Error::InvalidInput(alloc::format!("unknown task family `{s}`")))
    }
}

/// Subcategory names per category, loaded from a versioned asset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub version: String,
    pub categories: BTreeMap<Category, BTreeSet<String>>,
}

impl Taxonomy {
    /// Builds a taxonomy, rejecting a subcategory listed under two categories.
    pub fn new(version: impl Into<String>, entries: impl IntoIterator<Item = (Category, Vec<String>)>) -> Result<Self> {
        let mut categories: BTreeMap<Category, BTreeSet<String>> = BTreeMap::new();
        let mut owner: BTreeMap<String, Category> = BTreeMap::new();
        for (category, subs) in entries {
            for sub in subs {
                let sub = String::from(sub.trim());
                if sub.is_empty() {
                    return Err(Error::InvalidInput(alloc::format!("empty subcategory under `{category}`")));
                }
                if let Some(prev) = owner.insert(sub.clone(), category) {
                    if prev != category {
                        return Err(Error::InvalidInput(alloc::format!(
                            "subcategory `{sub}` listed under both `{prev}` and `{category}`"
                        )));
                    }
                }
                categories.entry(category).or_default().insert(sub);
            }
        }
        Ok(Taxonomy { version: version.into(), categories })
    }

    pub fn contains(&self, category: Category, subcategory: &str) -> bool {
        self.categories.get(&category).is_some_and(|subs| subs.contains(subcategory))
    }

    pub fn subcategory_count(&self) -> usize {
        self.categories.values().map(BTreeSet::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn family_map_is_fixed() {
        let sizes = TaskFamily::ALL.map(|fam| Category::ALL.iter().filter(|c| c.task_family() == fam).count());
        assert_eq!(sizes, [3, 2, 1]);
    }

    #[test]
    fn category_parses_display_names() {
        assert_eq!("Perception".parse::<Category>().unwrap(), Category::Perception);
        assert_eq!("Element Editing".parse::<Category>().unwrap(), Category::ElementEditing);
        assert!("cooking".parse::<Category>().is_err());
        let c: Category = serde_json::from_str("\"Logical Reasoning\"").unwrap();
        assert_eq!(c, Category::LogicalReasoning);
    }

    #[test]
    fn subcategory_in_two_categories_rejected() {
        let err = Taxonomy::new(
            "t",
            vec![
                (Category::Perception, vec!["counting".into()]),
                (Category::LogicalReasoning, vec!["counting".into()]),
            ],
        );
        assert!(err.is_err());
    }
}
