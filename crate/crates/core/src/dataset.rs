//! Benchmark samples, their validation, seeded stratified splits and
//! task-family grouping.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::taxonomy::{Category, TaskFamily, Taxonomy};
use crate::{Error, Result};

/// Input context of one benchmark case: the instruction plus optional
/// reference media.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextBundle {
    pub instruction: String,
    #[serde(default)]
    pub image_refs: Vec<String>,
    #[serde(default)]
    pub audio_refs: Vec<String>,
    #[serde(default)]
    pub video_refs: Vec<String>,
}

impl ContextBundle {
    pub fn text(instruction: impl Into<String>) -> Self {
        ContextBundle { instruction: instruction.into(), ..Default::default() }
    }
}

/// Ordered free-form weakness descriptions. Empty means "no noticeable
/// weaknesses".
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeaknessSet(Vec<String>);

impl WeaknessSet {
    pub fn empty() -> Self {
        WeaknessSet(Vec::new())
    }

    /// Validating constructor: rejects whitespace-only items and items that
    /// are byte-identical after trimming.
    pub fn new<I, S>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set = WeaknessSet(items.into_iter().map(Into::into).collect());
        match set.problems().into_iter().next() {
            None => Ok(set),
            Some(problem) => Err(Error::InvalidInput(problem.to_string())),
        }
    }

    /// Wraps items without checking them; [`WeaknessSet::problems`] reports
    /// what is wrong.
    pub fn from_unchecked(items: Vec<String>) -> Self {
        WeaknessSet(items)
    }

    pub fn items(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn into_items(self) -> Vec<String> {
        self.0
    }

    pub fn problems(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (index, item) in self.0.iter().enumerate() {
            let trimmed = item.trim();
            if trimmed.is_empty() {
                out.push(Violation::BlankWeakness { index });
                continue;
            }
            if let Some(&first) = seen.get(trimmed) {
                out.push(Violation::DuplicateWeakness { first, duplicate: index });
            } else {
                seen.insert(trimmed, index);
            }
        }
        out
    }
}

impl<'a> IntoIterator for &'a WeaknessSet {
    type Item = &'a String;
    type IntoIter = core::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// One annotated benchmark instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub category: Category,
    pub subcategory: String,
    pub task_family: TaskFamily,
    pub context: ContextBundle,
    pub output_video_ref: String,
    #[serde(default)]
    pub weaknesses: WeaknessSet,
    #[serde(default)]
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

/// A single broken invariant of a [`Sample`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyId,
    EmptyInstruction,
    InvalidRef { field: String, value: String },
    SubcategoryNotInCategory { category: Category, subcategory: String },
    TaskFamilyMismatch { category: Category, expected: TaskFamily, found: TaskFamily },
    BlankWeakness { index: usize },
    DuplicateWeakness { first: usize, duplicate: usize },
}

impl Violation {
    /// Name of the record field the violation is about.
    pub fn field(&self) -> &str {
        match self {
            Violation::EmptyId => "id",
            Violation::EmptyInstruction => "context.instruction",
            Violation::InvalidRef { field, .. } => field,
            Violation::SubcategoryNotInCategory { .. } => "subcategory",
            Violation::TaskFamilyMismatch { .. } => "task_family",
            Violation::BlankWeakness { .. } | Violation::DuplicateWeakness { .. } => "weaknesses",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "id: must not be empty"),
            Violation::EmptyInstruction => write!(f, "context.instruction: must not be empty"),
            Violation::InvalidRef { field, value } => {
                write!(f, "{field}: `{value}` is not a valid URI or relative path")
            }
            Violation::SubcategoryNotInCategory { category, subcategory } => {
                write!(f, "subcategory: `{subcategory}` does not belong to category `{category}`")
            }
            Violation::TaskFamilyMismatch { category, expected, found } => {
                write!(f, "task_family: `{found}` does not match `{expected}` required by category `{category}`")
            }
            Violation::BlankWeakness { index } => {
                write!(f, "weaknesses[{index}]: whitespace-only item")
            }
            Violation::DuplicateWeakness { first, duplicate } => {
                write!(f, "weaknesses[{duplicate}]: duplicates weaknesses[{first}]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub sample_id: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Syntactic check for media references: either `scheme://rest` with an
/// RFC 3986 scheme, or a relative/absolute path. No whitespace or control
/// characters anywhere.
pub fn is_valid_ref(value: &str) -> bool {
    if value.is_empty() || value.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return false;
    }
    match value.split_once("://") {
        Some((scheme, rest)) => {
            let mut chars = scheme.chars();
            let head_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic());
            head_ok && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.')) && !rest.is_empty()
        }
        None => true,
    }
}

pub fn validate_sample(sample: &Sample, taxonomy: &Taxonomy) -> ValidationReport {
    let mut violations = Vec::new();
    if sample.id.trim().is_empty() {
        violations.push(Violation::EmptyId);
    }
    if sample.context.instruction.trim().is_empty() {
        violations.push(Violation::EmptyInstruction);
    }
    let ctx = &sample.context;
    let ref_fields = [
        ("context.image_refs", &ctx.image_refs),
        ("context.audio_refs", &ctx.audio_refs),
        ("context.video_refs", &ctx.video_refs),
    ];
    for (field, refs) in ref_fields {
        for value in refs.iter().filter(|v| !is_valid_ref(v)) {
            violations.push(Violation::InvalidRef { field: field.into(), value: value.clone() });
        }
    }
    if !is_valid_ref(&sample.output_video_ref) {
        violations
            .push(Violation::InvalidRef { field: "output_video_ref".into(), value: sample.output_video_ref.clone() });
    }
    if !taxonomy.contains(sample.category, &sample.subcategory) {
        violations.push(Violation::SubcategoryNotInCategory {
            category: sample.category,
            subcategory: sample.subcategory.clone(),
        });
    }
    let expected = sample.category.task_family();
    if expected != sample.task_family {
        violations.push(Violation::TaskFamilyMismatch {
            category: sample.category,
            expected,
            found: sample.task_family,
        });
    }
    violations.extend(sample.weaknesses.problems());
    ValidationReport { sample_id: sample.id.clone(), violations }
}

/// Disjoint train/val/test id lists. Ids inside each list are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitAssignment {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train_ids.len(), self.val_ids.len(), self.test_ids.len()]
    }

    /// Resolves a list of ids against `samples`, in list order.
    pub fn select<'a>(ids: &[String], samples: &'a [Sample]) -> Result<Vec<&'a Sample>> {
        let by_id: BTreeMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("split references unknown id `{id}`")))
            })
            .collect()
    }
}

/// Seeded three-way split, stratified by subcategory.
///
/// Each subcategory is shuffled and dealt evenly; its remainder goes to the
/// splits that are currently smallest. This keeps both the per-subcategory
/// counts and the overall split sizes within one of each other. The result
/// depends only on the set of `(id, category, subcategory)` triples and the
/// seed, not on input order.
pub fn split_dataset(samples: &[Sample], seed: u64) -> Result<SplitAssignment> {
    if samples.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 samples to split, got {}", samples.len())));
    }
    let mut strata: BTreeMap<(Category, &str), Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate sample id `{}`", s.id)));
        }
        strata.entry((s.category, s.subcategory.as_str())).or_default().push(s.id.as_str());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for ids in strata.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let base = ids.len() / 3;
        let extra = ids.len() % 3;

        let mut order = [0usize, 1, 2];
        order.shuffle(&mut rng);
        order.sort_by_key(|&k| splits[k].len());
        let mut quota = [base; 3];
        for &k in order.iter().take(extra) {
            quota[k] += 1;
        }

        let mut rest = ids.iter();
        for (k, &q) in quota.iter().enumerate() {
            splits[k].extend(rest.by_ref().take(q).map(|id| id.to_string()));
        }
    }
    for ids in &mut splits {
        ids.sort_unstable();
    }
    let [train_ids, val_ids, test_ids] = splits;
    Ok(SplitAssignment { seed, train_ids, val_ids, test_ids })
}

/// Buckets samples by the task family their category maps to. All three
/// families are always present as keys.
pub fn group_by_task_family(samples: &[Sample]) -> BTreeMap<TaskFamily, Vec<Sample>> {
    let mut groups: BTreeMap<TaskFamily, Vec<Sample>> = TaskFamily::ALL.into_iter().map(|f| (f, Vec::new())).collect();
    for s in samples {
        groups.entry(s.category.task_family()).or_default().push(s.clone());
    }
    groups
}
