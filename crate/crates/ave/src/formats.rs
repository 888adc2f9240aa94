//! On-disk formats: JSON Lines datasets and verdicts, TOML taxonomy and
//! pricing, JSON capability profiles and split assignments.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ave_core::backend::{Pricing, PricingTable};
use ave_core::dataset::{validate_sample, Sample, SplitAssignment, Verdict, Violation};
use ave_core::harness::CapabilityProfile;
use ave_core::taxonomy::{Category, Taxonomy};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("cannot read {path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },
    #[error("{path}:{line}: field `{field}`: {message}")]
    Record { path: PathBuf, line: usize, field: String, message: String },
    #[error("{path}: duplicate id `{id}` on lines {first} and {second}")]
    DuplicateId { path: PathBuf, id: String, first: usize, second: usize },
    #[error("{path}: {message}")]
    Document { path: PathBuf, message: String },
}

impl FormatError {
    /// True when the file itself could not be read, as opposed to bad content.
    pub fn is_io(&self) -> bool {
        matches!(self, FormatError::Io { .. })
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|cause| FormatError::Io { path: path.to_path_buf(), cause })
}

fn document_error(path: &Path, message: impl std::fmt::Display) -> FormatError {
    FormatError::Document { path: path.to_path_buf(), message: message.to_string() }
}

/// Best guess at the offending field of a serde_json error message.
fn field_of(message: &str) -> String {
    for marker in ["missing field `", "unknown field `", "unknown variant `"] {
        if let Some(rest) = message.split_once(marker).map(|(_, r)| r) {
            if let Some((name, _)) = rest.split_once('`') {
                return if marker.starts_with("unknown variant") { "category".into() } else { name.into() };
            }
        }
    }
    "<record>".into()
}

/// One problem found while linting a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineIssue {
    pub line: usize,
    pub sample_id: Option<String>,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for LineIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}", self.line)?;
        if let Some(id) = &self.sample_id {
            write!(f, " ({id})")?;
        }
        write!(f, " [{}]: {}", self.field, self.message)
    }
}

/// Decoded samples with their 1-based line numbers, plus every issue found.
pub type Lint = (Vec<(usize, Sample)>, Vec<LineIssue>);

/// Parses every non-blank line, returning the samples that decoded and every
/// problem found (decode errors, validation violations, duplicate ids).
pub fn lint_dataset(path: &Path, taxonomy: &Taxonomy) -> Result<Lint, FormatError> {
    let text = read_text(path)?;
    let mut samples = Vec::new();
    let mut issues = Vec::new();
    let mut first_line: BTreeMap<String, usize> = BTreeMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let sample: Sample = match serde_json::from_str(raw) {
            Ok(s) => s,
            Err(e) => {
                let message = e.to_string();
                issues.push(LineIssue { line, sample_id: None, field: field_of(&message), message });
                continue;
            }
        };
        if let Some(&first) = first_line.get(&sample.id) {
            issues.push(LineIssue {
                line,
                sample_id: Some(sample.id.clone()),
                field: "id".into(),
                message: format!("duplicate id, first seen on line {first}"),
            });
        } else {
            first_line.insert(sample.id.clone(), line);
        }
        let report = validate_sample(&sample, taxonomy);
        issues.extend(report.violations.iter().map(|v: &Violation| LineIssue {
            line,
            sample_id: Some(sample.id.clone()),
            field: v.field().to_string(),
            message: {
                let text = v.to_string();
                text.strip_prefix(&format!("{}: ", v.field())).map_or(text.clone(), str::to_string)
            },
        }));
        samples.push((line, sample));
    }
    Ok((samples, issues))
}

/// Strict loader: the first problem aborts with the line and field named.
pub fn load_dataset(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<Sample>, FormatError> {
    let (samples, issues) = lint_dataset(path, taxonomy)?;
    if let Some(issue) = issues.into_iter().next() {
        if issue.field == "id" && issue.message.starts_with("duplicate id") {
            let id = issue.sample_id.unwrap_or_default();
            let first = samples.iter().find(|(_, s)| s.id == id).map_or(0, |(l, _)| *l);
            return Err(FormatError::DuplicateId { path: path.to_path_buf(), id, first, second: issue.line });
        }
        let message = match issue.sample_id {
            Some(id) => format!("sample `{id}`: {}", issue.message),
            None => issue.message,
        };
        return Err(FormatError::Record { path: path.to_path_buf(), line: issue.line, field: issue.field, message });
    }
    Ok(samples.into_iter().map(|(_, s)| s).collect())
}

fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    toml::from_str(&read_text(path)?).map_err(|e| document_error(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| document_error(path, e))
}

#[derive(Deserialize)]
struct TaxonomyFile {
    version: String,
    categories: BTreeMap<Category, Vec<String>>,
}

/// ```toml
/// version = "1"
/// [categories]
/// perception = ["object counting", "spatial relation"]
/// ```
pub fn load_taxonomy(path: &Path) -> Result<Taxonomy, FormatError> {
    let file: TaxonomyFile = load_toml(path)?;
    Taxonomy::new(file.version, file.categories).map_err(|e| document_error(path, e))
}

/// A table per backend name:
///
/// ```toml
/// [gpt-judge]
/// usd_per_1M_input_tokens = 2.5
/// usd_per_1M_output_tokens = 10.0
/// ```
pub fn load_pricing(path: &Path) -> Result<PricingTable, FormatError> {
    let table: BTreeMap<String, Pricing> = load_toml(path)?;
    for (name, p) in &table {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(p.usd_per_1m_input_tokens) || !ok(p.usd_per_1m_output_tokens) {
            return Err(document_error(path, format!("prices for `{name}` must be finite and non-negative")));
        }
    }
    Ok(PricingTable(table))
}

pub fn load_profiles(path: &Path) -> Result<Vec<CapabilityProfile>, FormatError> {
    load_json(path)
}

pub fn load_splits(path: &Path) -> Result<SplitAssignment, FormatError> {
    load_json(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub sample_id: String,
    pub model_name: String,
    pub verdict: Verdict,
}

pub fn load_verdicts(path: &Path) -> Result<Vec<VerdictRecord>, FormatError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: VerdictRecord = serde_json::from_str(raw).map_err(|e| {
            let message = e.to_string();
            FormatError::Record { path: path.to_path_buf(), line, field: field_of(&message), message }
        })?;
        let key = (record.sample_id.clone(), record.model_name.clone());
        if let Some(first) = seen.insert(key, line) {
            return Err(FormatError::Record {
                path: path.to_path_buf(),
                line,
                field: "sample_id".into(),
                message: format!(
                    "verdict for `{}` on `{}` already given on line {first}",
                    record.sample_id, record.model_name
                ),
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Pairs each verdict with its benchmark case. The resulting samples carry
/// the verdict's model name and outcome.
pub fn attach_verdicts(cases: &[Sample], verdicts: &[VerdictRecord]) -> anyhow::Result<Vec<Sample>> {
    let by_id: BTreeMap<&str, &Sample> = cases.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut unknown = BTreeSet::new();
    let mut out = Vec::with_capacity(verdicts.len());
    for v in verdicts {
        match by_id.get(v.sample_id.as_str()) {
            Some(case) => {
                let mut s = (*case).clone();
                s.model_name = v.model_name.clone();
                s.verdict = Some(v.verdict);
                out.push(s);
            }
            None => {
                unknown.insert(v.sample_id.as_str());
            }
        }
    }
    if !unknown.is_empty() {
        let list: Vec<&str> = unknown.into_iter().collect();
        anyhow::bail!("verdicts reference unknown cases: {}", list.join(", "));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn taxonomy() -> Taxonomy {
        Taxonomy::new("t", [(Category::Perception, vec!["counting".to_string()])]).unwrap()
    }

    fn line(id: &str, sub: &str, weaknesses: &str) -> String {
        format!(
            r#"{{"id":"{id}","category":"perception","subcategory":"{sub}","task_family":"perception","context":{{"instruction":"count","image_refs":[],"audio_refs":[],"video_refs":[]}},"output_video_ref":"v/{id}.mp4","weaknesses":{weaknesses},"model_name":"m"}}"#
        )
    }

    fn file(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn empty_file_loads_nothing() {
        let f = file(&[]);
        assert!(load_dataset(f.path(), &taxonomy()).unwrap().is_empty());
    }

    #[test]
    fn records_load_in_order() {
        let f = file(&[line("b", "counting", "[]"), line("a", "counting", r#"["blur"]"#)]);
        let ids: Vec<String> = load_dataset(f.path(), &taxonomy()).unwrap().into_iter().map(|s| s.id).collect();
        assert_eq!(ids, ["b", "a"]);
    }

    #[test]
    fn wrong_subcategory_names_the_record() {
        let f = file(&[line("a", "counting", "[]"), line("bad", "dancing", "[]")]);
        let err = load_dataset(f.path(), &taxonomy()).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("subcategory") && err.contains("bad"), "{err}");
    }

    #[test]
    fn duplicate_ids_name_both_lines() {
        let f = file(&[line("a", "counting", "[]"), String::new(), line("a", "counting", "[]")]);
        match load_dataset(f.path(), &taxonomy()).unwrap_err() {
            FormatError::DuplicateId { first, second, id, .. } => assert_eq!((id.as_str(), first, second), ("a", 1, 3)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn decode_errors_name_the_field() {
        let f = file(&[line("a", "counting", "[]").replace(r#""model_name":"m""#, r#""modelname":"m""#)]);
        let err = load_dataset(f.path(), &taxonomy()).unwrap_err().to_string();
        assert!(err.contains(":1:") && err.contains("model_name"), "{err}");
    }

    #[test]
    fn lint_collects_everything() {
        let f = file(&[line("a", "counting", r#"["x","x"]"#), "{".into(), line("c", "dancing", r#"[" "]"#)]);
        let (samples, issues) = lint_dataset(f.path(), &taxonomy()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(issues.iter().map(|i| i.line).collect::<Vec<_>>(), [1, 2, 3, 3]);
    }

    #[test]
    fn missing_file_is_io() {
        assert!(load_dataset(Path::new("/nonexistent/x.jsonl"), &taxonomy()).unwrap_err().is_io());
    }

    #[test]
    fn verdict_duplicates_are_rejected() {
        let f = file(&[
            r#"{"sample_id":"a","model_name":"m","verdict":"pass"}"#.into(),
            r#"{"sample_id":"a","model_name":"m","verdict":"fail"}"#.into(),
        ]);
        assert!(load_verdicts(f.path()).unwrap_err().to_string().contains("line 1"));
    }
}
