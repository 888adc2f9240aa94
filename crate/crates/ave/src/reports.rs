use std::collections::BTreeMap;

use ave_core::dataset::Sample;
use ave_core::harness::PassRateReport;
use ave_core::metrics::{kendall_tau, phi_apply, GlobalConfusion, MetricKind};
use ave_core::optimizer::InstanceRecord;
use ave_core::taxonomy::Category;
use serde::{Deserialize, Serialize};

/// One cell of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task_family: String,
    pub metric: String,
    pub value: f64,
}

/// All three objectives over `aggregate`, plus Kendall's τ between the
/// judge's and the annotators' weakness counts when it is defined.
pub fn metric_rows(
    label: &str,
    aggregate: &GlobalConfusion,
    records: &[InstanceRecord],
    samples: &BTreeMap<&str, &Sample>,
) -> anyhow::Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for kind in MetricKind::ALL {
        rows.push(MetricRow {
            task_family: label.into(),
            metric: kind.as_str().into(),
            value: phi_apply(kind, aggregate)?,
        });
    }
    if records.len() >= 2 {
        let judge: Vec<f64> = records.iter().map(|r| -(r.predicted.len() as f64)).collect();
        let human = records
            .iter()
            .map(|r| {
                samples
                    .get(r.sample_id.as_str())
                    .map(|s| -(s.weaknesses.len() as f64))
                    .ok_or_else(|| anyhow::anyhow!("no sample for `{}`", r.sample_id))
            })
            .collect::<anyhow::Result<Vec<f64>>>()?;
        rows.push(MetricRow {
            task_family: label.into(),
            metric: "kendall_tau".into(),
            value: kendall_tau(&judge, &human)?,
        });
    }
    Ok(rows)
}

pub fn metric_csv(rows: &[MetricRow]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Wide table: one line per model, one percentage column per category.
/// Empty cells mean the model had no eligible case in that category.
pub fn pass_rate_csv(report: &PassRateReport) -> anyhow::Result<String> {
    let mut models: BTreeMap<(&str, &str), BTreeMap<Category, f64>> = BTreeMap::new();
    for row in &report.rows {
        models.entry((row.group.as_str(), row.model_name.as_str())).or_default().insert(row.category, row.pass_rate);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model", "group"];
    header.extend(Category::ALL.iter().map(|c| c.abbreviation()));
    w.write_record(&header)?;
    for ((group, model), rates) in models {
        let mut record = vec![model.to_string(), group.to_string()];
        record
            .extend(Category::ALL.iter().map(|c| rates.get(c).map_or(String::new(), |r| format!("{:.2}", r * 100.0))));
        w.write_record(&record)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ave_core::harness::PassRateRow;

    fn row(model: &str, group: &str, category: Category, passed: u32, cases: u32) -> PassRateRow {
        PassRateRow {
            model_name: model.into(),
            group: group.into(),
            category,
            passed,
            cases,
            pass_rate: f64::from(passed) / f64::from(cases),
        }
    }

    #[test]
    fn wide_table() {
        let report = PassRateReport {
            rows: vec![
                row("b", "text+image", Category::ElementEditing, 49, 80),
                row("a", "text+audio", Category::Perception, 1, 3),
            ],
            excluded: BTreeMap::new(),
        };
        assert_eq!(
            pass_rate_csv(&report).unwrap(),
            "model,group,E.E.,P.R.,S.C.,P.S.,Perc.,L.R.\na,text+audio,,,,,33.33,\nb,text+image,61.25,,,,,\n"
        );
    }

    #[test]
    fn metric_table() {
        let g = GlobalConfusion { tp: 1.0, tn: 1.0, fp: 0.0, fn_: 0.0, n_instances: 2 };
        let rows = metric_rows("all", &g, &[], &BTreeMap::new()).unwrap();
        assert_eq!(metric_csv(&rows).unwrap(), "task_family,metric,value\nall,f1,1.0\nall,mcc,1.0\nall,rec-fpr,1.0\n");
    }
}
