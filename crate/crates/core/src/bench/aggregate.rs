use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::grid::ExperimentCell;
use crate::data::Subset;
use crate::models::Pretraining;

/// Mean, sample standard deviation and quartiles of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single value.
    pub std: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Summary {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            mean,
            std,
            median: quantile(&sorted, 0.5),
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// One table entry: a method at one scenario, over its replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub subset: Subset,
    pub method: Pretraining,
    pub percent: u32,
    /// `None` for the baseline, which does not depend on the grade.
    pub grade: Option<u32>,
    pub n: usize,
    pub failed: usize,
    pub rmse: Summary,
    pub score: Summary,
    /// Grades at which this row has the lowest mean RMSE among all methods.
    pub best_at: Vec<u32>,
}

impl AggregateRow {
    pub fn is_best(&self) -> bool {
        !self.best_at.is_empty()
    }
}

type GroupKey = (Subset, Option<u32>, u32, Pretraining);

/// Groups successful cells by (subset, grade, percent, method) and summarizes them.
/// Rows are ordered by subset, grade (baseline first), percent, then method.
pub fn aggregate(cells: &[ExperimentCell]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<GroupKey, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for c in cells {
        let s = c.spec;
        let entry = groups.entry((s.subset, s.grade, s.percent, s.method)).or_default();
        match &c.metrics {
            Some(m) => {
                entry.0.push(m.rmse);
                entry.1.push(m.rul_score);
            }
            None => entry.2 += 1,
        }
    }
    let mut rows: Vec<AggregateRow> = groups
        .into_iter()
        .filter_map(|((subset, grade, percent, method), (rmse, score, failed))| {
            Some(AggregateRow {
                subset,
                method,
                percent,
                grade,
                n: rmse.len(),
                failed,
                rmse: Summary::of(&rmse)?,
                score: Summary::of(&score)?,
                best_at: Vec::new(),
            })
        })
        .collect();
    mark_best(&mut rows);
    rows
}

/// Every (subset, grade, percent) scenario compares the methods run at that grade with
/// the baseline at that percent; the lowest mean RMSE wins.
fn mark_best(rows: &mut [AggregateRow]) {
    let mut scenarios: BTreeMap<(Subset, u32, u32), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        if let Some(g) = r.grade {
            scenarios.entry((r.subset, g, r.percent)).or_default().push(i);
        }
    }
    for ((subset, grade, percent), mut members) in scenarios {
        if let Some(b) = rows
            .iter()
            .position(|r| r.grade.is_none() && r.subset == subset && r.percent == percent)
        {
            members.push(b);
        }
        let best = members
            .iter()
            .copied()
            .min_by(|&a, &b| rows[a].rmse.mean.total_cmp(&rows[b].rmse.mean))
            .expect("nonempty scenario");
        rows[best].best_at.push(grade);
    }
}

fn fmt_grade(g: Option<u32>) -> String {
    g.map_or_else(String::new, |g| g.to_string())
}

/// Flat CSV with one line per row.
pub fn to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(
        "subset,method,percent,grade,n,failed,rmse_mean,rmse_std,rmse_median,rmse_iqr,score_mean,score_std,score_median,score_iqr,best\n",
    );
    for r in rows {
        let best: Vec<String> = r.best_at.iter().map(u32::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            r.subset,
            r.method,
            r.percent,
            fmt_grade(r.grade),
            r.n,
            r.failed,
            r.rmse.mean,
            r.rmse.std,
            r.rmse.median,
            r.rmse.iqr(),
            r.score.mean,
            r.score.std,
            r.score.median,
            r.score.iqr(),
            best.join(";")
        )
        .expect("write to string");
    }
    out
}

/// One table per subset: a block of methods per grade, percentages as columns, the best
/// mean RMSE of each scenario in bold. The baseline is repeated in every grade block.
pub fn to_markdown(rows: &[AggregateRow]) -> String {
    let mut out = String::new();
    let subsets: Vec<Subset> = {
        let mut s: Vec<Subset> = rows.iter().map(|r| r.subset).collect();
        s.dedup();
        s
    };
    for subset in subsets {
        let sub: Vec<&AggregateRow> = rows.iter().filter(|r| r.subset == subset).collect();
        let mut percents: Vec<u32> = sub.iter().map(|r| r.percent).collect();
        percents.sort_unstable();
        percents.dedup();
        let mut grades: Vec<u32> = sub.iter().filter_map(|r| r.grade).collect();
        grades.sort_unstable();
        grades.dedup();
        let mut methods: Vec<Pretraining> = sub.iter().map(|r| r.method).collect();
        methods.sort();
        methods.dedup();

        writeln!(out, "### {subset} (RMSE, mean ± std)\n").expect("write");
        let header: Vec<String> = percents.iter().map(|p| format!("{p}%")).collect();
        writeln!(out, "| Grade | Method | {} |", header.join(" | ")).expect("write");
        writeln!(out, "|---|---|{}", "---|".repeat(percents.len())).expect("write");
        let block_grades: Vec<Option<u32>> = if grades.is_empty() {
            vec![None]
        } else {
            grades.iter().copied().map(Some).collect()
        };
        for g in block_grades {
            for &m in &methods {
                let cells: Vec<String> = percents
                    .iter()
                    .map(|&p| {
                        let row = sub.iter().find(|r| {
                            r.method == m && r.percent == p && (r.grade == g || (m == Pretraining::None && r.grade.is_none()))
                        });
                        match row {
                            Some(r) => {
                                let text = format!("{:.2} ± {:.2}", r.rmse.mean, r.rmse.std);
                                let bold = g.is_some_and(|g| r.best_at.contains(&g));
                                if bold {
                                    format!("**{text}**")
                                } else {
                                    text
                                }
                            }
                            None => "–".to_string(),
                        }
                    })
                    .collect();
                if cells.iter().all(|c| c == "–") {
                    continue;
                }
                writeln!(out, "| {} | {} | {} |", fmt_grade(g), m, cells.join(" | ")).expect("write");
            }
        }
        out.push('\n');
    }
    out
}
