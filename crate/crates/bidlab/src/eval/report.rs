//! Plain-text comparison tables and CSV series for run artifacts.

use serde::{Deserialize, Serialize};

use crate::eval::evaluate::{EvalReport, Variant};
use crate::pipeline::IterationLog;

/// A labeled method's evaluation, the unit a comparison table renders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodEval {
    pub label: String,
    pub reports: Vec<EvalReport>,
}

/// Canonical row order; unknown labels sort after these, alphabetically.
const METHOD_ORDER: [&str; 5] = ["dt_baseline", "bc", "rdt", "rhat", "rstar"];

fn method_rank(label: &str) -> (usize, &str) {
    let base = label.split('(').next().unwrap_or(label);
    (
        METHOD_ORDER
            .iter()
            .position(|&m| m == base)
            .unwrap_or(METHOD_ORDER.len()),
        label,
    )
}

/// Render a method-by-variant table of mean score, conversions, budget
/// use, and realized CPA.
pub fn render_comparison(methods: &[MethodEval]) -> String {
    let mut ordered: Vec<&MethodEval> = methods.iter().collect();
    ordered.sort_by(|a, b| method_rank(&a.label).cmp(&method_rank(&b.label)));

    let variants: Vec<Variant> = Variant::ALL
        .into_iter()
        .filter(|v| {
            ordered
                .iter()
                .any(|m| m.reports.iter().any(|r| r.variant == *v))
        })
        .collect();

    let label_width = ordered
        .iter()
        .map(|m| m.label.len())
        .chain(["method".len()])
        .max()
        .unwrap_or(6);
    const CELL: usize = 33;

    let mut out = String::new();
    out.push_str(&format!("{:label_width$}", "method"));
    for v in &variants {
        out.push_str(&format!(" | {:^CELL$}", v.as_str()));
    }
    out.push('\n');
    out.push_str(&format!("{:label_width$}", ""));
    for _ in &variants {
        out.push_str(&format!(
            " | {:>8} {:>7} {:>7} {:>8}",
            "score", "conv", "budget", "cpa"
        ));
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_width + variants.len() * (CELL + 3)));
    out.push('\n');

    for method in ordered {
        out.push_str(&format!("{:label_width$}", method.label));
        for v in &variants {
            match method.reports.iter().find(|r| r.variant == *v) {
                Some(r) => out.push_str(&format!(
                    " | {:8.3} {:7.2} {:6.1}% {:8.3}",
                    r.mean_score,
                    r.mean_conversions,
                    r.mean_budget_ratio * 100.0,
                    r.realized_cpa
                )),
                None => out.push_str(&format!(" | {:^CELL$}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

/// CSV of the dataset-return distribution across self-training rounds,
/// starting from the initial dataset as round 0.
pub fn quantile_series_csv(log: &IterationLog) -> String {
    let mut out = String::from("round,size,mean,median,p10,p25,p50,p75,p90\n");
    let mut push = |round: u32, s: &crate::pipeline::ReturnSummary| {
        out.push_str(&format!("{round},{},{:.6},{:.6}", s.size, s.mean, s.median));
        for (_, value) in &s.quantiles {
            out.push_str(&format!(",{value:.6}"));
        }
        out.push('\n');
    };
    push(0, &log.initial);
    for round in &log.rounds {
        push(round.k, &round.dataset);
    }
    out
}
