//! Result tables built from a run ledger.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cost::{
    aggregate_hafix_agg, resolve_order, simulate_scenario, summarize_units, CostError, MethodStats,
    OrderPolicy, PriceModel, PriceTable, ScenarioKind, ScenarioOutcome, UnitTable,
};
use crate::dataset::RunLedgerEntry;
use crate::method::{HeuristicKind, Method, PromptStyle};
use crate::metrics::{self, venn, MetricsError, Venn};
use crate::stats::{self, bonferroni_threshold, ComparisonResult, Mode, StatsError};

pub const AGG_LABEL: &str = "HAFix-Agg";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("ledger is empty")]
    EmptyLedger,
    #[error("bug {bug_id} has no results for {method} under {style}")]
    Incomplete { bug_id: String, method: Method, style: PromptStyle },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub ks: Vec<usize>,
    pub alpha: f64,
    pub stats_mode: Mode,
    pub order_policy: OrderPolicy,
    /// Cost scenarios are simulated when a price model is given.
    pub price: Option<PriceModel>,
    pub cost_style: PromptStyle,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            ks: vec![1, 5, 10],
            alpha: 0.05,
            stats_mode: Mode::Auto,
            order_policy: OrderPolicy::FromStats,
            price: None,
            cost_style: PromptStyle::Instruction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKRow {
    pub method: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedRow {
    pub method: String,
    pub fixed: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub method: Method,
    pub against: String,
    pub result: ComparisonResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VennRow {
    pub method: String,
    /// `only_a` is baseline-only, `only_b` is method-only.
    pub venn: Venn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleReport {
    pub style: PromptStyle,
    pub bugs: usize,
    pub oom_units: usize,
    pub pass_at_k: Vec<PassAtKRow>,
    pub fixed: Vec<FixedRow>,
    pub venn_vs_baseline: Vec<VennRow>,
    /// Friedman over pass@k curves (k = 1..n), methods as treatments.
    pub friedman: Option<ComparisonResult>,
    /// Each heuristic against the baseline over the same curves.
    pub wilcoxon: Vec<PairwiseRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub style: PromptStyle,
    pub scenarios: Vec<ScenarioOutcome>,
    pub table: PriceTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub ks: Vec<usize>,
    pub styles: Vec<StyleReport>,
    pub cost: Option<CostReport>,
}

/// `(n, c)` per bug for each method present in `units`.
pub fn verdicts_by_method(
    units: &UnitTable,
    style: PromptStyle,
) -> Result<BTreeMap<Method, BTreeMap<String, (usize, usize)>>, ReportError> {
    let methods: BTreeSet<Method> = units.keys().map(|(_, m)| *m).collect();
    let bugs: BTreeSet<&String> = units.keys().map(|(b, _)| b).collect();
    let mut out = BTreeMap::new();
    for m in methods {
        let mut per_bug = BTreeMap::new();
        for bug in &bugs {
            let unit = units.get(&((*bug).clone(), m)).ok_or_else(|| ReportError::Incomplete {
                bug_id: (*bug).clone(),
                method: m,
                style,
            })?;
            per_bug.insert((*bug).clone(), (unit.n, unit.correct));
        }
        out.insert(m, per_bug);
    }
    Ok(out)
}

fn fixed(per_bug: &BTreeMap<String, (usize, usize)>) -> BTreeSet<String> {
    let cs: BTreeMap<String, usize> = per_bug.iter().map(|(b, (_, c))| (b.clone(), *c)).collect();
    metrics::fixed_set(&cs)
}

fn curve(per_bug: &BTreeMap<String, (usize, usize)>, ks: &[usize]) -> Result<Vec<f64>, MetricsError> {
    let v: Vec<(usize, usize)> = per_bug.values().copied().collect();
    ks.iter().map(|&k| metrics::aggregate_pass_at_k(&v, k)).collect()
}

fn style_report(
    units: &UnitTable,
    style: PromptStyle,
    opts: &ReportOptions,
) -> Result<StyleReport, ReportError> {
    let verdicts = verdicts_by_method(units, style)?;
    let bugs = units.keys().map(|(b, _)| b).collect::<BTreeSet<_>>().len();
    let mut rows: Vec<(String, BTreeMap<String, (usize, usize)>)> =
        verdicts.iter().map(|(m, v)| (m.tag().to_string(), v.clone())).collect();
    let heuristics: BTreeMap<HeuristicKind, BTreeMap<String, (usize, usize)>> = verdicts
        .iter()
        .filter_map(|(m, v)| m.heuristic().map(|h| (h, v.clone())))
        .collect();
    if heuristics.len() == HeuristicKind::ALL.len() {
        rows.push((AGG_LABEL.to_string(), aggregate_hafix_agg(&heuristics)?));
    }

    let pass_at_k = rows
        .iter()
        .map(|(name, v)| Ok(PassAtKRow { method: name.clone(), values: curve(v, &opts.ks)? }))
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let fixed_rows = rows
        .iter()
        .map(|(name, v)| {
            let f = fixed(v).len();
            FixedRow { method: name.clone(), fixed: f, percent: 100.0 * f as f64 / bugs as f64 }
        })
        .collect();

    let mut venn_vs_baseline = Vec::new();
    if let Some(base) = verdicts.get(&Method::Baseline) {
        let base = fixed(base);
        for (name, v) in rows.iter().filter(|(name, _)| name != Method::Baseline.tag()) {
            venn_vs_baseline.push(VennRow { method: name.clone(), venn: venn(&base, &fixed(v)) });
        }
    }

    let n_min = verdicts.values().flat_map(|v| v.values().map(|(n, _)| *n)).min().unwrap_or(0);
    let curve_ks: Vec<usize> = (1..=n_min).collect();
    let curves: Vec<(Method, Vec<f64>)> = verdicts
        .iter()
        .map(|(m, v)| Ok((*m, curve(v, &curve_ks)?)))
        .collect::<Result<_, MetricsError>>()?;
    let friedman = if curves.len() >= 2 && curve_ks.len() >= 2 {
        let matrix: Vec<Vec<f64>> = (0..curve_ks.len()).map(|i| curves.iter().map(|(_, c)| c[i]).collect()).collect();
        Some(stats::friedman_test(&matrix, opts.stats_mode)?.with_threshold(opts.alpha))
    } else {
        None
    };
    let mut wilcoxon = Vec::new();
    if let Some((_, base)) = curves.iter().find(|(m, _)| *m == Method::Baseline) {
        let others: Vec<&(Method, Vec<f64>)> = curves.iter().filter(|(m, _)| *m != Method::Baseline).collect();
        let threshold = bonferroni_threshold(opts.alpha, others.len());
        for (m, c) in others {
            let result = stats::wilcoxon_signed_rank(c, base, opts.stats_mode)?.with_threshold(threshold);
            wilcoxon.push(PairwiseRow { method: *m, against: Method::Baseline.tag().to_string(), result });
        }
    }
    Ok(StyleReport {
        style,
        bugs,
        oom_units: units.values().filter(|u| u.oom).count(),
        pass_at_k,
        fixed: fixed_rows,
        venn_vs_baseline,
        friedman,
        wilcoxon,
    })
}

/// Price and time of every scenario; `None` unless all eight methods are present.
pub fn cost_report(units: &UnitTable, style: PromptStyle, price: &PriceModel, policy: OrderPolicy) -> Result<Option<CostReport>, ReportError> {
    let verdicts = verdicts_by_method(units, style)?;
    if Method::CATALOG.iter().any(|m| !verdicts.contains_key(m)) {
        return Ok(None);
    }
    let sets: BTreeMap<Method, BTreeSet<String>> = verdicts.iter().map(|(m, v)| (*m, fixed(v))).collect();
    let stats = MethodStats::from_fixed_sets(&sets);
    let scenarios = ScenarioKind::ALL
        .iter()
        .map(|&kind| {
            let order = resolve_order(kind, policy, &stats)?;
            simulate_scenario(units, kind, &order, price)
        })
        .collect::<Result<Vec<_>, CostError>>()?;
    let table = PriceTable::from_outcomes(&scenarios);
    Ok(Some(CostReport { style, scenarios, table }))
}

/// Every table for every style present in the ledger.
pub fn build_report(ledger: &[RunLedgerEntry], opts: &ReportOptions) -> Result<Report, ReportError> {
    if ledger.is_empty() {
        return Err(ReportError::EmptyLedger);
    }
    let styles: BTreeSet<PromptStyle> = ledger.iter().map(|e| e.style).collect();
    let mut out = Vec::new();
    let mut cost = None;
    for style in styles {
        let units = summarize_units(ledger, style)?;
        out.push(style_report(&units, style, opts)?);
        if style == opts.cost_style {
            if let Some(price) = &opts.price {
                cost = cost_report(&units, style, price, opts.order_policy)?;
            }
        }
    }
    Ok(Report { ks: opts.ks.clone(), styles: out, cost })
}

fn fmt_p(p: f64) -> String {
    if p != 0.0 && p < 1e-3 {
        format!("{p:.3e}")
    } else {
        format!("{p:.4}")
    }
}

/// Plain-text rendering of [`Report`].
pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    for s in &report.styles {
        let _ = writeln!(out, "== {} ({} bugs, {} oom requests) ==", s.style, s.bugs, s.oom_units);
        let _ = write!(out, "{:<14}", "pass@k");
        for k in &report.ks {
            let _ = write!(out, "{:>10}", format!("k={k}"));
        }
        out.push('\n');
        for row in &s.pass_at_k {
            let _ = write!(out, "{:<14}", row.method);
            for v in &row.values {
                let _ = write!(out, "{:>10}", format!("{:.2}%", 100.0 * v));
            }
            out.push('\n');
        }
        out.push('\n');
        let _ = writeln!(out, "{:<14}{:>8}{:>10}", "fixed", "bugs", "percent");
        for row in &s.fixed {
            let _ = writeln!(out, "{:<14}{:>8}{:>10}", row.method, row.fixed, format!("{:.2}%", row.percent));
        }
        if !s.venn_vs_baseline.is_empty() {
            out.push('\n');
            let _ = writeln!(out, "{:<14}{:>10}{:>8}{:>10}", "vs Baseline", "base-only", "both", "own-only");
            for row in &s.venn_vs_baseline {
                let v = row.venn;
                let _ = writeln!(out, "{:<14}{:>10}{:>8}{:>10}", row.method, v.only_a, v.both, v.only_b);
            }
        }
        if let Some(f) = &s.friedman {
            let _ = writeln!(out, "\nFriedman chi2 = {:.4}, p = {}{}", f.statistic, fmt_p(f.p_value), if f.exact { " (exact)" } else { "" });
        }
        if let Some(first) = s.wilcoxon.first() {
            let _ = writeln!(out, "Wilcoxon vs Baseline, threshold {:.4}", first.result.threshold.unwrap_or(f64::NAN));
            for row in &s.wilcoxon {
                let r = &row.result;
                let _ = writeln!(
                    out,
                    "  {:<14} W = {:>7.1}  p = {:>10}  r = {:>7}{}",
                    row.method.tag(),
                    r.statistic,
                    fmt_p(r.p_value),
                    r.effect_size.map_or("-".to_string(), |e| format!("{e:.3}")),
                    if r.significant() == Some(true) { "  *" } else { "" }
                );
            }
        }
        out.push('\n');
    }
    if let Some(c) = &report.cost {
        let _ = writeln!(out, "== inference price by scenario ({}) ==", c.style);
        out.push_str(&c.table.render(2));
        let _ = writeln!(out, "\n{:<14}{:>14}{:>10}", "scenario", "time (s)", "fixed");
        for o in &c.scenarios {
            let _ = writeln!(out, "{:<14}{:>14.1}{:>10}", o.kind.tag(), o.total_time, o.fixed_bugs().len());
        }
        for o in c.scenarios.iter().filter(|o| o.kind != ScenarioKind::Exhaustive) {
            let order: Vec<&str> = o.order.iter().map(|m| m.tag()).collect();
            let _ = writeln!(out, "{} order: {}", o.kind.tag(), order.join(", "));
        }
    }
    out
}
