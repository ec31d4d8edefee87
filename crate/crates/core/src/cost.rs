//! Token pricing, execution scenarios with early stopping, and the
//! aggregation of heuristic results into HAFix-Agg.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::dataset::{RunLedgerEntry, SampleStatus};
use crate::method::{HeuristicKind, Method, PromptStyle, UnknownName};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CostError {
    #[error("negative token price")]
    NegativePrice,
    #[error("no {what} count for {method}")]
    MissingStats { what: &'static str, method: Method },
    #[error("no ledger entries for bug {bug_id} under {method}")]
    LedgerGap { bug_id: String, method: Method },
    #[error("no results for heuristic {0}")]
    MissingHeuristic(HeuristicKind),
    #[error("bug {bug_id} missing from {heuristic} results")]
    MissingBug { bug_id: String, heuristic: HeuristicKind },
    #[error("unit ({bug_id}, {method}) mixes oom and non-oom samples")]
    MixedUnit { bug_id: String, method: Method },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceModel {
    #[serde(with = "rust_decimal::serde::str")]
    pub price_per_input_token: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub price_per_output_token: Decimal,
}

impl PriceModel {
    pub fn new(input: Decimal, output: Decimal) -> Result<Self, CostError> {
        let m = PriceModel { price_per_input_token: input, price_per_output_token: output };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if self.price_per_input_token.is_sign_negative() || self.price_per_output_token.is_sign_negative() {
            return Err(CostError::NegativePrice);
        }
        Ok(())
    }
}

/// Price of one request: input tokens once, plus every sample's output tokens.
/// An OOM request passes no outputs and is priced on input alone.
pub fn inference_price(t_input: usize, t_outputs: &[usize], model: &PriceModel) -> Decimal {
    let outputs: u64 = t_outputs.iter().map(|&t| t as u64).sum();
    Decimal::from(t_input as u64) * model.price_per_input_token
        + Decimal::from(outputs) * model.price_per_output_token
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    Exhaustive,
    #[serde(rename = "ES")]
    Es,
    #[serde(rename = "ES-AccSorted")]
    EsAccSorted,
    #[serde(rename = "ES-UniSorted")]
    EsUniSorted,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] =
        [ScenarioKind::Exhaustive, ScenarioKind::Es, ScenarioKind::EsAccSorted, ScenarioKind::EsUniSorted];

    pub fn tag(self) -> &'static str {
        match self {
            ScenarioKind::Exhaustive => "Exhaustive",
            ScenarioKind::Es => "ES",
            ScenarioKind::EsAccSorted => "ES-AccSorted",
            ScenarioKind::EsUniSorted => "ES-UniSorted",
        }
    }

    pub fn early_stop(self) -> bool {
        self != ScenarioKind::Exhaustive
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ScenarioKind {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownName { what: "scenario", value: s.to_string() })
    }
}

/// Bugs fixed per method, and bugs each heuristic fixes that the baseline does not.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodStats {
    pub fix_counts: BTreeMap<Method, usize>,
    pub unique_counts: BTreeMap<Method, usize>,
}

impl MethodStats {
    pub fn from_fixed_sets<K: Ord>(sets: &BTreeMap<Method, BTreeSet<K>>) -> Self {
        let empty = BTreeSet::new();
        let baseline = sets.get(&Method::Baseline).unwrap_or(&empty);
        MethodStats {
            fix_counts: sets.iter().map(|(m, s)| (*m, s.len())).collect(),
            unique_counts: sets
                .iter()
                .filter(|(m, _)| **m != Method::Baseline)
                .map(|(m, s)| (*m, s.difference(baseline).count()))
                .collect(),
        }
    }
}

/// How sorted scenarios get their order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// Recompute from the fix counts of the run being analysed.
    #[default]
    FromStats,
    /// Use the fixed reference sequences.
    Pinned,
}

pub const PINNED_ACC_SORTED: [Method; 8] = [
    Method::FlnAll,
    Method::CfnAll,
    Method::Baseline,
    Method::CfnModified,
    Method::FnAll,
    Method::FnModified,
    Method::FnPair,
    Method::FlDiff,
];

pub const PINNED_UNI_SORTED: [Method; 8] = [
    Method::Baseline,
    Method::CfnAll,
    Method::FlnAll,
    Method::FnAll,
    Method::CfnModified,
    Method::FlDiff,
    Method::FnPair,
    Method::FnModified,
];

pub fn pinned_order(kind: ScenarioKind) -> Vec<Method> {
    match kind {
        ScenarioKind::Exhaustive | ScenarioKind::Es => Method::CATALOG.to_vec(),
        ScenarioKind::EsAccSorted => PINNED_ACC_SORTED.to_vec(),
        ScenarioKind::EsUniSorted => PINNED_UNI_SORTED.to_vec(),
    }
}

fn sorted_desc(methods: &[Method], counts: &BTreeMap<Method, usize>, what: &'static str) -> Result<Vec<Method>, CostError> {
    let mut keyed = methods
        .iter()
        .map(|m| counts.get(m).map(|c| (*c, *m)).ok_or(CostError::MissingStats { what, method: *m }))
        .collect::<Result<Vec<_>, _>>()?;
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.catalog_index().cmp(&b.1.catalog_index())));
    Ok(keyed.into_iter().map(|(_, m)| m).collect())
}

/// Execution order of a scenario. Ties keep catalog order; the unique-fix
/// order always starts with the baseline.
pub fn scenario_order(kind: ScenarioKind, stats: &MethodStats) -> Result<Vec<Method>, CostError> {
    match kind {
        ScenarioKind::Exhaustive | ScenarioKind::Es => Ok(Method::CATALOG.to_vec()),
        ScenarioKind::EsAccSorted => sorted_desc(&Method::CATALOG, &stats.fix_counts, "fix"),
        ScenarioKind::EsUniSorted => {
            let mut order = vec![Method::Baseline];
            order.extend(sorted_desc(&Method::CATALOG[1..], &stats.unique_counts, "unique-fix")?);
            Ok(order)
        }
    }
}

pub fn resolve_order(kind: ScenarioKind, policy: OrderPolicy, stats: &MethodStats) -> Result<Vec<Method>, CostError> {
    match policy {
        OrderPolicy::FromStats => scenario_order(kind, stats),
        OrderPolicy::Pinned => Ok(pinned_order(kind)),
    }
}

/// All samples of one (bug, method) request under one style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub n: usize,
    pub correct: usize,
    pub input_tokens: usize,
    pub output_tokens: Vec<usize>,
    pub latency_seconds: f64,
    pub oom: bool,
}

impl UnitSummary {
    pub fn price(&self, model: &PriceModel) -> Decimal {
        let outputs: &[usize] = if self.oom { &[] } else { &self.output_tokens };
        inference_price(self.input_tokens, outputs, model)
    }

    /// Inference time counted in totals; OOM requests are excluded.
    pub fn counted_time(&self) -> f64 {
        if self.oom {
            0.0
        } else {
            self.latency_seconds
        }
    }
}

pub type UnitTable = BTreeMap<(String, Method), UnitSummary>;

/// Group ledger entries of `style` into per-request units. Ingestion order does not matter.
pub fn summarize_units(ledger: &[RunLedgerEntry], style: PromptStyle) -> Result<UnitTable, CostError> {
    let mut grouped: BTreeMap<(String, Method), Vec<&RunLedgerEntry>> = BTreeMap::new();
    for e in ledger.iter().filter(|e| e.style == style) {
        grouped.entry((e.bug_id.clone(), e.heuristic)).or_default().push(e);
    }
    let mut out = BTreeMap::new();
    for ((bug_id, method), mut entries) in grouped {
        entries.sort_by_key(|e| e.sample_index);
        let oom = entries.iter().filter(|e| e.status == SampleStatus::Oom).count();
        if oom != 0 && oom != entries.len() {
            return Err(CostError::MixedUnit { bug_id, method });
        }
        let first = entries[0];
        let unit = UnitSummary {
            n: entries.len(),
            correct: entries.iter().filter(|e| e.passed).count(),
            input_tokens: first.input_tokens,
            output_tokens: entries.iter().map(|e| e.output_tokens).collect(),
            latency_seconds: first.latency_seconds,
            oom: oom > 0,
        };
        out.insert((bug_id, method), unit);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugOutcome {
    pub executed: Vec<Method>,
    pub fixed: bool,
    #[serde(with = "rust_decimal::serde::str")]
    pub total_price: Decimal,
    pub total_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub kind: ScenarioKind,
    pub order: Vec<Method>,
    pub per_bug: BTreeMap<String, BugOutcome>,
    #[serde(with = "rust_decimal::serde::str")]
    pub total_price: Decimal,
    pub total_time: f64,
    pub per_heuristic_price: BTreeMap<Method, Decimal>,
    pub per_heuristic_time: BTreeMap<Method, f64>,
}

impl ScenarioOutcome {
    pub fn fixed_bugs(&self) -> BTreeSet<String> {
        self.per_bug.iter().filter(|(_, b)| b.fixed).map(|(id, _)| id.clone()).collect()
    }
}

/// Run every bug through `order`; early-stopping kinds halt after the first
/// method with a passing sample.
///
/// Times are summed in catalog order whatever the execution order, so a
/// bug's early-stop time never exceeds its exhaustive time.
pub fn simulate_scenario(
    units: &UnitTable,
    kind: ScenarioKind,
    order: &[Method],
    model: &PriceModel,
) -> Result<ScenarioOutcome, CostError> {
    let bugs: BTreeSet<&String> = units.keys().map(|(b, _)| b).collect();
    let mut per_bug = BTreeMap::new();
    let mut per_heuristic_price: BTreeMap<Method, Decimal> = order.iter().map(|m| (*m, Decimal::ZERO)).collect();
    let mut per_heuristic_time: BTreeMap<Method, f64> = order.iter().map(|m| (*m, 0.0)).collect();
    for bug in bugs {
        let mut executed = Vec::new();
        let mut fixed = false;
        let mut total_price = Decimal::ZERO;
        for &method in order {
            let unit = units
                .get(&(bug.clone(), method))
                .ok_or_else(|| CostError::LedgerGap { bug_id: bug.clone(), method })?;
            executed.push(method);
            let price = unit.price(model);
            total_price += price;
            *per_heuristic_price.get_mut(&method).unwrap() += price;
            *per_heuristic_time.get_mut(&method).unwrap() += unit.counted_time();
            if unit.correct >= 1 {
                fixed = true;
                if kind.early_stop() {
                    break;
                }
            }
        }
        let mut by_catalog = executed.clone();
        by_catalog.sort();
        let total_time = by_catalog.iter().map(|m| units[&(bug.clone(), *m)].counted_time()).sum();
        per_bug.insert(bug.clone(), BugOutcome { executed, fixed, total_price, total_time });
    }
    let total_price = per_bug.values().map(|b| b.total_price).sum();
    let total_time = per_bug.values().map(|b| b.total_time).sum();
    Ok(ScenarioOutcome {
        kind,
        order: order.to_vec(),
        per_bug,
        total_price,
        total_time,
        per_heuristic_price,
        per_heuristic_time,
    })
}

/// Merge the seven heuristics' `(n, c)` per bug.
pub fn aggregate_hafix_agg(
    per_heuristic: &BTreeMap<HeuristicKind, BTreeMap<String, (usize, usize)>>,
) -> Result<BTreeMap<String, (usize, usize)>, CostError> {
    for kind in HeuristicKind::ALL {
        if !per_heuristic.contains_key(&kind) {
            return Err(CostError::MissingHeuristic(kind));
        }
    }
    let bugs: BTreeSet<&String> = per_heuristic.values().flat_map(|m| m.keys()).collect();
    let mut out = BTreeMap::new();
    for bug in bugs {
        let (mut n, mut c) = (0, 0);
        for kind in HeuristicKind::ALL {
            let (ni, ci) = per_heuristic[&kind]
                .get(bug)
                .ok_or_else(|| CostError::MissingBug { bug_id: bug.clone(), heuristic: kind })?;
            n += ni;
            c += ci;
        }
        out.insert(bug.clone(), (n, c));
    }
    Ok(out)
}

/// Method x scenario price table; totals are exact column sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub scenarios: Vec<ScenarioKind>,
    pub rows: Vec<(Method, Vec<Decimal>)>,
    pub totals: Vec<Decimal>,
}

impl PriceTable {
    pub fn from_outcomes(outcomes: &[ScenarioOutcome]) -> Self {
        let rows: Vec<(Method, Vec<Decimal>)> = Method::CATALOG
            .iter()
            .map(|m| {
                let cells = outcomes
                    .iter()
                    .map(|o| o.per_heuristic_price.get(m).copied().unwrap_or(Decimal::ZERO))
                    .collect();
                (*m, cells)
            })
            .collect();
        let totals = (0..outcomes.len()).map(|j| rows.iter().map(|(_, r)| r[j]).sum()).collect();
        PriceTable { scenarios: outcomes.iter().map(|o| o.kind).collect(), rows, totals }
    }

    /// Text table with cells rounded to `dp` decimals for display only.
    pub fn render(&self, dp: u32) -> String {
        let fmt = |d: &Decimal| format!("{:.*}", dp as usize, d.round_dp(dp));
        let mut out = format!("{:<14}", "");
        for s in &self.scenarios {
            out.push_str(&format!("{:>14}", s.tag()));
        }
        out.push('\n');
        for (m, cells) in &self.rows {
            out.push_str(&format!("{:<14}", m.tag()));
            for c in cells {
                out.push_str(&format!("{:>14}", fmt(c)));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<14}", "Total"));
        for t in &self.totals {
            out.push_str(&format!("{:>14}", fmt(t)));
        }
        out.push('\n');
        out
    }
}
