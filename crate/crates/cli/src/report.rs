//! Profiles, speedups and time-versus-stepsize summaries of a sweep table.

use std::collections::{BTreeMap, BTreeSet};

use aprox_core::analysis::{
    best_time, performance_profile, AnalysisError, CostMeasure, ProfileReport, ProfileTable, SpeedupRow,
};

use crate::svg::Series;
use crate::sweep::{CellResult, CellStatus, SweepResult};

/// One profile per acceleration flag present in the table.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    pub groups: Vec<(bool, ProfileReport)>,
}

impl ProfileSet {
    pub fn group(&self, accelerated: bool) -> Option<&ProfileReport> {
        self.groups.iter().find(|(a, _)| *a == accelerated).map(|(_, r)| r)
    }

    /// Curve value of `method` at ratio `r`.
    pub fn value_at(&self, accelerated: bool, method: &str, r: f64) -> Option<f64> {
        self.group(accelerated)?
            .curves
            .iter()
            .find(|c| c.method == method)
            .map(|c| c.value_at(r))
    }
}

fn converged_samples(row: &CellResult) -> Option<f64> {
    (row.status == CellStatus::Converged)
        .then_some(row.samples_to_eps)
        .flatten()
        .map(|s| s as f64)
}

/// Profiles over samples-to-ε; an experiment is one `(problem, cond, m, α₀,
/// seed)` point, and non-converged runs count as failures.
pub fn profiles(result: &SweepResult) -> Result<ProfileSet, AnalysisError> {
    let mut groups = Vec::new();
    for acc in [false, true] {
        let rows: Vec<&CellResult> = result.rows.iter().filter(|r| r.accelerated == acc).collect();
        if rows.is_empty() {
            continue;
        }
        let methods: Vec<String> = rows.iter().map(|r| r.method.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut table = ProfileTable::default();
        for r in rows {
            table.insert(&r.experiment_key(), &r.method, converged_samples(r));
        }
        groups.push((acc, performance_profile(&table, &methods)?));
    }
    if groups.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok(ProfileSet { groups })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupEntry {
    pub accelerated: bool,
    pub method: String,
    pub m: usize,
    /// Best (over `α₀`) median cost.
    pub t_star: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpeedupSet {
    pub rows: Vec<SpeedupEntry>,
}

impl SpeedupSet {
    pub fn get(&self, accelerated: bool, method: &str, m: usize) -> Option<&SpeedupEntry> {
        self.rows
            .iter()
            .find(|e| e.accelerated == accelerated && e.method == method && e.m == m)
    }
}

/// `T*_{a,1}/T*_{a,m}` for each method and acceleration flag. Problems and
/// conditions are pooled, so the table should hold one of each. Methods
/// without a finite baseline are skipped.
pub fn speedups(result: &SweepResult, measure: CostMeasure) -> SpeedupSet {
    let mut by_group: BTreeMap<(bool, String), Vec<SpeedupRow>> = BTreeMap::new();
    for r in &result.rows {
        by_group.entry((r.accelerated, r.method.clone())).or_default().push(SpeedupRow {
            method: r.method.clone(),
            m: r.m,
            alpha0: r.alpha0,
            seed: r.seed,
            k_to_eps: if r.status == CellStatus::Converged { r.k_to_eps } else { None },
        });
    }
    let mut out = SpeedupSet::default();
    for ((acc, method), rows) in by_group {
        let ms: BTreeSet<usize> = rows.iter().map(|r| r.m).collect();
        let base = best_time(&rows, &method, 1, measure);
        if !base.is_finite() {
            continue;
        }
        for m in ms {
            let t = best_time(&rows, &method, m, measure);
            out.rows.push(SpeedupEntry {
                accelerated: acc,
                method: method.clone(),
                m,
                t_star: t,
                speedup: base / t,
            });
        }
    }
    out
}

/// Median samples-to-ε against `α₀` for each `(method, m)`; points whose
/// median is a failure are omitted.
pub fn time_vs_step(result: &SweepResult, accelerated: bool) -> Vec<Series> {
    let mut cells: BTreeMap<(String, usize), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in result.rows.iter().filter(|r| r.accelerated == accelerated) {
        cells
            .entry((r.method.clone(), r.m))
            .or_default()
            .entry(r.alpha0.to_bits())
            .or_default()
            .push(converged_samples(r).unwrap_or(f64::INFINITY));
    }
    cells
        .into_iter()
        .map(|((method, m), by_alpha)| {
            let points = by_alpha
                .into_iter()
                .filter_map(|(bits, mut ts)| {
                    ts.sort_by(f64::total_cmp);
                    let n = ts.len();
                    let med = if n % 2 == 1 { ts[n / 2] } else { 0.5 * (ts[n / 2 - 1] + ts[n / 2]) };
                    med.is_finite().then_some((f64::from_bits(bits), med))
                })
                .collect();
            Series::new(format!("{method} m={m}"), points)
        })
        .filter(|s| !s.points.is_empty())
        .collect()
}
