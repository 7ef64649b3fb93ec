//! CSV emission and parsing of sweep, profile and speedup tables.

use std::path::Path;

use anyhow::{anyhow, Context};

use crate::report::{ProfileSet, SpeedupSet};
use crate::sweep::{CellResult, SweepResult};

pub const SWEEP_HEADER: [&str; 12] = [
    "problem",
    "noise",
    "cond",
    "method",
    "accelerated",
    "m",
    "alpha0",
    "seed",
    "k_to_eps",
    "samples_to_eps",
    "final_gap",
    "status",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn row_fields(r: &CellResult) -> [String; 12] {
    [
        r.problem.clone(),
        r.noise.clone(),
        r.cond.map(fmt_f64).unwrap_or_default(),
        r.method.clone(),
        r.accelerated.to_string(),
        r.m.to_string(),
        fmt_f64(r.alpha0),
        r.seed.to_string(),
        opt(r.k_to_eps),
        opt(r.samples_to_eps),
        fmt_f64(r.final_gap),
        r.status.label().to_string(),
    ]
}

/// Writes the rows in canonical order.
pub fn write_sweep<W: std::io::Write>(result: &SweepResult, out: W) -> anyhow::Result<()> {
    let mut rows: Vec<&CellResult> = result.rows.iter().collect();
    rows.sort_by(|a, b| a.key_cmp(b));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record(row_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(result: &SweepResult, path: &Path) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_sweep(result, file)
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> anyhow::Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e| anyhow!("bad field `{s}`: {e}"))
    }
}

pub fn read_sweep<R: std::io::Read>(input: R) -> anyhow::Result<SweepResult> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(SWEEP_HEADER) {
        return Err(anyhow!("unexpected header: {}", header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let parse = || -> anyhow::Result<CellResult> {
            Ok(CellResult {
                problem: f(0).into(),
                noise: f(1).into(),
                cond: parse_opt(f(2))?,
                method: f(3).into(),
                accelerated: f(4).parse()?,
                m: f(5).parse()?,
                alpha0: f(6).parse()?,
                seed: f(7).parse()?,
                k_to_eps: parse_opt(f(8))?,
                samples_to_eps: parse_opt(f(9))?,
                final_gap: f(10).parse()?,
                status: f(11).parse().map_err(|e: String| anyhow!(e))?,
            })
        };
        rows.push(parse().with_context(|| format!("row {}", line + 2))?);
    }
    Ok(SweepResult { rows })
}

pub fn read_csv(path: &Path) -> anyhow::Result<SweepResult> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_sweep(file)
}

/// Step points of every profile curve.
pub fn write_profile_csv(profiles: &ProfileSet, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["accelerated", "method", "ratio", "fraction", "experiments", "discarded"])?;
    for (acc, report) in &profiles.groups {
        for c in &report.curves {
            for (r, v) in c.ratios.iter().zip(&c.values) {
                w.write_record([
                    acc.to_string(),
                    c.method.clone(),
                    fmt_f64(*r),
                    fmt_f64(*v),
                    report.kept.to_string(),
                    report.discarded.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_speedup_csv(speedups: &SpeedupSet, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["accelerated", "method", "m", "t_star", "speedup"])?;
    for s in &speedups.rows {
        w.write_record([
            s.accelerated.to_string(),
            s.method.clone(),
            s.m.to_string(),
            fmt_f64(s.t_star),
            fmt_f64(s.speedup),
        ])?;
    }
    w.flush()?;
    Ok(())
}
