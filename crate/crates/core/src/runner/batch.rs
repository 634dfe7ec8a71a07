//! Multi-run drivers. Runs share nothing mutable and fan out over a thread
//! pool; results are collected in seed order, so outputs do not depend on
//! scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use super::scenario::{ObjectiveKind, Scenario};
use super::{run, MetricsReport, RunError};
use crate::broker::{offline_optimal, optimize_thresholds, AdmissionPolicy, ThresholdSweep};

/// Parses `a..b` (exclusive), `a..=b`, a comma list, or a single seed.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, RunError> {
    let bad = |why: &str| RunError::Usage(format!("seeds {spec:?}: {why}"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad("not an unsigned integer"));
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = spec.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad("empty range"));
    }
    Ok(seeds)
}

fn run_seeds<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T, RunError> + Sync) -> Result<Vec<T>, RunError> {
    seeds
        .par_iter()
        .map(|&seed| {
            f(seed).map_err(|e| RunError::Seed {
                seed,
                source: Box::new(e),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            n,
            mean,
            stddev: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Replication {
    pub runs: Vec<MetricsReport>,
    /// Per metric, over the seeds that report it.
    pub aggregate: BTreeMap<String, Stats>,
}

pub fn replicate(scenario: &Scenario, seeds: &[u64]) -> Result<Replication, RunError> {
    if seeds.is_empty() {
        return Err(RunError::Usage("replicate needs at least one seed".into()));
    }
    let runs = run_seeds(seeds, |s| run(scenario, s))?;
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &runs {
        for (k, v) in r.summary.metrics() {
            values.entry(k).or_default().push(v);
        }
    }
    let aggregate = values.into_iter().map(|(k, v)| (k, Stats::of(&v))).collect();
    Ok(Replication { runs, aggregate })
}

impl Replication {
    /// One directory per seed plus `aggregate.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<(), RunError> {
        for r in &self.runs {
            r.write_to(&dir.join(format!("seed-{}", r.summary.seed)))?;
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "n", "mean", "stddev", "min", "max"])
            .expect("in-memory write");
        for (k, s) in &self.aggregate {
            w.write_record([
                k.clone(),
                s.n.to_string(),
                s.mean.to_string(),
                s.stddev.to_string(),
                s.min.to_string(),
                s.max.to_string(),
            ])
            .expect("in-memory write");
        }
        let path = dir.join("aggregate.csv");
        fs::write(&path, w.into_inner().expect("in-memory flush")).map_err(|source| RunError::Io { path, source })
    }
}

/// A policy substituted into a scenario for comparison.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyOverride {
    Objective(ObjectiveKind),
    Admission(AdmissionPolicy),
}

/// Accepts coordinator objectives (`static-split`, `weighted-fair`,
/// `max-se`, `fairness-with-floor`) and admission policies
/// (`always-accept`, `greedy-capacity`, `threshold:0.5/0.8`, one threshold
/// per class separated by `/`).
pub fn parse_policy(name: &str) -> Result<PolicyOverride, RunError> {
    if let Some(k) = ObjectiveKind::parse(name) {
        return Ok(PolicyOverride::Objective(k));
    }
    let policy = match name {
        "always-accept" => AdmissionPolicy::AlwaysAccept,
        "greedy-capacity" => AdmissionPolicy::GreedyCapacity,
        _ => {
            let theta = name
                .strip_prefix("threshold:")
                .ok_or_else(|| RunError::Usage(format!("unknown policy {name:?}")))?
                .split('/')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| RunError::Usage(format!("policy {name:?}: {e}")))?;
            AdmissionPolicy::Threshold { theta }
        }
    };
    policy.validate()?;
    Ok(PolicyOverride::Admission(policy))
}

impl PolicyOverride {
    pub fn apply(&self, scenario: &Scenario) -> Scenario {
        let mut s = scenario.clone();
        match self {
            PolicyOverride::Objective(k) => s.spec.sdmx.objective = *k,
            PolicyOverride::Admission(p) => s.spec.admission = p.clone(),
        }
        s
    }

    pub fn name(&self) -> String {
        match self {
            PolicyOverride::Objective(k) => serde_json::to_value(k)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            PolicyOverride::Admission(p) => p.name(),
        }
    }
}

/// One-sided paired sign test of `challenger > baseline`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignTest {
    pub baseline: String,
    pub challenger: String,
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    pub mean_diff: f64,
    /// `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`; ties dropped.
    pub p_value: f64,
}

impl SignTest {
    pub fn of(baseline: &str, challenger: &str, pairs: &[(f64, f64)]) -> Self {
        let wins = pairs.iter().filter(|(b, c)| c > b).count() as u64;
        let losses = pairs.iter().filter(|(b, c)| c < b).count() as u64;
        let n = wins + losses;
        let p_value = if wins == 0 {
            1.0
        } else {
            Binomial::new(0.5, n).expect("valid binomial").sf(wins - 1)
        };
        Self {
            baseline: baseline.into(),
            challenger: challenger.into(),
            wins,
            losses,
            ties: pairs.len() as u64 - n,
            mean_diff: pairs.iter().map(|(b, c)| c - b).sum::<f64>() / pairs.len().max(1) as f64,
            p_value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub metric: String,
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    /// `values[i][j]`: seed `i` under policy `j`.
    pub values: Vec<Vec<f64>>,
    /// Each later policy against the first.
    pub tests: Vec<SignTest>,
}

/// Runs every policy on every seed. Seeds pair the runs: the random
/// streams are keyed by seed alone, so two policies see the same channel,
/// traffic, mobility and requests.
pub fn compare(
    scenario: &Scenario,
    policies: &[PolicyOverride],
    seeds: &[u64],
    metric: &str,
) -> Result<CompareReport, RunError> {
    if policies.len() < 2 {
        return Err(RunError::Usage("compare needs at least two policies".into()));
    }
    let variants: Vec<Scenario> = policies.iter().map(|p| p.apply(scenario)).collect();
    let values = run_seeds(seeds, |seed| {
        variants
            .iter()
            .map(|v| {
                let m = run(v, seed)?.summary.metrics();
                m.get(metric)
                    .copied()
                    .ok_or_else(|| RunError::Usage(format!("unknown metric {metric:?}")))
            })
            .collect::<Result<Vec<f64>, RunError>>()
    })?;
    let names: Vec<String> = policies.iter().map(PolicyOverride::name).collect();
    let tests = (1..names.len())
        .map(|j| {
            let pairs: Vec<(f64, f64)> = values.iter().map(|row| (row[0], row[j])).collect();
            SignTest::of(&names[0], &names[j], &pairs)
        })
        .collect();
    Ok(CompareReport {
        metric: metric.into(),
        policies: names,
        seeds: seeds.to_vec(),
        values,
        tests,
    })
}

impl CompareReport {
    /// Plain-text table: one row per seed, then the sign tests.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:>6}", "seed");
        for p in &self.policies {
            let _ = write!(out, " {p:>22}");
        }
        out.push('\n');
        for (seed, row) in self.seeds.iter().zip(&self.values) {
            let _ = write!(out, "{seed:>6}");
            for v in row {
                let _ = write!(out, " {v:>22}");
            }
            out.push('\n');
        }
        for t in &self.tests {
            let _ = writeln!(
                out,
                "{} vs {} on {}: wins {} losses {} ties {} mean diff {} sign-test p {}",
                t.challenger, t.baseline, self.metric, t.wins, t.losses, t.ties, t.mean_diff, t.p_value
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub seed: u64,
    pub sweep: ThresholdSweep,
    pub best_revenue: f64,
    pub best_penalties: f64,
    pub always_accept_net: f64,
    /// Best price total of any capacity-feasible request subset; absent when
    /// the instance is too large to solve.
    pub offline_bound: Option<f64>,
}

const OFFLINE_MAX_STATES: usize = 1 << 20;

/// Evaluates every threshold vector in `grid` by a full run under `seed`.
pub fn sweep_thresholds(scenario: &Scenario, grid: &[Vec<f64>], seed: u64) -> Result<SweepReport, RunError> {
    let trace = scenario.requests_for(seed)?;
    let classes = trace.iter().map(|r| usize::from(r.class_id) + 1).max().unwrap_or(0);
    if let Some(c) = grid.iter().find(|c| c.len() < classes) {
        return Err(RunError::Usage(format!(
            "threshold vector {c:?} has fewer entries than the {classes} request classes"
        )));
    }
    let with = |p: AdmissionPolicy| PolicyOverride::Admission(p).apply(scenario);
    let sweep = optimize_thresholds::<RunError, _>(grid, |theta| {
        Ok(run(&with(AdmissionPolicy::Threshold { theta: theta.to_vec() }), seed)?
            .summary
            .broker
            .net)
    })?;
    let best = run(
        &with(AdmissionPolicy::Threshold {
            theta: sweep.best.clone(),
        }),
        seed,
    )?
    .summary
    .broker;
    let always = run(&with(AdmissionPolicy::AlwaysAccept), seed)?.summary.broker;
    let horizon = scenario.spec.duration_windows;
    let offline_bound = offline_optimal(&trace, scenario.grid_cells(), horizon, OFFLINE_MAX_STATES).ok();
    Ok(SweepReport {
        seed,
        sweep,
        best_revenue: best.revenue,
        best_penalties: best.penalties,
        always_accept_net: always.net,
        offline_bound,
    })
}

impl SweepReport {
    /// `sweep.csv` (one row per candidate) and `best.json`.
    pub fn write_to(&self, dir: &Path) -> Result<(), RunError> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| RunError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["theta", "net"]).expect("in-memory write");
        for (theta, net) in &self.sweep.evaluated {
            let t: Vec<String> = theta.iter().map(f64::to_string).collect();
            w.write_record([t.join("/"), net.to_string()]).expect("in-memory write");
        }
        let path = dir.join("sweep.csv");
        fs::write(&path, w.into_inner().expect("in-memory flush")).map_err(io(&path))?;
        let best = serde_json::json!({
            "seed": self.seed,
            "theta": self.sweep.best,
            "net": self.sweep.best_net,
            "revenue": self.best_revenue,
            "penalties": self.best_penalties,
            "always_accept_net": self.always_accept_net,
            "offline_bound": self.offline_bound,
        });
        let path = dir.join("best.json");
        let mut text = serde_json::to_vec_pretty(&best).expect("json serializes");
        text.push(b'\n');
        fs::write(&path, text).map_err(io(&path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("5,1").unwrap(), vec![5, 1]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn stats_examples() {
        let one = Stats::of(&[4.0]);
        assert_eq!((one.mean, one.stddev, one.min, one.max), (4.0, 0.0, 4.0, 4.0));
        let same = Stats::of(&[2.0, 2.0, 2.0]);
        assert_eq!(same.stddev, 0.0);
        let s = Stats::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.stddev - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sign_test_matches_binomial_tail() {
        // all 20 positive: 2^-20
        let pairs: Vec<(f64, f64)> = (0..20).map(|i| (f64::from(i), f64::from(i) + 1.0)).collect();
        let t = SignTest::of("a", "b", &pairs);
        assert_eq!((t.wins, t.losses, t.ties), (20, 0, 0));
        assert!((t.p_value - 0.5f64.powi(20)).abs() < 1e-15);
        // 2 wins of 3 with one tie: P(X >= 2 | n = 3) = 4/8
        let t = SignTest::of("a", "b", &[(0.0, 1.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]);
        assert_eq!(t.ties, 1);
        assert!((t.p_value - 0.5).abs() < 1e-12);
        assert_eq!(SignTest::of("a", "b", &[(1.0, 0.0)]).p_value, 1.0);
    }

    #[test]
    fn policy_names() {
        assert_eq!(
            parse_policy("weighted-fair").unwrap(),
            PolicyOverride::Objective(ObjectiveKind::WeightedFair)
        );
        assert_eq!(parse_policy("max-se").unwrap().name(), "max-se");
        assert_eq!(
            parse_policy("threshold:0.5/1").unwrap(),
            PolicyOverride::Admission(AdmissionPolicy::Threshold { theta: vec![0.5, 1.0] })
        );
        assert!(parse_policy("threshold:2").is_err());
        assert!(parse_policy("fastest").is_err());
    }
}
