//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line, with its wall time against its limit.
//! Exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use netslice::broker::{offline_optimal, parse_theta_grid, SliceRequest};
use netslice::grid::{build_grid, carve_tiles, Cell, CellQuality, GridConfig, ResourceMask, TileSpec, Tiling};
use netslice::ids::{FlowId, NodeId, SliceId, TenantId, UeId};
use netslice::multiconn::{duplicate_reliability, simulate_duplicate_losses};
use netslice::radio::Topology;
use netslice::rng::{stream, Stream};
use netslice::runner::{
    compare, load_scenario, parse_policy, run, sweep_thresholds, ObjectiveKind, PolicyOverride, Scenario,
};
use netslice::scheduling::{
    compute_masks, schedule_within_mask, Account, Allocation, Claimant, PfState, Reservation, SdmxObjective,
    SdmxPolicy, SliceDemand, SlicePolicy,
};
use netslice::uca::{baseline_handover, form_uca, on_cell_change, UcaCosts};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CHILD_ENV: &str = "NETSLICE_ACCEPTANCE_COMPARE_OUT";

type Outcome = Result<String, String>;

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn scenario(name: &str) -> Scenario {
    load_scenario(&scenarios_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Quality keyed by `(ue, node, cell)`, for instances where nodes differ.
#[derive(Default)]
struct Table(BTreeMap<(UeId, NodeId, Cell), f64>);

impl CellQuality for Table {
    fn spectral_efficiency(&self, ue: UeId, node: NodeId, cell: Cell) -> Option<f64> {
        self.0.get(&(ue, node, cell)).copied()
    }
}

fn tiling(n_rb: u32, slots: u32, split: Option<u32>) -> Tiling {
    let grid = build_grid(&GridConfig {
        n_rb,
        slots_per_window: slots,
        window_ms: 10.0,
    })
    .unwrap();
    match split {
        None => Tiling::whole(&grid, 0),
        Some(at) => carve_tiles(
            &grid,
            &[
                TileSpec {
                    id: 0,
                    rb_range: 0..at,
                    slot_range: 0..slots,
                    numerology: 0,
                },
                TileSpec {
                    id: 1,
                    rb_range: at..n_rb,
                    slot_range: 0..slots,
                    numerology: 1,
                },
            ],
        )
        .unwrap(),
    }
}

fn all_cells(t: &Tiling) -> Vec<Cell> {
    t.grid().cells().collect()
}

// ---------------------------------------------------------------- 1

type Window = (
    Tiling,
    BTreeMap<SliceId, ResourceMask>,
    Allocation,
    BTreeMap<SliceId, u8>,
);

fn random_window(rng: &mut ChaCha8Rng, window: u64) -> Option<Window> {
    let n_rb = rng.random_range(2..=12);
    let slots = rng.random_range(1..=6);
    let split = rng.random_bool(0.4).then(|| rng.random_range(1..n_rb));
    let t = tiling(n_rb, slots, split);
    let cells = all_cells(&t);
    let nodes = [NodeId(0), NodeId(1), NodeId(2)];
    let n_slices = rng.random_range(1..=5u32);
    let mut quality = Table::default();
    let mut demands = Vec::new();
    let mut ue_id = 0;
    for s in 0..n_slices {
        let numerology = if split.is_some() { rng.random_range(0..=1) } else { 0 };
        let mut ues = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            let ue = UeId(ue_id);
            ue_id += 1;
            let serving: Vec<NodeId> = nodes.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
            let serving = if serving.is_empty() { vec![NodeId(0)] } else { serving };
            for &n in &serving {
                for &c in &cells {
                    if rng.random_bool(0.9) {
                        quality.0.insert((ue, n, c), rng.random_range(0.0..6.0));
                    }
                }
            }
            ues.push((ue, serving));
        }
        demands.push(SliceDemand {
            slice: SliceId(s + 1),
            numerology,
            backlog_bits: if rng.random_bool(0.8) {
                rng.random_range(1..50_000)
            } else {
                0
            },
            ues,
        });
    }
    let weights: BTreeMap<SliceId, f64> = demands.iter().map(|d| (d.slice, rng.random_range(0.1..4.0))).collect();
    let objective = match rng.random_range(0..4) {
        0 => SdmxObjective::StaticSplit {
            shares: weights.clone(),
        },
        1 => SdmxObjective::WeightedFair {
            weights: weights.clone(),
        },
        2 => SdmxObjective::MaxSpectralEfficiency,
        _ => SdmxObjective::FairnessWithFloor {
            floors: demands.iter().map(|d| (d.slice, rng.random_range(0..3))).collect(),
            weights: weights.clone(),
        },
    };
    let mut policy = SdmxPolicy::new(objective);
    if rng.random_bool(0.5) {
        let d = demands.choose(rng).unwrap();
        let own: Vec<Cell> = t.cells_with_numerology(d.numerology);
        let cells: BTreeSet<Cell> = own.iter().copied().filter(|_| rng.random_bool(0.2)).collect();
        if !cells.is_empty() {
            policy.reservations.push(Reservation {
                slice: d.slice,
                cells,
                period_windows: rng.random_range(1..=3),
            });
        }
    }
    if rng.random_bool(0.3) {
        let d = demands.choose(rng).unwrap();
        policy.exclusions.insert(
            d.slice,
            cells.iter().copied().filter(|_| rng.random_bool(0.3)).collect(),
        );
    }
    // floors beyond capacity are a legitimate refusal, not a window
    let masks = compute_masks(&t, &demands, &quality, &policy, window).ok()?;

    let mut alloc = Allocation::new(window);
    for d in &demands {
        let claimants: Vec<Claimant> = d
            .ues
            .iter()
            .enumerate()
            .map(|(k, (ue, nodes))| Claimant {
                flow: FlowId(ue.0),
                ue: *ue,
                nodes: nodes.clone(),
                account: k,
            })
            .collect();
        let mut accounts: Vec<Account> = d
            .ues
            .iter()
            .map(|(ue, _)| {
                Account::new(
                    FlowId(ue.0),
                    [(rng.random_range(0.0..20.0), rng.random_range(1..20_000))],
                )
            })
            .collect();
        let sched = match rng.random_range(0..3) {
            0 => SlicePolicy::RoundRobin,
            1 => SlicePolicy::ProportionalFair { horizon: 5.0 },
            _ => SlicePolicy::EarliestDeadlineFirst,
        };
        let grants = schedule_within_mask(
            d.slice,
            &masks[&d.slice],
            &claimants,
            &mut accounts,
            &quality,
            14,
            &sched,
            &PfState::default(),
        )
        .unwrap();
        alloc.push_grants(d.slice, &grants);
    }
    let numerology = demands.iter().map(|d| (d.slice, d.numerology)).collect();
    Some((t, masks, alloc, numerology))
}

fn isolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x150);
    let (mut windows, mut overlaps, mut outside, mut foreign, mut grants) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let mut attempt = 0u64;
    while windows < 1000 {
        attempt += 1;
        check(attempt < 10_000, || "too many refused windows".into())?;
        let Some((t, masks, alloc, numerology)) = random_window(&mut rng, attempt) else {
            continue;
        };
        windows += 1;
        let mut owner: BTreeMap<Cell, SliceId> = BTreeMap::new();
        for (s, m) in &masks {
            for c in &m.cells {
                if owner.insert(*c, *s).is_some() {
                    overlaps += 1;
                }
                if t.numerology_of(*c) != numerology[s] {
                    foreign += 1;
                }
            }
        }
        for e in &alloc.entries {
            grants += 1;
            if !masks[&e.slice].cells.contains(&e.cell) {
                outside += 1;
            }
        }
        alloc
            .check_isolation(&masks)
            .map_err(|e| format!("window {attempt}: {e}"))?;
    }
    check(overlaps == 0 && outside == 0 && foreign == 0, || {
        format!("{overlaps} overlapping cells, {outside} out-of-mask grants, {foreign} foreign-numerology cells")
    })?;
    Ok(format!("{windows} windows, {grants} grants, 0 overlaps, 0 out-of-mask"))
}

// ---------------------------------------------------------------- 2

/// Every cell-to-slice assignment, in lexicographic order by cell; the first
/// strict maximum of summed best efficiency wins, so ties go to the earliest
/// slice on the earliest cell.
fn max_se_oracle(cells: &[Cell], demands: &[SliceDemand], quality: &Table) -> BTreeMap<SliceId, BTreeSet<Cell>> {
    let mut out: BTreeMap<SliceId, BTreeSet<Cell>> = demands.iter().map(|d| (d.slice, BTreeSet::new())).collect();
    let mut members: Vec<&SliceDemand> = demands.iter().filter(|d| d.backlog_bits > 0).collect();
    members.sort_by_key(|d| d.slice);
    if members.is_empty() || cells.is_empty() {
        return out;
    }
    // values are multiples of 0.5, so twice them are exact integers
    let value: Vec<Vec<i64>> = cells
        .iter()
        .map(|&c| {
            members
                .iter()
                .map(|d| {
                    let mut best = 0.0f64;
                    for (ue, nodes) in &d.ues {
                        for n in nodes {
                            if let Some(se) = quality.spectral_efficiency(*ue, *n, c) {
                                best = best.max(se);
                            }
                        }
                    }
                    (best * 2.0) as i64
                })
                .collect()
        })
        .collect();
    let k = members.len();
    let mut pick = vec![0usize; cells.len()];
    let mut best: Option<(i64, Vec<usize>)> = None;
    loop {
        let total: i64 = pick.iter().enumerate().map(|(i, &s)| value[i][s]).sum();
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, pick.clone()));
        }
        let mut i = cells.len();
        loop {
            if i == 0 {
                let (_, p) = best.unwrap();
                for (ci, s) in p.into_iter().enumerate() {
                    out.get_mut(&members[s].slice).unwrap().insert(cells[ci]);
                }
                return out;
            }
            i -= 1;
            pick[i] += 1;
            if pick[i] < k {
                break;
            }
            pick[i] = 0;
        }
    }
}

struct PfCase {
    mask: ResourceMask,
    claimants: Vec<Claimant>,
    backlog: Vec<u64>,
    served: BTreeMap<FlowId, u64>,
    horizon: f64,
    quality: Table,
}

/// Resource by resource in `(slot, rb, node)` order: the backlogged
/// claimant with the largest `bits / average`, ties to the lowest UE.
fn pf_oracle(case: &PfCase, symbols: u32) -> Vec<(Cell, NodeId, UeId, u64)> {
    let avg =
        |f: FlowId| (1.0 - 1.0 / case.horizon) * 1.0 + case.served.get(&f).copied().unwrap_or(0) as f64 / case.horizon;
    let mut left = case.backlog.clone();
    let nodes: BTreeSet<NodeId> = case.claimants.iter().flat_map(|c| c.nodes.clone()).collect();
    let mut out = Vec::new();
    for &cell in &case.mask.cells {
        for &node in &nodes {
            let mut best: Option<(f64, UeId, usize, u64)> = None;
            for (i, c) in case.claimants.iter().enumerate() {
                if !c.nodes.contains(&node) || left[c.account] == 0 {
                    continue;
                }
                let Some(se) = case.quality.spectral_efficiency(c.ue, node, cell) else {
                    continue;
                };
                let bits = (se * symbols as f64).floor() as u64;
                if bits == 0 {
                    continue;
                }
                let m = bits as f64 / avg(c.flow);
                let better = match best {
                    None => true,
                    Some((bm, bue, _, _)) => m > bm || (m == bm && c.ue < bue),
                };
                if better {
                    best = Some((m, c.ue, i, bits));
                }
            }
            if let Some((_, ue, i, bits)) = best {
                let a = case.claimants[i].account;
                let got = bits.min(left[a]);
                left[a] -= got;
                out.push((cell, node, ue, got));
            }
        }
    }
    out
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let levels = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0];
    let mut ties = 0;
    let instances = 150;
    for inst in 0..instances {
        let n_rb = rng.random_range(1..=4);
        let slots = rng.random_range(1..=3);
        let t = tiling(n_rb, slots, None);
        let cells = all_cells(&t);
        let mut quality = Table::default();
        let n_slices = rng.random_range(1..=4u32);
        let mut demands = Vec::new();
        let mut ue_id = 0;
        for s in 0..n_slices {
            let mut ues = Vec::new();
            for _ in 0..rng.random_range(1..=4) {
                let ue = UeId(ue_id);
                ue_id += 1;
                let nodes: Vec<NodeId> = if rng.random_bool(0.3) {
                    vec![NodeId(0), NodeId(1)]
                } else {
                    vec![NodeId(rng.random_range(0..2))]
                };
                for &n in &nodes {
                    for &c in &cells {
                        if rng.random_bool(0.85) {
                            quality.0.insert((ue, n, c), *levels.choose(&mut rng).unwrap());
                        }
                    }
                }
                ues.push((ue, nodes));
            }
            demands.push(SliceDemand {
                slice: SliceId(s + 1),
                numerology: 0,
                backlog_bits: if rng.random_bool(0.85) { 1000 } else { 0 },
                ues,
            });
        }
        let policy = SdmxPolicy::new(SdmxObjective::MaxSpectralEfficiency);
        let masks = compute_masks(&t, &demands, &quality, &policy, 0).map_err(|e| e.to_string())?;
        let got: BTreeMap<SliceId, BTreeSet<Cell>> = masks.iter().map(|(s, m)| (*s, m.cells.clone())).collect();
        let want = max_se_oracle(&cells, &demands, &quality);
        check(got == want, || {
            format!("max-se instance {inst}: got {got:?}, oracle {want:?}")
        })?;

        // one slice, PF inside a random mask
        let mask = ResourceMask::with_cells(SliceId(1), 0, cells.iter().copied().filter(|_| rng.random_bool(0.7)));
        let n_ues = rng.random_range(1..=4u32);
        let claimants: Vec<Claimant> = (0..n_ues)
            .map(|u| Claimant {
                flow: FlowId(u),
                ue: UeId(u),
                nodes: if rng.random_bool(0.3) {
                    vec![NodeId(0), NodeId(1)]
                } else {
                    vec![NodeId(0)]
                },
                account: u as usize,
            })
            .collect();
        let mut pq = Table::default();
        for c in &claimants {
            for &n in &c.nodes {
                for &cell in &cells {
                    pq.0.insert((c.ue, n, cell), *levels[1..].choose(&mut rng).unwrap());
                }
            }
        }
        let backlog: Vec<u64> = (0..n_ues).map(|_| rng.random_range(0..120)).collect();
        let served: BTreeMap<FlowId, u64> = (0..n_ues)
            .map(|u| (FlowId(u), *[0u64, 10, 20, 40].choose(&mut rng).unwrap()))
            .collect();
        let case = PfCase {
            mask,
            claimants,
            backlog,
            served,
            horizon: 2.0,
            quality: pq,
        };
        let mut pf = PfState::default();
        pf.update(case.horizon, case.served.keys().copied(), &case.served);
        let mut accounts: Vec<Account> = case
            .backlog
            .iter()
            .enumerate()
            .map(|(i, &b)| Account::new(FlowId(i as u32), [(f64::INFINITY, b)]))
            .collect();
        let grants = schedule_within_mask(
            SliceId(1),
            &case.mask,
            &case.claimants,
            &mut accounts,
            &case.quality,
            14,
            &SlicePolicy::ProportionalFair { horizon: case.horizon },
            &pf,
        )
        .map_err(|e| e.to_string())?;
        let got: Vec<(Cell, NodeId, UeId, u64)> = grants
            .iter()
            .map(|g| (g.resource.cell, g.resource.node, g.ue, g.bits))
            .collect();
        let want = pf_oracle(&case, 14);
        check(got == want, || {
            format!("pf instance {inst}: got {got:?}, oracle {want:?}")
        })?;
        let distinct: BTreeSet<u64> = case.served.values().copied().collect();
        if distinct.len() < case.served.len() {
            ties += 1;
        }
    }
    Ok(format!(
        "{instances} max-se and {instances} PF instances match; {ties} with tied PF averages"
    ))
}

// ---------------------------------------------------------------- 3

fn multiplexing() -> Outcome {
    let sc = scenario("multiplexing.toml");
    let policies = [
        PolicyOverride::Objective(ObjectiveKind::StaticSplit),
        PolicyOverride::Objective(ObjectiveKind::WeightedFair),
    ];
    let seeds: Vec<u64> = (0..20).collect();
    let report = compare(&sc, &policies, &seeds, "total_served_bits").map_err(|e| e.to_string())?;
    let diffs: Vec<f64> = report.values.iter().map(|r| r[1] - r[0]).collect();
    if let Some((i, d)) = diffs.iter().enumerate().find(|(_, d)| **d < 0.0) {
        return Err(format!("seed {i}: weighted-fair serves {d} bits less"));
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    check(mean > 0.0, || format!("mean gain {mean}"))?;
    // independent binomial tail: P(X >= wins), X ~ Bin(n, 1/2)
    let wins = diffs.iter().filter(|d| **d > 0.0).count() as u64;
    let n = diffs.iter().filter(|d| **d != 0.0).count() as u64;
    let choose = |n: u64, k: u64| (0..k).fold(1.0f64, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let p: f64 = (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32);
    let reported = report.tests[0].p_value;
    check((p - reported).abs() < 1e-12, || {
        format!("sign test p {reported}, oracle {p}")
    })?;
    check(p < 0.05, || format!("sign test p {p}"))?;
    Ok(format!(
        "20/20 seeds non-negative, mean gain {mean:.0} bits, sign-test p {p:.2e}"
    ))
}

// ---------------------------------------------------------------- 4

fn enumerate_all(trace: &[SliceRequest], cap: u32, horizon: u64) -> f64 {
    let mut best = 0.0f64;
    for subset in 0u32..(1 << trace.len()) {
        let mut load = vec![0u32; horizon as usize];
        let mut value = 0.0;
        for (i, r) in trace.iter().enumerate() {
            if subset & (1 << i) == 0 {
                continue;
            }
            let end = (r.arrival_window + r.duration_windows).min(horizon);
            for w in r.arrival_window..end {
                load[w as usize] += r.demand_cells_per_window;
            }
            value += r.price_per_window * end.saturating_sub(r.arrival_window) as f64;
        }
        if load.iter().all(|l| *l <= cap) {
            best = best.max(value);
        }
    }
    best
}

fn broker() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0);
    for inst in 0..50 {
        let horizon = 12;
        let trace: Vec<SliceRequest> = (0..10)
            .map(|id| SliceRequest {
                id,
                tenant_id: TenantId(1),
                blueprint: "b".into(),
                demand_cells_per_window: rng.random_range(1..=6),
                duration_windows: rng.random_range(1..=8),
                price_per_window: rng.random_range(1..=10) as f64,
                penalty_per_violation: 0.0,
                arrival_window: rng.random_range(0..horizon),
                class_id: 0,
            })
            .collect();
        let exact = offline_optimal(&trace, 10, horizon, 1 << 16).map_err(|e| e.to_string())?;
        let brute = enumerate_all(&trace, 10, horizon);
        check(exact == brute, || {
            format!("instance {inst}: offline {exact}, enumeration {brute}")
        })?;
    }

    let sc = scenario("scarcity.toml");
    let grid = parse_theta_grid("0:1:5;0:1:5").map_err(|e| e.to_string())?;
    let mut beats = 0;
    for seed in 0..20 {
        let r = sweep_thresholds(&sc, &grid, seed).map_err(|e| e.to_string())?;
        let bound = r
            .offline_bound
            .ok_or(format!("seed {seed}: offline bound unavailable"))?;
        check(r.best_revenue <= bound + 1e-9, || {
            format!(
                "seed {seed}: best revenue {} above offline bound {bound}",
                r.best_revenue
            )
        })?;
        if r.sweep.best_net > r.always_accept_net {
            beats += 1;
        }
    }
    check(beats >= 18, || {
        format!("threshold beats always-accept on {beats}/20 seeds")
    })?;
    Ok(format!(
        "50 enumeration instances match; bound holds 20/20; threshold wins {beats}/20"
    ))
}

// ---------------------------------------------------------------- 5

fn duplication() -> Outcome {
    let legs = [1e-2, 1e-2];
    let analytic = duplicate_reliability(&legs).map_err(|e| e.to_string())?;
    check((analytic - 1e-4).abs() < 1e-18, || format!("analytic {analytic}"))?;
    let n: u64 = 10_000_000;
    let lost = simulate_duplicate_losses(&legs, n, &mut stream(2024, Stream::Channel));
    let rate = lost as f64 / n as f64;
    let sigma = (1e-4 * (1.0 - 1e-4) / n as f64).sqrt();
    check((rate - 1e-4).abs() <= 3.0 * sigma, || {
        format!("empirical {rate}, 3σ = {}", 3.0 * sigma)
    })?;
    Ok(format!(
        "analytic {analytic:e}, empirical {rate:e} over 1e7 packets (3σ {:.2e})",
        3.0 * sigma
    ))
}

// ---------------------------------------------------------------- 6

fn uca() -> Outcome {
    let sc = scenario("uca_grid.toml");
    check(sc.topology.len() == 9 && sc.spec.duration_windows >= 10_000, || {
        "scenario is not 9 nodes × 10^4 windows".into()
    })?;
    let mut worst = (0u64, 0u64);
    for seed in 0..20 {
        let s = run(&sc, seed).map_err(|e| e.to_string())?.summary.signaling;
        check(s.uca.cn_messages < s.baseline.cn_messages, || {
            format!(
                "seed {seed}: uca cn {} vs baseline {}",
                s.uca.cn_messages, s.baseline.cn_messages
            )
        })?;
        if worst == (0, 0) || s.uca.cn_messages * worst.1 > worst.0 * s.baseline.cn_messages {
            worst = (s.uca.cn_messages, s.baseline.cn_messages);
        }
    }

    // a walk among the nodes of the initial set never touches the core
    let topo = Topology::lattice(3, 3, 100.0);
    let costs = UcaCosts::default();
    let start = topo.nodes()[4].position;
    let mut u = form_uca(UeId(0), &start, &topo, 4).map_err(|e| e.to_string())?;
    let members: Vec<NodeId> = u.nodes.iter().copied().collect();
    let (mut cn, mut baseline_cn) = (0, 0);
    for step in 0..1000 {
        let next = members[(step * 7 + 1) % members.len()];
        let (n, _, delta) = on_cell_change(&u, next, &topo, &costs).map_err(|e| e.to_string())?;
        cn += delta.cn_messages;
        baseline_cn += baseline_handover(&costs).cn_messages;
        check(n.anchor == u.anchor && n.nodes == u.nodes, || {
            "set moved on an intra-set change".into()
        })?;
        u = n;
    }
    check(cn == 0, || format!("{cn} core messages on an intra-only walk"))?;
    Ok(format!(
        "cn uca < baseline on 20/20 seeds (worst {} vs {}); intra-only walk: 0 vs {baseline_cn}",
        worst.0, worst.1
    ))
}

// ---------------------------------------------------------------- 7

fn deterministic_sla() -> Outcome {
    let sc = scenario("deterministic_sla.toml");
    let control = |sc: &Scenario| -> Result<(u64, u64), String> {
        let s = run(sc, sc.spec.seed).map_err(|e| e.to_string())?.summary;
        let c = s
            .slices
            .iter()
            .find(|x| x.slice == SliceId(1))
            .ok_or("no control slice")?;
        Ok((c.completed_packets, c.latency_violations))
    };
    let (completed, with) = control(&sc)?;
    check(completed > 0, || "control slice completed nothing".into())?;
    check(with == 0, || format!("{with} violations with the reservation"))?;
    let mut spec = sc.spec.clone();
    spec.sdmx.reservations.clear();
    let bare = Scenario::from_spec(spec, &scenarios_dir()).map_err(|e| e.to_string())?;
    let (_, without) = control(&bare)?;
    check(without >= 1, || "no violations without the reservation".into())?;
    Ok(format!(
        "0 violations over {completed} packets reserved, {without} without"
    ))
}

// ---------------------------------------------------------------- 8

fn compare_text() -> String {
    let sc = scenario("scarcity.toml");
    let policies: Vec<PolicyOverride> = ["always-accept", "greedy-capacity", "threshold:0.75/0.5"]
        .iter()
        .map(|p| parse_policy(p).unwrap())
        .collect();
    let seeds: Vec<u64> = (0..8).collect();
    compare(&sc, &policies, &seeds, "net_revenue").unwrap().render()
}

fn determinism() -> Outcome {
    let mut names: Vec<String> = std::fs::read_dir(scenarios_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".toml"))
        .collect();
    names.sort();
    for name in &names {
        let sc = scenario(name);
        let a = run(&sc, sc.spec.seed).map_err(|e| format!("{name}: {e}"))?.digest();
        let b = run(&sc, sc.spec.seed).map_err(|e| format!("{name}: {e}"))?.digest();
        check(a == b, || format!("{name}: {a} vs {b}"))?;
    }

    let here = compare_text();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("compare-{i}.txt"));
        let status = Command::new(std::env::current_exe().map_err(|e| e.to_string())?)
            .env(CHILD_ENV, &out)
            .status()
            .map_err(|e| e.to_string())?;
        check(status.success(), || format!("child exited with {status}"))?;
        outputs.push(std::fs::read_to_string(&out).map_err(|e| e.to_string())?);
    }
    check(outputs.iter().all(|o| *o == here), || {
        "compare output differs between processes".into()
    })?;
    Ok(format!(
        "{} scenarios rerun identically; compare identical across 2 processes",
        names.len()
    ))
}

// ---------------------------------------------------------------- 9

fn closed_form() -> Outcome {
    let sc = scenario("minimal.toml");
    let report = run(&sc, sc.spec.seed).map_err(|e| e.to_string())?;
    // 50 rb × 10 slots × floor(2.0 × 168) bits
    let expected = 50 * 10 * ((2.0f64 * 168.0).floor() as u64);
    check(!report.slices.is_empty(), || "no rows".into())?;
    for r in &report.slices {
        check(r.served_bits == expected, || {
            format!("window {}: {} bits", r.window, r.served_bits)
        })?;
    }
    check(expected == 168_000, || format!("oracle {expected}"))?;
    Ok(format!("{} windows at {expected} bits", report.slices.len()))
}

fn main() {
    if let Some(out) = std::env::var_os(CHILD_ENV) {
        std::fs::write(out, compare_text()).expect("child writes compare output");
        return;
    }
    type Criterion = (&'static str, u64, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("1 isolation", 60, isolation),
        ("2 oracle equivalence", 120, oracle_equivalence),
        ("3 multiplexing", 600, multiplexing),
        ("4 broker", 300, broker),
        ("5 duplication", 60, duplication),
        ("6 uca", 600, uca),
        ("7 deterministic sla", 600, deterministic_sla),
        ("8 determinism", 600, determinism),
        ("9 closed form", 600, closed_form),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = t.elapsed();
        let outcome = outcome.and_then(|m| {
            if took <= Duration::from_secs(limit) {
                Ok(m)
            } else {
                Err(format!("{m}; took {took:.1?}, limit {limit}s"))
            }
        });
        match outcome {
            Ok(m) => println!("PASS criterion {name} ({took:.2?}): {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL criterion {name} ({took:.2?}): {m}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
