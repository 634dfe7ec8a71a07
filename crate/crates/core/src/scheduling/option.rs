//! RAN sharing options and the Option-2 common MAC.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::sdmc::claimant_bits;
use super::{apportion, Account, Claimant, Grant, PfState, Resource, SchedError, SlicePolicy};
use crate::grid::{CellQuality, ResourceMask};
use crate::ids::{FlowId, NodeId, SliceId};
use crate::slices::RanOption;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerOwner {
    Tenant,
    Coordinator,
}

/// Who schedules a slice and how.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub option: RanOption,
    pub owner: SchedulerOwner,
    /// The tenant only orders its flows; the common MAC picks cells.
    pub pre_schedule: bool,
    /// Masks handed to the tenant must match its numerology tile by tile.
    pub enforce_numerology: bool,
    pub policy: SlicePolicy,
}

/// Option 1: the tenant runs its own scheduler in its mask. Option 2: the
/// tenant submits a flow order and the common MAC decides. Option 3: the
/// coordinator runs the slice's configured policy itself. Options 1 and 3
/// therefore produce identical grants for identical inputs.
pub fn apply_option(
    slice: SliceId,
    option: RanOption,
    policy: &SlicePolicy,
    pre_schedule: Option<&[FlowId]>,
) -> Result<PipelineConfig, SchedError> {
    policy.validate()?;
    let (owner, pre, enforce) = match option {
        RanOption::One => (SchedulerOwner::Tenant, false, true),
        RanOption::Two => {
            if pre_schedule.is_none() {
                return Err(SchedError::MissingPreSchedule(slice));
            }
            (SchedulerOwner::Coordinator, true, true)
        }
        RanOption::Three => (SchedulerOwner::Coordinator, false, false),
    };
    Ok(PipelineConfig {
        option,
        owner,
        pre_schedule: pre,
        enforce_numerology: enforce,
        policy: policy.clone(),
    })
}

/// A tenant's priority order over its backlogged claimants, derived from its
/// policy: round robin by UE id, EDF by head deadline, PF by ascending
/// average rate.
pub fn preschedule(claimants: &[Claimant], accounts: &[Account], policy: &SlicePolicy, pf: &PfState) -> Vec<usize> {
    let mut order: Vec<usize> = (0..claimants.len())
        .filter(|&i| accounts[claimants[i].account].backlog() > 0)
        .collect();
    let key = |i: usize| (claimants[i].ue, claimants[i].flow, i);
    match policy {
        SlicePolicy::RoundRobin => order.sort_by_key(|&i| key(i)),
        SlicePolicy::EarliestDeadlineFirst => order.sort_by(|&a, &b| {
            let d = |i: usize| accounts[claimants[i].account].head_deadline().unwrap_or(f64::INFINITY);
            d(a).total_cmp(&d(b)).then(key(a).cmp(&key(b)))
        }),
        SlicePolicy::ProportionalFair { .. } => order.sort_by(|&a, &b| {
            let r = |i: usize| pf.average(claimants[i].flow);
            r(a).total_cmp(&r(b)).then(key(a).cmp(&key(b)))
        }),
    }
    order
}

/// One Option-2 tenant's submission to the common MAC.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TenantPlan {
    pub slice: SliceId,
    pub weight: f64,
    pub claimants: Vec<Claimant>,
    pub accounts: Vec<Account>,
    /// Claimant indices, highest priority first.
    pub order: Vec<usize>,
}

/// A pre-scheduled flow left with backlog because its tenant was already at
/// or over its weighted share of the pooled cells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemotionEvent {
    pub window_index: u64,
    pub slice: SliceId,
    pub flow: FlowId,
    pub cells_taken: usize,
    pub fair_share: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CommonMacOutcome {
    pub grants: BTreeMap<SliceId, Vec<Grant>>,
    /// Masks after reassignment: cells taken, plus untaken cells of the
    /// original mask.
    pub masks: BTreeMap<SliceId, ResourceMask>,
    pub demotions: Vec<DemotionEvent>,
}

/// Common MAC for Option-2 tenants sharing the union of their masks.
///
/// Cells are visited in `(slot, rb)` order. Each goes to the tenant, among
/// those that can still use it, with the fewest cells per unit weight so far
/// (lowest slice id on ties). That tenant then fills the cell at every node
/// with the first flow of its pre-schedule that can use it.
pub fn common_mac_allocate<Q: CellQuality + ?Sized>(
    plans: &mut [TenantPlan],
    masks: &BTreeMap<SliceId, ResourceMask>,
    quality: &Q,
    symbols_per_cell: u32,
    window_index: u64,
) -> CommonMacOutcome {
    plans.sort_by_key(|p| p.slice);
    let pool: BTreeSet<_> = plans
        .iter()
        .filter_map(|p| masks.get(&p.slice))
        .flat_map(|m| m.cells.iter().copied())
        .collect();
    let initial_owner: BTreeMap<_, _> = plans
        .iter()
        .filter_map(|p| masks.get(&p.slice))
        .flat_map(|m| m.cells.iter().map(move |c| (*c, m.slice)))
        .collect();
    let demanding: Vec<f64> = plans
        .iter()
        .map(|p| {
            if p.order
                .iter()
                .any(|&i| p.accounts[p.claimants[i].account].backlog() > 0)
            {
                p.weight
            } else {
                0.0
            }
        })
        .collect();
    let quota = apportion(pool.len(), &demanding);

    let mut taken = vec![0usize; plans.len()];
    let mut out = CommonMacOutcome::default();
    let mut owner: BTreeMap<_, SliceId> = BTreeMap::new();
    for &cell in &pool {
        let fill = |p: &TenantPlan| -> Vec<(NodeId, usize, u64)> {
            let nodes: BTreeSet<NodeId> = p.claimants.iter().flat_map(|c| c.nodes.iter().copied()).collect();
            nodes
                .into_iter()
                .filter_map(|node| {
                    p.order.iter().find_map(|&i| {
                        let c = &p.claimants[i];
                        let bits = claimant_bits(c, Resource { cell, node }, quality, symbols_per_cell);
                        (bits > 0 && p.accounts[c.account].backlog() > 0).then_some((node, i, bits))
                    })
                })
                .collect()
        };
        // (plan, [(node, claimant, bits)])
        type Pick = (usize, Vec<(NodeId, usize, u64)>);
        let mut best: Option<Pick> = None;
        for (t, plan) in plans.iter().enumerate() {
            let picks = fill(plan);
            if picks.is_empty() {
                continue;
            }
            let load = taken[t] as f64 / plan.weight;
            if best
                .as_ref()
                .is_none_or(|(b, _)| load < taken[*b] as f64 / plans[*b].weight)
            {
                best = Some((t, picks));
            }
        }
        let Some((t, picks)) = best else { continue };
        taken[t] += 1;
        let plan = &mut plans[t];
        owner.insert(cell, plan.slice);
        // one claimant per (node, cell); a later node may find the account drained
        for (node, i, bits) in picks {
            let c = &plan.claimants[i];
            let served = plan.accounts[c.account].consume(bits);
            if served == 0 {
                continue;
            }
            out.grants.entry(plan.slice).or_default().push(Grant {
                resource: Resource { cell, node },
                flow: c.flow,
                ue: c.ue,
                claimant: i,
                bits: served,
            });
        }
    }

    for plan in plans.iter() {
        let cells = pool
            .iter()
            .filter(|c| match owner.get(c) {
                Some(s) => *s == plan.slice,
                None => initial_owner.get(c) == Some(&plan.slice),
            })
            .copied();
        out.masks
            .insert(plan.slice, ResourceMask::with_cells(plan.slice, window_index, cells));
    }
    for (t, plan) in plans.iter().enumerate() {
        let original = masks.get(&plan.slice).map_or(0, |m| m.len());
        if taken[t] < quota[t] || original <= taken[t] {
            continue;
        }
        let mut seen = BTreeSet::new();
        for &i in &plan.order {
            let c = &plan.claimants[i];
            if plan.accounts[c.account].backlog() > 0 && seen.insert(c.flow) {
                out.demotions.push(DemotionEvent {
                    window_index,
                    slice: plan.slice,
                    flow: c.flow,
                    cells_taken: taken[t],
                    fair_share: quota[t],
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Cell, SeTable};
    use crate::ids::UeId;
    use proptest::prelude::*;

    fn plan(slice: u32, weight: f64, backlogs: &[u64]) -> TenantPlan {
        let claimants: Vec<Claimant> = (0..backlogs.len())
            .map(|k| Claimant {
                flow: FlowId(slice * 100 + k as u32),
                ue: UeId(slice * 100 + k as u32),
                nodes: vec![NodeId(0)],
                account: k,
            })
            .collect();
        let accounts = claimants
            .iter()
            .zip(backlogs)
            .map(|(c, &b)| Account::new(c.flow, [(10.0, b)]))
            .collect();
        let order = (0..backlogs.len()).collect();
        TenantPlan {
            slice: SliceId(slice),
            weight,
            claimants,
            accounts,
            order,
        }
    }

    fn uniform(plans: &[TenantPlan], cells: &[Cell]) -> SeTable {
        let mut t = SeTable::new();
        for p in plans {
            for c in &p.claimants {
                for cell in cells {
                    t.insert(c.ue, *cell, 1.0);
                }
            }
        }
        t
    }

    #[test]
    fn option_configs() {
        let rr = SlicePolicy::RoundRobin;
        let one = apply_option(SliceId(1), RanOption::One, &rr, None).unwrap();
        let three = apply_option(SliceId(1), RanOption::Three, &rr, None).unwrap();
        assert_eq!(one.owner, SchedulerOwner::Tenant);
        assert_eq!(three.owner, SchedulerOwner::Coordinator);
        assert_eq!(one.policy, three.policy);
        assert_eq!(
            apply_option(SliceId(4), RanOption::Two, &rr, None),
            Err(SchedError::MissingPreSchedule(SliceId(4)))
        );
        assert!(
            apply_option(SliceId(4), RanOption::Two, &rr, Some(&[]))
                .unwrap()
                .pre_schedule
        );
    }

    #[test]
    fn preschedule_orders() {
        let claimants: Vec<Claimant> = (1..=3)
            .map(|u| Claimant {
                flow: FlowId(u),
                ue: UeId(u),
                nodes: vec![NodeId(0)],
                account: (u - 1) as usize,
            })
            .collect();
        let accounts = vec![
            Account::new(FlowId(1), [(30.0, 5)]),
            Account::new(FlowId(2), [(10.0, 5)]),
            Account::new(FlowId(3), [(20.0, 0)]),
        ];
        let pf = PfState::default();
        assert_eq!(
            preschedule(&claimants, &accounts, &SlicePolicy::RoundRobin, &pf),
            vec![0, 1]
        );
        assert_eq!(
            preschedule(&claimants, &accounts, &SlicePolicy::EarliestDeadlineFirst, &pf),
            vec![1, 0]
        );
        let mut pf = PfState::default();
        pf.update(2.0, [FlowId(1), FlowId(2)], &[(FlowId(1), 100)].into());
        assert_eq!(
            preschedule(
                &claimants,
                &accounts,
                &SlicePolicy::ProportionalFair { horizon: 2.0 },
                &pf
            ),
            vec![1, 0]
        );
    }

    #[test]
    fn over_share_tenant_is_demoted() {
        // tenant 1 holds 10 of 12 cells but both want everything
        let cells: Vec<Cell> = (0..12).map(|rb| Cell::new(0, rb)).collect();
        let mut plans = vec![plan(1, 1.0, &[1000, 1000]), plan(2, 1.0, &[1000])];
        let q = uniform(&plans, &cells);
        let masks: BTreeMap<_, _> = [
            (
                SliceId(1),
                ResourceMask::with_cells(SliceId(1), 3, cells[..10].iter().copied()),
            ),
            (
                SliceId(2),
                ResourceMask::with_cells(SliceId(2), 3, cells[10..].iter().copied()),
            ),
        ]
        .into();
        let out = common_mac_allocate(&mut plans, &masks, &q, 10, 3);
        assert_eq!(out.masks[&SliceId(1)].len(), 6);
        assert_eq!(out.masks[&SliceId(2)].len(), 6);
        assert!(!out.demotions.is_empty());
        assert!(out
            .demotions
            .iter()
            .all(|d| d.slice == SliceId(1) && d.window_index == 3));
        let m: Vec<ResourceMask> = out.masks.values().cloned().collect();
        assert!(crate::grid::masks_disjoint(&m).unwrap());
    }

    #[test]
    fn idle_tenant_leaves_cells_to_others() {
        let cells: Vec<Cell> = (0..6).map(|rb| Cell::new(0, rb)).collect();
        let mut plans = vec![plan(1, 1.0, &[0]), plan(2, 1.0, &[1000])];
        let q = uniform(&plans, &cells);
        let masks: BTreeMap<_, _> = [
            (
                SliceId(1),
                ResourceMask::with_cells(SliceId(1), 0, cells[..3].iter().copied()),
            ),
            (
                SliceId(2),
                ResourceMask::with_cells(SliceId(2), 0, cells[3..].iter().copied()),
            ),
        ]
        .into();
        let out = common_mac_allocate(&mut plans, &masks, &q, 10, 0);
        assert_eq!(out.masks[&SliceId(2)].len(), 6);
        assert!(out.demotions.is_empty());
    }

    /// Exhaustive leximin allocator: over every assignment of cells to
    /// tenants, keep the one whose useful cell counts per unit weight,
    /// sorted ascending, are lexicographically largest.
    fn leximin_oracle(n_cells: usize, weights: &[f64], need: &[usize]) -> Vec<usize> {
        let t = weights.len();
        let mut best: Option<(Vec<f64>, Vec<usize>)> = None;
        let mut assign = vec![0usize; n_cells];
        loop {
            let mut counts = vec![0usize; t];
            for &a in &assign {
                counts[a] += 1;
            }
            let useful: Vec<usize> = counts.iter().zip(need).map(|(c, n)| *c.min(n)).collect();
            let mut key: Vec<f64> = useful.iter().zip(weights).map(|(u, w)| *u as f64 / w).collect();
            key.sort_by(f64::total_cmp);
            let total: usize = useful.iter().sum();
            key.push(total as f64);
            if best
                .as_ref()
                .is_none_or(|(k, _)| key.iter().zip(k).find(|(a, b)| a != b).is_some_and(|(a, b)| a > b))
            {
                best = Some((key, useful));
            }
            let mut i = 0;
            while i < n_cells {
                assign[i] += 1;
                if assign[i] < t {
                    break;
                }
                assign[i] = 0;
                i += 1;
            }
            if i == n_cells {
                break;
            }
        }
        best.unwrap().1
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_exhaustive_fair_allocator(
            n_cells in 2usize..=12,
            split in 0usize..=12,
            need in proptest::collection::vec(0usize..14, 2),
            weights in proptest::collection::vec(1u32..4, 2),
        ) {
            let split = split.min(n_cells);
            let cells: Vec<Cell> = (0..n_cells as u32).map(|rb| Cell::new(0, rb)).collect();
            // each cell carries 10 bits, so backlog 10·k needs k cells
            let mut plans: Vec<TenantPlan> = (0..2)
                .map(|t| plan(t as u32 + 1, f64::from(weights[t]), &[10 * need[t] as u64]))
                .collect();
            let q = uniform(&plans, &cells);
            let masks: BTreeMap<_, _> = [
                (SliceId(1), ResourceMask::with_cells(SliceId(1), 0, cells[..split].iter().copied())),
                (SliceId(2), ResourceMask::with_cells(SliceId(2), 0, cells[split..].iter().copied())),
            ]
            .into();
            let out = common_mac_allocate(&mut plans, &masks, &q, 10, 0);
            let w: Vec<f64> = weights.iter().map(|w| f64::from(*w)).collect();
            let oracle = leximin_oracle(n_cells, &w, &need);
            for t in 0..2 {
                let got = out.grants.get(&SliceId(t as u32 + 1)).map_or(0, Vec::len);
                prop_assert!(got.abs_diff(oracle[t]) <= 1, "tenant {} got {} oracle {:?}", t, got, oracle);
            }
        }
    }
}
