//! The per-window loop.
//!
//! Each window runs, in this order: arrivals, admission, channel step, mask
//! computation, per-slice scheduling, delivery with multi-connectivity
//! reassembly, mobility with UCA accounting, settlement. Changing the order
//! changes results. Module invariants are checked every window and a failed
//! check aborts the run.
//!
//! Packets arriving exactly at a window boundary are schedulable in that
//! window; later arrivals wait for the next one. A grant in slot `s`
//! completes at the end of that slot.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

use super::metrics::{
    BrokerSummary, LedgerRow, McSummary, OccupancyRow, Percentiles, SignalingRow, SignalingSummary, SliceRow,
    SliceSummary, Summary,
};
use super::scenario::{Blueprint, ObjectiveKind, Scenario};
use super::{MetricsReport, RunError};
use crate::broker::{settle_window, AdmissionPolicy, Broker, SlaOutcome, SliceRequest};
use crate::grid::Cell;
use crate::ids::{FlowId, SliceId, TenantId, UeId};
use crate::multiconn::{duplicate_reliability, reassembly_latency_ms, McMode};
use crate::radio::{generate_traffic, move_ues, step_channel, Area, Arrival, Flow, OnOff, TrafficModel, Ue};
use crate::rng::{stream, Stream};
use crate::scheduling::{
    apply_option, common_mac_allocate, compute_masks, preschedule, schedule_within_mask, Account, Allocation, Claimant,
    DemotionEvent, Grant, PfState, SliceDemand, SlicePolicy, TenantPlan,
};
use crate::slices::{transition, LifecycleEvent, RanOption, SliceInstance, SliceState};
use crate::uca::{baseline_handover, form_uca, on_cell_change, SignalingCounters, SignalingEvent, Uca};

const LOAD_EPS: f64 = 1e-9;

/// Runs `scenario` under `seed`. The report is a pure function of both.
pub fn run(scenario: &Scenario, seed: u64) -> Result<MetricsReport, RunError> {
    let mut e = Engine::new(scenario, seed)?;
    for w in 0..scenario.spec.duration_windows {
        e.window(w)?;
    }
    Ok(e.finish())
}

struct SliceRt<'a> {
    bp: &'a Blueprint,
    instance: SliceInstance,
    ues: Vec<UeId>,
    request: Option<SliceRequest>,
    weight: f64,
    floor: Option<u32>,
    pf: PfState,
}

#[derive(Default)]
struct Totals {
    tenant: TenantId,
    blueprint: String,
    request: Option<u32>,
    active_windows: u64,
    served_bits: u64,
    completed: u64,
    latency_violations: u64,
    violated_windows: u64,
    latencies: Vec<f64>,
}

/// A slice's schedulable view: claimants, the accounts they draw from, and
/// the leg index of each claimant within its flow.
struct Claims {
    claimants: Vec<Claimant>,
    accounts: Vec<Account>,
    leg: Vec<usize>,
}

struct Engine<'a> {
    sc: &'a Scenario,
    seed: u64,
    window_ms: f64,
    slot_ms: f64,
    slices: BTreeMap<SliceId, SliceRt<'a>>,
    // sorted by id
    ues: Vec<Ue>,
    flows: Vec<Flow>,
    budget: BTreeMap<FlowId, f64>,
    held: Vec<Arrival>,
    ucas: BTreeMap<UeId, Uca>,
    uca_counters: SignalingCounters,
    baseline: SignalingCounters,
    broker: Broker,
    requests: Vec<SliceRequest>,
    next_request: usize,
    slice_base: u32,
    ue_base: u32,
    area: Area,
    channel_rng: ChaCha8Rng,
    traffic_rng: ChaCha8Rng,
    mobility_rng: ChaCha8Rng,
    mc_served: BTreeMap<UeId, u64>,
    totals: BTreeMap<SliceId, Totals>,
    rows: Vec<SliceRow>,
    occupancy: Vec<OccupancyRow>,
    ledger: Vec<LedgerRow>,
    signaling: Vec<SignalingRow>,
    demotions: Vec<DemotionEvent>,
}

fn flow_of(ue: UeId) -> FlowId {
    FlowId(ue.0)
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, seed: u64) -> Result<Self, RunError> {
        let grid = sc.tiling.grid();
        let mut requests = sc.requests_for(seed)?;
        requests.sort_by_key(|r| (r.arrival_window, r.id));
        let spec = &sc.spec;
        let mut e = Engine {
            sc,
            seed,
            window_ms: grid.window_ms(),
            slot_ms: grid.slot_ms(),
            slices: BTreeMap::new(),
            ues: Vec::new(),
            flows: Vec::new(),
            budget: BTreeMap::new(),
            held: Vec::new(),
            ucas: BTreeMap::new(),
            uca_counters: SignalingCounters::default(),
            baseline: SignalingCounters::default(),
            broker: Broker::new(spec.admission.clone(), grid.cell_count())?,
            requests,
            next_request: 0,
            slice_base: spec.slices.iter().map(|s| s.id.0 + 1).max().unwrap_or(1),
            ue_base: spec
                .slices
                .iter()
                .flat_map(|s| &s.ues)
                .map(|u| u.id.0 + 1)
                .max()
                .unwrap_or(1),
            area: spec.mobility_area.unwrap_or_else(|| sc.topology.bounds()),
            channel_rng: stream(seed, Stream::Channel),
            traffic_rng: stream(seed, Stream::Traffic),
            mobility_rng: stream(seed, Stream::Mobility),
            mc_served: BTreeMap::new(),
            totals: BTreeMap::new(),
            rows: Vec::new(),
            occupancy: Vec::new(),
            ledger: Vec::new(),
            signaling: Vec::new(),
            demotions: Vec::new(),
        };
        if spec.duration_windows == 0 {
            return Ok(e);
        }
        for s in &spec.slices {
            let bp = &sc.blueprints[&s.blueprint];
            let knobs = spec.sdmx.slices.iter().find(|k| k.slice == s.id);
            e.open_slice(
                s.id,
                bp,
                None,
                knobs.and_then(|k| k.weight).unwrap_or(bp.spec.sla.priority_weight),
                knobs.and_then(|k| k.floor),
                0..spec.duration_windows,
                0,
            )?;
            for u in &s.ues {
                let model = u.traffic.clone().unwrap_or_else(|| bp.traffic.clone());
                e.add_ue(s.id, u.id, u.position, u.speed_mps, model, u.gate)?;
            }
        }
        Ok(e)
    }

    fn invariant(window: u64, what: impl Into<String>) -> RunError {
        RunError::Invariant {
            window,
            what: what.into(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn open_slice(
        &mut self,
        id: SliceId,
        bp: &'a Blueprint,
        request: Option<SliceRequest>,
        weight: f64,
        floor: Option<u32>,
        span: std::ops::Range<u64>,
        window: u64,
    ) -> Result<(), RunError> {
        let mut instance = SliceInstance::requested(id, &bp.spec);
        for ev in [LifecycleEvent::Admit, LifecycleEvent::Activate] {
            instance = transition(instance, ev).map_err(|e| Self::invariant(window, e.to_string()))?;
        }
        instance.admitted_window = Some(span);
        self.totals.insert(
            id,
            Totals {
                tenant: bp.spec.tenant,
                blueprint: bp.name.clone(),
                request: request.as_ref().map(|r| r.id),
                ..Totals::default()
            },
        );
        self.slices.insert(
            id,
            SliceRt {
                bp,
                instance,
                ues: Vec::new(),
                request,
                weight,
                floor,
                pf: PfState::default(),
            },
        );
        Ok(())
    }

    fn add_ue(
        &mut self,
        slice: SliceId,
        id: UeId,
        position: crate::radio::Position,
        speed: f64,
        model: TrafficModel,
        gate: Option<OnOff>,
    ) -> Result<(), RunError> {
        let topo = &self.sc.topology;
        let mut ue = Ue::attached(id, slice, position, speed, topo);
        if let Some(mc) = self.sc.mc.get(&id) {
            ue.serving = mc.legs.clone();
        }
        if let Some(u) = &self.sc.spec.uca {
            let uca = form_uca(id, &position, topo, u.k).map_err(|e| Self::invariant(0, e.to_string()))?;
            self.ucas.insert(id, uca);
        }
        let rt = self.slices.get_mut(&slice).expect("slice opened first");
        rt.ues.push(id);
        rt.ues.sort();
        self.budget.insert(flow_of(id), rt.bp.spec.sla.latency_budget_ms);
        let pos = self.ues.partition_point(|u| u.id < id);
        self.ues.insert(pos, ue);
        let pos = self.flows.partition_point(|f| f.id < flow_of(id));
        self.flows.insert(pos, Flow::new(flow_of(id), id, model, gate));
        Ok(())
    }

    fn close_slice(&mut self, id: SliceId, window: u64) -> Result<(), RunError> {
        let Some(rt) = self.slices.remove(&id) else {
            return Err(Self::invariant(window, format!("expired request has no {id}")));
        };
        transition(rt.instance, LifecycleEvent::Terminate).map_err(|e| Self::invariant(window, e.to_string()))?;
        let gone: BTreeSet<UeId> = rt.ues.into_iter().collect();
        self.ues.retain(|u| !gone.contains(&u.id));
        self.flows.retain(|f| !gone.contains(&f.ue));
        for u in &gone {
            self.ucas.remove(u);
            self.budget.remove(&flow_of(*u));
        }
        Ok(())
    }

    fn flow(&self, id: FlowId) -> &Flow {
        let i = self.flows.binary_search_by_key(&id, |f| f.id).expect("flow exists");
        &self.flows[i]
    }

    fn ue(&self, id: UeId) -> &Ue {
        let i = self.ues.binary_search_by_key(&id, |u| u.id).expect("UE exists");
        &self.ues[i]
    }

    fn claims(&self, rt: &SliceRt) -> Claims {
        let mut c = Claims {
            claimants: Vec::new(),
            accounts: Vec::new(),
            leg: Vec::new(),
        };
        for &ue in &rt.ues {
            let flow = flow_of(ue);
            let pending = self.flow(flow).pending();
            let claim = |c: &mut Claims, nodes, account, leg| {
                c.claimants.push(Claimant {
                    flow,
                    ue,
                    nodes,
                    account,
                });
                c.leg.push(leg);
            };
            match self.sc.mc.get(&ue) {
                None => {
                    c.accounts.push(Account::new(flow, pending));
                    let a = c.accounts.len() - 1;
                    claim(&mut c, self.ue(ue).serving.clone(), a, 0);
                }
                Some(mc) if mc.mode == McMode::Split && mc.anchor == crate::multiconn::Anchor::CommonMac => {
                    c.accounts.push(Account::new(flow, pending));
                    let a = c.accounts.len() - 1;
                    claim(&mut c, mc.legs.clone(), a, 0);
                }
                Some(mc) if mc.mode == McMode::Split => {
                    c.accounts.push(Account::new(flow, pending));
                    let a = c.accounts.len() - 1;
                    for (i, &leg) in mc.legs.iter().enumerate() {
                        claim(&mut c, vec![leg], a, i);
                    }
                }
                Some(mc) => {
                    for (i, &leg) in mc.legs.iter().enumerate() {
                        c.accounts.push(Account::new(flow, pending.clone()));
                        let a = c.accounts.len() - 1;
                        claim(&mut c, vec![leg], a, i);
                    }
                }
            }
        }
        c
    }

    fn window(&mut self, w: u64) -> Result<(), RunError> {
        let sc = self.sc;
        let start = w as f64 * self.window_ms;
        let grid = sc.tiling.grid();

        // arrivals
        for f in &mut self.flows {
            f.set_window(w);
        }
        let fresh = generate_traffic(&self.flows, start, self.window_ms, &mut self.traffic_rng);
        let (now, later): (Vec<Arrival>, Vec<Arrival>) = fresh.into_iter().partition(|a| a.time_ms <= start);
        let due = std::mem::replace(&mut self.held, later);
        for a in due.into_iter().chain(now) {
            if let Ok(i) = self.flows.binary_search_by_key(&a.flow, |f| f.id) {
                let budget = self.budget[&a.flow];
                self.flows[i].enqueue(a.time_ms, a.bits, budget);
            }
        }

        // admission
        for gone in self.broker.expire(w) {
            self.close_slice(SliceId(self.slice_base + gone.request.id), w)?;
        }
        let mut offered = 0;
        let mut accepted = 0;
        while let Some(r) = self
            .requests
            .get(self.next_request)
            .filter(|r| r.arrival_window <= w)
            .cloned()
        {
            self.next_request += 1;
            if r.arrival_window < w {
                continue;
            }
            offered += 1;
            if !self.broker.offer(&r)?.is_accept() {
                continue;
            }
            accepted += 1;
            let bp = &sc.blueprints[&r.blueprint];
            let id = SliceId(self.slice_base + r.id);
            let ue = UeId(self.ue_base + r.id);
            let tpl = bp
                .request_ue
                .clone()
                .expect("validated: request blueprints have a UE template");
            self.open_slice(
                id,
                bp,
                Some(r.clone()),
                f64::from(r.demand_cells_per_window),
                None,
                r.arrival_window..r.end_window(),
                w,
            )?;
            self.add_ue(id, ue, tpl.position, tpl.speed_mps, bp.traffic.clone(), None)?;
        }
        let mut late: BTreeMap<FlowId, u64> = BTreeMap::new();
        for f in &mut self.flows {
            late.insert(f.id, f.expire(start) as u64);
        }
        let backlog: BTreeMap<FlowId, u64> = self.flows.iter().map(|f| (f.id, f.backlog_bits())).collect();

        // channel
        let channel = step_channel(
            &self.ues,
            &sc.topology,
            &sc.spec.channel,
            grid.n_rb(),
            &mut self.channel_rng,
        );

        // masks
        let demands: Vec<SliceDemand> = self
            .slices
            .iter()
            .map(|(id, rt)| SliceDemand {
                slice: *id,
                numerology: rt.bp.spec.numerology,
                backlog_bits: rt
                    .ues
                    .iter()
                    .map(|u| backlog[&flow_of(*u)])
                    .fold(0u64, u64::saturating_add),
                ues: rt.ues.iter().map(|u| (*u, self.ue(*u).serving.clone())).collect(),
            })
            .collect();
        let policy = self.sdmx_policy();
        let mut masks = compute_masks(&sc.tiling, &demands, &channel, &policy, w)
            .map_err(|source| RunError::Sched { window: w, source })?;

        // scheduling
        let mut claims: BTreeMap<SliceId, Claims> = BTreeMap::new();
        let mut grants: BTreeMap<SliceId, Vec<Grant>> = BTreeMap::new();
        let mut pooled: BTreeMap<u8, Vec<TenantPlan>> = BTreeMap::new();
        for (id, rt) in &self.slices {
            let mut c = self.claims(rt);
            let symbols = sc.symbols_per_cell(rt.bp.spec.numerology);
            let policy = &rt.bp.scheduler;
            if rt.bp.spec.ran_option == RanOption::Two {
                let order = preschedule(&c.claimants, &c.accounts, policy, &rt.pf);
                let flows: Vec<FlowId> = order.iter().map(|&i| c.claimants[i].flow).collect();
                apply_option(*id, RanOption::Two, policy, Some(&flows))
                    .map_err(|source| RunError::Sched { window: w, source })?;
                pooled.entry(rt.bp.spec.numerology).or_default().push(TenantPlan {
                    slice: *id,
                    weight: rt.weight,
                    claimants: c.claimants.clone(),
                    accounts: std::mem::take(&mut c.accounts),
                    order,
                });
            } else {
                let cfg = apply_option(*id, rt.bp.spec.ran_option, policy, None)
                    .map_err(|source| RunError::Sched { window: w, source })?;
                let g = schedule_within_mask(
                    *id,
                    &masks[id],
                    &c.claimants,
                    &mut c.accounts,
                    &channel,
                    symbols,
                    &cfg.policy,
                    &rt.pf,
                )
                .map_err(|source| RunError::Sched { window: w, source })?;
                grants.insert(*id, g);
            }
            claims.insert(*id, c);
        }
        for (numerology, mut plans) in pooled {
            let outcome = common_mac_allocate(&mut plans, &masks, &channel, sc.symbols_per_cell(numerology), w);
            for plan in &plans {
                grants.insert(plan.slice, outcome.grants.get(&plan.slice).cloned().unwrap_or_default());
            }
            masks.extend(outcome.masks);
            self.demotions.extend(outcome.demotions);
        }
        let mut alloc = Allocation::new(w);
        for (id, g) in &grants {
            alloc.push_grants(*id, g);
        }
        alloc
            .check_isolation(&masks)
            .map_err(|v| Self::invariant(w, format!("isolation: {v}")))?;
        for (id, rt) in &self.slices {
            if rt.bp.spec.ran_option != RanOption::Three {
                if let Some(c) = masks[id]
                    .cells
                    .iter()
                    .find(|c| sc.tiling.numerology_of(**c) != rt.bp.spec.numerology)
                {
                    return Err(Self::invariant(w, format!("{id} holds {c} of a foreign numerology")));
                }
            }
        }

        // delivery
        let mut served: BTreeMap<FlowId, u64> = BTreeMap::new();
        let mut completed: BTreeMap<FlowId, (u64, u64)> = BTreeMap::new();
        let mut new_latencies: BTreeMap<FlowId, Vec<f64>> = BTreeMap::new();
        for (id, g) in &grants {
            let c = &claims[id];
            let mut legs: BTreeMap<FlowId, Vec<Vec<(u64, f64)>>> = BTreeMap::new();
            for grant in g {
                let ue = c.claimants[grant.claimant].ue;
                let mc = sc.mc.get(&ue);
                let extra = mc.map_or(0.0, |m| reassembly_latency_ms(m, &sc.topology, &sc.transport));
                let at = start + f64::from(grant.resource.cell.slot + 1) * self.slot_ms + extra;
                let (n, leg) = match mc {
                    Some(m) if m.mode == McMode::Duplicate => (m.legs.len(), c.leg[grant.claimant]),
                    _ => (1, 0),
                };
                let lists = legs.entry(grant.flow).or_insert_with(|| vec![Vec::new(); n]);
                lists[leg].push((grant.bits, at));
            }
            for (flow, mut lists) in legs {
                for l in &mut lists {
                    l.sort_by(|a, b| a.1.total_cmp(&b.1));
                }
                let granted: Vec<u64> = lists.iter().map(|l| l.iter().map(|g| g.0).sum()).collect();
                let i = self
                    .flows
                    .binary_search_by_key(&flow, |f| f.id)
                    .expect("granted flow exists");
                let f = &mut self.flows[i];
                let before = f.backlog_bits();
                let out = f.serve(&lists);
                let furthest = granted.iter().copied().max().unwrap_or(0);
                if !f.is_full_buffer() {
                    if out.delivered_bits != furthest.min(before) || f.backlog_bits() != before - out.delivered_bits {
                        return Err(Self::invariant(w, format!("{flow}: backlog not conserved")));
                    }
                    if lists.len() == 1 && furthest > before {
                        return Err(Self::invariant(
                            w,
                            format!("{flow}: granted {furthest} bits over backlog {before}"),
                        ));
                    }
                }
                served.insert(flow, out.delivered_bits);
                let lat = new_latencies.entry(flow).or_default();
                let entry = completed.entry(flow).or_default();
                for p in &out.completed {
                    entry.0 += 1;
                    entry.1 += u64::from(p.violation);
                    lat.push(p.latency_ms());
                }
            }
        }
        for ue in sc.mc.keys() {
            if let Some(b) = served.get(&flow_of(*ue)) {
                *self.mc_served.entry(*ue).or_default() += b;
            }
        }

        // mobility
        let moves = move_ues(
            &mut self.ues,
            self.window_ms,
            &sc.topology,
            &self.area,
            &mut self.mobility_rng,
        );
        let mut sig = SignalingRow {
            window: w,
            ..SignalingRow::default()
        };
        for ue in &mut self.ues {
            if !sc.mc.contains_key(&ue.id) {
                ue.serving = vec![ue.nearest];
            }
        }
        for ev in &moves {
            sig.cell_changes += 1;
            let d = baseline_handover(&sc.spec.uca.as_ref().map(|u| u.costs).unwrap_or_default());
            self.baseline.record(SignalingEvent::Handover, d);
            sig.baseline_ran += d.ran_messages;
            sig.baseline_cn += d.cn_messages;
            let (Some(u), Some(uca)) = (&sc.spec.uca, self.ucas.get(&ev.ue)) else {
                continue;
            };
            let (next, kind, d) =
                on_cell_change(uca, ev.to, &sc.topology, &u.costs).map_err(|e| Self::invariant(w, e.to_string()))?;
            if !next.check() || !next.nodes.contains(&ev.to) {
                return Err(Self::invariant(w, format!("{}: UCA lost its anchor", ev.ue)));
            }
            match kind {
                SignalingEvent::IntraUca => sig.intra_uca += 1,
                _ => sig.inter_uca += 1,
            }
            sig.uca_ran += d.ran_messages;
            sig.uca_cn += d.cn_messages;
            self.uca_counters.record(kind, d);
            self.ucas.insert(ev.ue, next);
        }
        self.signaling.push(sig);

        // settlement
        let mut outcome_of: BTreeMap<SliceId, bool> = BTreeMap::new();
        for (id, rt) in &mut self.slices {
            let flows: Vec<FlowId> = rt.ues.iter().map(|u| flow_of(*u)).collect();
            let sum = |m: &BTreeMap<FlowId, u64>| {
                flows
                    .iter()
                    .map(|f| m.get(f).copied().unwrap_or(0))
                    .fold(0u64, u64::saturating_add)
            };
            let slice_backlog = sum(&backlog);
            let slice_served = sum(&served);
            let done: u64 = flows.iter().filter_map(|f| completed.get(f)).map(|c| c.0).sum();
            let violations = sum(&late) + flows.iter().filter_map(|f| completed.get(f)).map(|c| c.1).sum::<u64>();
            let sla = &rt.bp.spec.sla;
            let required = (sla.min_throughput_bps * self.window_ms / 1000.0).floor() as u64;
            let shortfall = slice_served < required.min(slice_backlog);
            let mask = &masks[id];
            let under_served = rt
                .request
                .as_ref()
                .is_some_and(|r| slice_backlog > 0 && (mask.len() as u64) < u64::from(r.demand_cells_per_window));
            let violated = violations > 0 || shortfall || under_served;
            outcome_of.insert(*id, violated);

            let t = self.totals.get_mut(id).expect("totals per slice");
            t.active_windows += 1;
            t.served_bits += slice_served;
            t.completed += done;
            t.latency_violations += violations;
            t.violated_windows += u64::from(violated);
            for f in &flows {
                t.latencies.extend(new_latencies.remove(f).unwrap_or_default());
            }
            self.rows.push(SliceRow {
                window: w,
                slice: *id,
                tenant: rt.bp.spec.tenant,
                backlog_bits: slice_backlog,
                served_bits: slice_served,
                completed_packets: done,
                latency_violations: violations,
                throughput_shortfall: shortfall,
                sla_violated: violated,
            });
            let used: BTreeSet<Cell> = grants.get(id).into_iter().flatten().map(|g| g.resource.cell).collect();
            self.occupancy.push(OccupancyRow {
                window: w,
                slice: *id,
                mask_cells: mask.len(),
                used_cells: used.len(),
                grid_fraction: mask.len() as f64 / f64::from(grid.cell_count()),
            });
            if let SlicePolicy::ProportionalFair { horizon } = rt.bp.scheduler {
                rt.pf.update(horizon, flows.iter().copied(), &served);
            }
            if rt.instance.state != SliceState::Active {
                return Err(Self::invariant(
                    w,
                    format!("{id} scheduled while {:?}", rt.instance.state),
                ));
            }
        }
        let outcomes: Vec<SlaOutcome> = self
            .broker
            .active()
            .iter()
            .map(|a| SlaOutcome {
                tenant: a.request.tenant_id,
                price_per_window: a.request.price_per_window,
                penalty_per_violation: a.request.penalty_per_violation,
                violated: outcome_of[&SliceId(self.slice_base + a.request.id)],
            })
            .collect();
        let (rev0, pen0) = (self.broker.ledger.total_revenue(), self.broker.ledger.total_penalties());
        let load = self.broker.committed_load();
        if *self.broker.policy() != AdmissionPolicy::AlwaysAccept && load > 1.0 + LOAD_EPS {
            return Err(Self::invariant(w, format!("committed load {load} exceeds the grid")));
        }
        self.broker.ledger.utilization.push(load);
        settle_window(&mut self.broker.ledger, &outcomes);
        self.ledger.push(LedgerRow {
            window: w,
            offered,
            accepted,
            active: outcomes.len(),
            committed_load: load,
            revenue: self.broker.ledger.total_revenue() - rev0,
            penalties: self.broker.ledger.total_penalties() - pen0,
            violations: outcomes.iter().filter(|o| o.violated).count() as u64,
        });
        Ok(())
    }

    fn sdmx_policy(&self) -> crate::scheduling::SdmxPolicy {
        let sc = self.sc;
        let weights: BTreeMap<SliceId, f64> = self.slices.iter().map(|(id, rt)| (*id, rt.weight)).collect();
        let mut floors: BTreeMap<SliceId, u32> = self
            .slices
            .iter()
            .filter_map(|(id, rt)| Some((*id, rt.floor?)))
            .collect();
        if sc.spec.sdmx.objective == ObjectiveKind::FairnessWithFloor {
            // request slices are promised their demand, in admission order,
            // out of what static floors and reservations leave
            let mut room: BTreeMap<u8, u64> = BTreeMap::new();
            for a in self.broker.active() {
                let id = SliceId(self.slice_base + a.request.id);
                let n = self.slices[&id].bp.spec.numerology;
                let left = room.entry(n).or_insert_with(|| {
                    let cells = sc.tiling.cells_with_numerology(n);
                    let reserved = sc
                        .spec
                        .sdmx
                        .reservations
                        .iter()
                        .flat_map(|r| &r.cells)
                        .filter(|c| sc.tiling.numerology_of(**c) == n)
                        .count();
                    let static_floors: u64 = self
                        .slices
                        .iter()
                        .filter(|(_, rt)| rt.request.is_none() && rt.bp.spec.numerology == n)
                        .filter_map(|(_, rt)| rt.floor)
                        .map(u64::from)
                        .sum();
                    (cells.len() as u64).saturating_sub(reserved as u64 + static_floors)
                });
                let f = u64::from(a.request.demand_cells_per_window).min(*left);
                *left -= f;
                floors.insert(id, f as u32);
            }
        }
        let mut policy = sc.sdmx_policy(&weights, &floors);
        policy.reservations.retain(|r| self.slices.contains_key(&r.slice));
        policy.exclusions.retain(|s, _| self.slices.contains_key(s));
        policy
    }

    fn finish(self) -> MetricsReport {
        let sc = self.sc;
        let objective = self.sdmx_policy().objective.name();
        let window_s = self.window_ms / 1000.0;
        let slices: Vec<SliceSummary> = self
            .totals
            .into_iter()
            .map(|(slice, mut t)| SliceSummary {
                slice,
                tenant: t.tenant,
                blueprint: t.blueprint,
                request: t.request,
                active_windows: t.active_windows,
                served_bits: t.served_bits,
                mean_throughput_bps: if t.active_windows == 0 {
                    0.0
                } else {
                    t.served_bits as f64 / (t.active_windows as f64 * window_s)
                },
                completed_packets: t.completed,
                latency_violations: t.latency_violations,
                violated_windows: t.violated_windows,
                latency_ms: Percentiles::of(&mut t.latencies),
            })
            .collect();
        let ledger = &self.broker.ledger;
        let util = &ledger.utilization;
        let broker = BrokerSummary {
            admission: self.broker.policy().name(),
            offered: self.ledger.iter().map(|r| r.offered).sum(),
            accepted: ledger.accepted.clone(),
            rejected: ledger.rejected.clone(),
            revenue: ledger.total_revenue(),
            penalties: ledger.total_penalties(),
            net: ledger.net(),
            mean_utilization: if util.is_empty() {
                0.0
            } else {
                util.iter().sum::<f64>() / util.len() as f64
            },
            peak_utilization: util.iter().copied().fold(0.0, f64::max),
        };
        let multiconn = sc
            .spec
            .multiconn
            .iter()
            .map(|m| {
                let cfg = &sc.mc[&m.ue];
                let effective_per = match (m.leg_per.is_empty(), m.mode) {
                    (true, _) => None,
                    (false, McMode::Duplicate) => duplicate_reliability(&m.leg_per).ok(),
                    (false, McMode::Split) => m.leg_per.iter().copied().reduce(f64::min),
                };
                McSummary {
                    ue: m.ue,
                    mode: m.mode,
                    anchor: m.anchor,
                    legs: m.legs.len(),
                    reassembly_latency_ms: reassembly_latency_ms(cfg, &sc.topology, &sc.transport),
                    effective_per,
                    served_bits: self.mc_served.get(&m.ue).copied().unwrap_or(0),
                }
            })
            .collect();
        let summary = Summary {
            scenario: sc.spec.name.clone(),
            seed: self.seed,
            config_hash: sc.config_hash(),
            duration_windows: sc.spec.duration_windows,
            window_ms: self.window_ms,
            sdmx_objective: objective.into(),
            total_served_bits: slices.iter().map(|s| s.served_bits).sum(),
            slices,
            broker,
            signaling: SignalingSummary {
                uca_k: sc.spec.uca.as_ref().map(|u| u.k),
                uca: self.uca_counters,
                baseline: self.baseline,
            },
            multiconn,
            demotions: self.demotions.len(),
        };
        MetricsReport {
            summary,
            slices: self.rows,
            occupancy: self.occupancy,
            ledger: self.ledger,
            signaling: self.signaling,
            demotions: self.demotions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn scenario(text: &str) -> Scenario {
        Scenario::parse(text, Path::new(".")).unwrap()
    }

    const CLOSED_FORM: &str = r#"
name = "closed"
duration_windows = 4
[grid]
n_rb = 50
slots_per_window = 10
[[numerologies]]
id = 0
cell_duration_ms = 1.0
cell_bandwidth_rb = 1
symbols_per_cell = 168
[[nodes]]
id = 0
position = [0.0, 0.0]
[channel]
model = "constant"
se = 2.0
[blueprints.bb]
tenant = 1
sla = { latency_budget_ms = 100.0 }
[[slices]]
id = 1
blueprint = "bb"
ues = [{ id = 1, position = [5.0, 0.0] }]
"#;

    #[test]
    fn closed_form_capacity() {
        let r = run(&scenario(CLOSED_FORM), 1).unwrap();
        assert_eq!(r.slices.len(), 4);
        assert!(r.slices.iter().all(|row| row.served_bits == 168_000));
        assert_eq!(r.summary.total_served_bits, 4 * 168_000);
    }

    #[test]
    fn zero_duration_is_empty() {
        let r = run(
            &scenario(&CLOSED_FORM.replace("duration_windows = 4", "duration_windows = 0")),
            1,
        )
        .unwrap();
        assert!(r.slices.is_empty() && r.ledger.is_empty());
        assert_eq!(r.summary.broker.net, 0.0);
        assert_eq!(r.summary.total_served_bits, 0);
    }

    #[test]
    fn reruns_are_identical() {
        let text = CLOSED_FORM.replace("model = \"constant\"\nse = 2.0", "model = \"log-distance\"");
        let s = scenario(&text);
        assert_eq!(run(&s, 9).unwrap().digest(), run(&s, 9).unwrap().digest());
    }

    #[test]
    fn periodic_packets_complete_within_their_window() {
        let text = CLOSED_FORM.replace(
            "ues = [{ id = 1, position = [5.0, 0.0] }]",
            "ues = [{ id = 1, position = [5.0, 0.0], traffic = { model = \"periodic\", period_ms = 10.0, packet_bits = 1000 } }]",
        );
        let r = run(&scenario(&text), 1).unwrap();
        let s = &r.summary.slices[0];
        assert_eq!(s.completed_packets, 4);
        assert_eq!(s.latency_violations, 0);
        // served in slot 0, done after one 1 ms slot
        assert_eq!(s.latency_ms.as_ref().unwrap().max, 1.0);
    }
}
