use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{BrokerError, SliceRequest};

/// Result of a threshold sweep, candidates in input order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdSweep {
    pub best: Vec<f64>,
    pub best_net: f64,
    pub evaluated: Vec<(Vec<f64>, f64)>,
}

/// Evaluates every candidate threshold vector (in parallel) and returns the
/// one with the highest net revenue, lexicographically smallest on ties.
pub fn optimize_thresholds<E, F>(candidates: &[Vec<f64>], eval: F) -> Result<ThresholdSweep, E>
where
    E: From<BrokerError> + Send,
    F: Fn(&[f64]) -> Result<f64, E> + Sync,
{
    if candidates.is_empty() {
        return Err(BrokerError::EmptyGrid.into());
    }
    for t in candidates.iter().flatten() {
        if !(0.0..=1.0).contains(t) {
            return Err(BrokerError::ThetaOutOfRange(*t).into());
        }
    }
    let nets: Vec<f64> = candidates.par_iter().map(|c| eval(c)).collect::<Result<_, E>>()?;
    let evaluated: Vec<(Vec<f64>, f64)> = candidates.iter().cloned().zip(nets).collect();
    let (best, best_net) = evaluated
        .iter()
        .max_by(|a, b| {
            a.1.total_cmp(&b.1).then_with(|| {
                // smaller θ ranks higher on equal revenue
                b.0.iter()
                    .zip(&a.0)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        })
        .cloned()
        .expect("nonempty");
    Ok(ThresholdSweep {
        best,
        best_net,
        evaluated,
    })
}

/// Parses a threshold grid: one axis per class separated by `;`, each axis
/// either a comma list (`0.2,0.5,1`) or `start:end:count` with `count`
/// evenly spaced points including both ends. Returns the cartesian product
/// in lexicographic order.
pub fn parse_theta_grid(spec: &str) -> Result<Vec<Vec<f64>>, BrokerError> {
    let bad = |m: String| BrokerError::BadGrid(m);
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for axis in spec.split(';') {
        let parts: Vec<&str> = axis.split(':').collect();
        let values = match parts.as_slice() {
            [a, b, n] => {
                let (a, b) = (num(a)?, num(b)?);
                let n: usize = n.trim().parse().map_err(|e| bad(format!("count {n:?}: {e}")))?;
                match n {
                    0 => return Err(bad("range count must be positive".into())),
                    1 => vec![a],
                    _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
                }
            }
            [list] => list.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
            _ => return Err(bad(format!("axis {axis:?} is neither a list nor start:end:count"))),
        };
        if let Some(t) = values.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(BrokerError::ThetaOutOfRange(*t));
        }
        axes.push(values);
    }
    let mut grid: Vec<Vec<f64>> = vec![vec![]];
    for axis in &axes {
        grid = grid
            .iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    Ok(grid)
}

/// Largest total price over `[0, horizon)` of any request subset whose
/// summed demand fits `grid_cells` in every window.
///
/// Forward dynamic program over windows. A state is the set of accepted
/// requests still live, which is all the future depends on; equal states
/// keep the better value. Each window enumerates the feasible subsets of
/// its arrivals. Fails when a window holds more than `max_states` states.
pub fn offline_optimal(
    trace: &[SliceRequest],
    grid_cells: u32,
    horizon: u64,
    max_states: usize,
) -> Result<f64, BrokerError> {
    let mut reqs: Vec<&SliceRequest> = trace
        .iter()
        .filter(|r| r.windows_within(horizon) > 0 && r.demand_cells_per_window <= grid_cells)
        .collect();
    reqs.sort_by_key(|r| (r.arrival_window, r.id));
    let value = |r: &SliceRequest| r.price_per_window * r.windows_within(horizon) as f64;

    // live accepted request indices, ascending
    let mut states: HashMap<Vec<usize>, f64> = HashMap::from([(Vec::new(), 0.0)]);
    let mut next = 0;
    for w in 0..horizon {
        let first = next;
        while next < reqs.len() && reqs[next].arrival_window == w {
            next += 1;
        }
        let arrivals = first..next;
        if arrivals.is_empty() && states.len() == 1 {
            continue;
        }
        let mut out: HashMap<Vec<usize>, f64> = HashMap::new();
        for (state, v) in states {
            let live: Vec<usize> = state.into_iter().filter(|&i| reqs[i].end_window() > w).collect();
            let load: u32 = live.iter().map(|&i| reqs[i].demand_cells_per_window).sum();
            extend(&reqs, &value, arrivals.clone(), grid_cells - load, live, v, &mut out);
            if out.len() > max_states {
                return Err(BrokerError::InstanceTooLarge {
                    n: out.len(),
                    cap: max_states,
                });
            }
        }
        states = out;
    }
    Ok(states.into_values().fold(0.0, f64::max))
}

// accept-or-reject over `todo`, recording each feasible outcome
fn extend(
    reqs: &[&SliceRequest],
    value: &impl Fn(&SliceRequest) -> f64,
    mut todo: std::ops::Range<usize>,
    room: u32,
    state: Vec<usize>,
    v: f64,
    out: &mut HashMap<Vec<usize>, f64>,
) {
    let Some(i) = todo.next() else {
        let slot = out.entry(state).or_insert(f64::NEG_INFINITY);
        *slot = slot.max(v);
        return;
    };
    let d = reqs[i].demand_cells_per_window;
    if d <= room {
        let mut with = state.clone();
        with.push(i);
        extend(reqs, value, todo.clone(), room - d, with, v + value(reqs[i]), out);
    }
    extend(reqs, value, todo, room, state, v, out);
}
