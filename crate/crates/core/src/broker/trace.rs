//! Request traces: one CSV record per request, header first, fixed column
//! order matching [`SliceRequest`]'s fields.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{BrokerError, SliceRequest};
use crate::ids::TenantId;

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<SliceRequest>, BrokerError> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(BrokerError::from)).collect()
}

pub fn write_trace<W: Write>(writer: W, trace: &[SliceRequest]) -> Result<(), BrokerError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// A stream of similar requests with Poisson arrivals per window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestClass {
    pub class_id: u8,
    pub tenant_id: TenantId,
    pub blueprint: String,
    pub rate_per_window: f64,
    /// Inclusive bounds, drawn uniformly.
    pub demand_cells: [u32; 2],
    pub duration_windows: [u64; 2],
    pub price_per_window: f64,
    pub penalty_per_violation: f64,
}

/// Draws a trace over `[0, horizon)`: per window, classes in the given order,
/// a Poisson count, then demand and duration for each request. Ids are
/// assigned sequentially from 0.
pub fn generate_trace<R: Rng + ?Sized>(
    classes: &[RequestClass],
    horizon: u64,
    rng: &mut R,
) -> Result<Vec<SliceRequest>, BrokerError> {
    let mut out = Vec::new();
    let dists: Vec<Option<Poisson<f64>>> = classes
        .iter()
        .map(|c| {
            (c.rate_per_window > 0.0)
                .then(|| Poisson::new(c.rate_per_window))
                .transpose()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| BrokerError::InvalidRequest {
            id: 0,
            reason: format!("arrival rate: {e}"),
        })?;
    for w in 0..horizon {
        for (class, dist) in classes.iter().zip(&dists) {
            let Some(dist) = dist else { continue };
            let n = dist.sample(rng) as u64;
            for _ in 0..n {
                let demand = rng.random_range(class.demand_cells[0]..=class.demand_cells[1]);
                let duration = rng.random_range(class.duration_windows[0]..=class.duration_windows[1]);
                out.push(SliceRequest {
                    id: out.len() as u32,
                    tenant_id: class.tenant_id,
                    blueprint: class.blueprint.clone(),
                    demand_cells_per_window: demand,
                    duration_windows: duration,
                    price_per_window: class.price_per_window,
                    penalty_per_violation: class.penalty_per_violation,
                    arrival_window: w,
                    class_id: class.class_id,
                });
            }
        }
    }
    Ok(out)
}
