//! Routing baseline: every node quantizes its own message and the packets
//! are relayed along the shortest-path tree to the gateway.
//!
//! Time is slotted. In each slot a node sends the head of its FIFO queue over
//! its next-hop edge, so every tree edge carries at most one packet per slot.
//! Packets arriving in the same slot are queued in order of origin id.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::encoder::{EdgeQuantizer, RANGE_SDS};
use crate::error::{QncError, Result};
use crate::message::MessagePrior;
use crate::network::{NetworkGraph, RoutingTree};

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardingResult {
    /// Dequantized messages as seen by the gateway.
    pub x_hat: DVector<f64>,
    /// Slot in which the last packet reached the gateway.
    pub delay_slots: usize,
    /// `L * delay_slots`.
    pub delay_channel_uses: usize,
    /// Messages saturated by their source quantizer.
    pub clip_count: u64,
}

/// Source quantizer of node `v`: `2^floor(L C)` levels over
/// `+-RANGE_SDS * sqrt((k/n) slab_var)`, with `C` the capacity of the
/// node's next-hop edge (the first out-edge for the gateway).
fn source_quantizer(g: &NetworkGraph, rt: &RoutingTree, v: usize, block_length: u32, prior: &MessagePrior) -> Result<EdgeQuantizer> {
    let capacity = rt.next_hop[v]
        .or_else(|| g.out_edges(v).first().copied())
        .or_else(|| g.in_edges(v).first().copied())
        .map_or(crate::network::DEFAULT_CAPACITY, |e| g.edges()[e].capacity);
    let range = RANGE_SDS * (prior.sparsity() * prior.slab_var()).sqrt();
    EdgeQuantizer::for_block(block_length, capacity, range)
}

pub fn simulate_forwarding(
    g: &NetworkGraph,
    rt: &RoutingTree,
    x: &DVector<f64>,
    block_length: u32,
    prior: &MessagePrior,
) -> Result<ForwardingResult> {
    let n = g.n();
    if x.len() != n || rt.next_hop.len() != n || prior.n() != n {
        return Err(QncError::Dimension(format!(
            "graph has {n} nodes, messages {}, routes {}, prior {}",
            x.len(),
            rt.next_hop.len(),
            prior.n()
        )));
    }
    if let Some(v) = rt.first_unreachable() {
        return Err(QncError::Unreachable(v));
    }
    let gw = g.gateway();
    let mut x_hat = DVector::zeros(n);
    let mut clip_count = 0;
    for v in 0..n {
        let q = source_quantizer(g, rt, v, block_length, prior)?.quantize(x[v]);
        x_hat[v] = q.value;
        clip_count += u64::from(q.clipped);
    }

    // Packets are identified by their origin node.
    let mut queues: Vec<VecDeque<usize>> = (0..n).map(|v| if v == gw { VecDeque::new() } else { VecDeque::from([v]) }).collect();
    let mut pending = n - 1;
    let mut slot = 0;
    let mut arrivals: Vec<(usize, usize)> = Vec::new();
    while pending > 0 {
        slot += 1;
        arrivals.clear();
        for v in 0..n {
            if let Some(p) = queues[v].pop_front() {
                let e = rt.next_hop[v].expect("reachable non-gateway node has a next hop");
                arrivals.push((g.edges()[e].head, p));
            }
        }
        arrivals.sort_unstable_by_key(|&(_, p)| p);
        for &(head, p) in &arrivals {
            if head == gw {
                pending -= 1;
            } else {
                queues[head].push_back(p);
            }
        }
    }
    Ok(ForwardingResult { x_hat, delay_slots: slot, delay_channel_uses: block_length as usize * slot, clip_count })
}
