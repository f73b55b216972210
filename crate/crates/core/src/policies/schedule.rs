//! Resource scheduling shared by the policies: downlink user selection, D2D pairing and
//! FIFO filling of links and processors.

use std::collections::BTreeSet;

use crate::ids::{Bits, NodeId, RequestId};
use crate::queueing::{bits_within, ProcessFlow, TransmitFlow};
use crate::service::Commodity;

/// The `fanout` users with the largest positive weight, ties to the lowest id. Returned
/// in id order.
pub fn bs_schedule<W: Ord + Copy + Default>(
    weights: impl IntoIterator<Item = (NodeId, W)>,
    fanout: usize,
) -> Vec<NodeId> {
    let mut cands: Vec<(NodeId, W)> = weights
        .into_iter()
        .filter(|(_, w)| *w > W::default())
        .collect();
    cands.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    cands.truncate(fanout);
    let mut out: Vec<NodeId> = cands.into_iter().map(|(u, _)| u).collect();
    out.sort();
    out
}

/// Greedy half-duplex matching: links in descending weight (ties by `(tx, rx)`), each
/// node in at most one pair. Nodes in `busy` are skipped; non-positive weights never match.
pub fn greedy_matching(
    mut cands: Vec<(f64, NodeId, NodeId)>,
    busy: &BTreeSet<NodeId>,
) -> Vec<(NodeId, NodeId)> {
    cands.retain(|c| c.0 > 0.0);
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used = busy.clone();
    let mut out = Vec::new();
    for (_, i, j) in cands {
        if i != j && !used.contains(&i) && !used.contains(&j) {
            used.insert(i);
            used.insert(j);
            out.push((i, j));
        }
    }
    out
}

/// Serve waiting bits on a link in the given (FIFO) order up to `cap` bits.
pub fn fill_link(
    from: NodeId,
    to: NodeId,
    cap: Bits,
    waiting: impl IntoIterator<Item = (RequestId, Commodity, Bits)>,
    out: &mut Vec<TransmitFlow>,
) {
    let mut left = cap;
    for (r, c, bits) in waiting {
        if left == 0 {
            break;
        }
        let b = bits.min(left);
        left -= b;
        out.push(TransmitFlow {
            from,
            to,
            commodity: c,
            bits: b,
            request: Some(r),
        });
    }
}

/// Give each of `servers` processors one waiting frame, in the given order. A frame gets
/// at most one processor's worth of cycles per slot.
pub fn fill_processors(
    node: NodeId,
    servers: u32,
    per_server_cycles: u64,
    waiting: impl IntoIterator<Item = (RequestId, Commodity, Bits, f64)>,
    out: &mut Vec<ProcessFlow>,
) {
    let mut free = servers;
    for (r, c, bits, workload) in waiting {
        if free == 0 {
            break;
        }
        let b = bits.min(bits_within(per_server_cycles, workload));
        if b == 0 {
            continue;
        }
        free -= 1;
        out.push(ProcessFlow {
            node,
            commodity: c,
            bits: b,
            request: Some(r),
        });
    }
}
