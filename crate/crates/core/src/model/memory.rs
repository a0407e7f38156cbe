use std::collections::BTreeMap;

use crate::graph::{Interaction, NodeId};
use crate::numerics::Array;

/// The most recent not-yet-folded event of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingEvent {
    pub other: NodeId,
    pub time: f64,
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("batch starting at time {batch_start} precedes already staged time {clock}")]
pub struct OutOfOrder {
    pub batch_start: f64,
    pub clock: f64,
}

/// Per-node memory vectors plus the raw-message buffer.
///
/// Events are first staged as pending; they are folded into the memory
/// vectors only when the next batch is processed, so predictions for a
/// batch never see that batch's own events.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    dim: usize,
    values: Vec<f64>,
    last_update: Vec<f64>,
    pending: BTreeMap<NodeId, PendingEvent>,
    clock: f64,
}

impl Memory {
    pub fn new(nodes: usize, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; nodes * dim],
            last_update: vec![0.0; nodes],
            pending: BTreeMap::new(),
            clock: 0.0,
        }
    }

    pub(crate) fn from_parts(
        dim: usize,
        values: Vec<f64>,
        last_update: Vec<f64>,
        pending: BTreeMap<NodeId, PendingEvent>,
        clock: f64,
    ) -> Self {
        Self { dim, values, last_update, pending, clock }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.last_update.len()
    }

    pub fn reset(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        self.last_update.iter_mut().for_each(|v| *v = 0.0);
        self.pending.clear();
        self.clock = 0.0;
    }

    pub fn row(&self, node: NodeId) -> &[f64] {
        let i = node as usize;
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn last_update(&self, node: NodeId) -> f64 {
        self.last_update[node as usize]
    }

    pub fn last_updates(&self) -> &[f64] {
        &self.last_update
    }

    /// Latest staged event time.
    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn pending(&self) -> &BTreeMap<NodeId, PendingEvent> {
        &self.pending
    }

    /// Stages a chronological batch. Each endpoint keeps only its latest
    /// event; an existing pending event is superseded.
    pub fn stage(&mut self, batch: &[Interaction]) -> Result<(), OutOfOrder> {
        let Some(first) = batch.first() else { return Ok(()) };
        if first.time < self.clock || batch.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(OutOfOrder { batch_start: first.time, clock: self.clock });
        }
        for e in batch {
            for (node, other) in [(e.source, e.target), (e.target, e.source)] {
                self.pending.insert(node, PendingEvent { other, time: e.time, ordinal: e.ordinal });
            }
            self.clock = e.time;
        }
        Ok(())
    }

    /// Writes folded memory rows (one per node, in `nodes` order) and clears
    /// the buffer.
    pub fn commit(&mut self, nodes: &[NodeId], rows: &Array) {
        debug_assert_eq!(rows.rows(), nodes.len());
        for (i, &v) in nodes.iter().enumerate() {
            let time = self.pending[&v].time;
            let d = self.dim;
            self.values[v as usize * d..(v as usize + 1) * d].copy_from_slice(rows.row_slice(i));
            self.last_update[v as usize] = time;
        }
        self.pending.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(s: NodeId, t: NodeId, time: f64, ordinal: usize) -> Interaction {
        Interaction { source: s, target: t, time, ordinal, label: 0 }
    }

    #[test]
    fn stage_keeps_latest_per_node() {
        let mut m = Memory::new(4, 2);
        m.stage(&[e(0, 2, 1.0, 0), e(0, 3, 2.0, 1)]).unwrap();
        assert_eq!(m.pending()[&0].other, 3);
        assert_eq!(m.pending()[&2].time, 1.0);
        assert_eq!(m.pending().len(), 3);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut m = Memory::new(4, 2);
        m.stage(&[e(0, 2, 5.0, 0)]).unwrap();
        assert!(m.stage(&[e(1, 2, 4.0, 1)]).is_err());
    }

    #[test]
    fn commit_updates_rows_and_times() {
        let mut m = Memory::new(3, 2);
        m.stage(&[e(0, 1, 1.5, 0)]).unwrap();
        m.commit(&[0, 1], &Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.last_update(0), 1.5);
        assert_eq!(m.row(2), &[0.0, 0.0]);
        assert!(m.pending().is_empty());
    }
}
