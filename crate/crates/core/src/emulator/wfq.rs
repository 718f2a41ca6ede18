//! Self-clocked weighted fair queueing across workload ids.

use std::collections::{BTreeMap, VecDeque};

use crate::model::WorkloadId;

/// Virtual-time fixed point so weights divide cleanly.
const SCALE: u128 = 1 << 32;

#[derive(Debug, Clone)]
struct Flow<T> {
    weight: u32,
    last_finish: u128,
    queue: VecDeque<(u128, u64, T)>,
}

/// Requests cost one unit each; a request's finish tag is
/// `max(V, last finish of its flow) + 1/weight`, where `V` is the tag of the
/// request last taken into service. The smallest tag is served next, ties
/// by arrival order.
#[derive(Debug, Clone)]
pub struct Wfq<T> {
    flows: BTreeMap<WorkloadId, Flow<T>>,
    weights: BTreeMap<WorkloadId, u32>,
    vtime: u128,
    seq: u64,
    len: usize,
}

impl<T> Default for Wfq<T> {
    fn default() -> Self {
        Wfq {
            flows: BTreeMap::new(),
            weights: BTreeMap::new(),
            vtime: 0,
            seq: 0,
            len: 0,
        }
    }
}

impl<T> Wfq<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Weight 0 is treated as 1.
    pub fn set_weight(&mut self, wid: WorkloadId, weight: u32) {
        let w = weight.max(1);
        self.weights.insert(wid, w);
        if let Some(f) = self.flows.get_mut(&wid) {
            f.weight = w;
        }
    }

    pub fn weight(&self, wid: WorkloadId) -> u32 {
        self.weights.get(&wid).copied().unwrap_or(1)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, wid: WorkloadId, item: T) {
        let weight = self.weight(wid);
        let vtime = self.vtime;
        let f = self.flows.entry(wid).or_insert_with(|| Flow {
            weight,
            last_finish: 0,
            queue: VecDeque::new(),
        });
        let tag = f.last_finish.max(vtime) + SCALE / f.weight as u128;
        f.last_finish = tag;
        f.queue.push_back((tag, self.seq, item));
        self.seq += 1;
        self.len += 1;
    }

    pub fn pop(&mut self) -> Option<(WorkloadId, T)> {
        let (&wid, _) = self
            .flows
            .iter()
            .filter_map(|(w, f)| f.queue.front().map(|(t, s, _)| (w, (*t, *s))))
            .min_by_key(|(_, k)| *k)?;
        let (tag, _, item) = self.flows.get_mut(&wid)?.queue.pop_front()?;
        self.vtime = tag;
        self.len -= 1;
        Some((wid, item))
    }

    /// Empties every queue, returning items in service order.
    pub fn drain(&mut self) -> Vec<(WorkloadId, T)> {
        let mut out = Vec::with_capacity(self.len);
        while let Some(x) = self.pop() {
            out.push(x);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_to_one() {
        let mut q = Wfq::new();
        q.set_weight(1, 2);
        for i in 0..300 {
            q.push(1, i);
            q.push(2, i);
        }
        let first: Vec<u32> = (0..300).map(|_| q.pop().unwrap().0).collect();
        let ones = first.iter().filter(|w| **w == 1).count();
        assert_eq!(ones, 200);
    }

    #[test]
    fn fifo_within_flow_and_empty() {
        let mut q = Wfq::new();
        assert!(q.pop().is_none());
        q.push(5, "a");
        q.push(5, "b");
        assert_eq!(q.pop(), Some((5, "a")));
        assert_eq!(q.pop(), Some((5, "b")));
        assert!(q.is_empty());
    }

    #[test]
    fn idle_flow_does_not_bank_credit() {
        let mut q = Wfq::new();
        for i in 0..100 {
            q.push(1, i);
        }
        for _ in 0..90 {
            q.pop();
        }
        // flow 2 arrives late; it starts at the current virtual time
        for i in 0..10 {
            q.push(2, 100 + i);
        }
        let next: Vec<u32> = (0..10).map(|_| q.pop().unwrap().0).collect();
        assert_eq!(next.iter().filter(|w| **w == 2).count(), 5);
    }
}
