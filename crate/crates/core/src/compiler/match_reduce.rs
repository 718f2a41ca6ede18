use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::CompileError;
use crate::ir::{MatchStage, Route};
use crate::model::{Endpoint, WorkloadId};

/// Bytes per route row: key then egress, both big-endian u32.
pub const ROUTE_ROW_BYTES: u32 = 8;

/// Compiled match stage: a comparison chain ending in send-to-host, plus one
/// merged route table whose row range per workload id is passed as parameters.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecisionTree {
    pub chain: Vec<(WorkloadId, String)>,
    pub table: Vec<Route>,
    /// Row range of each lambda's routes in `table`.
    pub ranges: BTreeMap<String, (u32, u32)>,
}

impl DecisionTree {
    /// Lambda for `wid`; `None` is the send-to-host default.
    pub fn dispatch(&self, wid: WorkloadId) -> Option<&str> {
        self.chain
            .iter()
            .find(|(w, _)| *w == wid)
            .map(|(_, l)| l.as_str())
    }

    /// Rows `[start, end)` consulted for `lambda`.
    pub fn range(&self, lambda: &str) -> (u32, u32) {
        self.ranges.get(lambda).copied().unwrap_or((0, 0))
    }

    /// Where a response from `lambda` to a request from `src` is sent.
    pub fn egress(&self, lambda: &str, src: Endpoint) -> Endpoint {
        let (s, e) = self.range(lambda);
        self.table[s as usize..e as usize]
            .iter()
            .find(|r| r.key == src)
            .map_or(src, |r| r.egress)
    }

    /// Number of lambdas with a non-empty route table.
    pub fn table_count(&self) -> usize {
        self.ranges.values().filter(|(s, e)| e > s).count()
    }

    /// Serialized merged table.
    pub fn table_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(self.table.len() * ROUTE_ROW_BYTES as usize);
        for r in &self.table {
            v.extend_from_slice(&r.key.to_be_bytes());
            v.extend_from_slice(&r.egress.to_be_bytes());
        }
        v
    }
}

pub fn reduce_match(stage: &MatchStage) -> Result<DecisionTree, CompileError> {
    let mut seen = BTreeSet::new();
    let mut tree = DecisionTree::default();
    for r in &stage.rules {
        if !seen.insert(r.workload_id) {
            return Err(CompileError::DuplicateWorkloadId(r.workload_id));
        }
        tree.chain.push((r.workload_id, r.lambda.clone()));
    }
    for (lambda, routes) in &stage.routes {
        let start = tree.table.len() as u32;
        tree.table.extend(routes.iter().copied());
        tree.ranges
            .insert(lambda.clone(), (start, tree.table.len() as u32));
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::MatchRule;
    use proptest::prelude::*;

    fn stage(rules: &[(u32, &str)]) -> MatchStage {
        MatchStage {
            rules: rules
                .iter()
                .map(|(w, l)| MatchRule {
                    workload_id: *w,
                    lambda: l.to_string(),
                })
                .collect(),
            routes: BTreeMap::new(),
        }
    }

    #[test]
    fn chain_with_default() {
        let t = reduce_match(&stage(&[(1, "web"), (2, "kv")])).unwrap();
        assert_eq!(t.dispatch(1), Some("web"));
        assert_eq!(t.dispatch(2), Some("kv"));
        assert_eq!(t.dispatch(3), None);
        let empty = reduce_match(&stage(&[])).unwrap();
        assert!(empty.chain.is_empty());
        assert_eq!(empty.dispatch(0), None);
    }

    #[test]
    fn duplicate_is_error() {
        assert!(matches!(
            reduce_match(&stage(&[(1, "a"), (1, "b")])),
            Err(CompileError::DuplicateWorkloadId(1))
        ));
    }

    #[test]
    fn merged_routes() {
        let mut s = stage(&[(1, "a"), (2, "b"), (3, "c")]);
        for (i, l) in ["a", "b", "c"].iter().enumerate() {
            s.routes.insert(l.to_string(), vec![Route { key: 7, egress: 10 + i as u32 }]);
        }
        let t = reduce_match(&s).unwrap();
        assert_eq!(t.table.len(), 3);
        assert_eq!(t.egress("b", 7), 11);
        assert_eq!(t.egress("b", 8), 8);
        assert_eq!(t.table_count(), 3);
    }

    proptest! {
        #[test]
        fn dispatch_equivalent(ids in proptest::collection::btree_set(any::<u32>(), 0..20), probes in proptest::collection::vec(any::<u32>(), 100)) {
            let rules: Vec<(u32, String)> = ids.iter().enumerate().map(|(i, w)| (*w, format!("l{i}"))).collect();
            let refs: Vec<(u32, &str)> = rules.iter().map(|(w, l)| (*w, l.as_str())).collect();
            let s = stage(&refs);
            let t = reduce_match(&s).unwrap();
            for w in probes.iter().chain(ids.iter()) {
                prop_assert_eq!(t.dispatch(*w), s.dispatch(*w));
            }
        }
    }
}
