use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ir::{match_schema, MLProgram, MATCH_SCHEMA};
use crate::model::WorkloadId;

/// Fixed offsets of every header schema in the per-thread header area. The
/// same schema sits at the same offset for every lambda, so helpers shared
/// between lambdas address headers identically.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HdrArea {
    /// (schema, offset, width); the `match` pseudo-header comes last.
    pub slots: Vec<(String, u32, u32)>,
    pub size: u32,
}

impl HdrArea {
    pub fn offset(&self, schema: &str) -> Option<u32> {
        self.slots.iter().find(|(n, _, _)| n == schema).map(|(_, o, _)| *o)
    }

    pub fn match_offset(&self) -> u32 {
        self.offset(MATCH_SCHEMA).expect("match slot always present")
    }
}

/// Lays out every schema any lambda uses, in declaration order, then `match`.
pub fn hdr_area(prog: &MLProgram) -> HdrArea {
    let used: BTreeSet<String> = prog
        .lambdas
        .iter()
        .flat_map(|l| l.used_headers(&[]))
        .collect();
    let mut slots = Vec::new();
    let mut off = 0u32;
    for s in &prog.headers {
        if used.contains(s.name()) {
            slots.push((s.name().to_string(), off, s.total_width() as u32));
            off += s.total_width() as u32;
        }
    }
    let mw = match_schema().total_width() as u32;
    slots.push((MATCH_SCHEMA.to_string(), off, mw));
    HdrArea {
        slots,
        size: off + mw,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseNode {
    pub schema: String,
    pub hdr_offset: u32,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    /// Index into [`ParseGraph::nodes`].
    pub node: usize,
    pub payload_offset: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseBranch {
    pub workload_id: WorkloadId,
    pub lambda: String,
    pub extractions: Vec<Extraction>,
}

/// Extraction plan: the transport header always, then per workload id the
/// application headers its lambda reads.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseGraph {
    pub nodes: Vec<ParseNode>,
    pub branches: Vec<ParseBranch>,
    pub warnings: Vec<String>,
}

impl ParseGraph {
    pub fn branch(&self, wid: WorkloadId) -> Option<&ParseBranch> {
        self.branches.iter().find(|b| b.workload_id == wid)
    }

    /// Schemas extracted for `wid`.
    pub fn schemas_for(&self, wid: WorkloadId) -> Vec<&str> {
        self.branch(wid)
            .map(|b| {
                b.extractions
                    .iter()
                    .map(|e| self.nodes[e.node].schema.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }
}

pub fn infer_parse_graph(prog: &MLProgram) -> ParseGraph {
    let area = hdr_area(prog);
    let mut g = ParseGraph::default();
    let mut node_of: BTreeMap<String, usize> = BTreeMap::new();
    for rule in &prog.stage.rules {
        let Some(l) = prog.lambda(&rule.lambda) else {
            continue;
        };
        let layout = prog.layout_for(l);
        let mut extractions = Vec::new();
        for (schema, off, width) in &layout.entries {
            let node = *node_of.entry(schema.clone()).or_insert_with(|| {
                g.nodes.push(ParseNode {
                    schema: schema.clone(),
                    hdr_offset: area.offset(schema).expect("used schema has a slot"),
                    width: *width as u32,
                });
                g.nodes.len() - 1
            });
            extractions.push(Extraction {
                node,
                payload_offset: *off as u32,
            });
        }
        g.branches.push(ParseBranch {
            workload_id: rule.workload_id,
            lambda: rule.lambda.clone(),
            extractions,
        });
    }
    let routed: BTreeSet<&str> = prog.stage.rules.iter().map(|r| r.lambda.as_str()).collect();
    for l in &prog.lambdas {
        if routed.contains(l.name.as_str()) {
            continue;
        }
        for h in l.used_headers(&[]) {
            g.warnings.push(format!(
                "dead header: lambda `{}` reads `{h}` but no rule routes to it",
                l.name
            ));
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn two_branches_one_schema_each() {
        let p = parse_program(
            ".header serverHdr address:4\n.header kvHdr op:1 key:4\n\
             .lambda web\n.func f\n.entry\n ldh r1, serverHdr.address\n halt 0\n.end\n\
             .lambda kv\n.func f\n.entry\n ldh r1, kvHdr.op\n halt 0\n.end\n\
             .rule 1 web\n.rule 2 kv\n",
        )
        .unwrap();
        let g = infer_parse_graph(&p);
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.schemas_for(1), vec!["serverHdr"]);
        assert_eq!(g.schemas_for(2), vec!["kvHdr"]);
        assert_eq!(g.branch(2).unwrap().extractions[0].payload_offset, 0);
        assert!(g.warnings.is_empty());
    }

    #[test]
    fn transport_only_and_dead_header() {
        let p = parse_program(
            ".header h a:4\n.lambda a\n.func f\n.entry\n halt 0\n.end\n\
             .lambda b\n.func f\n.entry\n ldh r1, h.a\n halt 0\n.end\n.rule 1 a\n",
        )
        .unwrap();
        let g = infer_parse_graph(&p);
        assert!(g.nodes.is_empty());
        assert!(g.schemas_for(1).is_empty());
        assert_eq!(g.warnings.len(), 1);
    }
}
