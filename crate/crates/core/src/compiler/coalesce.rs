use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ir::{format_instr, Function, Instr, LambdaProgram, Reg, Region, ABI_REGS};

/// Prefix of helpers hoisted into the shared library.
pub const SHARED_PREFIX: &str = "__shared_";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedHelper {
    pub name: String,
    /// (lambda, function) pairs replaced by the helper.
    pub members: Vec<(String, String)>,
    pub instructions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoalesceReport {
    pub before: usize,
    pub after: usize,
    /// (lambda, function, instructions) removed as uncalled.
    pub dead_functions: Vec<(String, String, usize)>,
    /// Unreachable instructions removed from live functions.
    pub dead_instructions: usize,
    pub shared: Vec<SharedHelper>,
}

impl CoalesceReport {
    pub fn savings(&self) -> usize {
        self.before - self.after
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coalesced {
    pub lambdas: Vec<LambdaProgram>,
    pub shared: Vec<Function>,
    pub report: CoalesceReport,
}

fn successors(f: &Function, i: usize) -> Vec<usize> {
    let ins = &f.instrs[i];
    let mut s = Vec::new();
    if let Some(t) = ins.branch_target() {
        s.push(t);
    }
    if !ins.is_terminator() && i + 1 < f.instrs.len() {
        s.push(i + 1);
    }
    s
}

/// Drops instructions unreachable from the function start.
fn prune_function(f: &Function) -> (Function, usize) {
    let n = f.instrs.len();
    let mut live = vec![false; n];
    let mut stack = if n > 0 { vec![0] } else { vec![] };
    while let Some(i) = stack.pop() {
        if i >= n || live[i] {
            continue;
        }
        live[i] = true;
        stack.extend(successors(f, i));
    }
    let mut remap = vec![0usize; n + 1];
    let mut kept = Vec::new();
    for i in 0..n {
        remap[i] = kept.len();
        if live[i] {
            kept.push(f.instrs[i].clone());
        }
    }
    remap[n] = kept.len();
    for ins in &mut kept {
        if let Some(t) = ins.branch_target() {
            ins.set_branch_target(remap[t]);
        }
    }
    let removed = n - kept.len();
    (Function::new(f.name.clone(), kept), removed)
}

/// Removes uncalled functions and unreachable instructions.
pub fn eliminate_dead_code(l: &LambdaProgram) -> (LambdaProgram, Vec<(String, usize)>, usize) {
    let reachable: BTreeSet<String> = l.reachable(&[]).iter().map(|f| f.name.clone()).collect();
    let mut out = l.clone();
    let mut dead_fns = Vec::new();
    let mut dead_instrs = 0;
    out.functions.clear();
    for f in &l.functions {
        if !reachable.contains(&f.name) {
            dead_fns.push((f.name.clone(), f.instrs.len()));
            continue;
        }
        let (pf, removed) = prune_function(f);
        dead_instrs += removed;
        out.functions.push(pf);
    }
    (out, dead_fns, dead_instrs)
}

fn touches_globals(f: &Function) -> bool {
    f.instrs
        .iter()
        .any(|i| i.mem_refs().iter().any(|m| matches!(m.region, Region::Global(_))))
}

/// Renames r8..r31 by first occurrence; r0..r7 carry arguments and stay put.
pub fn canonical_registers(f: &Function) -> Function {
    let mut map: BTreeMap<u8, u8> = BTreeMap::new();
    let mut next = ABI_REGS;
    for i in &f.instrs {
        for r in i.regs() {
            if r.0 >= ABI_REGS && !map.contains_key(&r.0) {
                map.insert(r.0, next);
                next += 1;
            }
        }
    }
    let mut out = f.clone();
    for i in &mut out.instrs {
        i.map_regs(|r| if r.0 >= ABI_REGS { Reg(map[&r.0]) } else { r });
    }
    out
}

fn canonical_text(f: &Function) -> String {
    let label = |t: usize| format!("L{t}");
    f.instrs
        .iter()
        .map(|i| format_instr(i, &label))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Canonical body, members, callee classes.
type Class = (Function, Vec<(usize, String)>, Vec<Option<usize>>);

struct Classifier<'a> {
    lambdas: &'a [LambdaProgram],
    /// (lambda idx, function name) → class id; `None` for non-candidates.
    class_of: BTreeMap<(usize, String), Option<usize>>,
    keys: BTreeMap<String, usize>,
    /// Per class: canonical body with calls naming callee classes, member list, callee classes.
    classes: Vec<Class>,
}

impl Classifier<'_> {
    fn classify(&mut self, li: usize, name: &str) -> Option<usize> {
        if let Some(c) = self.class_of.get(&(li, name.to_string())) {
            return *c;
        }
        let l = &self.lambdas[li];
        let f = l.function(name).expect("validated callee");
        let candidate = name != l.entry && !touches_globals(f);
        if !candidate {
            self.class_of.insert((li, name.to_string()), None);
            return None;
        }
        let mut body = canonical_registers(f);
        let mut callees = Vec::new();
        for ins in &mut body.instrs {
            if let Instr::Call { func } = ins {
                let c = self.classify(li, func);
                callees.push(c);
                *func = match c {
                    Some(c) => format!("#{c}"),
                    None => format!("!{li}:{func}"),
                };
            }
        }
        let key = canonical_text(&body);
        let id = match self.keys.get(&key) {
            Some(id) => *id,
            None => {
                let id = self.classes.len();
                self.keys.insert(key, id);
                self.classes.push((body, Vec::new(), callees));
                id
            }
        };
        self.classes[id].1.push((li, name.to_string()));
        self.class_of.insert((li, name.to_string()), Some(id));
        Some(id)
    }
}

/// Dead-code elimination, then hoisting of alpha-equivalent non-entry
/// functions (that touch no globals) into shared helpers.
pub fn coalesce(lambdas: &[LambdaProgram]) -> Coalesced {
    let before: usize = lambdas.iter().map(|l| l.instruction_count()).sum();
    let mut report = CoalesceReport {
        before,
        ..Default::default()
    };
    let mut live = Vec::with_capacity(lambdas.len());
    for l in lambdas {
        let (pruned, dead, instrs) = eliminate_dead_code(l);
        report
            .dead_functions
            .extend(dead.into_iter().map(|(f, n)| (l.name.clone(), f, n)));
        report.dead_instructions += instrs;
        live.push(pruned);
    }

    let mut c = Classifier {
        lambdas: &live,
        class_of: BTreeMap::new(),
        keys: BTreeMap::new(),
        classes: Vec::new(),
    };
    for (li, l) in live.iter().enumerate() {
        for f in &l.functions {
            c.classify(li, &f.name);
        }
    }
    // classes are created callee-first, so one forward sweep decides sharing
    let mut shared_name: Vec<Option<String>> = vec![None; c.classes.len()];
    let mut helpers = Vec::new();
    for id in 0..c.classes.len() {
        let (body, members, callees) = &c.classes[id];
        let ok = members.len() >= 2 && callees.iter().all(|cc| cc.is_some_and(|cc| shared_name[cc].is_some()));
        if !ok {
            continue;
        }
        let name = format!("{SHARED_PREFIX}{}", helpers.len());
        let mut f = body.clone();
        f.name = name.clone();
        for ins in &mut f.instrs {
            if let Instr::Call { func } = ins {
                let cc: usize = func[1..].parse().expect("class reference");
                *func = shared_name[cc].clone().expect("callee shared");
            }
        }
        report.shared.push(SharedHelper {
            name: name.clone(),
            members: members
                .iter()
                .map(|(li, f)| (live[*li].name.clone(), f.clone()))
                .collect(),
            instructions: f.instrs.len(),
        });
        shared_name[id] = Some(name);
        helpers.push(f);
    }

    let replaced = |li: usize, f: &str| -> Option<String> {
        c.class_of
            .get(&(li, f.to_string()))
            .copied()
            .flatten()
            .and_then(|id| shared_name[id].clone())
    };
    let mut out = Vec::with_capacity(live.len());
    for (li, l) in live.iter().enumerate() {
        let mut nl = l.clone();
        nl.functions.retain(|f| replaced(li, &f.name).is_none());
        for f in &mut nl.functions {
            for ins in &mut f.instrs {
                if let Instr::Call { func } = ins {
                    if let Some(s) = replaced(li, func) {
                        *func = s;
                    }
                }
            }
        }
        out.push(nl);
    }
    report.after = out.iter().map(|l| l.instruction_count()).sum::<usize>()
        + helpers.iter().map(|f| f.instrs.len()).sum::<usize>();
    Coalesced {
        lambdas: out,
        shared: helpers,
        report,
    }
}
