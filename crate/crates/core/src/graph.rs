//! Dependency DAGs over skill calls and dependency-consistent node matching.
//!
//! Node `0` is a virtual source; call `i` of the sequence is node `i + 1`.
//! Edges are the transitive reduction of the order relation induced by the
//! active [`DependencyRule`]s, so an edge `u -> v` always has `u < v` for
//! graphs produced by [`build_graph`].

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsl::{self, ParamValue, SkillCall, SkillRegistry, SkillSequence};
use crate::metrics::Equivalence;

/// Largest reference graph (non-source nodes) accepted by [`max_matching`].
pub const MAX_MATCH_NODES: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("reference graph has {nodes} nodes, exact matching supports at most {limit}")]
    SizeLimitExceeded { nodes: usize, limit: usize },
    #[error("graph dump line {line}: {reason}")]
    Dump { line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleKind {
    /// Calls on the same target keep their sequence order.
    SameTarget,
    /// Open/Press/Twist on an entity precede later Place/Insert/Pour into it.
    StateGate,
    /// Hand-held operations follow the Pick that grasped the object, and the
    /// next Pick follows them (one object in the gripper at a time).
    PickBeforePlace,
    /// Close on an entity follows the opening and every gated operation on it.
    PrerequisiteOpen,
}

impl RuleKind {
    pub const ALL: [RuleKind; 4] =
        [RuleKind::SameTarget, RuleKind::StateGate, RuleKind::PickBeforePlace, RuleKind::PrerequisiteOpen];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::SameTarget => "SameTarget",
            RuleKind::StateGate => "StateGate",
            RuleKind::PickBeforePlace => "PickBeforePlace",
            RuleKind::PrerequisiteOpen => "PrerequisiteOpen",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyRule {
    pub kind: RuleKind,
    pub description: String,
}

impl DependencyRule {
    pub fn new(kind: RuleKind) -> Self {
        let description = match kind {
            RuleKind::SameTarget => "calls on the same target entity keep their order",
            RuleKind::StateGate => "opening, pressing or twisting an entity precedes placing, inserting or pouring into it",
            RuleKind::PickBeforePlace => "hand-held operations follow their pick and precede the next pick",
            RuleKind::PrerequisiteOpen => "closing an entity follows its opening and every gated operation on it",
        };
        Self { kind, description: description.to_string() }
    }

    /// The four rules used for ground-truth graphs.
    pub fn standard_set() -> Vec<DependencyRule> {
        RuleKind::ALL.into_iter().map(Self::new).collect()
    }
}

const GATES: [&str; 3] = ["Open", "Press", "Twist"];
const GATED: [&str; 3] = ["Place", "Insert", "Pour"];
const HAND_HELD: [&str; 4] = ["Place", "Insert", "Hang", "Pour"];

fn is_any(call: &SkillCall, names: &[&str]) -> bool {
    names.iter().any(|n| call.skill.is(n))
}

/// The call names `entity` as its target or in a string parameter.
fn references(call: &SkillCall, entity: &str, eq: &Equivalence) -> bool {
    eq.text_equal(&call.target, entity)
        || call.params.values().any(|v| matches!(v, ParamValue::Text(s) if eq.text_equal(s, entity)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepGraph {
    calls: Vec<SkillCall>,
    edges: Vec<(usize, usize)>,
    rules: Vec<RuleKind>,
}

/// Fixed-width bitset rows.
#[derive(Clone)]
struct BitMatrix {
    words: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Self { words, bits: vec![0; n * words] }
    }
    fn set(&mut self, r: usize, c: usize) {
        self.bits[r * self.words + c / 64] |= 1 << (c % 64);
    }
    fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.words + c / 64] & (1 << (c % 64)) != 0
    }
    fn or_row(&mut self, dst: usize, src: usize) {
        for w in 0..self.words {
            let v = self.bits[src * self.words + w];
            self.bits[dst * self.words + w] |= v;
        }
    }
}

/// Strict reachability (paths of length >= 1) over nodes `0..n`. Requires a DAG.
fn reachability(n: usize, edges: &[(usize, usize)]) -> BitMatrix {
    let mut succ = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for &(u, v) in edges {
        succ[u].push(v);
        indeg[v] += 1;
    }
    let mut order = Vec::with_capacity(n);
    let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    while let Some(u) = stack.pop() {
        order.push(u);
        for &v in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                stack.push(v);
            }
        }
    }
    let mut reach = BitMatrix::new(n);
    for &u in order.iter().rev() {
        for &v in &succ[u] {
            reach.set(u, v);
            reach.or_row(u, v);
        }
    }
    reach
}

/// Order relation induced by `rules` over call indices (`u < v`).
fn rule_relation(calls: &[SkillCall], rules: &[RuleKind], eq: &Equivalence) -> Vec<(usize, usize)> {
    let n = calls.len();
    let mut rel = vec![vec![false; n]; n];
    for rule in rules {
        match rule {
            RuleKind::SameTarget => {
                for v in 0..n {
                    for u in 0..v {
                        if eq.text_equal(&calls[u].target, &calls[v].target) {
                            rel[u][v] = true;
                        }
                    }
                }
            }
            RuleKind::StateGate => {
                for v in 0..n {
                    if !is_any(&calls[v], &GATED) {
                        continue;
                    }
                    for u in 0..v {
                        if is_any(&calls[u], &GATES) && references(&calls[v], &calls[u].target, eq) {
                            rel[u][v] = true;
                        }
                    }
                }
            }
            RuleKind::PickBeforePlace => {
                let mut last_pick: Option<usize> = None;
                let mut since_pick: Vec<usize> = Vec::new();
                for i in 0..n {
                    if calls[i].skill.is("Pick") {
                        if since_pick.is_empty() {
                            if let Some(p) = last_pick {
                                rel[p][i] = true;
                            }
                        }
                        for &h in &since_pick {
                            rel[h][i] = true;
                        }
                        last_pick = Some(i);
                        since_pick.clear();
                    } else if is_any(&calls[i], &HAND_HELD) {
                        if let Some(p) = last_pick {
                            rel[p][i] = true;
                        }
                        since_pick.push(i);
                    }
                }
            }
            RuleKind::PrerequisiteOpen => {
                for v in 0..n {
                    if !calls[v].skill.is("Close") {
                        continue;
                    }
                    let entity = &calls[v].target;
                    for u in 0..v {
                        let gate = is_any(&calls[u], &GATES) && eq.text_equal(&calls[u].target, entity);
                        let gated = is_any(&calls[u], &GATED) && references(&calls[u], entity, eq);
                        if gate || gated {
                            rel[u][v] = true;
                        }
                    }
                }
            }
        }
    }
    let mut pairs = Vec::new();
    for (u, row) in rel.iter().enumerate() {
        for (v, &on) in row.iter().enumerate() {
            if on {
                pairs.push((u, v));
            }
        }
    }
    pairs
}

pub fn build_graph(seq: &SkillSequence, rules: &[DependencyRule]) -> DepGraph {
    build_graph_with(seq, rules, &Equivalence::default())
}

/// Builds the transitive reduction of the rule-induced order, plus source
/// edges to every call without a predecessor.
pub fn build_graph_with(seq: &SkillSequence, rules: &[DependencyRule], eq: &Equivalence) -> DepGraph {
    let mut kinds: Vec<RuleKind> = rules.iter().map(|r| r.kind).collect();
    kinds.sort();
    kinds.dedup();
    let n = seq.calls.len();
    let rel = rule_relation(&seq.calls, &kinds, eq);
    let reach = reachability(n, &rel);
    let mut succ = vec![Vec::new(); n];
    for &(u, v) in &rel {
        succ[u].push(v);
    }
    let mut edges = Vec::new();
    let mut has_pred = vec![false; n];
    for u in 0..n {
        for &v in &succ[u] {
            let implied = succ[u].iter().any(|&w| w != v && reach.get(w, v));
            if !implied {
                edges.push((u + 1, v + 1));
                has_pred[v] = true;
            }
        }
    }
    for (i, _) in has_pred.iter().enumerate().filter(|(_, p)| !**p) {
        edges.push((0, i + 1));
    }
    edges.sort_unstable();
    edges.dedup();
    DepGraph { calls: seq.calls.clone(), edges, rules: kinds }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Cycle { from: usize, to: usize },
    Unreachable { node: usize },
    NonDense { from: usize, to: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Cycle { from, to } => write!(f, "edge {from} -> {to} lies on a cycle"),
            Violation::Unreachable { node } => write!(f, "node {node} is unreachable from the source"),
            Violation::NonDense { from, to } => write!(f, "edge {from} -> {to} references a missing node id"),
        }
    }
}

impl DepGraph {
    /// Assembles a graph without checking it; see [`validate_dag`].
    pub fn from_parts(calls: Vec<SkillCall>, edges: Vec<(usize, usize)>, rules: Vec<RuleKind>) -> Self {
        Self { calls, edges, rules }
    }

    /// Number of non-source nodes.
    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.calls.len() + 1
    }

    /// The call at node `id` (`None` for the source or out of range).
    pub fn call(&self, id: usize) -> Option<&SkillCall> {
        id.checked_sub(1).and_then(|i| self.calls.get(i))
    }

    pub fn calls(&self) -> &[SkillCall] {
        &self.calls
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn rules(&self) -> &[RuleKind] {
        &self.rules
    }

    pub fn leaves(&self) -> Vec<usize> {
        let mut has_succ = vec![false; self.node_count()];
        for &(u, _) in &self.edges {
            if u < has_succ.len() {
                has_succ[u] = true;
            }
        }
        (1..self.node_count()).filter(|&i| !has_succ[i]).collect()
    }

    /// Removes the given non-source nodes and their edges, renumbering the rest densely.
    pub fn without_nodes(&self, removed: &[usize]) -> DepGraph {
        let n = self.node_count();
        let mut new_id = vec![None; n];
        let mut next = 0;
        for (id, slot) in new_id.iter_mut().enumerate() {
            if id == 0 || !removed.contains(&id) {
                *slot = Some(next);
                next += 1;
            }
        }
        let calls = (1..n).filter(|id| new_id[*id].is_some()).map(|id| self.calls[id - 1].clone()).collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|&(u, v)| Some((new_id.get(u).copied().flatten()?, new_id.get(v).copied().flatten()?)))
            .collect();
        DepGraph { calls, edges, rules: self.rules.clone() }
    }

    /// Deterministic text form: a `rules:` line, one `id: label` line per
    /// node, then one `edge: u -> v` line per edge.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.rules.iter().map(|r| r.name()).collect();
        let _ = writeln!(out, "rules: {}", names.join(", "));
        let _ = writeln!(out, "0: SOURCE");
        for (i, call) in self.calls.iter().enumerate() {
            let _ = writeln!(out, "{}: {}", i + 1, dsl::node_label(call));
        }
        for (u, v) in &self.edges {
            let _ = writeln!(out, "edge: {u} -> {v}");
        }
        out
    }

    pub fn from_dump(text: &str, registry: &SkillRegistry) -> Result<DepGraph, GraphError> {
        let err = |line: usize, reason: String| GraphError::Dump { line, reason };
        let mut calls = Vec::new();
        let mut edges = Vec::new();
        let mut rules = Vec::new();
        let mut seen_source = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("rules:") {
                for name in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    rules.push(RuleKind::from_name(name).ok_or_else(|| err(line_no, format!("unknown rule `{name}`")))?);
                }
            } else if let Some(rest) = line.strip_prefix("edge:") {
                let (u, v) = rest.split_once("->").ok_or_else(|| err(line_no, "expected `u -> v`".into()))?;
                let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| err(line_no, format!("bad node id: {e}")));
                edges.push((parse(u)?, parse(v)?));
            } else {
                let (id, label) = line.split_once(':').ok_or_else(|| err(line_no, "expected `id: label`".into()))?;
                let id: usize = id.trim().parse().map_err(|e| err(line_no, format!("bad node id: {e}")))?;
                let label = label.trim();
                if id == 0 {
                    if label != "SOURCE" || seen_source {
                        return Err(err(line_no, "node 0 must be the single SOURCE".into()));
                    }
                    seen_source = true;
                    continue;
                }
                if id != calls.len() + 1 || !seen_source {
                    return Err(err(line_no, format!("node ids must be dense and ascending, got {id}")));
                }
                let call = dsl::parse_node_label(label, registry).map_err(|e| err(line_no, e.to_string()))?;
                calls.push(call);
            }
        }
        if !seen_source {
            return Err(err(0, "missing SOURCE node".into()));
        }
        Ok(DepGraph { calls, edges, rules })
    }
}

/// Checks dense node ids, acyclicity and reachability from the source.
pub fn validate_dag(g: &DepGraph) -> Result<(), Violation> {
    let n = g.node_count();
    if let Some(&(from, to)) = g.edges.iter().find(|(u, v)| *u >= n || *v >= n) {
        return Err(Violation::NonDense { from, to });
    }
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for &(u, v) in &g.edges {
        succ[u].push(v);
        indeg[v] += 1;
    }
    let mut removed = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    while let Some(u) = stack.pop() {
        removed[u] = true;
        for &v in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                stack.push(v);
            }
        }
    }
    let mut sorted = g.edges.clone();
    sorted.sort_unstable();
    if let Some(&(from, to)) = sorted.iter().find(|(u, v)| !removed[*u] && !removed[*v]) {
        return Err(Violation::Cycle { from, to });
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &succ[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(node) => Err(Violation::Unreachable { node }),
        None => Ok(()),
    }
}

/// How reference edges constrain a matching.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPolicy {
    /// Only edges whose endpoints are both matched must be realized as
    /// prediction paths.
    #[default]
    MatchedPairsOnly,
    /// Additionally, a node may match only if all of its reference
    /// predecessors (other than the source) are matched.
    RequireMatchedPredecessors,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMatching {
    /// `(reference node, prediction node)`, ascending by reference node.
    pub pairs: Vec<(usize, usize)>,
    pub matched_count: usize,
}

struct Matcher<'a> {
    cands: Vec<Vec<usize>>,
    /// For reference index `i`: earlier indices `j` with an edge `j -> i`
    /// (`true`) or `i -> j` (`false`).
    back: Vec<Vec<(usize, bool)>>,
    /// Earlier indices whose assignment still matters at index `i`.
    frontier: Vec<Vec<usize>>,
    /// Compact slot of each prediction node in the used-set.
    slot: Vec<usize>,
    /// Used-set words restricted to slots still reachable from index `i` on.
    live: Vec<Vec<u64>>,
    reach: &'a BitMatrix,
    policy: MatchPolicy,
    memo: HashMap<Vec<u64>, usize>,
}

impl Matcher<'_> {
    fn allowed(&self, i: usize, p: usize, assign: &[Option<usize>]) -> bool {
        self.back[i].iter().all(|&(j, forward)| match assign[j] {
            Some(q) => {
                if forward {
                    self.reach.get(q, p)
                } else {
                    self.reach.get(p, q)
                }
            }
            None => !(forward && self.policy == MatchPolicy::RequireMatchedPredecessors),
        })
    }

    fn key(&self, i: usize, used: &[u64], assign: &[Option<usize>]) -> Vec<u64> {
        let mut key = Vec::with_capacity(1 + used.len() + self.frontier[i].len());
        key.push(i as u64);
        key.extend(used.iter().zip(&self.live[i]).map(|(u, m)| u & m));
        key.extend(self.frontier[i].iter().map(|&j| assign[j].map_or(u64::MAX, |p| p as u64)));
        key
    }

    fn best(&mut self, i: usize, used: &mut Vec<u64>, assign: &mut Vec<Option<usize>>) -> usize {
        if i == self.cands.len() {
            return 0;
        }
        let key = self.key(i, used, assign);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let remaining = self.cands.len() - i;
        let mut best = 0;
        for k in 0..self.cands[i].len() {
            if best == remaining {
                break;
            }
            let p = self.cands[i][k];
            let s = self.slot[p];
            if used[s / 64] & (1 << (s % 64)) != 0 || !self.allowed(i, p, assign) {
                continue;
            }
            used[s / 64] |= 1 << (s % 64);
            assign[i] = Some(p);
            best = best.max(1 + self.best(i + 1, used, assign));
            assign[i] = None;
            used[s / 64] &= !(1 << (s % 64));
        }
        // leaving `i` unmatched yields at most `remaining - 1`
        if best + 1 < remaining {
            best = best.max(self.best(i + 1, used, assign));
        }
        self.memo.insert(key, best);
        best
    }
}

pub fn max_matching(
    reference: &DepGraph,
    prediction: &DepGraph,
    eq: &Equivalence,
    policy: MatchPolicy,
) -> Result<NodeMatching, GraphError> {
    let n = reference.len();
    if n > MAX_MATCH_NODES {
        return Err(GraphError::SizeLimitExceeded { nodes: n, limit: MAX_MATCH_NODES });
    }
    let m = prediction.node_count();
    let pred_edges: Vec<(usize, usize)> =
        prediction.edges.iter().copied().filter(|&(u, v)| u < m && v < m).collect();
    let reach = reachability(m, &pred_edges);

    let cands: Vec<Vec<usize>> = reference
        .calls
        .iter()
        .map(|r| (1..m).filter(|&p| eq.calls_equal(r, &prediction.calls[p - 1])).collect())
        .collect();
    let mut slot = vec![usize::MAX; m];
    let mut slots = 0;
    for p in cands.iter().flatten() {
        if slot[*p] == usize::MAX {
            slot[*p] = slots;
            slots += 1;
        }
    }

    // reference edges between non-source nodes, as 0-based indices
    let ref_edges: Vec<(usize, usize)> = reference
        .edges
        .iter()
        .filter(|&&(u, v)| u >= 1 && v >= 1 && u <= n && v <= n && u != v)
        .map(|&(u, v)| (u - 1, v - 1))
        .collect();
    let mut back = vec![Vec::new(); n];
    for &(u, v) in &ref_edges {
        if u < v {
            back[v].push((u, true));
        } else {
            back[u].push((v, false));
        }
    }
    let frontier: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut f: Vec<usize> = ref_edges
                .iter()
                .filter_map(|&(u, v)| {
                    let (lo, hi) = (u.min(v), u.max(v));
                    (lo < i && hi >= i).then_some(lo)
                })
                .collect();
            f.sort_unstable();
            f.dedup();
            f
        })
        .collect();

    let words = slots.div_ceil(64).max(1);
    let mut live = vec![vec![0u64; words]; n + 1];
    for i in (0..n).rev() {
        live[i] = live[i + 1].clone();
        for &p in &cands[i] {
            live[i][slot[p] / 64] |= 1 << (slot[p] % 64);
        }
    }
    let mut matcher =
        Matcher { cands, back, frontier, slot, live, reach: &reach, policy, memo: HashMap::new() };
    let mut used = vec![0u64; words];
    let mut assign = vec![None; n];
    let total = matcher.best(0, &mut used, &mut assign);

    // Walk choices in (smallest prediction id, ..., unmatched) order and keep
    // the first that still attains the optimum: lexicographically smallest pairs.
    let mut pairs = Vec::with_capacity(total);
    let mut remaining = total;
    for i in 0..n {
        let mut chosen = false;
        for k in 0..matcher.cands[i].len() {
            let p = matcher.cands[i][k];
            let s = matcher.slot[p];
            if used[s / 64] & (1 << (s % 64)) != 0 || !matcher.allowed(i, p, &assign) {
                continue;
            }
            used[s / 64] |= 1 << (s % 64);
            assign[i] = Some(p);
            if remaining >= 1 && 1 + matcher.best(i + 1, &mut used, &mut assign) == remaining {
                pairs.push((i + 1, p));
                remaining -= 1;
                chosen = true;
                break;
            }
            assign[i] = None;
            used[s / 64] &= !(1 << (s % 64));
        }
        if !chosen {
            debug_assert_eq!(matcher.best(i + 1, &mut used, &mut assign), remaining);
        }
    }
    Ok(NodeMatching { matched_count: pairs.len(), pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;

    fn graph(text: &str) -> DepGraph {
        build_graph(&parse_program(text).unwrap(), &DependencyRule::standard_set())
    }

    const JUICE: &str = r#"Open("juicer") Place("apple", {"destination": "juicer"}) Place("orange", {"destination": "juicer"})"#;

    #[test]
    fn make_juice_graph() {
        let g = graph(JUICE);
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (1, 3)]);
        assert!(validate_dag(&g).is_ok());
    }

    #[test]
    fn single_and_unrelated_calls() {
        assert_eq!(graph(r#"Press("button")"#).edges(), &[(0, 1)]);
        assert_eq!(graph(r#"Press("button") Explore("shelf")"#).edges(), &[(0, 1), (0, 2)]);
        assert_eq!(graph("").edges(), &[]);
    }

    #[test]
    fn pick_place_chain_and_gripper_occupancy() {
        let g = graph(r#"Pick("apple") Place("basket") Pick("pear") Place("basket")"#);
        // Place(basket) -> Place(basket) is implied via Pick(pear)
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn close_follows_gated_operations() {
        let g = graph(r#"Open("drawer") Pick("cup") Place("cup", {"destination": "drawer"}) Close("drawer")"#);
        assert!(g.edges().contains(&(3, 4)));
        assert!(!g.edges().contains(&(1, 4)));
        assert_eq!(g.rules(), &RuleKind::ALL);
    }

    #[test]
    fn transitive_reduction() {
        let g = graph(r#"Press("a") Press("a") Press("a")"#);
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn validate_examples() {
        let empty = DepGraph::from_parts(vec![], vec![], vec![]);
        assert!(validate_dag(&empty).is_ok());
        let c = SkillCall::new("Pick", "a");
        let self_loop = DepGraph::from_parts(vec![c.clone()], vec![(0, 1), (1, 1)], vec![]);
        assert_eq!(validate_dag(&self_loop), Err(Violation::Cycle { from: 1, to: 1 }));
        let split = DepGraph::from_parts(vec![c.clone(), c.clone(), c.clone()], vec![(0, 1), (2, 3)], vec![]);
        assert_eq!(validate_dag(&split), Err(Violation::Unreachable { node: 2 }));
        let dangling = DepGraph::from_parts(vec![c], vec![(0, 1), (1, 5)], vec![]);
        assert_eq!(validate_dag(&dangling), Err(Violation::NonDense { from: 1, to: 5 }));
    }

    #[test]
    fn dump_round_trip() {
        let g = graph(r#"Pick("Apple", {"orientation": [pi, 0, 0], "gripper_state": "close"}) Place("Basket", {"pose": [0.6, 0.4, 0.15]})"#);
        let text = g.dump();
        assert_eq!(
            text,
            "rules: SameTarget, StateGate, PickBeforePlace, PrerequisiteOpen\n0: SOURCE\n\
             1: Pick(\"Apple\"){\"gripper_state\": \"close\", \"orientation\": [3.141592653589793, 0.0, 0.0]}\n\
             2: Place(\"Basket\"){\"pose\": [0.6, 0.4, 0.15]}\nedge: 0 -> 1\nedge: 1 -> 2\n"
        );
        let back = DepGraph::from_dump(&text, &SkillRegistry::builtin()).unwrap();
        assert_eq!(back, g);
        assert!(validate_dag(&back).is_ok());
    }

    #[test]
    fn dump_rejects_sparse_ids() {
        let text = "0: SOURCE\n2: Pick(\"a\")\n";
        assert!(matches!(DepGraph::from_dump(text, &SkillRegistry::builtin()), Err(GraphError::Dump { line: 2, .. })));
    }

    fn pm(r: &DepGraph, p: &DepGraph) -> NodeMatching {
        max_matching(r, p, &Equivalence::default(), MatchPolicy::default()).unwrap()
    }

    #[test]
    fn juice_matching_cases() {
        let r = graph(JUICE);
        assert_eq!(pm(&r, &r).matched_count, 3);
        let swapped = graph(
            r#"Open("juicer") Place("orange", {"destination": "juicer"}) Place("apple", {"destination": "juicer"})"#,
        );
        let m = pm(&r, &swapped);
        assert_eq!(m.matched_count, 3);
        assert_eq!(m.pairs, vec![(1, 1), (2, 3), (3, 2)]);
        let no_open =
            graph(r#"Place("apple", {"destination": "juicer"}) Place("orange", {"destination": "juicer"})"#);
        assert_eq!(pm(&r, &no_open).matched_count, 2);
        let strict = max_matching(&r, &no_open, &Equivalence::default(), MatchPolicy::RequireMatchedPredecessors).unwrap();
        assert_eq!(strict.matched_count, 0);
    }

    #[test]
    fn order_violation_loses_a_node() {
        let r = graph(r#"Pick("apple") Place("basket")"#);
        // Place before Pick: no path Pick -> Place in the prediction
        let p = graph(r#"Place("basket") Pick("apple")"#);
        let m = pm(&r, &p);
        assert_eq!(m.matched_count, 1);
        assert_eq!(m.pairs, vec![(1, 2)]);
    }

    #[test]
    fn size_limit() {
        let text: String = (0..65).map(|i| format!("Press(\"b{i}\")\n")).collect();
        let g = graph(&text);
        assert!(matches!(
            max_matching(&g, &g, &Equivalence::default(), MatchPolicy::default()),
            Err(GraphError::SizeLimitExceeded { nodes: 65, limit: 64 })
        ));
        let text: String = (0..64).map(|i| format!("Press(\"b{i}\")\n")).collect();
        let g = graph(&text);
        assert_eq!(pm(&g, &g).matched_count, 64);
    }

    #[test]
    fn leaves_and_node_removal() {
        let g = graph(JUICE);
        assert_eq!(g.leaves(), vec![2, 3]);
        let h = g.without_nodes(&[2]);
        assert_eq!(h.len(), 2);
        assert_eq!(h.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(pm(&g, &h).matched_count, 2);
    }
}
