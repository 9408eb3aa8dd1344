//! Test oracle: exhaustively enumerate every reachable candidate structure
//! over a small graph and keep the ones that match at least once. Validity
//! is decided by an independent naive scan matcher — deliberately not the
//! indexed executor — so the two implementations check each other.
//!
//! The enumerated class: connected structures with constants from E, edge
//! relations from R (both orientations), at most `max_edges` edges,
//! variables forming a single tree in the variable-only graph, and — the
//! reachability condition — variable edges that partition into groups of at
//! most `max_hops - 1`, each group connected and touching the attach
//! variable of some entity edge. Each such group plus its entity edge is an
//! expansion product of at most `max_hops` edges, and gluing the pieces at
//! single shared variables (entity edges at the glue variable coincide)
//! reassembles the structure; conversely every merge of decomposable
//! operands at one shared variable unions their partitions. The partition
//! also keeps every variable within `max_hops` of an entity at every
//! intermediate step, so no assembly order is blocked by the hop limit.
//! Filters are checked only on final structures: a two-entity "barbell"
//! path decomposes even though one of its one-entity substructures is too
//! deep on its own.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use crate::construct::Limits;
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Node, RelationId};
use crate::query::{canonical_info, LayerTag, Pattern, QTerm, QueryGraph, VarId};

pub const ORACLE_NODE_CAP: usize = 50;

/// Does any assignment satisfy all patterns? Pure scan over the triple
/// list, no indices.
fn naive_matches(patterns: &[Pattern], graph: &KnowledgeGraph) -> bool {
    // A bound value, borrowing literals from the graph. Bindings live in a
    // small linear map: structures are tiny, and this avoids hashing and
    // literal clones in the hot loop.
    #[derive(Clone, Copy, PartialEq)]
    enum Val<'g> {
        Ent(EntityId),
        Lit(&'g Node),
    }
    fn from_node(n: &Node) -> Val<'_> {
        match n {
            Node::Entity(e) => Val::Ent(*e),
            other => Val::Lit(other),
        }
    }
    // Returns false on mismatch; on a fresh variable, records the binding.
    fn bind<'g>(term: &QTerm, val: Val<'g>, binding: &mut Vec<(VarId, Val<'g>)>) -> bool {
        match term {
            QTerm::Entity(e) => val == Val::Ent(*e),
            QTerm::Var(v) => match binding.iter().find(|(b, _)| b == v) {
                Some((_, existing)) => *existing == val,
                None => {
                    binding.push((*v, val));
                    true
                }
            },
        }
    }
    fn recurse<'g>(
        patterns: &[Pattern],
        at: usize,
        binding: &mut Vec<(VarId, Val<'g>)>,
        graph: &'g KnowledgeGraph,
    ) -> bool {
        if at == patterns.len() {
            return true;
        }
        let pat = &patterns[at];
        for (s, p, o) in graph.triples() {
            if *p != pat.predicate {
                continue;
            }
            let depth = binding.len();
            if bind(&pat.subject, Val::Ent(*s), binding)
                && bind(&pat.object, from_node(o), binding)
                && recurse(patterns, at + 1, binding, graph)
            {
                return true;
            }
            binding.truncate(depth);
        }
        false
    }
    recurse(patterns, 0, &mut Vec::new(), graph)
}

/// Is the structure reachable by merging expansion products at single
/// shared variables? True iff the variable edges partition into groups of
/// at most `max_group`, each connected and containing a variable that some
/// entity edge attaches to.
fn decomposable(patterns: &[Pattern], max_group: usize) -> bool {
    let mut var_edges: Vec<(VarId, VarId)> = Vec::new();
    let mut anchors: BTreeSet<VarId> = BTreeSet::new();
    for p in patterns {
        match (p.subject.as_var(), p.object.as_var()) {
            (Some(s), Some(o)) => var_edges.push((s, o)),
            (Some(v), None) | (None, Some(v)) => {
                anchors.insert(v);
            }
            (None, None) => {}
        }
    }
    if var_edges.is_empty() {
        return true;
    }
    if max_group == 0 || anchors.is_empty() {
        return false;
    }
    fn group_ok(group: &[usize], edges: &[(VarId, VarId)], anchors: &BTreeSet<VarId>) -> bool {
        let touches = group
            .iter()
            .any(|&i| anchors.contains(&edges[i].0) || anchors.contains(&edges[i].1));
        if !touches {
            return false;
        }
        // Connectivity by flood fill over shared endpoints.
        let mut reached = vec![false; group.len()];
        reached[0] = true;
        let mut vars: BTreeSet<VarId> = [edges[group[0]].0, edges[group[0]].1].into();
        loop {
            let mut grew = false;
            for (slot, &i) in group.iter().enumerate() {
                if !reached[slot] && (vars.contains(&edges[i].0) || vars.contains(&edges[i].1)) {
                    reached[slot] = true;
                    vars.insert(edges[i].0);
                    vars.insert(edges[i].1);
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
        reached.iter().all(|r| *r)
    }
    fn search(
        at: usize,
        groups: &mut Vec<Vec<usize>>,
        edges: &[(VarId, VarId)],
        anchors: &BTreeSet<VarId>,
        max_group: usize,
    ) -> bool {
        if at == edges.len() {
            return groups.iter().all(|g| group_ok(g, edges, anchors));
        }
        for i in 0..groups.len() {
            if groups[i].len() < max_group {
                groups[i].push(at);
                if search(at + 1, groups, edges, anchors, max_group) {
                    return true;
                }
                groups[i].pop();
            }
        }
        groups.push(vec![at]);
        if search(at + 1, groups, edges, anchors, max_group) {
            return true;
        }
        groups.pop();
        false
    }
    search(0, &mut Vec::new(), &var_edges, &anchors, max_group)
}

fn as_query(patterns: Vec<Pattern>, answer: VarId) -> QueryGraph {
    QueryGraph {
        patterns,
        decorations: Vec::new(),
        answer_var: answer,
        layer: LayerTag::Chain(0),
        parent_key: None,
    }
}

/// All canonical keys (one per structure and answer-variable placement) of
/// valid candidate queries within the limits. Refuses graphs larger than
/// the node cap — this is a test-only exhaustive search.
pub fn brute_force_enumerate(
    entities: &[EntityId],
    relations: &[RelationId],
    graph: &KnowledgeGraph,
    limits: &Limits,
) -> Result<BTreeSet<String>> {
    if graph.entity_count() > ORACLE_NODE_CAP {
        return Err(Error::OracleCap {
            nodes: graph.entity_count(),
            cap: ORACLE_NODE_CAP,
        });
    }
    let mut entities: Vec<EntityId> = entities.to_vec();
    entities.sort();
    entities.dedup();
    let mut relations: Vec<RelationId> = relations.to_vec();
    relations.sort();
    relations.dedup();

    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut preseen: HashSet<Vec<Pattern>> = HashSet::new();
    let mut keys: BTreeSet<String> = BTreeSet::new();
    let mut queue: VecDeque<Vec<Pattern>> = VecDeque::new();

    let mut push = |patterns: Vec<Pattern>,
                    queue: &mut VecDeque<Vec<Pattern>>,
                    seen: &mut BTreeSet<String>,
                    keys: &mut BTreeSet<String>|
     -> Result<()> {
        // Cheap exact dedup first: identical structures arriving through
        // different growth orders often renumber identically, skipping the
        // full canonicalization below.
        if !preseen.insert(prenormalize(&patterns)) {
            return Ok(());
        }
        let probe = as_query(patterns.clone(), first_var(&patterns));
        let info = canonical_info(&probe, graph)?;
        if !seen.insert(info.structure.clone()) {
            return Ok(());
        }
        // Validity pruning is sound: dropping constraints from a valid
        // structure keeps it valid, so no valid superstructure is missed.
        if !naive_matches(&patterns, graph) {
            return Ok(());
        }
        if probe.hop_depth() <= limits.max_hops
            && decomposable(&patterns, limits.max_hops.saturating_sub(1))
        {
            for v in probe.variables() {
                keys.insert(info.key_for_answer(v));
            }
        }
        if patterns.len() < limits.max_edges {
            queue.push_back(patterns);
        }
        Ok(())
    };

    // Seeds: every one-edge entity-anchored structure, both orientations.
    for &e in &entities {
        for &p in &relations {
            let v = VarId(0);
            for pat in [
                Pattern::new(QTerm::Entity(e), p, QTerm::Var(v)),
                Pattern::new(QTerm::Var(v), p, QTerm::Entity(e)),
            ] {
                push(vec![pat], &mut queue, &mut seen, &mut keys)?;
            }
        }
    }

    while let Some(patterns) = queue.pop_front() {
        let vars: BTreeSet<VarId> = as_query(patterns.clone(), first_var(&patterns))
            .variables()
            .into_iter()
            .collect();
        let fresh = VarId(vars.iter().map(|v| v.0 + 1).max().unwrap_or(0));
        let mut extend = |pat: Pattern| -> Result<()> {
            if patterns.contains(&pat) {
                return Ok(());
            }
            let mut next = patterns.clone();
            next.push(pat);
            push(next, &mut queue, &mut seen, &mut keys)
        };
        for &v in &vars {
            for &p in &relations {
                // A variable edge with exactly one fresh endpoint keeps the
                // variable graph a tree.
                extend(Pattern::new(QTerm::Var(v), p, QTerm::Var(fresh)))?;
                extend(Pattern::new(QTerm::Var(fresh), p, QTerm::Var(v)))?;
                // An entity edge may only attach to an existing variable.
                for &e in &entities {
                    extend(Pattern::new(QTerm::Entity(e), p, QTerm::Var(v)))?;
                    extend(Pattern::new(QTerm::Var(v), p, QTerm::Entity(e)))?;
                }
            }
        }
    }
    Ok(keys)
}

/// Sort, renumber variables by first occurrence, and sort again: a fast
/// deterministic representative. Equal outputs imply isomorphic inputs, so
/// using it for early dedup never conflates distinct structures.
fn prenormalize(patterns: &[Pattern]) -> Vec<Pattern> {
    let mut ps = patterns.to_vec();
    ps.sort_unstable();
    let mut map: HashMap<VarId, VarId> = HashMap::new();
    let mut next = 0u16;
    let mut rename = |t: &QTerm| -> QTerm {
        match t {
            QTerm::Var(v) => QTerm::Var(*map.entry(*v).or_insert_with(|| {
                let id = VarId(next);
                next += 1;
                id
            })),
            QTerm::Entity(e) => QTerm::Entity(*e),
        }
    };
    for p in &mut ps {
        p.subject = rename(&p.subject);
        p.object = rename(&p.object);
    }
    ps.sort_unstable();
    ps
}

fn first_var(patterns: &[Pattern]) -> VarId {
    patterns
        .iter()
        .flat_map(|p| [p.subject.as_var(), p.object.as_var()])
        .flatten()
        .next()
        .expect("every enumerated structure has a variable")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::synthesize;
    use crate::kg::load_graph;
    use std::io::Cursor;

    fn graph(triples: &str) -> KnowledgeGraph {
        load_graph(
            Cursor::new(triples.trim().to_string()),
            None::<Cursor<String>>,
            None::<Cursor<String>>,
        )
        .unwrap()
    }

    #[test]
    fn single_triple_graph_enumerates_one_structure() {
        let g = graph("e1\tr.a.b\tn1");
        let e = vec![g.entity_by_key("e1").unwrap()];
        let r: Vec<RelationId> = g.relation_ids().collect();
        let limits = Limits {
            max_edges: 1,
            ..Limits::default()
        };
        let keys = brute_force_enumerate(&e, &r, &g, &limits).unwrap();
        // Only the forward orientation matches; one variable, one answer.
        assert_eq!(keys.len(), 1);
    }

    #[test]
    fn no_entities_means_nothing_to_enumerate() {
        let g = graph("e1\tr.a.b\tn1");
        let r: Vec<RelationId> = g.relation_ids().collect();
        let keys = brute_force_enumerate(&[], &r, &g, &Limits::default()).unwrap();
        assert!(keys.is_empty());
    }

    #[test]
    fn oversized_graphs_are_refused() {
        let triples: String = (0..60)
            .map(|i| format!("e{i}\tr.a.b\tn{i}\n"))
            .collect();
        let g = graph(&triples);
        let e = vec![g.entity_by_key("e0").unwrap()];
        let r: Vec<RelationId> = g.relation_ids().collect();
        assert!(matches!(
            brute_force_enumerate(&e, &r, &g, &Limits::default()),
            Err(Error::OracleCap { .. })
        ));
    }

    #[test]
    fn oracle_agrees_with_construction_on_a_small_graph() {
        let g = graph("e1\tr.a.b\tn1\nn1\tr.b.c\tn2\ne2\tr.d.b\tn1");
        let e = vec![g.entity_by_key("e1").unwrap(), g.entity_by_key("e2").unwrap()];
        let r: Vec<RelationId> = g.relation_ids().collect();
        let limits = Limits::default();
        let oracle = brute_force_enumerate(&e, &r, &g, &limits).unwrap();
        let pool = synthesize("q", &e, &r, &g, &limits, false).unwrap();
        assert!(!pool.truncated);
        let built: BTreeSet<String> = pool.queries.keys().cloned().collect();
        assert_eq!(built, oracle);
    }
}
