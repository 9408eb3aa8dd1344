//! Candidate query graphs: triples over entities and variables plus
//! decorations, with canonical keys for deduplication.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Literal, RelationId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub u16);

impl std::fmt::Display for VarId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "?v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QTerm {
    Entity(EntityId),
    Var(VarId),
}

impl QTerm {
    pub fn as_var(&self) -> Option<VarId> {
        match self {
            QTerm::Var(v) => Some(*v),
            QTerm::Entity(_) => None,
        }
    }
    pub fn as_entity(&self) -> Option<EntityId> {
        match self {
            QTerm::Entity(e) => Some(*e),
            QTerm::Var(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pattern {
    pub subject: QTerm,
    pub predicate: RelationId,
    pub object: QTerm,
}

impl Pattern {
    pub fn new(subject: QTerm, predicate: RelationId, object: QTerm) -> Pattern {
        Pattern {
            subject,
            predicate,
            object,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        }
    }
    pub fn parse(s: &str) -> Option<CmpOp> {
        match s {
            "<" => Some(CmpOp::Lt),
            ">" => Some(CmpOp::Gt),
            "<=" => Some(CmpOp::Le),
            ">=" => Some(CmpOp::Ge),
            _ => None,
        }
    }
    pub const ALL: [CmpOp; 4] = [CmpOp::Lt, CmpOp::Gt, CmpOp::Le, CmpOp::Ge];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decoration {
    ArgMax(VarId),
    ArgMin(VarId),
    Filter(VarId, CmpOp, Literal),
    Count(VarId),
    Type(VarId, EntityId),
}

/// Where a candidate came from: a single edge, a k-edge expansion tree, or
/// a cross-layer combination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerTag {
    Chain(u8),
    Combo(Box<LayerTag>, Box<LayerTag>),
}

impl std::fmt::Display for LayerTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerTag::Chain(k) => write!(f, "L{k}"),
            LayerTag::Combo(a, b) => write!(f, "({a}x{b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGraph {
    pub patterns: Vec<Pattern>,
    pub decorations: Vec<Decoration>,
    pub answer_var: VarId,
    pub layer: LayerTag,
    /// Canonical key of the query this one was derived from, if any.
    pub parent_key: Option<String>,
}

impl QueryGraph {
    pub fn single(subject: QTerm, predicate: RelationId, object: QTerm, answer: VarId) -> Self {
        QueryGraph {
            patterns: vec![Pattern::new(subject, predicate, object)],
            decorations: Vec::new(),
            answer_var: answer,
            layer: LayerTag::Chain(1),
            parent_key: None,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.patterns.len()
    }

    /// Variables in sorted order.
    pub fn variables(&self) -> Vec<VarId> {
        let mut vars = Vec::with_capacity(self.patterns.len() + 1);
        for p in &self.patterns {
            if let Some(v) = p.subject.as_var() {
                vars.push(v);
            }
            if let Some(v) = p.object.as_var() {
                vars.push(v);
            }
        }
        vars.sort_unstable();
        vars.dedup();
        vars
    }

    pub fn entities(&self) -> Vec<EntityId> {
        let mut set = BTreeSet::new();
        for p in &self.patterns {
            if let Some(e) = p.subject.as_entity() {
                set.insert(e);
            }
            if let Some(e) = p.object.as_entity() {
                set.insert(e);
            }
        }
        set.into_iter().collect()
    }

    pub fn relations(&self) -> Vec<RelationId> {
        let mut set = BTreeSet::new();
        for p in &self.patterns {
            set.insert(p.predicate);
        }
        set.into_iter().collect()
    }

    /// Indexed node list plus undirected edge list over the pattern graph.
    /// Small structures make linear lookup cheaper than hashing.
    fn term_graph(&self) -> (Vec<TermNode>, Vec<(usize, usize)>) {
        let mut nodes: Vec<TermNode> = Vec::with_capacity(self.patterns.len() * 2);
        let mut edges = Vec::with_capacity(self.patterns.len());
        let index = |nodes: &mut Vec<TermNode>, n: TermNode| {
            nodes.iter().position(|m| *m == n).unwrap_or_else(|| {
                nodes.push(n);
                nodes.len() - 1
            })
        };
        for p in &self.patterns {
            let a = index(&mut nodes, TermNode::from(&p.subject));
            let b = index(&mut nodes, TermNode::from(&p.object));
            edges.push((a, b));
        }
        (nodes, edges)
    }

    pub fn is_connected(&self) -> bool {
        if self.patterns.is_empty() {
            return false;
        }
        let (nodes, edges) = self.term_graph();
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &(a, b) in &edges {
                let m = if a == n {
                    b
                } else if b == n {
                    a
                } else {
                    continue;
                };
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.iter().all(|s| *s)
    }

    /// Max over variables of the distance to the nearest entity, walking the
    /// undirected pattern graph. Zero for entity-free queries.
    pub fn hop_depth(&self) -> usize {
        let (nodes, edges) = self.term_graph();
        let mut dist: Vec<Option<usize>> = nodes
            .iter()
            .map(|n| matches!(n, TermNode::Entity(_)).then_some(0))
            .collect();
        let mut queue: std::collections::VecDeque<usize> = dist
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|_| i))
            .collect();
        while let Some(n) = queue.pop_front() {
            let d = dist[n].unwrap();
            for &(a, b) in &edges {
                let m = if a == n {
                    b
                } else if b == n {
                    a
                } else {
                    continue;
                };
                if dist[m].is_none() {
                    dist[m] = Some(d + 1);
                    queue.push_back(m);
                }
            }
        }
        nodes
            .iter()
            .zip(&dist)
            .filter(|(n, _)| matches!(n, TermNode::Var(_)))
            .map(|(_, d)| d.unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    pub fn check_well_formed(&self) -> Result<()> {
        if self.patterns.is_empty() {
            return Err(Error::MalformedQuery("query has no triples".into()));
        }
        if !self.is_connected() {
            return Err(Error::MalformedQuery("query graph is disconnected".into()));
        }
        let vars: BTreeSet<VarId> = self.variables().into_iter().collect();
        if !vars.contains(&self.answer_var) {
            return Err(Error::MalformedQuery(format!(
                "answer variable {} is not bound by any triple",
                self.answer_var
            )));
        }
        for deco in &self.decorations {
            let v = match deco {
                Decoration::ArgMax(v)
                | Decoration::ArgMin(v)
                | Decoration::Filter(v, _, _)
                | Decoration::Count(v)
                | Decoration::Type(v, _) => *v,
            };
            if !vars.contains(&v) {
                return Err(Error::MalformedQuery(format!(
                    "decoration references unbound variable {v}"
                )));
            }
        }
        Ok(())
    }

    /// Rewrite variable ids through a map, leaving entities untouched.
    pub fn rename_vars(&self, map: &BTreeMap<VarId, VarId>) -> QueryGraph {
        let ren = |t: &QTerm| match t {
            QTerm::Var(v) => QTerm::Var(*map.get(v).unwrap_or(v)),
            QTerm::Entity(e) => QTerm::Entity(*e),
        };
        QueryGraph {
            patterns: self
                .patterns
                .iter()
                .map(|p| Pattern::new(ren(&p.subject), p.predicate, ren(&p.object)))
                .collect(),
            decorations: self
                .decorations
                .iter()
                .map(|d| match d {
                    Decoration::ArgMax(v) => Decoration::ArgMax(*map.get(v).unwrap_or(v)),
                    Decoration::ArgMin(v) => Decoration::ArgMin(*map.get(v).unwrap_or(v)),
                    Decoration::Filter(v, op, lit) => {
                        Decoration::Filter(*map.get(v).unwrap_or(v), *op, lit.clone())
                    }
                    Decoration::Count(v) => Decoration::Count(*map.get(v).unwrap_or(v)),
                    Decoration::Type(v, c) => Decoration::Type(*map.get(v).unwrap_or(v), *c),
                })
                .collect(),
            answer_var: *map.get(&self.answer_var).unwrap_or(&self.answer_var),
            layer: self.layer.clone(),
            parent_key: self.parent_key.clone(),
        }
    }

    /// Renumber variables as v0, v1, ... in first-occurrence order.
    pub fn with_canonical_var_order(&self) -> QueryGraph {
        let mut map = BTreeMap::new();
        let mut next = 0u16;
        for p in &self.patterns {
            for t in [&p.subject, &p.object] {
                if let QTerm::Var(v) = t {
                    map.entry(*v).or_insert_with(|| {
                        let id = VarId(next);
                        next += 1;
                        id
                    });
                }
            }
        }
        self.rename_vars(&map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum TermNode {
    Entity(EntityId),
    Var(VarId),
}

impl From<&QTerm> for TermNode {
    fn from(t: &QTerm) -> TermNode {
        match t {
            QTerm::Entity(e) => TermNode::Entity(*e),
            QTerm::Var(v) => TermNode::Var(*v),
        }
    }
}

fn render_term(t: &QTerm, g: &KnowledgeGraph, names: &BTreeMap<VarId, usize>) -> String {
    match t {
        QTerm::Entity(e) => format!("e:{}", g.entity_key(*e)),
        QTerm::Var(v) => format!("?v{}", names[v]),
    }
}

fn render_under(
    q: &QueryGraph,
    g: &KnowledgeGraph,
    names: &BTreeMap<VarId, usize>,
    with_answer: bool,
) -> String {
    let mut lines: Vec<String> = q
        .patterns
        .iter()
        .map(|p| {
            format!(
                "{}\t{}\t{}",
                render_term(&p.subject, g, names),
                g.relation_name(p.predicate),
                render_term(&p.object, g, names)
            )
        })
        .collect();
    lines.sort();
    lines.dedup();
    let mut deco: Vec<String> = q
        .decorations
        .iter()
        .map(|d| match d {
            Decoration::ArgMax(v) => format!("argmax ?v{}", names[v]),
            Decoration::ArgMin(v) => format!("argmin ?v{}", names[v]),
            Decoration::Filter(v, op, lit) => {
                format!("filter ?v{} {} {}", names[v], op.symbol(), lit.lexical)
            }
            Decoration::Count(v) => format!("count ?v{}", names[v]),
            Decoration::Type(v, c) => format!("type ?v{} e:{}", names[v], g.entity_key(*c)),
        })
        .collect();
    deco.sort();
    lines.extend(deco);
    if with_answer {
        lines.push(format!("ans ?v{}", names[&q.answer_var]));
    }
    lines.join("\n")
}

/// Heap's algorithm: apply `f` to every permutation of `labels` in place.
fn for_each_permutation(labels: &mut [usize], f: &mut impl FnMut(&[usize])) {
    fn heap(k: usize, labels: &mut [usize], f: &mut impl FnMut(&[usize])) {
        if k <= 1 {
            f(labels);
            return;
        }
        for i in 0..k {
            heap(k - 1, labels, f);
            if k % 2 == 0 {
                labels.swap(i, k - 1);
            } else {
                labels.swap(0, k - 1);
            }
        }
    }
    heap(labels.len(), labels, f);
}

const CANON_VAR_LIMIT: usize = 8;

/// Canonical form computed in one pass over variable permutations: the
/// minimal structure rendering plus, for every variable, its minimal label
/// under the structure-minimizing permutations. The canonical key with an
/// answer variable is the structure string plus an answer line, so all
/// answer placements of one structure share one permutation search.
#[derive(Debug, Clone)]
pub struct CanonicalInfo {
    pub structure: String,
    answer_labels: BTreeMap<VarId, usize>,
}

impl CanonicalInfo {
    pub fn key_for_answer(&self, answer: VarId) -> String {
        match self.answer_labels.get(&answer) {
            Some(label) => format!("{}\nans ?v{label}", self.structure),
            None => format!("{}\nans {answer}", self.structure),
        }
    }
}

/// Exact minimization over variable permutations; guarded by a variable
/// limit well above what the edge limit allows. The search compares compact
/// integer encodings of the lines — ranks of entities, relations, and
/// literals are taken within the query, so isomorphic queries encode
/// identically — and only the winning permutation is rendered to a string.
pub fn canonical_info(q: &QueryGraph, g: &KnowledgeGraph) -> Result<CanonicalInfo> {
    let vars = q.variables();
    if vars.len() > CANON_VAR_LIMIT {
        return Err(Error::MalformedQuery(format!(
            "query has {} variables, canonicalization supports at most {}",
            vars.len(),
            CANON_VAR_LIMIT
        )));
    }
    if !q.is_connected() {
        return Err(Error::MalformedQuery(
            "cannot canonicalize a disconnected query".into(),
        ));
    }
    let var_idx: BTreeMap<VarId, usize> = vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut ents = q.entities();
    for d in &q.decorations {
        if let Decoration::Type(_, c) = d {
            ents.push(*c);
        }
    }
    ents.sort_by_key(|e| g.entity_key(*e));
    ents.dedup();
    let ent_rank: BTreeMap<EntityId, u32> =
        ents.iter().enumerate().map(|(i, e)| (*e, i as u32)).collect();
    let mut rels = q.relations();
    rels.sort_by_key(|r| g.relation_name(*r));
    let rel_rank: BTreeMap<RelationId, u32> =
        rels.iter().enumerate().map(|(i, r)| (*r, i as u32)).collect();
    let mut lits: Vec<&str> = q
        .decorations
        .iter()
        .filter_map(|d| match d {
            Decoration::Filter(_, _, lit) => Some(lit.lexical.as_str()),
            _ => None,
        })
        .collect();
    lits.sort_unstable();
    lits.dedup();
    let lit_rank = |lex: &str| lits.binary_search(&lex).unwrap_or(0) as u32;

    // One encoded line per pattern or decoration. Variable slots hold the
    // variable's index; the permutation substitutes labels before comparing.
    type Line = [u32; 6];
    let term = |t: &QTerm| -> (u32, u32) {
        match t {
            QTerm::Entity(e) => (0, ent_rank[e]),
            QTerm::Var(v) => (1, var_idx[v] as u32),
        }
    };
    let mut templates: Vec<Line> = q
        .patterns
        .iter()
        .map(|p| {
            let (st, sv) = term(&p.subject);
            let (ot, ov) = term(&p.object);
            [0, st, sv, rel_rank[&p.predicate], ot, ov]
        })
        .collect();
    templates.extend(q.decorations.iter().map(|d| -> Line {
        match d {
            Decoration::ArgMax(v) => [1, 0, var_idx[v] as u32, 0, 0, 0],
            Decoration::ArgMin(v) => [1, 1, var_idx[v] as u32, 0, 0, 0],
            Decoration::Filter(v, op, lit) => {
                [1, 2, var_idx[v] as u32, *op as u32, lit_rank(&lit.lexical), 0]
            }
            Decoration::Count(v) => [1, 3, var_idx[v] as u32, 0, 0, 0],
            Decoration::Type(v, c) => [1, 4, var_idx[v] as u32, ent_rank[c], 0, 0],
        }
    }));

    let mut labels: Vec<usize> = (0..vars.len()).collect();
    let mut best: Option<Vec<Line>> = None;
    let mut best_labels: Vec<usize> = labels.clone();
    let mut answer_labels: BTreeMap<VarId, usize> = BTreeMap::new();
    let mut scratch: Vec<Line> = Vec::with_capacity(templates.len());
    for_each_permutation(&mut labels, &mut |perm| {
        scratch.clear();
        for t in &templates {
            let mut line = *t;
            if line[0] == 0 {
                if line[1] == 1 {
                    line[2] = perm[line[2] as usize] as u32;
                }
                if line[4] == 1 {
                    line[5] = perm[line[5] as usize] as u32;
                }
            } else {
                line[2] = perm[line[2] as usize] as u32;
            }
            scratch.push(line);
        }
        scratch.sort_unstable();
        scratch.dedup();
        match &best {
            Some(b) if scratch >= *b => {
                if scratch == *b {
                    // An automorphism: keep the smallest label per variable.
                    for (i, v) in vars.iter().enumerate() {
                        let e = answer_labels.entry(*v).or_insert(perm[i]);
                        *e = (*e).min(perm[i]);
                    }
                }
            }
            _ => {
                best = Some(scratch.clone());
                best_labels = perm.to_vec();
                answer_labels = vars.iter().enumerate().map(|(i, v)| (*v, perm[i])).collect();
            }
        }
    });
    let names: BTreeMap<VarId, usize> = vars
        .iter()
        .enumerate()
        .map(|(i, v)| (*v, best_labels[i]))
        .collect();
    Ok(CanonicalInfo {
        structure: render_under(q, g, &names, false),
        answer_labels,
    })
}

/// Canonical key: invariant under variable renaming and triple reordering.
/// Includes decorations and the answer variable, so two structurally equal
/// queries with different answers stay distinct.
pub fn canonical_key(q: &QueryGraph, g: &KnowledgeGraph) -> Result<String> {
    Ok(canonical_info(q, g)?.key_for_answer(q.answer_var))
}

/// Canonical key ignoring the answer variable; used to cache probe results,
/// since non-emptiness does not depend on which variable is the answer.
pub fn structure_key(q: &QueryGraph, g: &KnowledgeGraph) -> Result<String> {
    Ok(canonical_info(q, g)?.structure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::load_graph;
    use std::io::Cursor;

    fn graph() -> crate::kg::KnowledgeGraph {
        load_graph(
            Cursor::new("a\tr.p.x\tb\nb\tr.p.y\tc\nc\tr.p.z\ta".to_string()),
            None::<Cursor<String>>,
            None::<Cursor<String>>,
        )
        .unwrap()
    }

    fn two_edge_query(g: &crate::kg::KnowledgeGraph, v0: u16, v1: u16) -> QueryGraph {
        let rx = g.relation_by_name("r.p.x").unwrap();
        let ry = g.relation_by_name("r.p.y").unwrap();
        let a = g.entity_by_key("a").unwrap();
        QueryGraph {
            patterns: vec![
                Pattern::new(QTerm::Entity(a), rx, QTerm::Var(VarId(v0))),
                Pattern::new(QTerm::Var(VarId(v0)), ry, QTerm::Var(VarId(v1))),
            ],
            decorations: vec![],
            answer_var: VarId(v1),
            layer: LayerTag::Chain(2),
            parent_key: None,
        }
    }

    #[test]
    fn canonical_key_ignores_variable_names_and_order() {
        let g = graph();
        let q1 = two_edge_query(&g, 0, 1);
        let mut q2 = two_edge_query(&g, 5, 2);
        q2.patterns.reverse();
        assert_eq!(
            canonical_key(&q1, &g).unwrap(),
            canonical_key(&q2, &g).unwrap()
        );
    }

    #[test]
    fn canonical_key_distinguishes_answer_variables() {
        let g = graph();
        let q1 = two_edge_query(&g, 0, 1);
        let mut q2 = two_edge_query(&g, 0, 1);
        q2.answer_var = VarId(0);
        assert_ne!(
            canonical_key(&q1, &g).unwrap(),
            canonical_key(&q2, &g).unwrap()
        );
        assert_eq!(
            structure_key(&q1, &g).unwrap(),
            structure_key(&q2, &g).unwrap()
        );
    }

    #[test]
    fn hop_depth_measures_distance_to_entities() {
        let g = graph();
        let q = two_edge_query(&g, 0, 1);
        assert_eq!(q.hop_depth(), 2);
        // A path between two entities: inner variables stay shallow.
        let rx = g.relation_by_name("r.p.x").unwrap();
        let a = g.entity_by_key("a").unwrap();
        let b = g.entity_by_key("b").unwrap();
        let barbell = QueryGraph {
            patterns: vec![
                Pattern::new(QTerm::Entity(a), rx, QTerm::Var(VarId(0))),
                Pattern::new(QTerm::Var(VarId(0)), rx, QTerm::Var(VarId(1))),
                Pattern::new(QTerm::Var(VarId(1)), rx, QTerm::Entity(b)),
            ],
            decorations: vec![],
            answer_var: VarId(1),
            layer: LayerTag::Chain(3),
            parent_key: None,
        };
        assert_eq!(barbell.hop_depth(), 1);
    }

    #[test]
    fn disconnected_queries_are_rejected() {
        let g = graph();
        let rx = g.relation_by_name("r.p.x").unwrap();
        let a = g.entity_by_key("a").unwrap();
        let b = g.entity_by_key("b").unwrap();
        let q = QueryGraph {
            patterns: vec![
                Pattern::new(QTerm::Entity(a), rx, QTerm::Var(VarId(0))),
                Pattern::new(QTerm::Entity(b), rx, QTerm::Var(VarId(1))),
            ],
            decorations: vec![],
            answer_var: VarId(0),
            layer: LayerTag::Chain(1),
            parent_key: None,
        };
        assert!(q.check_well_formed().is_err());
        assert!(canonical_key(&q, &g).is_err());
    }

    #[test]
    fn unbound_answer_or_decoration_is_rejected() {
        let g = graph();
        let mut q = two_edge_query(&g, 0, 1);
        q.answer_var = VarId(9);
        assert!(q.check_well_formed().is_err());
        let mut q = two_edge_query(&g, 0, 1);
        q.decorations.push(Decoration::ArgMax(VarId(9)));
        assert!(q.check_well_formed().is_err());
    }

    #[test]
    fn canonical_var_order_is_first_occurrence() {
        let g = graph();
        let q = two_edge_query(&g, 7, 3).with_canonical_var_order();
        assert_eq!(q.variables(), vec![VarId(0), VarId(1)]);
        assert_eq!(q.answer_var, VarId(1));
        let _ = g;
    }

    #[test]
    fn layer_tags_render_compactly() {
        let combo = LayerTag::Combo(
            Box::new(LayerTag::Chain(1)),
            Box::new(LayerTag::Chain(2)),
        );
        assert_eq!(combo.to_string(), "(L1xL2)");
    }
}
