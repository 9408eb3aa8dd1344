//! Synthetic query construction: layer-wise expansion and cross-layer
//! combination of candidate query graphs, keeping only structures that
//! execute non-empty. Exploration runs simple-to-complex so no child of an
//! invalid structure is ever probed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kg::{EntityId, ExecMode, KnowledgeGraph, Node, RelationId};
use crate::query::{canonical_info, Decoration, LayerTag, Pattern, QTerm, QueryGraph, VarId};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Limits {
    pub max_hops: usize,
    pub max_edges: usize,
    /// Probe budget per construction stage; exceeding it truncates the pool.
    pub probe_budget: usize,
    /// Cap on cached value sets used for combination prechecks.
    pub value_cache_cap: usize,
    pub row_cap: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_hops: 3,
            max_edges: 5,
            probe_budget: 5_000,
            value_cache_cap: 10_000,
            row_cap: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub key: String,
    pub valid: bool,
    pub parent_key: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CandidatePool {
    /// Canonical key -> query. All stored queries probed non-empty.
    pub queries: BTreeMap<String, QueryGraph>,
    /// One record per distinct probed structure, sorted by key.
    pub probe_log: Vec<ProbeRecord>,
    pub layer_stats: BTreeMap<String, usize>,
    pub truncated: bool,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.queries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
    /// Keys of the pool before decoration variants (structure dedup keeps
    /// decorated and undecorated entries separate already).
    pub fn undecorated_keys(&self) -> BTreeSet<String> {
        self.queries
            .iter()
            .filter(|(_, q)| q.decorations.is_empty())
            .map(|(k, _)| k.clone())
            .collect()
    }
}

/// One structure in the pool, shared by all of its answer-variable variants.
struct StructEntry {
    query: QueryGraph,
    /// Smallest canonical key among the structure's pool variants; children
    /// derived from this structure point here as their parent.
    rep_key: String,
    /// Dense id for fast attempted-merge and value-set bookkeeping.
    id: u32,
}

struct Builder<'g> {
    graph: &'g KnowledgeGraph,
    limits: Limits,
    pool: CandidatePool,
    /// Structure key -> representative. Canonicalization and probing happen
    /// once per structure, not once per answer variant.
    structures: BTreeMap<String, StructEntry>,
    next_id: u32,
    /// Exact normalized pattern sets already handled; repeats skip
    /// canonicalization entirely.
    seen_pattern_sets: HashSet<Vec<Pattern>>,
    probe_cache: HashMap<String, bool>,
    /// Full-mode value sets per structure id, for combination prechecks.
    /// `None` means the set hit the cache cap and cannot be used.
    value_sets: HashMap<u32, Option<HashMap<VarId, BTreeSet<Node>>>>,
    stage_probes: usize,
}

impl<'g> Builder<'g> {
    fn new(graph: &'g KnowledgeGraph, limits: Limits) -> Self {
        Builder {
            graph,
            limits,
            pool: CandidatePool::default(),
            structures: BTreeMap::new(),
            next_id: 0,
            seen_pattern_sets: HashSet::new(),
            probe_cache: HashMap::new(),
            value_sets: HashMap::new(),
            stage_probes: 0,
        }
    }

    fn fresh_id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn budget_left(&self) -> bool {
        self.stage_probes < self.limits.probe_budget
    }
    fn new_stage(&mut self) {
        self.stage_probes = 0;
    }

    /// Probe a structure for non-emptiness, with caching by structure key.
    fn probe_structure(
        &mut self,
        skey: &str,
        q: &QueryGraph,
        parent: Option<&String>,
    ) -> Result<bool> {
        if let Some(valid) = self.probe_cache.get(skey) {
            return Ok(*valid);
        }
        self.stage_probes += 1;
        let valid = !self
            .graph
            .execute(q, ExecMode::Probe, self.limits.row_cap)?
            .is_empty();
        self.probe_cache.insert(skey.to_string(), valid);
        self.pool.probe_log.push(ProbeRecord {
            key: skey.to_string(),
            valid,
            parent_key: parent.cloned(),
        });
        Ok(valid)
    }

    fn insert_variant(&mut self, key: &str, variant: QueryGraph) {
        if !self.pool.queries.contains_key(key) {
            *self
                .pool
                .layer_stats
                .entry(variant.layer.to_string())
                .or_insert(0) += 1;
            self.pool.queries.insert(key.to_string(), variant);
        }
    }

    /// Probe one candidate structure and, when it is valid and new, insert a
    /// pool entry per answer-variable placement. All placements share one
    /// canonicalization pass and one probe. Returns the structure key of a
    /// newly added structure.
    fn probe_and_insert(
        &mut self,
        candidate: QueryGraph,
        parent_rep: Option<String>,
    ) -> Result<Option<String>> {
        let q = candidate.with_canonical_var_order();
        let mut pattern_set = q.patterns.clone();
        pattern_set.sort_unstable();
        if !self.seen_pattern_sets.insert(pattern_set) {
            return Ok(None);
        }
        let info = canonical_info(&q, self.graph)?;
        let skey = info.structure.clone();
        if !self.probe_structure(&skey, &q, parent_rep.as_ref())? {
            return Ok(None);
        }
        if self.structures.contains_key(&skey) {
            return Ok(None);
        }
        let mut rep_key: Option<String> = None;
        for v in q.variables() {
            let key = info.key_for_answer(v);
            let mut variant = q.clone();
            variant.answer_var = v;
            variant.parent_key = parent_rep.clone();
            self.insert_variant(&key, variant);
            if rep_key.as_ref().map(|r| key < *r).unwrap_or(true) {
                rep_key = Some(key);
            }
        }
        let id = self.fresh_id();
        self.structures.insert(
            skey.clone(),
            StructEntry {
                query: q,
                rep_key: rep_key.unwrap_or_default(),
                id,
            },
        );
        Ok(Some(skey))
    }

    /// Register an already-validated query, and only that answer variant,
    /// without probing; used when staging an existing pool for more rounds.
    fn seed(&mut self, q: &QueryGraph) -> Result<String> {
        let q = q.with_canonical_var_order();
        let info = canonical_info(&q, self.graph)?;
        let skey = info.structure.clone();
        let key = info.key_for_answer(q.answer_var);
        self.probe_cache.insert(skey.clone(), true);
        self.insert_variant(&key, q.clone());
        match self.structures.get_mut(&skey) {
            Some(entry) => {
                if key < entry.rep_key {
                    entry.rep_key = key;
                }
            }
            None => {
                let id = self.fresh_id();
                self.structures
                    .insert(skey.clone(), StructEntry { query: q, rep_key: key, id });
            }
        }
        Ok(skey)
    }

    fn ensure_value_set(&mut self, id: u32, q: &QueryGraph) -> Result<()> {
        if self.value_sets.contains_key(&id) {
            return Ok(());
        }
        self.stage_probes += 1;
        let bs = self
            .graph
            .execute(q, ExecMode::Full, self.limits.value_cache_cap)?;
        let vs = if bs.truncated {
            None
        } else {
            let mut map: HashMap<VarId, BTreeSet<Node>> = HashMap::new();
            for (i, v) in bs.variables.iter().enumerate() {
                map.insert(*v, bs.rows.iter().map(|r| r[i].clone()).collect());
            }
            Some(map)
        };
        self.value_sets.insert(id, vs);
        Ok(())
    }

    /// Can the shared variables of a prospective merge bind a common value?
    /// `false` is only returned when the binding sets provably miss.
    fn values_may_intersect(
        &mut self,
        ia: u32,
        qa: &QueryGraph,
        o_i: VarId,
        ib: u32,
        qb: &QueryGraph,
        o_j: VarId,
    ) -> Result<bool> {
        self.ensure_value_set(ia, qa)?;
        self.ensure_value_set(ib, qb)?;
        let (Some(Some(va)), Some(Some(vb))) =
            (self.value_sets.get(&ia), self.value_sets.get(&ib))
        else {
            return Ok(true);
        };
        Ok(match (va.get(&o_i), vb.get(&o_j)) {
            (Some(a), Some(b)) => !a.is_disjoint(b),
            _ => true,
        })
    }

    fn layer1(&mut self, entities: &[EntityId], relations: &[RelationId]) -> Result<Vec<String>> {
        self.new_stage();
        let mut added = Vec::new();
        let mut ents: Vec<EntityId> = entities.to_vec();
        ents.sort_by(|a, b| self.graph.entity_key(*a).cmp(self.graph.entity_key(*b)));
        ents.dedup();
        for e in ents {
            for &p in relations {
                for forward in [true, false] {
                    if !self.budget_left() {
                        self.pool.truncated = true;
                        return Ok(added);
                    }
                    let v = VarId(0);
                    let q = if forward {
                        QueryGraph::single(QTerm::Entity(e), p, QTerm::Var(v), v)
                    } else {
                        QueryGraph::single(QTerm::Var(v), p, QTerm::Entity(e), v)
                    };
                    if let Some(skey) = self.probe_and_insert(q, None)? {
                        added.push(skey);
                    }
                }
            }
        }
        Ok(added)
    }

    /// One expansion round: attach a fresh-variable edge at every variable
    /// of every structure from the previous round. Valid children enter the
    /// pool once per answer-variable placement.
    fn expand(&mut self, prev: &[String], relations: &[RelationId]) -> Result<Vec<String>> {
        self.new_stage();
        let mut added = Vec::new();
        for skey in prev {
            let Some(entry) = self.structures.get(skey) else {
                continue;
            };
            let q = entry.query.clone();
            let rep = entry.rep_key.clone();
            if q.edge_count() >= self.limits.max_edges {
                continue;
            }
            let fresh = VarId(q.variables().iter().map(|v| v.0 + 1).max().unwrap_or(0));
            let layer = match q.layer {
                LayerTag::Chain(k) => LayerTag::Chain(k + 1),
                ref other => other.clone(),
            };
            for o_i in q.variables() {
                for &p in relations {
                    for forward in [true, false] {
                        if !self.budget_left() {
                            self.pool.truncated = true;
                            return Ok(added);
                        }
                        let edge = if forward {
                            Pattern::new(QTerm::Var(o_i), p, QTerm::Var(fresh))
                        } else {
                            Pattern::new(QTerm::Var(fresh), p, QTerm::Var(o_i))
                        };
                        let mut child = q.clone();
                        child.patterns.push(edge);
                        child.layer = layer.clone();
                        if child.hop_depth() > self.limits.max_hops {
                            continue;
                        }
                        if let Some(s) = self.probe_and_insert(child, Some(rep.clone()))? {
                            added.push(s);
                        }
                    }
                }
            }
        }
        added.sort();
        added.dedup();
        Ok(added)
    }

    /// Merge two queries at one shared variable. The second operand's
    /// variables are renamed fresh except the shared one; identical triples
    /// collapse in the union.
    fn merge(a: &QueryGraph, b: &QueryGraph, o_i: VarId, o_j: VarId) -> QueryGraph {
        let base = a.variables().iter().map(|v| v.0 + 1).max().unwrap_or(0);
        let mut map: BTreeMap<VarId, VarId> = BTreeMap::new();
        map.insert(o_j, o_i);
        let mut next = base;
        for v in b.variables() {
            if v != o_j {
                map.insert(v, VarId(next));
                next += 1;
            }
        }
        let b_renamed = b.rename_vars(&map);
        let mut patterns = a.patterns.clone();
        for pat in b_renamed.patterns {
            if !patterns.contains(&pat) {
                patterns.push(pat);
            }
        }
        QueryGraph {
            patterns,
            decorations: Vec::new(),
            answer_var: a.answer_var,
            layer: LayerTag::Combo(Box::new(a.layer.clone()), Box::new(b.layer.clone())),
            parent_key: None,
        }
    }

    /// Cross-layer combination to a fixpoint, simplest pairs first. Pairing
    /// runs over structures, so each merge is attempted once regardless of
    /// how many answer variants the operands have.
    fn combine_fixpoint(&mut self) -> Result<Vec<String>> {
        self.new_stage();
        let mut all_added = Vec::new();
        // Ids below this were already present before the previous round, so
        // every pair among them has been attempted; only pairs touching a
        // newer structure need work.
        let mut settled_below = 0u32;
        loop {
            let round_start = self.next_id;
            let snapshot: Vec<Operand> = {
                let mut v: Vec<_> = self
                    .structures
                    .iter()
                    .filter(|(_, e)| e.query.decorations.is_empty())
                    .map(|(k, e)| (k.clone(), e.id, e.query.clone(), e.rep_key.clone()))
                    .collect();
                v.sort_by_key(|(k, _, q, _)| (q.edge_count(), k.clone()));
                v.into_iter()
                    .map(|(_, id, query, rep_key)| Operand::new(id, query, rep_key))
                    .collect()
            };
            let mut added_this_round = 0usize;
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            for i in 0..snapshot.len() {
                for j in 0..snapshot.len() {
                    if snapshot[i].id < settled_below && snapshot[j].id < settled_below {
                        continue;
                    }
                    let total = snapshot[i].edges + snapshot[j].edges;
                    // Entity edges at the glue variable can coincide, so the
                    // merged size may undercut the sum; the exact edge-count
                    // check per glue pair still applies.
                    let overlap = snapshot[i].entity_edges.min(snapshot[j].entity_edges);
                    if total <= self.limits.max_edges + overlap {
                        pairs.push((i, j));
                    }
                }
            }
            pairs.sort_by_key(|(i, j)| (snapshot[*i].edges + snapshot[*j].edges, *i, *j));
            for (i, j) in pairs {
                let a = &snapshot[i];
                let b = &snapshot[j];
                for (ai, &o_i) in a.vars.iter().enumerate() {
                    for (bi, &o_j) in b.vars.iter().enumerate() {
                        if !self.budget_left() {
                            self.pool.truncated = true;
                            return Ok(all_added);
                        }
                        // Exact merged size without building the merge: only
                        // entity edges at the glue variable can collapse.
                        let merged_edges =
                            a.edges + b.edges - glue_overlap(&a.glue[ai], &b.glue[bi]);
                        if merged_edges > self.limits.max_edges
                            || merged_edges <= a.edges.max(b.edges)
                        {
                            continue;
                        }
                        // Value-set precheck: skip the probe when the shared
                        // variable's binding sets provably do not intersect.
                        if !self.values_may_intersect(a.id, &a.query, o_i, b.id, &b.query, o_j)? {
                            continue;
                        }
                        let merged = Self::merge(&a.query, &b.query, o_i, o_j);
                        debug_assert_eq!(merged.edge_count(), merged_edges);
                        if merged.hop_depth() > self.limits.max_hops {
                            continue;
                        }
                        // Parent: the operand from the lower layer (fewer
                        // edges), ties broken by smaller representative key.
                        let parent = if a.edges < b.edges
                            || (a.edges == b.edges && a.rep_key <= b.rep_key)
                        {
                            a.rep_key.clone()
                        } else {
                            b.rep_key.clone()
                        };
                        if let Some(s) = self.probe_and_insert(merged, Some(parent))? {
                            all_added.push(s);
                            added_this_round += 1;
                        }
                    }
                }
            }
            if added_this_round == 0 {
                break;
            }
            settled_below = round_start;
        }
        all_added.sort();
        all_added.dedup();
        Ok(all_added)
    }

    fn decorate_pass(&mut self, nlq: &str) -> Result<()> {
        self.new_stage();
        let snapshot: Vec<(String, QueryGraph)> = self
            .pool
            .queries
            .iter()
            .filter(|(_, q)| q.decorations.is_empty())
            .map(|(k, q)| (k.clone(), q.clone()))
            .collect();
        for (key, q) in snapshot {
            if !self.budget_left() {
                self.pool.truncated = true;
                return Ok(());
            }
            for mut variant in decoration_variants(&q, nlq, self.graph, &self.limits)? {
                variant.parent_key = Some(key.clone());
                // Decorations fix the answer placement, so only this variant
                // is inserted, not one per variable.
                let variant = variant.with_canonical_var_order();
                let info = canonical_info(&variant, self.graph)?;
                if self.probe_structure(&info.structure, &variant, variant.parent_key.as_ref())? {
                    let vkey = info.key_for_answer(variant.answer_var);
                    self.insert_variant(&vkey, variant);
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> CandidatePool {
        self.pool
            .probe_log
            .sort_by(|a, b| a.key.cmp(&b.key).then(a.valid.cmp(&b.valid)));
        self.pool.probe_log.dedup_by(|a, b| a.key == b.key);
        self.pool
    }
}

/// Unchecked decoration variants for a valid query: argmax/argmin for
/// literal-valued variables, filters for number tokens in the question, and
/// a count variant when the question carries a counting cue. The caller
/// probe-checks each variant.
pub fn decoration_variants(
    q: &QueryGraph,
    nlq: &str,
    graph: &KnowledgeGraph,
    limits: &Limits,
) -> Result<Vec<QueryGraph>> {
    let mut out = Vec::new();
    let full = graph.execute(q, ExecMode::Full, limits.row_cap)?;
    let number_tokens = extract_number_tokens(nlq);
    for v in q.variables() {
        let values = full.project(v);
        if values.is_empty() {
            continue;
        }
        let all_numeric = values.iter().all(
            |n| matches!(n, Node::Literal(l) if l.numeric_value.is_some()),
        );
        if !all_numeric {
            continue;
        }
        // The answer moves off the extremal variable.
        let answer = if q.answer_var == v {
            other_var(q, v)
        } else {
            Some(q.answer_var)
        };
        if let Some(answer) = answer {
            for deco in [Decoration::ArgMax(v), Decoration::ArgMin(v)] {
                let mut variant = q.clone();
                variant.decorations.push(deco);
                variant.answer_var = answer;
                out.push(variant);
            }
        }
        for tok in &number_tokens {
            for op in crate::query::CmpOp::ALL {
                let mut variant = q.clone();
                variant
                    .decorations
                    .push(Decoration::Filter(v, op, crate::kg::Literal::parse(tok)));
                out.push(variant);
            }
        }
    }
    if has_count_cue(nlq) {
        let mut variant = q.clone();
        variant.decorations.push(Decoration::Count(q.answer_var));
        out.push(variant);
    }
    Ok(out)
}

/// An entity edge incident to a variable: orientation, relation, entity.
type GlueEdge = (bool, RelationId, EntityId);

/// A combination operand with precomputed pairing data.
struct Operand {
    id: u32,
    query: QueryGraph,
    rep_key: String,
    vars: Vec<VarId>,
    edges: usize,
    entity_edges: usize,
    /// Per variable (aligned with `vars`): sorted descriptors of the entity
    /// edges incident to it.
    glue: Vec<Vec<GlueEdge>>,
}

impl Operand {
    fn new(id: u32, query: QueryGraph, rep_key: String) -> Self {
        let vars = query.variables();
        let edges = query.edge_count();
        let entity_edges = entity_edge_count(&query);
        let glue = vars
            .iter()
            .map(|&v| {
                let mut d: Vec<GlueEdge> = query
                    .patterns
                    .iter()
                    .filter_map(|p| match (p.subject, p.object) {
                        (QTerm::Entity(e), QTerm::Var(u)) if u == v => {
                            Some((true, p.predicate, e))
                        }
                        (QTerm::Var(u), QTerm::Entity(e)) if u == v => {
                            Some((false, p.predicate, e))
                        }
                        _ => None,
                    })
                    .collect();
                d.sort_unstable();
                d
            })
            .collect();
        Operand {
            id,
            query,
            rep_key,
            vars,
            edges,
            entity_edges,
            glue,
        }
    }
}

/// How many entity edges the glue variables share. These are the only
/// patterns a merge can deduplicate: every other pattern of the renamed
/// operand keeps at least one fresh variable.
fn glue_overlap(a: &[GlueEdge], b: &[GlueEdge]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn entity_edge_count(q: &QueryGraph) -> usize {
    q.patterns
        .iter()
        .filter(|p| p.subject.as_var().is_none() || p.object.as_var().is_none())
        .count()
}

fn other_var(q: &QueryGraph, v: VarId) -> Option<VarId> {
    for p in &q.patterns {
        match (p.subject.as_var(), p.object.as_var()) {
            (Some(s), Some(o)) if o == v => return Some(s),
            (Some(s), Some(o)) if s == v => return Some(o),
            _ => {}
        }
    }
    q.variables().into_iter().find(|u| *u != v)
}

fn extract_number_tokens(nlq: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in nlq.split_whitespace() {
        let tok = raw.trim_matches(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'));
        if tok.is_empty() || !tok.chars().any(|c| c.is_ascii_digit()) {
            continue;
        }
        if tok.parse::<f64>().is_ok() && !out.contains(&tok.to_string()) {
            out.push(tok.to_string());
        }
    }
    out
}

fn has_count_cue(nlq: &str) -> bool {
    let lower = nlq.to_lowercase();
    lower.contains("how many") || lower.contains("number of") || lower.contains("count")
}

/// The simplest query structures: one edge between a candidate entity and a
/// fresh variable, in both orientations, kept when they execute non-empty.
pub fn build_layer1(
    entities: &[EntityId],
    relations: &[RelationId],
    graph: &KnowledgeGraph,
) -> Result<Vec<QueryGraph>> {
    let mut b = Builder::new(graph, Limits::default());
    b.layer1(entities, relations)?;
    Ok(b.finish().queries.into_values().collect())
}

/// Expand each query by one fresh-variable edge at every variable, keeping
/// valid children once per answer-variable placement.
pub fn expand_layer(
    prev: &[QueryGraph],
    relations: &[RelationId],
    graph: &KnowledgeGraph,
    limits: &Limits,
) -> Result<Vec<QueryGraph>> {
    let mut b = Builder::new(graph, limits.clone());
    let mut seeds = Vec::new();
    for q in prev {
        seeds.push(b.seed(q)?);
    }
    seeds.sort();
    seeds.dedup();
    let before: BTreeSet<String> = b.pool.queries.keys().cloned().collect();
    b.expand(&seeds, relations)?;
    Ok(b.finish()
        .queries
        .into_iter()
        .filter(|(k, _)| !before.contains(k))
        .map(|(_, q)| q)
        .collect())
}

/// Cross-layer combination over an existing pool, to a fixpoint.
pub fn combine(
    pool: &CandidatePool,
    graph: &KnowledgeGraph,
    limits: &Limits,
) -> Result<Vec<QueryGraph>> {
    let mut b = Builder::new(graph, limits.clone());
    for q in pool.queries.values().filter(|q| q.decorations.is_empty()) {
        b.seed(q)?;
    }
    let before: BTreeSet<String> = b.pool.queries.keys().cloned().collect();
    b.combine_fixpoint()?;
    Ok(b.finish()
        .queries
        .into_iter()
        .filter(|(k, _)| !before.contains(k))
        .map(|(_, q)| q)
        .collect())
}

/// Full construction: layer 1, expansion to the hop limit, combination to
/// the edge limit, then decoration variants. Deterministic for fixed inputs.
pub fn synthesize(
    nlq: &str,
    entities: &[EntityId],
    relations: &[RelationId],
    graph: &KnowledgeGraph,
    limits: &Limits,
    decorations: bool,
) -> Result<CandidatePool> {
    let mut b = Builder::new(graph, limits.clone());
    if entities.is_empty() || relations.is_empty() {
        return Ok(b.finish());
    }
    let mut frontier = b.layer1(entities, relations)?;
    // Layer k holds k-edge structures, so expansion stops at max_hops edges;
    // anything wider comes from combination. Each stage has its own probe
    // budget: a truncated stage flags the pool but later stages still run.
    for _ in 1..limits.max_hops {
        if frontier.is_empty() {
            break;
        }
        frontier = b.expand(&frontier, relations)?;
    }
    b.combine_fixpoint()?;
    if decorations {
        b.decorate_pass(nlq)?;
    }
    Ok(b.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{load_graph, DEFAULT_ROW_CAP};
    use std::io::Cursor;

    fn graph(triples: &str) -> KnowledgeGraph {
        load_graph(
            Cursor::new(triples.trim().to_string()),
            None::<Cursor<String>>,
            None::<Cursor<String>>,
        )
        .unwrap()
    }

    fn chain_graph() -> KnowledgeGraph {
        graph("e1\tr.a.b\tn1\nn1\tr.b.c\tn2\ne2\tr.d.b\tn1")
    }

    fn ids(g: &KnowledgeGraph, entities: &[&str], relations: &[&str]) -> (Vec<EntityId>, Vec<RelationId>) {
        (
            entities.iter().map(|e| g.entity_by_key(e).unwrap()).collect(),
            relations.iter().map(|r| g.relation_by_name(r).unwrap()).collect(),
        )
    }

    #[test]
    fn layer1_keeps_only_valid_orientations() {
        let g = chain_graph();
        let (e, r) = ids(&g, &["e1"], &["r.a.b", "r.b.c"]);
        let queries = build_layer1(&e, &r, &g).unwrap();
        // e1 --r.a.b--> ?v0 is the only satisfiable single edge.
        assert_eq!(queries.len(), 1);
        assert_eq!(queries[0].edge_count(), 1);
    }

    #[test]
    fn expansion_adds_one_edge_and_both_answer_variants() {
        let g = chain_graph();
        let (e, r) = ids(&g, &["e1"], &["r.a.b", "r.b.c"]);
        let l1 = build_layer1(&e, &r, &g).unwrap();
        let l2 = expand_layer(&l1, &r, &g, &Limits::default()).unwrap();
        assert!(l2.iter().all(|q| q.edge_count() == 2));
        // Same two-edge structure, once per answer placement.
        let answers: BTreeSet<_> = l2.iter().map(|q| q.answer_var).collect();
        assert!(answers.len() >= 2, "{answers:?}");
        for q in &l2 {
            assert!(q.parent_key.is_some());
        }
    }

    #[test]
    fn expansion_respects_edge_and_hop_limits() {
        // A long chain: hops beyond the limit must not appear.
        let g = graph(
            "e1\tr.a.b\tn1\nn1\tr.a.b\tn2\nn2\tr.a.b\tn3\nn3\tr.a.b\tn4\nn4\tr.a.b\tn5",
        );
        let (e, r) = ids(&g, &["e1"], &["r.a.b"]);
        let limits = Limits {
            max_hops: 2,
            max_edges: 5,
            ..Limits::default()
        };
        let pool = synthesize("q", &e, &r, &g, &limits, false).unwrap();
        for q in pool.queries.values() {
            assert!(q.hop_depth() <= 2, "hop violation: {q:?}");
            assert!(q.edge_count() <= 5);
        }
    }

    #[test]
    fn combination_merges_at_shared_variable() {
        let g = chain_graph();
        let (e, r) = ids(&g, &["e1", "e2"], &["r.a.b", "r.b.c", "r.d.b"]);
        let pool = synthesize("q", &e, &r, &g, &Limits::default(), false).unwrap();
        // The two-constraint query (e1 -> v0 <- e2) must be in the pool.
        let has_merge = pool.queries.values().any(|q| {
            q.edge_count() == 2
                && q.entities().len() == 2
                && q.variables().len() == 1
        });
        assert!(has_merge);
        // Every derived query's parent is itself in the pool.
        for q in pool.queries.values() {
            if let Some(p) = &q.parent_key {
                assert!(pool.queries.contains_key(p), "dangling parent {p}");
            }
        }
    }

    #[test]
    fn pool_queries_all_reprobe_nonempty() {
        let g = chain_graph();
        let (e, r) = ids(&g, &["e1", "e2"], &["r.a.b", "r.b.c", "r.d.b"]);
        let pool = synthesize("q", &e, &r, &g, &Limits::default(), false).unwrap();
        assert!(!pool.is_empty());
        for q in pool.queries.values() {
            let rows = g
                .execute(q, ExecMode::Probe, DEFAULT_ROW_CAP)
                .unwrap();
            assert!(!rows.is_empty(), "empty pool query: {q:?}");
        }
    }

    #[test]
    fn synthesize_is_deterministic() {
        let g = chain_graph();
        let (e, r) = ids(&g, &["e1", "e2"], &["r.a.b", "r.b.c", "r.d.b"]);
        let a = synthesize("q", &e, &r, &g, &Limits::default(), true).unwrap();
        let b = synthesize("q", &e, &r, &g, &Limits::default(), true).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn no_entities_means_empty_pool() {
        let g = chain_graph();
        let (_, r) = ids(&g, &[], &["r.a.b"]);
        let pool = synthesize("q", &[], &r, &g, &Limits::default(), false).unwrap();
        assert!(pool.is_empty());
    }

    #[test]
    fn probe_budget_truncates_instead_of_hanging() {
        let g = chain_graph();
        let (e, r) = ids(&g, &["e1", "e2"], &["r.a.b", "r.b.c", "r.d.b"]);
        let limits = Limits {
            probe_budget: 2,
            ..Limits::default()
        };
        let pool = synthesize("q", &e, &r, &g, &limits, false).unwrap();
        assert!(pool.truncated);
    }

    #[test]
    fn decoration_pass_adds_filters_and_count() {
        let g = graph("e1\tr.has.score\t10\ne1\tr.has.score\t20");
        let (e, r) = ids(&g, &["e1"], &["r.has.score"]);
        let pool = synthesize(
            "how many scores are more than 15",
            &e,
            &r,
            &g,
            &Limits::default(),
            true,
        )
        .unwrap();
        let has_filter = pool
            .queries
            .values()
            .any(|q| q.decorations.iter().any(|d| matches!(d, Decoration::Filter(..))));
        let has_count = pool
            .queries
            .values()
            .any(|q| q.decorations.iter().any(|d| matches!(d, Decoration::Count(_))));
        let has_extremum = pool
            .queries
            .values()
            .any(|q| q.decorations.iter().any(|d| matches!(d, Decoration::ArgMax(_))));
        assert!(has_filter && has_count && has_extremum);
        // Decorated variants keep pointing at their undecorated parent.
        for q in pool.queries.values().filter(|q| !q.decorations.is_empty()) {
            let parent = q.parent_key.as_ref().unwrap();
            assert!(pool.queries[parent].decorations.is_empty());
        }
    }

    #[test]
    fn probe_log_is_sorted_and_deduplicated() {
        let g = chain_graph();
        let (e, r) = ids(&g, &["e1", "e2"], &["r.a.b", "r.b.c", "r.d.b"]);
        let pool = synthesize("q", &e, &r, &g, &Limits::default(), false).unwrap();
        let keys: Vec<&String> = pool.probe_log.iter().map(|p| &p.key).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(keys, sorted);
    }
}
