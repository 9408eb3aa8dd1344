//! Immutable in-memory triple store with label lookup and query execution.
//!
//! The graph is the single source of truth for probing and evaluating
//! candidate queries. It is never mutated after load and can be shared
//! freely across threads; the execution counter is the only mutable state.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{CmpOp, Decoration, QTerm, QueryGraph, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiteralKind {
    String,
    Number,
    Datetime,
    Boolean,
}

/// A typed literal. Equality and hashing go through (kind, lexical) so the
/// same lexical form is always one value; `numeric_value` exists for
/// filter/argmax comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Literal {
    pub kind: LiteralKind,
    pub lexical: String,
    pub numeric_value: Option<f64>,
}

impl Literal {
    /// Total parse: anything that is not a number, ISO date, or boolean
    /// stays a plain string literal.
    pub fn parse(lexical: &str) -> Literal {
        let s = lexical.trim();
        if s == "true" || s == "false" {
            return Literal {
                kind: LiteralKind::Boolean,
                lexical: s.to_string(),
                numeric_value: Some(if s == "true" { 1.0 } else { 0.0 }),
            };
        }
        if let Ok(n) = s.parse::<f64>() {
            if n.is_finite() {
                return Literal {
                    kind: LiteralKind::Number,
                    lexical: s.to_string(),
                    numeric_value: Some(n),
                };
            }
        }
        if let Some(epoch) = parse_iso_datetime(s) {
            return Literal {
                kind: LiteralKind::Datetime,
                lexical: s.to_string(),
                numeric_value: Some(epoch),
            };
        }
        Literal {
            kind: LiteralKind::String,
            lexical: s.to_string(),
            numeric_value: None,
        }
    }

    pub fn number(n: f64) -> Literal {
        let lexical = if n.fract() == 0.0 && n.abs() < 1e15 {
            format!("{}", n as i64)
        } else {
            format!("{n}")
        };
        Literal {
            kind: LiteralKind::Number,
            lexical,
            numeric_value: Some(n),
        }
    }

    pub fn string(s: &str) -> Literal {
        Literal {
            kind: LiteralKind::String,
            lexical: s.to_string(),
            numeric_value: None,
        }
    }
}

impl PartialEq for Literal {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.lexical == other.lexical
    }
}
impl Eq for Literal {}
impl std::hash::Hash for Literal {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.kind.hash(state);
        self.lexical.hash(state);
    }
}
impl PartialOrd for Literal {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Literal {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.kind, &self.lexical).cmp(&(other.kind, &other.lexical))
    }
}

/// Compare two literals the way filters do: numerically when both sides
/// carry a numeric value, lexicographically otherwise.
pub fn literal_cmp(a: &Literal, b: &Literal) -> std::cmp::Ordering {
    match (a.numeric_value, b.numeric_value) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal),
        _ => a.lexical.cmp(&b.lexical),
    }
}

/// A graph node: an interned entity or a literal value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Node {
    Entity(EntityId),
    Literal(Literal),
}

impl Node {
    pub fn as_entity(&self) -> Option<EntityId> {
        match self {
            Node::Entity(e) => Some(*e),
            Node::Literal(_) => None,
        }
    }
    pub fn as_literal(&self) -> Option<&Literal> {
        match self {
            Node::Literal(l) => Some(l),
            Node::Entity(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// Return as soon as one satisfying row is known to exist.
    Probe,
    /// Return all rows up to the row cap.
    Full,
}

pub const DEFAULT_ROW_CAP: usize = 10_000;

/// Execution result: an ordered set of rows over the query's variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingSet {
    pub variables: Vec<VarId>,
    pub rows: Vec<Vec<Node>>,
    pub truncated: bool,
}

impl BindingSet {
    pub fn empty() -> BindingSet {
        BindingSet {
            variables: Vec::new(),
            rows: Vec::new(),
            truncated: false,
        }
    }
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
    /// Distinct values of one variable, sorted.
    pub fn project(&self, var: VarId) -> Vec<Node> {
        let Some(idx) = self.variables.iter().position(|v| *v == var) else {
            return Vec::new();
        };
        let set: BTreeSet<Node> = self.rows.iter().map(|r| r[idx].clone()).collect();
        set.into_iter().collect()
    }
}

/// Immutable triple store with entity/relation interning and indices.
#[derive(Debug)]
pub struct KnowledgeGraph {
    triples: Vec<(EntityId, RelationId, Node)>,
    entity_keys: Vec<String>,
    entity_labels: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    aliases: Vec<(String, EntityId)>,
    relation_names: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    by_subject_pred: HashMap<(EntityId, RelationId), Vec<Node>>,
    by_object_pred: HashMap<(Node, RelationId), Vec<EntityId>>,
    by_pred: HashMap<RelationId, Vec<(EntityId, Node)>>,
    type_relation: Option<RelationId>,
    exec_counter: AtomicU64,
}

impl KnowledgeGraph {
    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }
    pub fn entity_count(&self) -> usize {
        self.entity_keys.len()
    }
    pub fn relation_count(&self) -> usize {
        self.relation_names.len()
    }
    pub fn triples(&self) -> &[(EntityId, RelationId, Node)] {
        &self.triples
    }

    pub fn entity_key(&self, id: EntityId) -> &str {
        &self.entity_keys[id.0 as usize]
    }
    pub fn label(&self, id: EntityId) -> &str {
        &self.entity_labels[id.0 as usize]
    }
    pub fn entity_by_key(&self, key: &str) -> Option<EntityId> {
        self.entity_index.get(key).copied()
    }
    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[id.0 as usize]
    }
    pub fn relation_by_name(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }
    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> + '_ {
        (0..self.relation_names.len() as u32).map(RelationId)
    }
    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entity_keys.len() as u32).map(EntityId)
    }
    /// Label and alias surfaces for the fallback entity matcher.
    pub fn surfaces(&self) -> Vec<(String, EntityId)> {
        let mut out: Vec<(String, EntityId)> = self
            .entity_ids()
            .map(|e| (self.label(e).to_lowercase(), e))
            .collect();
        out.extend(self.aliases.iter().cloned());
        out
    }

    pub fn type_relation(&self) -> Option<RelationId> {
        self.type_relation
    }
    pub fn set_type_relation(&mut self, name: &str) -> Option<RelationId> {
        self.type_relation = self.relation_by_name(name);
        self.type_relation
    }

    /// Snapshot of the execution counter (number of `execute` calls since
    /// the last reset).
    pub fn execution_count(&self) -> u64 {
        self.exec_counter.load(Ordering::SeqCst)
    }
    pub fn reset_execution_count(&self) {
        self.exec_counter.store(0, Ordering::SeqCst);
    }

    fn objects_of(&self, s: EntityId, p: RelationId) -> &[Node] {
        self.by_subject_pred
            .get(&(s, p))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
    fn subjects_of(&self, o: &Node, p: RelationId) -> &[EntityId] {
        self.by_object_pred
            .get(&(o.clone(), p))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
    fn pairs_of(&self, p: RelationId) -> &[(EntityId, Node)] {
        self.by_pred.get(&p).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Execute a query graph. Probe mode answers non-emptiness only; full
    /// mode returns all rows up to `row_cap`. Decorations are applied in
    /// order: triples, type constraints, filters, argmax/argmin, count.
    /// Each call increments the execution counter by exactly one.
    pub fn execute(&self, query: &QueryGraph, mode: ExecMode, row_cap: usize) -> Result<BindingSet> {
        self.exec_counter.fetch_add(1, Ordering::SeqCst);
        query.check_well_formed()?;

        // Type constraints against a graph without a configured instance-of
        // relation are a structural error, not an empty result.
        if self.type_relation.is_none()
            && query
                .decorations
                .iter()
                .any(|d| matches!(d, Decoration::Type(..)))
        {
            return Err(Error::MalformedQuery(
                "type constraint requires a configured instance-of relation".into(),
            ));
        }

        // Unknown ids cannot occur for interned queries; queries translated
        // from logic forms mark unresolvable items by an out-of-range id.
        for pat in &query.patterns {
            if pat.predicate.0 as usize >= self.relation_names.len() {
                return Ok(BindingSet::empty());
            }
            for term in [&pat.subject, &pat.object] {
                if let QTerm::Entity(e) = term {
                    if e.0 as usize >= self.entity_keys.len() {
                        return Ok(BindingSet::empty());
                    }
                }
            }
        }

        let vars = query.variables();
        let order = plan_pattern_order(query);
        let mut binding: HashMap<VarId, Node> = HashMap::new();
        let mut rows: BTreeSet<Vec<Node>> = BTreeSet::new();
        let mut truncated = false;

        // Extremal decorations need a numeric witness in probe mode.
        let extremal_vars: Vec<VarId> = query
            .decorations
            .iter()
            .filter_map(|d| match d {
                Decoration::ArgMax(v) | Decoration::ArgMin(v) => Some(*v),
                _ => None,
            })
            .collect();

        self.join(
            query,
            &order,
            0,
            &mut binding,
            &vars,
            &extremal_vars,
            mode,
            row_cap,
            &mut rows,
            &mut truncated,
        )?;

        let mut result = BindingSet {
            variables: vars.clone(),
            rows: rows.into_iter().collect(),
            truncated,
        };
        if mode == ExecMode::Probe {
            return Ok(result);
        }

        for deco in &query.decorations {
            match deco {
                Decoration::ArgMax(v) => apply_extremum(&mut result, *v, true),
                Decoration::ArgMin(v) => apply_extremum(&mut result, *v, false),
                _ => {}
            }
        }
        if query
            .decorations
            .iter()
            .any(|d| matches!(d, Decoration::Count(_)))
        {
            let v = query
                .decorations
                .iter()
                .find_map(|d| match d {
                    Decoration::Count(v) => Some(*v),
                    _ => None,
                })
                .unwrap();
            let n = result.project(v).len();
            result = BindingSet {
                variables: vec![v],
                rows: vec![vec![Node::Literal(Literal::number(n as f64))]],
                truncated: result.truncated,
            };
        }
        Ok(result)
    }

    #[allow(clippy::too_many_arguments)]
    fn join(
        &self,
        query: &QueryGraph,
        order: &[usize],
        depth: usize,
        binding: &mut HashMap<VarId, Node>,
        vars: &[VarId],
        extremal_vars: &[VarId],
        mode: ExecMode,
        row_cap: usize,
        rows: &mut BTreeSet<Vec<Node>>,
        truncated: &mut bool,
    ) -> Result<bool> {
        if depth == order.len() {
            if mode == ExecMode::Probe {
                for v in extremal_vars {
                    match binding.get(v) {
                        Some(Node::Literal(l)) if l.numeric_value.is_some() => {}
                        _ => return Ok(false),
                    }
                }
                rows.insert(vars.iter().map(|v| binding[v].clone()).collect());
                return Ok(true);
            }
            if rows.len() >= row_cap {
                *truncated = true;
                return Ok(true);
            }
            rows.insert(vars.iter().map(|v| binding[v].clone()).collect());
            return Ok(false);
        }

        let pat = &query.patterns[order[depth]];
        let sub = resolve(&pat.subject, binding);
        let obj = resolve(&pat.object, binding);

        let mut step = |b: &mut HashMap<VarId, Node>,
                        set_s: Option<(VarId, Node)>,
                        set_o: Option<(VarId, Node)>|
         -> Result<bool> {
            let mut assigned = Vec::new();
            for (v, n) in [set_s, set_o].into_iter().flatten() {
                if let Some(existing) = b.get(&v) {
                    if *existing != n {
                        return Ok(false);
                    }
                } else {
                    if !self.value_ok(query, v, &n) {
                        return Ok(false);
                    }
                    b.insert(v, n);
                    assigned.push(v);
                }
            }
            let done = self.join(
                query, order, depth + 1, b, vars, extremal_vars, mode, row_cap, rows, truncated,
            )?;
            for v in assigned {
                b.remove(&v);
            }
            Ok(done)
        };

        match (sub, obj) {
            (Some(Node::Entity(s)), Some(o)) => {
                if self.objects_of(s, pat.predicate).contains(&o) {
                    return step(binding, None, None);
                }
                Ok(false)
            }
            (Some(Node::Literal(_)), _) => Ok(false),
            (Some(Node::Entity(s)), None) => {
                let ov = pat.object.as_var().unwrap();
                for o in self.objects_of(s, pat.predicate).to_vec() {
                    if step(binding, None, Some((ov, o)))? && mode == ExecMode::Probe {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            (None, Some(o)) => {
                let sv = pat.subject.as_var().unwrap();
                for s in self.subjects_of(&o, pat.predicate).to_vec() {
                    if step(binding, Some((sv, Node::Entity(s))), None)? && mode == ExecMode::Probe {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            (None, None) => {
                let sv = pat.subject.as_var().unwrap();
                let ov = pat.object.as_var().unwrap();
                for (s, o) in self.pairs_of(pat.predicate).to_vec() {
                    if step(binding, Some((sv, Node::Entity(s))), Some((ov, o)))?
                        && mode == ExecMode::Probe
                    {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    /// Per-value constraints checked as soon as a variable is bound.
    fn value_ok(&self, query: &QueryGraph, var: VarId, node: &Node) -> bool {
        for deco in &query.decorations {
            match deco {
                Decoration::Filter(v, op, lit) if *v == var => {
                    let Node::Literal(l) = node else { return false };
                    let ord = literal_cmp(l, lit);
                    let pass = match op {
                        CmpOp::Lt => ord == std::cmp::Ordering::Less,
                        CmpOp::Gt => ord == std::cmp::Ordering::Greater,
                        CmpOp::Le => ord != std::cmp::Ordering::Greater,
                        CmpOp::Ge => ord != std::cmp::Ordering::Less,
                    };
                    if !pass {
                        return false;
                    }
                }
                Decoration::Type(v, class) if *v == var => {
                    let Some(type_rel) = self.type_relation else {
                        return false;
                    };
                    let Node::Entity(e) = node else { return false };
                    if !self
                        .objects_of(*e, type_rel)
                        .contains(&Node::Entity(*class))
                    {
                        return false;
                    }
                }
                _ => {}
            }
        }
        true
    }

}

fn resolve(term: &QTerm, binding: &HashMap<VarId, Node>) -> Option<Node> {
    match term {
        QTerm::Entity(e) => Some(Node::Entity(*e)),
        QTerm::Var(v) => binding.get(v).cloned(),
    }
}

/// Choose a join order: start from a pattern with a constant, then always
/// pick a pattern sharing a variable with what is already bound.
fn plan_pattern_order(query: &QueryGraph) -> Vec<usize> {
    let n = query.patterns.len();
    let mut order = Vec::with_capacity(n);
    let mut used = vec![false; n];
    let mut bound: BTreeSet<VarId> = BTreeSet::new();
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for (i, pat) in query.patterns.iter().enumerate() {
            if used[i] {
                continue;
            }
            let has_const = matches!(pat.subject, QTerm::Entity(_))
                || matches!(pat.object, QTerm::Entity(_));
            let touches = pat
                .subject
                .as_var()
                .map(|v| bound.contains(&v))
                .unwrap_or(false)
                || pat
                    .object
                    .as_var()
                    .map(|v| bound.contains(&v))
                    .unwrap_or(false);
            let anchored = touches || (order.is_empty() && has_const) || (!order.is_empty() && false);
            let score = (anchored, has_const);
            let better = match best {
                None => true,
                Some(b) => {
                    let bp = &query.patterns[b];
                    let b_const = matches!(bp.subject, QTerm::Entity(_))
                        || matches!(bp.object, QTerm::Entity(_));
                    let b_touches = bp
                        .subject
                        .as_var()
                        .map(|v| bound.contains(&v))
                        .unwrap_or(false)
                        || bp
                            .object
                            .as_var()
                            .map(|v| bound.contains(&v))
                            .unwrap_or(false);
                    let b_anchored =
                        b_touches || (order.is_empty() && b_const);
                    score > (b_anchored, b_const)
                }
            };
            if better {
                best = Some(i);
            }
        }
        let i = best.unwrap();
        used[i] = true;
        if let Some(v) = query.patterns[i].subject.as_var() {
            bound.insert(v);
        }
        if let Some(v) = query.patterns[i].object.as_var() {
            bound.insert(v);
        }
        order.push(i);
    }
    order
}

fn apply_extremum(result: &mut BindingSet, var: VarId, max: bool) {
    let Some(idx) = result.variables.iter().position(|v| *v == var) else {
        result.rows.clear();
        return;
    };
    let numeric: Vec<&Vec<Node>> = result
        .rows
        .iter()
        .filter(|r| matches!(&r[idx], Node::Literal(l) if l.numeric_value.is_some()))
        .collect();
    let Some(best) = numeric
        .iter()
        .map(|r| r[idx].as_literal().unwrap().numeric_value.unwrap())
        .fold(None::<f64>, |acc, x| {
            Some(match acc {
                None => x,
                Some(a) => {
                    if (max && x > a) || (!max && x < a) {
                        x
                    } else {
                        a
                    }
                }
            })
        })
    else {
        result.rows.clear();
        return;
    };
    result.rows.retain(
        |r| matches!(&r[idx], Node::Literal(l) if l.numeric_value == Some(best)),
    );
}

/// Days-based epoch value for ISO dates, seconds granularity when a time
/// part is present. Only used for ordering, so the unit just has to be
/// monotone.
fn parse_iso_datetime(s: &str) -> Option<f64> {
    let (date, time) = match s.split_once('T') {
        Some((d, t)) => (d, Some(t)),
        None => (s, None),
    };
    let parts: Vec<&str> = date.split('-').collect();
    if parts.len() != 3 {
        return None;
    }
    let y: i64 = parts[0].parse().ok()?;
    let m: u32 = parts[1].parse().ok()?;
    let d: u32 = parts[2].parse().ok()?;
    if !(1..=12).contains(&m) || !(1..=31).contains(&d) || parts[0].len() != 4 {
        return None;
    }
    // Howard Hinnant's civil-days algorithm.
    let y_adj = y - if m <= 2 { 1 } else { 0 };
    let era = if y_adj >= 0 { y_adj } else { y_adj - 399 } / 400;
    let yoe = (y_adj - era * 400) as i64;
    let mp = ((m as i64) + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    let days = era * 146097 + doe - 719468;
    let mut secs = days as f64 * 86400.0;
    if let Some(t) = time {
        let hms: Vec<&str> = t.trim_end_matches('Z').split(':').collect();
        if !hms.is_empty() {
            secs += hms[0].parse::<f64>().ok()? * 3600.0;
        }
        if hms.len() > 1 {
            secs += hms[1].parse::<f64>().ok()? * 60.0;
        }
        if hms.len() > 2 {
            secs += hms[2].parse::<f64>().ok()?;
        }
    }
    Some(secs)
}

/// Builder used by `load_graph`.
#[derive(Default)]
struct GraphBuilder {
    triples: Vec<(EntityId, RelationId, Node)>,
    seen: std::collections::HashSet<(EntityId, RelationId, Node)>,
    entity_keys: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_index: HashMap<String, RelationId>,
}

impl GraphBuilder {
    fn entity(&mut self, key: &str) -> EntityId {
        if let Some(id) = self.entity_index.get(key) {
            return *id;
        }
        let id = EntityId(self.entity_keys.len() as u32);
        self.entity_keys.push(key.to_string());
        self.entity_index.insert(key.to_string(), id);
        id
    }
    fn relation(&mut self, name: &str) -> RelationId {
        if let Some(id) = self.relation_index.get(name) {
            return *id;
        }
        let id = RelationId(self.relation_names.len() as u32);
        self.relation_names.push(name.to_string());
        self.relation_index.insert(name.to_string(), id);
        id
    }
    fn add(&mut self, s: EntityId, p: RelationId, o: Node) {
        if self.seen.insert((s, p, o.clone())) {
            self.triples.push((s, p, o));
        }
    }

    fn finish(
        self,
        labels: HashMap<String, String>,
        aliases: Vec<(String, String)>,
    ) -> KnowledgeGraph {
        let entity_labels = self
            .entity_keys
            .iter()
            .map(|k| labels.get(k).cloned().unwrap_or_else(|| k.clone()))
            .collect();
        let mut by_subject_pred: HashMap<(EntityId, RelationId), Vec<Node>> = HashMap::new();
        let mut by_object_pred: HashMap<(Node, RelationId), Vec<EntityId>> = HashMap::new();
        let mut by_pred: HashMap<RelationId, Vec<(EntityId, Node)>> = HashMap::new();
        for (s, p, o) in &self.triples {
            by_subject_pred.entry((*s, *p)).or_default().push(o.clone());
            by_object_pred.entry((o.clone(), *p)).or_default().push(*s);
            by_pred.entry(*p).or_default().push((*s, o.clone()));
        }
        let alias_pairs = aliases
            .into_iter()
            .filter_map(|(surface, key)| {
                self.entity_index
                    .get(&key)
                    .map(|id| (surface.to_lowercase(), *id))
            })
            .collect();
        KnowledgeGraph {
            triples: self.triples,
            entity_keys: self.entity_keys,
            entity_labels,
            entity_index: self.entity_index,
            aliases: alias_pairs,
            relation_names: self.relation_names,
            relation_index: self.relation_index,
            by_subject_pred,
            by_object_pred,
            by_pred,
            type_relation: None,
            exec_counter: AtomicU64::new(0),
        }
    }
}

fn parse_object(field: &str) -> ObjectToken {
    let f = field.trim();
    if let Some(stripped) = f.strip_prefix('"') {
        let inner = stripped.strip_suffix('"').unwrap_or(stripped);
        return ObjectToken::Literal(Literal::string(inner));
    }
    if f.parse::<f64>().map(|n| n.is_finite()).unwrap_or(false) {
        let mut lit = Literal::parse(f);
        lit.kind = LiteralKind::Number;
        return ObjectToken::Literal(lit);
    }
    if parse_iso_datetime(f).is_some() {
        return ObjectToken::Literal(Literal::parse(f));
    }
    ObjectToken::Entity(f.to_string())
}

enum ObjectToken {
    Entity(String),
    Literal(Literal),
}

fn split_triple_line(line: &str) -> Option<(String, String, String)> {
    // N-Triples subset: `<s> <p> <o> .` or `<s> <p> "lit" .`
    let trimmed = line.trim();
    if trimmed.starts_with('<') {
        let body = trimmed.trim_end_matches('.').trim();
        let mut fields = Vec::new();
        let mut rest = body;
        while !rest.is_empty() && fields.len() < 3 {
            rest = rest.trim_start();
            if let Some(r) = rest.strip_prefix('<') {
                let end = r.find('>')?;
                fields.push(r[..end].to_string());
                rest = &r[end + 1..];
            } else if rest.starts_with('"') {
                let end = rest[1..].find('"')? + 1;
                fields.push(rest[..=end].to_string());
                rest = &rest[end + 1..];
            } else {
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                fields.push(rest[..end].to_string());
                rest = &rest[end..];
            }
        }
        if fields.len() == 3 {
            return Some((fields[0].clone(), fields[1].clone(), fields[2].clone()));
        }
        return None;
    }
    // TSV primary; tolerate runs of spaces when no tab is present.
    let fields: Vec<&str> = if trimmed.contains('\t') {
        trimmed.split('\t').map(str::trim).collect()
    } else {
        trimmed.split_whitespace().collect()
    };
    if fields.len() == 3 {
        Some((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ))
    } else if fields.len() > 3 && trimmed.contains('\t') {
        None
    } else if fields.len() > 3 {
        // Spaces inside a quoted literal object.
        let obj = fields[2..].join(" ");
        Some((fields[0].to_string(), fields[1].to_string(), obj))
    } else {
        None
    }
}

/// Load a graph from a triple stream plus optional label and alias streams.
/// Duplicate triples are silently deduplicated; entities without an explicit
/// label get their id as label.
pub fn load_graph(
    triple_source: impl BufRead,
    label_source: Option<impl BufRead>,
    alias_source: Option<impl BufRead>,
) -> Result<KnowledgeGraph> {
    let mut builder = GraphBuilder::default();
    for (idx, line) in triple_source.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (s, p, o) = split_triple_line(&line).ok_or_else(|| Error::Load {
            line: lineno,
            msg: format!("expected 3 tab-separated fields, got: {line:?}"),
        })?;
        let sid = builder.entity(&s);
        let pid = builder.relation(&p);
        let obj = match parse_object(&o) {
            ObjectToken::Entity(key) => Node::Entity(builder.entity(&key)),
            ObjectToken::Literal(lit) => Node::Literal(lit),
        };
        builder.add(sid, pid, obj);
    }

    let mut labels = HashMap::new();
    if let Some(src) = label_source {
        for (idx, line) in src.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, label) = line.split_once('\t').ok_or_else(|| Error::Load {
                line: idx + 1,
                msg: "label line must be id<TAB>label".into(),
            })?;
            labels.insert(id.trim().to_string(), label.trim().to_string());
        }
    }
    let mut aliases = Vec::new();
    if let Some(src) = alias_source {
        for (idx, line) in src.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (surface, id) = line.split_once('\t').ok_or_else(|| Error::Load {
                line: idx + 1,
                msg: "alias line must be surface<TAB>id".into(),
            })?;
            aliases.push((surface.trim().to_string(), id.trim().to_string()));
        }
    }
    Ok(builder.finish(labels, aliases))
}
