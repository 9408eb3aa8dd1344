//! The PyQL-style logic form: a line-per-statement program that the model
//! emits and the engine parses, translates to an executable query graph
//! (plus a SPARQL-class rendering), and runs against the graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, ExecMode, KnowledgeGraph, Literal, Node, RelationId};
use crate::query::{CmpOp, Decoration, LayerTag, Pattern, QTerm, QueryGraph, VarId};
use crate::textify::normalize_label;

/// A term in a triplet: a variable or a bracketed entity. Entities keep the
/// surface they were written with; the node is resolved at parse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LfTerm {
    Var(VarId),
    Entity { surface: String, node: EntityId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Statement {
    Triplet(LfTerm, String, LfTerm),
    ArgMax(VarId),
    ArgMin(VarId),
    Filter(VarId, CmpOp, Literal),
    Type(VarId, LfTerm),
    Count(VarId),
    Answer(VarId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicForm {
    pub statements: Vec<Statement>,
}

impl LogicForm {
    pub fn answer_var(&self) -> Option<VarId> {
        self.statements.iter().find_map(|s| match s {
            Statement::Answer(v) | Statement::Count(v) => Some(*v),
            _ => None,
        })
    }

    fn triplet_vars(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        for s in &self.statements {
            if let Statement::Triplet(a, _, b) = s {
                for t in [a, b] {
                    if let LfTerm::Var(v) = t {
                        if !out.contains(v) {
                            out.push(*v);
                        }
                    }
                }
            }
        }
        out
    }

    /// Structural invariants: exactly one terminal, every referenced
    /// variable bound by a triplet.
    pub fn validate(&self) -> Result<()> {
        let terminals = self
            .statements
            .iter()
            .filter(|s| matches!(s, Statement::Answer(_) | Statement::Count(_)))
            .count();
        if terminals != 1 {
            return Err(Error::LogicForm(format!(
                "expected exactly one answer/count statement, found {terminals}"
            )));
        }
        let bound = self.triplet_vars();
        for s in &self.statements {
            let used = match s {
                Statement::ArgMax(v)
                | Statement::ArgMin(v)
                | Statement::Filter(v, _, _)
                | Statement::Type(v, _)
                | Statement::Count(v)
                | Statement::Answer(v) => Some(*v),
                Statement::Triplet(..) => None,
            };
            if let Some(v) = used {
                if !bound.contains(&v) {
                    return Err(Error::LogicForm(format!(
                        "variable {v} is not bound by any triplet"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Normalized key used for entity-map lookups: lowercase, collapsed
/// whitespace.
pub fn surface_key(s: &str) -> String {
    s.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

struct Parser<'a> {
    entity_map: BTreeMap<String, EntityId>,
    line: usize,
    text: &'a str,
}

impl<'a> Parser<'a> {
    fn err(&self, col: usize, msg: impl Into<String>) -> Error {
        Error::LogicFormSyntax {
            line: self.line,
            col,
            msg: msg.into(),
        }
    }

    fn parse_var(&self, raw: &str) -> Result<VarId> {
        let s = raw.trim();
        let body = s.strip_prefix('?').unwrap_or(s);
        let digits = body
            .strip_prefix('v')
            .ok_or_else(|| self.err(1, format!("expected a variable, got {s:?}")))?;
        let n: u16 = digits
            .parse()
            .map_err(|_| self.err(1, format!("expected a variable, got {s:?}")))?;
        Ok(VarId(n))
    }

    fn resolve_entity(&self, surface: &str) -> Result<LfTerm> {
        match self.entity_map.get(&surface_key(surface)) {
            Some(node) => Ok(LfTerm::Entity {
                surface: surface.trim().to_string(),
                node: *node,
            }),
            None => Err(Error::UnresolvedEntity(surface.trim().to_string())),
        }
    }

    fn parse_term(&self, raw: &str) -> Result<LfTerm> {
        let s = raw.trim();
        if let Some(inner) = s.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| self.err(1, format!("unterminated entity bracket in {s:?}")))?;
            return self.resolve_entity(inner);
        }
        Ok(LfTerm::Var(self.parse_var(s)?))
    }

    fn statement(&self, line: &str) -> Result<Statement> {
        let open = line
            .find('(')
            .ok_or_else(|| self.err(1, "expected a statement of the form name(args)"))?;
        let head = line[..open].trim();
        let close = line
            .rfind(')')
            .ok_or_else(|| self.err(line.len(), "missing closing parenthesis"))?;
        if close < open {
            return Err(self.err(close + 1, "mismatched parentheses"));
        }
        let args = split_args(&line[open + 1..close]);
        let arity = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(self.err(
                    open + 1,
                    format!("{head} takes {n} argument(s), got {}", args.len()),
                ))
            }
        };
        match head {
            "triplet" => {
                arity(3)?;
                Ok(Statement::Triplet(
                    self.parse_term(&args[0])?,
                    args[1].trim().to_string(),
                    self.parse_term(&args[2])?,
                ))
            }
            "argmax" => {
                arity(1)?;
                Ok(Statement::ArgMax(self.parse_var(&args[0])?))
            }
            "argmin" => {
                arity(1)?;
                Ok(Statement::ArgMin(self.parse_var(&args[0])?))
            }
            "filter" => {
                arity(3)?;
                let op = CmpOp::parse(args[1].trim()).ok_or_else(|| {
                    self.err(open + 1, format!("unknown operator {:?}", args[1].trim()))
                })?;
                Ok(Statement::Filter(
                    self.parse_var(&args[0])?,
                    op,
                    Literal::parse(args[2].trim()),
                ))
            }
            "type" => {
                arity(2)?;
                let class = args[1].trim();
                let class = class
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .unwrap_or(class);
                Ok(Statement::Type(
                    self.parse_var(&args[0])?,
                    self.resolve_entity(class)?,
                ))
            }
            "count" => {
                arity(1)?;
                Ok(Statement::Count(self.parse_var(&args[0])?))
            }
            "answer" => {
                arity(1)?;
                Ok(Statement::Answer(self.parse_var(&args[0])?))
            }
            other => Err(self.err(1, format!("unknown function {other:?}"))),
        }
    }

    fn parse(&mut self) -> Result<LogicForm> {
        let mut statements = Vec::new();
        for (idx, raw) in self.text.lines().enumerate() {
            self.line = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            statements.push(self.statement(line)?);
        }
        let lf = LogicForm { statements };
        lf.validate()?;
        Ok(lf)
    }
}

/// Split statement arguments at top-level commas; commas inside entity
/// brackets stay in place.
fn split_args(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for c in s.chars() {
        match c {
            '[' => {
                depth += 1;
                current.push(c);
            }
            ']' => {
                depth = depth.saturating_sub(1);
                current.push(c);
            }
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut current));
            }
            _ => current.push(c),
        }
    }
    if !current.trim().is_empty() || !out.is_empty() {
        out.push(current);
    }
    out
}

/// Parse program text. Bracketed entity surfaces resolve through the
/// question's entity map (case-insensitive, whitespace-normalized).
pub fn parse(text: &str, entity_map: &BTreeMap<String, EntityId>) -> Result<LogicForm> {
    let normalized: BTreeMap<String, EntityId> = entity_map
        .iter()
        .map(|(k, v)| (surface_key(k), *v))
        .collect();
    Parser {
        entity_map: normalized,
        line: 0,
        text,
    }
    .parse()
}

/// Print the program, one statement per line. `parse(print(lf))` is a
/// structural identity.
pub fn print(lf: &LogicForm) -> String {
    let term = |t: &LfTerm| match t {
        LfTerm::Var(v) => v.to_string(),
        LfTerm::Entity { surface, .. } => format!("[{surface}]"),
    };
    let mut lines = Vec::new();
    for s in &lf.statements {
        lines.push(match s {
            Statement::Triplet(a, p, b) => format!("triplet({}, {p}, {})", term(a), term(b)),
            Statement::ArgMax(v) => format!("argmax({v})"),
            Statement::ArgMin(v) => format!("argmin({v})"),
            Statement::Filter(v, op, lit) => {
                format!("filter({v}, {}, {})", op.symbol(), lit.lexical)
            }
            Statement::Type(v, t) => format!("type({v}, {})", term(t)),
            Statement::Count(v) => format!("count({v})"),
            Statement::Answer(v) => format!("answer({v})"),
        });
    }
    lines.join("\n")
}

/// Build a logic form from a pool query. Entities render by normalized
/// label, matching what the prompt's entity list shows.
pub fn from_query_graph(q: &QueryGraph, g: &KnowledgeGraph) -> LogicForm {
    let term = |t: &QTerm| match t {
        QTerm::Var(v) => LfTerm::Var(*v),
        QTerm::Entity(e) => LfTerm::Entity {
            surface: normalize_label(g.label(*e)),
            node: *e,
        },
    };
    let mut statements = Vec::new();
    // Emit triplets in the same deterministic order textification uses, so
    // the program matches its pseudo question clause by clause and does not
    // depend on how the query was assembled.
    for i in crate::textify::render_order(q, g) {
        let p = &q.patterns[i];
        statements.push(Statement::Triplet(
            term(&p.subject),
            g.relation_name(p.predicate).to_string(),
            term(&p.object),
        ));
    }
    let mut count_var = None;
    for d in &q.decorations {
        statements.push(match d {
            Decoration::ArgMax(v) => Statement::ArgMax(*v),
            Decoration::ArgMin(v) => Statement::ArgMin(*v),
            Decoration::Filter(v, op, lit) => Statement::Filter(*v, *op, lit.clone()),
            Decoration::Type(v, t) => Statement::Type(
                *v,
                LfTerm::Entity {
                    surface: normalize_label(g.label(*t)),
                    node: *t,
                },
            ),
            Decoration::Count(v) => {
                count_var = Some(*v);
                continue;
            }
        });
    }
    statements.push(match count_var {
        Some(v) => Statement::Count(v),
        None => Statement::Answer(q.answer_var),
    });
    LogicForm { statements }
}

/// Translate to an executable query graph plus a SPARQL-class rendering.
/// Relation names unknown to the graph map to an out-of-range id, which
/// executes to the empty set rather than erroring.
pub fn to_executable(lf: &LogicForm, g: &KnowledgeGraph) -> Result<(QueryGraph, String)> {
    lf.validate()?;
    for v in lf.triplet_vars() {
        let has_max = lf
            .statements
            .iter()
            .any(|s| matches!(s, Statement::ArgMax(u) if *u == v));
        let has_min = lf
            .statements
            .iter()
            .any(|s| matches!(s, Statement::ArgMin(u) if *u == v));
        if has_max && has_min {
            return Err(Error::LogicForm(format!(
                "argmax and argmin both applied to {v}"
            )));
        }
    }
    let qterm = |t: &LfTerm| match t {
        LfTerm::Var(v) => QTerm::Var(*v),
        LfTerm::Entity { node, .. } => QTerm::Entity(*node),
    };
    let mut patterns = Vec::new();
    let mut decorations = Vec::new();
    let mut answer = None;
    for s in &lf.statements {
        match s {
            Statement::Triplet(a, p, b) => {
                let rel = g
                    .relation_by_name(p)
                    .unwrap_or(RelationId(g.relation_count() as u32 + u16::MAX as u32));
                patterns.push(Pattern::new(qterm(a), rel, qterm(b)));
            }
            Statement::ArgMax(v) => decorations.push(Decoration::ArgMax(*v)),
            Statement::ArgMin(v) => decorations.push(Decoration::ArgMin(*v)),
            Statement::Filter(v, op, lit) => {
                decorations.push(Decoration::Filter(*v, *op, lit.clone()))
            }
            Statement::Type(v, t) => {
                if let LfTerm::Entity { node, .. } = t {
                    decorations.push(Decoration::Type(*v, *node));
                }
            }
            Statement::Count(v) => {
                decorations.push(Decoration::Count(*v));
                answer = Some(*v);
            }
            Statement::Answer(v) => answer = Some(*v),
        }
    }
    let query = QueryGraph {
        patterns,
        decorations,
        answer_var: answer.expect("validate guarantees a terminal"),
        layer: LayerTag::Chain(0),
        parent_key: None,
    };
    let sparql = render_sparql(lf, g);
    Ok((query, sparql))
}

fn render_sparql(lf: &LogicForm, g: &KnowledgeGraph) -> String {
    let answer = lf.answer_var().expect("validated");
    let counted = lf
        .statements
        .iter()
        .any(|s| matches!(s, Statement::Count(_)));
    let term = |t: &LfTerm| match t {
        LfTerm::Var(v) => v.to_string(),
        LfTerm::Entity { node, .. } => format!(":{}", g.entity_key(*node)),
    };
    let mut out = if counted {
        format!("SELECT COUNT(DISTINCT {answer}) WHERE {{\n")
    } else {
        format!("SELECT DISTINCT {answer} WHERE {{\n")
    };
    for s in &lf.statements {
        match s {
            Statement::Triplet(a, p, b) => {
                out.push_str(&format!("{} :{p} {} .\n", term(a), term(b)));
            }
            Statement::Type(v, t) => {
                let rel = g
                    .type_relation()
                    .map(|r| g.relation_name(r).to_string())
                    .unwrap_or_else(|| "type".to_string());
                out.push_str(&format!("{v} :{rel} {} .\n", term(t)));
            }
            Statement::Filter(v, op, lit) => {
                out.push_str(&format!("FILTER({v} {} {})\n", op.symbol(), lit.lexical));
            }
            _ => {}
        }
    }
    out.push('}');
    for s in &lf.statements {
        match s {
            Statement::ArgMax(v) => out.push_str(&format!("\nORDER BY DESC({v}) LIMIT 1")),
            Statement::ArgMin(v) => out.push_str(&format!("\nORDER BY {v} LIMIT 1")),
            _ => {}
        }
    }
    out
}

/// One answer value: a graph entity (id + label) or a literal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerValue {
    Entity { id: String, label: String },
    Literal(Literal),
}

impl std::fmt::Display for AnswerValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnswerValue::Entity { id, label } => write!(f, "{id}: {label}"),
            AnswerValue::Literal(l) => write!(f, "{}", l.lexical),
        }
    }
}

/// Execute a logic form: full-mode execution projected to the answer
/// variable, values sorted and deduplicated.
pub fn execute_lf(
    lf: &LogicForm,
    g: &KnowledgeGraph,
    row_cap: usize,
) -> Result<Vec<AnswerValue>> {
    let (query, _) = to_executable(lf, g)?;
    let result = g.execute(&query, ExecMode::Full, row_cap)?;
    let mut out: Vec<AnswerValue> = result
        .project(query.answer_var)
        .into_iter()
        .map(|n| match n {
            Node::Entity(e) => AnswerValue::Entity {
                id: g.entity_key(e).to_string(),
                label: g.label(e).to_string(),
            },
            Node::Literal(l) => AnswerValue::Literal(l),
        })
        .collect();
    out.sort();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::load_graph;
    use std::io::Cursor;

    fn graph() -> KnowledgeGraph {
        let triples = "\
m.03h4lt3\tdigicams.camera_compressed_format.cameras\tm.c1
m.03h4lt3\tdigicams.camera_compressed_format.cameras\tm.c2
m.c1\tdigicams.digital_camera.viewfinder_type\tm.01xrg1f
m.c2\tdigicams.digital_camera.viewfinder_type\tm.01xrg6z
m.01bvx1\tdigicams.camera_sensor_manufacturer.cameras\tm.c1
m.01bvx1\tdigicams.camera_sensor_manufacturer.cameras\tm.c2
m.e1\tr.engine.isp_sea_level\t260.0
m.e1\tr.engine.isp_sea_level\t240.5";
        let labels = "\
m.03h4lt3\tjpeg (exif 2.21)
m.01bvx1\tcanon
m.01xrg1f\tOptical
m.01xrg6z\tTTL
m.c1\tcamera one
m.c2\tcamera two
m.e1\tengine one";
        load_graph(
            Cursor::new(triples.to_string()),
            Some(Cursor::new(labels.to_string())),
            None::<Cursor<String>>,
        )
        .unwrap()
    }

    fn entity_map(g: &KnowledgeGraph) -> BTreeMap<String, EntityId> {
        g.entity_ids()
            .map(|e| (normalize_label(g.label(e)), e))
            .collect()
    }

    #[test]
    fn parse_print_round_trip_is_identity() {
        let g = graph();
        let text = "\
triplet([jpeg ( exif 2.21 )], digicams.camera_compressed_format.cameras, ?v0)
triplet(?v0, digicams.digital_camera.viewfinder_type, ?v1)
triplet([canon], digicams.camera_sensor_manufacturer.cameras, ?v0)
answer(?v1)";
        let map = entity_map(&g);
        let lf = parse(text, &map).unwrap();
        assert_eq!(print(&lf), text);
        assert_eq!(parse(&print(&lf), &map).unwrap(), lf);
    }

    #[test]
    fn bare_variables_normalize_on_print() {
        let g = graph();
        let lf = parse(
            "triplet([canon], digicams.camera_sensor_manufacturer.cameras, v0)\nanswer(v0)",
            &entity_map(&g),
        )
        .unwrap();
        assert!(print(&lf).contains("?v0"));
    }

    #[test]
    fn exactly_one_terminal_is_required() {
        let g = graph();
        let map = entity_map(&g);
        let none = "triplet([canon], digicams.camera_sensor_manufacturer.cameras, ?v0)";
        assert!(matches!(parse(none, &map), Err(Error::LogicForm(_))));
        let two = format!("{none}\nanswer(?v0)\ncount(?v0)");
        assert!(matches!(parse(&two, &map), Err(Error::LogicForm(_))));
    }

    #[test]
    fn modifier_variables_must_be_bound() {
        let g = graph();
        let text = "triplet([canon], digicams.camera_sensor_manufacturer.cameras, ?v0)\nargmax(?v3)\nanswer(?v0)";
        assert!(matches!(parse(text, &entity_map(&g)), Err(Error::LogicForm(_))));
    }

    #[test]
    fn unknown_entities_and_functions_report_position() {
        let g = graph();
        let map = entity_map(&g);
        let err = parse("triplet([nikon], r.x, ?v0)\nanswer(?v0)", &map).unwrap_err();
        assert!(matches!(err, Error::UnresolvedEntity(s) if s == "nikon"));
        let err = parse(
            "triplet([canon], digicams.camera_sensor_manufacturer.cameras, ?v0)\nexplain(?v0)",
            &map,
        )
        .unwrap_err();
        assert!(matches!(err, Error::LogicFormSyntax { line: 2, .. }));
    }

    #[test]
    fn filter_and_superlative_parse_and_print() {
        let g = graph();
        let text = "\
triplet([engine one], r.engine.isp_sea_level, ?v0)
filter(?v0, <=, 260.0)
argmin(?v0)
answer(?v0)";
        let lf = parse(text, &entity_map(&g)).unwrap();
        assert_eq!(print(&lf), text);
    }

    #[test]
    fn execute_lf_matches_query_graph_execution() {
        let g = graph();
        let text = "\
triplet([jpeg ( exif 2.21 )], digicams.camera_compressed_format.cameras, ?v0)
triplet(?v0, digicams.digital_camera.viewfinder_type, ?v1)
triplet([canon], digicams.camera_sensor_manufacturer.cameras, ?v0)
answer(?v1)";
        let lf = parse(text, &entity_map(&g)).unwrap();
        let answers = execute_lf(&lf, &g, 10_000).unwrap();
        let labels: Vec<&str> = answers
            .iter()
            .map(|a| match a {
                AnswerValue::Entity { label, .. } => label.as_str(),
                AnswerValue::Literal(l) => l.lexical.as_str(),
            })
            .collect();
        assert_eq!(labels, ["Optical", "TTL"]);
        // to_executable executes to the same projection.
        let (q, _) = to_executable(&lf, &g).unwrap();
        let direct = g.execute(&q, ExecMode::Full, 10_000).unwrap();
        assert_eq!(direct.project(q.answer_var).len(), 2);
    }

    #[test]
    fn count_terminal_counts_rows() {
        let g = graph();
        let text = "\
triplet([canon], digicams.camera_sensor_manufacturer.cameras, ?v0)
count(?v0)";
        let lf = parse(text, &entity_map(&g)).unwrap();
        let answers = execute_lf(&lf, &g, 10_000).unwrap();
        assert_eq!(answers.len(), 1);
        assert!(matches!(&answers[0], AnswerValue::Literal(l) if l.numeric_value == Some(2.0)));
    }

    #[test]
    fn unknown_relations_execute_to_the_empty_set() {
        let g = graph();
        let lf = parse(
            "triplet([canon], digicams.no_such_relation, ?v0)\nanswer(?v0)",
            &entity_map(&g),
        )
        .unwrap();
        assert!(execute_lf(&lf, &g, 10_000).unwrap().is_empty());
    }

    #[test]
    fn conflicting_superlatives_are_rejected() {
        let g = graph();
        let text = "\
triplet([engine one], r.engine.isp_sea_level, ?v0)
argmax(?v0)
argmin(?v0)
answer(?v0)";
        let lf = parse(text, &entity_map(&g)).unwrap();
        assert!(to_executable(&lf, &g).is_err());
    }

    #[test]
    fn sparql_rendering_matches_expected_shape() {
        let g = graph();
        let text = "\
triplet([engine one], r.engine.isp_sea_level, ?v0)
filter(?v0, <=, 260.0)
argmin(?v0)
answer(?v0)";
        let lf = parse(text, &entity_map(&g)).unwrap();
        let (_, sparql) = to_executable(&lf, &g).unwrap();
        assert_eq!(
            sparql,
            "SELECT DISTINCT ?v0 WHERE {\n:m.e1 :r.engine.isp_sea_level ?v0 .\nFILTER(?v0 <= 260.0)\n}\nORDER BY ?v0 LIMIT 1"
        );
    }

    #[test]
    fn from_query_graph_round_trips_through_parse() {
        let g = graph();
        let e = g.entity_by_key("m.01bvx1").unwrap();
        let p = g
            .relation_by_name("digicams.camera_sensor_manufacturer.cameras")
            .unwrap();
        let q = QueryGraph::single(QTerm::Entity(e), p, QTerm::Var(VarId(0)), VarId(0));
        let lf = from_query_graph(&q, &g);
        let reparsed = parse(&print(&lf), &entity_map(&g)).unwrap();
        assert_eq!(reparsed, lf);
    }
}
