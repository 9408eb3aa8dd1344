//! Rule-based query textification: render a query graph as a short
//! pseudo-natural-language string. The rendering feeds the re-ranker and
//! becomes the demonstration question in the prompt, so it must be a pure,
//! deterministic function of the query structure.

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::query::{CmpOp, Decoration, QTerm, QueryGraph, VarId};

/// Entity labels get light normalization so multiword labels read as
/// separate tokens: spaces around parentheses, collapsed whitespace.
pub fn normalize_label(label: &str) -> String {
    label
        .replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn last_segment(name: &str) -> &str {
    name.rsplit('.').next().unwrap_or(name)
}

pub(crate) fn second_to_last_segment(name: &str) -> &str {
    let mut it = name.rsplit('.');
    it.next();
    it.next().unwrap_or(name)
}

/// Deterministic rendering order: start from the entity nodes, then
/// repeatedly take a triple with an already-placed endpoint, preferring
/// triples that introduce a new variable (chain continuation) over triples
/// that only close back onto placed nodes. Ties break by relation name,
/// then by rendered endpoints. Entity-free queries fall back to a sorted
/// order.
pub fn render_order(q: &QueryGraph, g: &KnowledgeGraph) -> Vec<usize> {
    let term_key = |t: &QTerm| match t {
        QTerm::Entity(e) => format!("e:{}", g.entity_key(*e)),
        QTerm::Var(v) => v.to_string(),
    };
    let triple_key = |i: usize| {
        let p = &q.patterns[i];
        (
            g.relation_name(p.predicate).to_string(),
            term_key(&p.subject),
            term_key(&p.object),
        )
    };

    if q.entities().is_empty() {
        let mut order: Vec<usize> = (0..q.patterns.len()).collect();
        order.sort_by_key(|i| triple_key(*i));
        return order;
    }

    let mut placed_vars: std::collections::BTreeSet<VarId> = std::collections::BTreeSet::new();
    let mut remaining: Vec<usize> = (0..q.patterns.len()).collect();
    let mut order = Vec::with_capacity(q.patterns.len());
    while !remaining.is_empty() {
        let reachable = |i: &usize| {
            let p = &q.patterns[*i];
            let end_placed = |t: &QTerm| match t {
                QTerm::Entity(_) => true,
                QTerm::Var(v) => placed_vars.contains(v),
            };
            end_placed(&p.subject) || end_placed(&p.object)
        };
        let introduces_new = |i: &usize| {
            let p = &q.patterns[*i];
            [&p.subject, &p.object]
                .iter()
                .any(|t| matches!(t, QTerm::Var(v) if !placed_vars.contains(v)))
        };
        let pick = remaining
            .iter()
            .copied()
            .filter(reachable)
            .min_by_key(|i| (!introduces_new(i), triple_key(*i)))
            .unwrap_or_else(|| {
                // Disconnected remainder; take the smallest for totality.
                remaining.iter().copied().min_by_key(|i| triple_key(*i)).unwrap()
            });
        remaining.retain(|i| *i != pick);
        for t in [&q.patterns[pick].subject, &q.patterns[pick].object] {
            if let QTerm::Var(v) = t {
                placed_vars.insert(*v);
            }
        }
        order.push(pick);
    }
    order
}

/// Pseudo-name for a variable, read off the relation names around it: the
/// last dotted segment of the first relation (in rendering order) where the
/// variable is the object, otherwise the second-to-last segment of the
/// first relation where it is the subject.
pub fn variable_name(q: &QueryGraph, v: VarId, g: &KnowledgeGraph) -> Result<String> {
    let order = render_order(q, g);
    for &i in &order {
        if q.patterns[i].object == QTerm::Var(v) {
            return Ok(last_segment(g.relation_name(q.patterns[i].predicate)).to_string());
        }
    }
    for &i in &order {
        if q.patterns[i].subject == QTerm::Var(v) {
            return Ok(second_to_last_segment(g.relation_name(q.patterns[i].predicate)).to_string());
        }
    }
    Err(Error::MalformedQuery(format!(
        "variable {v} does not occur in the query"
    )))
}

fn term_text(q: &QueryGraph, t: &QTerm, g: &KnowledgeGraph) -> Result<String> {
    match t {
        QTerm::Entity(e) => Ok(normalize_label(g.label(*e))),
        QTerm::Var(v) => variable_name(q, *v, g),
    }
}

/// Render a query graph as a pseudo question: a "what {answer-name}" head
/// (or "how many" for counts), one "{subject} has {object}" segment per
/// triple, then one clause per decoration.
pub fn textify(q: &QueryGraph, g: &KnowledgeGraph) -> Result<String> {
    q.check_well_formed()?;
    let answer_name = variable_name(q, q.answer_var, g)?;
    let counted = q
        .decorations
        .iter()
        .any(|d| matches!(d, Decoration::Count(_)));
    let mut parts = vec![if counted {
        format!("how many {answer_name}")
    } else {
        format!("what {answer_name}")
    }];
    for i in render_order(q, g) {
        let pat = &q.patterns[i];
        let subject = term_text(q, &pat.subject, g)?;
        let object = match &pat.object {
            QTerm::Entity(e) => normalize_label(g.label(*e)),
            QTerm::Var(_) => last_segment(g.relation_name(pat.predicate)).to_string(),
        };
        parts.push(format!("{subject} has {object}"));
    }
    for deco in &q.decorations {
        match deco {
            Decoration::ArgMin(v) => {
                parts.push(format!("when {} is the smallest", variable_name(q, *v, g)?))
            }
            Decoration::ArgMax(v) => {
                parts.push(format!("when {} is the largest", variable_name(q, *v, g)?))
            }
            Decoration::Filter(v, op, lit) => {
                let name = variable_name(q, *v, g)?;
                let phrase = match op {
                    CmpOp::Le => "no more than",
                    CmpOp::Ge => "no less than",
                    CmpOp::Lt => "less than",
                    CmpOp::Gt => "more than",
                };
                parts.push(format!("when {name} {phrase} {}", lit.lexical));
            }
            Decoration::Count(_) => {}
            Decoration::Type(v, t) => parts.push(format!(
                "{} is a {}",
                variable_name(q, *v, g)?,
                normalize_label(g.label(*t))
            )),
        }
    }
    Ok(parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{load_graph, Literal};
    use crate::query::{Decoration, LayerTag, Pattern, QueryGraph};
    use std::io::Cursor;

    fn graph(triples: &str, labels: &str) -> crate::kg::KnowledgeGraph {
        load_graph(
            Cursor::new(triples.trim().to_string()),
            Some(Cursor::new(labels.trim().to_string())),
            None::<Cursor<String>>,
        )
        .unwrap()
    }

    #[test]
    fn normalizes_parenthesized_labels() {
        assert_eq!(normalize_label("jpeg (exif 2.21)"), "jpeg ( exif 2.21 )");
        assert_eq!(normalize_label("canon"), "canon");
        assert_eq!(normalize_label("a  (b)  c"), "a ( b ) c");
    }

    #[test]
    fn superlative_query_renders_exactly() {
        let g = graph(
            "u1\tmeasurement_unit.mass_unit.weightmass_in_kilograms\t5.5",
            "u1\tsome unit",
        );
        let rel = g
            .relation_by_name("measurement_unit.mass_unit.weightmass_in_kilograms")
            .unwrap();
        let v0 = VarId(0);
        let v1 = VarId(1);
        let q = QueryGraph {
            patterns: vec![Pattern::new(QTerm::Var(v0), rel, QTerm::Var(v1))],
            decorations: vec![Decoration::ArgMin(v1)],
            answer_var: v0,
            layer: LayerTag::Chain(1),
            parent_key: None,
        };
        assert_eq!(
            textify(&q, &g).unwrap(),
            "what mass_unit, mass_unit has weightmass_in_kilograms, when weightmass_in_kilograms is the smallest"
        );
    }

    #[test]
    fn filtered_query_renders_exactly() {
        let g = graph(
            "e1\tspaceflight.rocket_engine.designed_by\tm.0rd\ne1\tspaceflight.rocket_engine.isp_sea_level\t255.0",
            "m.0rd\trocketdyne\ne1\tsome engine",
        );
        let designed = g
            .relation_by_name("spaceflight.rocket_engine.designed_by")
            .unwrap();
        let isp = g
            .relation_by_name("spaceflight.rocket_engine.isp_sea_level")
            .unwrap();
        let rocketdyne = g.entity_by_key("m.0rd").unwrap();
        let v0 = VarId(0);
        let v1 = VarId(1);
        let q = QueryGraph {
            patterns: vec![
                Pattern::new(QTerm::Var(v0), designed, QTerm::Entity(rocketdyne)),
                Pattern::new(QTerm::Var(v0), isp, QTerm::Var(v1)),
            ],
            decorations: vec![Decoration::Filter(
                v1,
                CmpOp::Le,
                Literal::parse("260.0"),
            )],
            answer_var: v0,
            layer: LayerTag::Chain(2),
            parent_key: None,
        };
        assert_eq!(
            textify(&q, &g).unwrap(),
            "what rocket_engine, rocket_engine has rocketdyne, rocket_engine has isp_sea_level, when isp_sea_level no more than 260.0"
        );
    }

    #[test]
    fn combined_query_renders_exactly() {
        let g = graph(
            "m.03h4lt3\tdigicams.camera_compressed_format.cameras\tc1\n\
             c1\tdigicams.digital_camera.viewfinder_type\tm.01xrg1f\n\
             m.01bvx1\tdigicams.camera_sensor_manufacturer.cameras\tc1",
            "m.03h4lt3\tjpeg (exif 2.21)\nm.01bvx1\tcanon\nm.01xrg1f\tOptical\nc1\tcamera one",
        );
        let ccf = g
            .relation_by_name("digicams.camera_compressed_format.cameras")
            .unwrap();
        let vt = g
            .relation_by_name("digicams.digital_camera.viewfinder_type")
            .unwrap();
        let csm = g
            .relation_by_name("digicams.camera_sensor_manufacturer.cameras")
            .unwrap();
        let jpeg = g.entity_by_key("m.03h4lt3").unwrap();
        let canon = g.entity_by_key("m.01bvx1").unwrap();
        let v0 = VarId(0);
        let v1 = VarId(1);
        let q = QueryGraph {
            patterns: vec![
                Pattern::new(QTerm::Entity(jpeg), ccf, QTerm::Var(v0)),
                Pattern::new(QTerm::Var(v0), vt, QTerm::Var(v1)),
                Pattern::new(QTerm::Entity(canon), csm, QTerm::Var(v0)),
            ],
            decorations: vec![],
            answer_var: v1,
            layer: LayerTag::Chain(1),
            parent_key: None,
        };
        assert_eq!(
            textify(&q, &g).unwrap(),
            "what viewfinder_type, jpeg ( exif 2.21 ) has cameras, cameras has viewfinder_type, canon has cameras"
        );
        // Rendering must not depend on the stored triple order.
        let mut shuffled = q.clone();
        shuffled.patterns.reverse();
        assert_eq!(textify(&shuffled, &g).unwrap(), textify(&q, &g).unwrap());
    }

    #[test]
    fn count_and_type_templates() {
        let g = graph(
            "e1\tmusic.artist.album\ta1\na1\ttype\tc.album",
            "e1\tthe artist\na1\tfirst album\nc.album\tAlbum",
        );
        let rel = g.relation_by_name("music.artist.album").unwrap();
        let artist = g.entity_by_key("e1").unwrap();
        let class = g.entity_by_key("c.album").unwrap();
        let v0 = VarId(0);
        let q = QueryGraph {
            patterns: vec![Pattern::new(QTerm::Entity(artist), rel, QTerm::Var(v0))],
            decorations: vec![Decoration::Count(v0), Decoration::Type(v0, class)],
            answer_var: v0,
            layer: LayerTag::Chain(1),
            parent_key: None,
        };
        assert_eq!(
            textify(&q, &g).unwrap(),
            "how many album, the artist has album, album is a Album"
        );
    }

    #[test]
    fn variable_name_requires_presence() {
        let g = graph("e1\ta.b.c\tx1", "e1\tone");
        let rel = g.relation_by_name("a.b.c").unwrap();
        let q = QueryGraph::single(
            QTerm::Entity(g.entity_by_key("e1").unwrap()),
            rel,
            QTerm::Var(VarId(0)),
            VarId(0),
        );
        assert!(variable_name(&q, VarId(7), &g).is_err());
        assert_eq!(variable_name(&q, VarId(0), &g).unwrap(), "c");
    }
}
