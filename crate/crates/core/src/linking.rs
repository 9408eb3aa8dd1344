//! Candidate KB-item retrieval: entity links for a question plus
//! similarity-ranked candidate relations.
//!
//! Precision is deliberately not tuned here; the construction stage
//! disambiguates by keeping only combinations that execute non-empty.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntitySource {
    Dataset,
    LabelMatch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityCandidate {
    pub surface: String,
    pub node: EntityId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityCandidates {
    pub entries: Vec<EntityCandidate>,
    pub source: EntitySource,
    /// Provided links that referenced unknown nodes and were dropped.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationCandidates {
    pub entries: Vec<(RelationId, f64)>,
    pub k: usize,
}

/// Scores a query text against candidate texts. Implementations must return
/// finite scores; the local implementation is deterministic.
pub trait SimilarityProvider: Send + Sync {
    fn scores(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>>;
}

/// Relation names are segmented on dots and underscores before scoring.
pub fn segment_relation_name(name: &str) -> String {
    name.replace(['.', '_'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Character-trigram TF-IDF cosine similarity. Fully offline and
/// deterministic; document frequencies come from the candidate list itself.
#[derive(Debug, Default, Clone)]
pub struct LocalTrigramSimilarity;

fn trigrams(text: &str) -> HashMap<String, f64> {
    let padded = format!("  {}  ", text.to_lowercase());
    let chars: Vec<char> = padded.chars().collect();
    let mut counts: HashMap<String, f64> = HashMap::new();
    for w in chars.windows(3) {
        *counts.entry(w.iter().collect()).or_insert(0.0) += 1.0;
    }
    counts
}

fn cosine(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(k, va)| b.get(k).map(|vb| va * vb))
        .sum();
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl SimilarityProvider for LocalTrigramSimilarity {
    fn scores(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>> {
        let docs: Vec<HashMap<String, f64>> = candidates.iter().map(|c| trigrams(c)).collect();
        let n = candidates.len().max(1) as f64;
        let mut df: HashMap<&String, f64> = HashMap::new();
        for d in &docs {
            for k in d.keys() {
                *df.entry(k).or_insert(0.0) += 1.0;
            }
        }
        let idf = |k: &String| (1.0 + n / (1.0 + df.get(k).copied().unwrap_or(0.0))).ln();
        let weigh = |tf: &HashMap<String, f64>| -> HashMap<String, f64> {
            tf.iter().map(|(k, v)| (k.clone(), v * idf(k))).collect()
        };
        let q = weigh(&trigrams(query));
        Ok(docs.iter().map(|d| cosine(&q, &weigh(d))).collect())
    }
}

/// Dataset-provided links take precedence; otherwise fall back to a
/// longest-match scan of labels and aliases over the question.
pub fn link_entities(
    nlq: &str,
    provided: Option<&BTreeMap<String, String>>,
    graph: &KnowledgeGraph,
) -> EntityCandidates {
    if let Some(links) = provided {
        let mut entries = Vec::new();
        let mut warnings = Vec::new();
        let mut seen: HashSet<EntityId> = HashSet::new();
        for (surface, key) in links {
            if surface.is_empty() {
                continue;
            }
            match graph.entity_by_key(key) {
                Some(node) => {
                    if seen.insert(node) {
                        entries.push(EntityCandidate {
                            surface: surface.clone(),
                            node,
                        });
                    }
                }
                None => warnings.push(format!(
                    "provided link {surface:?} -> {key} references an unknown node; dropped"
                )),
            }
        }
        return EntityCandidates {
            entries,
            source: EntitySource::Dataset,
            warnings,
        };
    }

    // Longest-match scan at word boundaries, no overlaps.
    let question = nlq.to_lowercase();
    let mut surfaces = graph.surfaces();
    surfaces.retain(|(s, _)| !s.is_empty());
    surfaces.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
    let qbytes: Vec<char> = question.chars().collect();
    let mut claimed = vec![false; qbytes.len()];
    let mut entries = Vec::new();
    let mut seen: HashSet<EntityId> = HashSet::new();
    for (surface, node) in surfaces {
        let mut start = 0;
        while let Some(pos) = question[start..].find(&surface) {
            let at = start + pos;
            let end = at + surface.len();
            let char_at = question[..at].chars().count();
            let char_end = char_at + surface.chars().count();
            let boundary_before =
                at == 0 || !question[..at].chars().last().unwrap().is_alphanumeric();
            let boundary_after = end == question.len()
                || !question[end..].chars().next().unwrap().is_alphanumeric();
            let free = !claimed[char_at..char_end].iter().any(|c| *c);
            if boundary_before && boundary_after && free {
                claimed[char_at..char_end].iter_mut().for_each(|c| *c = true);
                if seen.insert(node) {
                    entries.push(EntityCandidate {
                        surface: surface.clone(),
                        node,
                    });
                }
            }
            start = end.max(at + 1);
            if start >= question.len() {
                break;
            }
        }
    }
    entries.sort_by(|a, b| a.surface.cmp(&b.surface));
    EntityCandidates {
        entries,
        source: EntitySource::LabelMatch,
        warnings: Vec::new(),
    }
}

/// Rank all graph relations by provider similarity between the question and
/// the segmented relation name; keep the top k. Ties break by relation name
/// ascending.
pub fn retrieve_relations(
    nlq: &str,
    graph: &KnowledgeGraph,
    k: usize,
    provider: &dyn SimilarityProvider,
) -> Result<RelationCandidates> {
    let mut relations: Vec<RelationId> = graph.relation_ids().collect();
    relations.sort_by(|a, b| graph.relation_name(*a).cmp(graph.relation_name(*b)));
    if k == 0 || relations.is_empty() {
        return Ok(RelationCandidates {
            entries: Vec::new(),
            k,
        });
    }
    let texts: Vec<String> = relations
        .iter()
        .map(|r| segment_relation_name(graph.relation_name(*r)))
        .collect();
    let scores = provider.scores(nlq, &texts)?;
    let mut ranked: Vec<(RelationId, f64)> = relations.into_iter().zip(scores).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| graph.relation_name(a.0).cmp(graph.relation_name(b.0)))
    });
    ranked.truncate(k);
    Ok(RelationCandidates { entries: ranked, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::load_graph;
    use std::io::Cursor;

    fn graph() -> crate::kg::KnowledgeGraph {
        load_graph(
            Cursor::new(
                "m.1\tfilm.director.films\tm.2\nm.2\tfilm.film.runtime\t120\nm.3\tmusic.artist.album\tm.4"
                    .to_string(),
            ),
            Some(Cursor::new(
                "m.1\tSofia Coppola\nm.2\tLost in Translation\nm.3\tBeck".to_string(),
            )),
            Some(Cursor::new("coppola\tm.1".to_string())),
        )
        .unwrap()
    }

    #[test]
    fn provided_links_take_precedence_and_warn_on_unknowns() {
        let g = graph();
        let mut links = BTreeMap::new();
        links.insert("sofia".to_string(), "m.1".to_string());
        links.insert("ghost".to_string(), "m.404".to_string());
        let out = link_entities("who directed it?", Some(&links), &g);
        assert_eq!(out.source, EntitySource::Dataset);
        assert_eq!(out.entries.len(), 1);
        assert_eq!(out.entries[0].node, g.entity_by_key("m.1").unwrap());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn fallback_matches_longest_surface_at_word_boundaries() {
        let g = graph();
        let out = link_entities(
            "what films did sofia coppola make with beck?",
            None,
            &g,
        );
        assert_eq!(out.source, EntitySource::LabelMatch);
        let nodes: Vec<&str> = out
            .entries
            .iter()
            .map(|e| g.entity_key(e.node))
            .collect();
        assert!(nodes.contains(&"m.1"));
        assert!(nodes.contains(&"m.3"));
        // "sofia coppola" claimed the span; the alias "coppola" must not
        // double-link inside it.
        assert_eq!(out.entries.len(), 2);
    }

    #[test]
    fn fallback_respects_word_boundaries() {
        let g = graph();
        let out = link_entities("becket wrote plays", None, &g);
        assert!(out.entries.is_empty());
    }

    #[test]
    fn relation_retrieval_ranks_by_similarity() {
        let g = graph();
        let ranked = retrieve_relations(
            "which films did the director make",
            &g,
            2,
            &LocalTrigramSimilarity,
        )
        .unwrap();
        assert_eq!(ranked.entries.len(), 2);
        assert_eq!(
            g.relation_name(ranked.entries[0].0),
            "film.director.films"
        );
        assert!(ranked.entries[0].1 >= ranked.entries[1].1);
    }

    #[test]
    fn relation_retrieval_k_zero_is_empty() {
        let g = graph();
        let ranked = retrieve_relations("anything", &g, 0, &LocalTrigramSimilarity).unwrap();
        assert!(ranked.entries.is_empty());
    }

    #[test]
    fn segmenting_splits_dots_and_underscores() {
        assert_eq!(
            segment_relation_name("digicams.digital_camera.viewfinder_type"),
            "digicams digital camera viewfinder type"
        );
    }
}
