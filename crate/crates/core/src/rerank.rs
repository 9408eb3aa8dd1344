//! Candidate re-ranking: score pseudo questions against the real question,
//! keep the top n per parent group (hierarchical ranking), and pick the
//! demonstrations that go into the prompt.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::construct::CandidatePool;
use crate::kg::KnowledgeGraph;
use crate::logicform;
use crate::query::QueryGraph;
use crate::textify::textify;

/// Scores candidate texts against the question. Local implementation is
/// deterministic; remote implementations live in the providers module.
pub trait RerankScorer: Send + Sync {
    fn score(&self, nlq: &str, candidates: &[String]) -> Result<Vec<f64>>;
}

/// Question tokens: lowercase, split on underscores and non-alphanumerics,
/// but decimal numbers like "2.21" stay single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, c) in chars.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || (*c == '.'
                && i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_ascii_digit()
                && chars[i + 1].is_ascii_digit());
        if keep {
            current.push(*c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut map = BTreeMap::new();
    for t in tokens {
        *map.entry(t.as_str()).or_insert(0) += 1;
    }
    map
}

/// Multiset token F1 between two texts: 2·overlap / (|A| + |B|).
pub fn token_f1(a: &str, b: &str) -> f64 {
    let ta = tokenize(a);
    let tb = tokenize(b);
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let ca = counts(&ta);
    let cb = counts(&tb);
    let overlap: usize = ca
        .iter()
        .map(|(t, n)| n.min(cb.get(t).unwrap_or(&0)))
        .sum();
    2.0 * overlap as f64 / (ta.len() + tb.len()) as f64
}

/// Lexical scorer: token F1 plus a small bonus for covering the pseudo
/// question's head name (the answer-variable name right after "what" /
/// "how many"), which is what the question most directly asks for.
#[derive(Debug, Default, Clone)]
pub struct LocalLexicalScorer;

const HEAD_BONUS: f64 = 0.1;

fn head_name(pseudo: &str) -> Option<String> {
    let head = pseudo.split(',').next()?.trim();
    let name = head
        .strip_prefix("what ")
        .or_else(|| head.strip_prefix("how many "))?;
    Some(name.trim().to_string())
}

impl RerankScorer for LocalLexicalScorer {
    fn score(&self, nlq: &str, candidates: &[String]) -> Result<Vec<f64>> {
        let question_tokens = tokenize(nlq);
        Ok(candidates
            .iter()
            .map(|pseudo| {
                let mut s = token_f1(nlq, pseudo);
                if let Some(head) = head_name(pseudo) {
                    let subs = tokenize(&head);
                    if !subs.is_empty() {
                        let covered = subs
                            .iter()
                            .filter(|t| question_tokens.contains(t))
                            .count();
                        s += HEAD_BONUS * covered as f64 / subs.len() as f64;
                    }
                }
                s
            })
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedEntry {
    pub key: String,
    pub query: QueryGraph,
    pub pseudo_nlq: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedCandidates {
    /// Non-increasing by score; ties break by canonical key ascending.
    pub entries: Vec<RankedEntry>,
    pub per_parent_kept: usize,
}

/// The text the scorer compares against the question: the pseudo question
/// plus the type names of relations on entity-anchored triples. Textify
/// renders those triples with the entity label, so without this an
/// entity-anchored edge can never match its relation's mention in the
/// question, and wider structures that repeat the relation through a
/// variable edge would outscore the anchored one.
fn scoring_text(pseudo: &str, q: &QueryGraph, graph: &KnowledgeGraph) -> String {
    let mut extra: Vec<&str> = q
        .patterns
        .iter()
        .filter(|p| p.subject.as_entity().is_some() || p.object.as_entity().is_some())
        .map(|p| crate::textify::second_to_last_segment(graph.relation_name(p.predicate)))
        .collect();
    extra.sort_unstable();
    extra.dedup();
    if extra.is_empty() {
        pseudo.to_string()
    } else {
        format!("{pseudo}, {}", extra.join(", "))
    }
}

/// Hierarchical ranking: group candidates by parent, keep the n best per
/// group, return the union sorted by score. Parentless queries form the
/// "root" group.
pub fn hierarchical_rank(
    pool: &CandidatePool,
    nlq: &str,
    scorer: &dyn RerankScorer,
    n: usize,
    graph: &KnowledgeGraph,
) -> Result<RankedCandidates> {
    let mut keys = Vec::new();
    let mut texts = Vec::new();
    let mut scorables = Vec::new();
    for (key, q) in &pool.queries {
        keys.push(key.clone());
        let pseudo = textify(q, graph)?;
        scorables.push(scoring_text(&pseudo, q, graph));
        texts.push(pseudo);
    }
    let scores = scorer.score(nlq, &scorables)?;

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        let parent = pool
            .queries
            .get(key)
            .and_then(|q| q.parent_key.clone())
            .unwrap_or_else(|| "root".to_string());
        groups.entry(parent).or_default().push(i);
    }

    let mut kept = Vec::new();
    for members in groups.values() {
        let mut members = members.clone();
        members.sort_by(|a, b| {
            scores[*b]
                .partial_cmp(&scores[*a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| keys[*a].cmp(&keys[*b]))
        });
        members.truncate(n);
        kept.extend(members);
    }
    kept.sort_by(|a, b| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| keys[*a].cmp(&keys[*b]))
    });
    kept.dedup();

    let entries = kept
        .into_iter()
        .map(|i| RankedEntry {
            key: keys[i].clone(),
            query: pool.queries[&keys[i]].clone(),
            pseudo_nlq: texts[i].clone(),
            score: scores[i],
        })
        .collect();
    Ok(RankedCandidates {
        entries,
        per_parent_kept: n,
    })
}

/// An in-context exemplar: a pseudo question paired with its program text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub pseudo_nlq: String,
    pub logic_form_text: String,
}

/// An annotated training example for retrieval-augmented demonstration
/// selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingExample {
    pub question: String,
    pub logic_form: String,
}

/// Pick the prompt demonstrations: the top m ranked candidates, ordered
/// ascending by score so the best exemplar sits nearest the question. When
/// a training pool is given, mix the top ⌈m/2⌉ retrieved examples with the
/// top ⌊m/2⌋ synthetic ones, deduplicating by program text.
pub fn select_demonstrations(
    ranked: &RankedCandidates,
    m: usize,
    training_pool: Option<&[TrainingExample]>,
    scorer: &dyn RerankScorer,
    nlq: &str,
    graph: &KnowledgeGraph,
) -> Result<Vec<Demonstration>> {
    let synthetic = |take: usize| -> Vec<(f64, Demonstration)> {
        ranked
            .entries
            .iter()
            .take(take)
            .map(|e| {
                let lf = logicform::from_query_graph(&e.query, graph);
                (
                    e.score,
                    Demonstration {
                        pseudo_nlq: e.pseudo_nlq.clone(),
                        logic_form_text: logicform::print(&lf),
                    },
                )
            })
            .collect()
    };

    let mut picked: Vec<(f64, Demonstration)> = match training_pool {
        None => synthetic(m),
        Some(pool) => {
            let texts: Vec<String> = pool.iter().map(|t| t.question.clone()).collect();
            let scores = scorer.score(nlq, &texts)?;
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.sort_by(|a, b| {
                scores[*b]
                    .partial_cmp(&scores[*a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| texts[*a].cmp(&texts[*b]))
            });
            let mut out: Vec<(f64, Demonstration)> = order
                .into_iter()
                .take(m.div_ceil(2))
                .map(|i| {
                    (
                        scores[i],
                        Demonstration {
                            pseudo_nlq: pool[i].question.clone(),
                            logic_form_text: pool[i].logic_form.clone(),
                        },
                    )
                })
                .collect();
            out.extend(synthetic(m / 2));
            out
        }
    };

    // Dedupe by program text, keeping the higher-scored copy.
    picked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.logic_form_text.cmp(&b.1.logic_form_text))
    });
    let mut seen = std::collections::BTreeSet::new();
    picked.retain(|(_, d)| seen.insert(d.logic_form_text.clone()));

    // Ascending by score: best demonstration last, nearest the question.
    picked.reverse();
    Ok(picked.into_iter().map(|(_, d)| d).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::load_graph;
    use crate::query::{QTerm, QueryGraph, VarId};
    use std::io::Cursor;

    fn graph() -> KnowledgeGraph {
        load_graph(
            Cursor::new("e1\tr.has.score\t10\ne1\tr.has.score\t20\ne2\tr.has.rank\t1".to_string()),
            None::<Cursor<String>>,
            None::<Cursor<String>>,
        )
        .unwrap()
    }

    #[test]
    fn tokenize_keeps_decimals_and_splits_the_rest() {
        assert_eq!(
            tokenize("jpeg (exif 2.21) has_cameras"),
            ["jpeg", "exif", "2.21", "has", "cameras"]
        );
        assert_eq!(tokenize("ends with 3."), ["ends", "with", "3"]);
    }

    #[test]
    fn token_f1_hand_values() {
        assert_eq!(token_f1("a b c", "a b d"), 2.0 * 2.0 / 6.0);
        assert_eq!(token_f1("same text", "same text"), 1.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("something", ""), 0.0);
        // Multiset: repeated tokens only count as often as they co-occur.
        assert_eq!(token_f1("a a", "a"), 2.0 * 1.0 / 3.0);
    }

    #[test]
    fn head_bonus_rewards_asking_for_the_same_thing() {
        let scorer = LocalLexicalScorer;
        let scores = scorer
            .score(
                "what score does e1 have",
                &["what score, e1 has score".to_string(), "what rank, e2 has rank".to_string()],
            )
            .unwrap();
        assert!(scores[0] > scores[1]);
    }

    fn pool_with_parents(g: &KnowledgeGraph) -> CandidatePool {
        let score_rel = g.relation_by_name("r.has.score").unwrap();
        let rank_rel = g.relation_by_name("r.has.rank").unwrap();
        let e1 = g.entity_by_key("e1").unwrap();
        let e2 = g.entity_by_key("e2").unwrap();
        let mut pool = CandidatePool::default();
        let mut q1 = QueryGraph::single(QTerm::Entity(e1), score_rel, QTerm::Var(VarId(0)), VarId(0));
        q1.parent_key = Some("p1".to_string());
        let mut q2 = q1.clone();
        q2.parent_key = Some("p1".to_string());
        q2.patterns[0].subject = QTerm::Var(VarId(1));
        q2.patterns.insert(
            0,
            crate::query::Pattern::new(QTerm::Entity(e1), score_rel, QTerm::Var(VarId(1))),
        );
        let mut q3 = QueryGraph::single(QTerm::Entity(e2), rank_rel, QTerm::Var(VarId(0)), VarId(0));
        q3.parent_key = Some("p2".to_string());
        pool.queries.insert("k1".to_string(), q1);
        pool.queries.insert("k2".to_string(), q2);
        pool.queries.insert("k3".to_string(), q3);
        pool
    }

    #[test]
    fn hierarchical_rank_caps_each_parent_group() {
        let g = graph();
        let pool = pool_with_parents(&g);
        let ranked = hierarchical_rank(&pool, "what score does e1 have", &LocalLexicalScorer, 1, &g)
            .unwrap();
        // Two parent groups, one kept from each.
        assert_eq!(ranked.entries.len(), 2);
        let parents: Vec<_> = ranked
            .entries
            .iter()
            .map(|e| e.query.parent_key.clone().unwrap())
            .collect();
        assert!(parents.contains(&"p1".to_string()) && parents.contains(&"p2".to_string()));
        // Scores are non-increasing.
        for w in ranked.entries.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn kept_candidates_outscore_dropped_group_mates() {
        let g = graph();
        let pool = pool_with_parents(&g);
        let nlq = "what score does e1 have";
        let all = hierarchical_rank(&pool, nlq, &LocalLexicalScorer, usize::MAX, &g).unwrap();
        let capped = hierarchical_rank(&pool, nlq, &LocalLexicalScorer, 1, &g).unwrap();
        let kept: Vec<&String> = capped.entries.iter().map(|e| &e.key).collect();
        for group in ["p1", "p2"] {
            let kept_min = capped
                .entries
                .iter()
                .filter(|e| e.query.parent_key.as_deref() == Some(group))
                .map(|e| e.score)
                .fold(f64::INFINITY, f64::min);
            let dropped_max = all
                .entries
                .iter()
                .filter(|e| {
                    e.query.parent_key.as_deref() == Some(group) && !kept.contains(&&e.key)
                })
                .map(|e| e.score)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(kept_min >= dropped_max || dropped_max == f64::NEG_INFINITY);
        }
    }

    struct Scaled(f64);
    impl RerankScorer for Scaled {
        fn score(&self, nlq: &str, candidates: &[String]) -> Result<Vec<f64>> {
            Ok(LocalLexicalScorer
                .score(nlq, candidates)?
                .into_iter()
                .map(|s| s * self.0)
                .collect())
        }
    }

    #[test]
    fn ranking_is_invariant_under_positive_scaling() {
        let g = graph();
        let pool = pool_with_parents(&g);
        let nlq = "what score does e1 have";
        let base = hierarchical_rank(&pool, nlq, &LocalLexicalScorer, 2, &g).unwrap();
        let scaled = hierarchical_rank(&pool, nlq, &Scaled(7.5), 2, &g).unwrap();
        let keys = |r: &RankedCandidates| -> Vec<String> {
            r.entries.iter().map(|e| e.key.clone()).collect()
        };
        assert_eq!(keys(&base), keys(&scaled));
    }

    #[test]
    fn demonstrations_come_back_ascending_with_best_last() {
        let g = graph();
        let pool = pool_with_parents(&g);
        let nlq = "what score does e1 have";
        let ranked = hierarchical_rank(&pool, nlq, &LocalLexicalScorer, 3, &g).unwrap();
        let demos =
            select_demonstrations(&ranked, 10, None, &LocalLexicalScorer, nlq, &g).unwrap();
        assert!(!demos.is_empty());
        assert_eq!(demos.last().unwrap().pseudo_nlq, ranked.entries[0].pseudo_nlq);
        // No duplicate programs.
        let mut texts: Vec<&String> = demos.iter().map(|d| &d.logic_form_text).collect();
        let before = texts.len();
        texts.dedup();
        assert_eq!(texts.len(), before);
    }

    #[test]
    fn training_pool_mixes_retrieved_and_synthetic() {
        let g = graph();
        let pool = pool_with_parents(&g);
        let nlq = "what score does e1 have";
        let ranked = hierarchical_rank(&pool, nlq, &LocalLexicalScorer, 3, &g).unwrap();
        let training = vec![
            TrainingExample {
                question: "what score does e1 have".to_string(),
                logic_form: "triplet([e1], r.has.score, ?v0)\nanswer(?v0)".to_string(),
            },
            TrainingExample {
                question: "completely unrelated".to_string(),
                logic_form: "triplet([e2], r.has.rank, ?v0)\nanswer(?v0)".to_string(),
            },
        ];
        let demos =
            select_demonstrations(&ranked, 4, Some(&training), &LocalLexicalScorer, nlq, &g)
                .unwrap();
        assert!(demos
            .iter()
            .any(|d| d.pseudo_nlq == "what score does e1 have"));
        assert!(demos.iter().any(|d| ranked
            .entries
            .iter()
            .any(|e| e.pseudo_nlq == d.pseudo_nlq)));
    }
}
