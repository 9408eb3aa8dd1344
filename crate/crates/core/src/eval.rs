//! Evaluation harness: JSON-lines datasets, the F1 denotation metric,
//! batch benchmark runs with efficiency accounting, and the demonstration
//! corruption attack used for robustness analysis.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::logicform::{self, surface_key, AnswerValue};
use crate::qa::{AnswerRecord, Pipeline};
use crate::query::QTerm;
use crate::rerank::Demonstration;
use crate::textify::{normalize_label, textify};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generalization {
    Iid,
    Compositional,
    ZeroShot,
}

impl std::fmt::Display for Generalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Generalization::Iid => write!(f, "iid"),
            Generalization::Compositional => write!(f, "compositional"),
            Generalization::ZeroShot => write!(f, "zero-shot"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetItem {
    pub question: String,
    #[serde(default)]
    pub entity_links: Option<BTreeMap<String, String>>,
    pub gold_answers: Vec<String>,
    #[serde(default)]
    pub gold_logic_form: Option<String>,
    #[serde(default)]
    pub tag: Option<Generalization>,
}

/// Read a JSON-lines dataset; blank lines are skipped.
pub fn load_dataset(reader: impl BufRead) -> Result<Vec<DatasetItem>> {
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: DatasetItem = serde_json::from_str(&line).map_err(|e| Error::Load {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// F1 over plain answer-string sets: harmonic mean of precision and recall.
/// Two empty sets agree perfectly; one empty side scores zero.
pub fn f1(pred: &[String], gold: &[String]) -> f64 {
    let pred: std::collections::BTreeSet<&String> = pred.iter().collect();
    let gold: std::collections::BTreeSet<&String> = gold.iter().collect();
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let overlap = pred.intersection(&gold).count() as f64;
    let p = overlap / pred.len() as f64;
    let r = overlap / gold.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn value_matches(pred: &AnswerValue, gold: &str) -> bool {
    match pred {
        AnswerValue::Entity { id, label } => {
            gold == id || surface_key(gold) == surface_key(label)
        }
        AnswerValue::Literal(l) => {
            if let (Some(n), Ok(g)) = (l.numeric_value, gold.trim().parse::<f64>()) {
                return n == g;
            }
            surface_key(gold) == surface_key(&l.lexical)
        }
    }
}

/// F1 between executed answers and gold strings, matching by entity id,
/// normalized label, or numeric equality. Each gold value matches at most
/// one prediction.
pub fn answer_f1(pred: &[AnswerValue], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; gold.len()];
    let mut overlap = 0usize;
    for p in pred {
        if let Some(i) = gold
            .iter()
            .enumerate()
            .position(|(i, g)| !used[i] && value_matches(p, g))
        {
            used[i] = true;
            overlap += 1;
        }
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    Relation,
    Entity,
}

impl std::str::FromStr for AttackMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<AttackMode> {
        match s {
            "relation" => Ok(AttackMode::Relation),
            "entity" => Ok(AttackMode::Entity),
            other => Err(Error::Config(format!("unknown attack mode {other:?}"))),
        }
    }
}

/// Entity map over every graph label, for re-parsing demonstration
/// programs whose bracketed entities carry normalized labels.
fn global_entity_map(g: &KnowledgeGraph) -> BTreeMap<String, EntityId> {
    let mut map = BTreeMap::new();
    for e in g.entity_ids() {
        map.insert(normalize_label(g.label(e)), e);
        map.insert(g.label(e).to_string(), e);
        map.insert(g.entity_key(e).to_string(), e);
    }
    map
}

/// Corrupt exactly `level` demonstrations, each by replacing one relation
/// (or entity) occurrence with a uniformly chosen different one, then
/// re-rendering the pseudo question and program. Seeded and deterministic;
/// level 0 touches nothing and draws no randomness.
pub fn corrupt_demonstrations(
    demos: &[Demonstration],
    level: usize,
    mode: AttackMode,
    graph: &KnowledgeGraph,
    seed: u64,
) -> Result<(Vec<Demonstration>, Vec<usize>)> {
    if level == 0 {
        return Ok((demos.to_vec(), Vec::new()));
    }
    if level > demos.len() {
        return Err(Error::Config(format!(
            "attack level {level} exceeds the {} available demonstrations",
            demos.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..demos.len()).collect();
    // Fisher-Yates prefix to pick the victims.
    for i in 0..level {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    let mut victims: Vec<usize> = indices[..level].to_vec();
    victims.sort();

    let entity_map = global_entity_map(graph);
    let mut out = demos.to_vec();
    for &i in &victims {
        let lf = logicform::parse(&demos[i].logic_form_text, &entity_map)?;
        let (mut query, _) = logicform::to_executable(&lf, graph)?;
        match mode {
            AttackMode::Relation => {
                if graph.relation_count() < 2 {
                    return Err(Error::Config(
                        "relation attack needs at least two relations".into(),
                    ));
                }
                let at = rng.random_range(0..query.patterns.len());
                let old = query.patterns[at].predicate;
                let mut new = old;
                while new == old {
                    new = RelationId(rng.random_range(0..graph.relation_count() as u32));
                }
                query.patterns[at].predicate = new;
            }
            AttackMode::Entity => {
                let slots: Vec<(usize, bool)> = query
                    .patterns
                    .iter()
                    .enumerate()
                    .flat_map(|(pi, p)| {
                        let mut v = Vec::new();
                        if matches!(p.subject, QTerm::Entity(_)) {
                            v.push((pi, true));
                        }
                        if matches!(p.object, QTerm::Entity(_)) {
                            v.push((pi, false));
                        }
                        v
                    })
                    .collect();
                if slots.is_empty() || graph.entity_count() < 2 {
                    return Err(Error::Config(
                        "entity attack needs an entity occurrence and at least two entities"
                            .into(),
                    ));
                }
                let (pi, is_subject) = slots[rng.random_range(0..slots.len())];
                let old = if is_subject {
                    query.patterns[pi].subject.as_entity().unwrap()
                } else {
                    query.patterns[pi].object.as_entity().unwrap()
                };
                let mut new = old;
                while new == old {
                    new = EntityId(rng.random_range(0..graph.entity_count() as u32));
                }
                let term = QTerm::Entity(new);
                if is_subject {
                    query.patterns[pi].subject = term;
                } else {
                    query.patterns[pi].object = term;
                }
            }
        }
        let corrupted_lf = logicform::from_query_graph(&query, graph);
        out[i] = Demonstration {
            pseudo_nlq: textify(&query, graph)?,
            logic_form_text: logicform::print(&corrupted_lf),
        };
    }
    Ok((out, victims))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttackSpec {
    pub level: usize,
    pub mode: AttackMode,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemResult {
    pub question: String,
    pub f1: f64,
    pub answers: Vec<String>,
    pub pool_size: usize,
    pub probe_count: u64,
    pub tokens_in: usize,
    pub tokens_out: usize,
    pub tpq_seconds: f64,
    pub fallback_used: bool,
    pub no_candidates: bool,
    pub tag: Option<Generalization>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TagStats {
    pub count: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<ItemResult>,
    /// None when the dataset is empty (aggregate undefined).
    pub aggregate_f1: Option<f64>,
    pub mean_tpq_seconds: Option<f64>,
    pub mean_qpq: Option<f64>,
    pub mean_tokens_in: Option<f64>,
    pub mean_tokens_out: Option<f64>,
    pub mean_pool_size: Option<f64>,
    pub per_tag: BTreeMap<String, TagStats>,
    pub hard_failures: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Answer every dataset item and aggregate the metrics. Item-level failures
/// are recorded on the item and never abort the run.
pub fn run_benchmark(
    dataset: &[DatasetItem],
    pipeline: &Pipeline,
    attack: Option<AttackSpec>,
) -> Result<(EvalReport, Vec<AnswerRecord>)> {
    let mut items = Vec::new();
    let mut records = Vec::new();
    for (idx, item) in dataset.iter().enumerate() {
        let t = Instant::now();
        let transform = attack.map(|a| {
            let graph = pipeline.graph;
            let seed = a.seed.wrapping_add(idx as u64);
            move |demos: Vec<Demonstration>| {
                corrupt_demonstrations(&demos, a.level.min(demos.len()), a.mode, graph, seed)
            }
        });
        let result = pipeline.answer(
            &item.question,
            item.entity_links.as_ref(),
            transform
                .as_ref()
                .map(|f| f as &dyn Fn(Vec<Demonstration>) -> Result<(Vec<Demonstration>, Vec<usize>)>),
        );
        let tpq = t.elapsed().as_secs_f64();
        match result {
            Ok(record) => {
                items.push(ItemResult {
                    question: item.question.clone(),
                    f1: answer_f1(&record.answers, &item.gold_answers),
                    answers: record.answers.iter().map(|a| a.to_string()).collect(),
                    pool_size: record.pool_size,
                    probe_count: record.probe_count,
                    tokens_in: record.usage.input,
                    tokens_out: record.usage.output,
                    tpq_seconds: tpq,
                    fallback_used: record.fallback_used,
                    no_candidates: record.no_candidates,
                    tag: item.tag,
                    error: None,
                });
                records.push(record);
            }
            Err(e) => {
                items.push(ItemResult {
                    question: item.question.clone(),
                    f1: 0.0,
                    answers: Vec::new(),
                    pool_size: 0,
                    probe_count: 0,
                    tokens_in: 0,
                    tokens_out: 0,
                    tpq_seconds: tpq,
                    fallback_used: false,
                    no_candidates: false,
                    tag: item.tag,
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let mut per_tag: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for it in &items {
        if let Some(tag) = it.tag {
            per_tag.entry(tag.to_string()).or_default().push(it.f1);
        }
    }
    let report = EvalReport {
        aggregate_f1: mean(items.iter().map(|i| i.f1)),
        mean_tpq_seconds: mean(items.iter().map(|i| i.tpq_seconds)),
        mean_qpq: mean(items.iter().map(|i| i.probe_count as f64)),
        mean_tokens_in: mean(items.iter().map(|i| i.tokens_in as f64)),
        mean_tokens_out: mean(items.iter().map(|i| i.tokens_out as f64)),
        mean_pool_size: mean(items.iter().map(|i| i.pool_size as f64)),
        per_tag: per_tag
            .into_iter()
            .map(|(tag, f1s)| {
                let count = f1s.len();
                let f1 = f1s.iter().sum::<f64>() / count as f64;
                (tag, TagStats { count, f1 })
            })
            .collect(),
        hard_failures: items.iter().filter(|i| i.error.is_some()).count(),
        items,
    };
    Ok((report, records))
}
