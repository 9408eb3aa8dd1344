//! End-to-end question answering: build the few-shot prompt from selected
//! demonstrations, call the completion provider, parse and execute the
//! returned program.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::construct::{self, Limits};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::linking::{self, SimilarityProvider};
use crate::logicform::{self, AnswerValue};
use crate::rerank::{self, Demonstration, RerankScorer, TrainingExample};
use crate::textify::normalize_label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
}

/// Text-completion backend. The echo mock is deterministic and needs no
/// network; remote chat providers live in the providers module.
pub trait CompletionProvider: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<Completion>;
}

/// Deterministic mock: answers with the program text of the last (nearest)
/// exemplar in the prompt. Token usage is a whitespace-token estimate.
#[derive(Debug, Default, Clone)]
pub struct EchoMock;

impl CompletionProvider for EchoMock {
    fn complete(&self, prompt: &str) -> Result<Completion> {
        let blocks: Vec<&str> = prompt.split("###PyQL").collect();
        // The first block is the preamble and the final block follows the
        // test question; the exemplar programs sit in between, nearest last.
        let text = blocks[1..blocks.len().saturating_sub(1).max(1)]
            .iter()
            .rev()
            .map(|b| {
                b.split("\n\n")
                    .next()
                    .unwrap_or("")
                    .lines()
                    .filter(|l| !l.trim().is_empty() && !l.starts_with("###"))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .find(|t| !t.is_empty())
            .ok_or(Error::EmptyCompletion)?;
        let usage = TokenUsage {
            input: prompt.split_whitespace().count(),
            output: text.split_whitespace().count(),
        };
        Ok(Completion { text, usage })
    }
}

/// Assemble the few-shot prompt. Pure function of its inputs.
pub fn build_prompt(demos: &[Demonstration], nlq: &str, entity_surfaces: &[String]) -> String {
    let mut s = String::from(
        "You are a powerful model for generating PyQL queries to answer natural language questions.\nHere are some exemplars:\n",
    );
    for d in demos {
        s.push_str(&format!(
            "###Question\n{}\n###PyQL\n{}\n\n",
            d.pseudo_nlq, d.logic_form_text
        ));
    }
    s.push_str(
        "Please follow the format of exemplars and output PyQL query for the following question. No explanation or questioning allowed.\n\n",
    );
    let list = entity_surfaces
        .iter()
        .map(|e| format!("'{e}'"))
        .collect::<Vec<_>>()
        .join(", ");
    s.push_str(&format!("Entity List: [{list}]\n\n"));
    s.push_str(&format!("###Question\n{nlq}\n###PyQL"));
    s
}

/// Call the provider with bounded retries; strip code fences and trim the
/// result. An empty completion after cleanup is an error.
pub fn complete(
    prompt: &str,
    provider: &dyn CompletionProvider,
    retries: usize,
) -> Result<Completion> {
    let mut last_err = None;
    for _ in 0..=retries {
        match provider.complete(prompt) {
            Ok(mut c) => {
                c.text = c
                    .text
                    .lines()
                    .filter(|l| !l.trim_start().starts_with("```"))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .trim()
                    .to_string();
                if c.text.is_empty() {
                    return Err(Error::EmptyCompletion);
                }
                return Ok(c);
            }
            Err(e @ Error::Provider { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or(Error::EmptyCompletion))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaConfig {
    pub limits: Limits,
    pub k_relations: usize,
    pub n_per_parent: usize,
    pub m_demos: usize,
    pub decorations: bool,
    pub retries: usize,
}

impl Default for QaConfig {
    fn default() -> Self {
        QaConfig {
            limits: Limits::default(),
            k_relations: 20,
            n_per_parent: 3,
            m_demos: 10,
            decorations: true,
            retries: 1,
        }
    }
}

/// Everything observed while answering one question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question: String,
    pub entity_surfaces: Vec<String>,
    pub demonstrations: Vec<Demonstration>,
    pub corrupted_demos: Vec<usize>,
    pub pool_size: usize,
    pub raw_completion: String,
    pub parse_error: Option<String>,
    pub logic_form_text: Option<String>,
    pub sparql: Option<String>,
    pub answers: Vec<AnswerValue>,
    pub fallback_used: bool,
    pub no_candidates: bool,
    /// Stage name -> seconds, in pipeline order.
    pub timings: Vec<(String, f64)>,
    /// Exact graph-execution counter delta for this question.
    pub probe_count: u64,
    pub usage: TokenUsage,
}

/// Hook applied to the selected demonstrations before prompting; returns
/// the (possibly altered) demos and the indices that were changed. Used by
/// the robustness attack.
pub type DemoTransform<'a> =
    &'a dyn Fn(Vec<Demonstration>) -> Result<(Vec<Demonstration>, Vec<usize>)>;

pub struct Pipeline<'a> {
    pub graph: &'a KnowledgeGraph,
    pub similarity: &'a dyn SimilarityProvider,
    pub scorer: &'a dyn RerankScorer,
    pub provider: &'a dyn CompletionProvider,
    pub config: QaConfig,
    pub training_pool: Option<Vec<TrainingExample>>,
}

impl<'a> Pipeline<'a> {
    /// Run the full pipeline for one question. Parse or execution failures
    /// of the model output fall back to executing the top-ranked synthetic
    /// query, so the call only errors on infrastructure failures.
    pub fn answer(
        &self,
        nlq: &str,
        dataset_links: Option<&BTreeMap<String, String>>,
        transform: Option<DemoTransform>,
    ) -> Result<AnswerRecord> {
        let probes_before = self.graph.execution_count();
        let mut timings = Vec::new();
        let mut record = AnswerRecord {
            question: nlq.to_string(),
            entity_surfaces: Vec::new(),
            demonstrations: Vec::new(),
            corrupted_demos: Vec::new(),
            pool_size: 0,
            raw_completion: String::new(),
            parse_error: None,
            logic_form_text: None,
            sparql: None,
            answers: Vec::new(),
            fallback_used: false,
            no_candidates: false,
            timings: Vec::new(),
            probe_count: 0,
            usage: TokenUsage::default(),
        };

        let t = Instant::now();
        let entities = linking::link_entities(nlq, dataset_links, self.graph);
        record.entity_surfaces = entities.entries.iter().map(|e| e.surface.clone()).collect();
        let entity_ids: Vec<EntityId> = entities.entries.iter().map(|e| e.node).collect();
        let relations =
            linking::retrieve_relations(nlq, self.graph, self.config.k_relations, self.similarity)?;
        let relation_ids: Vec<_> = relations.entries.iter().map(|(r, _)| *r).collect();
        timings.push(("linking".to_string(), t.elapsed().as_secs_f64()));

        let t = Instant::now();
        let pool = construct::synthesize(
            nlq,
            &entity_ids,
            &relation_ids,
            self.graph,
            &self.config.limits,
            self.config.decorations,
        )?;
        record.pool_size = pool.len();
        timings.push(("synthesize".to_string(), t.elapsed().as_secs_f64()));

        if pool.is_empty() {
            record.no_candidates = true;
            record.timings = timings;
            record.probe_count = self.graph.execution_count() - probes_before;
            return Ok(record);
        }

        let t = Instant::now();
        let ranked = rerank::hierarchical_rank(
            &pool,
            nlq,
            self.scorer,
            self.config.n_per_parent,
            self.graph,
        )?;
        let demos = rerank::select_demonstrations(
            &ranked,
            self.config.m_demos,
            self.training_pool.as_deref(),
            self.scorer,
            nlq,
            self.graph,
        )?;
        timings.push(("rank".to_string(), t.elapsed().as_secs_f64()));

        let (demos, corrupted) = match transform {
            Some(f) => f(demos)?,
            None => (demos, Vec::new()),
        };
        record.demonstrations = demos.clone();
        record.corrupted_demos = corrupted;

        let t = Instant::now();
        let prompt = build_prompt(&demos, nlq, &record.entity_surfaces);
        let completion = complete(&prompt, self.provider, self.config.retries)?;
        record.raw_completion = completion.text.clone();
        record.usage = completion.usage;
        timings.push(("complete".to_string(), t.elapsed().as_secs_f64()));

        let t = Instant::now();
        // Surfaces from the entity list plus every linked node's label, so
        // demo-style bracketed labels resolve too.
        let mut entity_map: BTreeMap<String, EntityId> = BTreeMap::new();
        for e in &entities.entries {
            entity_map.insert(e.surface.clone(), e.node);
            entity_map.insert(self.graph.label(e.node).to_string(), e.node);
            entity_map.insert(normalize_label(self.graph.label(e.node)), e.node);
        }
        let executed = logicform::parse(&completion.text, &entity_map)
            .and_then(|lf| {
                let (_, sparql) = logicform::to_executable(&lf, self.graph)?;
                let answers = logicform::execute_lf(&lf, self.graph, self.config.limits.row_cap)?;
                Ok((lf, sparql, answers))
            });
        match executed {
            Ok((lf, sparql, answers)) => {
                record.logic_form_text = Some(logicform::print(&lf));
                record.sparql = Some(sparql);
                record.answers = answers;
            }
            Err(e) => {
                record.parse_error = Some(e.to_string());
                // Fall back to the best synthetic candidate.
                if let Some(top) = ranked.entries.first() {
                    let lf = logicform::from_query_graph(&top.query, self.graph);
                    let (_, sparql) = logicform::to_executable(&lf, self.graph)?;
                    record.answers =
                        logicform::execute_lf(&lf, self.graph, self.config.limits.row_cap)?;
                    record.logic_form_text = Some(logicform::print(&lf));
                    record.sparql = Some(sparql);
                    record.fallback_used = true;
                }
            }
        }
        timings.push(("execute".to_string(), t.elapsed().as_secs_f64()));

        record.timings = timings;
        record.probe_count = self.graph.execution_count() - probes_before;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::load_graph;
    use crate::linking::LocalTrigramSimilarity;
    use crate::rerank::LocalLexicalScorer;
    use std::io::Cursor;

    fn demo(q: &str, lf: &str) -> Demonstration {
        Demonstration {
            pseudo_nlq: q.to_string(),
            logic_form_text: lf.to_string(),
        }
    }

    #[test]
    fn prompt_layout_is_exact() {
        let demos = vec![
            demo("what a, x has a", "triplet([x], r.a, ?v0)\nanswer(?v0)"),
            demo("what b, y has b", "triplet([y], r.b, ?v0)\nanswer(?v0)"),
        ];
        let prompt = build_prompt(&demos, "which b does y have", &["y".to_string()]);
        let expected = "You are a powerful model for generating PyQL queries to answer natural language questions.\n\
Here are some exemplars:\n\
###Question\nwhat a, x has a\n###PyQL\ntriplet([x], r.a, ?v0)\nanswer(?v0)\n\n\
###Question\nwhat b, y has b\n###PyQL\ntriplet([y], r.b, ?v0)\nanswer(?v0)\n\n\
Please follow the format of exemplars and output PyQL query for the following question. No explanation or questioning allowed.\n\n\
Entity List: ['y']\n\n\
###Question\nwhich b does y have\n###PyQL";
        assert_eq!(prompt, expected);
    }

    #[test]
    fn echo_mock_returns_the_nearest_exemplar_program() {
        let demos = vec![
            demo("what a, x has a", "triplet([x], r.a, ?v0)\nanswer(?v0)"),
            demo("what b, y has b", "triplet([y], r.b, ?v0)\nanswer(?v0)"),
        ];
        let prompt = build_prompt(&demos, "which b does y have", &["y".to_string()]);
        let c = EchoMock.complete(&prompt).unwrap();
        assert_eq!(c.text, "triplet([y], r.b, ?v0)\nanswer(?v0)");
        assert!(c.usage.input > c.usage.output);
    }

    #[test]
    fn echo_mock_with_no_exemplars_is_an_empty_completion() {
        let prompt = build_prompt(&[], "a question", &[]);
        assert!(matches!(EchoMock.complete(&prompt), Err(Error::EmptyCompletion)));
    }

    struct Fenced;
    impl CompletionProvider for Fenced {
        fn complete(&self, _prompt: &str) -> Result<Completion> {
            Ok(Completion {
                text: "```python\nanswer(?v0)\n```\n".to_string(),
                usage: TokenUsage::default(),
            })
        }
    }

    struct Blank;
    impl CompletionProvider for Blank {
        fn complete(&self, _prompt: &str) -> Result<Completion> {
            Ok(Completion {
                text: "```\n```".to_string(),
                usage: TokenUsage::default(),
            })
        }
    }

    struct FlakyThenOk(std::cell::Cell<bool>);
    impl CompletionProvider for FlakyThenOk {
        fn complete(&self, _prompt: &str) -> Result<Completion> {
            if self.0.replace(false) {
                Err(Error::Provider {
                    endpoint: "test".to_string(),
                    msg: "transient".to_string(),
                })
            } else {
                Ok(Completion {
                    text: "answer(?v0)".to_string(),
                    usage: TokenUsage::default(),
                })
            }
        }
    }
    // Cell is fine single-threaded; the trait bound needs Sync for real use.
    unsafe impl Sync for FlakyThenOk {}

    #[test]
    fn complete_strips_fences_and_rejects_blank_output() {
        let c = complete("p", &Fenced, 0).unwrap();
        assert_eq!(c.text, "answer(?v0)");
        assert!(matches!(complete("p", &Blank, 0), Err(Error::EmptyCompletion)));
    }

    #[test]
    fn complete_retries_transient_provider_errors() {
        let flaky = FlakyThenOk(std::cell::Cell::new(true));
        assert_eq!(complete("p", &flaky, 1).unwrap().text, "answer(?v0)");
        let flaky = FlakyThenOk(std::cell::Cell::new(true));
        assert!(matches!(
            complete("p", &flaky, 0),
            Err(Error::Provider { .. })
        ));
    }

    #[test]
    fn pipeline_answers_a_simple_question_end_to_end() {
        let g = load_graph(
            Cursor::new("e1\tr.city.mayor\tm1\nm1\tr.person.age\t52".to_string()),
            Some(Cursor::new("e1\tspringfield\nm1\tquimby".to_string())),
            None::<Cursor<String>>,
        )
        .unwrap();
        let pipeline = Pipeline {
            graph: &g,
            similarity: &LocalTrigramSimilarity,
            scorer: &LocalLexicalScorer,
            provider: &EchoMock,
            config: QaConfig::default(),
            training_pool: None,
        };
        let record = pipeline
            .answer("what mayor does springfield have", None, None)
            .unwrap();
        assert!(!record.no_candidates);
        assert!(record.pool_size > 0);
        assert!(record.probe_count > 0);
        assert!(record.logic_form_text.is_some());
        assert!(record
            .answers
            .iter()
            .any(|a| matches!(a, AnswerValue::Entity { label, .. } if label == "quimby")));
        let stages: Vec<&str> = record.timings.iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(stages, ["linking", "synthesize", "rank", "complete", "execute"]);
    }

    #[test]
    fn unlinkable_questions_report_no_candidates() {
        let g = load_graph(
            Cursor::new("e1\tr.city.mayor\tm1".to_string()),
            None::<Cursor<String>>,
            None::<Cursor<String>>,
        )
        .unwrap();
        let pipeline = Pipeline {
            graph: &g,
            similarity: &LocalTrigramSimilarity,
            scorer: &LocalLexicalScorer,
            provider: &EchoMock,
            config: QaConfig::default(),
            training_pool: None,
        };
        let record = pipeline.answer("nothing matches here", None, None).unwrap();
        assert!(record.no_candidates);
        assert!(record.answers.is_empty());
    }
}
