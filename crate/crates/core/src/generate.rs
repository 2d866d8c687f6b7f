//! The retrieve-explain-fill loop: explanations, template filling and
//! candidate assembly for new queries.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{ExamplePair, SchemaCatalog};
use crate::llm::{render_prompt, ChatRequest, LlmClient, LlmError, TemplateId};
use crate::retrieval::{get_related_queries, DistanceCache, RetrievalIndex, RetrievalParams};
use crate::sql::{anonymize, parse_sql};
use crate::templating::{
    is_punctuation, template_from_hit, tokenize, CommonVocabulary, QuestionTemplate,
    TemplateSource, MASK,
};
use crate::validate::{cycle_validate, ValidateError, ValidationVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationRole {
    ForFill,
    ForValidate,
}

impl ExplanationRole {
    fn template(self) -> TemplateId {
        match self {
            ExplanationRole::ForFill => TemplateId::ExplainForFill,
            ExplanationRole::ForValidate => TemplateId::ExplainForValidate,
        }
    }

    /// Distinct sample indices keep the two explanations independent even
    /// under a cache.
    fn sample_index(self) -> u32 {
        match self {
            ExplanationRole::ForFill => 0,
            ExplanationRole::ForValidate => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    pub role: ExplanationRole,
    pub query: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Reformer,
    ParaphraseSchema,
    ParaphraseCrafted,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Reformer => "reformer",
            Provenance::ParaphraseSchema => "paraphrase_schema",
            Provenance::ParaphraseCrafted => "paraphrase_crafted",
        }
    }
}

/// A generated question for a source query, with everything needed to trace
/// how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateQuestion {
    pub question: String,
    pub query: String,
    pub db_id: String,
    pub provenance: Provenance,
    /// Text of the question template that was filled, if any.
    pub template: Option<String>,
    pub template_source: Option<TemplateSource>,
    /// Explanation or description the question was generated from.
    pub explanation: Option<String>,
    /// Independent explanation used to score the question.
    pub validation_explanation: Option<String>,
    pub similarity: Option<f64>,
}

impl CandidateQuestion {
    pub fn new(question: String, query: String, db_id: String, provenance: Provenance) -> Self {
        Self {
            question,
            query,
            db_id,
            provenance,
            template: None,
            template_source: None,
            explanation: None,
            validation_explanation: None,
            similarity: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub explain_temperature: f64,
    pub fill_temperature: f64,
    /// Independent fill samples per (query, template).
    pub fill_samples: u32,
    pub max_tokens: u32,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            explain_temperature: 0.7,
            fill_temperature: 0.7,
            fill_samples: 1,
            max_tokens: 256,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("provider returned an empty explanation twice")]
    EmptyExplanation,
    #[error("filled question still contains MASK")]
    MaskRetained,
    #[error("filled question dropped template word `{0}`")]
    AnchorDropped(String),
    #[error("filled question is empty")]
    EmptyFill,
    #[error("explanation role must be {expected:?}")]
    WrongRole { expected: ExplanationRole },
}

impl GenerateError {
    pub fn is_auth(&self) -> bool {
        matches!(self, GenerateError::Llm(e) if e.is_auth())
    }
}

/// Cuts text after its first sentence terminal when more text follows.
pub fn first_sentence(text: &str) -> String {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() && !text[i + 1..].trim().is_empty() {
                    return text[..=i].to_string();
                }
            }
        }
    }
    text.to_string()
}

/// One-sentence explanation of `query`. A shot, when given, is embedded as
/// the in-context example.
pub fn get_explanation(
    client: &LlmClient,
    query: &str,
    role: ExplanationRole,
    shot: Option<&ExamplePair>,
    settings: &GenerationSettings,
) -> Result<Explanation, GenerateError> {
    let mut bindings = BTreeMap::from([("query".to_string(), query.to_string())]);
    if let Some(s) = shot {
        bindings.insert("query_similar".into(), s.query.clone());
        bindings.insert("question_similar".into(), s.question.clone());
    }
    let bundle = render_prompt(role.template(), bindings).map_err(LlmError::from)?;
    let mut request = ChatRequest::new(bundle, settings.explain_temperature, role.sample_index());
    request.max_tokens = settings.max_tokens;
    for _ in 0..2 {
        let text = first_sentence(&client.chat(&request)?.text);
        if !text.is_empty() {
            return Ok(Explanation {
                text,
                role,
                query: query.to_string(),
            });
        }
    }
    Err(GenerateError::EmptyExplanation)
}

/// Checks a filled question against its template: no MASK left and every
/// non-punctuation template word present in order.
pub fn check_fill(template: &QuestionTemplate, filled: &str) -> Result<(), GenerateError> {
    let tokens = tokenize(filled);
    if tokens.is_empty() {
        return Err(GenerateError::EmptyFill);
    }
    if tokens.iter().any(|t| t == MASK) {
        return Err(GenerateError::MaskRetained);
    }
    let mut rest = tokens.iter().map(|t| t.to_lowercase());
    for anchor in template.anchors().filter(|a| !is_punctuation(a)) {
        let a = anchor.to_lowercase();
        if !rest.any(|t| t == a) {
            return Err(GenerateError::AnchorDropped(anchor.to_string()));
        }
    }
    Ok(())
}

/// Fills the template's MASK slots from the explanation.
pub fn fill_template(
    client: &LlmClient,
    template: &QuestionTemplate,
    explanation: &Explanation,
    db_id: &str,
    settings: &GenerationSettings,
    sample_index: u32,
) -> Result<CandidateQuestion, GenerateError> {
    if explanation.role != ExplanationRole::ForFill {
        return Err(GenerateError::WrongRole {
            expected: ExplanationRole::ForFill,
        });
    }
    let text = template.text();
    let question = if template.mask_count() == 0 {
        text.clone()
    } else {
        let bundle = render_prompt(
            TemplateId::FillTemplate,
            BTreeMap::from([
                ("question_template".to_string(), text.clone()),
                ("explanation".to_string(), explanation.text.clone()),
            ]),
        )
        .map_err(LlmError::from)?;
        let mut request = ChatRequest::new(bundle, settings.fill_temperature, sample_index);
        request.max_tokens = settings.max_tokens;
        let reply = client.chat(&request)?.text;
        reply
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or("")
            .to_string()
    };
    check_fill(template, &question)?;
    let mut c = CandidateQuestion::new(
        question,
        explanation.query.clone(),
        db_id.to_string(),
        Provenance::Reformer,
    );
    c.template = Some(text);
    c.template_source = template.source.clone();
    c.explanation = Some(explanation.text.clone());
    Ok(c)
}

/// A query for which new questions are wanted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewQuery {
    pub db_id: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillFailure {
    pub template: String,
    pub sample_index: u32,
    pub error: String,
}

/// Everything that happened for one new query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub index: usize,
    pub query: NewQuery,
    pub hits: usize,
    pub templates: Vec<String>,
    pub fill_explanation: Option<String>,
    pub validation_explanation: Option<String>,
    pub verdicts: Vec<ValidationVerdict>,
    pub fill_failures: Vec<FillFailure>,
    /// Why the query produced nothing, when it was skipped.
    pub skipped: Option<String>,
}

impl QueryOutcome {
    fn skipped(index: usize, query: &NewQuery, reason: String) -> Self {
        Self {
            index,
            query: query.clone(),
            hits: 0,
            templates: vec![],
            fill_explanation: None,
            validation_explanation: None,
            verdicts: vec![],
            fill_failures: vec![],
            skipped: Some(reason),
        }
    }

    /// Accepted candidates in rank order.
    pub fn accepted(&self) -> impl Iterator<Item = &CandidateQuestion> {
        let mut v: Vec<&ValidationVerdict> = self.verdicts.iter().filter(|v| v.accepted).collect();
        v.sort_by_key(|v| v.rank);
        v.into_iter().map(|v| &v.candidate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReformerParams {
    pub retrieval: RetrievalParams,
    pub lambda: f64,
    pub top_k: usize,
    pub generation: GenerationSettings,
}

impl Default for ReformerParams {
    fn default() -> Self {
        Self {
            retrieval: RetrievalParams::default(),
            lambda: 0.85,
            top_k: 5,
            generation: GenerationSettings::default(),
        }
    }
}

/// Runs retrieve, mask, explain, fill and validate for every new query.
/// Per-query problems are recorded in the outcome; only credential failures
/// abort the run. Outcomes are returned in input order.
pub fn reformer_augment(
    new_queries: &[NewQuery],
    catalog: &SchemaCatalog,
    index: &RetrievalIndex,
    vocab: &CommonVocabulary,
    client: &LlmClient,
    params: &ReformerParams,
    cache: Option<&DistanceCache>,
) -> Result<Vec<QueryOutcome>, LlmError> {
    new_queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| augment_one(i, q, catalog, index, vocab, client, params, cache))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn augment_one(
    i: usize,
    q: &NewQuery,
    catalog: &SchemaCatalog,
    index: &RetrievalIndex,
    vocab: &CommonVocabulary,
    client: &LlmClient,
    params: &ReformerParams,
    cache: Option<&DistanceCache>,
) -> Result<QueryOutcome, LlmError> {
    let Some(schema) = catalog.get(&q.db_id) else {
        return Ok(QueryOutcome::skipped(
            i,
            q,
            format!("unknown db_id `{}`", q.db_id),
        ));
    };
    let tree = match parse_sql(&q.query, schema) {
        Ok(t) => anonymize(&t),
        Err(e) => return Ok(QueryOutcome::skipped(i, q, format!("unparseable: {e}"))),
    };
    let hits = get_related_queries(&tree, index, &params.retrieval, cache);
    if hits.is_empty() {
        return Ok(QueryOutcome::skipped(i, q, "no retrieval hit".into()));
    }
    let mut seen = BTreeSet::new();
    let templates: Vec<QuestionTemplate> = hits
        .iter()
        .filter_map(|h| template_from_hit(h, vocab).ok())
        .filter(|t| seen.insert(t.text()))
        .collect();
    let mut outcome = QueryOutcome {
        index: i,
        query: q.clone(),
        hits: hits.len(),
        templates: templates.iter().map(QuestionTemplate::text).collect(),
        fill_explanation: None,
        validation_explanation: None,
        verdicts: vec![],
        fill_failures: vec![],
        skipped: None,
    };
    let abort_on_auth = |e: GenerateError| if e.is_auth() { Err(e) } else { Ok(e) };
    let g = &params.generation;
    let expl1 = match get_explanation(
        client,
        &q.query,
        ExplanationRole::ForFill,
        Some(&hits[0].pair),
        g,
    ) {
        Ok(e) => e,
        Err(e) => {
            let e = abort_on_auth(e).map_err(into_llm)?;
            outcome.skipped = Some(format!("explanation failed: {e}"));
            return Ok(outcome);
        }
    };
    outcome.fill_explanation = Some(expl1.text.clone());
    let mut candidates = Vec::new();
    for t in &templates {
        for s in 0..g.fill_samples {
            match fill_template(client, t, &expl1, &q.db_id, g, s) {
                Ok(c) => candidates.push(c),
                Err(e) => {
                    let e = abort_on_auth(e).map_err(into_llm)?;
                    outcome.fill_failures.push(FillFailure {
                        template: t.text(),
                        sample_index: s,
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    if candidates.is_empty() {
        outcome.skipped = Some("no template could be filled".into());
        return Ok(outcome);
    }
    let expl2 = match get_explanation(client, &q.query, ExplanationRole::ForValidate, None, g) {
        Ok(e) => e,
        Err(e) => {
            let e = abort_on_auth(e).map_err(into_llm)?;
            outcome.skipped = Some(format!("validation explanation failed: {e}"));
            return Ok(outcome);
        }
    };
    outcome.validation_explanation = Some(expl2.text.clone());
    for c in &mut candidates {
        c.validation_explanation = Some(expl2.text.clone());
    }
    outcome.verdicts = match cycle_validate(candidates, &expl2, client, params.lambda, params.top_k)
    {
        Ok(v) => v,
        Err(ValidateError::Llm(e)) => return Err(e),
        Err(e) => {
            outcome.skipped = Some(format!("validation failed: {e}"));
            vec![]
        }
    };
    Ok(outcome)
}

fn into_llm(e: GenerateError) -> LlmError {
    match e {
        GenerateError::Llm(e) => e,
        other => unreachable!("only provider errors abort: {other}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::stub::{StubFaults, StubProvider};
    use crate::templating::TemplateToken;
    use std::sync::Arc;

    fn client(faults: StubFaults) -> LlmClient {
        LlmClient::new(Arc::new(StubProvider::with_faults(faults)))
    }

    fn template(text: &str) -> QuestionTemplate {
        QuestionTemplate {
            tokens: tokenize(text)
                .into_iter()
                .map(|t| {
                    if t == MASK {
                        TemplateToken::Mask
                    } else {
                        TemplateToken::Word(t)
                    }
                })
                .collect(),
            source: None,
        }
    }

    #[test]
    fn first_sentence_truncates() {
        assert_eq!(first_sentence("One thing. Another thing."), "One thing.");
        assert_eq!(
            first_sentence("Weight above 2.5 kg."),
            "Weight above 2.5 kg."
        );
        assert_eq!(first_sentence("  Why? "), "Why?");
        assert_eq!(first_sentence("No terminal"), "No terminal");
    }

    #[test]
    fn explanation_from_stub() {
        let c = client(StubFaults::default());
        let e = get_explanation(
            &c,
            "SELECT count(*) FROM pets",
            ExplanationRole::ForFill,
            None,
            &Default::default(),
        )
        .unwrap();
        assert!(
            e.text.ends_with(" the number of rows of the pets table."),
            "{}",
            e.text
        );
        assert_eq!(e.role, ExplanationRole::ForFill);
    }

    #[test]
    fn multi_sentence_is_cut() {
        let c = client(StubFaults {
            multi_sentence: true,
            ..Default::default()
        });
        let e = get_explanation(
            &c,
            "SELECT name FROM pets",
            ExplanationRole::ForValidate,
            None,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(e.text.matches('.').count(), 1);
    }

    #[test]
    fn empty_explanations_fail_after_one_retry() {
        let c = client(StubFaults {
            empty_explanation: true,
            ..Default::default()
        });
        let r = get_explanation(
            &c,
            "SELECT name FROM pets",
            ExplanationRole::ForFill,
            None,
            &Default::default(),
        );
        assert!(matches!(r, Err(GenerateError::EmptyExplanation)));
        assert_eq!(c.stats().provider_calls, 2);
    }

    fn expl(text: &str) -> Explanation {
        Explanation {
            text: text.into(),
            role: ExplanationRole::ForFill,
            query: "SELECT max(weight) FROM pets".into(),
        }
    }

    #[test]
    fn fills_template() {
        let c = client(StubFaults::default());
        let t = template("What is the MASK of the MASK ?");
        let q = fill_template(
            &c,
            &t,
            &expl("return the maximum weight of the pets table."),
            "pets_1",
            &Default::default(),
            0,
        )
        .unwrap();
        assert_eq!(q.question, "What is the maximum weight of the pets table ?");
        assert_eq!(
            q.template.as_deref(),
            Some("What is the MASK of the MASK ?")
        );
        assert_eq!(q.provenance, Provenance::Reformer);
    }

    #[test]
    fn maskless_template_is_returned_verbatim() {
        let c = client(StubFaults::default());
        let t = template("How many pets are there ?");
        let q = fill_template(
            &c,
            &t,
            &expl("return the number."),
            "pets_1",
            &Default::default(),
            0,
        )
        .unwrap();
        assert_eq!(q.question, "How many pets are there ?");
        assert_eq!(c.stats().provider_calls, 0);
    }

    #[test]
    fn retained_mask_is_a_contract_error() {
        let c = client(StubFaults {
            leave_mask: true,
            ..Default::default()
        });
        let t = template("What is the MASK ?");
        let r = fill_template(
            &c,
            &t,
            &expl("return the weight."),
            "pets_1",
            &Default::default(),
            0,
        );
        assert!(matches!(r, Err(GenerateError::MaskRetained)));
    }

    #[test]
    fn anchor_check() {
        let t = template("What is the MASK of MASK ?");
        assert!(check_fill(&t, "what is the weight of pets").is_ok());
        assert!(
            matches!(check_fill(&t, "What the weight of pets ?"), Err(GenerateError::AnchorDropped(w)) if w == "is")
        );
        assert!(matches!(
            check_fill(&t, "of pets What is the"),
            Err(GenerateError::AnchorDropped(_))
        ));
    }

    #[test]
    fn wrong_role_is_rejected() {
        let c = client(StubFaults::default());
        let mut e = expl("x");
        e.role = ExplanationRole::ForValidate;
        assert!(matches!(
            fill_template(&c, &template("MASK"), &e, "d", &Default::default(), 0),
            Err(GenerateError::WrongRole { .. })
        ));
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let c = client(StubFaults::default());
        let v = CommonVocabulary {
            fractions: Default::default(),
            schema_count: 1,
            keep_threshold: 0.5,
        };
        let out = reformer_augment(
            &[],
            &SchemaCatalog::new(),
            &RetrievalIndex::default(),
            &v,
            &c,
            &Default::default(),
            None,
        )
        .unwrap();
        assert!(out.is_empty());
    }
}
