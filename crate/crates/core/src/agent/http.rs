use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    AgentState, AuditReport, Blueprint, Capabilities, Explanation, Generator, GeneratorError, Hypothesis, IdeaScores,
    ScorerKind,
};

/// Versioned prompt set. Placeholders: `{state}` (JSON agent state),
/// `{n}` (idea count), `{feedback}` (rejection reasons or empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub version: String,
    pub system: String,
    pub explain: String,
    pub audit: String,
    pub ideate: String,
    pub judge: String,
    pub blueprint: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            version: "1".into(),
            system: "You analyse a research frontier using only the supplied evidence pack. Cite papers by their paper_id. \
                     The discovery cue is steering context, never evidence, and must not be cited. \
                     Mark unsupported details as unknowns or assumptions."
                .into(),
            explain: "Explain the target. Summarize each side, list axes of separation and bridge seeds, \
                      with citations per claim.\n\nSTATE:\n{state}"
                .into(),
            audit: "Audit the explanation for unsupported claims, missing facets and cue violations. \
                    Propose lexical patch queries if more evidence is needed.\n\nSTATE:\n{state}"
                .into(),
            ideate: "Write {n} bridge hypotheses grounded in the pack; cite inline as [paper_id].\n{feedback}\n\nSTATE:\n{state}".into(),
            judge: "Score each hypothesis from 1 to 5 on importance, novelty, plausibility, feasibility, \
                    evaluability and likely_impact.\n\nSTATE:\n{state}"
                .into(),
            blueprint: "Write an experimental blueprint for hypothesis {n}.\n\nSTATE:\n{state}".into(),
        }
    }
}

impl PromptTemplates {
    pub fn load(path: &Path) -> Result<Self, GeneratorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeneratorError::Unavailable(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| GeneratorError::Malformed(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding a bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub temperature: f64,
    pub judge_temperature: f64,
    pub judge: bool,
    pub max_in_flight: usize,
    pub templates: PromptTemplates,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "local-model".into(),
            api_key_env: None,
            timeout_secs: 120,
            temperature: 0.2,
            judge_temperature: 0.0,
            judge: true,
            max_in_flight: 4,
            templates: PromptTemplates::default(),
        }
    }
}

/// Client for an OpenAI-style `POST /chat/completions` endpoint using
/// JSON-schema structured outputs.
pub struct HttpChatGenerator {
    config: ChatConfig,
    client: reqwest::blocking::Client,
    free: Mutex<usize>,
    cv: Condvar,
}

fn schema_claims() -> Value {
    json!({"type": "array", "items": {"type": "object", "additionalProperties": false,
        "required": ["text", "citations"],
        "properties": {"text": {"type": "string"}, "citations": {"type": "array", "items": {"type": "string"}}}}})
}

fn strings() -> Value {
    json!({"type": "array", "items": {"type": "string"}})
}

fn object(required: &[&str], properties: Value) -> Value {
    json!({"type": "object", "additionalProperties": false, "required": required, "properties": properties})
}

fn explanation_schema() -> Value {
    object(
        &["side_summaries", "axes_of_separation", "bridge_seeds", "insufficient_evidence"],
        json!({"side_summaries": schema_claims(), "axes_of_separation": schema_claims(),
               "bridge_seeds": schema_claims(), "insufficient_evidence": {"type": "boolean"}}),
    )
}

fn audit_schema() -> Value {
    object(
        &["unsupported_claims", "missing_facets", "cue_violations", "patch_queries", "needs_patch", "support_fraction"],
        json!({"unsupported_claims": strings(), "missing_facets": strings(), "cue_violations": strings(),
               "patch_queries": strings(), "needs_patch": {"type": "boolean"},
               "support_fraction": {"type": "number", "minimum": 0, "maximum": 1}}),
    )
}

fn hypotheses_schema() -> Value {
    let h = object(
        &["title", "body", "citations", "assumptions"],
        json!({"title": {"type": "string"}, "body": {"type": "string"}, "citations": strings(), "assumptions": strings()}),
    );
    object(&["hypotheses"], json!({"hypotheses": {"type": "array", "items": h}}))
}

fn scores_schema() -> Value {
    let score = json!({"type": "number", "minimum": 1, "maximum": 5});
    let s = object(
        &super::CRITERIA,
        json!({"importance": score, "novelty": score, "plausibility": score,
               "feasibility": score, "evaluability": score, "likely_impact": score}),
    );
    object(&["scores"], json!({"scores": {"type": "array", "items": s}}))
}

fn blueprint_schema() -> Value {
    let keys = [
        "materials",
        "synthesis_and_characterization",
        "in_vitro_plan",
        "in_vivo_plan",
        "risks",
        "mitigations",
        "success_criteria",
    ];
    let props: serde_json::Map<String, Value> =
        keys.iter().map(|k| (k.to_string(), json!({"type": "string"}))).collect();
    object(&keys, Value::Object(props))
}

#[derive(Deserialize)]
struct HypothesisList {
    hypotheses: Vec<Hypothesis>,
}

#[derive(Deserialize)]
struct RawScores {
    importance: f64,
    novelty: f64,
    plausibility: f64,
    feasibility: f64,
    evaluability: f64,
    likely_impact: f64,
}

#[derive(Deserialize)]
struct ScoreList {
    scores: Vec<RawScores>,
}

impl HttpChatGenerator {
    pub fn new(config: ChatConfig) -> Result<Self, GeneratorError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GeneratorError::Unavailable(e.to_string()))?;
        let free = Mutex::new(config.max_in_flight.max(1));
        Ok(Self { config, client, free, cv: Condvar::new() })
    }

    fn render(
        &self,
        template: &str,
        state: &AgentState,
        n: usize,
        feedback: Option<&str>,
    ) -> Result<String, GeneratorError> {
        let state_json = serde_json::to_string(state).map_err(|e| GeneratorError::Malformed(e.to_string()))?;
        let feedback = feedback.map(|f| format!("Previous attempt rejected: {f}")).unwrap_or_default();
        Ok(template.replace("{n}", &n.to_string()).replace("{feedback}", &feedback).replace("{state}", &state_json))
    }

    fn call<T: DeserializeOwned>(
        &self,
        name: &str,
        schema: Value,
        prompt: String,
        temperature: f64,
    ) -> Result<T, GeneratorError> {
        let body = json!({
            "model": self.config.model,
            "temperature": temperature,
            "messages": [
                {"role": "system", "content": self.config.templates.system},
                {"role": "user", "content": prompt},
            ],
            "response_format": {"type": "json_schema", "json_schema": {"name": name, "strict": true, "schema": schema}},
        });
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.client.post(&url).json(&body);
        if let Some(var) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.bearer_auth(key);
            }
        }
        let resp = {
            let mut free = self.free.lock().unwrap();
            while *free == 0 {
                free = self.cv.wait(free).unwrap();
            }
            *free -= 1;
            drop(free);
            let r = req.send();
            *self.free.lock().unwrap() += 1;
            self.cv.notify_one();
            r
        };
        let resp = resp.map_err(|e| GeneratorError::Unavailable(format!("{url}: {e}")))?;
        if !resp.status().is_success() {
            return Err(GeneratorError::Unavailable(format!("{url}: {}", resp.status())));
        }
        let envelope: Value = resp.json().map_err(|e| GeneratorError::Malformed(e.to_string()))?;
        let content = envelope
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GeneratorError::Malformed(format!("{name}: no message content")))?;
        serde_json::from_str(content).map_err(|e| GeneratorError::Malformed(format!("{name}: {e}")))
    }
}

impl Generator for HttpChatGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            name: "http-chat".into(),
            model: self.config.model.clone(),
            judge: self.config.judge,
            prompt_version: self.config.templates.version.clone(),
        }
    }

    fn explain(&self, state: &AgentState) -> Result<Explanation, GeneratorError> {
        let prompt = self.render(&self.config.templates.explain, state, 0, None)?;
        self.call("explanation", explanation_schema(), prompt, self.config.temperature)
    }

    fn audit(&self, state: &AgentState) -> Result<AuditReport, GeneratorError> {
        let prompt = self.render(&self.config.templates.audit, state, 0, None)?;
        let mut report: AuditReport = self.call("audit", audit_schema(), prompt, self.config.temperature)?;
        report.support_fraction = report.support_fraction.clamp(0.0, 1.0);
        if report.patch_queries.is_empty() {
            report.needs_patch = false;
        }
        Ok(report)
    }

    fn ideate(&self, state: &AgentState, n: usize, feedback: Option<&str>) -> Result<Vec<Hypothesis>, GeneratorError> {
        let prompt = self.render(&self.config.templates.ideate, state, n, feedback)?;
        let list: HypothesisList = self.call("hypotheses", hypotheses_schema(), prompt, self.config.temperature)?;
        Ok(list.hypotheses.into_iter().take(n).collect())
    }

    fn judge(&self, state: &AgentState) -> Result<Vec<IdeaScores>, GeneratorError> {
        let prompt = self.render(&self.config.templates.judge, state, state.hypotheses.len(), None)?;
        let list: ScoreList = self.call("scores", scores_schema(), prompt, self.config.judge_temperature)?;
        Ok(list
            .scores
            .into_iter()
            .map(|s| IdeaScores {
                importance: s.importance,
                novelty: s.novelty,
                plausibility: s.plausibility,
                feasibility: s.feasibility,
                evaluability: s.evaluability,
                likely_impact: s.likely_impact,
                scorer: ScorerKind::Judge,
            })
            .collect())
    }

    fn blueprint(&self, state: &AgentState, idea: usize) -> Result<Blueprint, GeneratorError> {
        let prompt = self.render(&self.config.templates.blueprint, state, idea, None)?;
        self.call("blueprint", blueprint_schema(), prompt, self.config.temperature)
    }
}
