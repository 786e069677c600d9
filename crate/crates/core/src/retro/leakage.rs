use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agent::{
    inline_citations, AgentState, AuditReport, Blueprint, Capabilities, Explanation, Generator, GeneratorError,
    Hypothesis, IdeaScores,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub generator_calls_scanned: usize,
    pub artifacts_scanned: usize,
    pub forbidden_ids: usize,
    pub violations: Vec<String>,
}

impl LeakageReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Forbidden ids found in `value`: exact string values and bracketed inline
/// citations inside any string.
pub fn find_forbidden(value: &serde_json::Value, forbidden: &HashSet<String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![value];
    while let Some(v) = stack.pop() {
        match v {
            serde_json::Value::String(s) => {
                if forbidden.contains(s.trim()) {
                    out.push(s.trim().to_string());
                }
                out.extend(inline_citations(s).into_iter().filter(|c| forbidden.contains(c)));
                out.extend(
                    s.split_whitespace()
                        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '-' && c != '_'))
                        .filter(|w| forbidden.contains(*w))
                        .map(str::to_string),
                );
            }
            serde_json::Value::Array(a) => stack.extend(a),
            serde_json::Value::Object(o) => stack.extend(o.values()),
            _ => {}
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Generator wrapper that scans every input state and every output for
/// forbidden ids before passing them through.
pub struct LeakageGuard<'a> {
    inner: &'a dyn Generator,
    forbidden: &'a HashSet<String>,
    calls: AtomicUsize,
    violations: Mutex<Vec<String>>,
}

impl<'a> LeakageGuard<'a> {
    pub fn new(inner: &'a dyn Generator, forbidden: &'a HashSet<String>) -> Self {
        Self { inner, forbidden, calls: AtomicUsize::new(0), violations: Mutex::new(Vec::new()) }
    }

    fn scan<T: Serialize>(&self, what: &str, target: &str, value: &T) {
        let Ok(json) = serde_json::to_value(value) else { return };
        let hits = find_forbidden(&json, self.forbidden);
        if !hits.is_empty() {
            let mut v = self.violations.lock().expect("violation log poisoned");
            v.extend(hits.into_iter().map(|id| format!("{what} for {target} contains {id}")));
        }
    }

    fn input(&self, stage: &str, state: &AgentState) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.scan(&format!("{stage} input"), &state.pack.target_id, state);
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Violations recorded so far, sorted for a deterministic report.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.violations.lock().expect("violation log poisoned").clone();
        v.sort();
        v.dedup();
        v
    }
}

impl Generator for LeakageGuard<'_> {
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn explain(&self, state: &AgentState) -> Result<Explanation, GeneratorError> {
        self.input("explain", state);
        let out = self.inner.explain(state)?;
        self.scan("explanation", &state.pack.target_id, &out);
        Ok(out)
    }

    fn audit(&self, state: &AgentState) -> Result<AuditReport, GeneratorError> {
        self.input("audit", state);
        let out = self.inner.audit(state)?;
        self.scan("audit", &state.pack.target_id, &out);
        Ok(out)
    }

    fn ideate(&self, state: &AgentState, n: usize, feedback: Option<&str>) -> Result<Vec<Hypothesis>, GeneratorError> {
        self.input("ideate", state);
        self.scan("ideate feedback", &state.pack.target_id, &feedback);
        let out = self.inner.ideate(state, n, feedback)?;
        self.scan("hypotheses", &state.pack.target_id, &out);
        Ok(out)
    }

    fn judge(&self, state: &AgentState) -> Result<Vec<IdeaScores>, GeneratorError> {
        self.input("judge", state);
        self.inner.judge(state)
    }

    fn blueprint(&self, state: &AgentState, idea: usize) -> Result<Blueprint, GeneratorError> {
        self.input("blueprint", state);
        let out = self.inner.blueprint(state, idea)?;
        self.scan("blueprint", &state.pack.target_id, &out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn finds_exact_inline_and_word_ids() {
        let forbidden: HashSet<String> = ["fut-0001".to_string(), "fut-0002".into(), "fut-0003".into()].into();
        let v = json!({"a": "fut-0001", "b": ["see [fut-0002]."], "c": {"d": "mentions fut-0003, later"}, "e": "fut-00010"});
        assert_eq!(find_forbidden(&v, &forbidden), vec!["fut-0001", "fut-0002", "fut-0003"]);
        assert!(find_forbidden(&json!({"x": "hist-0001"}), &forbidden).is_empty());
    }
}
