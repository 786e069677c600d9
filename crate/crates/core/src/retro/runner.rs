use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gold::{assign_gold_tasks, GoldAssignment, GoldConfig};
use super::leakage::{find_forbidden, LeakageGuard, LeakageReport};
use super::matching::{
    hypothesis_fingerprint, retrieve_candidates, strength_order, unit, FieldLexicon, MatchCandidate, MatchLabel,
    PoolConfig, Side, SideIndex,
};
use super::methods::{generate, Generation, Method, MethodContext};
use super::metrics::{compute_metrics, recovery_label, retain_task_best, MethodMetrics, TaskRow};
use super::RetroError;
use crate::agent::{Capabilities, Generator, WorkflowConfig};
use crate::calibration::{
    AuditSummary, OpenSection, PackSummary, RetrievalRef, ReviewPacket, SealedSection, TaskKey, PACK_SUMMARY_ITEMS,
};
use crate::corpus::PaperRecord;
use crate::embeddings::{cosine_to_unit, dot, fetch_embeddings, EmbeddingService, Matrix};
use crate::evidence::{cue_vector, CueInput, RetrievalBudget};
use crate::gaps::{derive_cluster_pairs, gap_targets, TargetSpec};
use crate::snapshot::Snapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub cutoff: NaiveDate,
    pub window_end: NaiveDate,
    pub gap_targets: usize,
    pub pair_targets: usize,
    pub gold_limit: usize,
    pub seeds: usize,
    /// First run seed; seed `i` is `seed + i`.
    pub seed: u64,
    pub hypotheses_per_target: usize,
    pub budget: RetrievalBudget,
    pub prefilter_threshold: f64,
    pub duplicate_threshold: f64,
    pub pool: PoolConfig,
    pub methods: Vec<Method>,
    pub cue: Option<CueInput>,
    pub workflow: WorkflowConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            cutoff: crate::synth::default_cutoff(),
            window_end: crate::synth::default_window_end(),
            gap_targets: 20,
            pair_targets: 10,
            gold_limit: 50,
            seeds: 1,
            seed: 42,
            hypotheses_per_target: 3,
            budget: RetrievalBudget { exemplars: 8, boundary: 8, diverse: 0, query: 4 },
            prefilter_threshold: 0.45,
            duplicate_threshold: 0.95,
            pool: PoolConfig::default(),
            methods: Method::ALL.to_vec(),
            cue: None,
            workflow: WorkflowConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), RetroError> {
        let bad = |m: &str| Err(RetroError::Config(m.to_string()));
        if self.window_end <= self.cutoff {
            return bad("window_end must be after cutoff");
        }
        if self.gap_targets + self.pair_targets == 0 {
            return bad("at least one gap or pair target is required");
        }
        if self.seeds == 0 || self.hypotheses_per_target == 0 || self.gold_limit == 0 {
            return bad("seeds, hypotheses_per_target and gold_limit must be at least 1");
        }
        for (name, t) in
            [("prefilter_threshold", self.prefilter_threshold), ("duplicate_threshold", self.duplicate_threshold)]
        {
            if !(0.0..=1.0).contains(&t) {
                return Err(RetroError::Config(format!("{name} {t} is outside [0,1]")));
            }
        }
        if self.pool.per_channel == 0 || self.pool.keep == 0 {
            return bad("pool sizes must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("no methods selected");
        }
        Ok(())
    }

    pub fn seed_values(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

/// Everything the benchmark reads. `future` holds every post-cutoff paper
/// in the window, with primary-space vectors row-aligned to it.
pub struct BenchmarkInputs<'a> {
    pub snapshot: &'a Snapshot,
    pub future: &'a [PaperRecord],
    pub future_vectors: &'a Matrix,
    pub generator: &'a dyn Generator,
    pub encoder: &'a dyn EmbeddingService,
    pub lexicon: &'a FieldLexicon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFailure {
    pub target_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub metrics: MethodMetrics,
    /// Retained rows ordered by seed then gold id.
    pub rows: Vec<TaskRow>,
    pub failed_targets: Vec<TargetFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub snapshot_id: String,
    pub config: BenchmarkConfig,
    pub generator: Capabilities,
    pub encoder: String,
    pub targets: Vec<TargetSpec>,
    pub gold: GoldAssignment,
    pub methods: Vec<MethodReport>,
    pub leakage: LeakageReport,
}

impl BenchmarkReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

pub struct BenchmarkRun {
    pub report: BenchmarkReport,
    pub generations: Vec<Generation>,
    pub packets: Vec<ReviewPacket>,
}

struct HypothesisEval {
    historical: Vec<MatchCandidate>,
    future: Vec<MatchCandidate>,
    cue_alignment: Option<f64>,
}

const EMBED_BATCH: usize = 64;
const PACKET_REFS: usize = 5;

/// Ranked gap targets first, then cluster pairs derived from the same regions.
pub fn benchmark_targets(snapshot: &Snapshot, config: &BenchmarkConfig) -> Vec<TargetSpec> {
    let ranked = snapshot.top_gaps(config.gap_targets);
    let mut targets = gap_targets(&ranked);
    targets.extend(derive_cluster_pairs(&ranked, snapshot.clusters(), config.pair_targets));
    targets
}

/// Target index each target's tasks draw generations from under the random control.
pub fn shuffled_targets(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

#[allow(clippy::too_many_arguments)]
fn rows_for(
    method: Method,
    seed: u64,
    gold_id: &str,
    target_id: &str,
    gen_index: usize,
    generation: &Generation,
    evals: &[HypothesisEval],
    cue_active: bool,
) -> Vec<TaskRow> {
    evals
        .iter()
        .enumerate()
        .map(|(h, e)| {
            let gold_rank = e.future.iter().position(|c| c.paper_id == gold_id).map(|p| p + 1);
            let rr = gold_rank.map_or(0.0, |r| 1.0 / r as f64);
            let best_historical = e.historical.iter().min_by(|x, y| strength_order(x, y)).cloned();
            let best_future_nongold =
                e.future.iter().filter(|c| c.paper_id != gold_id).min_by(|x, y| strength_order(x, y)).cloned();
            let label_of = |c: &Option<MatchCandidate>| c.as_ref().map_or(MatchLabel::NoMatch, |c| c.label);
            TaskRow {
                method: method.to_string(),
                seed,
                gold_id: gold_id.to_string(),
                target_id: target_id.to_string(),
                hypothesis_id: Some(format!("{}:{}:h{h}", generation.target_id, gen_index)),
                gold_rank,
                rr,
                cue_alignment: e.cue_alignment,
                cue_rr: cue_active.then(|| rr * e.cue_alignment.unwrap_or(0.0)),
                recovery: recovery_label(label_of(&best_historical), gold_rank, label_of(&best_future_nongold)),
                best_historical,
                best_future_nongold,
                hit_top10: gold_rank.is_some_and(|r| r <= 10),
                future_hit: e.future.iter().any(|c| c.label != MatchLabel::NoMatch),
                mean_idea_score: generation.scores.get(h).map(|s| s.mean()),
            }
        })
        .collect()
}

fn refs(cands: &[MatchCandidate], titles: &BTreeMap<&str, &str>) -> Vec<RetrievalRef> {
    cands
        .iter()
        .take(PACKET_REFS)
        .map(|c| RetrievalRef {
            paper_id: c.paper_id.clone(),
            title: titles.get(c.paper_id.as_str()).copied().unwrap_or_default().to_string(),
            label: c.label.to_string(),
            score: c.s,
        })
        .collect()
}

/// Generate, evaluate and aggregate every configured method.
pub fn run_benchmark(inputs: &BenchmarkInputs<'_>, config: &BenchmarkConfig) -> Result<BenchmarkRun, RetroError> {
    config.validate()?;
    let snapshot = inputs.snapshot;
    let targets = benchmark_targets(snapshot, config);
    if targets.is_empty() {
        return Err(RetroError::NoTargets);
    }
    let cue_vec = match &config.cue {
        Some(cue) => Some(cue_vector(snapshot, cue, inputs.encoder)?),
        None => None,
    };
    let cue_active = cue_vec.is_some();
    let gold_cfg = GoldConfig {
        duplicate_threshold: config.duplicate_threshold,
        prefilter_threshold: config.prefilter_threshold,
        gold_limit: config.gold_limit,
    };
    let gold =
        assign_gold_tasks(snapshot, inputs.future, inputs.future_vectors, &targets, cue_vec.as_deref(), &gold_cfg)?;
    tracing::info!(
        targets = targets.len(),
        tasks = gold.tasks.len(),
        excluded = gold.excluded.len(),
        "gold tasks assigned"
    );

    let forbidden: HashSet<String> = inputs.future.iter().map(|p| p.paper_id.clone()).collect();
    let guard = LeakageGuard::new(inputs.generator, &forbidden);
    let ctx = MethodContext {
        snapshot,
        generator: &guard,
        encoder: inputs.encoder,
        budget: config.budget,
        cue: config.cue.as_ref(),
        n: config.hypotheses_per_target,
        workflow: &config.workflow,
    };

    let mut methods: Vec<Method> = Vec::new();
    for m in &config.methods {
        if !methods.contains(m) {
            methods.push(*m);
        }
    }
    let sources: Vec<Method> = methods.iter().map(|m| m.source()).collect::<BTreeSet<_>>().into_iter().collect();
    let jobs: Vec<(Method, usize)> = sources.iter().flat_map(|&m| (0..targets.len()).map(move |t| (m, t))).collect();
    let generations: Vec<Generation> = jobs.par_iter().map(|&(m, t)| generate(m, &targets[t], &ctx)).collect();
    let gen_index: BTreeMap<(Method, usize), usize> = jobs.iter().enumerate().map(|(i, &k)| (k, i)).collect();

    let mut leakage =
        LeakageReport { forbidden_ids: forbidden.len(), violations: guard.violations(), ..Default::default() };
    leakage.generator_calls_scanned = guard.calls();
    for g in &generations {
        for (what, value) in
            [("pack", g.pack.as_ref().map(serde_json::to_value)), ("brief", g.brief.as_ref().map(serde_json::to_value))]
        {
            if let Some(v) = value {
                leakage.artifacts_scanned += 1;
                leakage.violations.extend(
                    find_forbidden(&v?, &forbidden)
                        .into_iter()
                        .map(|id| format!("{what} for {} contains {id}", g.target_id)),
                );
            }
        }
    }

    let hist_index = SideIndex::new(Side::Historical, snapshot.papers(), &snapshot.embeddings, inputs.lexicon)?;
    let fut_index = SideIndex::new(Side::Future, inputs.future, inputs.future_vectors, inputs.lexicon)?;
    let flat: Vec<(usize, usize)> =
        generations.iter().enumerate().flat_map(|(g, gen)| (0..gen.hypotheses.len()).map(move |h| (g, h))).collect();
    let texts: Vec<String> = flat.iter().map(|&(g, h)| generations[g].hypotheses[h].text()).collect();
    let vectors = fetch_embeddings(inputs.encoder, &texts, EMBED_BATCH)?;
    if let Some(v) = vectors.iter().find(|v| v.len() != snapshot.embeddings.cols()) {
        return Err(RetroError::Dimension { expected: snapshot.embeddings.cols(), found: v.len() });
    }
    let evaluated: Vec<HypothesisEval> = flat
        .par_iter()
        .zip(&texts)
        .zip(&vectors)
        .map(|((&(g, h), text_in), v)| {
            let v: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
            let fp = hypothesis_fingerprint(&generations[g].hypotheses[h], inputs.lexicon);
            Ok(HypothesisEval {
                historical: retrieve_candidates(&hist_index, &fp, text_in, &v, inputs.encoder, &config.pool)?,
                future: retrieve_candidates(&fut_index, &fp, text_in, &v, inputs.encoder, &config.pool)?,
                cue_alignment: cue_vec.as_ref().map(|c| cosine_to_unit(dot(&unit(&v), c))),
            })
        })
        .collect::<Result<_, RetroError>>()?;
    let mut evals: Vec<Vec<HypothesisEval>> = generations.iter().map(|_| Vec::new()).collect();
    for (&(g, _), e) in flat.iter().zip(evaluated) {
        evals[g].push(e);
    }

    let target_pos: BTreeMap<String, usize> = targets.iter().enumerate().map(|(i, t)| (t.target_id(), i)).collect();
    let mut tasks = gold.tasks.clone();
    tasks.sort_by(|a, b| a.future_id.cmp(&b.future_id));
    let titles: BTreeMap<&str, &str> =
        snapshot.papers().iter().chain(inputs.future).map(|p| (p.paper_id.as_str(), p.title.as_str())).collect();

    let mut reports = Vec::new();
    let mut packets = Vec::new();
    for &method in &methods {
        let mut rows = Vec::new();
        for seed in config.seed_values() {
            let perm = (method == Method::RandomTargetControl).then(|| shuffled_targets(targets.len(), seed));
            for task in &tasks {
                let t = target_pos[&task.target_id];
                let src = perm.as_ref().map_or(t, |p| p[t]);
                let g = gen_index[&(method.source(), src)];
                let generation = &generations[g];
                let candidates =
                    rows_for(method, seed, &task.future_id, &task.target_id, g, generation, &evals[g], cue_active);
                let Some(best) = retain_task_best(&candidates, cue_active) else {
                    rows.push(TaskRow::empty(method.as_str(), seed, &task.future_id, &task.target_id, cue_active));
                    continue;
                };
                let h = candidates.iter().position(|r| std::ptr::eq(r, best)).expect("retained row is an input");
                if let Some(pack) = &generation.pack {
                    let key = TaskKey { method: method.to_string(), seed, gold_id: task.future_id.clone() };
                    packets.push(ReviewPacket {
                        open: OpenSection {
                            packet_id: key.packet_id(),
                            target: targets[src].clone(),
                            target_id: targets[src].target_id(),
                            hypothesis: generation.hypotheses[h].clone(),
                            cue: pack.cue.clone(),
                            audit: generation.brief.as_ref().map(|b| AuditSummary {
                                support_fraction: b.audit.support_fraction,
                                missing_facets: b.audit.missing_facets.clone(),
                                unsupported_claims: b.audit.unsupported_claims.clone(),
                                iterations: b.iterations,
                            }),
                            pack: PackSummary::of(pack, PACK_SUMMARY_ITEMS),
                            top_historical: refs(&evals[g][h].historical, &titles),
                        },
                        sealed: SealedSection {
                            task: Some(key),
                            agent_scores: generation.scores[h].clone(),
                            top_future: refs(&evals[g][h].future, &titles),
                            recovery_label: Some(best.recovery.to_string()),
                            gold_rank: best.gold_rank,
                        },
                    });
                }
                rows.push(best.clone());
            }
        }
        let failed_targets = (0..targets.len())
            .filter_map(|t| {
                let g = &generations[gen_index[&(method.source(), t)]];
                g.error.as_ref().map(|e| TargetFailure { target_id: g.target_id.clone(), error: e.clone() })
            })
            .collect();
        reports.push(MethodReport { method, metrics: compute_metrics(&rows, cue_active)?, rows, failed_targets });
    }
    leakage.violations.sort();
    leakage.violations.dedup();
    if !leakage.clean() {
        tracing::error!(violations = leakage.violations.len(), "leakage detected");
    }

    Ok(BenchmarkRun {
        report: BenchmarkReport {
            snapshot_id: snapshot.snapshot_id.clone(),
            config: config.clone(),
            generator: inputs.generator.capabilities(),
            encoder: inputs.encoder.name().to_string(),
            targets,
            gold,
            methods: reports,
            leakage,
        },
        generations,
        packets,
    })
}

const TSV_COLUMNS: [&str; 10] = [
    "method",
    "tasks",
    "recall_at_1",
    "recall_at_5",
    "recall_at_10",
    "mrr",
    "gold_recovered_rate",
    "historical_confound_rate",
    "future_neighbor_only_rate",
    "not_recovered_rate",
];

pub fn metrics_tsv(report: &BenchmarkReport) -> String {
    let cue = report.methods.iter().any(|m| m.metrics.cue.is_some());
    let mut out = TSV_COLUMNS.join("\t");
    if cue {
        out.push_str("\tcue_recall_at_1\tcue_recall_at_5\tcue_recall_at_10\tcue_mrr");
    }
    out.push('\n');
    for r in &report.methods {
        let m = &r.metrics;
        let _ = write!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.method,
            m.tasks,
            m.recall_at_1,
            m.recall_at_5,
            m.recall_at_10,
            m.mrr,
            m.gold_recovered_rate,
            m.historical_confound_rate,
            m.future_neighbor_only_rate,
            m.not_recovered_rate
        );
        if let Some(c) = &m.cue {
            let _ = write!(out, "\t{:.6}\t{:.6}\t{:.6}\t{:.6}", c.recall_at_1, c.recall_at_5, c.recall_at_10, c.mrr);
        }
        out.push('\n');
    }
    out
}

/// Human-readable report: a header, then one block per method.
pub fn render_text(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "snapshot {}", report.snapshot_id);
    let _ =
        writeln!(out, "generator {} ({}), encoder {}", report.generator.name, report.generator.model, report.encoder);
    let _ = writeln!(
        out,
        "targets {}, gold tasks {}, near-duplicates excluded {}, seeds {}",
        report.targets.len(),
        report.gold.tasks.len(),
        report.gold.excluded.len(),
        report.config.seeds
    );
    let _ = writeln!(
        out,
        "leakage: {} generator calls and {} artifacts scanned, {} violation(s)",
        report.leakage.generator_calls_scanned,
        report.leakage.artifacts_scanned,
        report.leakage.violations.len()
    );
    for r in &report.methods {
        let m = &r.metrics;
        let _ = writeln!(out, "\n[{}]", r.method);
        let _ = writeln!(out, "  tasks                     {}", m.tasks);
        let _ = writeln!(
            out,
            "  gold recall@1/5/10        {:.4} / {:.4} / {:.4}",
            m.recall_at_1, m.recall_at_5, m.recall_at_10
        );
        let _ = writeln!(out, "  gold MRR                  {:.4}", m.mrr);
        let _ = writeln!(out, "  gold_recovered            {:.4}", m.gold_recovered_rate);
        let _ = writeln!(out, "  historical_confound       {:.4}", m.historical_confound_rate);
        let _ = writeln!(out, "  future_neighbor_only      {:.4}", m.future_neighbor_only_rate);
        let _ = writeln!(out, "  not_recovered             {:.4}", m.not_recovered_rate);
        if let Some(c) = &m.cue {
            let _ = writeln!(
                out,
                "  cue recall@1/5/10         {:.4} / {:.4} / {:.4}",
                c.recall_at_1, c.recall_at_5, c.recall_at_10
            );
            let _ = writeln!(out, "  cue MRR                   {:.4}", c.mrr);
        }
        if !r.failed_targets.is_empty() {
            let _ = writeln!(out, "  failed targets            {}", r.failed_targets.len());
        }
    }
    out
}

/// Writes `report.json`, `report.txt` and `metrics.tsv` into `dir`.
pub fn write_report(report: &BenchmarkReport, dir: &Path) -> Result<Vec<PathBuf>, RetroError> {
    std::fs::create_dir_all(dir)?;
    let files = [
        ("report.json", serde_json::to_vec_pretty(report)?),
        ("report.txt", render_text(report).into_bytes()),
        ("metrics.tsv", metrics_tsv(report).into_bytes()),
    ];
    files
        .into_iter()
        .map(|(name, bytes)| {
            let path = dir.join(name);
            std::fs::write(&path, bytes)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_is_seeded() {
        assert_eq!(shuffled_targets(10, 3), shuffled_targets(10, 3));
        let mut p = shuffled_targets(10, 4);
        p.sort();
        assert_eq!(p, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(BenchmarkConfig::default().validate().is_ok());
        assert!(BenchmarkConfig { prefilter_threshold: 1.5, ..Default::default() }.validate().is_err());
        assert!(BenchmarkConfig { seeds: 0, ..Default::default() }.validate().is_err());
        assert!(BenchmarkConfig { methods: vec![], ..Default::default() }.validate().is_err());
        let cfg: BenchmarkConfig = serde_json::from_str(r#"{"methods":["heuristic_bridge"],"gold_limit":5}"#).unwrap();
        assert_eq!((cfg.gold_limit, cfg.pair_targets, cfg.methods.len()), (5, 10, 1));
    }
}
