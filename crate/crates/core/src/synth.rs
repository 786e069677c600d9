//! Seeded synthetic corpora for offline runs, benchmarks and tests.
//!
//! Each topic owns a small vocabulary organized by fingerprint field, so
//! generated abstracts exercise lexical retrieval, field matching and
//! embedding-space structure at once.

use chrono::NaiveDate;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{impute_date, Corpus, DateParts, PaperRecord};

/// Per-field term lists for one topic.
#[derive(Debug, Clone, Copy)]
pub struct Topic {
    pub name: &'static str,
    pub material: &'static [&'static str],
    pub payload: &'static [&'static str],
    pub disease: &'static [&'static str],
    pub mechanism: &'static [&'static str],
    pub targeting: &'static [&'static str],
    pub model: &'static [&'static str],
    pub route: &'static [&'static str],
    pub outcome: &'static [&'static str],
    /// Topic-specific words outside any field.
    pub extra: &'static [&'static str],
}

impl Topic {
    pub fn fields(&self) -> [(&'static str, &'static [&'static str]); 8] {
        [
            ("material", self.material),
            ("payload", self.payload),
            ("disease", self.disease),
            ("mechanism", self.mechanism),
            ("targeting", self.targeting),
            ("model", self.model),
            ("route", self.route),
            ("outcome", self.outcome),
        ]
    }

    fn all_terms(&self) -> Vec<&'static str> {
        self.fields().iter().flat_map(|(_, t)| t.iter().copied()).chain(self.extra.iter().copied()).collect()
    }
}

pub const TOPICS: [Topic; 8] = [
    Topic {
        name: "depot hydrogels",
        material: &["chitosan hydrogel", "methylcellulose gel"],
        payload: &["doxorubicin", "cisplatin"],
        disease: &["bladder cancer", "tumor recurrence"],
        mechanism: &["sustained release", "depot formation"],
        targeting: &["local retention"],
        model: &["orthotopic mouse"],
        route: &["intravesical instillation"],
        outcome: &["tumor suppression"],
        extra: &["swelling", "crosslinking", "injectable", "viscosity", "gelation"],
    },
    Topic {
        name: "antimicrobial coatings",
        material: &["silver nanoparticle", "copper oxide"],
        payload: &["antimicrobial peptide", "vancomycin"],
        disease: &["biofilm infection", "implant infection"],
        mechanism: &["membrane disruption", "ion release"],
        targeting: &["surface adhesion"],
        model: &["rabbit implant"],
        route: &["surface coating"],
        outcome: &["bacterial clearance"],
        extra: &["staphylococcus", "catheter", "zone", "inhibition", "colonization"],
    },
    Topic {
        name: "lipid vaccines",
        material: &["lipid nanoparticle", "ionizable lipid"],
        payload: &["mrna", "adjuvant"],
        disease: &["influenza", "viral infection"],
        mechanism: &["endosomal escape", "antigen expression"],
        targeting: &["lymph node targeting"],
        model: &["balb mouse"],
        route: &["intramuscular injection"],
        outcome: &["antibody titer"],
        extra: &["immunization", "booster", "neutralizing", "translation", "encapsulation"],
    },
    Topic {
        name: "bone scaffolds",
        material: &["hydroxyapatite scaffold", "calcium phosphate"],
        payload: &["bmp2", "growth factor"],
        disease: &["bone defect", "osteoporosis"],
        mechanism: &["osteogenic differentiation", "mineralization"],
        targeting: &["matrix binding"],
        model: &["rat calvarial"],
        route: &["surgical implantation"],
        outcome: &["bone regeneration"],
        extra: &["porosity", "printing", "osteoblast", "stiffness", "trabecular"],
    },
    Topic {
        name: "stealth carriers",
        material: &["peg coating", "erythrocyte membrane"],
        payload: &["paclitaxel", "sirna"],
        disease: &["metastatic cancer", "solid tumor"],
        mechanism: &["immune evasion", "prolonged circulation"],
        targeting: &["cd47 display"],
        model: &["xenograft mouse"],
        route: &["intravenous injection"],
        outcome: &["biodistribution"],
        extra: &["phagocytic", "clearance", "opsonization", "corona", "halflife"],
    },
    Topic {
        name: "responsive release",
        material: &["mesoporous silica", "polymeric micelle"],
        payload: &["curcumin", "camptothecin"],
        disease: &["inflammation", "colitis"],
        mechanism: &["ph responsive", "ros responsive"],
        targeting: &["folate receptor"],
        model: &["dss colitis"],
        route: &["oral delivery"],
        outcome: &["controlled release"],
        extra: &["trigger", "cleavable", "gatekeeper", "acidic", "oxidative"],
    },
    Topic {
        name: "photothermal theranostics",
        material: &["gold nanorod", "copper sulfide"],
        payload: &["photosensitizer", "indocyanine green"],
        disease: &["melanoma", "skin cancer"],
        mechanism: &["photothermal conversion", "hyperthermia"],
        targeting: &["enhanced permeability"],
        model: &["b16 mouse"],
        route: &["topical application"],
        outcome: &["tumor ablation"],
        extra: &["laser", "infrared", "imaging", "absorbance", "irradiation"],
    },
    Topic {
        name: "neural delivery",
        material: &["polymersome", "exosome"],
        payload: &["neurotrophic factor", "antisense oligonucleotide"],
        disease: &["parkinson disease", "glioblastoma"],
        mechanism: &["transcytosis", "receptor mediated uptake"],
        targeting: &["transferrin receptor"],
        model: &["primate model"],
        route: &["intranasal delivery"],
        outcome: &["brain penetration"],
        extra: &["barrier", "neuronal", "cerebrospinal", "striatum", "glial"],
    },
];

const GENERIC: &[&str] = &[
    "study",
    "novel",
    "approach",
    "system",
    "results",
    "demonstrated",
    "platform",
    "formulation",
    "performance",
    "evaluated",
    "significant",
    "improved",
    "characterized",
    "efficacy",
    "design",
];

/// Field lexicon used for fingerprint extraction: all topic field terms.
pub fn synthetic_lexicon() -> Vec<(&'static str, Vec<&'static str>)> {
    let mut fields: Vec<(&'static str, Vec<&'static str>)> =
        TOPICS[0].fields().iter().map(|(f, _)| (*f, Vec::new())).collect();
    for t in &TOPICS {
        for (slot, (_, terms)) in fields.iter_mut().zip(t.fields()) {
            slot.1.extend_from_slice(terms);
        }
    }
    fields
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_papers: usize,
    pub n_topics: usize,
    pub seed: u64,
    /// Probability that a paper mixes in a second topic.
    pub mix_rate: f64,
    pub first_year: i32,
    pub last_year: i32,
    pub words: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_papers: 500, n_topics: 6, seed: 42, mix_rate: 0.15, first_year: 2008, last_year: 2025, words: 36 }
    }
}

fn date_for(rng: &mut ChaCha8Rng, year: i32) -> DateParts {
    match rng.random_range(0..10) {
        0 => DateParts::year(year),
        1 | 2 => DateParts::month(year, rng.random_range(1..=12)),
        _ => DateParts::full(year, rng.random_range(1..=12), rng.random_range(1..=28)),
    }
}

fn record(id: String, title: String, abstract_text: String, parts: DateParts, labels: Vec<String>) -> PaperRecord {
    PaperRecord {
        paper_id: id,
        title,
        abstract_text,
        doi: None,
        keywords: Vec::new(),
        subject_labels: labels,
        language: Some("en".into()),
        resolved_date: impute_date(&parts).expect("generated dates are valid"),
        date_parts: parts,
    }
}

/// Words drawn mostly from `main`, some from `mix`, the rest generic.
fn compose(rng: &mut ChaCha8Rng, main: &Topic, mix: Option<&Topic>, n: usize) -> Vec<&'static str> {
    let main_terms = main.all_terms();
    let mix_terms = mix.map(Topic::all_terms);
    (0..n)
        .map(|_| {
            let roll: f64 = rng.random();
            match &mix_terms {
                Some(m) if roll < 0.3 => *m.choose(rng).unwrap(),
                _ if roll > 0.82 => *GENERIC.choose(rng).unwrap(),
                _ => *main_terms.choose(rng).unwrap(),
            }
        })
        .collect()
}

fn title_case(words: &[&str]) -> String {
    let s = words.join(" ");
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => s,
    }
}

/// Topic-mixture corpus with years spread uniformly over the configured range.
pub fn synthetic_corpus(cfg: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let topics = &TOPICS[..cfg.n_topics.clamp(1, TOPICS.len())];
    let papers = (0..cfg.n_papers)
        .map(|i| {
            let t = i % topics.len();
            let mix = (rng.random::<f64>() < cfg.mix_rate).then(|| {
                let m = rng.random_range(0..topics.len());
                &topics[m]
            });
            let title = title_case(&compose(&mut rng, &topics[t], None, 6));
            let body = compose(&mut rng, &topics[t], mix, cfg.words).join(" ");
            let year = rng.random_range(cfg.first_year..=cfg.last_year);
            let parts = date_for(&mut rng, year);
            let mut labels = vec![topics[t].name.to_string()];
            if let Some(m) = mix {
                labels.push(m.name.to_string());
            }
            record(format!("syn-{i:05}"), title, format!("{body}."), parts, labels)
        })
        .collect();
    Corpus::from_papers(papers).expect("generated ids are unique")
}

/// A corpus with a planted bridge between topics 0 and 1.
///
/// Historical papers cover every topic in `0..n_topics` and never combine
/// topics 0 and 1. The future side holds one gold paper that does, plus
/// single-topic future distractors. Returns the corpus and the gold id.
pub fn planted_bridge_corpus(seed: u64, per_topic: usize, n_topics: usize) -> (Corpus, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = &TOPICS[..n_topics.clamp(3, TOPICS.len())];
    let mut papers = Vec::new();
    for i in 0..per_topic * topics.len() {
        let t = i % topics.len();
        let title = title_case(&compose(&mut rng, &topics[t], None, 6));
        let body = compose(&mut rng, &topics[t], None, 30).join(" ");
        let parts = DateParts::full(rng.random_range(2010..=2019), rng.random_range(1..=12), rng.random_range(1..=28));
        papers.push(record(format!("hist-{i:04}"), title, format!("{body}."), parts, vec![topics[t].name.into()]));
    }
    for i in 0..12 * topics.len() {
        let t = i % topics.len();
        let title = title_case(&compose(&mut rng, &topics[t], None, 6));
        let body = compose(&mut rng, &topics[t], None, 30).join(" ");
        let parts = DateParts::full(rng.random_range(2020..=2025), rng.random_range(1..=12), rng.random_range(1..=28));
        papers.push(record(format!("fut-{i:04}"), title, format!("{body}."), parts, vec![topics[t].name.into()]));
    }
    let (a, b) = (&topics[0], &topics[1]);
    let gold_terms: Vec<&str> = a.all_terms().into_iter().chain(b.all_terms()).collect();
    let gold = record(
        "fut-gold".into(),
        format!("{} {} combined with {} {}", a.material[0], a.mechanism[0], b.material[0], b.disease[0]),
        format!("{}.", gold_terms.join(" ")),
        DateParts::full(2022, 6, 1),
        vec![a.name.into(), b.name.into()],
    );
    papers.push(gold);
    (Corpus::from_papers(papers).expect("unique ids"), "fut-gold".to_string())
}

pub fn default_cutoff() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 12, 31).unwrap()
}

pub fn default_window_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2026, 1, 1).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::temporal_split;

    #[test]
    fn deterministic_and_spans_cutoff() {
        let cfg = SynthConfig { n_papers: 200, ..Default::default() };
        let a = synthetic_corpus(&cfg);
        let b = synthetic_corpus(&cfg);
        assert_eq!(a.papers(), b.papers());
        let split = temporal_split(&a, default_cutoff(), default_window_end()).unwrap();
        assert!(split.historical_ids.len() > 80 && !split.future_ids.is_empty());
        assert!(a.papers().iter().any(|p| p.date_parts.month.is_none()));
    }

    #[test]
    fn planted_gold_is_future_and_mixed() {
        let (c, gold) = planted_bridge_corpus(1, 20, 5);
        let split = temporal_split(&c, default_cutoff(), default_window_end()).unwrap();
        assert!(split.future_ids.contains(&gold));
        assert_eq!(split.historical_ids.len(), 100);
        let g = c.get(&gold).unwrap();
        assert!(g.abstract_text.contains("chitosan hydrogel") && g.abstract_text.contains("silver nanoparticle"));
    }

    #[test]
    fn lexicon_has_every_field() {
        let lex = synthetic_lexicon();
        assert_eq!(lex.len(), 8);
        assert!(lex.iter().all(|(_, terms)| terms.len() >= 8));
    }
}
