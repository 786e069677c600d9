//! Document ingestion, conservative date imputation and temporal splits.
//!
//! Records arrive as newline-delimited JSON, one document per line. Each
//! accepted record gets a resolved calendar date: missing month or day is
//! pushed to the last day of the most specific known period, so a record
//! with an uncertain date can only ever land *later* than its true date.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid {field}: {value}")]
    InvalidDate { field: &'static str, value: i64 },
    #[error("day given without month")]
    DayWithoutMonth,
    #[error("cutoff {cutoff} must precede window end {window_end}")]
    InvalidWindow { cutoff: NaiveDate, window_end: NaiveDate },
    #[error("historical side of the split is empty; nothing to analyze")]
    EmptyHistorical,
    #[error("unknown paper id {0}")]
    UnknownPaper(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed corpus file line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

/// Publication date components as exported; month and day may be missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateParts {
    pub year: i32,
    pub month: Option<u32>,
    pub day: Option<u32>,
}

impl DateParts {
    pub fn year(year: i32) -> Self {
        Self { year, month: None, day: None }
    }

    pub fn month(year: i32, month: u32) -> Self {
        Self { year, month: Some(month), day: None }
    }

    pub fn full(year: i32, month: u32, day: u32) -> Self {
        Self { year, month: Some(month), day: Some(day) }
    }
}

fn last_day_of_month(year: i32, month: u32) -> Option<NaiveDate> {
    let (ny, nm) = if month == 12 { (year + 1, 1) } else { (year, month + 1) };
    NaiveDate::from_ymd_opt(ny, nm, 1).and_then(|d| d.pred_opt())
}

/// Resolve partial date components to the latest calendar date they allow.
pub fn impute_date(parts: &DateParts) -> Result<NaiveDate, CorpusError> {
    let invalid_year = CorpusError::InvalidDate { field: "year", value: parts.year as i64 };
    match (parts.month, parts.day) {
        (None, Some(_)) => Err(CorpusError::DayWithoutMonth),
        (None, None) => NaiveDate::from_ymd_opt(parts.year, 12, 31).ok_or(invalid_year),
        (Some(m), day) => {
            if !(1..=12).contains(&m) {
                return Err(CorpusError::InvalidDate { field: "month", value: m as i64 });
            }
            let last = last_day_of_month(parts.year, m).ok_or(invalid_year)?;
            match day {
                None => Ok(last),
                Some(d) => NaiveDate::from_ymd_opt(parts.year, m, d)
                    .ok_or(CorpusError::InvalidDate { field: "day", value: d as i64 }),
            }
        }
    }
}

/// One line of the corpus file before validation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default)]
    pub paper_id: Option<String>,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default, rename = "abstract")]
    pub abstract_text: Option<String>,
    #[serde(default)]
    pub doi: Option<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub subject_labels: Vec<String>,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub year: Option<i32>,
    #[serde(default)]
    pub month: Option<u32>,
    #[serde(default)]
    pub day: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub doi: Option<String>,
    pub keywords: Vec<String>,
    pub subject_labels: Vec<String>,
    pub language: Option<String>,
    pub date_parts: DateParts,
    pub resolved_date: NaiveDate,
}

impl PaperRecord {
    /// Canonical document text: title and abstract joined by one space.
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// 1-based position of the record in the input stream.
    pub record: usize,
    pub paper_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<Diagnostic>,
}

fn normalize_labels(labels: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    labels.iter().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty() && seen.insert(l.clone())).collect()
}

fn validate(raw: RawRecord) -> Result<PaperRecord, String> {
    let paper_id = raw.paper_id.map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).ok_or("missing paper_id")?;
    let title = raw.title.map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).ok_or("missing or empty title")?;
    let year = raw.year.ok_or("missing year")?;
    let date_parts = DateParts { year, month: raw.month, day: raw.day };
    let resolved_date = impute_date(&date_parts).map_err(|e| e.to_string())?;
    Ok(PaperRecord {
        paper_id,
        title,
        abstract_text: raw.abstract_text.unwrap_or_default().trim().to_string(),
        doi: raw.doi.filter(|d| !d.is_empty()),
        keywords: raw.keywords,
        subject_labels: normalize_labels(&raw.subject_labels),
        language: raw.language,
        date_parts,
        resolved_date,
    })
}

/// An immutable, insertion-ordered collection of validated papers.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    papers: Vec<PaperRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Validate and deduplicate raw records. Rejections never abort ingestion.
    pub fn ingest<I>(records: I) -> (Self, IngestReport)
    where
        I: IntoIterator<Item = RawRecord>,
    {
        let mut builder = CorpusBuilder::default();
        for raw in records {
            builder.push(raw);
        }
        builder.finish()
    }

    /// Ingest newline-delimited JSON. Malformed lines are rejected with a
    /// diagnostic; only I/O failures are errors.
    pub fn ingest_jsonl<R: BufRead>(reader: R) -> Result<(Self, IngestReport), CorpusError> {
        let mut builder = CorpusBuilder::default();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<RawRecord>(&line) {
                Ok(raw) => builder.push(raw),
                Err(e) => builder.reject(None, format!("malformed record: {e}")),
            }
        }
        Ok(builder.finish())
    }

    pub fn from_papers(papers: Vec<PaperRecord>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(papers.len());
        for (i, p) in papers.iter().enumerate() {
            if index.insert(p.paper_id.clone(), i).is_some() {
                return Err(CorpusError::UnknownPaper(format!("duplicate id {}", p.paper_id)));
            }
        }
        Ok(Self { papers, index })
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    pub fn papers(&self) -> &[PaperRecord] {
        &self.papers
    }

    pub fn get(&self, id: &str) -> Option<&PaperRecord> {
        self.index.get(id).map(|&i| &self.papers[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> Vec<String> {
        self.papers.iter().map(|p| p.paper_id.clone()).collect()
    }

    /// Papers with the given ids, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<Corpus, CorpusError> {
        let papers = ids
            .iter()
            .map(|id| self.get(id).cloned().ok_or_else(|| CorpusError::UnknownPaper(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Corpus::from_papers(papers)
    }

    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(File::create(dir.join("papers.jsonl"))?);
        for p in &self.papers {
            serde_json::to_writer(&mut out, p).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let reader = BufReader::new(File::open(dir.join("papers.jsonl"))?);
        let mut papers = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            papers.push(serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?);
        }
        Corpus::from_papers(papers)
    }
}

#[derive(Default)]
struct CorpusBuilder {
    papers: Vec<PaperRecord>,
    index: HashMap<String, usize>,
    report: IngestReport,
    seen: usize,
}

impl CorpusBuilder {
    fn push(&mut self, raw: RawRecord) {
        self.seen += 1;
        let id_hint = raw.paper_id.clone();
        match validate(raw) {
            Err(reason) => self.report.rejected.push(Diagnostic { record: self.seen, paper_id: id_hint, reason }),
            Ok(paper) => {
                if self.index.contains_key(&paper.paper_id) {
                    self.report.rejected.push(Diagnostic {
                        record: self.seen,
                        paper_id: Some(paper.paper_id),
                        reason: "duplicate paper_id".into(),
                    });
                } else {
                    self.index.insert(paper.paper_id.clone(), self.papers.len());
                    self.papers.push(paper);
                }
            }
        }
    }

    fn reject(&mut self, paper_id: Option<String>, reason: String) {
        self.seen += 1;
        self.report.rejected.push(Diagnostic { record: self.seen, paper_id, reason });
    }

    fn finish(mut self) -> (Corpus, IngestReport) {
        self.report.accepted = self.papers.len();
        (Corpus { papers: self.papers, index: self.index }, self.report)
    }
}

/// Historical/future partition of a corpus around a cutoff date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub cutoff: NaiveDate,
    pub window_end: NaiveDate,
    pub historical_ids: Vec<String>,
    pub future_ids: Vec<String>,
    /// Records dated after `window_end`; kept in storage, used on neither side.
    pub excluded_ids: Vec<String>,
}

/// Partition by resolved date: `<= cutoff` is historical, `(cutoff, window_end]`
/// is future, anything later is excluded.
pub fn temporal_split(corpus: &Corpus, cutoff: NaiveDate, window_end: NaiveDate) -> Result<CorpusSplit, CorpusError> {
    if cutoff >= window_end {
        return Err(CorpusError::InvalidWindow { cutoff, window_end });
    }
    let mut split = CorpusSplit {
        cutoff,
        window_end,
        historical_ids: Vec::new(),
        future_ids: Vec::new(),
        excluded_ids: Vec::new(),
    };
    for p in corpus.papers() {
        let d = p.resolved_date;
        if d <= cutoff {
            split.historical_ids.push(p.paper_id.clone());
        } else if d <= window_end {
            split.future_ids.push(p.paper_id.clone());
        } else {
            split.excluded_ids.push(p.paper_id.clone());
        }
    }
    if split.historical_ids.is_empty() {
        return Err(CorpusError::EmptyHistorical);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn raw(id: &str, title: &str, year: Option<i32>) -> RawRecord {
        RawRecord {
            paper_id: Some(id.into()),
            title: Some(title.into()),
            abstract_text: Some("abstract".into()),
            year,
            ..Default::default()
        }
    }

    #[test]
    fn imputation_rules() {
        assert_eq!(impute_date(&DateParts::year(2019)).unwrap(), ymd(2019, 12, 31));
        assert_eq!(impute_date(&DateParts::month(2019, 2)).unwrap(), ymd(2019, 2, 28));
        assert_eq!(impute_date(&DateParts::month(2020, 2)).unwrap(), ymd(2020, 2, 29));
        assert_eq!(impute_date(&DateParts::full(2018, 6, 15)).unwrap(), ymd(2018, 6, 15));
    }

    #[test]
    fn imputation_errors_name_the_field() {
        let e = impute_date(&DateParts::month(2019, 13)).unwrap_err();
        assert!(e.to_string().contains("month"));
        let e = impute_date(&DateParts::full(2019, 2, 30)).unwrap_err();
        assert!(e.to_string().contains("day"));
        let e = impute_date(&DateParts { year: 2019, month: None, day: Some(3) }).unwrap_err();
        assert!(matches!(e, CorpusError::DayWithoutMonth));
    }

    #[test]
    fn ingest_keeps_valid_and_reports_rejections() {
        let (c, report) = Corpus::ingest(vec![
            raw("a", "A", Some(2018)),
            raw("b", "", Some(2018)),
            raw("c", "C", None),
            raw("a", "dup", Some(2019)),
            raw("d", "D", Some(2020)),
        ]);
        assert_eq!(c.ids(), vec!["a", "d"]);
        assert_eq!(report.accepted, 2);
        let reasons: Vec<_> = report.rejected.iter().map(|d| (d.record, d.reason.as_str())).collect();
        assert_eq!(reasons, vec![(2, "missing or empty title"), (3, "missing year"), (4, "duplicate paper_id")]);
        assert_eq!(c.get("a").unwrap().title, "A");
    }

    #[test]
    fn labels_normalized_and_text_joined() {
        let mut r = raw("x", "Title", Some(2020));
        r.subject_labels = vec!["Nanoparticles".into(), "nanoparticles ".into(), "Mice".into()];
        let (c, _) = Corpus::ingest(vec![r]);
        let p = c.get("x").unwrap();
        assert_eq!(p.subject_labels, vec!["nanoparticles", "mice"]);
        assert_eq!(p.text(), "Title abstract");
    }

    #[test]
    fn jsonl_bad_lines_are_diagnostics() {
        let input = "{\"paper_id\":\"p1\",\"title\":\"T\",\"year\":2019}\nnot json\n\n{\"paper_id\":\"p2\",\"title\":\"U\",\"year\":2021,\"month\":2}\n";
        let (c, report) = Corpus::ingest_jsonl(input.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].record, 2);
        assert_eq!(c.get("p2").unwrap().resolved_date, ymd(2021, 2, 28));
    }

    #[test]
    fn split_boundaries() {
        let mut recs = vec![raw("y2019", "t", Some(2019))];
        let mut d = raw("dec31", "t", Some(2019));
        d.month = Some(12);
        d.day = Some(31);
        recs.push(d);
        let mut j = raw("jan1", "t", Some(2020));
        j.month = Some(1);
        j.day = Some(1);
        recs.push(j);
        recs.push(raw("late", "t", Some(2027)));
        let (c, _) = Corpus::ingest(recs);
        let s = temporal_split(&c, ymd(2019, 12, 31), ymd(2026, 1, 1)).unwrap();
        assert_eq!(s.historical_ids, vec!["y2019", "dec31"]);
        assert_eq!(s.future_ids, vec!["jan1"]);
        assert_eq!(s.excluded_ids, vec!["late"]);
    }

    #[test]
    fn split_errors() {
        let (c, _) = Corpus::ingest(vec![raw("a", "t", Some(2021))]);
        assert!(matches!(temporal_split(&c, ymd(2019, 12, 31), ymd(2026, 1, 1)), Err(CorpusError::EmptyHistorical)));
        assert!(matches!(
            temporal_split(&c, ymd(2026, 1, 1), ymd(2019, 12, 31)),
            Err(CorpusError::InvalidWindow { .. })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (c, _) = Corpus::ingest(vec![raw("a", "A", Some(2018)), raw("b", "B", Some(2019))]);
        c.save(dir.path()).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back.papers(), c.papers());
    }

    fn arb_parts() -> impl Strategy<Value = DateParts> {
        (1900i32..2100, proptest::option::of(1u32..=12), 1u32..=31).prop_map(|(y, m, d)| match m {
            None => DateParts::year(y),
            Some(m) if d % 2 == 0 => DateParts::month(y, m),
            Some(m) => {
                let last = last_day_of_month(y, m).unwrap().format("%d").to_string();
                let last: u32 = last.parse().unwrap();
                DateParts::full(y, m, 1 + d % last)
            }
        })
    }

    proptest! {
        #[test]
        fn imputed_date_is_latest_consistent_date(p in arb_parts()) {
            let imputed = impute_date(&p).unwrap();
            // every date consistent with p is <= imputed
            let months: Vec<u32> = match p.month { Some(m) => vec![m], None => (1..=12).collect() };
            for m in months {
                let days: Vec<u32> = match p.day { Some(d) => vec![d], None => (1..=31).collect() };
                for d in days {
                    if let Some(date) = NaiveDate::from_ymd_opt(p.year, m, d) {
                        prop_assert!(date <= imputed);
                    }
                }
            }
        }

        #[test]
        fn full_dates_are_fixed_points(y in 1900i32..2100, m in 1u32..=12, d in 1u32..=28) {
            let p = DateParts::full(y, m, d);
            prop_assert_eq!(impute_date(&p).unwrap(), NaiveDate::from_ymd_opt(y, m, d).unwrap());
        }

        #[test]
        fn split_partitions_all_ids(years in proptest::collection::vec(2015i32..2029, 1..40)) {
            let recs: Vec<RawRecord> = years.iter().enumerate()
                .map(|(i, &y)| raw(&format!("p{i}"), "t", Some(y)))
                .collect();
            let (c, _) = Corpus::ingest(recs);
            if let Ok(s) = temporal_split(&c, ymd(2019, 12, 31), ymd(2026, 1, 1)) {
                let mut all: Vec<String> = s.historical_ids.iter()
                    .chain(&s.future_ids).chain(&s.excluded_ids).cloned().collect();
                prop_assert_eq!(all.len(), c.len());
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), c.len());
            }
        }
    }
}
