//! Single-file SQLite store with content-addressed binary sidecars.
//!
//! Every table is append-only: triggers abort any UPDATE or DELETE, so a
//! published snapshot (and anything recorded against it) cannot change.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};

use super::{canonical_json, sha256_hex, PreparedSnapshot, Snapshot, SnapshotError, SnapshotManifest};
use crate::agent::ResearchBrief;
use crate::calibration::{packet_from_brief, OpenSection, ReviewPacket, ReviewerScore, SealedSection};
use crate::retro::BenchmarkReport;

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS snapshots (
    snapshot_id TEXT PRIMARY KEY,
    created_at TEXT NOT NULL,
    manifest BLOB NOT NULL,
    n_papers INTEGER NOT NULL,
    encoder_name TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS briefs (
    brief_id TEXT PRIMARY KEY,
    snapshot_id TEXT NOT NULL REFERENCES snapshots(snapshot_id),
    target_id TEXT NOT NULL,
    created_at TEXT NOT NULL,
    body BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS runs (
    run_id TEXT PRIMARY KEY,
    snapshot_id TEXT NOT NULL REFERENCES snapshots(snapshot_id),
    created_at TEXT NOT NULL,
    report BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS packets (
    packet_id TEXT PRIMARY KEY,
    brief_id TEXT REFERENCES briefs(brief_id),
    run_id TEXT REFERENCES runs(run_id),
    open BLOB NOT NULL,
    sealed BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS reviews (
    review_id TEXT PRIMARY KEY,
    packet_id TEXT NOT NULL REFERENCES packets(packet_id),
    reviewer_id TEXT NOT NULL,
    token TEXT NOT NULL,
    submitted_at TEXT NOT NULL,
    body BLOB NOT NULL,
    UNIQUE (packet_id, reviewer_id)
);
"#;

const APPEND_ONLY: [&str; 5] = ["snapshots", "briefs", "runs", "packets", "reviews"];

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn short_hash(bytes: &[u8]) -> String {
    sha256_hex(bytes)[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub snapshot_id: String,
    pub created_at: String,
    pub n_papers: usize,
    pub encoder_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BriefRecord {
    pub brief_id: String,
    pub snapshot_id: String,
    pub target_id: String,
    pub created_at: String,
    pub brief: ResearchBrief,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub snapshot_id: String,
    pub created_at: String,
    pub report: BenchmarkReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub review_id: String,
    pub packet_id: String,
    pub submitted_at: String,
    pub review: ReviewerScore,
}

/// Returned once on submission; presenting the token unlocks the sealed section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReceipt {
    pub review_id: String,
    pub packet_id: String,
    pub token: String,
}

pub struct SnapshotStore {
    root: PathBuf,
    conn: Mutex<Connection>,
    cache: Mutex<HashMap<String, Arc<Snapshot>>>,
}

fn is_constraint(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::ConstraintViolation)
}

impl SnapshotStore {
    /// Open or create a store rooted at `root` (`gapmap.sqlite` plus `sidecars/`).
    pub fn open(root: &Path) -> Result<Self, SnapshotError> {
        std::fs::create_dir_all(root.join("sidecars"))?;
        let conn = Connection::open(root.join("gapmap.sqlite"))?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.execute_batch(SCHEMA)?;
        for table in APPEND_ONLY {
            for op in ["UPDATE", "DELETE"] {
                conn.execute_batch(&format!(
                    "CREATE TRIGGER IF NOT EXISTS {table}_no_{} BEFORE {op} ON {table} \
                     BEGIN SELECT RAISE(ABORT, '{table} are immutable'); END;",
                    op.to_lowercase()
                ))?;
            }
        }
        Ok(Self { root: root.to_path_buf(), conn: Mutex::new(conn), cache: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn database_path(&self) -> PathBuf {
        self.root.join("gapmap.sqlite")
    }

    pub fn sidecar_path(&self, snapshot_id: &str, name: &str) -> PathBuf {
        self.root.join("sidecars").join(format!("{snapshot_id}.{name}.bin"))
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().expect("store connection poisoned")
    }

    /// Write `bytes` to `path` through a synced temporary file and a rename.
    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), SnapshotError> {
        let mut tmp = tempfile::NamedTempFile::new_in(self.root.join("sidecars"))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    /// Publish prepared content. Idempotent: identical content returns the
    /// existing id without writing. Sidecars land before the single-row
    /// commit, so readers never see a partial snapshot.
    pub fn publish(&self, prepared: &PreparedSnapshot) -> Result<String, SnapshotError> {
        let id = &prepared.snapshot_id;
        if self.exists(id)? {
            return Ok(id.clone());
        }
        self.write_atomic(&self.sidecar_path(id, "embeddings"), &prepared.embedding_bytes)?;
        self.write_atomic(&self.sidecar_path(id, "analysis"), &prepared.analysis_bytes)?;
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        tx.execute(
            "INSERT OR IGNORE INTO snapshots (snapshot_id, created_at, manifest, n_papers, encoder_name) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![id, now(), prepared.manifest_bytes, prepared.manifest.papers.len() as i64, prepared.manifest.config.encoder_name],
        )?;
        tx.commit()?;
        Ok(id.clone())
    }

    pub fn exists(&self, snapshot_id: &str) -> Result<bool, SnapshotError> {
        Ok(self
            .conn()
            .query_row("SELECT 1 FROM snapshots WHERE snapshot_id = ?1", [snapshot_id], |_| Ok(()))
            .optional()?
            .is_some())
    }

    /// Load and verify a snapshot: the manifest must hash to its id and each
    /// sidecar to the digest the manifest records.
    pub fn load(&self, snapshot_id: &str) -> Result<Arc<Snapshot>, SnapshotError> {
        if let Some(s) = self.cache.lock().expect("cache poisoned").get(snapshot_id) {
            return Ok(s.clone());
        }
        let row: Option<(String, Vec<u8>)> = self
            .conn()
            .query_row("SELECT created_at, manifest FROM snapshots WHERE snapshot_id = ?1", [snapshot_id], |r| {
                Ok((r.get(0)?, r.get(1)?))
            })
            .optional()?;
        let (created_at, manifest_bytes) = row.ok_or_else(|| SnapshotError::NotFound(snapshot_id.to_string()))?;
        if sha256_hex(&manifest_bytes) != snapshot_id {
            return Err(SnapshotError::Integrity { id: snapshot_id.into(), name: "manifest".into() });
        }
        let manifest: SnapshotManifest = serde_json::from_slice(&manifest_bytes)?;
        let read = |name: &str| {
            std::fs::read(self.sidecar_path(snapshot_id, name))
                .map_err(|_| SnapshotError::Integrity { id: snapshot_id.into(), name: name.into() })
        };
        let snapshot = Arc::new(Snapshot::assemble(
            snapshot_id.into(),
            created_at,
            manifest,
            &read("embeddings")?,
            &read("analysis")?,
        )?);
        self.cache.lock().expect("cache poisoned").insert(snapshot_id.into(), snapshot.clone());
        Ok(snapshot)
    }

    pub fn list(&self) -> Result<Vec<SnapshotSummary>, SnapshotError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT snapshot_id, created_at, n_papers, encoder_name FROM snapshots ORDER BY created_at, snapshot_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok(SnapshotSummary {
                snapshot_id: r.get(0)?,
                created_at: r.get(1)?,
                n_papers: r.get::<_, i64>(2)? as usize,
                encoder_name: r.get(3)?,
            })
        })?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// Store a brief under the hash of its content, plus one blind review
    /// packet per hypothesis. Storing the same brief again returns its id.
    pub fn store_brief(&self, brief: &ResearchBrief) -> Result<String, SnapshotError> {
        if !self.exists(&brief.snapshot_id)? {
            return Err(SnapshotError::NotFound(brief.snapshot_id.clone()));
        }
        let body = canonical_json(brief)?;
        let brief_id = short_hash(&body);
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let inserted = tx.execute(
            "INSERT OR IGNORE INTO briefs (brief_id, snapshot_id, target_id, created_at, body) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![brief_id, brief.snapshot_id, brief.target_id, now(), body],
        )?;
        if inserted == 1 {
            for idea in 0..brief.hypotheses.len() {
                if let Some(p) = packet_from_brief(&brief_id, brief, idea) {
                    insert_packet(&tx, &p, Some(&brief_id), None)?;
                }
            }
        }
        tx.commit()?;
        Ok(brief_id)
    }

    pub fn get_brief(&self, brief_id: &str) -> Result<BriefRecord, SnapshotError> {
        let row: Option<(String, String, String, Vec<u8>)> = self
            .conn()
            .query_row(
                "SELECT snapshot_id, target_id, created_at, body FROM briefs WHERE brief_id = ?1",
                [brief_id],
                |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?)),
            )
            .optional()?;
        let (snapshot_id, target_id, created_at, body) =
            row.ok_or_else(|| SnapshotError::RecordNotFound { kind: "brief", id: brief_id.into() })?;
        Ok(BriefRecord {
            brief_id: brief_id.into(),
            snapshot_id,
            target_id,
            created_at,
            brief: serde_json::from_slice(&body)?,
        })
    }

    /// Store a benchmark report and its review packets; idempotent by content.
    pub fn store_run(&self, report: &BenchmarkReport, packets: &[ReviewPacket]) -> Result<String, SnapshotError> {
        if !self.exists(&report.snapshot_id)? {
            return Err(SnapshotError::NotFound(report.snapshot_id.clone()));
        }
        let body = canonical_json(report)?;
        let run_id = short_hash(&body);
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let inserted = tx.execute(
            "INSERT OR IGNORE INTO runs (run_id, snapshot_id, created_at, report) VALUES (?1, ?2, ?3, ?4)",
            params![run_id, report.snapshot_id, now(), body],
        )?;
        if inserted == 1 {
            for p in packets {
                insert_packet(&tx, p, None, Some(&run_id))?;
            }
        }
        tx.commit()?;
        Ok(run_id)
    }

    pub fn get_run(&self, run_id: &str) -> Result<RunRecord, SnapshotError> {
        let row: Option<(String, String, Vec<u8>)> = self
            .conn()
            .query_row("SELECT snapshot_id, created_at, report FROM runs WHERE run_id = ?1", [run_id], |r| {
                Ok((r.get(0)?, r.get(1)?, r.get(2)?))
            })
            .optional()?;
        let (snapshot_id, created_at, body) =
            row.ok_or_else(|| SnapshotError::RecordNotFound { kind: "run", id: run_id.into() })?;
        Ok(RunRecord { run_id: run_id.into(), snapshot_id, created_at, report: serde_json::from_slice(&body)? })
    }

    pub fn list_runs(&self) -> Result<Vec<String>, SnapshotError> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT run_id FROM runs ORDER BY created_at, run_id")?;
        let ids = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        Ok(ids)
    }

    /// Packet ids belonging to a brief (`brief`) or a run (`run`).
    pub fn packet_ids(&self, owner: &str, id: &str) -> Result<Vec<String>, SnapshotError> {
        let column = match owner {
            "brief" => "brief_id",
            "run" => "run_id",
            _ => return Err(SnapshotError::Inconsistent(format!("unknown packet owner {owner}"))),
        };
        let conn = self.conn();
        let mut stmt =
            conn.prepare(&format!("SELECT packet_id FROM packets WHERE {column} = ?1 ORDER BY packet_id"))?;
        let ids = stmt.query_map([id], |r| r.get(0))?.collect::<Result<_, _>>()?;
        Ok(ids)
    }

    pub fn open_section(&self, packet_id: &str) -> Result<OpenSection, SnapshotError> {
        let body: Vec<u8> = self
            .conn()
            .query_row("SELECT open FROM packets WHERE packet_id = ?1", [packet_id], |r| r.get(0))
            .optional()?
            .ok_or_else(|| SnapshotError::RecordNotFound { kind: "packet", id: packet_id.into() })?;
        Ok(serde_json::from_slice(&body)?)
    }

    /// The sealed section, only for the token issued with a submitted review
    /// of this packet.
    pub fn sealed_section(&self, packet_id: &str, token: &str) -> Result<SealedSection, SnapshotError> {
        let conn = self.conn();
        let body: Vec<u8> = conn
            .query_row("SELECT sealed FROM packets WHERE packet_id = ?1", [packet_id], |r| r.get(0))
            .optional()?
            .ok_or_else(|| SnapshotError::RecordNotFound { kind: "packet", id: packet_id.into() })?;
        let ok = conn
            .query_row("SELECT 1 FROM reviews WHERE packet_id = ?1 AND token = ?2", [packet_id, token], |_| Ok(()))
            .optional()?
            .is_some();
        if !ok {
            return Err(SnapshotError::Sealed(packet_id.into()));
        }
        Ok(serde_json::from_slice(&body)?)
    }

    /// Record a validated review of an existing packet; one review per
    /// reviewer and packet.
    pub fn submit_review(&self, packet_id: &str, review: &ReviewerScore) -> Result<ReviewReceipt, SnapshotError> {
        review.validate().map_err(|e| SnapshotError::InvalidReview(e.to_string()))?;
        if review.idea_id != packet_id {
            return Err(SnapshotError::InvalidReview(format!(
                "idea_id {} does not match packet {packet_id}",
                review.idea_id
            )));
        }
        self.open_section(packet_id)?;
        let submitted_at = now();
        let review_id = short_hash(format!("{packet_id}\u{1f}{}", review.reviewer_id).as_bytes());
        let token = format!("{:032x}", rand::random::<u128>());
        let body = serde_json::to_vec(review)?;
        self.conn()
            .execute(
                "INSERT INTO reviews (review_id, packet_id, reviewer_id, token, submitted_at, body) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                params![review_id, packet_id, review.reviewer_id, token, submitted_at, body],
            )
            .map_err(|e| {
                if is_constraint(&e) {
                    SnapshotError::InvalidReview(format!("{} already reviewed {packet_id}", review.reviewer_id))
                } else {
                    e.into()
                }
            })?;
        Ok(ReviewReceipt { review_id, packet_id: packet_id.into(), token })
    }

    pub fn reviews(&self) -> Result<Vec<ReviewRecord>, SnapshotError> {
        let conn = self.conn();
        let mut stmt = conn
            .prepare("SELECT review_id, packet_id, submitted_at, body FROM reviews ORDER BY packet_id, reviewer_id")?;
        let rows = stmt
            .query_map([], |r| {
                Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, Vec<u8>>(3)?))
            })?
            .collect::<Result<Vec<_>, _>>()?;
        rows.into_iter()
            .map(|(review_id, packet_id, submitted_at, body)| {
                Ok(ReviewRecord { review_id, packet_id, submitted_at, review: serde_json::from_slice(&body)? })
            })
            .collect()
    }

    /// Agent scores of every reviewed packet, keyed by packet id.
    pub fn reviewed_agent_scores(
        &self,
    ) -> Result<std::collections::BTreeMap<String, crate::agent::IdeaScores>, SnapshotError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT DISTINCT p.packet_id, p.sealed FROM packets p JOIN reviews r ON r.packet_id = p.packet_id",
        )?;
        let rows = stmt
            .query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, Vec<u8>>(1)?)))?
            .collect::<Result<Vec<_>, _>>()?;
        rows.into_iter()
            .map(|(id, body)| Ok((id, serde_json::from_slice::<SealedSection>(&body)?.agent_scores)))
            .collect()
    }
}

fn insert_packet(
    tx: &rusqlite::Transaction<'_>,
    p: &ReviewPacket,
    brief_id: Option<&str>,
    run_id: Option<&str>,
) -> Result<(), SnapshotError> {
    tx.execute(
        "INSERT OR IGNORE INTO packets (packet_id, brief_id, run_id, open, sealed) VALUES (?1, ?2, ?3, ?4, ?5)",
        params![p.open.packet_id, brief_id, run_id, serde_json::to_vec(&p.open)?, serde_json::to_vec(&p.sealed)?],
    )?;
    Ok(())
}
