//! Human review: blind packets, reviewer aggregation, human-versus-agent
//! calibration statistics, and label-overlap retrieval metrics for
//! comparing embedding spaces.

mod packets;
mod retrieval;
mod stats;

pub use packets::{
    export_review_packets, packet_from_brief, read_packet, AuditSummary, OpenSection, PackSummary, PackSummaryItem,
    RetrievalRef, ReviewPacket, SealedSection, TaskKey, PACK_SUMMARY_ITEMS,
};
pub use retrieval::{
    filter_labels, retrieval_eval, score_ranking, QueryScores, RetrievalEvalConfig, RetrievalEvalError,
    RetrievalMetrics,
};
pub use stats::{
    aggregate_reviewers, average_ranks, calibration_stats, pearson, spearman, CalibrationReport, CriterionStats,
    Exclusion, HumanMean, ReviewError, ReviewFlags, ReviewerScore,
};
