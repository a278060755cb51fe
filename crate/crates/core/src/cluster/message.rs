use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::query::{Bsf, StolenWork};

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Global ids of the receiver's chunk.
    AssignChunk { ids: Arc<Vec<u64>> },
    /// Query ids a group coordinator schedules.
    QueryBatch { queries: Vec<u64> },
    RequestQuery,
    /// Static lists arrive whole; dynamic pulls carry one id, or none when
    /// the queue is empty.
    AssignQuery { queries: Vec<u64> },
    BsfShare { query: u64, value: f64 },
    Done,
    StealRequest,
    /// Empty `work` means nothing could be granted.
    StealGrant { query: u64, bsf: f64, traversal_bound: f64, th: usize, work: StolenWork },
    /// `grants` counts the non-empty grants the owner issued for the query,
    /// so the collector knows how many stolen partial answers to expect.
    LocalAnswer { query: u64, answer: Bsf, stolen: bool, grants: u32 },
    /// Sender has no work left and no outstanding steal request.
    Quiescent,
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    AssignChunk,
    QueryBatch,
    RequestQuery,
    AssignQuery,
    BsfShare,
    Done,
    StealRequest,
    StealGrant,
    LocalAnswer,
    Quiescent,
    Shutdown,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::AssignChunk => "ASSIGN_CHUNK",
            Self::QueryBatch => "QUERY_BATCH",
            Self::RequestQuery => "REQUEST_QUERY",
            Self::AssignQuery => "ASSIGN_QUERY",
            Self::BsfShare => "BSF_SHARE",
            Self::Done => "DONE",
            Self::StealRequest => "STEAL_REQUEST",
            Self::StealGrant => "STEAL_GRANT",
            Self::LocalAnswer => "LOCAL_ANSWER",
            Self::Quiescent => "QUIESCENT",
            Self::Shutdown => "SHUTDOWN",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Self::AssignChunk { .. } => MessageKind::AssignChunk,
            Self::QueryBatch { .. } => MessageKind::QueryBatch,
            Self::RequestQuery => MessageKind::RequestQuery,
            Self::AssignQuery { .. } => MessageKind::AssignQuery,
            Self::BsfShare { .. } => MessageKind::BsfShare,
            Self::Done => MessageKind::Done,
            Self::StealRequest => MessageKind::StealRequest,
            Self::StealGrant { .. } => MessageKind::StealGrant,
            Self::LocalAnswer { .. } => MessageKind::LocalAnswer,
            Self::Quiescent => MessageKind::Quiescent,
            Self::Shutdown => MessageKind::Shutdown,
        }
    }
}

/// One delivered message, for trace comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub time: u64,
    pub from: usize,
    pub to: usize,
    pub kind: MessageKind,
    /// Query id or BSF bits where relevant.
    pub detail: u64,
}

impl TraceEntry {
    pub(crate) fn of(time: u64, from: usize, to: usize, msg: &Message) -> Self {
        let detail = match msg {
            Message::BsfShare { query, value } => query ^ value.to_bits().rotate_left(17),
            Message::StealGrant { query, work, .. } => query ^ ((work.queue_count() as u64) << 32),
            Message::LocalAnswer { query, answer, .. } => query ^ answer.value().to_bits().rotate_left(17),
            Message::AssignQuery { queries } => queries.iter().fold(queries.len() as u64, |a, q| a.rotate_left(7) ^ q),
            _ => 0,
        };
        Self {
            time,
            from,
            to,
            kind: msg.kind(),
            detail,
        }
    }
}
