//! Run reports (one JSON record per line) and transcript scanning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bus::TranscriptEntry;
use crate::client::ClientId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteInfo {
    pub name: String,
    pub trust: String,
    pub tampered: bool,
    pub served: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VerdictTally {
    pub human: u64,
    pub bot: u64,
    pub blocked: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub roster: Vec<ClientId>,
    pub dropped: Vec<ClientId>,
    pub submissions: u64,
    pub accepted: Vec<ClientId>,
    pub rejected: BTreeMap<String, u64>,
    pub glimmer_errors: BTreeMap<String, u64>,
    pub verdicts: Option<VerdictTally>,
    pub status: String,
    pub revealed: Vec<ClientId>,
    pub submitter_count: u32,
    /// Nonzero `(index, value)` pairs of the published sums.
    pub sums: Vec<(usize, u64)>,
    pub oracle: Vec<(usize, u64)>,
    pub exact: Option<bool>,
    pub predictions: BTreeMap<String, Vec<String>>,
    pub heap_residue: u64,
}

/// Byte patterns planted in one client's private inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentinel {
    pub client: ClientId,
    pub mode: String,
    pub honest: bool,
    pub aux_hex: String,
    pub log_hex: Option<String>,
    /// Per round, when the round was meant to be blinded.
    pub model_hex: Vec<(u64, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leak {
    pub seq: u64,
    pub client: ClientId,
    pub honest: bool,
    pub kind: String,
    pub to: String,
    #[serde(rename = "type")]
    pub msg_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Scenario {
        name: String,
        seed: u64,
        transport: String,
        vocab_size: usize,
        clients: usize,
        rounds: u64,
        policy: String,
        disclosure: String,
        hosting: String,
        measurement: String,
        remotes: Vec<RemoteInfo>,
    },
    Enrollment {
        client: ClientId,
        mode: String,
        glimmer: String,
        enrolled: bool,
    },
    Round(RoundRecord),
    Sentinel(Sentinel),
    Scan {
        frames: u64,
        client_frames: u64,
        leaks: Vec<Leak>,
    },
    Summary {
        violations: u64,
        details: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunReport {
    pub records: Vec<Record>,
}

impl RunReport {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn violations(&self) -> u64 {
        self.records
            .iter()
            .find_map(|r| match r {
                Record::Summary { violations, .. } => Some(*violations),
                _ => None,
            })
            .unwrap_or(0)
    }

    pub fn rounds(&self) -> impl Iterator<Item = &RoundRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Round(rr) => Some(rr),
            _ => None,
        })
    }

    pub fn sentinels(&self) -> impl Iterator<Item = &Sentinel> {
        self.records.iter().filter_map(|r| match r {
            Record::Sentinel(s) => Some(s),
            _ => None,
        })
    }

    pub fn leaks(&self) -> &[Leak] {
        self.records
            .iter()
            .find_map(|r| match r {
                Record::Scan { leaks, .. } => Some(leaks.as_slice()),
                _ => None,
            })
            .unwrap_or(&[])
    }
}

pub fn client_address(id: ClientId) -> String {
    format!("client-{id}")
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Finds sentinel bytes in messages sent by clients.
pub fn scan_transcript(sentinels: &[Sentinel], transcript: &[TranscriptEntry]) -> Vec<Leak> {
    let decoded: Vec<(Vec<u8>, Option<Vec<u8>>, Vec<Vec<u8>>)> = sentinels
        .iter()
        .map(|s| {
            (
                hex::decode(&s.aux_hex).unwrap_or_default(),
                s.log_hex.as_ref().map(|h| hex::decode(h).unwrap_or_default()),
                s.model_hex.iter().map(|(_, h)| hex::decode(h).unwrap_or_default()).collect(),
            )
        })
        .collect();
    let mut leaks = Vec::new();
    for entry in transcript.iter().filter(|e| e.from.starts_with("client-")) {
        let bytes = entry.bytes();
        for (s, (aux, log, models)) in sentinels.iter().zip(&decoded) {
            let mut hit = |kind: &str| {
                leaks.push(Leak {
                    seq: entry.seq,
                    client: s.client,
                    honest: s.honest,
                    kind: kind.to_owned(),
                    to: entry.to.clone(),
                    msg_type: entry.kind.clone(),
                })
            };
            if contains(&bytes, aux) {
                hit("auxiliary");
            }
            if log.as_ref().is_some_and(|l| contains(&bytes, l)) {
                hit("event_log");
            }
            if models.iter().any(|m| contains(&bytes, m)) {
                hit("model");
            }
        }
    }
    leaks
}

/// Re-scans a captured transcript against the sentinels in `report`. Returns
/// one line per leak of an honest client's private bytes.
pub fn verify_transcripts(report: &RunReport, transcript: &[TranscriptEntry]) -> Vec<String> {
    let sentinels: Vec<Sentinel> = report.sentinels().cloned().collect();
    scan_transcript(&sentinels, transcript)
        .into_iter()
        .filter(|l| l.honest)
        .map(|l| format!("message {} ({} to {}): client {} {} bytes", l.seq, l.msg_type, l.to, l.client, l.kind))
        .collect()
}

pub fn transcript_to_jsonl(transcript: &[TranscriptEntry]) -> String {
    let mut out = String::new();
    for e in transcript {
        out.push_str(&serde_json::to_string(e).expect("entries serialize"));
        out.push('\n');
    }
    out
}

pub fn transcript_from_jsonl(text: &str) -> Result<Vec<TranscriptEntry>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
