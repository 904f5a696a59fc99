//! Scenario files.
//!
//! Line-oriented `key = value` pairs grouped under `[section]` headers. Blank
//! lines are ignored, and `#` starts a comment anywhere on a line. Sections:
//!
//! ```text
//! [scenario]       name, seed, rounds, vocabulary, policy, tolerance,
//!                  normalization, disclosure, threshold, hosting, deadline, probes
//! [clients]        count, corpus, mode, glimmer, jitter   (defaults for ids 1..=count)
//! [client <id>]    corpus, mode, glimmer, jitter          (per-client overrides)
//! [dropout]        <round> = <client id>...
//! [remote <name>]  trust, tampered
//! [confidential]   policy, version
//! ```
//!
//! A corpus is a `;`-separated list of phrases, each a run of vocabulary words
//! optionally followed by `*<repeat>`. Modes: `honest`, `out_of_range <units>
//! [bypass]`, `fabricated`, `bypass`, `tampered [before_enroll]`, `replay`.
//! A glimmer is `local` or `remote <name>`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::blinding::Hosting;
use crate::client::{AdversaryMode, ClientId, Normalization, PhraseSpec, WordId};
use crate::pipeline::{Disclosure, ValidationPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {field}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

fn err(line: usize, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { line, field: field.to_owned(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placement {
    Local,
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientSpec {
    pub id: ClientId,
    pub corpus: Vec<PhraseSpec>,
    pub mode: AdversaryMode,
    pub glimmer: Placement,
    /// Synthetic pointer-jitter signal for confidential validation.
    pub jitter: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteSpec {
    pub name: String,
    pub trust: String,
    pub tampered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfidentialSpec {
    pub policy: String,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub rounds: u64,
    pub vocabulary: Vec<String>,
    pub policy: ValidationPolicy,
    pub disclosure: Disclosure,
    pub confidence_threshold: u8,
    pub hosting: Hosting,
    pub deadline_ticks: u64,
    pub probes: Vec<String>,
    pub clients: Vec<ClientSpec>,
    pub dropouts: BTreeMap<u64, Vec<ClientId>>,
    pub remotes: Vec<RemoteSpec>,
    pub confidential: Option<ConfidentialSpec>,
}

impl ScenarioConfig {
    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn word_id(&self, word: &str) -> Option<WordId> {
        self.vocabulary.iter().position(|w| w == word).map(|i| i as WordId)
    }

    pub fn dropped(&self, round: u64, client: ClientId) -> bool {
        self.dropouts.get(&round).is_some_and(|ids| ids.contains(&client))
    }
}

#[derive(Debug, Clone, Default)]
struct ClientFields {
    corpus: Option<(usize, String)>,
    mode: Option<(usize, String)>,
    glimmer: Option<(usize, String)>,
    jitter: Option<(usize, String)>,
}

enum Section {
    None,
    Scenario,
    Clients,
    Client(ClientId),
    Dropout,
    Remote(String),
    Confidential,
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut scenario: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut defaults = ClientFields::default();
    let mut count: Option<(usize, u64)> = None;
    let mut overrides: BTreeMap<ClientId, (usize, ClientFields)> = BTreeMap::new();
    let mut dropouts_raw: Vec<(usize, String, String)> = Vec::new();
    let mut remotes: BTreeMap<String, (usize, BTreeMap<String, (usize, String)>)> = BTreeMap::new();
    let mut confidential: Option<BTreeMap<String, (usize, String)>> = None;
    let mut section = Section::None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.split('#').next().unwrap_or_default().trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('[') {
            let header = header.strip_suffix(']').ok_or_else(|| err(line, "section", "missing ']'"))?.trim();
            let mut parts = header.split_whitespace();
            section = match (parts.next(), parts.next(), parts.next()) {
                (Some("scenario"), None, _) => Section::Scenario,
                (Some("clients"), None, _) => Section::Clients,
                (Some("client"), Some(id), None) => {
                    let id: ClientId = id.parse().map_err(|_| err(line, "client", format!("bad id {id:?}")))?;
                    if overrides.contains_key(&id) {
                        return Err(err(line, "client", format!("duplicate client {id}")));
                    }
                    overrides.insert(id, (line, ClientFields::default()));
                    Section::Client(id)
                }
                (Some("dropout"), None, _) => Section::Dropout,
                (Some("remote"), Some(name), None) => {
                    if remotes.contains_key(name) {
                        return Err(err(line, "remote", format!("duplicate remote {name:?}")));
                    }
                    remotes.insert(name.to_owned(), (line, BTreeMap::new()));
                    Section::Remote(name.to_owned())
                }
                (Some("confidential"), None, _) => {
                    confidential = Some(BTreeMap::new());
                    Section::Confidential
                }
                _ => return Err(err(line, "section", format!("unknown section [{header}]"))),
            };
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| err(line, "line", "expected key = value"))?;
        let (key, value) = (key.trim().to_owned(), value.trim().to_owned());
        let slot = |fields: &mut ClientFields| -> Result<(), ConfigError> {
            let target = match key.as_str() {
                "corpus" => &mut fields.corpus,
                "mode" => &mut fields.mode,
                "glimmer" => &mut fields.glimmer,
                "jitter" => &mut fields.jitter,
                other => return Err(err(line, other, "unknown client field")),
            };
            *target = Some((line, value.clone()));
            Ok(())
        };
        match &section {
            Section::None => return Err(err(line, &key, "field outside any section")),
            Section::Scenario => {
                scenario.insert(key, (line, value));
            }
            Section::Clients if key == "count" => {
                let n = value.parse().map_err(|_| err(line, "count", format!("bad count {value:?}")))?;
                count = Some((line, n));
            }
            Section::Clients => slot(&mut defaults)?,
            Section::Client(id) => slot(&mut overrides.get_mut(id).expect("inserted at header").1)?,
            Section::Dropout => dropouts_raw.push((line, key, value)),
            Section::Remote(name) => {
                remotes.get_mut(name).expect("inserted at header").1.insert(key, (line, value));
            }
            Section::Confidential => {
                confidential.as_mut().expect("set at header").insert(key, (line, value));
            }
        }
    }

    let get = |k: &str| scenario.get(k).map(|(l, v)| (*l, v.as_str()));
    let num = |k: &str, default: u64| -> Result<u64, ConfigError> {
        match get(k) {
            None => Ok(default),
            Some((l, v)) => v.parse().map_err(|_| err(l, k, format!("not a number: {v:?}"))),
        }
    };

    let name = get("name").map(|(_, v)| v.to_owned()).ok_or_else(|| err(0, "name", "missing"))?;
    let seed = num("seed", 0)?;
    let rounds = num("rounds", 1)?;
    if rounds == 0 {
        return Err(err(get("rounds").map_or(0, |g| g.0), "rounds", "must be at least 1"));
    }
    let (vline, vtext) = get("vocabulary").ok_or_else(|| err(0, "vocabulary", "missing"))?;
    let vocabulary: Vec<String> = vtext.split_whitespace().map(str::to_owned).collect();
    if vocabulary.is_empty() {
        return Err(err(vline, "vocabulary", "empty"));
    }
    for (i, w) in vocabulary.iter().enumerate() {
        if vocabulary[..i].contains(w) {
            return Err(err(vline, "vocabulary", format!("duplicate word {w:?}")));
        }
    }

    let normalization = match get("normalization") {
        None | Some((_, "joint")) => Normalization::Joint,
        Some((_, "conditional")) => Normalization::Conditional,
        Some((l, v)) => return Err(err(l, "normalization", format!("unknown {v:?}"))),
    };
    let tolerance = num("tolerance", 0)?;
    let mut policy = match get("policy") {
        None | Some((_, "range")) => ValidationPolicy::range(),
        Some((_, "corroboration")) => ValidationPolicy::corroboration(vocabulary.len(), tolerance),
        Some((_, "composite")) => ValidationPolicy::composite(vocabulary.len(), tolerance),
        Some((l, v)) => return Err(err(l, "policy", format!("unknown {v:?}"))),
    };
    policy.normalization = normalization;
    let disclosure = match get("disclosure") {
        None | Some((_, "blinded")) => Disclosure::Blinded,
        Some((_, "public")) => Disclosure::Public,
        Some((l, v)) => return Err(err(l, "disclosure", format!("unknown {v:?}"))),
    };
    let threshold = num("threshold", crate::aggregation::DEFAULT_CONFIDENCE_THRESHOLD as u64)?;
    let confidence_threshold =
        u8::try_from(threshold).map_err(|_| err(get("threshold").map_or(0, |g| g.0), "threshold", "must be 0..=255"))?;
    let hosting = match get("hosting") {
        None | Some((_, "actor")) => Hosting::Actor,
        Some((_, "enclave")) => Hosting::Enclave,
        Some((l, v)) => return Err(err(l, "hosting", format!("unknown {v:?}"))),
    };
    let deadline_ticks = num("deadline", 10)?;
    let probes: Vec<String> = get("probes").map(|(_, v)| v.split_whitespace().map(str::to_owned).collect()).unwrap_or_default();
    if let Some((l, _)) = get("probes") {
        for p in &probes {
            if !vocabulary.contains(p) {
                return Err(err(l, "probes", format!("{p:?} not in vocabulary")));
            }
        }
    }
    for (k, (l, _)) in &scenario {
        const KNOWN: [&str; 13] = [
            "name", "seed", "rounds", "vocabulary", "policy", "tolerance", "normalization", "disclosure",
            "threshold", "hosting", "deadline", "probes", "description",
        ];
        if !KNOWN.contains(&k.as_str()) {
            return Err(err(*l, k, "unknown scenario field"));
        }
    }

    let remotes: Vec<RemoteSpec> = remotes
        .into_iter()
        .map(|(name, (_, fields))| {
            let mut trust = String::from("unspecified");
            let mut tampered = false;
            for (k, (l, v)) in fields {
                match k.as_str() {
                    "trust" => trust = v,
                    "tampered" => tampered = parse_bool(l, "tampered", &v)?,
                    other => return Err(err(l, other, "unknown remote field")),
                }
            }
            Ok(RemoteSpec { name, trust, tampered })
        })
        .collect::<Result<_, ConfigError>>()?;

    let mut ids: Vec<ClientId> = match count {
        Some((_, n)) => (1..=n).collect(),
        None => Vec::new(),
    };
    for id in overrides.keys() {
        if !ids.contains(id) {
            ids.push(*id);
        }
    }
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(err(count.map_or(0, |c| c.0), "clients", "no clients"));
    }

    let mut clients = Vec::with_capacity(ids.len());
    for id in ids {
        let o = overrides.get(&id).map(|(_, f)| f.clone()).unwrap_or_default();
        let header_line = overrides.get(&id).map_or(0, |(l, _)| *l);
        let pick = |own: &Option<(usize, String)>, def: &Option<(usize, String)>| own.clone().or_else(|| def.clone());
        let (cl, ctext) = pick(&o.corpus, &defaults.corpus)
            .ok_or_else(|| err(header_line, "corpus", format!("client {id} has no corpus")))?;
        let corpus = parse_corpus(cl, &ctext, &vocabulary)?;
        let mode = match pick(&o.mode, &defaults.mode) {
            None => AdversaryMode::Honest,
            Some((l, v)) => parse_mode(l, &v)?,
        };
        let glimmer = match pick(&o.glimmer, &defaults.glimmer) {
            None => Placement::Local,
            Some((l, v)) => {
                let mut parts = v.split_whitespace();
                match (parts.next(), parts.next(), parts.next()) {
                    (Some("local"), None, _) => Placement::Local,
                    (Some("remote"), Some(name), None) => {
                        if !remotes.iter().any(|r| r.name == name) {
                            return Err(err(l, "glimmer", format!("no [remote {name}] section")));
                        }
                        Placement::Remote(name.to_owned())
                    }
                    _ => return Err(err(l, "glimmer", format!("expected local or remote <name>, got {v:?}"))),
                }
            }
        };
        let jitter = match pick(&o.jitter, &defaults.jitter) {
            None => 10,
            Some((l, v)) => v.parse().map_err(|_| err(l, "jitter", format!("not a number: {v:?}")))?,
        };
        clients.push(ClientSpec { id, corpus, mode, glimmer, jitter });
    }

    let mut dropouts: BTreeMap<u64, Vec<ClientId>> = BTreeMap::new();
    for (l, k, v) in dropouts_raw {
        let round: u64 = k.parse().map_err(|_| err(l, &k, "dropout key must be a round number"))?;
        if round == 0 || round > rounds {
            return Err(err(l, &k, format!("round {round} outside 1..={rounds}")));
        }
        for t in v.split_whitespace() {
            let id: ClientId = t.parse().map_err(|_| err(l, &k, format!("bad client id {t:?}")))?;
            if !clients.iter().any(|c| c.id == id) {
                return Err(err(l, &k, format!("unknown client {id}")));
            }
            dropouts.entry(round).or_default().push(id);
        }
    }

    let confidential = match confidential {
        None => None,
        Some(fields) => {
            let (pl, policy) = fields.get("policy").cloned().ok_or_else(|| err(0, "policy", "confidential policy missing"))?;
            crate::confidential::parse_policy(&policy).map_err(|e| err(pl, "policy", e.to_string()))?;
            let version = match fields.get("version") {
                None => 1,
                Some((l, v)) => v.parse().map_err(|_| err(*l, "version", format!("not a number: {v:?}")))?,
            };
            for (k, (l, _)) in &fields {
                if k != "policy" && k != "version" {
                    return Err(err(*l, k, "unknown confidential field"));
                }
            }
            Some(ConfidentialSpec { policy, version })
        }
    };

    Ok(ScenarioConfig {
        name,
        seed,
        rounds,
        vocabulary,
        policy,
        disclosure,
        confidence_threshold,
        hosting,
        deadline_ticks,
        probes,
        clients,
        dropouts,
        remotes,
        confidential,
    })
}

fn parse_bool(line: usize, field: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "yes" | "true" => Ok(true),
        "no" | "false" => Ok(false),
        _ => Err(err(line, field, format!("expected yes or no, got {v:?}"))),
    }
}

fn parse_corpus(line: usize, text: &str, vocabulary: &[String]) -> Result<Vec<PhraseSpec>, ConfigError> {
    let mut out = Vec::new();
    for phrase in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (words, repeat) = match phrase.rsplit_once('*') {
            Some((w, r)) => {
                let r: u32 = r.trim().parse().map_err(|_| err(line, "corpus", format!("bad repeat in {phrase:?}")))?;
                (w, r)
            }
            None => (phrase, 1),
        };
        let words = words
            .split_whitespace()
            .map(|w| {
                vocabulary
                    .iter()
                    .position(|v| v == w)
                    .map(|i| i as WordId)
                    .ok_or_else(|| err(line, "corpus", format!("{w:?} not in vocabulary")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if words.is_empty() {
            return Err(err(line, "corpus", format!("empty phrase in {phrase:?}")));
        }
        out.push(PhraseSpec { words, repeat });
    }
    Ok(out)
}

fn parse_mode(line: usize, text: &str) -> Result<AdversaryMode, ConfigError> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    Ok(match parts.as_slice() {
        ["honest"] => AdversaryMode::Honest,
        ["out_of_range", units] | ["out_of_range", units, "bypass"] => {
            let units = units.parse().map_err(|_| err(line, "mode", format!("bad units {units:?}")))?;
            AdversaryMode::OutOfRange { units, bypass: parts.len() == 3 }
        }
        ["fabricated"] => AdversaryMode::FabricatedInRange,
        ["bypass"] => AdversaryMode::BypassGlimmer,
        ["tampered"] => AdversaryMode::TamperedCode { before_enroll: false },
        ["tampered", "before_enroll"] => AdversaryMode::TamperedCode { before_enroll: true },
        ["replay"] => AdversaryMode::Replay,
        _ => return Err(err(line, "mode", format!("unknown mode {text:?}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# comment
[scenario]
name = sample
seed = 7
rounds = 2
vocabulary = a b c
probes = a

[clients]
count = 3
corpus = a b*2; b c

[client 2]
mode = out_of_range 538 bypass
glimmer = remote box  # trailing comment

[client 9]
corpus = c a

[dropout]
2 = 1 9

[remote box]
trust = own device
";

    #[test]
    fn parses_sample() {
        let c = parse_config(SAMPLE).unwrap();
        assert_eq!(c.name, "sample");
        assert_eq!(c.seed, 7);
        assert_eq!(c.vocabulary, ["a", "b", "c"]);
        assert_eq!(c.clients.iter().map(|c| c.id).collect::<Vec<_>>(), [1, 2, 3, 9]);
        assert_eq!(c.clients[0].corpus, vec![
            PhraseSpec { words: vec![0, 1], repeat: 2 },
            PhraseSpec { words: vec![1, 2], repeat: 1 },
        ]);
        assert_eq!(c.clients[1].mode, AdversaryMode::OutOfRange { units: 538, bypass: true });
        assert_eq!(c.clients[1].glimmer, Placement::Remote("box".into()));
        assert_eq!(c.clients[3].corpus, vec![PhraseSpec { words: vec![2, 0], repeat: 1 }]);
        assert!(c.dropped(2, 9) && !c.dropped(1, 9));
        assert_eq!(c.remotes[0].trust, "own device");
        assert_eq!(c.policy, ValidationPolicy::range());
    }

    #[test]
    fn errors_carry_line_and_field() {
        let bad = SAMPLE.replace("corpus = c a", "corpus = c zebra");
        let e = parse_config(&bad).unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (19, "corpus"));
        assert!(e.message.contains("zebra"));

        let e = parse_config(&SAMPLE.replace("2 = 1 9", "3 = 1")).unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (22, "3"));

        let e = parse_config(&SAMPLE.replace("mode = out_of_range 538 bypass", "mode = sneaky")).unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (15, "mode"));

        let e = parse_config(&SAMPLE.replace("[client 9]", "[client 2]")).unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (18, "client"));

        let e = parse_config(&SAMPLE.replace("glimmer = remote box", "glimmer = remote nowhere")).unwrap_err();
        assert_eq!(e.field, "glimmer");

        let e = parse_config("[scenario]\nname = x\nvocabulary = a\nfoo = 1\n[clients]\ncount = 1\ncorpus = a\n").unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (4, "foo"));

        let e = parse_config("name = x").unwrap_err();
        assert_eq!(e.line, 1);
    }
}
