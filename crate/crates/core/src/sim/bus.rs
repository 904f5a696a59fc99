//! In-process message bus with per-destination FIFO queues and a transcript.

use std::collections::{BTreeMap, VecDeque};
use std::io;
use std::net::{TcpListener, TcpStream};

use serde::{Deserialize, Serialize};

use crate::wire::{Frame, FrameError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    #[default]
    Bus,
    /// Every frame crosses a loopback TCP connection.
    Socket,
}

impl std::str::FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bus" => Ok(Transport::Bus),
            "socket" => Ok(Transport::Socket),
            other => Err(format!("unknown transport {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub from: String,
    pub to: String,
    pub frame: Frame,
}

/// One recorded message, as written to transcript files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub tick: u64,
    pub from: String,
    pub to: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub len: usize,
    pub hex: String,
}

impl TranscriptEntry {
    pub fn bytes(&self) -> Vec<u8> {
        hex::decode(&self.hex).unwrap_or_default()
    }
}

struct Loopback {
    tx: TcpStream,
    rx: TcpStream,
}

impl Loopback {
    fn open() -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let tx = TcpStream::connect(listener.local_addr()?)?;
        let (rx, _) = listener.accept()?;
        tx.set_nodelay(true)?;
        Ok(Self { tx, rx })
    }

    fn carry(&mut self, frame: &Frame) -> Result<Frame, FrameError> {
        let tx = &mut self.tx;
        let rx = &mut self.rx;
        std::thread::scope(|s| {
            let writer = s.spawn(move || frame.write_to(tx));
            let got = Frame::read_from(rx);
            writer.join().expect("writer thread")?;
            got
        })
    }
}

pub struct Bus {
    queues: BTreeMap<String, VecDeque<Envelope>>,
    transcript: Vec<TranscriptEntry>,
    tick: u64,
    loopback: Option<Loopback>,
}

impl Bus {
    pub fn new(transport: Transport) -> io::Result<Self> {
        let loopback = match transport {
            Transport::Bus => None,
            Transport::Socket => Some(Loopback::open()?),
        };
        Ok(Self { queues: BTreeMap::new(), transcript: Vec::new(), tick: 0, loopback })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn advance_to(&mut self, tick: u64) {
        self.tick = self.tick.max(tick);
    }

    pub fn send(&mut self, from: &str, to: &str, frame: Frame) {
        let frame = match &mut self.loopback {
            Some(l) => l.carry(&frame).expect("loopback transfer"),
            None => frame,
        };
        let encoded = frame.encode();
        self.transcript.push(TranscriptEntry {
            seq: self.transcript.len() as u64,
            tick: self.tick,
            from: from.to_owned(),
            to: to.to_owned(),
            kind: frame.kind.name().to_owned(),
            len: encoded.len(),
            hex: hex::encode(&encoded),
        });
        self.queues
            .entry(to.to_owned())
            .or_default()
            .push_back(Envelope { from: from.to_owned(), to: to.to_owned(), frame });
    }

    pub fn recv(&mut self, to: &str) -> Option<Envelope> {
        self.queues.get_mut(to)?.pop_front()
    }

    pub fn drain(&mut self, to: &str) -> Vec<Envelope> {
        self.queues.get_mut(to).map(|q| q.drain(..).collect()).unwrap_or_default()
    }

    /// Discards queued messages no actor consumes (broadcasts, replies to
    /// clients).
    pub fn discard(&mut self, to: &str) {
        self.queues.remove(to);
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn into_transcript(self) -> Vec<TranscriptEntry> {
        self.transcript
    }
}
