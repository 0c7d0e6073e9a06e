//! FEPD demonstration recordings.
//!
//! Layout (little endian): `"FEPD"`, version `u32`, stack size `u32`, then
//! records of `{action u8, reward f32, done u8, observation 42×42 u8}` until
//! end of file. Each record holds the observation the action was chosen on.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::preprocess::{Observation, ObservationStack, N_SCREENS, OBS_LEN};

pub const MAGIC: &[u8; 4] = b"FEPD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;
pub const RECORD_LEN: usize = 1 + 4 + 1 + OBS_LEN;

#[derive(Clone, Debug, PartialEq)]
pub struct DemoRecord {
    pub action: u8,
    pub reward: f32,
    pub done: bool,
    pub observation: Observation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demo {
    pub n_screens: u32,
    pub records: Vec<DemoRecord>,
}

impl Default for Demo {
    fn default() -> Self {
        Self {
            n_screens: N_SCREENS as u32,
            records: Vec::new(),
        }
    }
}

fn parse_err(offset: usize, reason: impl Into<String>) -> CoreError {
    CoreError::Parse {
        format: "FEPD",
        offset: offset as u64,
        reason: reason.into(),
    }
}

pub fn write_header(w: &mut impl Write, n_screens: u32) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&n_screens.to_le_bytes())
}

pub fn write_record(w: &mut impl Write, r: &DemoRecord) -> std::io::Result<()> {
    w.write_all(&[r.action])?;
    w.write_all(&r.reward.to_le_bytes())?;
    w.write_all(&[r.done as u8])?;
    w.write_all(r.observation.bytes())
}

impl Demo {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_header(w, self.n_screens)?;
        for r in &self.records {
            write_record(w, r)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(parse_err(bytes.len(), "truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(parse_err(0, "bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(parse_err(4, format!("unsupported version {version}")));
        }
        let n_screens = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if n_screens == 0 {
            return Err(parse_err(8, "stack size must be positive"));
        }
        let body = &bytes[HEADER_LEN..];
        let mut records = Vec::with_capacity(body.len() / RECORD_LEN);
        for (i, rec) in body.chunks(RECORD_LEN).enumerate() {
            let offset = HEADER_LEN + i * RECORD_LEN;
            if rec.len() < RECORD_LEN {
                return Err(parse_err(offset + rec.len(), format!("truncated record {i}")));
            }
            let action = rec[0];
            if action as usize >= daif_env::NUM_ACTIONS {
                return Err(parse_err(offset, format!("action {action} out of range")));
            }
            let reward = f32::from_le_bytes(rec[1..5].try_into().unwrap());
            let done = match rec[5] {
                0 => false,
                1 => true,
                v => return Err(parse_err(offset + 5, format!("done flag {v} is not 0/1"))),
            };
            records.push(DemoRecord {
                action,
                reward,
                done,
                observation: Observation::from_bytes(&rec[6..])?,
            });
        }
        Ok(Self { n_screens, records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(std::fs::File::open(path)?).read_to_end(&mut bytes)?;
        Self::parse(&bytes)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every window of `n_screens` consecutive observations (episode
    /// boundaries are not respected), oldest first.
    pub fn stacks(&self) -> Result<Vec<ObservationStack>> {
        let n = self.n_screens as usize;
        if n != N_SCREENS {
            return Err(CoreError::Config(format!("demo stacks {n} frames, agents use {N_SCREENS}")));
        }
        if self.records.len() < n {
            return Err(CoreError::Argument(format!(
                "demo has {} frames, need at least {n}",
                self.records.len()
            )));
        }
        let obs: Vec<Observation> = self.records.iter().map(|r| r.observation.clone()).collect();
        obs.windows(n).map(ObservationStack::from_frames).collect()
    }
}

/// Appends records to a file as they arrive.
pub struct DemoWriter {
    w: BufWriter<std::fs::File>,
    count: usize,
}

impl DemoWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write_header(&mut w, N_SCREENS as u32)?;
        Ok(Self { w, count: 0 })
    }

    pub fn push(&mut self, r: &DemoRecord) -> Result<()> {
        write_record(&mut self.w, r)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> Result<usize> {
        self.w.flush()?;
        Ok(self.count)
    }
}
