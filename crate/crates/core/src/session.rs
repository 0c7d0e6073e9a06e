//! Interactive driving session behind the websocket demo.
//!
//! Messages are JSON objects tagged by `type`. The client sends
//! `key_action`, `record` and `reset`; the server answers with `init` once,
//! then a `frame` per tick, `metrics` at each episode end, a `record`
//! acknowledgement whenever recording is toggled, and `error` before closing
//! on a malformed message.

use std::path::{Path, PathBuf};

use base64::Engine;
use daif_env::render::{Frame, FRAME_H, FRAME_W};
use daif_env::{EnvConfig, RaceEnv, ACTIONS, NUM_ACTIONS};
use serde::{Deserialize, Serialize};

use crate::demo::{DemoRecord, DemoWriter};
use crate::error::{CoreError, Result};
use crate::preprocess::{preprocess, Observation};
use crate::trainer::{episode_seed, mar_update};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    KeyAction { action: usize },
    Record { on: bool },
    Reset { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Init {
        /// `[steer, accel, brake]` per action index.
        actions: Vec<[f32; 3]>,
        width: usize,
        height: usize,
    },
    Frame {
        seq: u64,
        reward: f32,
        done: bool,
        png_base64: String,
    },
    Metrics {
        episode: u64,
        mar: f64,
    },
    Record {
        on: bool,
        records: usize,
        path: Option<String>,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

/// Parses and validates one client message.
pub fn parse_client(text: &str) -> Result<ClientMessage> {
    let msg: ClientMessage =
        serde_json::from_str(text).map_err(|e| CoreError::Protocol(format!("malformed message: {e}")))?;
    if let ClientMessage::KeyAction { action } = msg {
        if action >= NUM_ACTIONS {
            return Err(CoreError::Protocol(format!("action {action} out of range 0..{NUM_ACTIONS}")));
        }
    }
    Ok(msg)
}

pub fn encode_png(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, FRAME_W as u32, FRAME_H as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| CoreError::Protocol(format!("png: {e}")))?;
        w.write_image_data(frame.as_bytes())
            .map_err(|e| CoreError::Protocol(format!("png: {e}")))?;
    }
    Ok(out)
}

struct Recording {
    writer: DemoWriter,
    path: PathBuf,
}

pub struct Session {
    env: RaceEnv,
    seed: u64,
    episode: u64,
    seq: u64,
    action: usize,
    episode_reward: f64,
    mar: Option<f64>,
    observation: Observation,
    record_dir: PathBuf,
    recording: Option<Recording>,
    recordings: u64,
}

impl Session {
    /// Starts a session on the first track derived from `seed`. Recordings
    /// are written into `record_dir`.
    pub fn new(config: EnvConfig, seed: u64, record_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut env = RaceEnv::new(config)?;
        let frame = env.reset(episode_seed(seed, 0))?;
        Ok(Self {
            env,
            seed,
            episode: 0,
            seq: 0,
            action: 0,
            episode_reward: 0.0,
            mar: None,
            observation: preprocess(&frame),
            record_dir: record_dir.into(),
            recording: None,
            recordings: 0,
        })
    }

    pub fn init_message(&self) -> ServerMessage {
        ServerMessage::Init {
            actions: ACTIONS.iter().map(|c| [c.steer, c.accel, c.brake]).collect(),
            width: FRAME_W,
            height: FRAME_H,
        }
    }

    pub fn action(&self) -> usize {
        self.action
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>> {
        match msg {
            ClientMessage::KeyAction { action } => {
                if action >= NUM_ACTIONS {
                    return Err(CoreError::Protocol(format!("action {action} out of range")));
                }
                self.action = action;
                Ok(Vec::new())
            }
            ClientMessage::Record { on } => Ok(vec![self.set_recording(on)?]),
            ClientMessage::Reset { seed } => {
                self.seed = seed;
                self.episode = 0;
                self.restart()?;
                Ok(Vec::new())
            }
        }
    }

    fn restart(&mut self) -> Result<()> {
        let frame = self.env.reset(episode_seed(self.seed, self.episode))?;
        self.observation = preprocess(&frame);
        self.episode_reward = 0.0;
        Ok(())
    }

    fn set_recording(&mut self, on: bool) -> Result<ServerMessage> {
        match (on, self.recording.take()) {
            (true, Some(rec)) => {
                let msg = ServerMessage::Record {
                    on: true,
                    records: rec.writer.count(),
                    path: Some(rec.path.display().to_string()),
                };
                self.recording = Some(rec);
                Ok(msg)
            }
            (true, None) => {
                std::fs::create_dir_all(&self.record_dir)?;
                let path = self.record_dir.join(format!("session_{:03}.fepd", self.recordings));
                self.recordings += 1;
                let writer = DemoWriter::create(&path)?;
                let msg = ServerMessage::Record {
                    on: true,
                    records: 0,
                    path: Some(path.display().to_string()),
                };
                self.recording = Some(Recording { writer, path });
                Ok(msg)
            }
            (false, Some(rec)) => {
                let records = rec.writer.finish()?;
                Ok(ServerMessage::Record {
                    on: false,
                    records,
                    path: Some(rec.path.display().to_string()),
                })
            }
            (false, None) => Ok(ServerMessage::Record {
                on: false,
                records: 0,
                path: None,
            }),
        }
    }

    /// Advances the simulator one step with the held action. At episode end
    /// the session emits `metrics` and starts the next track.
    pub fn tick(&mut self) -> Result<Vec<ServerMessage>> {
        let step = self.env.step(self.action)?;
        self.episode_reward += step.reward as f64;
        if let Some(rec) = self.recording.as_mut() {
            rec.writer.push(&DemoRecord {
                action: self.action as u8,
                reward: step.reward,
                done: step.done,
                observation: self.observation.clone(),
            })?;
        }
        self.observation = preprocess(&step.frame);
        let png = encode_png(&step.frame)?;
        let mut out = vec![ServerMessage::Frame {
            seq: self.seq,
            reward: step.reward,
            done: step.done,
            png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        }];
        self.seq += 1;
        if step.done {
            let mar = match self.mar {
                Some(prev) => mar_update(prev, self.episode_reward),
                None => self.episode_reward,
            };
            self.mar = Some(mar);
            out.push(ServerMessage::Metrics {
                episode: self.episode,
                mar,
            });
            self.episode += 1;
            self.restart()?;
        }
        Ok(out)
    }

    /// Finalizes any open recording.
    pub fn close(mut self) -> Result<Option<(PathBuf, usize)>> {
        match self.recording.take() {
            Some(rec) => Ok(Some((rec.path, rec.writer.finish()?))),
            None => Ok(None),
        }
    }

    pub fn record_dir(&self) -> &Path {
        &self.record_dir
    }
}
