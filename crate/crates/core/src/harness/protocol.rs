//! Newline-delimited JSON frames exchanged with runner processes.
//!
//! ```text
//! harness -> runner  {"type":"hello","protocol":1}
//! runner  -> harness {"type":"hello","protocol":1,"capabilities":["cpu"]}
//! harness -> runner  {"type":"eval","id":..,"task_source":..,"kernel_source":..,"config":{..}}
//! runner  -> harness {"type":"result","id":..,"status":"correct",..,"diagnostics":..}
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{Device, RunConfig};
use crate::records::Status;

pub const PROTOCOL_VERSION: u32 = 1;

/// Longest frame accepted from a runner.
pub const MAX_FRAME_BYTES: usize = 64 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the limit")]
    TooLong(usize),
    #[error("malformed frame: {0}")]
    Malformed(String),
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Frame {
    Hello {
        protocol: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capabilities: Option<Vec<Device>>,
    },
    Eval(RunnerRequest),
    Result(RunnerResponse),
    /// Sent by a runner that could not make sense of a frame.
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        #[serde(default)]
        message: String,
    },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RunnerRequest {
    pub id: String,
    pub task_source: String,
    pub kernel_source: String,
    pub config: RunConfig,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RunnerResponse {
    pub id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ref_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_kernel_ms: Option<f64>,
    #[serde(default)]
    pub diagnostics: String,
}

impl Frame {
    pub fn hello() -> Frame {
        Frame::Hello {
            protocol: PROTOCOL_VERSION,
            capabilities: None,
        }
    }

    /// One line, without the trailing newline.
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }
}

pub fn decode_frame(line: &str) -> Result<Frame, FrameError> {
    if line.len() > MAX_FRAME_BYTES {
        return Err(FrameError::TooLong(line.len()));
    }
    serde_json::from_str(line.trim_end_matches(['\r', '\n'])).map_err(|e| FrameError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_frames_are_bit_exact() {
        assert_eq!(Frame::hello().encode(), r#"{"type":"hello","protocol":1}"#);
        let reply = decode_frame(r#"{"type":"hello","protocol":1,"capabilities":["gpu","cpu"]}"#).unwrap();
        assert_eq!(
            reply,
            Frame::Hello {
                protocol: 1,
                capabilities: Some(vec![Device::Gpu, Device::Cpu])
            }
        );
    }

    #[test]
    fn eval_frame_layout() {
        let frame = Frame::Eval(RunnerRequest {
            id: "r0".into(),
            task_source: "ref".into(),
            kernel_source: "new".into(),
            config: RunConfig::default(),
        });
        assert_eq!(
            frame.encode(),
            r#"{"type":"eval","id":"r0","task_source":"ref","kernel_source":"new","config":{"warmup_iters":3,"timed_iters":10,"timing_agg":"median","n_input_seeds":5,"atol":0.01,"rtol":0.01,"timeout_s":300.0,"device":"gpu"}}"#
        );
        assert_eq!(decode_frame(&frame.encode()).unwrap(), frame);
    }

    #[test]
    fn result_frames_accept_every_status() {
        for (s, status) in [
            ("correct", Status::Correct),
            ("incorrect", Status::Incorrect),
            ("compile_error", Status::CompileError),
            ("runtime_error", Status::RuntimeError),
            ("timeout", Status::Timeout),
        ] {
            let line = format!(r#"{{"type":"result","id":"x","status":"{s}","t_ref_ms":null,"diagnostics":""}}"#);
            match decode_frame(&line).unwrap() {
                Frame::Result(r) => assert_eq!((r.status, r.t_ref_ms), (status, None)),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_frame("hello").is_err());
        assert!(decode_frame(r#"{"type":"result","id":"x","status":"fast"}"#).is_err());
        assert!(decode_frame(r#"{"type":"bogus"}"#).is_err());
        assert!(decode_frame(r#"{"protocol":1}"#).is_err());
    }
}
