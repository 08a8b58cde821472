//! Runner processes speaking the wire protocol over stdin/stdout.
//!
//! Each session owns one process. A process that exits mid-request is
//! restarted and the request re-issued, up to `retries` times per request;
//! after that the request is reported as `runtime_error` and the next
//! request starts on a fresh process. A request that outlives its
//! `timeout_s` is reported as `timeout` and its process killed.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::config::Device;
use super::protocol::{decode_frame, Frame, RunnerRequest, RunnerResponse, PROTOCOL_VERSION};
use super::{HarnessError, ProtocolViolation, Reply, Runner, RunnerSession};
use crate::records::{RecordKey, Status};

const STDERR_TAIL_LINES: usize = 20;
const STDERR_DRAIN: Duration = Duration::from_millis(500);

#[derive(Clone, Debug)]
pub struct ExternalOptions {
    /// Restarts allowed per request after the runner process dies.
    pub retries: u32,
    pub handshake_timeout: Duration,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        ExternalOptions {
            retries: 2,
            handshake_timeout: Duration::from_secs(60),
        }
    }
}

struct Process {
    id: usize,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    stderr_tail: Arc<Mutex<VecDeque<String>>>,
    stderr_done: Receiver<()>,
}

impl Process {
    fn send(&mut self, line: &str) -> bool {
        let Some(stdin) = self.stdin.as_mut() else { return false };
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .is_ok()
    }

    /// Kills and reaps the process, returning a short description of how it
    /// ended plus the tail of its stderr.
    fn terminate(mut self) -> String {
        self.stdin.take();
        let _ = self.child.kill();
        let status = self
            .child
            .wait()
            .map(|s| s.to_string())
            .unwrap_or_else(|e| format!("wait failed: {e}"));
        // Let the reader drain what the process wrote before it died. Bounded,
        // since a grandchild may keep the pipe open.
        let _ = self.stderr_done.recv_timeout(STDERR_DRAIN);
        let tail: Vec<String> = self.stderr_tail.lock().expect("stderr tail lock").iter().cloned().collect();
        if tail.is_empty() {
            status
        } else {
            format!("{status}; stderr: {}", tail.join(" | "))
        }
    }

    /// Closes stdin and gives the process a moment to exit on its own.
    fn close(mut self) {
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Handle on an external runner command. Processes are spawned on demand,
/// one per concurrent session, and reused across sessions.
pub struct ExternalRunner {
    command: String,
    opts: ExternalOptions,
    capabilities: Vec<Device>,
    idle: Mutex<Vec<Process>>,
    next_process: AtomicUsize,
    invocations: AtomicU64,
    transcript: Mutex<Vec<String>>,
}

/// Launches `command` through `sh -c` and performs the version handshake.
pub fn spawn_external_runner(command: &str, opts: ExternalOptions) -> Result<ExternalRunner, HarnessError> {
    let mut runner = ExternalRunner {
        command: command.to_string(),
        opts,
        capabilities: Vec::new(),
        idle: Mutex::new(Vec::new()),
        next_process: AtomicUsize::new(0),
        invocations: AtomicU64::new(0),
        transcript: Mutex::new(Vec::new()),
    };
    let (process, capabilities) = runner.spawn()?;
    runner.capabilities = capabilities;
    runner.idle.lock().expect("idle lock").push(process);
    Ok(runner)
}

impl ExternalRunner {
    /// Every frame sent and received plus process lifecycle events, in
    /// order. Lines are prefixed with the process number.
    pub fn transcript(&self) -> Vec<String> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    fn log(&self, process: usize, event: impl AsRef<str>) {
        self.transcript
            .lock()
            .expect("transcript lock")
            .push(format!("[{process}] {}", event.as_ref()));
    }

    fn spawn(&self) -> Result<(Process, Vec<Device>), HarnessError> {
        let id = self.next_process.fetch_add(1, Ordering::SeqCst);
        self.log(id, "spawn");
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| HarnessError::Handshake(format!("cannot start `{}`: {e}", self.command)))?;

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = child.stderr.take().expect("piped stderr");
        let stderr_tail = Arc::new(Mutex::new(VecDeque::new()));
        let tail = Arc::clone(&stderr_tail);
        let (done_tx, stderr_done) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines() {
                let Ok(line) = line else { break };
                log::debug!("runner[{id}] {line}");
                let mut t = tail.lock().expect("stderr tail lock");
                if t.len() == STDERR_TAIL_LINES {
                    t.pop_front();
                }
                t.push_back(line);
            }
            let _ = done_tx.send(());
        });

        let mut process = Process {
            id,
            stdin: child.stdin.take(),
            child,
            lines,
            stderr_tail,
            stderr_done,
        };
        match self.handshake(&mut process) {
            Ok(caps) => Ok((process, caps)),
            Err(msg) => {
                let end = process.terminate();
                self.log(id, "handshake failed");
                Err(HarnessError::Handshake(format!("{msg} ({end})")))
            }
        }
    }

    fn handshake(&self, process: &mut Process) -> Result<Vec<Device>, String> {
        let hello = Frame::hello().encode();
        self.log(process.id, format!("> {hello}"));
        if !process.send(&hello) {
            return Err("runner closed its input before the handshake".into());
        }
        let line = match process.lines.recv_timeout(self.opts.handshake_timeout) {
            Ok(line) => line,
            Err(RecvTimeoutError::Timeout) => return Err("no hello reply before the handshake timeout".into()),
            Err(RecvTimeoutError::Disconnected) => return Err("runner exited during the handshake".into()),
        };
        self.log(process.id, format!("< {line}"));
        match decode_frame(&line) {
            Ok(Frame::Hello {
                protocol: PROTOCOL_VERSION,
                capabilities: Some(caps),
            }) => Ok(caps),
            Ok(Frame::Hello { protocol, capabilities: Some(_) }) => {
                Err(format!("runner speaks protocol {protocol}, expected {PROTOCOL_VERSION}"))
            }
            Ok(other) => Err(format!("expected a hello frame with capabilities, got {}", other.encode())),
            Err(e) => Err(e.to_string()),
        }
    }

    fn take_process(&self) -> Result<Process, HarnessError> {
        if let Some(p) = self.idle.lock().expect("idle lock").pop() {
            return Ok(p);
        }
        self.spawn().map(|(p, _)| p)
    }
}

impl Drop for ExternalRunner {
    fn drop(&mut self) {
        let idle = std::mem::take(&mut *self.idle.lock().expect("idle lock"));
        for p in idle {
            p.close();
        }
    }
}

impl Runner for ExternalRunner {
    fn capabilities(&self) -> Vec<Device> {
        self.capabilities.clone()
    }

    fn open_session(&self) -> Result<Box<dyn RunnerSession + '_>, HarnessError> {
        Ok(Box::new(ExternalSession {
            runner: self,
            process: Some(self.take_process()?),
        }))
    }

    fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }
}

struct ExternalSession<'a> {
    runner: &'a ExternalRunner,
    process: Option<Process>,
}

impl Drop for ExternalSession<'_> {
    fn drop(&mut self) {
        if let Some(p) = self.process.take() {
            self.runner.idle.lock().expect("idle lock").push(p);
        }
    }
}

fn synthesized(id: &str, status: Status, diagnostics: String) -> Reply {
    Reply {
        response: RunnerResponse {
            id: id.to_string(),
            status,
            t_ref_ms: None,
            t_kernel_ms: None,
            diagnostics,
        },
        synthesized: true,
    }
}

impl RunnerSession for ExternalSession<'_> {
    fn run(&mut self, _key: &RecordKey, request: &RunnerRequest) -> Result<Reply, ProtocolViolation> {
        let runner = self.runner;
        let frame = Frame::Eval(request.clone()).encode();
        let timeout = Duration::from_secs_f64(request.config.timeout_s);
        let mut restarts = 0;
        loop {
            let mut process = match self.process.take() {
                Some(p) => p,
                None => runner.take_process().map_err(|e| ProtocolViolation(e.to_string()))?,
            };
            runner.log(process.id, format!("> {frame}"));
            runner.invocations.fetch_add(1, Ordering::SeqCst);
            let reply = if process.send(&frame) {
                process.lines.recv_timeout(timeout)
            } else {
                Err(RecvTimeoutError::Disconnected)
            };
            match reply {
                Ok(line) => {
                    runner.log(process.id, format!("< {line}"));
                    let violation = match decode_frame(&line) {
                        Ok(Frame::Result(r)) if r.id == request.id => {
                            self.process = Some(process);
                            return Ok(Reply {
                                response: r,
                                synthesized: false,
                            });
                        }
                        Ok(Frame::Result(r)) => format!("response for unknown id {:?} (expected {:?})", r.id, request.id),
                        Ok(Frame::Error { message, .. }) => format!("runner reported a protocol error: {message}"),
                        Ok(other) => format!("unexpected frame {}", other.encode()),
                        Err(e) => e.to_string(),
                    };
                    process.terminate();
                    return Err(ProtocolViolation(violation));
                }
                Err(RecvTimeoutError::Timeout) => {
                    runner.log(process.id, "timeout");
                    process.terminate();
                    return Ok(synthesized(
                        &request.id,
                        Status::Timeout,
                        format!("[harness] no response within {}s", request.config.timeout_s),
                    ));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let id = process.id;
                    let end = process.terminate();
                    runner.log(id, "exit");
                    if restarts >= runner.opts.retries {
                        runner.log(id, "retry budget exhausted");
                        return Ok(synthesized(
                            &request.id,
                            Status::RuntimeError,
                            format!(
                                "[harness] runner exited while handling the request after {restarts} restarts: {end}"
                            ),
                        ));
                    }
                    restarts += 1;
                    runner.log(id, format!("restart {restarts}/{}", runner.opts.retries));
                }
            }
        }
    }
}
