//! Protocol conformance stub.
//!
//! Speaks the runner wire protocol without compiling anything, for checking
//! a harness setup and for exercising its failure handling.
//!
//! ```text
//! kernelcur-stub-runner [--mode echo|hashed|silent|garbage|wrong-id|error-frame]
//!                       [--die-after N] [--capabilities cpu,gpu] [--bad-hello]
//! ```
//!
//! * `echo`: every request is `correct` with 1.0 ms for both timings.
//! * `hashed`: the in-process hashed mock verdict.
//! * `silent`: never answers eval frames.
//! * `garbage` / `wrong-id` / `error-frame`: protocol violations.
//! * `--die-after N`: exit with status 3 on the request after the N-th
//!   response of this process.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use kernelcur::harness::protocol::{decode_frame, Frame, RunnerResponse, PROTOCOL_VERSION};
use kernelcur::harness::{hashed_outcome, Device};
use kernelcur::Status;

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Echo,
    Hashed,
    Silent,
    Garbage,
    WrongId,
    ErrorFrame,
}

struct Args {
    mode: Mode,
    die_after: Option<u64>,
    capabilities: Vec<Device>,
    bad_hello: bool,
}

fn parse_args() -> Result<Args, String> {
    let mut args = Args {
        mode: Mode::Echo,
        die_after: None,
        capabilities: vec![Device::Cpu, Device::Gpu],
        bad_hello: false,
    };
    let mut it = std::env::args().skip(1);
    while let Some(flag) = it.next() {
        match flag.as_str() {
            "--mode" => {
                args.mode = match it.next().as_deref() {
                    Some("echo") => Mode::Echo,
                    Some("hashed") => Mode::Hashed,
                    Some("silent") => Mode::Silent,
                    Some("garbage") => Mode::Garbage,
                    Some("wrong-id") => Mode::WrongId,
                    Some("error-frame") => Mode::ErrorFrame,
                    other => return Err(format!("unknown mode {other:?}")),
                }
            }
            "--die-after" => {
                let n = it.next().ok_or("--die-after needs a value")?;
                args.die_after = Some(n.parse().map_err(|e| format!("--die-after: {e}"))?);
            }
            "--capabilities" => {
                let list = it.next().ok_or("--capabilities needs a value")?;
                args.capabilities = list
                    .split(',')
                    .map(|c| match c {
                        "cpu" => Ok(Device::Cpu),
                        "gpu" => Ok(Device::Gpu),
                        other => Err(format!("unknown capability {other:?}")),
                    })
                    .collect::<Result<_, _>>()?;
            }
            "--bad-hello" => args.bad_hello = true,
            other => return Err(format!("unknown argument {other:?}")),
        }
    }
    Ok(args)
}

fn emit(out: &mut impl Write, line: &str) -> io::Result<()> {
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()
}

fn main() -> ExitCode {
    let args = match parse_args() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("kernelcur-stub-runner: {e}");
            return ExitCode::from(2);
        }
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut answered = 0u64;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        let reply = match decode_frame(&line) {
            Ok(Frame::Hello { .. }) if args.bad_hello => r#"{"type":"hello","protocol":99,"capabilities":["cpu"]}"#.to_string(),
            Ok(Frame::Hello { .. }) => Frame::Hello {
                protocol: PROTOCOL_VERSION,
                capabilities: Some(args.capabilities.clone()),
            }
            .encode(),
            Ok(Frame::Eval(req)) => {
                if args.die_after.is_some_and(|n| answered >= n) {
                    eprintln!("stub: exiting after {answered} responses");
                    return ExitCode::from(3);
                }
                match args.mode {
                    Mode::Silent => continue,
                    Mode::Garbage => "this is not a frame".to_string(),
                    Mode::ErrorFrame => Frame::Error {
                        id: Some(req.id),
                        message: "stub refuses".into(),
                    }
                    .encode(),
                    mode => {
                        let o = if mode == Mode::Hashed {
                            hashed_outcome(&req.kernel_source)
                        } else {
                            kernelcur::harness::Outcome {
                                status: Status::Correct,
                                t_ref_ms: Some(1.0),
                                t_kernel_ms: Some(1.0),
                                diagnostics: String::new(),
                            }
                        };
                        let id = if mode == Mode::WrongId { format!("{}-x", req.id) } else { req.id };
                        Frame::Result(RunnerResponse {
                            id,
                            status: o.status,
                            t_ref_ms: o.t_ref_ms,
                            t_kernel_ms: o.t_kernel_ms,
                            diagnostics: o.diagnostics,
                        })
                        .encode()
                    }
                }
            }
            Ok(_) | Err(_) => Frame::Error {
                id: None,
                message: format!("cannot handle frame: {line}"),
            }
            .encode(),
        };
        if emit(&mut out, &reply).is_err() {
            break;
        }
        if reply.contains(r#""type":"result""#) || args.mode == Mode::Garbage {
            answered += 1;
        }
    }
    ExitCode::SUCCESS
}
