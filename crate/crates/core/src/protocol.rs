//! Line-delimited JSON protocol serving one [`Env`] to an external trainer.
//!
//! Every request is a single-line JSON object with a `type` field; every
//! request gets exactly one single-line response. Unknown fields are
//! ignored. Floats are written in shortest round-trip form.
//!
//! ```text
//! > {"type":"hello","version":"1"}
//! < {"type":"hello","version":"1","N":3,"M":2,"L":3,"T":100,...}
//! > {"type":"reset","seed":7}
//! < {"type":"observations","slot":1,"observations":{...},"rewards":{"mrp":[],"msp":[]},"done":false,"info":null}
//! > {"type":"step","actions":{"prices":[1.0,0.9],"demands":[[0.5,0.5],[0.4,0.4],[0.6,0.6]]}}
//! < {"type":"observations","slot":2,...}
//! > {"type":"close"}
//! < {"type":"bye"}
//! ```

use std::io::{BufRead, Write};
use std::net::{TcpListener, ToSocketAddrs};

use serde::{Deserialize, Serialize};

use crate::env::{action_bounds, ActionBounds, Actions, Env, EnvConfig, Observations, Rewards, StepInfo};
use crate::error::{Error, Result};
use crate::scenario::ScenarioFile;

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Hello {
        #[serde(default)]
        version: Option<String>,
    },
    Reset {
        #[serde(default)]
        seed: Option<u64>,
    },
    Step {
        actions: Actions,
    },
    SpecQuery,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    UnsupportedVersion,
    EpisodeFinished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsLengths {
    pub mrp: usize,
    pub msp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Hello {
        version: String,
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "M")]
        m: usize,
        #[serde(rename = "L")]
        l: usize,
        #[serde(rename = "T")]
        t: usize,
        action_bounds: ActionBounds,
        obs_lengths: ObsLengths,
    },
    Observations {
        slot: usize,
        observations: Observations,
        rewards: Rewards,
        done: bool,
        info: Option<StepInfo>,
    },
    Spec {
        scenario: ScenarioFile,
        env: EnvConfig,
    },
    Bye,
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl Response {
    fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Response::Error {
            code,
            message: message.into(),
        }
    }
}

/// Protocol state machine around one environment.
pub struct Server {
    env: Env,
}

impl Server {
    pub fn new(env: Env) -> Self {
        Server { env }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    fn hello(&self) -> Response {
        let s = self.env.scenario();
        let (mrp, msp) = self.env.obs_lengths();
        Response::Hello {
            version: PROTOCOL_VERSION.to_string(),
            n: s.n_msps(),
            m: s.n_mrps(),
            l: self.env.config().history_len,
            t: self.env.config().episode_len,
            action_bounds: action_bounds(s),
            obs_lengths: ObsLengths { mrp, msp },
        }
    }

    /// Answers one request. The flag is true once the client asked to close.
    pub fn handle(&mut self, request: Request) -> (Response, bool) {
        match request {
            Request::Hello { version } => match version {
                Some(v) if v != PROTOCOL_VERSION => (
                    Response::error(
                        ErrorCode::UnsupportedVersion,
                        format!("client speaks version {v}, server speaks {PROTOCOL_VERSION}"),
                    ),
                    false,
                ),
                _ => (self.hello(), false),
            },
            Request::Reset { seed } => {
                let observations = self.env.reset(seed);
                let response = Response::Observations {
                    slot: self.env.slot(),
                    observations,
                    rewards: Rewards {
                        mrp: Vec::new(),
                        msp: Vec::new(),
                    },
                    done: false,
                    info: None,
                };
                (response, false)
            }
            Request::Step { actions } => match self.env.step(&actions) {
                Ok(tr) => (
                    Response::Observations {
                        slot: self.env.slot(),
                        observations: tr.observations,
                        rewards: tr.rewards,
                        done: tr.done,
                        info: Some(tr.info),
                    },
                    false,
                ),
                Err(Error::EpisodeFinished) => (
                    Response::error(ErrorCode::EpisodeFinished, "episode finished; send reset"),
                    false,
                ),
                Err(e) => (Response::error(ErrorCode::BadRequest, e.to_string()), false),
            },
            Request::SpecQuery => (
                Response::Spec {
                    scenario: ScenarioFile::from(self.env.scenario()),
                    env: self.env.config().clone(),
                },
                false,
            ),
            Request::Close => (Response::Bye, true),
        }
    }

    /// Parses and answers one line of input.
    pub fn handle_line(&mut self, line: &str) -> (Response, bool) {
        match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(req),
            Err(e) => (Response::error(ErrorCode::BadRequest, format!("malformed request: {e}")), false),
        }
    }

    /// Serves requests until `close` or end of input.
    pub fn serve<R: BufRead, W: Write>(&mut self, reader: R, mut writer: W) -> Result<()> {
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (response, stop) = self.handle_line(&line);
            let text = serde_json::to_string(&response).map_err(|e| Error::Invariant(format!("response encoding: {e}")))?;
            writer.write_all(text.as_bytes())?;
            writer.write_all(b"\n")?;
            writer.flush()?;
            if stop {
                break;
            }
        }
        Ok(())
    }
}

/// Serves clients one after another on a TCP listener. Each connection gets
/// a freshly reset environment. Returns after `max_clients` connections if given.
pub fn serve_tcp<A: ToSocketAddrs>(env: Env, addr: A, max_clients: Option<usize>) -> Result<()> {
    let listener = TcpListener::bind(addr)?;
    log::info!("listening on {}", listener.local_addr()?);
    serve_listener(env, listener, max_clients)
}

pub fn serve_listener(env: Env, listener: TcpListener, max_clients: Option<usize>) -> Result<()> {
    let mut served = 0;
    for stream in listener.incoming() {
        let stream = stream?;
        let mut fresh = env.clone();
        fresh.reset(None);
        let reader = std::io::BufReader::new(stream.try_clone()?);
        if let Err(e) = Server::new(fresh).serve(reader, stream) {
            log::warn!("client dropped: {e}");
        }
        served += 1;
        if max_clients.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}
