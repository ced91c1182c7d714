//! Out-of-process policies over line-delimited JSON.
//!
//! Each request is one JSON object on one line, tagged by `op`
//! (`sample`, `logprob`, `greedy`, `sft`, `rl`, `snapshot`, `tokens`,
//! `checkpoint`, `describe`). Each reply is one line:
//! `{"ok": true, "result": ...}` or `{"ok": false, "error": "..."}`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Completion, Policy, PromptSpec, RlMetrics, RlSample, SequenceLogProb, SftExample};
use crate::error::{Error, Result};
use crate::stance::LabelSpace;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Describe,
    Sample {
        prompt: PromptSpec,
        n: usize,
        temperature: f64,
        seed: u64,
    },
    Greedy {
        prompt: PromptSpec,
    },
    Logprob {
        prompt: PromptSpec,
        tokens: Vec<u32>,
        temperature: f64,
    },
    Sft {
        batch: Vec<SftExample>,
        learning_rate: f64,
    },
    Rl {
        batch: Vec<RlSample>,
        clip_range: f64,
        kl_coefficient: f64,
        learning_rate: f64,
    },
    Snapshot,
    Tokens {
        text: String,
    },
    Checkpoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Reply {
    ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Description {
    backend: String,
    label_space: LabelSpace,
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Client side of the protocol.
pub struct RemotePolicy {
    endpoint: String,
    backend: String,
    label_space: LabelSpace,
    conn: Mutex<Conn>,
}

impl RemotePolicy {
    pub fn connect(endpoint: &str, space: LabelSpace) -> Result<Self> {
        let addr = endpoint
            .to_socket_addrs()
            .map_err(|e| Error::Config(format!("bad endpoint {endpoint:?}: {e}")))?
            .next()
            .ok_or_else(|| Error::Config(format!("endpoint {endpoint:?} resolves to nothing")))?;
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(10))?;
        let conn = Conn {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        };
        let mut p = RemotePolicy {
            endpoint: endpoint.to_string(),
            backend: String::new(),
            label_space: space,
            conn: Mutex::new(conn),
        };
        let d: Description = p.call(&Request::Describe)?;
        if d.label_space != space {
            return Err(Error::Contract(format!(
                "backend at {endpoint} serves a different label space"
            )));
        }
        p.backend = format!("remote:{}", d.backend);
        Ok(p)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn call<T: DeserializeOwned>(&self, req: &Request) -> Result<T> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| Error::State("connection poisoned".into()))?;
        let mut line = serde_json::to_string(req)?;
        line.push('\n');
        conn.writer.write_all(line.as_bytes())?;
        conn.writer.flush()?;
        let mut buf = String::new();
        if conn.reader.read_line(&mut buf)? == 0 {
            return Err(Error::Contract("backend closed the connection".into()));
        }
        let reply: Reply = serde_json::from_str(&buf)?;
        if !reply.ok {
            return Err(Error::Contract(reply.error.unwrap_or_else(|| "unspecified backend error".into())));
        }
        Ok(serde_json::from_value(reply.result.unwrap_or(Value::Null))?)
    }
}

impl Policy for RemotePolicy {
    fn backend(&self) -> String {
        self.backend.clone()
    }

    fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    fn sample(&self, prompt: &PromptSpec, n: usize, temperature: f64, seed: u64) -> Result<Vec<Completion>> {
        if !(temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        let out: Vec<Completion> = self.call(&Request::Sample {
            prompt: prompt.clone(),
            n,
            temperature,
            seed,
        })?;
        if out.len() != n || out.iter().any(|c| c.token_ids.len() != c.token_logprobs.len()) {
            return Err(Error::Contract("malformed sample reply".into()));
        }
        Ok(out)
    }

    fn greedy(&self, prompt: &PromptSpec) -> Result<Completion> {
        self.call(&Request::Greedy { prompt: prompt.clone() })
    }

    fn logprob(&self, prompt: &PromptSpec, tokens: &[u32], temperature: f64) -> Result<SequenceLogProb> {
        self.call(&Request::Logprob {
            prompt: prompt.clone(),
            tokens: tokens.to_vec(),
            temperature,
        })
    }

    fn sft_update(&mut self, batch: &[SftExample], learning_rate: f64) -> Result<f64> {
        self.call(&Request::Sft {
            batch: batch.to_vec(),
            learning_rate,
        })
    }

    fn rl_update(
        &mut self,
        batch: &[RlSample],
        clip_range: f64,
        kl_coefficient: f64,
        learning_rate: f64,
    ) -> Result<RlMetrics> {
        self.call(&Request::Rl {
            batch: batch.to_vec(),
            clip_range,
            kl_coefficient,
            learning_rate,
        })
    }

    fn snapshot_reference(&mut self) -> Result<()> {
        let _: Value = self.call(&Request::Snapshot)?;
        Ok(())
    }

    fn count_tokens(&self, text: &str) -> usize {
        self.call(&Request::Tokens { text: text.into() })
            .unwrap_or_else(|_| text.split_whitespace().count())
    }

    fn checkpoint(&self) -> Result<Value> {
        self.call(&Request::Checkpoint)
    }
}

/// Executes one request against `policy`.
pub fn handle(policy: &mut dyn Policy, req: Request) -> Result<Value> {
    Ok(match req {
        Request::Describe => serde_json::to_value(Description {
            backend: policy.backend(),
            label_space: policy.label_space(),
        })?,
        Request::Sample {
            prompt,
            n,
            temperature,
            seed,
        } => serde_json::to_value(policy.sample(&prompt, n, temperature, seed)?)?,
        Request::Greedy { prompt } => serde_json::to_value(policy.greedy(&prompt)?)?,
        Request::Logprob {
            prompt,
            tokens,
            temperature,
        } => serde_json::to_value(policy.logprob(&prompt, &tokens, temperature)?)?,
        Request::Sft { batch, learning_rate } => serde_json::to_value(policy.sft_update(&batch, learning_rate)?)?,
        Request::Rl {
            batch,
            clip_range,
            kl_coefficient,
            learning_rate,
        } => serde_json::to_value(policy.rl_update(&batch, clip_range, kl_coefficient, learning_rate)?)?,
        Request::Snapshot => {
            policy.snapshot_reference()?;
            Value::Null
        }
        Request::Tokens { text } => serde_json::to_value(policy.count_tokens(&text))?,
        Request::Checkpoint => policy.checkpoint()?,
    })
}

/// Serves one connection until the peer hangs up.
pub fn serve_connection(policy: &mut dyn Policy, stream: TcpStream) -> Result<()> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line)
            .map_err(Error::from)
            .and_then(|req| handle(policy, req))
        {
            Ok(v) => Reply {
                ok: true,
                result: Some(v),
                error: None,
            },
            Err(e) => Reply {
                ok: false,
                result: None,
                error: Some(e.to_string()),
            },
        };
        writer.write_all((serde_json::to_string(&reply)? + "\n").as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Serves connections one at a time, forever or until `max_connections`.
pub fn serve(policy: &mut dyn Policy, listener: TcpListener, max_connections: Option<usize>) -> Result<()> {
    for (i, stream) in listener.incoming().enumerate() {
        serve_connection(policy, stream?)?;
        if max_connections.is_some_and(|m| i + 1 >= m) {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{system_prompt, ToyPolicy};
    use crate::schema::render;
    use crate::stance::Stance;
    use crate::survey::Country;

    #[test]
    fn roundtrip_through_socket() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let server = std::thread::spawn(move || {
            let mut toy = ToyPolicy::tabular(LabelSpace::Binary);
            serve(&mut toy, listener, Some(1)).unwrap();
        });

        let mut remote = RemotePolicy::connect(&addr, LabelSpace::Binary).unwrap();
        assert_eq!(remote.backend(), "remote:toy-tabular");
        let prompt = PromptSpec {
            system: system_prompt(Country::US, LabelSpace::Binary),
            question_id: "q".into(),
            question_text: "Build the wall?".into(),
            label_space: LabelSpace::Binary,
        };
        let local = ToyPolicy::tabular(LabelSpace::Binary);
        let a = remote.sample(&prompt, 4, 1.0, 3).unwrap();
        assert_eq!(a, local.sample(&prompt, 4, 1.0, 3).unwrap());

        assert!(matches!(remote.rl_update(&[], 0.2, 0.0, 0.1), Err(Error::Contract(_))));
        let loss = remote
            .sft_update(
                &[SftExample {
                    prompt: prompt.clone(),
                    target: render("x", Stance::No),
                }],
                1.0,
            )
            .unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        remote.snapshot_reference().unwrap();
        let lp = remote.logprob(&prompt, &a[0].token_ids, 1.0).unwrap();
        assert_eq!(Some(lp.current), lp.reference);
        assert_eq!(remote.count_tokens("a b c"), 3);
        assert!(remote.checkpoint().unwrap().get("head").is_some());
        drop(remote);
        server.join().unwrap();
    }

    #[test]
    fn label_space_mismatch_is_rejected() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let server = std::thread::spawn(move || {
            let mut toy = ToyPolicy::tabular(LabelSpace::Ternary);
            serve(&mut toy, listener, Some(1)).unwrap();
        });
        assert!(matches!(
            RemotePolicy::connect(&addr, LabelSpace::Binary),
            Err(Error::Contract(_))
        ));
        server.join().unwrap();
    }
}
