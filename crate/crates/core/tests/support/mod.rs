#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};
use toolpath_core::dataset::{load_dataset, DatasetFile};
use toolpath_core::model::InvocationNode;
use toolpath_core::plan::{DependencyGraph, ExecutionPath, NodeId, PlanStep};
use toolpath_core::tree::MatchStatus;

pub fn fixture() -> DatasetFile {
    load_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/cases.json")).expect("fixture loads")
}

/// A DAG over nodes `0..n` given as an adjacency matrix, plus the hidden
/// topological order used to build it.
#[derive(Debug, Clone)]
pub struct RandomDag {
    pub n: usize,
    pub order: Vec<usize>,
    pub adj: Vec<Vec<bool>>,
}

impl RandomDag {
    /// Each pair is joined with probability `p`, oriented along a random
    /// permutation.
    pub fn sample(rng: &mut impl Rng, n: usize, p: f64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(p) {
                    adj[order[i]][order[j]] = true;
                }
            }
        }
        RandomDag { n, order, adj }
    }

    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for a in 0..self.n {
            for b in 0..self.n {
                if self.adj[a][b] {
                    out.push((a as u32, b as u32));
                }
            }
        }
        out
    }

    pub fn graph(&self) -> DependencyGraph {
        let nodes = (0..self.n)
            .map(|i| InvocationNode {
                id: NodeId(i as u32),
                tool_name: format!("tool_{i}"),
                arguments: Default::default(),
                alternates: Default::default(),
                observation: None,
            })
            .collect();
        let edges = self.edges().into_iter().map(|(a, b)| (NodeId(a), NodeId(b))).collect();
        DependencyGraph { nodes, edges }
    }

    pub fn preds(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&u| self.adj[u][v])
    }
}

/// Every ordered set partition of `0..n` whose blocks only depend on
/// earlier blocks.
pub fn brute_force_paths(dag: &RandomDag) -> Vec<ExecutionPath> {
    fn rec(dag: &RandomDag, remaining: u32, blocks: &mut Vec<u32>, out: &mut Vec<ExecutionPath>) {
        if remaining == 0 {
            if valid(dag, blocks) {
                let steps = blocks
                    .iter()
                    .map(|&b| PlanStep::new((0..dag.n).filter(|i| b >> i & 1 == 1).map(|i| NodeId(i as u32))))
                    .collect();
                out.push(ExecutionPath::new(steps));
            }
            return;
        }
        let mut sub = remaining;
        while sub != 0 {
            blocks.push(sub);
            rec(dag, remaining & !sub, blocks, out);
            blocks.pop();
            sub = (sub - 1) & remaining;
        }
    }
    fn valid(dag: &RandomDag, blocks: &[u32]) -> bool {
        let mut done = 0u32;
        for &b in blocks {
            for v in (0..dag.n).filter(|i| b >> i & 1 == 1) {
                if dag.preds(v).any(|u| done >> u & 1 == 0) {
                    return false;
                }
            }
            done |= b;
        }
        true
    }
    let mut out = Vec::new();
    if dag.n > 0 {
        rec(dag, (1u32 << dag.n) - 1, &mut Vec::new(), &mut out);
    }
    out.sort();
    out
}

/// Number of nodes on the longest chain, by DP along the hidden order.
pub fn longest_chain(dag: &RandomDag) -> usize {
    let mut depth = vec![0usize; dag.n];
    for &v in &dag.order {
        depth[v] = 1 + dag.preds(v).map(|u| depth[u]).max().unwrap_or(0);
    }
    depth.into_iter().max().unwrap_or(0)
}

/// Replays `steps` by filtering the flat path list position by position.
/// Returns the status, steps consumed and survivors after each accepted step.
pub fn flat_replay(paths: &[(ExecutionPath, bool)], steps: &[PlanStep]) -> (MatchStatus, usize, Vec<usize>) {
    let mut alive: Vec<&(ExecutionPath, bool)> = paths.iter().collect();
    let mut survivors = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        let next: Vec<_> = alive.iter().copied().filter(|(p, _)| p.steps.get(i) == Some(step)).collect();
        if next.is_empty() {
            let mut expected: Vec<PlanStep> = alive.iter().filter_map(|(p, _)| p.steps.get(i).cloned()).collect();
            expected.sort();
            expected.dedup();
            return (MatchStatus::Mismatch { expected, got: step.clone() }, i, survivors);
        }
        alive = next;
        survivors.push(alive.len());
        if let Some((_, optimal)) = alive.iter().find(|(p, _)| p.steps.len() == i + 1) {
            let status = if *optimal { MatchStatus::CompleteOptimal } else { MatchStatus::CompleteSuboptimal };
            return (status, i + 1, survivors);
        }
    }
    (MatchStatus::Continue, steps.len(), survivors)
}

/// A step sequence that mostly follows `path` but sometimes substitutes a
/// random non-empty node subset or stops early.
pub fn perturbed_sequence(rng: &mut impl Rng, n: usize, path: &ExecutionPath) -> Vec<PlanStep> {
    let len = rng.random_range(0..=path.steps.len() + 1);
    (0..len)
        .map(|i| match path.steps.get(i) {
            Some(s) if rng.random_bool(0.8) => s.clone(),
            _ => {
                let mask: u32 = rng.random_range(1..(1u32 << n).max(2));
                PlanStep::new((0..n).filter(|b| mask >> b & 1 == 1).map(|b| NodeId(b as u32)))
            }
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Canned replies for the stub chat-completion server.
#[derive(Debug, Clone)]
pub enum Reply {
    Json(String),
    /// Hold the connection open without answering.
    Stall(Duration),
    Status(u16, String),
}

pub fn tool_reply(calls: &[(&str, Value)]) -> Reply {
    let calls: Vec<Value> = calls
        .iter()
        .enumerate()
        .map(|(i, (name, args))| {
            json!({ "id": format!("stub_{i}"), "type": "function",
                    "function": { "name": name, "arguments": args.to_string() } })
        })
        .collect();
    envelope(json!({ "role": "assistant", "content": Value::Null, "tool_calls": calls }))
}

pub fn text_reply(text: &str) -> Reply {
    envelope(json!({ "role": "assistant", "content": text }))
}

pub fn raw_arguments_reply(name: &str, raw_arguments: &str) -> Reply {
    envelope(json!({ "role": "assistant", "tool_calls": [
        { "id": "stub_0", "type": "function", "function": { "name": name, "arguments": raw_arguments } }
    ] }))
}

fn envelope(message: Value) -> Reply {
    Reply::Json(json!({ "id": "stub", "object": "chat.completion", "choices": [{ "index": 0, "message": message }] }).to_string())
}

#[derive(Default)]
struct StubState {
    routes: BTreeMap<String, Vec<Reply>>,
    hits: BTreeMap<String, usize>,
    requests: Vec<(String, Value)>,
}

/// Minimal HTTP/1.1 server on a loopback port. Each route serves its
/// replies in order and repeats the last one once exhausted.
pub struct StubServer {
    addr: SocketAddr,
    state: Arc<Mutex<StubState>>,
}

impl StubServer {
    pub fn start(routes: BTreeMap<String, Vec<Reply>>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().expect("local addr");
        let state = Arc::new(Mutex::new(StubState { routes, ..StubState::default() }));
        let shared = Arc::clone(&state);
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let state = Arc::clone(&shared);
                thread::spawn(move || serve(stream, &state));
            }
        });
        StubServer { addr, state }
    }

    pub fn url(&self, route: &str) -> String {
        format!("http://{}{}", self.addr, route)
    }

    pub fn hits(&self, route: &str) -> usize {
        self.state.lock().unwrap().hits.get(route).copied().unwrap_or(0)
    }

    pub fn requests(&self, route: &str) -> Vec<Value> {
        self.state.lock().unwrap().requests.iter().filter(|(r, _)| r == route).map(|(_, b)| b.clone()).collect()
    }
}

fn serve(stream: TcpStream, state: &Mutex<StubState>) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let route = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let reply = {
        let mut st = state.lock().unwrap();
        let n = st.hits.entry(route.clone()).or_default();
        let k = *n;
        *n += 1;
        st.requests.push((route.clone(), serde_json::from_slice(&body).unwrap_or(Value::Null)));
        match st.routes.get(&route) {
            Some(replies) if !replies.is_empty() => replies[k.min(replies.len() - 1)].clone(),
            _ => Reply::Status(404, "no such route".into()),
        }
    };
    let (code, text) = match reply {
        Reply::Stall(d) => {
            thread::sleep(d);
            return;
        }
        Reply::Json(text) => (200, text),
        Reply::Status(code, text) => (code, text),
    };
    let mut stream = stream;
    let head = format!(
        "HTTP/1.1 {code} STUB\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        text.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(text.as_bytes());
    let _ = stream.flush();
}
