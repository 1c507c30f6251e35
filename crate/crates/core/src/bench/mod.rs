//! Closed-loop load generation against a running cluster.
//!
//! Virtual clients draw operations from one shared, pre-generated stream and
//! pace themselves on a shared schedule: operation `i` is not sent before
//! `i / rate` seconds into the run. Each client has at most one request in
//! flight. Writes go to the leader, reads rotate over every node.

mod workload;

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use workload::{generate_ops, key_name, Op, OpGenerator, Workload, WorkloadSpec};

use crate::client::Client;
use crate::error::{Error, Result};
use crate::proto::PutRequest;

/// One request as seen by the client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub op: u64,
    pub client: usize,
    pub kind: String,
    pub node: usize,
    /// Send time relative to the start of the run.
    pub start_us: u64,
    pub latency_us: u64,
    pub ok: bool,
    pub revision: i64,
    pub error: String,
}

/// Leader revision and committed revision at one instant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSample {
    pub t_ms: u64,
    pub revision: i64,
    pub committed_revision: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles of latencies in microseconds.
    pub fn of(latencies_us: &[u64]) -> Self {
        if latencies_us.is_empty() {
            return Percentiles::default();
        }
        let mut v = latencies_us.to_vec();
        v.sort_unstable();
        let at = |p: f64| {
            let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
            v[rank.min(v.len()) - 1] as f64 / 1000.0
        };
        Percentiles {
            p50_ms: at(50.0),
            p90_ms: at(90.0),
            p99_ms: at(99.0),
            max_ms: *v.last().expect("non-empty") as f64 / 1000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub spec: WorkloadSpec,
    pub seed: u64,
    pub requests: u64,
    pub failed: u64,
    pub elapsed_s: f64,
    pub throughput_rps: f64,
    pub latency: Percentiles,
    pub read_latency: Percentiles,
    pub write_latency: Percentiles,
    /// Set when the run stopped early because a node became unreachable.
    pub aborted: bool,
    pub commit_lag: Vec<LagSample>,
    #[serde(skip)]
    pub samples: Vec<Sample>,
}

impl Report {
    /// One row per request.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        for s in &self.samples {
            w.serialize(s).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_lag_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        for s in &self.commit_lag {
            w.serialize(s).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Write every key of the initial key space through the leader.
pub async fn preload(spec: &WorkloadSpec, leader: &Client) -> Result<()> {
    let value = vec![b'x'; spec.value_size];
    let keys: Vec<u64> = (0..spec.key_count).collect();
    for chunk in keys.chunks(64) {
        let puts = chunk
            .iter()
            .map(|&i| leader.put_request(PutRequest::new(key_name(i), value.clone())));
        for r in futures::future::join_all(puts).await {
            r?;
        }
    }
    Ok(())
}

/// Run `spec` against `endpoints`, sending writes to `endpoints[leader]`.
/// The key space must already exist, see [`preload`].
pub async fn run_benchmark(spec: &WorkloadSpec, endpoints: &[String], leader: usize, seed: u64) -> Result<Report> {
    if endpoints.is_empty() || leader >= endpoints.len() {
        return Err(Error::InvalidArgument("need at least one endpoint and a valid leader index".into()));
    }
    let base = Client::new(endpoints[leader].clone())?;
    base.info().await?;
    let nodes: Arc<Vec<Client>> = Arc::new(endpoints.iter().map(|u| base.at(u.clone())).collect());
    let total = spec.total_ops();
    let ops: Arc<Vec<Op>> = Arc::new(generate_ops(spec, seed, total as usize));
    let next = Arc::new(AtomicU64::new(0));
    let reads = Arc::new(AtomicU64::new(0));
    let stop = Arc::new(AtomicBool::new(false));
    let start = Instant::now();
    let rate = spec.rate.max(1) as f64;

    let sampler = {
        let leader = nodes[leader].clone();
        let stop = stop.clone();
        tokio::spawn(async move {
            let mut lag = Vec::new();
            while !stop.load(Ordering::Relaxed) {
                if let Ok(info) = leader.info().await {
                    lag.push(LagSample {
                        t_ms: start.elapsed().as_millis() as u64,
                        revision: info.revision,
                        committed_revision: info.committed.revision,
                    });
                }
                tokio::time::sleep(Duration::from_millis(20)).await;
            }
            lag
        })
    };

    let mut tasks = Vec::new();
    for c in 0..spec.clients.max(1) {
        let (nodes, ops, next, reads, stop) = (nodes.clone(), ops.clone(), next.clone(), reads.clone(), stop.clone());
        let n = nodes.len() as u64;
        tasks.push(tokio::spawn(async move {
            let mut samples = Vec::new();
            loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= total {
                    break;
                }
                let due = start + Duration::from_secs_f64(i as f64 / rate);
                tokio::time::sleep_until(due.into()).await;
                let op = &ops[i as usize];
                let node = if op.is_write() {
                    leader
                } else {
                    (reads.fetch_add(1, Ordering::Relaxed) % n) as usize
                };
                let req = op.to_request();
                let sent = Instant::now();
                let res = nodes[node].execute(&req).await;
                let latency_us = sent.elapsed().as_micros() as u64;
                let (ok, revision, error) = match &res {
                    Ok(r) => (true, r.header().revision, String::new()),
                    Err(e) => {
                        if matches!(e, Error::Unavailable(_)) {
                            stop.store(true, Ordering::Relaxed);
                        }
                        (false, 0, e.to_string())
                    }
                };
                samples.push(Sample {
                    op: i,
                    client: c,
                    kind: op.kind().to_string(),
                    node,
                    start_us: sent.duration_since(start).as_micros() as u64,
                    latency_us,
                    ok,
                    revision,
                    error,
                });
            }
            samples
        }));
    }
    let mut samples = Vec::new();
    for t in tasks {
        samples.extend(t.await.map_err(|e| Error::Internal(e.to_string()))?);
    }
    let elapsed = start.elapsed();
    let aborted = stop.swap(true, Ordering::Relaxed);
    let commit_lag = sampler.await.map_err(|e| Error::Internal(e.to_string()))?;
    samples.sort_by_key(|s| s.op);

    let lat = |f: &dyn Fn(&Sample) -> bool| -> Vec<u64> {
        samples.iter().filter(|s| s.ok && f(s)).map(|s| s.latency_us).collect()
    };
    let writes = ["update", "insert", "rmw"];
    let failed = samples.iter().filter(|s| !s.ok).count() as u64;
    Ok(Report {
        spec: spec.clone(),
        seed,
        requests: samples.len() as u64,
        failed,
        elapsed_s: elapsed.as_secs_f64(),
        throughput_rps: samples.len() as f64 / elapsed.as_secs_f64(),
        latency: Percentiles::of(&lat(&|_| true)),
        read_latency: Percentiles::of(&lat(&|s| !writes.contains(&s.kind.as_str()))),
        write_latency: Percentiles::of(&lat(&|s| writes.contains(&s.kind.as_str()))),
        aborted: aborted || samples.len() as u64 != total,
        commit_lag,
        samples,
    })
}

/// Times at which the committed revision moved, from a lag series.
pub fn commit_steps(lag: &[LagSample]) -> Vec<u64> {
    lag.windows(2)
        .filter(|w| w[1].committed_revision > w[0].committed_revision)
        .map(|w| w[1].t_ms)
        .collect()
}
