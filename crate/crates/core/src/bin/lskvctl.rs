use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lskv::api::{write_cluster_files, MemberAddr};
use lskv::bench::{preload, run_benchmark, Workload, WorkloadSpec};
use lskv::client::{verify_intermediary, wait_for_commit, Client, CommitStrategy, HttpCommitApi};
use lskv::crypto::{Certificate, KeyPair, NodeKeys};
use lskv::ledger::verify_ledger;
use lskv::proto::*;
use lskv::receipt::Receipt;
use lskv::{Error, TxId};

#[derive(Parser)]
#[command(name = "lskvctl", version, about = "Command-line client for lskv clusters")]
struct Cli {
    /// Node to talk to.
    #[arg(long, global = true, env = "LSKV_ENDPOINT", default_value = "http://127.0.0.1:2379")]
    endpoint: String,
    /// Bearer token for clusters that require one.
    #[arg(long, global = true, env = "LSKV_TOKEN")]
    token: Option<String>,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a key.
    Put {
        key: String,
        value: String,
        #[arg(long, default_value_t = 0)]
        lease: i64,
        /// Save request.json and response.json here for later receipt checks.
        #[arg(long)]
        capture: Option<PathBuf>,
    },
    /// Read a key or a prefix.
    Get {
        key: String,
        #[arg(long)]
        prefix: bool,
        /// Read at a committed historical revision.
        #[arg(long, default_value_t = 0)]
        rev: i64,
    },
    /// Delete a key or a prefix.
    Del {
        key: String,
        #[arg(long)]
        prefix: bool,
    },
    /// Run a transaction given as JSON (compare, success, failure).
    Txn { file: PathBuf },
    /// Grant, revoke or refresh leases.
    #[command(subcommand)]
    Lease(LeaseCmd),
    /// Stream changes to a key or prefix.
    Watch {
        key: String,
        #[arg(long)]
        prefix: bool,
        #[arg(long, default_value_t = 0)]
        rev: i64,
        /// Exit after this many events.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Status of a transaction ID such as 2.17.
    Status {
        txid: TxId,
        /// Wait until it is committed or invalid.
        #[arg(long)]
        wait: bool,
        #[arg(long, default_value = "poll_with_term_history")]
        strategy: CommitStrategy,
    },
    /// Latest committed transaction ID.
    Committed,
    /// First transaction ID of every term.
    TermHistory,
    /// Fetch or check write receipts.
    #[command(subcommand)]
    Receipt(ReceiptCmd),
    /// Verify a ledger file offline.
    Audit {
        ledger: PathBuf,
        #[arg(long)]
        service_cert: PathBuf,
        /// File holding the hex ledger secret; also checks encrypted contents.
        #[arg(long)]
        secret: Option<PathBuf>,
    },
    /// Register a public prefix (admin only).
    SetPublicPrefix {
        prefix: String,
        #[arg(long)]
        admin_key: PathBuf,
        #[arg(long)]
        admin_cert: PathBuf,
    },
    /// Replication state of the node.
    Info,
    /// Generate keys and configs for a local cluster.
    Keygen(KeygenArgs),
    /// Run a YCSB-style workload.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum LeaseCmd {
    /// New lease with a TTL in seconds.
    Grant { ttl: i64 },
    Revoke { id: i64 },
    Keepalive { id: i64 },
}

#[derive(Subcommand)]
enum ReceiptCmd {
    /// Fetch the receipt of a committed write.
    Get {
        txid: TxId,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write YAML instead of JSON.
        #[arg(long)]
        yaml: bool,
    },
    /// Check a receipt against the request and response you hold.
    Verify {
        receipt: PathBuf,
        #[arg(long)]
        service_cert: PathBuf,
        #[arg(long)]
        request: PathBuf,
        #[arg(long)]
        response: PathBuf,
    },
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long, default_value = "cluster")]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    nodes: usize,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Node i listens for clients on base + 10 i and for peers on base + 10 i + 1.
    #[arg(long, default_value_t = 2379)]
    base_port: u16,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "A")]
    workload: Workload,
    /// Comma-separated node URLs; defaults to --endpoint.
    #[arg(long, value_delimiter = ',')]
    endpoints: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    rate: u64,
    #[arg(long, default_value_t = 10)]
    duration: u64,
    #[arg(long, default_value_t = 100)]
    clients: usize,
    #[arg(long, default_value_t = 1000)]
    keys: u64,
    #[arg(long, default_value_t = 100)]
    value_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    skip_preload: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn read(path: &Path) -> lskv::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Structured results print as JSON whether or not `--json` was given.
fn show<T: Serialize>(_json: bool, v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("value serializes"));
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn range_end(key: &str, prefix: bool) -> Option<Vec<u8>> {
    prefix.then(|| lskv::kv::prefix_end(key.as_bytes()).unwrap_or_else(|| vec![0]))
}

async fn run(cli: Cli) -> lskv::Result<bool> {
    let mut client = Client::new(cli.endpoint.clone())?;
    if let Some(t) = &cli.token {
        client = client.with_token(t.clone());
    }
    let json = cli.json;
    match cli.cmd {
        Cmd::Put {
            key,
            value,
            lease,
            capture,
        } => {
            let req = PutRequest {
                lease,
                ..PutRequest::new(key, value)
            };
            let resp = client.put_request(req.clone()).await?;
            if let Some(dir) = capture {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("request.json"), serde_json::to_vec_pretty(&Request::Put(req))?)?;
                std::fs::write(dir.join("response.json"), serde_json::to_vec_pretty(&Response::Put(resp.clone()))?)?;
            }
            if json {
                show(true, &resp);
            } else {
                println!("OK {}.{}", resp.header.raft_term, resp.header.revision);
            }
        }
        Cmd::Get { key, prefix, rev } => {
            let req = RangeRequest {
                key: key.into_bytes(),
                range_end: None,
                revision: rev,
                ..Default::default()
            };
            let req = RangeRequest {
                range_end: range_end(&text(&req.key), prefix),
                ..req
            };
            let resp = client.range(req).await?;
            if json {
                show(true, &resp);
            } else {
                for kv in &resp.kvs {
                    println!("{}\n{}", text(&kv.key), text(&kv.value));
                }
            }
        }
        Cmd::Del { key, prefix } => {
            let req = DeleteRangeRequest {
                range_end: range_end(&key, prefix),
                ..DeleteRangeRequest::key(key)
            };
            let resp = client.delete_range(req).await?;
            if json {
                show(true, &resp);
            } else {
                println!("{}", resp.deleted);
            }
        }
        Cmd::Txn { file } => {
            let req: TxnRequest = serde_json::from_str(&read(&file)?)?;
            let resp = client.txn(req).await?;
            if json {
                show(true, &resp);
            } else {
                println!("{}", if resp.succeeded { "SUCCESS" } else { "FAILURE" });
            }
        }
        Cmd::Lease(l) => match l {
            LeaseCmd::Grant { ttl } => {
                let r = client.lease_grant(ttl).await?;
                if json {
                    show(true, &r);
                } else {
                    println!("lease {} granted with TTL {}s", r.id, r.ttl);
                }
            }
            LeaseCmd::Revoke { id } => show(json, &client.lease_revoke(id).await?),
            LeaseCmd::Keepalive { id } => show(json, &client.lease_keepalive(id).await?),
        },
        Cmd::Watch { key, prefix, rev, count } => {
            let req = WatchCreateRequest {
                range_end: range_end(&key, prefix),
                key: key.into_bytes(),
                start_revision: rev,
            };
            let mut w = client.watch(&req).await?;
            let mut seen = 0;
            while let Some(m) = w.next().await? {
                for e in &m.events {
                    if json {
                        println!("{}", serde_json::to_string(e)?);
                    } else {
                        println!("{:?} {} {}", e.kind, text(&e.kv.key), text(&e.kv.value));
                    }
                    seen += 1;
                }
                if m.canceled {
                    eprintln!("watch cancelled: {}", m.cancel_reason);
                    return Ok(false);
                }
                if count.is_some_and(|c| seen >= c) {
                    break;
                }
            }
        }
        Cmd::Status { txid, wait, strategy } => {
            if wait {
                let mut api = HttpCommitApi { client: client.clone() };
                let out = wait_for_commit(&mut api, &[txid], strategy, 60_000).await?;
                show(json, &serde_json::json!({ "txid": txid, "status": out.statuses[0], "polls": out.polls }));
            } else {
                show(json, &client.tx_status(txid).await?);
            }
        }
        Cmd::Committed => show(json, &client.committed().await?),
        Cmd::TermHistory => show(json, &client.term_history().await?),
        Cmd::Receipt(ReceiptCmd::Get { txid, out, yaml }) => {
            let r = client.receipt(txid).await?;
            let body = if yaml { r.to_yaml() } else { r.to_json() };
            match out {
                Some(p) => std::fs::write(p, body)?,
                None => println!("{body}"),
            }
        }
        Cmd::Receipt(ReceiptCmd::Verify {
            receipt,
            service_cert,
            request,
            response,
        }) => {
            let receipt = Receipt::parse(&read(&receipt)?)?;
            let cert = Certificate::from_pem(&read(&service_cert)?)?;
            let request: Request = serde_json::from_str(&read(&request)?)?;
            let response: Response = serde_json::from_str(&read(&response)?)?;
            return Ok(match verify_intermediary(&request, &response, &receipt, &cert) {
                Ok(v) => {
                    show(json, &serde_json::json!({ "ok": true, "node_id": v.node_id, "root": v.root }));
                    true
                }
                Err(report) => {
                    if json {
                        show(true, &serde_json::json!({ "ok": false, "stage": report.stage, "message": report.message }));
                    } else {
                        eprintln!("receipt rejected: {report}");
                    }
                    false
                }
            });
        }
        Cmd::Audit {
            ledger,
            service_cert,
            secret,
        } => {
            let data = std::fs::read(&ledger)?;
            let cert = Certificate::from_pem(&read(&service_cert)?)?;
            let secret = secret.map(|p| lskv::api::config::read_secret(&p)).transpose()?;
            return Ok(match verify_ledger(&data, &cert, secret.as_ref()) {
                Ok(r) => {
                    show(json, &r);
                    true
                }
                Err(f) => {
                    if json {
                        show(
                            true,
                            &serde_json::json!({ "ok": false, "record": f.record, "offset": f.offset, "reason": f.reason }),
                        );
                    } else {
                        eprintln!("{f}");
                    }
                    false
                }
            });
        }
        Cmd::SetPublicPrefix {
            prefix,
            admin_key,
            admin_cert,
        } => {
            let admin = NodeKeys {
                key: KeyPair::from_pem(&read(&admin_key)?)?,
                cert: Certificate::from_pem(&read(&admin_cert)?)?,
            };
            show(json, &client.set_public_prefix(prefix, &admin).await?);
        }
        Cmd::Info => show(json, &client.info().await?),
        Cmd::Keygen(k) => {
            let members: Vec<MemberAddr> = (0..k.nodes)
                .map(|i| {
                    let port = |off: u16| -> lskv::Result<SocketAddr> {
                        format!("{}:{}", k.host, k.base_port + 10 * i as u16 + off)
                            .parse()
                            .map_err(|e| Error::InvalidArgument(format!("address: {e}")))
                    };
                    Ok(MemberAddr {
                        id: format!("n{i}"),
                        http_addr: port(0)?,
                        peer_addr: port(1)?,
                    })
                })
                .collect::<lskv::Result<_>>()?;
            let cfgs = write_cluster_files(&k.out, &members, k.seed, |_| {})?;
            for c in &cfgs {
                println!("{}: {} (peer {})", c.node_id, c.http_addr, c.peer_addr);
            }
            println!("wrote keys and configs to {}", k.out.display());
        }
        Cmd::Bench(b) => {
            let endpoints = if b.endpoints.is_empty() {
                vec![cli.endpoint.clone()]
            } else {
                b.endpoints.clone()
            };
            let spec = WorkloadSpec {
                workload: b.workload,
                key_count: b.keys,
                value_size: b.value_size,
                clients: b.clients,
                rate: b.rate,
                duration_s: b.duration,
                ..Default::default()
            };
            let info = client.at(endpoints[0].clone()).info().await?;
            let leader_id = info
                .leader
                .ok_or_else(|| Error::Unavailable("cluster has no leader".into()))?;
            let mut leader = None;
            for (i, e) in endpoints.iter().enumerate() {
                if client.at(e.clone()).info().await?.node_id == leader_id {
                    leader = Some(i);
                }
            }
            let leader =
                leader.ok_or_else(|| Error::InvalidArgument(format!("leader {leader_id} is not among the endpoints")))?;
            if !b.skip_preload {
                preload(&spec, &client.at(endpoints[leader].clone())).await?;
            }
            let report = run_benchmark(&spec, &endpoints, leader, b.seed).await?;
            if let Some(p) = &b.csv {
                report.write_csv(p)?;
            }
            if let Some(p) = &b.report {
                report.write_json(p)?;
            }
            if json {
                show(true, &report);
            } else {
                println!(
                    "workload {} requests {} failed {} throughput {:.1}/s p50 {:.2} ms p90 {:.2} ms p99 {:.2} ms{}",
                    spec.workload,
                    report.requests,
                    report.failed,
                    report.throughput_rps,
                    report.latency.p50_ms,
                    report.latency.p90_ms,
                    report.latency.p99_ms,
                    if report.aborted { " (aborted)" } else { "" }
                );
            }
            return Ok(report.failed == 0 && !report.aborted);
        }
    }
    Ok(true)
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let cli = Cli::parse();
    match run(cli).await {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
