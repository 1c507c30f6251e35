use std::time::Duration;

use lskv::api::{LocalCluster, LocalClusterOptions};
use lskv::client::{verify_intermediary, wait_for_commit, Client, CommitStrategy, HttpCommitApi, TxStatus};
use lskv::proto::{PutRequest, Request, Response, WatchCreateRequest};
use lskv::TxId;

fn opts() -> LocalClusterOptions {
    LocalClusterOptions {
        signature_interval_ms: 100,
        index_tick_ms: 10,
        ..Default::default()
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn follower_write_is_forwarded_committed_and_receipted() {
    let cluster = LocalCluster::start(opts()).unwrap();
    let leader = cluster.wait_for_leader(Duration::from_secs(10)).await.unwrap();
    let follower = (leader + 1) % cluster.len();
    let c = Client::new(cluster.url(follower)).unwrap().with_session();

    let req = PutRequest::new("k1", "v1");
    let resp = c.put_request(req.clone()).await.unwrap();
    let txid = TxId::new(resp.header.raft_term, resp.header.revision);
    assert!(txid.revision >= 1);
    assert!(resp.header.committed_revision < resp.header.revision);

    // Session read on the follower sees the write.
    let kv = c.get("k1").await.unwrap().expect("own write visible");
    assert_eq!(kv.value, b"v1");

    let mut api = HttpCommitApi { client: c.clone() };
    let out = wait_for_commit(&mut api, &[txid], CommitStrategy::PollWithTermHistory, 10_000)
        .await
        .unwrap();
    assert_eq!(out.statuses, vec![TxStatus::Committed]);

    let receipt = c.receipt(txid).await.unwrap();
    let cert = cluster.service_cert().unwrap();
    verify_intermediary(&Request::Put(req), &Response::Put(resp), &receipt, &cert).unwrap();

    // cluster_id is shared, member_id is per node.
    let a = cluster.info(0).await.unwrap();
    let b = cluster.info(1).await.unwrap();
    assert_eq!(a.cluster_id, b.cluster_id);
    assert_ne!(a.member_id, b.member_id);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn watch_streams_committed_events() {
    let cluster = LocalCluster::start(opts()).unwrap();
    let leader = cluster.wait_for_leader(Duration::from_secs(10)).await.unwrap();
    let c = Client::new(cluster.url(leader)).unwrap();
    let mut w = c
        .watch(&WatchCreateRequest {
            key: b"w/".to_vec(),
            range_end: Some(b"w0".to_vec()),
            start_revision: 0,
        })
        .await
        .unwrap();
    for i in 0..5 {
        c.put(format!("w/{i}"), "x").await.unwrap();
    }
    let mut got = Vec::new();
    while got.len() < 5 {
        let m = tokio::time::timeout(Duration::from_secs(10), w.next())
            .await
            .unwrap()
            .unwrap()
            .unwrap();
        assert!(!m.canceled);
        got.extend(m.events.into_iter().map(|e| e.kv.key));
    }
    let want: Vec<Vec<u8>> = (0..5).map(|i| format!("w/{i}").into_bytes()).collect();
    assert_eq!(got, want);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn headers_never_move_backwards() {
    let cluster = LocalCluster::start(opts()).unwrap();
    let leader = cluster.wait_for_leader(Duration::from_secs(10)).await.unwrap();
    let clients: Vec<Client> = (0..cluster.len()).map(|i| Client::new(cluster.url(i)).unwrap()).collect();
    let mut last_committed = vec![TxId::GENESIS; cluster.len()];
    let mut last_write = TxId::GENESIS;
    for i in 0..150 {
        let n = i % cluster.len();
        let h = if i % 3 == 0 {
            clients[n].range(lskv::proto::RangeRequest::key("m")).await.unwrap().header
        } else {
            let h = clients[n].put("m", format!("{i}")).await.unwrap().header;
            let w = TxId::new(h.raft_term, h.revision);
            assert!(w > last_write, "write {w} after {last_write}");
            last_write = w;
            h
        };
        let c = TxId::new(h.committed_raft_term, h.committed_revision);
        assert!(c >= last_committed[n], "node {n} committed went from {} to {c}", last_committed[n]);
        assert!(TxId::new(h.raft_term, h.revision) >= c);
        last_committed[n] = c;
        if i % 25 == 0 {
            tokio::time::sleep(Duration::from_millis(60)).await;
        }
    }
    assert!(last_committed[leader] > TxId::GENESIS);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_json_fields_are_ignored() {
    let cluster = LocalCluster::start(opts()).unwrap();
    let leader = cluster.wait_for_leader(Duration::from_secs(10)).await.unwrap();
    let http = reqwest::Client::new();
    let url = cluster.url(leader);
    let put = http
        .post(format!("{url}/v3/kv/put"))
        .json(&serde_json::json!({"key": "a2V5", "value": "dmFs", "ignore_value": true, "x_future": {"n": 1}}))
        .send()
        .await
        .unwrap();
    assert!(put.status().is_success(), "{}", put.text().await.unwrap());
    let range: serde_json::Value = http
        .post(format!("{url}/v3/kv/range"))
        .json(&serde_json::json!({"key": "a2V5", "serializable": true}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(range["kvs"][0]["value"], "dmFs", "{range}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn bench_clients_are_closed_loop() {
    use lskv::bench::{preload, run_benchmark, Workload, WorkloadSpec};
    let cluster = LocalCluster::start(opts()).unwrap();
    let leader = cluster.wait_for_leader(Duration::from_secs(10)).await.unwrap();
    let spec = WorkloadSpec {
        workload: Workload::A,
        key_count: 200,
        clients: 20,
        rate: 300,
        duration_s: 2,
        ..Default::default()
    };
    preload(&spec, &Client::new(cluster.url(leader)).unwrap()).await.unwrap();
    let report = run_benchmark(&spec, &cluster.urls(), leader, 5).await.unwrap();
    assert_eq!(report.failed, 0);
    assert!(!report.aborted);
    let mut by_client = std::collections::BTreeMap::<usize, Vec<_>>::new();
    for s in &report.samples {
        by_client.entry(s.client).or_default().push(s);
        if s.kind == "update" || s.kind == "insert" {
            assert_eq!(s.node, leader, "{s:?}");
        }
    }
    assert!(by_client.len() > 1);
    for (c, mut samples) in by_client {
        samples.sort_by_key(|s| s.start_us);
        for w in samples.windows(2) {
            assert!(
                w[1].start_us + 1 >= w[0].start_us + w[0].latency_us,
                "client {c} sent op {} before op {} returned",
                w[1].op,
                w[0].op
            );
        }
    }
    let read_nodes: std::collections::BTreeSet<usize> =
        report.samples.iter().filter(|s| s.kind == "read").map(|s| s.node).collect();
    assert_eq!(read_nodes.len(), cluster.len());
}
