//! Peer connections over TCP.
//!
//! Each node accepts frames from any peer on its peer listener and keeps one
//! outbound connection per peer, reconnecting on failure. Messages queued
//! while a peer is unreachable are dropped; replication retries on its own.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt, BufWriter};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use crate::replication::{decode_frame, encode_frame, Envelope};
use crate::replication::message::MAX_FRAME;
use crate::types::NodeId;

const QUEUE: usize = 8192;

/// Senders for every peer's outbound queue.
#[derive(Clone, Debug, Default)]
pub struct PeerSenders {
    peers: BTreeMap<NodeId, mpsc::Sender<Envelope>>,
}

impl PeerSenders {
    /// Queue a message; dropped if the queue is full or the peer unknown.
    pub fn send(&self, to: &NodeId, env: Envelope) {
        if let Some(tx) = self.peers.get(to) {
            let _ = tx.try_send(env);
        }
    }
}

/// Spawn one writer task per peer.
pub fn connect_peers(peers: &[(NodeId, SocketAddr)]) -> (PeerSenders, Vec<JoinHandle<()>>) {
    let mut senders = PeerSenders::default();
    let mut tasks = Vec::new();
    for (id, addr) in peers {
        let (tx, rx) = mpsc::channel(QUEUE);
        senders.peers.insert(id.clone(), tx);
        tasks.push(tokio::spawn(writer(*addr, rx)));
    }
    (senders, tasks)
}

async fn writer(addr: SocketAddr, mut rx: mpsc::Receiver<Envelope>) {
    loop {
        let stream = match TcpStream::connect(addr).await {
            Ok(s) => s,
            Err(_) => {
                // Drop whatever queued up while the peer was unreachable.
                while rx.try_recv().is_ok() {}
                tokio::time::sleep(Duration::from_millis(50)).await;
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        let mut w = BufWriter::new(stream);
        loop {
            let Some(env) = rx.recv().await else { return };
            let mut ok = w.write_all(&encode_frame(&env)).await.is_ok();
            while ok {
                match rx.try_recv() {
                    Ok(env) => ok = w.write_all(&encode_frame(&env)).await.is_ok(),
                    Err(_) => break,
                }
            }
            if !ok || w.flush().await.is_err() {
                break;
            }
        }
    }
}

/// Accept peer connections and forward decoded envelopes to `sink`.
pub fn serve_peers(listener: TcpListener, sink: mpsc::Sender<Envelope>) -> JoinHandle<()> {
    tokio::spawn(async move {
        loop {
            let Ok((stream, _)) = listener.accept().await else { continue };
            let _ = stream.set_nodelay(true);
            tokio::spawn(read_frames(stream, sink.clone()));
        }
    })
}

async fn read_frames(mut stream: TcpStream, sink: mpsc::Sender<Envelope>) {
    let mut len = [0u8; 4];
    loop {
        if stream.read_exact(&mut len).await.is_err() {
            return;
        }
        let n = u32::from_le_bytes(len) as usize;
        if n == 0 || n > MAX_FRAME {
            tracing::warn!(len = n, "closing peer connection with bad frame length");
            return;
        }
        let mut buf = vec![0u8; n];
        if stream.read_exact(&mut buf).await.is_err() {
            return;
        }
        match decode_frame(&buf) {
            Ok(env) => {
                if sink.send(env).await.is_err() {
                    return;
                }
            }
            Err(e) => {
                tracing::warn!(error = %e, "closing peer connection");
                return;
            }
        }
    }
}
