//! YCSB core workloads as deterministic operation streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::proto::{RangeRequest, Request, RequestOp, PutRequest, TxnRequest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Workload {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl Workload {
    pub const ALL: [Workload; 6] = [Workload::A, Workload::B, Workload::C, Workload::D, Workload::E, Workload::F];

    /// Percentage of operations that are the workload's mutating kind.
    pub fn write_percent(self) -> u32 {
        match self {
            Workload::A | Workload::F => 50,
            Workload::B | Workload::D | Workload::E => 5,
            Workload::C => 0,
        }
    }
}

impl std::str::FromStr for Workload {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Workload::A),
            "B" => Ok(Workload::B),
            "C" => Ok(Workload::C),
            "D" => Ok(Workload::D),
            "E" => Ok(Workload::E),
            "F" => Ok(Workload::F),
            _ => Err(format!("unknown workload {s:?}, expected A to F")),
        }
    }
}

impl std::fmt::Display for Workload {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub workload: Workload,
    pub key_count: u64,
    pub value_size: usize,
    pub zipf_theta: f64,
    pub clients: usize,
    /// Target requests per second across all clients.
    pub rate: u64,
    pub duration_s: u64,
    pub max_scan: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            workload: Workload::A,
            key_count: 1000,
            value_size: 100,
            zipf_theta: 0.99,
            clients: 100,
            rate: 1000,
            duration_s: 10,
            max_scan: 10,
        }
    }
}

impl WorkloadSpec {
    pub fn total_ops(&self) -> u64 {
        self.rate * self.duration_s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read { key: Vec<u8> },
    Update { key: Vec<u8>, value: Vec<u8> },
    Insert { key: Vec<u8>, value: Vec<u8> },
    Scan { start: Vec<u8>, limit: u64 },
    ReadModifyWrite { key: Vec<u8>, value: Vec<u8> },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Read { .. } => "read",
            Op::Update { .. } => "update",
            Op::Insert { .. } => "insert",
            Op::Scan { .. } => "scan",
            Op::ReadModifyWrite { .. } => "rmw",
        }
    }

    pub fn is_write(&self) -> bool {
        !matches!(self, Op::Read { .. } | Op::Scan { .. })
    }

    pub fn to_request(&self) -> Request {
        match self {
            Op::Read { key } => Request::Range(RangeRequest::key(key.clone())),
            Op::Update { key, value } | Op::Insert { key, value } => Request::Put(PutRequest::new(key.clone(), value.clone())),
            Op::Scan { start, limit } => {
                let mut r = RangeRequest::prefix_from(start.clone());
                r.limit = *limit as i64;
                Request::Range(r)
            }
            Op::ReadModifyWrite { key, value } => Request::Txn(TxnRequest {
                compare: Vec::new(),
                success: vec![
                    RequestOp::RequestRange(RangeRequest::key(key.clone())),
                    RequestOp::RequestPut(PutRequest::new(key.clone(), value.clone())),
                ],
                failure: Vec::new(),
            }),
        }
    }
}

pub fn key_name(i: u64) -> Vec<u8> {
    format!("user{i:012}").into_bytes()
}

/// FNV-1a, used to scatter popular Zipf ranks over the key space.
fn scramble(x: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in x.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic operation source for one spec and seed.
pub struct OpGenerator {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    zipf: Zipf<f64>,
    /// Keys `0..inserted` exist.
    inserted: u64,
}

impl OpGenerator {
    pub fn new(spec: &WorkloadSpec, seed: u64) -> Self {
        let n = spec.key_count.max(1);
        OpGenerator {
            spec: spec.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            zipf: Zipf::new(n, spec.zipf_theta).expect("theta is non-negative"),
            inserted: n,
        }
    }

    fn zipf_rank(&mut self) -> u64 {
        self.zipf.sample(&mut self.rng) as u64 - 1
    }

    fn existing_key(&mut self) -> Vec<u8> {
        let r = self.zipf_rank();
        key_name(scramble(r) % self.spec.key_count.max(1))
    }

    /// Skewed towards the most recently inserted keys.
    fn latest_key(&mut self) -> Vec<u8> {
        let r = self.zipf_rank().min(self.inserted - 1);
        key_name(self.inserted - 1 - r)
    }

    fn value(&mut self) -> Vec<u8> {
        (0..self.spec.value_size)
            .map(|_| self.rng.gen_range(b'a'..=b'z'))
            .collect()
    }

    fn insert(&mut self) -> Op {
        let key = key_name(self.inserted);
        self.inserted += 1;
        Op::Insert { key, value: self.value() }
    }

    pub fn next_op(&mut self) -> Op {
        let write = self.rng.gen_range(0..100) < self.spec.workload.write_percent();
        match (self.spec.workload, write) {
            (Workload::A | Workload::B, true) => Op::Update {
                key: self.existing_key(),
                value: self.value(),
            },
            (Workload::A | Workload::B | Workload::C, _) => Op::Read { key: self.existing_key() },
            (Workload::D, true) | (Workload::E, true) => self.insert(),
            (Workload::D, false) => Op::Read { key: self.latest_key() },
            (Workload::E, false) => {
                let start = self.existing_key();
                let limit = self.rng.gen_range(1..=self.spec.max_scan.max(1));
                Op::Scan { start, limit }
            }
            (Workload::F, true) => Op::ReadModifyWrite {
                key: self.existing_key(),
                value: self.value(),
            },
            (Workload::F, false) => Op::Read { key: self.existing_key() },
        }
    }
}

impl Iterator for OpGenerator {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        Some(self.next_op())
    }
}

/// The first `n` operations of the stream for `spec` and `seed`.
pub fn generate_ops(spec: &WorkloadSpec, seed: u64, n: usize) -> Vec<Op> {
    OpGenerator::new(spec, seed).take(n).collect()
}
