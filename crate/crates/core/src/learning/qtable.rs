use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CAPGENQ1";

/// Action values keyed by integer observation; missing entries read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_actions: usize,
    values: HashMap<u128, Vec<f64>>,
    visits: HashMap<u128, u64>,
}

#[derive(Serialize, Deserialize)]
struct Index {
    num_actions: usize,
    keys: Vec<String>,
    visits: Vec<u64>,
}

/// Lowest-index argmax over the legal entries of `row`.
pub fn greedy_legal(row: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (a, &ok) in mask.iter().enumerate() {
        if ok && best.map_or(true, |b| row[a] > row[b]) {
            best = Some(a);
        }
    }
    best
}

/// Uniform choice among legal actions.
pub fn random_legal<R: Rng>(mask: &[bool], rng: &mut R) -> usize {
    let legal: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
    *legal.choose(rng).expect("at least one legal action")
}

impl QTable {
    pub fn new(num_actions: usize) -> Self {
        Self {
            num_actions,
            values: HashMap::new(),
            visits: HashMap::new(),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, key: u128) -> Option<&[f64]> {
        self.values.get(&key).map(Vec::as_slice)
    }

    pub fn visits(&self, key: u128) -> u64 {
        self.visits.get(&key).copied().unwrap_or(0)
    }

    /// `max` over legal actions, zero for unseen keys.
    pub fn max_legal(&self, key: u128, mask: &[bool]) -> f64 {
        match self.values.get(&key) {
            Some(row) => greedy_legal(row, mask).map_or(0.0, |a| row[a]),
            None => 0.0,
        }
    }

    /// Greedy legal action; unseen keys fall back to a uniform legal action.
    pub fn act<R: Rng>(&self, key: u128, mask: &[bool], rng: &mut R) -> usize {
        match self.values.get(&key) {
            Some(row) => greedy_legal(row, mask).expect("at least one legal action"),
            None => random_legal(mask, rng),
        }
    }

    /// `Q(key, action) += alpha * (target - Q(key, action))`.
    pub fn update(&mut self, key: u128, action: usize, target: f64, alpha: f64) {
        let row = self
            .values
            .entry(key)
            .or_insert_with(|| vec![0.0; self.num_actions]);
        row[action] += alpha * (target - row[action]);
        *self.visits.entry(key).or_insert(0) += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (u128, &[f64])> {
        self.values.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    fn sorted_keys(&self) -> Vec<u128> {
        let mut keys: Vec<u128> = self.values.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Layout: magic, index length (u64 LE), JSON index, then the values of every
    /// key in index order as f64 LE.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let keys = self.sorted_keys();
        let index = Index {
            num_actions: self.num_actions,
            keys: keys.iter().map(|k| format!("{k:x}")).collect(),
            visits: keys.iter().map(|k| self.visits(*k)).collect(),
        };
        let json = serde_json::to_vec(&index)?;
        let mut out = Vec::with_capacity(16 + json.len() + keys.len() * self.num_actions * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for k in &keys {
            for x in &self.values[k] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Config(format!("q-table file: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad header"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| corrupt("truncated index"))?;
        let index: Index = serde_json::from_slice(body)?;
        if index.keys.len() != index.visits.len() {
            return Err(corrupt("index length mismatch"));
        }
        let payload = &bytes[16 + len..];
        if payload.len() != index.keys.len() * index.num_actions * 8 {
            return Err(corrupt("payload size does not match index"));
        }
        let mut table = Self::new(index.num_actions);
        let mut chunks = payload.chunks_exact(8);
        for (hex, visits) in index.keys.iter().zip(index.visits) {
            let key = u128::from_str_radix(hex, 16).map_err(|_| corrupt("bad key"))?;
            let row: Vec<f64> = (&mut chunks)
                .take(index.num_actions)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            table.values.insert(key, row);
            table.visits.insert(key, visits);
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_respects_mask_and_ties() {
        assert_eq!(greedy_legal(&[1.0, 5.0, 5.0], &[true, false, true]), Some(2));
        assert_eq!(greedy_legal(&[0.0, 0.0, 0.0], &[false, true, true]), Some(1));
        assert_eq!(greedy_legal(&[0.0], &[false]), None);
    }

    #[test]
    fn binary_round_trip() {
        let mut q = QTable::new(3);
        q.update(u128::MAX - 7, 1, 2.5, 0.5);
        q.update(3, 2, -1.0, 1.0);
        q.update(3, 0, 0.125, 1.0);
        let back = QTable::from_bytes(&q.to_bytes().unwrap()).unwrap();
        assert_eq!(back, q);
        assert_eq!(back.visits(3), 2);
        assert!(QTable::from_bytes(b"garbage").is_err());
    }

    #[test]
    fn unseen_key_acts_randomly_among_legal() {
        let q = QTable::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mask = [false, true, false, true];
        for _ in 0..50 {
            let a = q.act(9, &mask, &mut rng);
            assert!(mask[a]);
        }
    }
}
