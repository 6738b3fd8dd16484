use std::collections::HashSet;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// A minibatch `z_t`: row indices plus its position in the data stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    indices: Vec<usize>,
    epoch: u64,
    step: u64,
}

impl Batch {
    pub fn new(indices: Vec<usize>, epoch: u64, step: u64) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Contract("batch must contain at least one row".into()));
        }
        let mut seen = HashSet::with_capacity(indices.len());
        if let Some(dup) = indices.iter().find(|i| !seen.insert(**i)) {
            return Err(Error::Contract(format!("duplicate row {dup} in batch")));
        }
        Ok(Batch { indices, epoch, step })
    }

    /// All rows `0..n` in order.
    pub fn full(n: usize) -> Self {
        Batch {
            indices: (0..n).collect(),
            epoch: 0,
            step: 0,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Position within the epoch.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= n) {
            Some(i) => Err(Error::Contract(format!("batch row {i} out of range for n={n}"))),
            None => Ok(()),
        }
    }

    /// First 8 bytes of SHA-256 over the little-endian indices.
    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        for i in &self.indices {
            h.update((*i as u64).to_le_bytes());
        }
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
    }
}

/// Splits one epoch's (optionally shuffled) permutation of `0..n` into
/// `⌈n / batch_size⌉` batches; the last may be short.
pub fn make_batches(n: usize, batch_size: usize, shuffle: bool, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::Contract(format!(
            "batch_size must be in [1, {n}], got {batch_size}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    if shuffle {
        perm.shuffle(&mut stream_rng(seed, Stream::Shuffle { epoch }));
    }
    Ok(perm
        .chunks(batch_size)
        .enumerate()
        .map(|(k, c)| Batch {
            indices: c.to_vec(),
            epoch,
            step: k as u64,
        })
        .collect())
}
