//! Bit-packed hash codes, Hamming search and retrieval metrics.
//!
//! A code bit is set when the embedding coordinate is `>= 0`, i.e. bit `1`
//! encodes `+1` and bit `0` encodes `-1`. Bit `j` lives in word `j / 64`
//! at position `j % 64`; unused high bits of the last word are zero.

mod io;
mod metrics;

pub use io::{decode_codes, encode_codes, load_codes, save_codes, CODES_MAGIC, CODES_VERSION};
pub use metrics::{mean_average_precision, precision_at_k, MapOptions};

use crate::diffcore::Array;
use crate::error::{Error, Result};

pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// A `bits`-long binary code packed into little-endian 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    words: Vec<u64>,
    bits: usize,
}

impl HashCode {
    /// Packs a bit vector (`true` = +1).
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; words_for(bits.len())];
        for (j, &b) in bits.iter().enumerate() {
            if b {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        Self {
            words,
            bits: bits.len(),
        }
    }

    pub fn from_words(words: Vec<u64>, bits: usize) -> Result<Self> {
        if words.len() != words_for(bits) {
            return Err(Error::shape(
                "hash code words",
                &[words_for(bits)],
                &[words.len()],
            ));
        }
        if bits % 64 != 0 {
            if let Some(&last) = words.last() {
                if last >> (bits % 64) != 0 {
                    return Err(Error::Format(format!(
                        "code of {bits} bits has bits set past the end"
                    )));
                }
            }
        }
        Ok(Self { words, bits })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, j: usize) -> bool {
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.bits).map(|j| self.bit(j)).collect()
    }

    /// `±1` form of the code.
    pub fn to_signs(&self) -> Vec<f64> {
        (0..self.bits)
            .map(|j| if self.bit(j) { 1.0 } else { -1.0 })
            .collect()
    }
}

/// Binarizes every row of an embedding: bit set iff `u >= 0`.
pub fn binarize(u: &Array) -> Vec<HashCode> {
    (0..u.rows())
        .map(|i| {
            let bits: Vec<bool> = u.row(i).iter().map(|&v| v >= 0.0).collect();
            HashCode::from_bits(&bits)
        })
        .collect()
}

#[inline]
fn popcount_distance(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Number of differing bits.
pub fn hamming(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::shape("hamming", &[a.bits], &[b.bits]));
    }
    Ok(popcount_distance(&a.words, &b.words))
}

/// One search hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub id: u64,
    pub distance: u32,
}

/// Immutable store of packed codes with labels and stable ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalIndex {
    bits: usize,
    words_per_code: usize,
    codes: Vec<u64>,
    labels: Vec<i32>,
    ids: Vec<u64>,
}

impl RetrievalIndex {
    pub fn new(bits: usize) -> Self {
        Self {
            bits,
            words_per_code: words_for(bits),
            codes: Vec::new(),
            labels: Vec::new(),
            ids: Vec::new(),
        }
    }

    /// Index over `codes` with ids `0..n`.
    pub fn from_codes(codes: &[HashCode], labels: &[i32]) -> Result<Self> {
        let bits = codes.first().map_or(0, HashCode::bits);
        let mut idx = Self::new(bits);
        if labels.len() != codes.len() {
            return Err(Error::shape(
                "index labels",
                &[codes.len()],
                &[labels.len()],
            ));
        }
        for (i, (c, &l)) in codes.iter().zip(labels).enumerate() {
            idx.push(i as u64, c, l)?;
        }
        Ok(idx)
    }

    pub fn push(&mut self, id: u64, code: &HashCode, label: i32) -> Result<()> {
        if code.bits != self.bits {
            return Err(Error::shape("index push", &[self.bits], &[code.bits]));
        }
        self.codes.extend_from_slice(&code.words);
        self.labels.push(label);
        self.ids.push(id);
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn words(&self, i: usize) -> &[u64] {
        &self.codes[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    pub fn code(&self, i: usize) -> HashCode {
        HashCode {
            words: self.words(i).to_vec(),
            bits: self.bits,
        }
    }

    fn check_query(&self, query: &HashCode) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("retrieval index"));
        }
        if query.bits != self.bits {
            return Err(Error::shape("query", &[self.bits], &[query.bits]));
        }
        Ok(())
    }

    /// Distance from `query` to every stored code, in storage order.
    pub fn distances(&self, query: &HashCode) -> Result<Vec<u32>> {
        self.check_query(query)?;
        Ok(self
            .codes
            .chunks_exact(self.words_per_code)
            .map(|c| popcount_distance(c, &query.words))
            .collect())
    }

    /// Positions of all stored items ordered by `(distance, id)`, skipping
    /// position `skip` if given.
    pub(crate) fn rank_positions(
        &self,
        query: &HashCode,
        skip: Option<usize>,
    ) -> Result<Vec<(u32, usize)>> {
        let d = self.distances(query)?;
        // counting sort on distance; each bucket then ordered by id
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); self.bits + 1];
        for (pos, &dist) in d.iter().enumerate() {
            if Some(pos) != skip {
                buckets[dist as usize].push(pos);
            }
        }
        let mut out = Vec::with_capacity(d.len());
        for (dist, mut b) in buckets.into_iter().enumerate() {
            b.sort_unstable_by_key(|&p| self.ids[p]);
            out.extend(b.into_iter().map(|p| (dist as u32, p)));
        }
        Ok(out)
    }

    /// The `k` nearest codes by Hamming distance, ties broken by ascending id.
    pub fn knn(&self, query: &HashCode, k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        let d = self.distances(query)?;
        // find the smallest radius whose ball holds k items, then sort only that ball
        let mut hist = vec![0usize; self.bits + 1];
        for &x in &d {
            hist[x as usize] += 1;
        }
        let mut radius = self.bits as u32;
        let mut acc = 0;
        for (r, &h) in hist.iter().enumerate() {
            acc += h;
            if acc >= k {
                radius = r as u32;
                break;
            }
        }
        let mut hits: Vec<Neighbor> = d
            .iter()
            .enumerate()
            .filter(|(_, &x)| x <= radius)
            .map(|(p, &x)| Neighbor {
                id: self.ids[p],
                distance: x,
            })
            .collect();
        hits.sort_unstable_by_key(|n| (n.distance, n.id));
        hits.truncate(k);
        Ok(hits)
    }
}
