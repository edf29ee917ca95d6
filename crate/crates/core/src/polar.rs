//! Polar code definition, frozen-set construction and GF(2) encoding.
//!
//! Codewords are produced in natural order, `x = u · F^{⊗n}` with
//! `F = [[1,0],[1,1]]` and no bit-reversal permutation. With this layout the
//! first half of a codeword is the XOR of the two half-length encodings and
//! the second half is the right half-encoding, which is exactly the shape the
//! successive cancellation recursion walks.

use std::fmt;
use std::str::FromStr;

use crate::error::{param, Error, Result};

/// A word over {0,1}: message bits (length K) or codeword bits (length N).
pub type BitWord = Vec<u8>;

/// A binary polar code `(N, K)` with its frozen mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarCode {
    log_len: u32,
    frozen: Vec<bool>,
    info_positions: Vec<usize>,
    design_snr_db: f64,
}

impl PolarCode {
    /// Builds the code from Bhattacharyya parameters at `design_snr_db`.
    ///
    /// Each synthetic channel starts from `z = exp(-10^(snr/10))`; walking the
    /// index bits from most to least significant, a 0 bit applies the degraded
    /// transform `z -> 2z - z^2` and a 1 bit the upgraded `z -> z^2`. The K
    /// smallest parameters are unfrozen, ties going to the higher index.
    pub fn build(log_len: u32, k: usize, design_snr_db: f64) -> Result<Self> {
        if log_len > 24 {
            return Err(param(format!("log2 length {log_len} is too large")));
        }
        let n = 1usize << log_len;
        if k > n {
            return Err(param(format!("K = {k} exceeds N = {n}")));
        }
        if !design_snr_db.is_finite() {
            return Err(param("design SNR must be finite"));
        }
        let z = bhattacharyya(log_len, design_snr_db);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(b.cmp(&a)));
        let mut frozen = vec![true; n];
        for &i in &order[..k] {
            frozen[i] = false;
        }
        Self::from_mask(frozen, design_snr_db)
    }

    /// Builds a code from an explicit frozen mask (`true` = frozen).
    pub fn from_mask(frozen: Vec<bool>, design_snr_db: f64) -> Result<Self> {
        let n = frozen.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(param(format!("mask length {n} is not a power of two")));
        }
        let info_positions = frozen
            .iter()
            .enumerate()
            .filter(|(_, &f)| !f)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            log_len: n.trailing_zeros(),
            frozen,
            info_positions,
            design_snr_db,
        })
    }

    /// Convenience: a code of length `n` with the listed frozen positions.
    pub fn with_frozen(n: usize, frozen_positions: &[usize]) -> Result<Self> {
        let mut mask = vec![false; n];
        for &p in frozen_positions {
            if p >= n {
                return Err(param(format!("frozen position {p} out of range")));
            }
            mask[p] = true;
        }
        Self::from_mask(mask, 0.0)
    }

    pub fn log_len(&self) -> u32 {
        self.log_len
    }

    /// Code length N.
    pub fn len(&self) -> usize {
        self.frozen.len()
    }

    /// Number of message bits K.
    pub fn k(&self) -> usize {
        self.info_positions.len()
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.len() as f64
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    /// Unfrozen positions in increasing order; message bit `m` lands on
    /// `info_positions()[m]`.
    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    pub fn design_snr_db(&self) -> f64 {
        self.design_snr_db
    }

    /// Encodes a K-bit message into an N-bit codeword.
    pub fn encode(&self, message: &[u8]) -> Result<BitWord> {
        if message.len() != self.k() {
            return Err(param(format!(
                "message length {} does not match K = {}",
                message.len(),
                self.k()
            )));
        }
        let mut word = vec![0u8; self.len()];
        for (&pos, &bit) in self.info_positions.iter().zip(message) {
            word[pos] = bit & 1;
        }
        butterfly(&mut word);
        Ok(word)
    }

    /// Splits into the left and right half-length subcodes.
    pub fn split(&self) -> Result<(PolarCode, PolarCode)> {
        let n = self.len();
        if n < 2 {
            return Err(param("a length-1 code cannot be split"));
        }
        let (l, r) = self.frozen.split_at(n / 2);
        Ok((
            Self::from_mask(l.to_vec(), self.design_snr_db)?,
            Self::from_mask(r.to_vec(), self.design_snr_db)?,
        ))
    }

    /// For each codeword position, the message bits whose XOR forms it.
    ///
    /// Row `p` of `F^{⊗n}` has a one in column `j` exactly when the bits of
    /// `j` are a subset of the bits of `p`.
    pub fn xor_subsets(&self) -> XorSubsets {
        let subsets = (0..self.len())
            .map(|j| {
                self.info_positions
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p & j == j)
                    .map(|(m, _)| m)
                    .collect()
            })
            .collect();
        XorSubsets {
            k: self.k(),
            subsets,
        }
    }
}

/// In-place natural-order polar transform over GF(2).
pub(crate) fn butterfly(word: &mut [u8]) {
    let n = word.len();
    let mut half = 1;
    while half < n {
        for block in word.chunks_mut(2 * half) {
            let (top, bottom) = block.split_at_mut(half);
            for (t, b) in top.iter_mut().zip(bottom.iter()) {
                *t ^= *b;
            }
        }
        half *= 2;
    }
}

fn bhattacharyya(log_len: u32, design_snr_db: f64) -> Vec<f64> {
    let z0 = (-(10f64).powf(design_snr_db / 10.0)).exp();
    (0..1usize << log_len)
        .map(|i| {
            (0..log_len).rev().fold(z0, |z, b| {
                if (i >> b) & 1 == 1 {
                    z * z
                } else {
                    2.0 * z - z * z
                }
            })
        })
        .collect()
}

/// Per-position XOR subsets of message-bit indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorSubsets {
    k: usize,
    subsets: Vec<Vec<usize>>,
}

impl XorSubsets {
    pub fn new(k: usize, subsets: Vec<Vec<usize>>) -> Result<Self> {
        if let Some(bad) = subsets.iter().flatten().find(|&&i| i >= k) {
            return Err(param(format!(
                "subset index {bad} out of range for K = {k}"
            )));
        }
        Ok(Self { k, subsets })
    }

    /// Number of message bits the subsets index into.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn get(&self, position: usize) -> &[usize] {
        &self.subsets[position]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.subsets.iter().map(Vec::as_slice)
    }

    /// Evaluates the encoding through the subsets.
    pub fn apply(&self, message: &[u8]) -> BitWord {
        self.subsets
            .iter()
            .map(|s| s.iter().fold(0u8, |acc, &i| acc ^ (message[i] & 1)))
            .collect()
    }
}

impl fmt::Display for PolarCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mask: String = self
            .frozen
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        write!(
            f,
            "polar-code n={} k={} design_snr_db={} frozen={}",
            self.log_len,
            self.k(),
            self.design_snr_db,
            mask
        )
    }
}

impl FromStr for PolarCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format { line: 1, msg };
        let mut tokens = s.split_whitespace();
        if tokens.next() != Some("polar-code") {
            return Err(bad("expected `polar-code` descriptor".into()));
        }
        let (mut n, mut k, mut snr, mut mask) = (None, None, None, None);
        for tok in tokens {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed field `{tok}`")))?;
            match key {
                "n" => n = value.parse::<u32>().ok(),
                "k" => k = value.parse::<usize>().ok(),
                "design_snr_db" => snr = value.parse::<f64>().ok(),
                "frozen" => {
                    mask = value
                        .chars()
                        .map(|c| match c {
                            '0' => Some(false),
                            '1' => Some(true),
                            _ => None,
                        })
                        .collect::<Option<Vec<bool>>>()
                }
                _ => return Err(bad(format!("unknown field `{key}`"))),
            }
        }
        let (n, k, snr, mask) = match (n, k, snr, mask) {
            (Some(n), Some(k), Some(s), Some(m)) => (n, k, s, m),
            _ => {
                return Err(bad(
                    "descriptor needs valid n, k, design_snr_db and frozen".into()
                ))
            }
        };
        let code = Self::from_mask(mask, snr).map_err(|e| bad(e.to_string()))?;
        if code.log_len != n || code.k() != k {
            return Err(bad(format!(
                "mask describes ({}, {}) but header says n={n} k={k}",
                code.len(),
                code.k()
            )));
        }
        Ok(code)
    }
}
