//! Reference decoders: successive cancellation and exhaustive ML.

use crate::error::{param, Result};
use crate::polar::{butterfly, BitWord, PolarCode};

/// Interchangeable formulations of the LLR combination `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FVariant {
    /// `-sign(a) * sign(b) * min(|a|, |b|)`, with `sign(0) = 0`.
    SignMin,
    /// `min(max(a, b), -min(a, b))`.
    MinMax,
    /// `-|a + b| / 2 + |a - b| / 2`.
    AbsHalf,
    /// `-relu(a + b) + relu(a - b) + b`.
    Relu,
}

impl FVariant {
    pub const ALL: [FVariant; 4] = [
        FVariant::SignMin,
        FVariant::MinMax,
        FVariant::AbsHalf,
        FVariant::Relu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FVariant::SignMin => "sign_min",
            FVariant::MinMax => "min_max",
            FVariant::AbsHalf => "abs_half",
            FVariant::Relu => "relu",
        }
    }
}

impl std::str::FromStr for FVariant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        FVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| param(format!("unknown f variant `{s}`")))
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// The LLR combination `f(a, b)` in the requested formulation.
#[inline]
pub fn f_function(a: f64, b: f64, variant: FVariant) -> f64 {
    match variant {
        FVariant::SignMin => -sign(a) * sign(b) * a.abs().min(b.abs()),
        FVariant::MinMax => a.max(b).min(-a.min(b)),
        FVariant::AbsHalf => -((a + b) / 2.0).abs() + ((a - b) / 2.0).abs(),
        FVariant::Relu => -relu(a + b) + relu(a - b) + b,
    }
}

/// LLR of `x[i] ⊕ x[i + N/2]` from the two halves.
///
/// `f` as written is the negated min-sum rule; with positive LLRs favouring
/// bit 0 the parity LLR is `-f(a, b)`.
#[inline]
pub fn parity_llr(a: f64, b: f64, variant: FVariant) -> f64 {
    -f_function(a, b, variant)
}

/// Right-branch LLR: `-sign(en_symbol) * llr_top + llr_bottom`.
#[inline]
pub fn g_function(llr_top: f64, llr_bottom: f64, en_symbol: f64) -> f64 {
    -sign(en_symbol) * llr_top + llr_bottom
}

/// Hard decision on one LLR; zero decodes to bit 0.
#[inline]
pub fn hard_bit(llr: f64) -> u8 {
    u8::from(llr < 0.0)
}

/// Successive cancellation decoding with the default `f` formulation.
pub fn sc_decode(code: &PolarCode, llrs: &[f64]) -> Result<BitWord> {
    ScDecoder::new(code.clone()).decode(llrs)
}

/// Successive cancellation decoder.
#[derive(Debug, Clone)]
pub struct ScDecoder {
    code: PolarCode,
    variant: FVariant,
}

/// Result of a traced SC run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScTrace {
    pub message: BitWord,
    /// Smallest `|LLR|` seen at an unfrozen leaf, `+inf` when K = 0.
    pub min_leaf_magnitude: f64,
}

impl ScDecoder {
    pub fn new(code: PolarCode) -> Self {
        Self::with_variant(code, FVariant::SignMin)
    }

    pub fn with_variant(code: PolarCode, variant: FVariant) -> Self {
        Self { code, variant }
    }

    pub fn code(&self) -> &PolarCode {
        &self.code
    }

    pub fn decode(&self, llrs: &[f64]) -> Result<BitWord> {
        Ok(self.decode_traced(llrs)?.message)
    }

    pub fn decode_traced(&self, llrs: &[f64]) -> Result<ScTrace> {
        if llrs.len() != self.code.len() {
            return Err(param(format!(
                "expected {} LLRs, got {}",
                self.code.len(),
                llrs.len()
            )));
        }
        let mut message = Vec::with_capacity(self.code.k());
        let mut min_leaf = f64::INFINITY;
        self.node(self.code.frozen(), llrs, &mut message, &mut min_leaf);
        Ok(ScTrace {
            message,
            min_leaf_magnitude: min_leaf,
        })
    }

    /// Decodes one subtree and returns its re-encoded codeword bits.
    fn node(
        &self,
        frozen: &[bool],
        llrs: &[f64],
        message: &mut BitWord,
        min_leaf: &mut f64,
    ) -> BitWord {
        let n = llrs.len();
        if frozen.iter().all(|&f| f) {
            return vec![0; n];
        }
        if n == 1 {
            let bit = hard_bit(llrs[0]);
            *min_leaf = min_leaf.min(llrs[0].abs());
            message.push(bit);
            return vec![bit];
        }
        let h = n / 2;
        let (top, bottom) = llrs.split_at(h);
        let left: Vec<f64> = top
            .iter()
            .zip(bottom)
            .map(|(&a, &b)| parity_llr(a, b, self.variant))
            .collect();
        let left_word = self.node(&frozen[..h], &left, message, min_leaf);
        let right: Vec<f64> = top
            .iter()
            .zip(bottom)
            .zip(&left_word)
            .map(|((&a, &b), &e)| g_function(a, b, 2.0 * f64::from(e) - 1.0))
            .collect();
        let right_word = self.node(&frozen[h..], &right, message, min_leaf);
        let mut word: BitWord = left_word
            .iter()
            .zip(&right_word)
            .map(|(l, r)| l ^ r)
            .collect();
        word.extend_from_slice(&right_word);
        word
    }
}

/// Largest K the exhaustive decoder accepts.
pub const ML_MAX_K: usize = 20;

/// Exhaustive maximum-likelihood decoding.
pub fn ml_decode(code: &PolarCode, llrs: &[f64]) -> Result<BitWord> {
    MlDecoder::new(code)?.decode(llrs)
}

/// Exhaustive ML decoder over a precomputed codebook.
///
/// Picks the message minimising `sum_i llr[i] * (2 x[i] - 1)`; among equal
/// metrics the smallest message value (bit `m` weighted `2^m`) wins.
#[derive(Debug, Clone)]
pub struct MlDecoder {
    k: usize,
    n: usize,
    // Codeword symbols, row-major by message value.
    symbols: Vec<f64>,
}

impl MlDecoder {
    pub fn new(code: &PolarCode) -> Result<Self> {
        let k = code.k();
        if k > ML_MAX_K {
            return Err(param(format!(
                "ML enumeration refused for K = {k} > {ML_MAX_K}"
            )));
        }
        let n = code.len();
        let mut symbols = Vec::with_capacity(n << k);
        let mut u = vec![0u8; n];
        for value in 0u32..1 << k {
            u.iter_mut().for_each(|b| *b = 0);
            for (m, &p) in code.info_positions().iter().enumerate() {
                u[p] = ((value >> m) & 1) as u8;
            }
            let mut word = u.clone();
            butterfly(&mut word);
            symbols.extend(word.iter().map(|&b| 2.0 * f64::from(b) - 1.0));
        }
        Ok(Self { k, n, symbols })
    }

    pub fn decode(&self, llrs: &[f64]) -> Result<BitWord> {
        if llrs.len() != self.n {
            return Err(param(format!(
                "expected {} LLRs, got {}",
                self.n,
                llrs.len()
            )));
        }
        let mut best = (f64::INFINITY, 0usize);
        for (value, row) in self.symbols.chunks_exact(self.n).enumerate() {
            let metric: f64 = row.iter().zip(llrs).map(|(s, l)| s * l).sum();
            if metric < best.0 {
                best = (metric, value);
            }
        }
        Ok((0..self.k).map(|m| ((best.1 >> m) & 1) as u8).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::noiseless_llrs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f_examples() {
        for v in FVariant::ALL {
            assert_eq!(f_function(2.0, -3.0, v), 2.0, "{v:?}");
            for b in [-4.0, -0.5, 0.0, 3.0] {
                assert_eq!(f_function(0.0, b, v), 0.0, "{v:?} b={b}");
            }
        }
    }

    #[test]
    fn f_variants_agree_on_grid() {
        for a in -10..=10 {
            for b in -10..=10 {
                let r = f_function(a as f64, b as f64, FVariant::SignMin);
                for v in FVariant::ALL {
                    assert_eq!(f_function(a as f64, b as f64, v), r);
                }
            }
        }
    }

    #[test]
    fn parity_llr_is_min_sum() {
        // Both halves favour 0, so the parity favours 0.
        assert_eq!(parity_llr(2.0, 3.0, FVariant::SignMin), 2.0);
        assert_eq!(parity_llr(-2.0, 3.0, FVariant::Relu), -2.0);
    }

    #[test]
    fn g_examples() {
        assert_eq!(g_function(3.0, -1.0, -1.0), 2.0);
        assert_eq!(g_function(3.0, -1.0, 1.0), -4.0);
        assert_eq!(g_function(0.0, 5.0, 1.0), 5.0);
        assert_eq!(g_function(0.0, 5.0, -1.0), 5.0);
    }

    #[test]
    fn sc_hand_trace() {
        let code = PolarCode::with_frozen(2, &[0]).unwrap();
        assert_eq!(sc_decode(&code, &[3.0, -1.0]).unwrap(), vec![0]);
        assert!(sc_decode(&code, &[3.0]).is_err());
    }

    #[test]
    fn sc_noiseless_round_trip_8_4() {
        let code = PolarCode::build(3, 4, 1.0).unwrap();
        for v in 0..16u8 {
            let m: Vec<u8> = (0..4).map(|i| (v >> i) & 1).collect();
            let llrs = noiseless_llrs(&code.encode(&m).unwrap(), 20.0);
            for variant in FVariant::ALL {
                let dec = ScDecoder::with_variant(code.clone(), variant);
                assert_eq!(dec.decode(&llrs).unwrap(), m);
            }
        }
    }

    #[test]
    fn sc_all_frozen_returns_empty() {
        let code = PolarCode::build(3, 0, 1.0).unwrap();
        assert!(sc_decode(&code, &[1.0; 8]).unwrap().is_empty());
    }

    #[test]
    fn sc_variants_make_identical_decisions() {
        let code = PolarCode::build(4, 11, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let decoders: Vec<_> = FVariant::ALL
            .iter()
            .map(|&v| ScDecoder::with_variant(code.clone(), v))
            .collect();
        for _ in 0..2000 {
            let llrs: Vec<f64> = (0..16).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let first = decoders[0].decode(&llrs).unwrap();
            for d in &decoders[1..] {
                assert_eq!(d.decode(&llrs).unwrap(), first);
            }
        }
    }

    #[test]
    fn ml_two_two_by_enumeration() {
        // Codebook of (2,2): m=(a,b) -> (a^b, b). LLRs (-5, 1):
        //   00 -> (-1,-1): 5 - 1 = 4
        //   10 -> (+1,-1): -5 - 1 = -6
        //   01 -> (+1,+1): -5 + 1 = -4
        //   11 -> (-1,+1): 5 + 1 = 6
        let code = PolarCode::with_frozen(2, &[]).unwrap();
        assert_eq!(ml_decode(&code, &[-5.0, 1.0]).unwrap(), vec![1, 0]);
    }

    #[test]
    fn ml_noiseless_and_ties() {
        let code = PolarCode::build(3, 4, 1.0).unwrap();
        let ml = MlDecoder::new(&code).unwrap();
        for v in 0..16u8 {
            let m: Vec<u8> = (0..4).map(|i| (v >> i) & 1).collect();
            let llrs = noiseless_llrs(&code.encode(&m).unwrap(), 3.0);
            assert_eq!(ml.decode(&llrs).unwrap(), m);
        }
        // All-zero LLRs: every metric ties, lowest message value wins.
        assert_eq!(ml.decode(&[0.0; 8]).unwrap(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn ml_refuses_large_k() {
        let code = PolarCode::build(5, 21, 1.0).unwrap();
        assert!(ml_decode(&code, &[0.0; 32]).is_err());
    }
}
