//! Randomness extraction: fixed-width outcome encoding, leftover-hash output
//! sizing, and bit-exact Toeplitz hashing over GF(2).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::detection::TrialRecord;
use crate::error::{Error, Result};

/// Default security parameter for the leftover hash lemma.
pub const EPS_SEC_DEFAULT: f64 = 5.421010862427522e-20; // 2^{-64}

/// Block size cap for the extractor, in raw input bits.
pub const BLOCK_INPUT_BITS: usize = 1 << 20;

/// Raw bit sequence plus a record of how outcomes were encoded into it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawBits {
    /// One entry per bit, each 0 or 1.
    pub bits: Vec<u8>,
    pub origin: String,
}

/// Width of the fixed outcome encoding: ceil(log2 d) bits per symbol.
pub fn bits_per_outcome(d: usize) -> Result<usize> {
    if d < 2 {
        return Err(Error::BadParameter {
            name: "d",
            value: d as f64,
            range: "≥ 2",
        });
    }
    Ok((usize::BITS - (d - 1).leading_zeros()) as usize)
}

/// Encode outcomes as fixed-width big-endian bit strings, in trial order.
/// Inconclusive symbols are kept; their lower surprisal is already priced
/// into the per-measurement entropy rate.
pub fn outcome_encoding(trials: &[TrialRecord], d: usize) -> Result<RawBits> {
    if trials.is_empty() {
        return Err(Error::NoTrials);
    }
    let w = bits_per_outcome(d)?;
    let mut bits = Vec::with_capacity(trials.len() * w);
    for t in trials {
        if t.b as usize >= d {
            return Err(Error::BadParameter {
                name: "outcome",
                value: t.b as f64,
                range: "< d",
            });
        }
        for i in (0..w).rev() {
            bits.push((t.b >> i) & 1);
        }
    }
    Ok(RawBits {
        bits,
        origin: format!("fixed-width outcome encoding, d={d}, {w} bits/symbol, big-endian"),
    })
}

/// Leftover-hash output length: floor(n·h − 2·log2(1/ε_sec)), clamped at 0.
pub fn output_length(n_symbols: usize, h_min: f64, eps_sec: f64) -> Result<usize> {
    if !(h_min >= 0.0 && h_min.is_finite()) {
        return Err(Error::BadParameter {
            name: "h_min",
            value: h_min,
            range: "finite and ≥ 0",
        });
    }
    if !(eps_sec > 0.0 && eps_sec < 1.0) {
        return Err(Error::BadParameter {
            name: "eps_sec",
            value: eps_sec,
            range: "(0, 1)",
        });
    }
    let budget = n_symbols as f64 * h_min + 2.0 * eps_sec.log2();
    if budget <= 0.0 {
        return Ok(0);
    }
    Ok(budget.floor() as usize)
}

// Seed bits packed least-significant-bit-first into words, so a window
// starting at bit t is a plain cross-word shift.
fn pack_words_lsb(bits: &[u8]) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64)];
    for (k, &b) in bits.iter().enumerate() {
        words[k / 64] |= u64::from(b) << (k % 64);
    }
    words
}

fn window_word(words: &[u64], start_bit: usize) -> u64 {
    let q = start_bit / 64;
    let r = start_bit % 64;
    let lo = words.get(q).copied().unwrap_or(0);
    if r == 0 {
        lo
    } else {
        let hi = words.get(q + 1).copied().unwrap_or(0);
        (lo >> r) | (hi << (64 - r))
    }
}

/// Toeplitz extraction over GF(2): `y_i = ⊕_j T[i][j]·x_j` with
/// `T[i][j] = seed[i − j + len(x) − 1]`, i ∈ [0,m), j ∈ [0,len(x)).
///
/// Input and output are bit-per-byte sequences; the core works on packed
/// words, XOR-ing one shifted seed window per set input bit.
pub fn toeplitz_extract(raw: &[u8], seed: &[u8], m: usize) -> Result<Vec<u8>> {
    if raw.is_empty() {
        return Err(Error::EmptyRaw);
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let want = raw.len() + m - 1;
    if seed.len() != want {
        return Err(Error::SeedLength {
            got: seed.len(),
            want,
        });
    }
    let swords = pack_words_lsb(seed);
    let mut acc = vec![0u64; m.div_ceil(64)];
    let last = raw.len() - 1;
    for (j, &xj) in raw.iter().enumerate() {
        debug_assert!(xj <= 1);
        if xj == 0 {
            continue;
        }
        // Row i of column j is seed[(len−1−j) + i]: one contiguous window.
        let t = last - j;
        for (w, a) in acc.iter_mut().enumerate() {
            *a ^= window_word(&swords, t + 64 * w);
        }
    }
    Ok((0..m).map(|i| (acc[i / 64] >> (i % 64) & 1) as u8).collect())
}

/// Metadata for one extracted block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockMeta {
    pub index: usize,
    pub symbols: usize,
    pub input_bits: usize,
    pub output_bits: usize,
}

/// Full record of a block-structured extraction run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub eps_sec: f64,
    pub h_per_symbol: f64,
    pub bits_per_symbol: usize,
    pub total_input_bits: usize,
    pub total_output_bits: usize,
    pub seed_descriptor: String,
    pub blocks: Vec<BlockMeta>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Extraction {
    /// Extracted bits, one per byte, block outputs concatenated in order.
    pub bits: Vec<u8>,
    pub report: ExtractionReport,
}

struct BitStream {
    rng: ChaCha12Rng,
    word: u64,
    left: u32,
}

impl BitStream {
    fn new(seed: u64) -> Self {
        BitStream {
            rng: ChaCha12Rng::seed_from_u64(seed),
            word: 0,
            left: 0,
        }
    }
    fn take(&mut self, count: usize) -> Vec<u8> {
        (0..count)
            .map(|_| {
                if self.left == 0 {
                    self.word = self.rng.gen();
                    self.left = 64;
                }
                let bit = (self.word & 1) as u8;
                self.word >>= 1;
                self.left -= 1;
                bit
            })
            .collect()
    }
}

/// Encode trials and extract in blocks of at most [`BLOCK_INPUT_BITS`] input
/// bits (symbol-aligned), each with a fresh Toeplitz seed segment drawn from
/// a deterministic stream. The per-block leftover-hash budget keeps the total
/// output within the global budget.
pub fn extract_trials(
    trials: &[TrialRecord],
    d: usize,
    h_per_symbol: f64,
    eps_sec: f64,
    seed: u64,
) -> Result<Extraction> {
    if trials.is_empty() {
        return Err(Error::NoTrials);
    }
    let w = bits_per_outcome(d)?;
    output_length(1, h_per_symbol, eps_sec)?; // validate parameters once
    let symbols_per_block = (BLOCK_INPUT_BITS / w).max(1);

    let mut stream = BitStream::new(seed);
    let mut bits = Vec::new();
    let mut blocks = Vec::new();
    let mut total_in = 0;
    for (index, chunk) in trials.chunks(symbols_per_block).enumerate() {
        let raw = outcome_encoding(chunk, d)?;
        let m = output_length(chunk.len(), h_per_symbol, eps_sec)?;
        let out = if m > 0 {
            let seg = stream.take(raw.bits.len() + m - 1);
            toeplitz_extract(&raw.bits, &seg, m)?
        } else {
            Vec::new()
        };
        total_in += raw.bits.len();
        blocks.push(BlockMeta {
            index,
            symbols: chunk.len(),
            input_bits: raw.bits.len(),
            output_bits: out.len(),
        });
        bits.extend_from_slice(&out);
    }
    let total_output_bits = bits.len();
    Ok(Extraction {
        bits,
        report: ExtractionReport {
            eps_sec,
            h_per_symbol,
            bits_per_symbol: w,
            total_input_bits: total_in,
            total_output_bits,
            seed_descriptor: format!("chacha12 stream, seed {seed}, per-block segments"),
            blocks,
        },
    })
}

/// Pack a bit-per-byte sequence MSB-first into bytes (zero padded).
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (k, &b) in bits.iter().enumerate() {
        bytes[k / 8] |= (b & 1) << (7 - k % 8);
    }
    bytes
}

/// Inverse of [`pack_bits`] for a known bit count.
pub fn unpack_bits(bytes: &[u8], nbits: usize) -> Result<Vec<u8>> {
    if nbits > bytes.len() * 8 {
        return Err(Error::SeedLength {
            got: bytes.len() * 8,
            want: nbits,
        });
    }
    Ok((0..nbits).map(|k| bytes[k / 8] >> (7 - k % 8) & 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    // Independent oracle: materialize T and multiply over GF(2).
    fn toeplitz_naive(raw: &[u8], seed: &[u8], m: usize) -> Vec<u8> {
        let len = raw.len();
        (0..m)
            .map(|i| {
                (0..len)
                    .map(|j| seed[i + len - 1 - j] & raw[j])
                    .fold(0, |a, b| a ^ b)
            })
            .collect()
    }

    fn bits(s: &str) -> Vec<u8> {
        s.bytes().map(|c| c - b'0').collect()
    }

    #[test]
    fn encoding_examples() {
        let t = |b: &[u8]| -> Vec<TrialRecord> {
            b.iter().map(|&b| TrialRecord { x: 0, b }).collect()
        };
        assert_eq!(outcome_encoding(&t(&[0, 3]), 4).unwrap().bits, bits("0011"));
        assert_eq!(outcome_encoding(&t(&[6]), 7).unwrap().bits, bits("110"));
        let many = t(&vec![2; 10_000]);
        assert_eq!(outcome_encoding(&many, 7).unwrap().bits.len(), 30_000);
        assert!(outcome_encoding(&[], 4).is_err());
        assert!(outcome_encoding(&t(&[4]), 4).is_err());
        assert_eq!(bits_per_outcome(2).unwrap(), 1);
        assert_eq!(bits_per_outcome(4).unwrap(), 2);
        assert_eq!(bits_per_outcome(7).unwrap(), 3);
        assert!(bits_per_outcome(1).is_err());
    }

    #[test]
    fn output_length_formula() {
        assert_eq!(output_length(1024, 0.2, (-64.0f64).exp2()).unwrap(), 76);
        assert_eq!(output_length(1024, 0.0, (-64.0f64).exp2()).unwrap(), 0);
        assert_eq!(
            output_length(1_000_000, 0.258, (-100.0f64).exp2()).unwrap(),
            257_800
        );
        assert!(output_length(10, -0.1, 0.5).is_err());
        assert!(output_length(10, 0.1, 0.0).is_err());
        assert!(output_length(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn known_answer_2x3() {
        // T = [[s2,s1,s0],[s3,s2,s1]] for seed s = 1011:
        // rows (1,0,1) and (1,1,0); x = 101 → y = (0,1).
        let y = toeplitz_extract(&bits("101"), &bits("1011"), 2).unwrap();
        assert_eq!(y, bits("01"));
        assert_eq!(toeplitz_naive(&bits("101"), &bits("1011"), 2), bits("01"));
    }

    #[test]
    fn small_kats_against_naive() {
        // Exhaustive inputs for a fixed 4x4 and a fixed 8x5 instance.
        let seed7 = bits("1100101");
        for v in 0u8..16 {
            let raw: Vec<u8> = (0..4).map(|k| v >> (3 - k) & 1).collect();
            assert_eq!(
                toeplitz_extract(&raw, &seed7, 4).unwrap(),
                toeplitz_naive(&raw, &seed7, 4)
            );
        }
        let seed12 = bits("010111001101");
        for v in 0u8..32 {
            let raw: Vec<u8> = (0..5).map(|k| v >> (4 - k) & 1).collect();
            assert_eq!(
                toeplitz_extract(&raw, &seed12, 8).unwrap(),
                toeplitz_naive(&raw, &seed12, 8)
            );
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let raw = vec![0u8; 100];
        let seed = vec![1u8; 149];
        assert_eq!(toeplitz_extract(&raw, &seed, 50).unwrap(), vec![0u8; 50]);
    }

    #[test]
    fn seed_length_is_enforced() {
        let e = toeplitz_extract(&bits("101"), &bits("10"), 2).unwrap_err();
        match e {
            Error::SeedLength { got, want } => {
                assert_eq!((got, want), (2, 4));
            }
            other => panic!("unexpected error {other}"),
        }
        assert!(toeplitz_extract(&[], &[], 1).is_err());
    }

    #[test]
    fn cross_word_windows_match_naive() {
        // Sizes straddling the 64-bit word boundary.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for (len, m) in [(63, 3), (64, 64), (65, 63), (130, 70), (200, 128)] {
            let raw: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=1u8)).collect();
            let seed: Vec<u8> = (0..len + m - 1).map(|_| rng.gen_range(0..=1u8)).collect();
            assert_eq!(
                toeplitz_extract(&raw, &seed, m).unwrap(),
                toeplitz_naive(&raw, &seed, m),
                "len={len}, m={m}"
            );
        }
    }

    #[test]
    fn block_extraction_is_deterministic_and_budgeted() {
        let trials: Vec<TrialRecord> = (0..40_000)
            .map(|i| TrialRecord {
                x: (i % 3) as u8,
                b: (i % 7) as u8,
            })
            .collect();
        let a = extract_trials(&trials, 7, 0.3, EPS_SEC_DEFAULT, 42).unwrap();
        let b = extract_trials(&trials, 7, 0.3, EPS_SEC_DEFAULT, 42).unwrap();
        assert_eq!(a.bits, b.bits);
        let c = extract_trials(&trials, 7, 0.3, EPS_SEC_DEFAULT, 43).unwrap();
        assert_ne!(a.bits, c.bits);

        let budget = output_length(trials.len(), 0.3, EPS_SEC_DEFAULT).unwrap();
        assert!(a.report.total_output_bits <= budget);
        assert_eq!(
            a.report.blocks.iter().map(|b| b.output_bits).sum::<usize>(),
            a.bits.len()
        );
        // 40k symbols at 3 bits = 120k bits: a single block here.
        assert_eq!(a.report.blocks.len(), 1);

        // Zero rate → zero bits, still a valid run.
        let z = extract_trials(&trials, 7, 0.0, EPS_SEC_DEFAULT, 42).unwrap();
        assert!(z.bits.is_empty());
    }

    #[test]
    fn multi_block_structure() {
        let trials: Vec<TrialRecord> = (0..700_000)
            .map(|i| TrialRecord {
                x: (i % 3) as u8,
                b: (i % 4) as u8,
            })
            .collect();
        // 2 bits/symbol → 524288 symbols per block → 2 blocks.
        let e = extract_trials(&trials, 4, 0.25, EPS_SEC_DEFAULT, 1).unwrap();
        assert_eq!(e.report.blocks.len(), 2);
        assert_eq!(e.report.blocks[0].symbols, 524_288);
        assert_eq!(e.report.blocks[1].symbols, 700_000 - 524_288);
        assert_eq!(e.report.total_input_bits, 1_400_000);
        for b in &e.report.blocks {
            assert_eq!(
                b.output_bits,
                output_length(b.symbols, 0.25, EPS_SEC_DEFAULT).unwrap()
            );
        }
    }

    #[test]
    fn pack_round_trip() {
        let b = bits("1011001110001");
        let packed = pack_bits(&b);
        assert_eq!(packed.len(), 2);
        assert_eq!(unpack_bits(&packed, b.len()).unwrap(), b);
        assert!(unpack_bits(&packed, 17).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn linearity_over_gf2(
            len in 1usize..160,
            m in 1usize..96,
            seed_word in any::<u64>(),
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed_word);
            let a: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=1u8)).collect();
            let b: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=1u8)).collect();
            let seed: Vec<u8> = (0..len + m - 1).map(|_| rng.gen_range(0..=1u8)).collect();
            let xor: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();

            let ta = toeplitz_extract(&a, &seed, m).unwrap();
            let tb = toeplitz_extract(&b, &seed, m).unwrap();
            let txor = toeplitz_extract(&xor, &seed, m).unwrap();
            let combined: Vec<u8> = ta.iter().zip(&tb).map(|(x, y)| x ^ y).collect();
            prop_assert_eq!(txor, combined);
        }
    }
}
