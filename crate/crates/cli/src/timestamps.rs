//! Timestamp interchange format and click-to-outcome mapping.
//!
//! Format: a `#version=1` header, then one `time_ps,channel` record per
//! line with nondecreasing times. Trials are fixed-period windows; clicks
//! land in one of three detection bins per trial or are discarded.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use sdiqrng::detection::{config2_outcome, Config, TrialRecord};

pub const TIMESTAMP_HEADER: &str = "#version=1";

/// Detection-bin geometry within one trial period.
#[derive(Clone, Copy, Debug)]
pub struct BinningConfig {
    pub period_ps: u64,
    pub bin_offsets_ps: [u64; 3],
    pub bin_width_ps: u64,
    pub config: Config,
}

impl BinningConfig {
    pub fn default_for(config: Config) -> Self {
        BinningConfig {
            period_ps: 10_000,
            bin_offsets_ps: [1_000, 4_000, 7_000],
            bin_width_ps: 2_000,
            config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.period_ps > 0, "period must be positive");
        ensure!(self.bin_width_ps > 0, "bin width must be positive");
        let mut windows: Vec<(u64, u64)> = self
            .bin_offsets_ps
            .iter()
            .map(|&o| (o, o + self.bin_width_ps))
            .collect();
        windows.sort_unstable();
        for (start, end) in &windows {
            ensure!(
                *end <= self.period_ps,
                "bin window [{start},{end}) exceeds the period {}",
                self.period_ps
            );
        }
        for pair in windows.windows(2) {
            ensure!(
                pair[0].1 <= pair[1].0,
                "bin windows overlap: [{},{}) and [{},{})",
                pair[0].0,
                pair[0].1,
                pair[1].0,
                pair[1].1
            );
        }
        Ok(())
    }

    /// Bin index containing an intra-period offset, if any.
    pub fn bin_of(&self, offset_ps: u64) -> Option<usize> {
        self.bin_offsets_ps
            .iter()
            .position(|&o| offset_ps >= o && offset_ps < o + self.bin_width_ps)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "version=1\nconfig={}\nperiod_ps={}\nbin_offset0_ps={}\nbin_offset1_ps={}\nbin_offset2_ps={}\nbin_width_ps={}\n",
            crate::config::config_name(self.config),
            self.period_ps,
            self.bin_offsets_ps[0],
            self.bin_offsets_ps[1],
            self.bin_offsets_ps[2],
            self.bin_width_ps,
        )
    }

    pub fn from_kv(text: &str, path: &Path) -> Result<Self> {
        let mut version = None;
        let mut config = None;
        let mut fields = [None; 5];
        let names = [
            "period_ps",
            "bin_offset0_ps",
            "bin_offset1_ps",
            "bin_offset2_ps",
            "bin_width_ps",
        ];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected key=value", path.display(), lineno + 1);
            };
            let (key, value) = (key.trim(), value.trim());
            if key == "version" {
                version = Some(value.to_string());
            } else if key == "config" {
                config = Some(match value {
                    "I" => Config::I,
                    "II" => Config::II,
                    _ => bail!("{}:{}: config must be I or II", path.display(), lineno + 1),
                });
            } else if let Some(i) = names.iter().position(|n| *n == key) {
                fields[i] = Some(value.parse::<u64>().with_context(|| {
                    format!("{}:{}: bad integer {value:?}", path.display(), lineno + 1)
                })?);
            } else {
                bail!("{}:{}: unknown key {key:?}", path.display(), lineno + 1);
            }
        }
        match version.as_deref() {
            Some("1") => {}
            Some(v) => bail!("{}: unsupported version {v:?}", path.display()),
            None => bail!("{}: missing version key", path.display()),
        }
        let get = |i: usize| {
            fields[i].with_context(|| format!("{}: missing key {}", path.display(), names[i]))
        };
        let binning = BinningConfig {
            period_ps: get(0)?,
            bin_offsets_ps: [get(1)?, get(2)?, get(3)?],
            bin_width_ps: get(4)?,
            config: config.with_context(|| format!("{}: missing key config", path.display()))?,
        };
        binning.validate()?;
        Ok(binning)
    }
}

/// Canonical click pattern (bitmask over bins 0..2) for an outcome symbol.
/// Inconclusive symbols map to the no-click pattern.
pub fn pattern_from_outcome(b: u8, config: Config) -> Result<u8> {
    match config {
        Config::I => match b {
            0..=2 => Ok(1 << b),
            3 => Ok(0),
            _ => bail!("Config I outcome {b} out of range"),
        },
        Config::II => match b {
            0 => Ok(0b110),
            1 => Ok(0b101),
            2 => Ok(0b011),
            3 => Ok(0b100),
            4 => Ok(0b010),
            5 => Ok(0b001),
            6 => Ok(0b000),
            _ => bail!("Config II outcome {b} out of range"),
        },
    }
}

/// Outcome symbols from per-trial click patterns.
///
/// Config I: exactly one click selects its bin; no click or multiple clicks
/// are inconclusive (b=3). Config II: the double/single/empty categories of
/// the seven-outcome scheme; a triple click is inconclusive (b=6).
pub fn outcomes_from_patterns(patterns: &[u8], config: Config) -> Vec<u8> {
    patterns
        .iter()
        .map(|&pattern| match config {
            Config::I => {
                if pattern.count_ones() == 1 {
                    pattern.trailing_zeros() as u8
                } else {
                    3
                }
            }
            Config::II => config2_outcome(pattern),
        })
        .collect()
}

/// Serialize trials as detector clicks (one file) using canonical patterns.
pub fn timestamps_from_trials(trials: &[TrialRecord], binning: &BinningConfig) -> Result<String> {
    binning.validate()?;
    let mut out = String::with_capacity(trials.len() * 12 + TIMESTAMP_HEADER.len());
    out.push_str(TIMESTAMP_HEADER);
    out.push('\n');
    let mid = binning.bin_width_ps / 2;
    for (i, t) in trials.iter().enumerate() {
        let pattern = pattern_from_outcome(t.b, binning.config)?;
        let base = i as u64 * binning.period_ps;
        for bin in 0..3 {
            if pattern >> bin & 1 == 1 {
                let time = base + binning.bin_offsets_ps[bin] + mid;
                writeln!(out, "{time},0").expect("string write");
            }
        }
    }
    Ok(out)
}

/// Streamed parse of a timestamp file into per-trial click patterns.
///
/// `n_trials` fixes the output length; clicks outside every bin window or
/// past the last trial are discarded and counted.
pub fn parse_timestamps(
    text: &str,
    binning: &BinningConfig,
    n_trials: usize,
    path: &Path,
) -> Result<(Vec<u8>, u64)> {
    binning.validate()?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == TIMESTAMP_HEADER => {}
        Some((_, header)) => bail!(
            "{}: expected header {TIMESTAMP_HEADER:?}, got {header:?}",
            path.display()
        ),
        None => bail!("{}: empty file", path.display()),
    }

    let mut patterns = vec![0u8; n_trials];
    let mut discarded = 0u64;
    let mut last_time = 0u64;
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let Some((time, channel)) = line.split_once(',') else {
            bail!("{}:{}: expected time_ps,channel", path.display(), lineno + 1);
        };
        let time: u64 = time.trim().parse().with_context(|| {
            format!("{}:{}: bad time {time:?}", path.display(), lineno + 1)
        })?;
        let _: u32 = channel.trim().parse().with_context(|| {
            format!("{}:{}: bad channel {channel:?}", path.display(), lineno + 1)
        })?;
        if time < last_time {
            bail!(
                "{}:{}: timestamps must be nondecreasing ({time} after {last_time})",
                path.display(),
                lineno + 1
            );
        }
        last_time = time;

        let trial = (time / binning.period_ps) as usize;
        let offset = time % binning.period_ps;
        match (trial < n_trials, binning.bin_of(offset)) {
            (true, Some(bin)) => patterns[trial] |= 1 << bin,
            _ => discarded += 1,
        }
    }
    Ok((patterns, discarded))
}

/// Inputs file: `#version=1` header, one input symbol per line.
pub fn inputs_to_text(trials: &[TrialRecord]) -> String {
    let mut out = String::from("#version=1\n");
    for t in trials {
        writeln!(out, "{}", t.x).expect("string write");
    }
    out
}

pub fn parse_inputs(text: &str, path: &Path) -> Result<Vec<u8>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "#version=1" => {}
        _ => bail!("{}: expected #version=1 header", path.display()),
    }
    let mut xs = Vec::new();
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        xs.push(line.parse::<u8>().with_context(|| {
            format!("{}:{}: bad input symbol {line:?}", path.display(), lineno + 1)
        })?);
    }
    ensure!(!xs.is_empty(), "{}: no input symbols", path.display());
    Ok(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("test.txt")
    }

    #[test]
    fn bin_geometry() {
        let b = BinningConfig::default_for(Config::I);
        b.validate().unwrap();
        assert_eq!(b.bin_of(1_000), Some(0));
        assert_eq!(b.bin_of(2_999), Some(0));
        assert_eq!(b.bin_of(3_000), None);
        assert_eq!(b.bin_of(4_500), Some(1));
        assert_eq!(b.bin_of(8_999), Some(2));
        assert_eq!(b.bin_of(9_000), None);

        let bad = BinningConfig {
            bin_offsets_ps: [0, 1_000, 1_500],
            bin_width_ps: 1_200,
            ..b
        };
        assert!(bad.validate().is_err());
        let outside = BinningConfig {
            bin_offsets_ps: [1_000, 4_000, 9_500],
            ..b
        };
        assert!(outside.validate().is_err());
    }

    #[test]
    fn binning_kv_round_trip() {
        let b = BinningConfig::default_for(Config::II);
        let parsed = BinningConfig::from_kv(&b.to_kv(), &p()).unwrap();
        assert_eq!(parsed.period_ps, b.period_ps);
        assert_eq!(parsed.bin_offsets_ps, b.bin_offsets_ps);
        assert_eq!(parsed.config, Config::II);
        assert!(BinningConfig::from_kv("version=2\n", &p()).is_err());
        assert!(BinningConfig::from_kv("version=1\nperiod_ps=10\n", &p()).is_err());
    }

    #[test]
    fn outcome_mapping_examples() {
        assert_eq!(outcomes_from_patterns(&[0b001], Config::I), vec![0]);
        assert_eq!(outcomes_from_patterns(&[0b010], Config::I), vec![1]);
        assert_eq!(outcomes_from_patterns(&[0b000, 0b011, 0b111], Config::I), vec![3, 3, 3]);
        assert_eq!(outcomes_from_patterns(&[0b000], Config::II), vec![6]);
        assert_eq!(outcomes_from_patterns(&[0b010], Config::II), vec![4]);
        assert_eq!(
            outcomes_from_patterns(&[0b110, 0b101, 0b011, 0b100, 0b001, 0b111], Config::II),
            vec![0, 1, 2, 3, 5, 6]
        );
    }

    #[test]
    fn pattern_outcome_inverse_on_canonical_patterns() {
        for b in 0..4u8 {
            let pat = pattern_from_outcome(b, Config::I).unwrap();
            assert_eq!(outcomes_from_patterns(&[pat], Config::I), vec![b]);
        }
        for b in 0..7u8 {
            let pat = pattern_from_outcome(b, Config::II).unwrap();
            assert_eq!(outcomes_from_patterns(&[pat], Config::II), vec![b]);
        }
        assert!(pattern_from_outcome(4, Config::I).is_err());
        assert!(pattern_from_outcome(7, Config::II).is_err());
    }

    #[test]
    fn generator_parser_round_trip() {
        for config in [Config::I, Config::II] {
            let d = if config == Config::I { 4 } else { 7 };
            let trials: Vec<TrialRecord> = (0..200)
                .map(|i| TrialRecord {
                    x: (i % 3) as u8,
                    b: ((i * 7 + 3) % d) as u8,
                })
                .collect();
            let binning = BinningConfig::default_for(config);
            let text = timestamps_from_trials(&trials, &binning).unwrap();
            let (patterns, discarded) =
                parse_timestamps(&text, &binning, trials.len(), &p()).unwrap();
            assert_eq!(discarded, 0);
            let outcomes = outcomes_from_patterns(&patterns, config);
            let expected: Vec<u8> = trials.iter().map(|t| t.b).collect();
            assert_eq!(outcomes, expected);
        }
    }

    #[test]
    fn parser_rejects_malformed_input() {
        let binning = BinningConfig::default_for(Config::I);
        assert!(parse_timestamps("no header\n1,0\n", &binning, 1, &p()).is_err());
        assert!(parse_timestamps("#version=1\nbogus\n", &binning, 1, &p()).is_err());
        assert!(parse_timestamps("#version=1\n12,zz\n", &binning, 1, &p()).is_err());
        let err = parse_timestamps("#version=1\n5000,0\n1000,0\n", &binning, 1, &p())
            .unwrap_err()
            .to_string();
        assert!(err.contains("nondecreasing"), "{err}");
    }

    #[test]
    fn stray_clicks_are_discarded_and_counted() {
        let binning = BinningConfig::default_for(Config::I);
        // One in-window click (bin 1 of trial 0), one dead-time click, one
        // click beyond the last trial.
        let text = "#version=1\n4500,0\n9500,0\n25000,0\n";
        let (patterns, discarded) = parse_timestamps(text, &binning, 2, &p()).unwrap();
        assert_eq!(patterns, vec![0b010, 0]);
        assert_eq!(discarded, 2);
    }

    #[test]
    fn inputs_round_trip() {
        let trials: Vec<TrialRecord> = [0u8, 2, 1, 1]
            .iter()
            .map(|&x| TrialRecord { x, b: 0 })
            .collect();
        let text = inputs_to_text(&trials);
        assert_eq!(parse_inputs(&text, &p()).unwrap(), vec![0, 2, 1, 1]);
        assert!(parse_inputs("0\n1\n", &p()).is_err());
        assert!(parse_inputs("#version=1\nx\n", &p()).is_err());
    }
}
