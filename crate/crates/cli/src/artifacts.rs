//! Versioned on-disk artifacts: probability tables, certification results,
//! curve CSVs, power-monitor records, and packed output bits.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use sdiqrng::certify::{CertResult, SweepCurve};
use sdiqrng::detection::ProbTable;
use sdiqrng::extract::{pack_bits, unpack_bits, ExtractionReport};
use serde::{Deserialize, Serialize};

pub const ARTIFACT_VERSION: u32 = 1;

/// A probability table with optional empirical provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableArtifact {
    pub version: u32,
    pub table: ProbTable,
    /// Per-(input, outcome) trial counts when the table is empirical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<Vec<u64>>>,
    /// Clicks dropped during ingestion (outside bins or trial range).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discarded_clicks: Option<u64>,
    pub content_hash: String,
}

impl TableArtifact {
    pub fn new(table: ProbTable, counts: Option<Vec<Vec<u64>>>, discarded: Option<u64>) -> Self {
        let content_hash = table.content_hash();
        TableArtifact {
            version: ARTIFACT_VERSION,
            table,
            counts,
            discarded_clicks: discarded,
            content_hash,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let artifact: TableArtifact =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        ensure!(
            artifact.version == ARTIFACT_VERSION,
            "{}: unsupported version {}",
            path.display(),
            artifact.version
        );
        artifact.table.validate()?;
        ensure!(
            artifact.content_hash == artifact.table.content_hash(),
            "{}: content hash mismatch (file corrupted or edited)",
            path.display()
        );
        if let Some(counts) = &artifact.counts {
            ensure!(
                counts.len() == artifact.table.n && counts.iter().all(|r| r.len() == artifact.table.d),
                "{}: counts shape does not match the table",
                path.display()
            );
        }
        Ok(artifact)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Per-input trial totals, when counts are present.
    pub fn row_counts(&self) -> Option<Vec<u64>> {
        self.counts
            .as_ref()
            .map(|c| c.iter().map(|row| row.iter().sum()).collect())
    }
}

/// A certification result (with embedded certificate when requested).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertArtifact {
    pub version: u32,
    pub result: CertResult,
}

impl CertArtifact {
    pub fn new(result: CertResult) -> Self {
        CertArtifact {
            version: ARTIFACT_VERSION,
            result,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let artifact: CertArtifact =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        ensure!(
            artifact.version == ARTIFACT_VERSION,
            "{}: unsupported version {}",
            path.display(),
            artifact.version
        );
        Ok(artifact)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// End-to-end pipeline report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineReport {
    pub version: u32,
    pub source: String,
    pub trials: usize,
    pub table_hash: String,
    pub energy: sdiqrng::certify::EnergyReport,
    pub certification: CertResult,
    pub output_budget_bits: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extraction: Option<ExtractionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits_file: Option<String>,
    pub certified_success: bool,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing artifact")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Curve CSV with a version comment line on top of the fixed schema.
pub fn write_curve_csv(path: &Path, curve: &SweepCurve) -> Result<()> {
    let text = format!("#version=1\n{}", curve.to_csv());
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Power-monitor records: `#version=1`, one mean-photon estimate per input
/// symbol, in input order.
pub fn parse_power_records(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "#version=1" => {}
        _ => bail!("{}: expected #version=1 header", path.display()),
    }
    let mut records = Vec::new();
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        records.push(line.parse::<f64>().with_context(|| {
            format!("{}:{}: bad estimate {line:?}", path.display(), lineno + 1)
        })?);
    }
    ensure!(!records.is_empty(), "{}: no records", path.display());
    Ok(records)
}

const BITS_MAGIC: &[u8; 4] = b"SDQB";
const BITS_VERSION: u8 = 1;

/// Packed bit file: magic, version byte, u64 LE bit count, MSB-first bytes.
pub fn write_bits_file(path: &Path, bits: &[u8]) -> Result<()> {
    let mut data = Vec::with_capacity(13 + bits.len() / 8);
    data.extend_from_slice(BITS_MAGIC);
    data.push(BITS_VERSION);
    data.extend_from_slice(&(bits.len() as u64).to_le_bytes());
    data.extend_from_slice(&pack_bits(bits));
    std::fs::write(path, data).with_context(|| format!("writing {}", path.display()))
}

pub fn read_bits_file(path: &Path) -> Result<Vec<u8>> {
    let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ensure!(
        data.len() >= 13 && &data[..4] == BITS_MAGIC,
        "{}: not a bit file",
        path.display()
    );
    ensure!(
        data[4] == BITS_VERSION,
        "{}: unsupported version {}",
        path.display(),
        data[4]
    );
    let nbits = u64::from_le_bytes(data[5..13].try_into().expect("8 bytes")) as usize;
    ensure!(
        data.len() == 13 + nbits.div_ceil(8),
        "{}: truncated bit file",
        path.display()
    );
    Ok(unpack_bits(&data[13..], nbits)?)
}
