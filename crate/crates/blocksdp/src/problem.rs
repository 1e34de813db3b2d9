//! Problem data for a block-diagonal semidefinite program in standard form:
//!
//!   minimize    <C, X>
//!   subject to  <A_i, X> = b_i   for each row i
//!               X >= 0 (positive semidefinite, block diagonal)
//!
//! X is a direct sum of symmetric blocks. Constraint matrices are sparse over
//! blocks: each row is a list of (block, coefficient, scale) entries drawn
//! from a shared pool of packed symmetric coefficients, so rows that reuse
//! the same operator on many blocks store it once.
//!
//! Blocks are partitioned into groups. Rows scoped to a group may only touch
//! that group's blocks; global rows may touch any block. The solver exploits
//! this layout: the Schur complement of the normal equations is arrowhead,
//! dense only on the (small) global part.

use crate::sym::svec_len;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Row touches only blocks of the given group.
    Group(usize),
    /// Row may touch any block.
    Global,
}

#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub block: usize,
    /// Index into `Problem::coeffs`.
    pub coeff: usize,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub scope: Scope,
    pub rhs: f64,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, Default)]
pub struct Problem {
    /// Side length of each PSD block.
    pub block_dims: Vec<usize>,
    /// Group id of each block.
    pub group_of: Vec<usize>,
    pub n_groups: usize,
    /// Pool of packed symmetric coefficient matrices.
    pub coeffs: Vec<Vec<f64>>,
    /// Sparse objective: sum of scale * coeff placed on block.
    pub objective: Vec<Entry>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("problem has no blocks")]
    Empty,
    #[error("block {block} has group {group} out of range")]
    BadGroup { block: usize, group: usize },
    #[error("entry references block {block} out of range")]
    BadBlock { block: usize },
    #[error("entry coefficient {coeff} out of range")]
    BadCoeff { coeff: usize },
    #[error("coefficient {coeff} has length {len}, expected {expected} for block {block}")]
    DimMismatch {
        coeff: usize,
        len: usize,
        expected: usize,
        block: usize,
    },
    #[error("row {row} is scoped to group {group} but touches block {block} of group {actual}")]
    ScopeViolation {
        row: usize,
        group: usize,
        block: usize,
        actual: usize,
    },
    #[error("non-finite value in problem data")]
    NotFinite,
}

impl Problem {
    pub fn n_blocks(&self) -> usize {
        self.block_dims.len()
    }

    /// Total packed length across blocks.
    pub fn var_len(&self) -> usize {
        self.block_dims.iter().map(|&d| svec_len(d)).sum()
    }

    /// Packed offset of each block, plus the total at the end.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.n_blocks() + 1);
        let mut acc = 0;
        for &d in &self.block_dims {
            off.push(acc);
            acc += svec_len(d);
        }
        off.push(acc);
        off
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.block_dims.is_empty() {
            return Err(ProblemError::Empty);
        }
        if self.group_of.len() != self.block_dims.len() {
            return Err(ProblemError::BadGroup {
                block: self.group_of.len().min(self.block_dims.len()),
                group: usize::MAX,
            });
        }
        for (blk, &g) in self.group_of.iter().enumerate() {
            if g >= self.n_groups {
                return Err(ProblemError::BadGroup { block: blk, group: g });
            }
        }
        let check_entry = |e: &Entry| -> Result<(), ProblemError> {
            let dim = *self
                .block_dims
                .get(e.block)
                .ok_or(ProblemError::BadBlock { block: e.block })?;
            let c = self
                .coeffs
                .get(e.coeff)
                .ok_or(ProblemError::BadCoeff { coeff: e.coeff })?;
            if c.len() != svec_len(dim) {
                return Err(ProblemError::DimMismatch {
                    coeff: e.coeff,
                    len: c.len(),
                    expected: svec_len(dim),
                    block: e.block,
                });
            }
            if !e.scale.is_finite() {
                return Err(ProblemError::NotFinite);
            }
            Ok(())
        };
        for e in &self.objective {
            check_entry(e)?;
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(ProblemError::NotFinite);
            }
            for e in &row.entries {
                check_entry(e)?;
                if let Scope::Group(g) = row.scope {
                    if self.group_of[e.block] != g {
                        return Err(ProblemError::ScopeViolation {
                            row: i,
                            group: g,
                            block: e.block,
                            actual: self.group_of[e.block],
                        });
                    }
                }
            }
        }
        for c in &self.coeffs {
            if c.iter().any(|v| !v.is_finite()) {
                return Err(ProblemError::NotFinite);
            }
        }
        Ok(())
    }

    /// Dense objective vector c (packed, concatenated over blocks).
    pub fn dense_objective(&self) -> Vec<f64> {
        let off = self.block_offsets();
        let mut c = vec![0.0; self.var_len()];
        for e in &self.objective {
            let dst = &mut c[off[e.block]..off[e.block] + svec_len(self.block_dims[e.block])];
            for (d, s) in dst.iter_mut().zip(&self.coeffs[e.coeff]) {
                *d += e.scale * s;
            }
        }
        c
    }

    /// <row_i, x> for one row against a packed full vector.
    pub fn row_dot(&self, row: &Row, x: &[f64], off: &[usize]) -> f64 {
        let mut acc = 0.0;
        for e in &row.entries {
            let xs = &x[off[e.block]..off[e.block] + svec_len(self.block_dims[e.block])];
            let c = &self.coeffs[e.coeff];
            let mut dot = 0.0;
            for (a, b) in xs.iter().zip(c) {
                dot += a * b;
            }
            acc += e.scale * dot;
        }
        acc
    }

    /// y^T A accumulated into a packed full vector: out += sum_i y_i A_i.
    pub fn add_at_y(&self, y: &[f64], out: &mut [f64], off: &[usize]) {
        for (row, &yi) in self.rows.iter().zip(y) {
            if yi == 0.0 {
                continue;
            }
            for e in &row.entries {
                let dst = &mut out[off[e.block]..off[e.block] + svec_len(self.block_dims[e.block])];
                let c = &self.coeffs[e.coeff];
                let f = yi * e.scale;
                for (d, s) in dst.iter_mut().zip(c) {
                    *d += f * s;
                }
            }
        }
    }
}
