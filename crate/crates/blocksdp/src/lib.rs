//! A small primal-dual interior-point solver for semidefinite programs whose
//! variable is a direct sum of many small PSD blocks:
//!
//!   minimize    <C, X>
//!   subject to  <A_i, X> = b_i,   X >= 0 (block diagonal)
//!
//! Designed for problems with thousands of small blocks tied together by a
//! handful of coupling constraints. Rows are declared either local to a block
//! group or global; the normal equations then have arrowhead structure and
//! are eliminated group by group, so cost grows linearly with the number of
//! groups.
//!
//! The solve is deterministic: no randomization, fixed iteration order.

mod ipm;
mod problem;
pub mod sym;

pub use ipm::{solve, SolveError, SolveOptions, SolveStatus, Solution};
pub use problem::{Entry, Problem, ProblemError, Row, Scope};
