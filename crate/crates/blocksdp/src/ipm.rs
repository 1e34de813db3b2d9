//! Infeasible-start primal-dual interior-point method with Nesterov-Todd
//! scaling and a Mehrotra predictor-corrector step.
//!
//! The normal equations A W A^T dy = rhs are solved by exploiting the group
//! structure: rows scoped to a group couple only through that group's blocks,
//! so the normal matrix is arrowhead (block diagonal over groups plus a dense
//! border of global rows) and is eliminated group by group, leaving a dense
//! Schur complement only on the global rows.

use crate::problem::{Problem, Scope};
use crate::sym::{smat, svec, svec_len};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Converged to the requested tolerances; both objectives are trustworthy.
    Optimal,
    /// Iteration limit reached before convergence.
    MaxIters,
    /// A dual improving ray was found: the constraints admit no PSD solution.
    Infeasible,
    /// Linear algebra broke down (singular scaling, non-finite values).
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Relative primal/dual residual tolerance.
    pub tol_feas: f64,
    /// Static regularization added to the normal equations.
    pub static_reg: f64,
    /// Iterative refinement rounds for each normal solve.
    pub refine: usize,
    /// Fraction-to-boundary step scaling.
    pub tau: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 200,
            tol_gap: 1e-9,
            tol_feas: 1e-9,
            static_reg: 1e-12,
            refine: 1,
            tau: 0.98,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    /// <C, X> at the returned primal point.
    pub primal_objective: f64,
    /// b^T y at the returned dual point.
    pub dual_objective: f64,
    /// Packed primal blocks.
    pub x: Vec<f64>,
    /// One multiplier per constraint row, in problem row order.
    pub y: Vec<f64>,
    /// Packed dual slack blocks, s = c - A^T y up to the dual residual.
    pub s: Vec<f64>,
    /// Complementarity gap <x, s>.
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    BadProblem(#[from] crate::problem::ProblemError),
}

/// Where a row lands in the eliminated layout.
#[derive(Clone, Copy)]
enum RowSlot {
    Local { group: usize, pos: usize },
    Global { pos: usize },
}

/// Per-block Nesterov-Todd scaling: W = R R^T maps the primal block and its
/// dual slack to the same diagonal lam.
enum Scaling {
    Scalar { w: f64, lam: f64 },
    Block { r: DMatrix<f64>, rinv: DMatrix<f64>, lam: DVector<f64> },
}

struct Layout {
    offsets: Vec<usize>,
    local_rows: Vec<Vec<usize>>,
    global_rows: Vec<usize>,
    /// rows touching each block, as (slot, coeff, scale)
    touch: Vec<Vec<(RowSlot, usize, f64)>>,
    /// 1/norm applied to each row internally
    rscale: Vec<f64>,
}

fn build_layout(p: &Problem) -> Layout {
    let offsets = p.block_offsets();
    let mut local_rows: Vec<Vec<usize>> = vec![Vec::new(); p.n_groups];
    let mut global_rows = Vec::new();
    let mut slots = Vec::with_capacity(p.rows.len());
    for (i, row) in p.rows.iter().enumerate() {
        match row.scope {
            Scope::Group(g) => {
                slots.push(RowSlot::Local { group: g, pos: local_rows[g].len() });
                local_rows[g].push(i);
            }
            Scope::Global => {
                slots.push(RowSlot::Global { pos: global_rows.len() });
                global_rows.push(i);
            }
        }
    }
    let mut touch: Vec<Vec<(RowSlot, usize, f64)>> = vec![Vec::new(); p.n_blocks()];
    for (i, row) in p.rows.iter().enumerate() {
        for e in &row.entries {
            touch[e.block].push((slots[i], e.coeff, e.scale));
        }
    }
    // Exact row norms, for internal scaling to unit rows.
    let mut rscale = Vec::with_capacity(p.rows.len());
    let mut dense = vec![0.0; p.var_len()];
    for row in &p.rows {
        for v in dense.iter_mut() {
            *v = 0.0;
        }
        for e in &row.entries {
            let dst =
                &mut dense[offsets[e.block]..offsets[e.block] + svec_len(p.block_dims[e.block])];
            for (d, s) in dst.iter_mut().zip(&p.coeffs[e.coeff]) {
                *d += e.scale * s;
            }
        }
        let norm: f64 = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
        rscale.push(if norm > 0.0 { 1.0 / norm } else { 1.0 });
    }
    Layout { offsets, local_rows, global_rows, touch, rscale }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// out[i] = rscale[i] * <row_i, v>
fn apply_a(p: &Problem, lay: &Layout, v: &[f64], out: &mut [f64]) {
    for (i, row) in p.rows.iter().enumerate() {
        out[i] = lay.rscale[i] * p.row_dot(row, v, &lay.offsets);
    }
}

/// out += sum_i (rscale[i] * y[i]) * row_i
fn apply_at(p: &Problem, lay: &Layout, y: &[f64], out: &mut [f64]) {
    for ((row, &yi), &rs) in p.rows.iter().zip(y).zip(&lay.rscale) {
        let f = yi * rs;
        if f == 0.0 {
            continue;
        }
        for e in &row.entries {
            let dst =
                &mut out[lay.offsets[e.block]..lay.offsets[e.block] + svec_len(p.block_dims[e.block])];
            let c = &p.coeffs[e.coeff];
            let fe = f * e.scale;
            for (d, s) in dst.iter_mut().zip(c) {
                *d += fe * s;
            }
        }
    }
}

/// W v = svec(W mat(v) W) with W = R R^T, per block.
fn apply_w(p: &Problem, lay: &Layout, scalings: &[Scaling], v: &[f64], out: &mut [f64]) {
    for (blk, &dim) in p.block_dims.iter().enumerate() {
        let base = lay.offsets[blk];
        let len = svec_len(dim);
        match &scalings[blk] {
            Scaling::Scalar { w, .. } => out[base] = w * w * v[base],
            Scaling::Block { r, .. } => {
                let mat = smat(&v[base..base + len], dim);
                let t = r.transpose() * &mat * r;
                let back = r * &t * r.transpose();
                out[base..base + len].copy_from_slice(&svec(&back));
            }
        }
    }
}

fn is_pd(p: &Problem, lay: &Layout, v: &[f64]) -> bool {
    for (blk, &dim) in p.block_dims.iter().enumerate() {
        let base = lay.offsets[blk];
        if dim == 1 {
            if v[base] <= 0.0 {
                return false;
            }
            continue;
        }
        let mat = smat(&v[base..base + svec_len(dim)], dim);
        if Cholesky::new(mat).is_none() {
            return false;
        }
    }
    true
}

/// Largest t such that M + t*D stays PSD, via min eigenvalue of L^-1 D L^-T.
fn max_step(chol_l: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let z = match chol_l.clone().solve_lower_triangular(d) {
        Some(z) => z,
        None => return 0.0,
    };
    let k = match chol_l.clone().solve_lower_triangular(&z.transpose()) {
        Some(k) => k,
        None => return 0.0,
    };
    let lam_min = k
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if lam_min >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam_min
    }
}

fn step_bounds(
    p: &Problem,
    lay: &Layout,
    x: &[f64],
    s: &[f64],
    dx: &[f64],
    ds: &[f64],
) -> (f64, f64) {
    let mut ax = f64::INFINITY;
    let mut ad = f64::INFINITY;
    for (blk, &dim) in p.block_dims.iter().enumerate() {
        let base = lay.offsets[blk];
        let len = svec_len(dim);
        if dim == 1 {
            if dx[base] < 0.0 {
                ax = ax.min(-x[base] / dx[base]);
            }
            if ds[base] < 0.0 {
                ad = ad.min(-s[base] / ds[base]);
            }
            continue;
        }
        let xm = smat(&x[base..base + len], dim);
        let sm = smat(&s[base..base + len], dim);
        let dxm = smat(&dx[base..base + len], dim);
        let dsm = smat(&ds[base..base + len], dim);
        if let Some(cx) = Cholesky::new(xm) {
            ax = ax.min(max_step(&cx.l(), &dxm));
        }
        if let Some(cs) = Cholesky::new(sm) {
            ad = ad.min(max_step(&cs.l(), &dsm));
        }
    }
    (ax, ad)
}

struct Factor {
    chol_d: Vec<Option<Cholesky<f64, Dyn>>>,
    p_mats: Vec<DMatrix<f64>>,
    chol_corner: Option<Cholesky<f64, Dyn>>,
    n_glob: usize,
}

/// Transformed rows for one PSD block: scale * svec(R^T A R) per touching row.
fn transformed_rows(
    p: &Problem,
    scalings: &[Scaling],
    blk: usize,
    dim: usize,
    touch: &[(RowSlot, usize, f64)],
) -> DMatrix<f64> {
    let len = svec_len(dim);
    let mut out = DMatrix::zeros(touch.len(), len);
    match &scalings[blk] {
        Scaling::Scalar { w, .. } => {
            for (t, &(_, coeff, scale)) in touch.iter().enumerate() {
                out[(t, 0)] = scale * w * p.coeffs[coeff][0];
            }
        }
        Scaling::Block { r, .. } => {
            for (t, &(_, coeff, scale)) in touch.iter().enumerate() {
                let a = smat(&p.coeffs[coeff], dim);
                let tr = r.transpose() * &a * r;
                let packed = svec(&tr);
                for (k, v) in packed.iter().enumerate() {
                    out[(t, k)] = scale * v;
                }
            }
        }
    }
    out
}

fn row_scale_of(lay: &Layout, slot: RowSlot) -> f64 {
    match slot {
        RowSlot::Local { group, pos } => lay.rscale[lay.local_rows[group][pos]],
        RowSlot::Global { pos } => lay.rscale[lay.global_rows[pos]],
    }
}

fn assemble_factor(p: &Problem, lay: &Layout, scalings: &[Scaling], reg0: f64) -> Option<Factor> {
    let n_glob = lay.global_rows.len();
    let mut reg = reg0.max(1e-14);
    'retry: for _attempt in 0..5 {
        let mut d_mats: Vec<DMatrix<f64>> = lay
            .local_rows
            .iter()
            .map(|rows| DMatrix::zeros(rows.len(), rows.len()))
            .collect();
        let mut b_mats: Vec<DMatrix<f64>> = lay
            .local_rows
            .iter()
            .map(|rows| DMatrix::zeros(rows.len(), n_glob))
            .collect();
        let mut e_mat = DMatrix::zeros(n_glob, n_glob);

        for (blk, &dim) in p.block_dims.iter().enumerate() {
            let touch = &lay.touch[blk];
            if touch.is_empty() {
                continue;
            }
            let g = p.group_of[blk];
            let rows = transformed_rows(p, scalings, blk, dim, touch);
            let gram = &rows * rows.transpose();
            for (a, &(slot_a, _, _)) in touch.iter().enumerate() {
                let fa = row_scale_of(lay, slot_a);
                for (bq, &(slot_b, _, _)) in touch.iter().enumerate() {
                    let v = gram[(a, bq)] * fa * row_scale_of(lay, slot_b);
                    match (slot_a, slot_b) {
                        (RowSlot::Local { pos: pa, .. }, RowSlot::Local { pos: pb, .. }) => {
                            d_mats[g][(pa, pb)] += v;
                        }
                        (RowSlot::Local { pos: pa, .. }, RowSlot::Global { pos: pb }) => {
                            b_mats[g][(pa, pb)] += v;
                        }
                        (RowSlot::Global { .. }, RowSlot::Local { .. }) => {
                            // filled by the symmetric (local, global) visit
                        }
                        (RowSlot::Global { pos: pa }, RowSlot::Global { pos: pb }) => {
                            e_mat[(pa, pb)] += v;
                        }
                    }
                }
            }
        }

        let mut chol_d = Vec::with_capacity(p.n_groups);
        let mut p_mats = Vec::with_capacity(p.n_groups);
        let mut corner = e_mat;
        for i in 0..n_glob {
            corner[(i, i)] += reg;
        }
        for g in 0..p.n_groups {
            let l = lay.local_rows[g].len();
            if l == 0 {
                chol_d.push(None);
                p_mats.push(DMatrix::zeros(0, n_glob));
                continue;
            }
            let mut dg = std::mem::replace(&mut d_mats[g], DMatrix::zeros(0, 0));
            for i in 0..l {
                dg[(i, i)] += reg;
            }
            let ch = match Cholesky::new(dg) {
                Some(c) => c,
                None => {
                    reg *= 1e4;
                    continue 'retry;
                }
            };
            let pg = ch.solve(&b_mats[g]);
            if n_glob > 0 {
                corner -= b_mats[g].transpose() * &pg;
            }
            chol_d.push(Some(ch));
            p_mats.push(pg);
        }
        let chol_corner = if n_glob > 0 {
            match Cholesky::new(corner) {
                Some(c) => Some(c),
                None => {
                    reg *= 1e4;
                    continue 'retry;
                }
            }
        } else {
            None
        };
        return Some(Factor { chol_d, p_mats, chol_corner, n_glob });
    }
    None
}

fn normal_backsolve(lay: &Layout, factor: &Factor, rhs: &[f64]) -> Vec<f64> {
    let n_glob = factor.n_glob;
    let r_glob = DVector::from_iterator(n_glob, lay.global_rows.iter().map(|&i| rhs[i]));
    let mut acc = r_glob;
    let mut t_loc: Vec<DVector<f64>> = Vec::with_capacity(lay.local_rows.len());
    for g in 0..lay.local_rows.len() {
        match &factor.chol_d[g] {
            Some(ch) => {
                let r_g =
                    DVector::from_iterator(lay.local_rows[g].len(), lay.local_rows[g].iter().map(|&i| rhs[i]));
                let t = ch.solve(&r_g);
                if n_glob > 0 {
                    // B^T t = P^T r since P = D^-1 B and D is symmetric
                    acc -= factor.p_mats[g].transpose() * &r_g;
                }
                t_loc.push(t);
            }
            None => t_loc.push(DVector::zeros(0)),
        }
    }
    let dy_glob = match &factor.chol_corner {
        Some(ch) => ch.solve(&acc),
        None => DVector::zeros(0),
    };
    let mut out = vec![0.0; rhs.len()];
    for g in 0..lay.local_rows.len() {
        if lay.local_rows[g].is_empty() {
            continue;
        }
        let correction = if n_glob > 0 {
            &factor.p_mats[g] * &dy_glob
        } else {
            DVector::zeros(t_loc[g].len())
        };
        for (pos, &orig) in lay.local_rows[g].iter().enumerate() {
            out[orig] = t_loc[g][pos] - correction[pos];
        }
    }
    for (pos, &orig) in lay.global_rows.iter().enumerate() {
        out[orig] = dy_glob[pos];
    }
    out
}

/// Solve (A W A^T) dy = rhs with the arrowhead factorization, refining against
/// the unregularized operator.
fn solve_normal(
    p: &Problem,
    lay: &Layout,
    scalings: &[Scaling],
    factor: &Factor,
    rhs: &[f64],
    refine: usize,
) -> Vec<f64> {
    let mut dy = normal_backsolve(lay, factor, rhs);
    if refine == 0 {
        return dy;
    }
    let mut atv = vec![0.0; p.var_len()];
    let mut watv = vec![0.0; p.var_len()];
    let mut ndy = vec![0.0; rhs.len()];
    for _ in 0..refine {
        for v in atv.iter_mut() {
            *v = 0.0;
        }
        apply_at(p, lay, &dy, &mut atv);
        apply_w(p, lay, scalings, &atv, &mut watv);
        apply_a(p, lay, &watv, &mut ndy);
        let res: Vec<f64> = rhs.iter().zip(&ndy).map(|(r, n)| r - n).collect();
        let corr = normal_backsolve(lay, factor, &res);
        for (d, c) in dy.iter_mut().zip(&corr) {
            *d += c;
        }
    }
    dy
}

/// One Newton solve for the given complementarity right-hand side r_c.
fn newton_step(
    p: &Problem,
    lay: &Layout,
    scalings: &[Scaling],
    factor: &Factor,
    r_p: &[f64],
    r_d: &[f64],
    r_c: &[f64],
    opts: &SolveOptions,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let nvar = p.var_len();
    let m = p.rows.len();
    // rhs_y = r_p - A (r_c - W r_d)
    let mut wrd = vec![0.0; nvar];
    apply_w(p, lay, scalings, r_d, &mut wrd);
    let t: Vec<f64> = r_c.iter().zip(&wrd).map(|(a, b)| a - b).collect();
    let mut at = vec![0.0; m];
    apply_a(p, lay, &t, &mut at);
    let rhs_y: Vec<f64> = r_p.iter().zip(&at).map(|(a, b)| a - b).collect();

    let dy = solve_normal(p, lay, scalings, factor, &rhs_y, opts.refine);

    // ds = r_d - A^T dy ; dx = r_c - W ds
    let mut ds = r_d.to_vec();
    let neg: Vec<f64> = dy.iter().map(|v| -v).collect();
    apply_at(p, lay, &neg, &mut ds);
    let mut wds = vec![0.0; nvar];
    apply_w(p, lay, scalings, &ds, &mut wds);
    let dx: Vec<f64> = r_c.iter().zip(&wds).map(|(a, b)| a - b).collect();
    (dx, dy, ds)
}

pub fn solve(p: &Problem, opts: &SolveOptions) -> Result<Solution, SolveError> {
    p.validate()?;
    let lay = build_layout(p);
    let m = p.rows.len();
    let nvar = p.var_len();
    let ntr: f64 = p.block_dims.iter().map(|&d| d as f64).sum();

    let c = p.dense_objective();
    let b_int: Vec<f64> = p.rows.iter().zip(&lay.rscale).map(|(r, &s)| r.rhs * s).collect();

    let zeta_p = p.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max).max(1.0);
    let zeta_d = c.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);

    // Interior start: multiples of the identity in every block.
    let mut x = vec![0.0; nvar];
    let mut s = vec![0.0; nvar];
    for (blk, &dim) in p.block_dims.iter().enumerate() {
        let base = lay.offsets[blk];
        let mut k = 0;
        for j in 0..dim {
            x[base + k] = zeta_p;
            s[base + k] = zeta_d;
            k += dim - j;
        }
    }
    let mut y = vec![0.0; m];

    let mut ax_buf = vec![0.0; m];
    let mut iterations = 0;
    let mu0 = dot(&x, &s) / ntr;
    let mut status = SolveStatus::MaxIters;

    for iter in 0..opts.max_iters {
        iterations = iter;

        apply_a(p, &lay, &x, &mut ax_buf);
        let r_p: Vec<f64> = b_int.iter().zip(&ax_buf).map(|(b, ax)| b - ax).collect();
        let mut r_d: Vec<f64> = c.iter().zip(&s).map(|(cv, sv)| cv - sv).collect();
        let neg_y: Vec<f64> = y.iter().map(|v| -v).collect();
        apply_at(p, &lay, &neg_y, &mut r_d);

        let pobj = dot(&c, &x);
        let dobj = dot(&b_int, &y);
        let gap = dot(&x, &s);
        let mu = gap / ntr;
        let relgap = gap / (1.0 + pobj.abs().max(dobj.abs()));
        let rp_norm = norm2(&r_p) / (1.0 + norm2(&b_int));
        let rd_norm = norm2(&r_d) / (1.0 + norm2(&c));

        if !pobj.is_finite() || !dobj.is_finite() || !gap.is_finite() {
            status = SolveStatus::NumericalFailure;
            break;
        }
        if relgap <= opts.tol_gap && rp_norm <= opts.tol_feas && rd_norm <= opts.tol_feas {
            status = SolveStatus::Optimal;
            break;
        }
        // Dual improving ray: A^T y + s ~ 0 with s PSD and b^T y > 0 proves
        // primal infeasibility.
        if iter > 0 && mu < mu0 && dobj > 1e-10 {
            let mut ray = s.clone();
            apply_at(p, &lay, &y, &mut ray);
            let ray_res = ray.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if ray_res <= 1e-7 * dobj {
                status = SolveStatus::Infeasible;
                break;
            }
        }

        // Nesterov-Todd scaling per block.
        let mut scalings: Vec<Scaling> = Vec::with_capacity(p.n_blocks());
        let mut scale_failed = false;
        for (blk, &dim) in p.block_dims.iter().enumerate() {
            let base = lay.offsets[blk];
            let len = svec_len(dim);
            if dim == 1 {
                let (xv, sv) = (x[base], s[base]);
                if xv <= 0.0 || sv <= 0.0 {
                    scale_failed = true;
                    break;
                }
                scalings.push(Scaling::Scalar { w: (xv / sv).sqrt(), lam: (xv * sv).sqrt() });
                continue;
            }
            let xm = smat(&x[base..base + len], dim);
            let sm = smat(&s[base..base + len], dim);
            let (cx, cs) = match (Cholesky::new(xm), Cholesky::new(sm)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    scale_failed = true;
                    break;
                }
            };
            let lx = cx.l();
            let ls = cs.l();
            let msvd = (ls.transpose() * &lx).svd(true, true);
            let (u, vt) = match (msvd.u, msvd.v_t) {
                (Some(u), Some(vt)) => (u, vt),
                _ => {
                    scale_failed = true;
                    break;
                }
            };
            let sig = msvd.singular_values;
            if sig.iter().any(|&v| v.is_nan() || v <= 0.0) {
                scale_failed = true;
                break;
            }
            let inv_sqrt: Vec<f64> = sig.iter().map(|&v| 1.0 / v.sqrt()).collect();
            let mut r = &lx * vt.transpose();
            for (jc, f) in inv_sqrt.iter().enumerate() {
                for ir in 0..dim {
                    r[(ir, jc)] *= f;
                }
            }
            let mut rinv = u.transpose() * ls.transpose();
            for (ir, f) in inv_sqrt.iter().enumerate() {
                for jc in 0..dim {
                    rinv[(ir, jc)] *= f;
                }
            }
            scalings.push(Scaling::Block { r, rinv, lam: sig });
        }
        if scale_failed {
            status = SolveStatus::NumericalFailure;
            break;
        }

        let factor = match assemble_factor(p, &lay, &scalings, opts.static_reg) {
            Some(f) => f,
            None => {
                status = SolveStatus::NumericalFailure;
                break;
            }
        };

        // Predictor: drive complementarity toward zero.
        let r_c_aff: Vec<f64> = x.iter().map(|v| -v).collect();
        let (dx_a, _dy_a, ds_a) = newton_step(p, &lay, &scalings, &factor, &r_p, &r_d, &r_c_aff, opts);
        let (ax_a, as_a) = step_bounds(p, &lay, &x, &s, &dx_a, &ds_a);
        let a_aff = ax_a.min(as_a).min(1.0);
        let mut mu_aff = 0.0;
        for i in 0..nvar {
            mu_aff += (x[i] + a_aff * dx_a[i]) * (s[i] + a_aff * ds_a[i]);
        }
        mu_aff = (mu_aff / ntr).max(0.0);
        let sigma = ((mu_aff / mu).powi(3)).clamp(1e-12, 0.999_999);

        // Corrector target in the scaled space, mapped back through R.
        let mut r_c = vec![0.0; nvar];
        for (blk, &dim) in p.block_dims.iter().enumerate() {
            let base = lay.offsets[blk];
            let len = svec_len(dim);
            match &scalings[blk] {
                Scaling::Scalar { w, lam } => {
                    let t = sigma * mu - lam * lam - dx_a[base] * ds_a[base];
                    r_c[base] = w * (t / lam);
                }
                Scaling::Block { r, rinv, lam } => {
                    let dxm = smat(&dx_a[base..base + len], dim);
                    let dsm = smat(&ds_a[base..base + len], dim);
                    let dxh = rinv * &dxm * rinv.transpose();
                    let dsh = r.transpose() * &dsm * r;
                    let mut t = -0.5 * (&dxh * &dsh + &dsh * &dxh);
                    for i in 0..dim {
                        t[(i, i)] += sigma * mu - lam[i] * lam[i];
                    }
                    // Lyapunov solve against diag(lam).
                    for i in 0..dim {
                        for j in 0..dim {
                            t[(i, j)] *= 2.0 / (lam[i] + lam[j]);
                        }
                    }
                    let back = r * &t * r.transpose();
                    r_c[base..base + len].copy_from_slice(&svec(&back));
                }
            }
        }
        let (dx, dy, ds) = newton_step(p, &lay, &scalings, &factor, &r_p, &r_d, &r_c, opts);

        let (ax, ad_raw) = step_bounds(p, &lay, &x, &s, &dx, &ds);
        let mut ap = (opts.tau * ax).min(1.0);
        let mut ad = (opts.tau * ad_raw).min(1.0);
        let mut committed = false;
        for _ in 0..30 {
            let xn: Vec<f64> = x.iter().zip(&dx).map(|(v, d)| v + ap * d).collect();
            let sn: Vec<f64> = s.iter().zip(&ds).map(|(v, d)| v + ad * d).collect();
            if is_pd(p, &lay, &xn) && is_pd(p, &lay, &sn) {
                x = xn;
                s = sn;
                for i in 0..m {
                    y[i] += ad * dy[i];
                }
                committed = true;
                break;
            }
            ap *= 0.8;
            ad *= 0.8;
        }
        if !committed {
            status = SolveStatus::NumericalFailure;
            break;
        }
    }

    apply_a(p, &lay, &x, &mut ax_buf);
    let rp_final: Vec<f64> = b_int.iter().zip(&ax_buf).map(|(b, ax)| b - ax).collect();
    let mut rd_final: Vec<f64> = c.iter().zip(&s).map(|(cv, sv)| cv - sv).collect();
    let neg_y: Vec<f64> = y.iter().map(|v| -v).collect();
    apply_at(p, &lay, &neg_y, &mut rd_final);

    let y_true: Vec<f64> = y.iter().zip(&lay.rscale).map(|(v, rs)| v * rs).collect();
    let pobj = dot(&c, &x);
    let dobj: f64 = p.rows.iter().zip(&y_true).map(|(r, yv)| r.rhs * yv).sum();
    Ok(Solution {
        status,
        primal_objective: pobj,
        dual_objective: dobj,
        gap: dot(&x, &s),
        primal_residual: norm2(&rp_final),
        dual_residual: norm2(&rd_final),
        x,
        y: y_true,
        s,
        iterations,
    })
}
