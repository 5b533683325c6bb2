//! Post-hoc alignment of posterior factor samples.
//!
//! Factor draws are only identified up to rotation, permutation, and sign:
//! right-multiplying loadings and scores by any orthogonal matrix leaves
//! every reconstructed structure unchanged. To make factor-level summaries
//! meaningful, each retained iteration is (1) varimax-rotated — on the
//! loadings with the matching coefficient sub-vector appended as an extra
//! row, the rotation also applied to the paired scores — and (2) greedily
//! matched, column by column in decreasing-norm order, to the signed
//! columns of a pivot iteration chosen by median condition number.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gibbs::{DecompositionState, PosteriorSamples};
use crate::linalg::sorted_svd;
use crate::scalar::Real;

/// Convergence tolerance on the varimax criterion.
const VARIMAX_TOL: f64 = 1e-8;
/// Iteration cap for the varimax ascent.
const VARIMAX_MAX_ITER: usize = 1000;

/// Aligned copies of every retained iteration's factors, plus the audit
/// trail of the permutations and signs that were applied.
#[derive(Debug, Clone)]
pub struct AlignedSamples<T: Real> {
    /// Aligned joint scores per retained iteration.
    pub joint_scores: Vec<DMatrix<T>>,
    pub joint_loadings: Vec<Vec<DMatrix<T>>>,
    pub indiv_scores: Vec<Vec<DMatrix<T>>>,
    pub indiv_loadings: Vec<Vec<DMatrix<T>>>,
    /// Aligned coefficient vectors (intercept first), when present.
    pub coefficients: Vec<Option<DVector<T>>>,
    /// Outcome noise variances per retained iteration (continuous chains);
    /// invariant under alignment but carried along for downstream summaries.
    pub noise_vars: Option<Vec<T>>,
    /// Which retained iteration served as the pivot.
    pub pivot_index: usize,
    /// Per-iteration column permutation of the joint block: entry k gives
    /// the pivot column that sample column k was matched to.
    pub joint_permutations: Vec<Vec<usize>>,
    pub joint_signs: Vec<Vec<i8>>,
    /// Per-iteration, per-source permutations and signs of the individual
    /// blocks.
    pub indiv_permutations: Vec<Vec<Vec<usize>>>,
    pub indiv_signs: Vec<Vec<Vec<i8>>>,
}

/// Appends the matching coefficient sub-vector as a bottom row of a
/// loadings matrix, giving the augmented block the alignment operates on.
/// Without coefficients the loadings pass through unchanged.
pub fn stack_loadings_with_beta<T: Real>(
    loadings: &DMatrix<T>,
    beta_block: Option<&DVector<T>>,
) -> DMatrix<T> {
    match beta_block {
        None => loadings.clone(),
        Some(beta) => {
            debug_assert_eq!(beta.len(), loadings.ncols());
            let mut out = DMatrix::zeros(loadings.nrows() + 1, loadings.ncols());
            out.view_mut((0, 0), loadings.shape()).copy_from(loadings);
            for c in 0..loadings.ncols() {
                out[(loadings.nrows(), c)] = beta[c];
            }
            out
        }
    }
}

/// Splits an augmented block back into loadings and the coefficient row.
pub fn split_loadings_and_beta<T: Real>(
    augmented: &DMatrix<T>,
    has_beta: bool,
) -> (DMatrix<T>, Option<DVector<T>>) {
    if !has_beta {
        return (augmented.clone(), None);
    }
    let p = augmented.nrows() - 1;
    let loadings = augmented.view((0, 0), (p, augmented.ncols())).into_owned();
    let beta = augmented.row(p).transpose();
    (loadings, Some(beta))
}

/// Varimax criterion: summed column variance of squared loadings.
fn varimax_criterion<T: Real>(m: &DMatrix<T>) -> T {
    let p = T::from_usize(m.nrows()).expect("rows fit");
    let mut total = T::zero();
    for c in 0..m.ncols() {
        let mut s2 = T::zero();
        let mut s4 = T::zero();
        for r in 0..m.nrows() {
            let v = m[(r, c)] * m[(r, c)];
            s2 += v;
            s4 += v * v;
        }
        total += s4 / p - (s2 / p) * (s2 / p);
    }
    total
}

/// Varimax rotation: returns the rotated matrix and the orthogonal rotation
/// applied on the right, with the criterion never decreased. Matrices with
/// fewer than two columns rotate by the identity. Row normalization is not
/// applied, so the loading scale that the greedy matching relies on is
/// preserved.
pub fn varimax_rotate<T: Real>(m: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let (p, k) = (m.nrows(), m.ncols());
    if k < 2 {
        return Ok((m.clone(), DMatrix::identity(k, k)));
    }
    let pf = T::from_usize(p).expect("rows fit");
    let mut rotation = DMatrix::<T>::identity(k, k);
    let mut criterion = varimax_criterion(m);
    let tol = T::approx(VARIMAX_TOL);
    for _ in 0..VARIMAX_MAX_ITER {
        let z = m * &rotation;
        // Ascent target: z^3 - z diag(colsums(z^2))/p, projected back onto
        // the orthogonal group through its SVD.
        let mut target = z.clone();
        for c in 0..k {
            let mut colsum = T::zero();
            for r in 0..p {
                colsum += z[(r, c)] * z[(r, c)];
            }
            let shrink = colsum / pf;
            for r in 0..p {
                target[(r, c)] = z[(r, c)] * z[(r, c)] * z[(r, c)] - z[(r, c)] * shrink;
            }
        }
        let b = m.transpose() * target;
        let svd = sorted_svd(&b)?;
        let candidate = &svd.u * svd.v.transpose();
        let new_criterion = varimax_criterion(&(m * &candidate));
        let gain = (new_criterion - criterion) / (T::one() + criterion.abs());
        if new_criterion > criterion {
            rotation = candidate;
            criterion = new_criterion;
        }
        if gain < tol {
            break;
        }
    }
    Ok((m * &rotation, rotation))
}

/// Condition number used for pivot choice: the ratio of the largest to the
/// smallest singular value pooled over the given (non-empty) blocks, as if
/// they were stacked block-diagonally.
fn pooled_condition_number<T: Real>(blocks: &[DMatrix<T>]) -> Result<T> {
    let mut smallest = T::max_value().expect("bounded scalar");
    let mut largest = T::zero();
    let mut any = false;
    for b in blocks {
        if b.ncols() == 0 {
            continue;
        }
        any = true;
        let svd = sorted_svd(b)?;
        for &s in &svd.sigma {
            largest = largest.max(s);
            smallest = smallest.min(s);
        }
    }
    if !any {
        return Ok(T::one());
    }
    if smallest <= T::zero() {
        return Ok(T::max_value().expect("bounded scalar"));
    }
    Ok(largest / smallest)
}

/// Chooses the pivot iteration: the one whose augmented loadings have the
/// median condition number (the lower of the two middles for even counts;
/// the earliest iteration on ties).
pub fn choose_pivot<T: Real>(condition_numbers: &[T]) -> usize {
    assert!(!condition_numbers.is_empty(), "no retained iterations");
    let mut sorted = condition_numbers.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("comparable condition numbers"));
    let median = sorted[(sorted.len() - 1) / 2];
    condition_numbers
        .iter()
        .position(|&c| c == median)
        .expect("median value present")
}

/// Greedy column matching: sample columns are processed in decreasing-norm
/// order, each matched to the still-unused pivot column (under either sign)
/// with the smallest L2 difference; ties prefer the lower pivot index and
/// the positive sign. Returns, per sample column, the pivot column it maps
/// to and the sign.
pub fn greedy_match<T: Real>(
    sample: &DMatrix<T>,
    pivot: &DMatrix<T>,
) -> Result<(Vec<usize>, Vec<i8>)> {
    if sample.ncols() != pivot.ncols() || sample.nrows() != pivot.nrows() {
        return Err(Error::dims(format!(
            "cannot match {}x{} loadings to a {}x{} pivot",
            sample.nrows(),
            sample.ncols(),
            pivot.nrows(),
            pivot.ncols()
        )));
    }
    let k = sample.ncols();
    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<T> = (0..k).map(|c| sample.column(c).norm()).collect();
    order.sort_by(|&a, &b| {
        norms[b]
            .partial_cmp(&norms[a])
            .expect("comparable norms")
            .then(a.cmp(&b))
    });

    let mut permutation = vec![0usize; k];
    let mut signs = vec![1i8; k];
    let mut used = vec![false; k];
    for &col in &order {
        let mut best: Option<(T, usize, i8)> = None;
        for cand in 0..k {
            if used[cand] {
                continue;
            }
            let mut d_plus = T::zero();
            let mut d_minus = T::zero();
            for r in 0..sample.nrows() {
                let x = sample[(r, col)];
                let p = pivot[(r, cand)];
                d_plus += (x - p) * (x - p);
                d_minus += (x + p) * (x + p);
            }
            for (dist, sign) in [(d_plus, 1i8), (d_minus, -1i8)] {
                let better = match &best {
                    None => true,
                    Some((bd, bc, bs)) => {
                        dist < *bd || (dist == *bd && (cand < *bc || (cand == *bc && sign > *bs)))
                    }
                };
                if better {
                    best = Some((dist, cand, sign));
                }
            }
        }
        let (_, cand, sign) = best.expect("at least one unused pivot column");
        used[cand] = true;
        permutation[col] = cand;
        signs[col] = sign;
    }
    Ok((permutation, signs))
}

/// Applies a permutation/sign pair: output column `perm[k]` is
/// `sign[k] * input column k`.
fn apply_match<T: Real>(m: &DMatrix<T>, perm: &[usize], signs: &[i8]) -> DMatrix<T> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, (&dst, &sg)) in perm.iter().zip(signs).enumerate() {
        let col = m.column(k);
        let factor = if sg >= 0 { T::one() } else { -T::one() };
        for r in 0..m.nrows() {
            out[(r, dst)] = factor * col[r];
        }
    }
    out
}

/// One iteration's varimax-rotated blocks.
struct RotatedIteration<T: Real> {
    joint_aug: DMatrix<T>,
    joint_scores: DMatrix<T>,
    indiv_aug: Vec<DMatrix<T>>,
    indiv_scores: Vec<DMatrix<T>>,
}

fn rotate_iteration<T: Real>(state: &DecompositionState<T>) -> Result<RotatedIteration<T>> {
    let has_beta = state.coefficients.is_some();
    let q = state.q();

    let joint_stacked = crate::linalg::vstack(&state.joint_loadings);
    let joint_aug_in =
        stack_loadings_with_beta(&joint_stacked, has_beta.then(|| state.beta_joint()).as_ref());
    let (joint_aug, rot) = varimax_rotate(&joint_aug_in)?;
    let joint_scores = &state.joint_scores * &rot;

    let mut indiv_aug = Vec::with_capacity(q);
    let mut indiv_scores = Vec::with_capacity(q);
    for s in 0..q {
        let aug_in = stack_loadings_with_beta(
            &state.indiv_loadings[s],
            has_beta.then(|| state.beta_indiv(s)).as_ref(),
        );
        let (aug, rot_s) = varimax_rotate(&aug_in)?;
        indiv_aug.push(aug);
        indiv_scores.push(&state.indiv_scores[s] * &rot_s);
    }
    Ok(RotatedIteration {
        joint_aug,
        joint_scores,
        indiv_aug,
        indiv_scores,
    })
}

/// Aligns the retained iterations of a chain: varimax on every augmented
/// loading block (rotating the paired scores identically), pivot choice by
/// median condition number, then greedy permutation/sign matching of every
/// block to the pivot, applied consistently to loadings, scores, and the
/// matching coefficient entries.
pub fn align_chain<T: Real>(samples: &PosteriorSamples<T>) -> Result<AlignedSamples<T>> {
    let retained = samples.retained();
    if retained.is_empty() {
        return Err(Error::invalid("no retained iterations to align"));
    }
    let ranks = &samples.meta.ranks;
    for st in retained {
        if &st.ranks() != ranks {
            return Err(Error::invalid("ranks vary across iterations"));
        }
    }
    let has_beta = retained[0].coefficients.is_some();
    let dims: Vec<usize> = samples.meta.dims.clone();

    let rotated: Vec<RotatedIteration<T>> = retained
        .iter()
        .map(rotate_iteration)
        .collect::<Result<_>>()?;

    let condition_numbers: Vec<T> = rotated
        .iter()
        .map(|it| {
            let mut blocks: Vec<DMatrix<T>> = vec![it.joint_aug.clone()];
            blocks.extend(it.indiv_aug.iter().cloned());
            pooled_condition_number(&blocks)
        })
        .collect::<Result<_>>()?;
    let pivot_index = choose_pivot(&condition_numbers);
    let pivot = &rotated[pivot_index];

    let q = dims.len();
    let noise_vars = retained[0]
        .noise_var
        .is_some()
        .then(|| retained.iter().map(|st| st.noise_var.expect("noise variance present")).collect());
    let mut out = AlignedSamples {
        joint_scores: Vec::with_capacity(rotated.len()),
        joint_loadings: Vec::with_capacity(rotated.len()),
        indiv_scores: Vec::with_capacity(rotated.len()),
        indiv_loadings: Vec::with_capacity(rotated.len()),
        coefficients: Vec::with_capacity(rotated.len()),
        noise_vars,
        pivot_index,
        joint_permutations: Vec::with_capacity(rotated.len()),
        joint_signs: Vec::with_capacity(rotated.len()),
        indiv_permutations: Vec::with_capacity(rotated.len()),
        indiv_signs: Vec::with_capacity(rotated.len()),
    };

    for (t, it) in rotated.iter().enumerate() {
        let (joint_perm, joint_sg) = greedy_match(&it.joint_aug, &pivot.joint_aug)?;
        let joint_aug_aligned = apply_match(&it.joint_aug, &joint_perm, &joint_sg);
        let (joint_stacked, joint_beta) = split_loadings_and_beta(&joint_aug_aligned, has_beta);
        let joint_loadings = crate::linalg::split_rows(&joint_stacked, &dims);
        let joint_scores = apply_match(&it.joint_scores, &joint_perm, &joint_sg);

        let mut indiv_loadings = Vec::with_capacity(q);
        let mut indiv_scores = Vec::with_capacity(q);
        let mut indiv_perms = Vec::with_capacity(q);
        let mut indiv_sgs = Vec::with_capacity(q);
        let mut beta_blocks = Vec::with_capacity(q);
        for s in 0..q {
            let (perm, sg) = greedy_match(&it.indiv_aug[s], &pivot.indiv_aug[s])?;
            let aligned = apply_match(&it.indiv_aug[s], &perm, &sg);
            let (loadings, beta_s) = split_loadings_and_beta(&aligned, has_beta);
            indiv_loadings.push(loadings);
            indiv_scores.push(apply_match(&it.indiv_scores[s], &perm, &sg));
            beta_blocks.push(beta_s);
            indiv_perms.push(perm);
            indiv_sgs.push(sg);
        }

        let coefficients = if has_beta {
            let beta = retained[t].coefficients.as_ref().expect("coefficients");
            let mut full = DVector::zeros(beta.len());
            full[0] = beta[0];
            let jb = joint_beta.expect("joint beta row present");
            for k in 0..jb.len() {
                full[1 + k] = jb[k];
            }
            let mut off = 1 + jb.len();
            for bb in &beta_blocks {
                let bb = bb.as_ref().expect("individual beta row present");
                for k in 0..bb.len() {
                    full[off + k] = bb[k];
                }
                off += bb.len();
            }
            Some(full)
        } else {
            None
        };

        out.joint_scores.push(joint_scores);
        out.joint_loadings.push(joint_loadings);
        out.indiv_scores.push(indiv_scores);
        out.indiv_loadings.push(indiv_loadings);
        out.coefficients.push(coefficients);
        out.joint_permutations.push(joint_perm);
        out.joint_signs.push(joint_sg);
        out.indiv_permutations.push(indiv_perms);
        out.indiv_signs.push(indiv_sgs);
    }
    Ok(out)
}

impl<T: Real> AlignedSamples<T> {
    pub fn len(&self) -> usize {
        self.joint_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_scores.is_empty()
    }

    /// Reconstructed joint structure of source `s` at retained iteration `t`.
    pub fn joint_structure(&self, t: usize, s: usize) -> DMatrix<T> {
        crate::linalg::factor_product(&self.joint_loadings[t][s], &self.joint_scores[t])
    }

    /// Reconstructed individual structure of source `s` at iteration `t`.
    pub fn indiv_structure(&self, t: usize, s: usize) -> DMatrix<T> {
        crate::linalg::factor_product(&self.indiv_loadings[t][s], &self.indiv_scores[t][s])
    }

    /// Linear predictor V* beta at iteration `t` (requires coefficients).
    pub fn linear_predictor(&self, t: usize) -> DVector<T> {
        let beta = self.coefficients[t].as_ref().expect("coefficients present");
        let n = self.joint_scores[t].nrows();
        let mut out = DVector::from_element(n, beta[0]);
        let r = self.joint_scores[t].ncols();
        if r > 0 {
            out += &self.joint_scores[t] * beta.rows(1, r).into_owned();
        }
        let mut off = 1 + r;
        for vs in &self.indiv_scores[t] {
            let r_s = vs.ncols();
            if r_s > 0 {
                out += vs * beta.rows(off, r_s).into_owned();
            }
            off += r_s;
        }
        out
    }
}
