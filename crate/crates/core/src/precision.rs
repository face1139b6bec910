//! Latent prior precision assembly: Q(theta) as a block-diagonal matrix plus
//! the off-diagonal coupling induced by copy-scaled blocks.

use crate::error::{Error, Result};
use crate::model::{BlockKind, LatentModel};
use crate::priors;
use nalgebra::DMatrix;

/// Jitter added to the diagonal of intrinsic (rank-deficient) structures so
/// the joint precision stays factorisable; the sum-to-zero correction removes
/// its influence from reported marginals.
pub const INTRINSIC_JITTER: f64 = 1e-5;

/// Precision applied to the copy residual x_copy - gamma * x_source. Large
/// enough that the copy is numerically exact, small enough not to wreck the
/// Cholesky conditioning.
pub const COPY_PRECISION: f64 = 1.202604284164777e6; // exp(14)

/// First-difference structure matrix (rw1), before scaling by the precision.
pub fn rw1_structure(size: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(size, size);
    for i in 0..size.saturating_sub(1) {
        m[(i, i)] += 1.0;
        m[(i + 1, i + 1)] += 1.0;
        m[(i, i + 1)] -= 1.0;
        m[(i + 1, i)] -= 1.0;
    }
    m
}

/// Second-difference structure matrix (rw2).
pub fn rw2_structure(size: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(size, size);
    for i in 0..size.saturating_sub(2) {
        // Outer product of the stencil (1, -2, 1) at offset i.
        let stencil = [1.0, -2.0, 1.0];
        for (a, &sa) in stencil.iter().enumerate() {
            for (b, &sb) in stencil.iter().enumerate() {
                m[(i + a, i + b)] += sa * sb;
            }
        }
    }
    m
}

/// Build the joint latent prior precision Q(theta).
pub fn build_precision(model: &LatentModel, theta: &[f64]) -> Result<DMatrix<f64>> {
    let n = model.latent_dim();
    let mut q = DMatrix::zeros(n, n);
    for (bi, block) in model.blocks.iter().enumerate() {
        let off = model.block_offset(bi);
        let s = block.size;
        match &block.kind {
            BlockKind::FixedEffect { precision } => {
                for i in 0..s {
                    q[(off + i, off + i)] += precision;
                }
            }
            BlockKind::IidRandom { prec_hyper } => {
                let tau = theta[*prec_hyper].exp();
                for i in 0..s {
                    q[(off + i, off + i)] += tau;
                }
            }
            BlockKind::Rw1 { prec_hyper } => {
                let tau = theta[*prec_hyper].exp();
                let st = rw1_structure(s);
                for i in 0..s {
                    for j in 0..s {
                        q[(off + i, off + j)] += tau * st[(i, j)];
                    }
                    q[(off + i, off + i)] += INTRINSIC_JITTER;
                }
            }
            BlockKind::Rw2 { prec_hyper } => {
                let tau = theta[*prec_hyper].exp();
                let st = rw2_structure(s);
                for i in 0..s {
                    for j in 0..s {
                        q[(off + i, off + j)] += tau * st[(i, j)];
                    }
                    q[(off + i, off + i)] += INTRINSIC_JITTER;
                }
            }
            BlockKind::CopyScaled { source, scale_hyper } => {
                // Penalise (x_copy - gamma x_src)^2 with precision kappa:
                // adds kappa on the copy diagonal, kappa gamma^2 on the
                // source diagonal, -kappa gamma on the cross terms.
                let gamma = theta[*scale_hyper];
                let soff = model.block_offset(*source);
                for i in 0..s {
                    let c = off + i;
                    let sidx = soff + i;
                    q[(c, c)] += COPY_PRECISION;
                    q[(sidx, sidx)] += COPY_PRECISION * gamma * gamma;
                    q[(c, sidx)] -= COPY_PRECISION * gamma;
                    q[(sidx, c)] -= COPY_PRECISION * gamma;
                }
            }
            BlockKind::CorrelatedRe { dim, hypers } => {
                let sub: Vec<f64> = hypers.iter().map(|&h| theta[h]).collect();
                let sigma = priors::re_covariance(*dim, &sub);
                let prec = sigma.clone().try_inverse().ok_or_else(|| {
                    Error::IndefiniteHessian(format!(
                        "RE covariance of block '{}' is singular",
                        block.name
                    ))
                })?;
                let groups = s / dim;
                for g in 0..groups {
                    let base = off + g * dim;
                    for a in 0..*dim {
                        for b in 0..*dim {
                            q[(base + a, base + b)] += prec[(a, b)];
                        }
                    }
                }
            }
        }
    }
    Ok(q)
}

/// Sum-to-zero constraint matrix B (k x n): one row per constrained block,
/// ones over the block's coordinates. Returns None when unconstrained.
pub fn constraint_matrix(model: &LatentModel) -> Option<DMatrix<f64>> {
    let constrained: Vec<usize> = model
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.sum_to_zero)
        .map(|(i, _)| i)
        .collect();
    if constrained.is_empty() {
        return None;
    }
    let n = model.latent_dim();
    let mut b = DMatrix::zeros(constrained.len(), n);
    for (row, &bi) in constrained.iter().enumerate() {
        for col in model.block_range(bi) {
            b[(row, col)] = 1.0;
        }
    }
    Some(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HyperDecl, HyperRole, InternalScale, LatentBlock};
    use crate::priors::PriorSpec;
    use approx::assert_relative_eq;

    fn prec_hyper(name: &str) -> HyperDecl {
        HyperDecl {
            name: name.into(),
            scale: InternalScale::LogPrecision,
            prior: Some(PriorSpec::PcPrecision { u: 0.5, alpha: 0.01 }),
            role: HyperRole::BlockPrecision,
        }
    }

    #[test]
    fn rw1_structure_size3() {
        let st = rw1_structure(3);
        let expect = [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(st[(i, j)], expect[i][j]);
            }
        }
    }

    #[test]
    fn rw1_block_matches_structure_times_tau_plus_jitter() {
        let model = LatentModel::new(
            vec![LatentBlock {
                name: "baseline".into(),
                kind: BlockKind::Rw1 { prec_hyper: 0 },
                size: 3,
                sum_to_zero: true,
            }],
            vec![prec_hyper("baseline precision")],
            vec![],
        );
        let theta = [0.7];
        let q = build_precision(&model, &theta).unwrap();
        let tau = theta[0].exp();
        let st = rw1_structure(3);
        for i in 0..3 {
            for j in 0..3 {
                let jit = if i == j { INTRINSIC_JITTER } else { 0.0 };
                assert_relative_eq!(q[(i, j)], tau * st[(i, j)] + jit, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fixed_effect_block_is_diagonal() {
        let model = LatentModel::new(
            vec![LatentBlock {
                name: "beta".into(),
                kind: BlockKind::FixedEffect { precision: 0.01 },
                size: 4,
                sum_to_zero: false,
            }],
            vec![],
            vec![],
        );
        let q = build_precision(&model, &[]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.01 } else { 0.0 };
                assert_eq!(q[(i, j)], want);
            }
        }
    }

    #[test]
    fn rw2_structure_has_rank_size_minus_two() {
        // Without jitter the rw2 structure on 5 points annihilates
        // constants and linear trends and nothing else.
        let st = rw2_structure(5);
        let eig = st.symmetric_eigenvalues();
        let mut vals: Vec<f64> = eig.iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(vals[0].abs() < 1e-10);
        assert!(vals[1].abs() < 1e-10);
        assert!(vals[2] > 1e-6);
        // Check the null space directly.
        let ones = nalgebra::DVector::from_element(5, 1.0);
        let lin = nalgebra::DVector::from_iterator(5, (0..5).map(|i| i as f64));
        assert!((&st * ones).norm() < 1e-12);
        assert!((&st * lin).norm() < 1e-12);
    }

    #[test]
    fn copy_scaled_coupling() {
        let model = LatentModel::new(
            vec![
                LatentBlock {
                    name: "src".into(),
                    kind: BlockKind::IidRandom { prec_hyper: 0 },
                    size: 2,
                    sum_to_zero: false,
                },
                LatentBlock {
                    name: "copy".into(),
                    kind: BlockKind::CopyScaled { source: 0, scale_hyper: 1 },
                    size: 2,
                    sum_to_zero: false,
                },
            ],
            vec![
                prec_hyper("src precision"),
                HyperDecl {
                    name: "gamma".into(),
                    scale: InternalScale::Identity,
                    prior: Some(PriorSpec::Normal { mean: 0.0, precision: 0.01 }),
                    role: HyperRole::Association,
                },
            ],
            vec![],
        );
        let theta = [0.0, 0.8];
        let q = build_precision(&model, &theta).unwrap();
        let k = COPY_PRECISION;
        assert_relative_eq!(q[(2, 2)], k, epsilon = 1e-9);
        assert_relative_eq!(q[(0, 0)], 1.0 + k * 0.64, max_relative = 1e-12);
        assert_relative_eq!(q[(0, 2)], -k * 0.8, max_relative = 1e-12);
        assert_relative_eq!(q[(2, 0)], -k * 0.8, max_relative = 1e-12);
        // A draw with the copy relation satisfied has zero penalty energy:
        // quadratic form reduces to the source's own precision part.
        let x = nalgebra::DVector::from_vec(vec![1.0, -0.5, 0.8, -0.4]);
        let energy = (x.transpose() * &q * &x)[(0, 0)];
        assert_relative_eq!(energy, 1.0 + 0.25, epsilon = 1e-6);
    }

    #[test]
    fn correlated_re_kron_layout() {
        let model = LatentModel::new(
            vec![LatentBlock {
                name: "re".into(),
                kind: BlockKind::CorrelatedRe { dim: 2, hypers: vec![0, 1, 2] },
                size: 6,
                sum_to_zero: false,
            }],
            vec![
                prec_hyper("t1"),
                prec_hyper("t2"),
                HyperDecl {
                    name: "rho".into(),
                    scale: InternalScale::FisherZ,
                    prior: None,
                    role: HyperRole::ReMatrixComponent,
                },
            ],
            vec![],
        );
        let theta = [0.3, -0.2, 0.4];
        let q = build_precision(&model, &theta).unwrap();
        let sigma = priors::re_covariance(2, &theta);
        let prec = sigma.try_inverse().unwrap();
        for g in 0..3 {
            for a in 0..2 {
                for b in 0..2 {
                    assert_relative_eq!(
                        q[(2 * g + a, 2 * g + b)],
                        prec[(a, b)],
                        max_relative = 1e-12
                    );
                }
            }
        }
        // No coupling across groups.
        assert_eq!(q[(0, 2)], 0.0);
        assert_eq!(q[(1, 4)], 0.0);
    }

    #[test]
    fn constraint_matrix_rows() {
        let model = LatentModel::new(
            vec![
                LatentBlock {
                    name: "beta".into(),
                    kind: BlockKind::FixedEffect { precision: 0.01 },
                    size: 2,
                    sum_to_zero: false,
                },
                LatentBlock {
                    name: "baseline".into(),
                    kind: BlockKind::Rw1 { prec_hyper: 0 },
                    size: 3,
                    sum_to_zero: true,
                },
            ],
            vec![prec_hyper("p")],
            vec![],
        );
        let b = constraint_matrix(&model).unwrap();
        assert_eq!(b.nrows(), 1);
        assert_eq!(b.ncols(), 5);
        assert_eq!(b.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 1.0, 1.0]);
    }
}
