//! Regularized least-squares identification of `(A, B)` from exploration
//! traces.
//!
//! Each actuator group `G_j` is fitted separately. Every step of every
//! exploration episode on group `j` contributes a regressor
//! `z_k = [x_k; u_k]` (dimension `n + m_Gj`) with target `x_{k+1}`, and the
//! ridge estimate solves
//! `min_Y lambda ||Y||_F^2 + sum_k ||x_{k+1} - Y z_k||^2`,
//! i.e. `Theta^ = S V^-1` with `V = lambda I + sum z z^T`, `S = sum x_{k+1} z^T`.
//! `A^` is read from group 0's estimate; the `B^` blocks come from each
//! group's own estimate.
//!
//! [`LseAccumulator`] maintains the sufficient statistics `(sum zz^T, sum xz^T)`
//! incrementally across epochs — the online loop absorbs traces as they
//! happen and refits at each epoch boundary. [`lse_fit`] is the batch
//! equivalent that assembles dense regressor matrices; the two agree to
//! roundoff and the tests pin that.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::SystemInstance;
use crate::sim::EpisodeTrace;

/// Ridge estimate for one actuator group.
#[derive(Debug, Clone)]
pub struct GroupEstimate {
    /// `Theta^ = [A^ | B^_Gj]`, shaped `n x (n + m_Gj)`.
    pub theta: DMatrix<f64>,
    /// Regularized Gram matrix `V = lambda I + sum z z^T`.
    pub gram: DMatrix<f64>,
    /// Number of regressor/target pairs absorbed.
    pub samples: usize,
}

/// A fitted model of the full system.
#[derive(Debug, Clone)]
pub struct Estimate {
    /// Epoch index this estimate was produced at (1-based).
    pub epoch: usize,
    /// Ridge weight used by the fit.
    pub lambda: f64,
    /// Estimated state matrix (from group 0's fit).
    pub a_hat: DMatrix<f64>,
    /// Estimated input matrix, all column blocks assembled in actuator order.
    pub b_hat: DMatrix<f64>,
    /// Per-group estimates in partition order.
    pub groups: Vec<GroupEstimate>,
}

/// Streaming sufficient statistics for the per-group ridge fits.
#[derive(Debug, Clone)]
pub struct LseAccumulator {
    state_dim: usize,
    group_widths: Vec<usize>,
    zz: Vec<DMatrix<f64>>,
    xz: Vec<DMatrix<f64>>,
    counts: Vec<usize>,
}

impl LseAccumulator {
    /// Empty accumulator for an instance's partition.
    pub fn new(instance: &SystemInstance) -> Self {
        let n = instance.state_dim();
        let group_widths: Vec<usize> = (0..instance.group_count())
            .map(|j| instance.subset_width(&instance.group_subset(j)))
            .collect();
        let zz = group_widths
            .iter()
            .map(|&mg| DMatrix::zeros(n + mg, n + mg))
            .collect();
        let xz = group_widths.iter().map(|&mg| DMatrix::zeros(n, n + mg)).collect();
        let counts = vec![0; group_widths.len()];
        LseAccumulator {
            state_dim: n,
            group_widths,
            zz,
            xz,
            counts,
        }
    }

    /// Absorb one exploration episode recorded on `group`.
    pub fn absorb(&mut self, group: usize, trace: &EpisodeTrace) -> Result<()> {
        if group >= self.group_widths.len() {
            return Err(Error::invalid(format!("group {group} out of range")));
        }
        let n = self.state_dim;
        let mg = self.group_widths[group];
        let steps = trace.stage_count();
        if steps == 0 {
            return Err(Error::invalid("trace has no steps"));
        }
        if trace.states[0].nrows() != n {
            return Err(Error::invalid("trace state dimension mismatch"));
        }
        if trace.inputs[0].nrows() != mg {
            return Err(Error::invalid(format!(
                "trace input width {} does not match group width {mg}",
                trace.inputs[0].nrows()
            )));
        }
        for k in 0..steps {
            let mut z = DMatrix::zeros(n + mg, 1);
            z.view_mut((0, 0), (n, 1)).copy_from(&trace.states[k]);
            z.view_mut((n, 0), (mg, 1)).copy_from(&trace.inputs[k]);
            self.zz[group] += &z * z.transpose();
            self.xz[group] += &trace.states[k + 1] * z.transpose();
        }
        self.counts[group] += steps;
        Ok(())
    }

    /// Regressor/target pairs absorbed so far for `group`.
    pub fn samples(&self, group: usize) -> usize {
        self.counts[group]
    }

    /// Solve the ridge normal equations for every group.
    ///
    /// Errors when `lambda <= 0` or some group has absorbed no data.
    pub fn fit(&self, lambda: f64, epoch: usize, instance: &SystemInstance) -> Result<Estimate> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("ridge weight must be positive, got {lambda}")));
        }
        let n = self.state_dim;
        let mut groups = Vec::with_capacity(self.group_widths.len());
        for (j, &mg) in self.group_widths.iter().enumerate() {
            if self.counts[j] == 0 {
                return Err(Error::invalid(format!(
                    "group {j} has no exploration data to fit"
                )));
            }
            let gram = &self.zz[j] + DMatrix::identity(n + mg, n + mg) * lambda;
            let chol = nalgebra::linalg::Cholesky::new(gram.clone()).ok_or_else(|| {
                Error::numerical(format!("regularized Gram matrix for group {j} not positive definite"))
            })?;
            // Theta^T solves V Theta^T = (sum x z^T)^T since V is symmetric.
            let theta = chol.solve(&self.xz[j].transpose()).transpose();
            groups.push(GroupEstimate {
                theta,
                gram,
                samples: self.counts[j],
            });
        }

        // Assemble A^ from group 0 and the B^ blocks from every group.
        let a_hat = groups[0].theta.columns(0, n).into_owned();
        let mut b_hat = DMatrix::zeros(n, instance.input_dim());
        let widths = instance.block_widths();
        let offsets: Vec<usize> = widths
            .iter()
            .scan(0usize, |acc, &w| {
                let o = *acc;
                *acc += w;
                Some(o)
            })
            .collect();
        for (j, group) in instance.partition().iter().enumerate() {
            let mut col_in_group = n;
            for &actuator in group {
                let w = widths[actuator];
                b_hat
                    .view_mut((0, offsets[actuator]), (n, w))
                    .copy_from(&groups[j].theta.columns(col_in_group, w));
                col_in_group += w;
            }
        }
        Ok(Estimate {
            epoch,
            lambda,
            a_hat,
            b_hat,
            groups,
        })
    }
}

/// Batch ridge fit over traces grouped by actuator group
/// (`traces_by_group[j]` holds every exploration episode recorded on group
/// `j`, across all epochs so far).
///
/// This path assembles the dense regressor matrix `Z` and target matrix `X`
/// per group and solves `Theta^ (lambda I + Z^T Z) = X^T Z`; it must agree
/// with the streaming accumulator to roundoff.
pub fn lse_fit(
    instance: &SystemInstance,
    traces_by_group: &[Vec<EpisodeTrace>],
    lambda: f64,
    epoch: usize,
) -> Result<Estimate> {
    if traces_by_group.len() != instance.group_count() {
        return Err(Error::invalid(format!(
            "expected traces for {} groups, got {}",
            instance.group_count(),
            traces_by_group.len()
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("ridge weight must be positive, got {lambda}")));
    }
    let n = instance.state_dim();
    let mut groups = Vec::with_capacity(traces_by_group.len());
    for (j, traces) in traces_by_group.iter().enumerate() {
        let mg = instance.subset_width(&instance.group_subset(j));
        let total: usize = traces.iter().map(|t| t.stage_count()).sum();
        if total == 0 {
            return Err(Error::invalid(format!("group {j} has no exploration data to fit")));
        }
        let mut z = DMatrix::zeros(total, n + mg);
        let mut x = DMatrix::zeros(total, n);
        let mut row = 0;
        for trace in traces {
            if trace.states[0].nrows() != n || trace.inputs[0].nrows() != mg {
                return Err(Error::invalid(format!("trace dimensions do not match group {j}")));
            }
            for k in 0..trace.stage_count() {
                z.view_mut((row, 0), (1, n)).copy_from(&trace.states[k].transpose());
                z.view_mut((row, n), (1, mg)).copy_from(&trace.inputs[k].transpose());
                x.view_mut((row, 0), (1, n))
                    .copy_from(&trace.states[k + 1].transpose());
                row += 1;
            }
        }
        let gram = DMatrix::identity(n + mg, n + mg) * lambda + z.transpose() * &z;
        let chol = nalgebra::linalg::Cholesky::new(gram.clone()).ok_or_else(|| {
            Error::numerical(format!("regularized Gram matrix for group {j} not positive definite"))
        })?;
        let s = x.transpose() * &z; // n x (n + mg)
        let theta = chol.solve(&s.transpose()).transpose();
        groups.push(GroupEstimate {
            theta,
            gram,
            samples: total,
        });
    }

    let a_hat = groups[0].theta.columns(0, n).into_owned();
    let mut b_hat = DMatrix::zeros(n, instance.input_dim());
    let widths = instance.block_widths();
    let offsets: Vec<usize> = widths
        .iter()
        .scan(0usize, |acc, &w| {
            let o = *acc;
            *acc += w;
            Some(o)
        })
        .collect();
    for (j, group) in instance.partition().iter().enumerate() {
        let mut col_in_group = n;
        for &actuator in group {
            let w = widths[actuator];
            b_hat
                .view_mut((0, offsets[actuator]), (n, w))
                .copy_from(&groups[j].theta.columns(col_in_group, w));
            col_in_group += w;
        }
    }
    Ok(Estimate {
        epoch,
        lambda,
        a_hat,
        b_hat,
        groups,
    })
}

/// Build the "estimate" an oracle would produce: the true `(A, B)` split
/// into per-group blocks, with `V = lambda I` and zero samples. Lets the
/// online loop run with identification errors switched off (diagnostics).
pub fn oracle_estimate(instance: &SystemInstance, lambda: f64, epoch: usize) -> Estimate {
    let n = instance.state_dim();
    let mut groups = Vec::with_capacity(instance.group_count());
    for j in 0..instance.group_count() {
        let subset = instance.group_subset(j);
        let mg = instance.subset_width(&subset);
        let mut theta = DMatrix::zeros(n, n + mg);
        theta.view_mut((0, 0), (n, n)).copy_from(instance.a());
        theta
            .view_mut((0, n), (n, mg))
            .copy_from(&instance.b_for_subset(&subset));
        groups.push(GroupEstimate {
            theta,
            gram: DMatrix::identity(n + mg, n + mg) * lambda,
            samples: 0,
        });
    }
    Estimate {
        epoch,
        lambda,
        a_hat: instance.a().clone(),
        b_hat: instance.b().clone(),
        groups,
    }
}

/// Identification error diagnostics for one group.
#[derive(Debug, Clone)]
pub struct GroupError {
    /// `||Theta^ - Theta||` (spectral).
    pub spectral: f64,
    /// `||Theta^ - Theta||_F`.
    pub frobenius: f64,
    /// `tr(Delta V Delta^T)` — the self-normalized error functional that the
    /// Gram matrix weights (equals `sum_k ||Delta z_k||^2 + lambda ||Delta||_F^2`).
    pub weighted_trace: f64,
}

/// Compare an estimate against the true instance, group by group.
pub fn estimation_error(estimate: &Estimate, instance: &SystemInstance) -> Result<Vec<GroupError>> {
    if estimate.groups.len() != instance.group_count() {
        return Err(Error::invalid("estimate and instance disagree on group count"));
    }
    let n = instance.state_dim();
    let mut out = Vec::with_capacity(estimate.groups.len());
    for (j, group) in estimate.groups.iter().enumerate() {
        let subset = instance.group_subset(j);
        let mg = instance.subset_width(&subset);
        if group.theta.nrows() != n || group.theta.ncols() != n + mg {
            return Err(Error::invalid(format!("estimate for group {j} has wrong shape")));
        }
        let mut truth = DMatrix::zeros(n, n + mg);
        truth.view_mut((0, 0), (n, n)).copy_from(instance.a());
        truth
            .view_mut((0, n), (n, mg))
            .copy_from(&instance.b_for_subset(&subset));
        let delta = &group.theta - truth;
        let weighted = (&delta * &group.gram * delta.transpose()).trace();
        out.push(GroupError {
            spectral: crate::linalg::spectral_norm(&delta),
            frobenius: delta.norm(),
            weighted_trace: weighted,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_random_instance, InstanceParams};
    use crate::rng::round_stream;
    use crate::sim::rollout_exploration;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn test_instance(seed: u64) -> SystemInstance {
        generate_random_instance(
            &InstanceParams {
                state_dim: 3,
                block_widths: vec![1; 4],
                budget: 2,
                spectral_radius: 0.95,
                sigma: 1.0,
            },
            seed,
        )
        .unwrap()
    }

    fn explore(instance: &SystemInstance, episodes: usize, n_steps: usize, seed: u64) -> Vec<Vec<EpisodeTrace>> {
        let mut by_group: Vec<Vec<EpisodeTrace>> = vec![Vec::new(); instance.group_count()];
        let mut round = 1;
        for rep in 0..episodes {
            for j in 0..instance.group_count() {
                let subset = instance.group_subset(j);
                let b_g = instance.b_for_subset(&subset);
                let trace = rollout_exploration(
                    instance.a(),
                    &b_g,
                    instance.stabilizing_gain(j),
                    instance.sigma(),
                    instance.kappa(),
                    n_steps,
                    &mut round_stream(seed, round),
                    round,
                    subset.indices().to_vec(),
                )
                .unwrap();
                by_group[j].push(trace);
                round += 1;
            }
            let _ = rep;
        }
        by_group
    }

    #[test]
    fn scalar_ridge_hand_case() {
        // One regressor z = [x; u] = [0; 1], target x_next = 2, lambda = 1:
        // V = I + zz^T = diag(1, 2), S = [0, 2], Theta = [0, 1].
        let instance = generate_random_instance(
            &InstanceParams {
                state_dim: 1,
                block_widths: vec![1],
                budget: 1,
                spectral_radius: 0.5,
                sigma: 1.0,
            },
            1,
        )
        .unwrap();
        let trace = EpisodeTrace {
            round: 1,
            actuators: vec![0],
            states: vec![DVector::from_element(1, 0.0), DVector::from_element(1, 2.0)],
            inputs: vec![DVector::from_element(1, 1.0)],
            process_noise: vec![DVector::from_element(1, 0.0)],
            exploration_noise: None,
        };
        let mut acc = LseAccumulator::new(&instance);
        acc.absorb(0, &trace).unwrap();
        let est = acc.fit(1.0, 1, &instance).unwrap();
        assert_relative_eq!(est.groups[0].theta[(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(est.groups[0].theta[(0, 1)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(est.a_hat[(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(est.b_hat[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normal_equation_residual_vanishes() {
        let instance = test_instance(3);
        let traces = explore(&instance, 6, 5, 11);
        let est = lse_fit(&instance, &traces, 1.0, 1).unwrap();
        for (j, group) in est.groups.iter().enumerate() {
            // Rebuild S = sum x z^T from the traces and check Theta V = S.
            let n = instance.state_dim();
            let mg = instance.subset_width(&instance.group_subset(j));
            let mut s = DMatrix::zeros(n, n + mg);
            for trace in &traces[j] {
                for k in 0..trace.stage_count() {
                    let mut z = DMatrix::zeros(n + mg, 1);
                    z.view_mut((0, 0), (n, 1)).copy_from(&trace.states[k]);
                    z.view_mut((n, 0), (mg, 1)).copy_from(&trace.inputs[k]);
                    s += &trace.states[k + 1] * z.transpose();
                }
            }
            let residual = (&group.theta * &group.gram - &s).norm();
            assert!(
                residual <= 1e-8 * (1.0 + s.norm()),
                "group {j} residual {residual}"
            );
        }
    }

    #[test]
    fn streaming_and_batch_fits_agree() {
        let instance = test_instance(4);
        let traces = explore(&instance, 5, 4, 23);
        let batch = lse_fit(&instance, &traces, 0.7, 2).unwrap();
        let mut acc = LseAccumulator::new(&instance);
        for (j, group_traces) in traces.iter().enumerate() {
            for t in group_traces {
                acc.absorb(j, t).unwrap();
            }
        }
        let streamed = acc.fit(0.7, 2, &instance).unwrap();
        for j in 0..instance.group_count() {
            let d = (&batch.groups[j].theta - &streamed.groups[j].theta).norm();
            assert!(
                d <= 1e-10 * (1.0 + batch.groups[j].theta.norm()),
                "group {j} disagreement {d}"
            );
        }
        assert!((batch.a_hat.clone() - streamed.a_hat).norm() <= 1e-10);
        assert!((batch.b_hat.clone() - streamed.b_hat).norm() <= 1e-10);
    }

    #[test]
    fn error_shrinks_with_more_data() {
        // Identification error after 16 episodes per group should not exceed
        // the error after 1 episode (median over a few seeds to damp luck).
        let instance = test_instance(5);
        let mut small_errs = Vec::new();
        let mut big_errs = Vec::new();
        for seed in 0..5 {
            let small = lse_fit(&instance, &explore(&instance, 1, 5, 100 + seed), 1.0, 1).unwrap();
            let big = lse_fit(&instance, &explore(&instance, 16, 5, 100 + seed), 1.0, 1).unwrap();
            let err = |est: &Estimate| {
                estimation_error(est, &instance)
                    .unwrap()
                    .iter()
                    .map(|g| g.spectral)
                    .fold(0.0f64, f64::max)
            };
            small_errs.push(err(&small));
            big_errs.push(err(&big));
        }
        small_errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        big_errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            big_errs[2] <= small_errs[2],
            "median error grew: {} -> {}",
            small_errs[2],
            big_errs[2]
        );
    }

    #[test]
    fn large_ridge_shrinks_the_estimate() {
        let instance = test_instance(6);
        let traces = explore(&instance, 3, 5, 31);
        let norms: Vec<f64> = [1.0, 1e3, 1e6]
            .iter()
            .map(|&lam| {
                lse_fit(&instance, &traces, lam, 1)
                    .unwrap()
                    .groups
                    .iter()
                    .map(|g| g.theta.norm())
                    .sum::<f64>()
            })
            .collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2]);
    }

    #[test]
    fn empty_group_and_bad_lambda_are_rejected() {
        let instance = test_instance(7);
        let mut traces = explore(&instance, 2, 4, 41);
        assert!(lse_fit(&instance, &traces, 0.0, 1).is_err());
        assert!(lse_fit(&instance, &traces, -1.0, 1).is_err());
        traces[1].clear();
        assert!(lse_fit(&instance, &traces, 1.0, 1).is_err());
        let acc = LseAccumulator::new(&instance);
        assert!(acc.fit(1.0, 1, &instance).is_err());
    }

    #[test]
    fn oracle_estimate_reproduces_truth() {
        let instance = test_instance(8);
        let est = oracle_estimate(&instance, 1.0, 1);
        assert_eq!(&est.a_hat, instance.a());
        assert_eq!(&est.b_hat, instance.b());
        let errs = estimation_error(&est, &instance).unwrap();
        for e in errs {
            assert!(e.spectral == 0.0 && e.frobenius == 0.0 && e.weighted_trace == 0.0);
        }
    }
}
