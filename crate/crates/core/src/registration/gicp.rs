//! Generalized ICP with Gauss–Newton steps on SE(3).
//!
//! For a correspondence `(i, j)` the cost is `dᵀ (C_t + R C_s Rᵀ)⁻¹ d` with
//! `d = p_t − (R p_s + t)`. Poses are updated by left increments
//! `(ω, v)`, see [`RigidTransform::perturbed`].

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};

use super::RegistrationCloud;
use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};
use crate::par;

const MAX_HALVINGS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GicpParams {
    pub max_iterations: usize,
    pub rotation_eps: f64,
    pub translation_eps: f64,
    pub max_correspondence_dist: f64,
    pub k_covariance: usize,
    pub voxel_leaf: f64,
}

impl Default for GicpParams {
    fn default() -> Self {
        Self {
            max_iterations: 64,
            rotation_eps: 1e-4,
            translation_eps: 1e-4,
            max_correspondence_dist: 1.0,
            k_covariance: 10,
            voxel_leaf: 0.35,
        }
    }
}

impl GicpParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.rotation_eps > 0.0
            && self.translation_eps > 0.0
            && self.max_correspondence_dist > 0.0
            && self.k_covariance >= 2
            && self.voxel_leaf > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "gicp parameters must be positive (k_covariance ≥ 2)".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GicpResult {
    pub transform: RigidTransform,
    /// Distance from each transformed source point to its nearest target
    /// point, capped at `max_correspondence_dist`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_cost: f64,
}

impl GicpResult {
    pub fn mean_residual(&self) -> f64 {
        if self.residuals.is_empty() {
            0.0
        } else {
            self.residuals.iter().sum::<f64>() / self.residuals.len() as f64
        }
    }
}

/// A fixed set of `(source index, target index)` pairs between two clouds.
#[derive(Debug, Clone)]
pub struct Correspondences<'a> {
    pub source: &'a RegistrationCloud,
    pub target: &'a RegistrationCloud,
    pub pairs: Vec<(usize, usize)>,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

struct Term {
    q: Vector3<f64>,
    d: Vector3<f64>,
    info: Matrix3<f64>,
    rotated_source_cov: Matrix3<f64>,
}

impl<'a> Correspondences<'a> {
    /// Nearest-neighbor pairs within `max_dist` at pose `t`.
    pub fn search(
        source: &'a RegistrationCloud,
        target: &'a RegistrationCloud,
        t: &RigidTransform,
        max_dist: f64,
    ) -> Self {
        let matched = par::map(source.points(), |p| {
            target.tree.nearest(&t.transform_point(p), max_dist).map(|(j, _)| j)
        });
        let pairs = matched
            .into_iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
            .collect();
        Self { source, target, pairs }
    }

    fn term(&self, k: usize, t: &RigidTransform) -> Option<Term> {
        let (i, j) = self.pairs[k];
        let q = t.transform_point(&self.source.points()[i]);
        let d = self.target.points()[j] - q;
        let rs = t.rotation * self.source.covariances[i] * t.rotation.transpose();
        let info = (self.target.covariances[j] + rs).try_inverse()?;
        Some(Term {
            q,
            d,
            info,
            rotated_source_cov: rs,
        })
    }

    /// Objective value at pose `t`.
    pub fn cost(&self, t: &RigidTransform) -> f64 {
        par::chunked_sum(
            self.pairs.len(),
            || 0.0,
            |acc, k| match self.term(k, t) {
                Some(term) => acc + term.d.dot(&(term.info * term.d)),
                None => acc,
            },
            |a, b| a + b,
        )
    }

    /// Exact gradient of [`Self::cost`] with respect to a left increment
    /// `(ω, v)` at `t`, including the rotation dependence of the combined
    /// covariance.
    pub fn gradient(&self, t: &RigidTransform) -> Vector6<f64> {
        par::chunked_sum(
            self.pairs.len(),
            Vector6::zeros,
            |mut acc, k| {
                if let Some(term) = self.term(k, t) {
                    let a = term.info * term.d;
                    let g_rot = 2.0 * (a.cross(&term.q) + a.cross(&(term.rotated_source_cov * a)));
                    let g_trans = -2.0 * a;
                    acc += Vector6::new(g_rot.x, g_rot.y, g_rot.z, g_trans.x, g_trans.y, g_trans.z);
                }
                acc
            },
            |a, b| a + b,
        )
    }

    /// Gauss–Newton normal equations `(H, b, cost)` at `t`, holding the
    /// combined covariances fixed.
    fn linearize(&self, t: &RigidTransform) -> (Matrix6<f64>, Vector6<f64>, f64) {
        par::chunked_sum(
            self.pairs.len(),
            || (Matrix6::zeros(), Vector6::zeros(), 0.0),
            |(mut h, mut b, mut c), k| {
                if let Some(term) = self.term(k, t) {
                    let mut j = Matrix3x6::zeros();
                    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&term.q));
                    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
                    let jt_info = j.transpose() * term.info;
                    h += jt_info * j;
                    b += jt_info * term.d;
                    c += term.d.dot(&(term.info * term.d));
                }
                (h, b, c)
            },
            |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2),
        )
    }

    /// One damped Gauss–Newton step from `t`. Returns the accepted pose, the
    /// cost before and after, and the applied increment. The step is halved
    /// until the cost does not increase; if no halving helps the pose is
    /// returned unchanged with a zero increment.
    pub fn gauss_newton_step(&self, t: &RigidTransform) -> Option<(RigidTransform, f64, f64, Vector6<f64>)> {
        let (h, b, cost) = self.linearize(t);
        let delta = h.cholesky().map(|c| c.solve(&(-b))).or_else(|| h.lu().solve(&(-b)))?;
        if !delta.iter().all(|x| x.is_finite()) {
            return None;
        }
        let mut scale = 1.0;
        for _ in 0..MAX_HALVINGS {
            let step = delta * scale;
            let candidate = t.perturbed(&step);
            let new_cost = self.cost(&candidate);
            if new_cost <= cost {
                return Some((candidate, cost, new_cost, step));
            }
            scale *= 0.5;
        }
        Some((*t, cost, cost, Vector6::zeros()))
    }
}

/// Aligns `source` onto `target` starting from `prior`.
///
/// Each iteration re-associates nearest neighbors within
/// `max_correspondence_dist` and takes one damped Gauss–Newton step. Stops
/// when the increment falls below `(rotation_eps, translation_eps)` or after
/// `max_iterations`. Failure to converge is reported in the result, not as
/// an error.
pub fn gicp_align(
    source: &RegistrationCloud,
    target: &RegistrationCloud,
    prior: &RigidTransform,
    p: &GicpParams,
) -> Result<GicpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut pose = *prior;
    let mut converged = false;
    let mut iterations = 0;
    let mut final_cost = 0.0;
    while iterations < p.max_iterations {
        iterations += 1;
        let corr = Correspondences::search(source, target, &pose, p.max_correspondence_dist);
        if corr.pairs.len() < 6 {
            break;
        }
        let Some((next, _, cost_after, step)) = corr.gauss_newton_step(&pose) else {
            break;
        };
        pose = next;
        final_cost = cost_after;
        let rot = Vector3::new(step[0], step[1], step[2]).norm();
        let trans = Vector3::new(step[3], step[4], step[5]).norm();
        if rot < p.rotation_eps && trans < p.translation_eps {
            converged = true;
            break;
        }
    }
    Ok(GicpResult {
        transform: pose,
        residuals: residuals(source, target, &pose, p.max_correspondence_dist),
        iterations,
        converged,
        final_cost,
    })
}

/// Nearest-neighbor distance of every transformed source point, capped.
pub fn residuals(source: &RegistrationCloud, target: &RegistrationCloud, pose: &RigidTransform, cap: f64) -> Vec<f64> {
    point_residuals(source.points(), target, pose, cap)
}

/// [`residuals`] for bare points.
pub fn point_residuals(points: &[Point3], target: &RegistrationCloud, pose: &RigidTransform, cap: f64) -> Vec<f64> {
    par::map(points, |p| {
        target
            .tree
            .nearest(&pose.transform_point(p), cap)
            .map_or(cap, |(_, d2)| d2.sqrt().min(cap))
    })
}
