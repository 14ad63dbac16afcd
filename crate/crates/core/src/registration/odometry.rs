use super::{gicp_align, GicpParams, GicpResult, RegistrationCloud};
use crate::error::Result;
use crate::geometry::RigidTransform;

/// Outcome of registering one scan.
#[derive(Debug, Clone)]
pub struct ScanRegistration {
    /// Sensor pose in the world frame.
    pub pose: RigidTransform,
    /// Motion since the previous scan.
    pub delta: RigidTransform,
    pub scan_to_scan: Option<GicpResult>,
    /// Scan-to-submap result.
    pub scan_to_map: Option<GicpResult>,
}

/// Two-stage registration of the current (sensor-frame) scan.
///
/// Stage 1 aligns the scan to the previous scan starting from
/// `motion_prior` (the previous inter-frame motion). Stage 2 aligns it to the
/// world-frame submap, seeded with `prev_pose ∘ stage1`. Without a previous
/// scan the first scan bootstraps at the identity. A stage that fails to
/// converge falls back to its prior.
pub fn register_scan(
    scan: &RegistrationCloud,
    prev_scan: Option<&RegistrationCloud>,
    submap: Option<&RegistrationCloud>,
    prev_pose: &RigidTransform,
    motion_prior: &RigidTransform,
    p: &GicpParams,
) -> Result<ScanRegistration> {
    let Some(prev_scan) = prev_scan else {
        return Ok(ScanRegistration {
            pose: RigidTransform::identity(),
            delta: RigidTransform::identity(),
            scan_to_scan: None,
            scan_to_map: None,
        });
    };

    let s2s = gicp_align(scan, prev_scan, motion_prior, p)?;
    let delta = if s2s.converged {
        s2s.transform
    } else {
        log::warn!("scan-to-scan registration did not converge; using motion prior");
        *motion_prior
    };
    let guess = prev_pose.compose(&delta);

    let (pose, s2m) = match submap {
        Some(submap) => {
            let r = gicp_align(scan, submap, &guess, p)?;
            let pose = if r.converged {
                r.transform
            } else {
                log::warn!("scan-to-map registration did not converge; using scan-to-scan prior");
                guess
            };
            (pose, Some(r))
        }
        None => (guess, None),
    };
    Ok(ScanRegistration {
        pose,
        delta: prev_pose.inverse().compose(&pose),
        scan_to_scan: Some(s2s),
        scan_to_map: s2m,
    })
}
