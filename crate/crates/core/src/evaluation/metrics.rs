use crate::error::{Error, Result};

/// Number of distance thresholds on `[0, 2]` meters.
pub const PRECISION_THRESHOLDS: usize = 201;
/// Largest distance threshold, meters.
pub const PRECISION_MAX_DIST: f64 = 2.0;

/// Area under the IoU-threshold curve, 0–100.
///
/// For thresholds `τ ∈ [0, 1]` the fraction of frames with IoU above `τ`
/// integrates to the mean IoU, so this is `100 · mean(clamp(iou, 0, 1))`.
pub fn success(ious: &[f64]) -> Result<f64> {
    if ious.is_empty() {
        return Err(Error::UndefinedMetric("success of an empty IoU list"));
    }
    let sum: f64 = ious.iter().map(|v| v.clamp(0.0, 1.0)).sum();
    Ok(100.0 * sum / ious.len() as f64)
}

/// Area under the center-distance curve on `[0, 2]` m, 0–100: trapezoid rule
/// over 201 uniform thresholds of the fraction of frames with distance at
/// most the threshold, divided by the interval length.
pub fn precision(dists: &[f64]) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::UndefinedMetric("precision of an empty distance list"));
    }
    let last = PRECISION_THRESHOLDS - 1;
    // Trapezoid weights are 1/2 at both ends and 1 inside; doubling them keeps
    // the sum in integers, so a perfect track scores exactly 100.
    let mut weighted = 0usize;
    for j in 0..=last {
        let tau = PRECISION_MAX_DIST * j as f64 / last as f64;
        let hits = dists.iter().filter(|&&d| d <= tau).count();
        weighted += if j == 0 || j == last { hits } else { 2 * hits };
    }
    Ok(100.0 * weighted as f64 / (2 * last * dists.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn success_examples() {
        assert_eq!(success(&[1.0, 1.0, 1.0]).unwrap(), 100.0);
        assert_eq!(success(&[0.5]).unwrap(), 50.0);
        assert!(matches!(success(&[]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision(&[0.0, 0.0]).unwrap(), 100.0);
        assert_eq!(precision(&[5.0]).unwrap(), 0.0);
        // Distance 1 m: zero up to τ = 0.99, one from τ = 1.0.
        let p = precision(&[1.0]).unwrap();
        assert!((p - 50.0).abs() < 0.5 + 1e-9);
    }
}
