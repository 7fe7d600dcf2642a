use super::{ClientId, ClusterId};
use crate::error::Result;
use crate::model::{population_variance, LocalDataset, Mlp, ParamVector};

/// Expected counts below this are clamped in the chi-squared denominator
/// so absent classes never divide by zero.
pub const CHI2_MIN_EXPECTED: f64 = 0.5;

/// Chi-squared statistic of predicted counts against observed label counts.
pub fn chi_squared(predicted: &[u64], observed: &[u64]) -> f64 {
    predicted
        .iter()
        .zip(observed)
        .map(|(&fc, &fi)| {
            let diff = fc as f64 - fi as f64;
            diff * diff / (fi as f64).max(CHI2_MIN_EXPECTED)
        })
        .sum()
}

/// Chi-squared distance scaled by the variance of the soft-label means.
pub fn feedback_score(predicted: &[u64], observed: &[u64], soft: &[f64]) -> f64 {
    chi_squared(predicted, observed) * population_variance(soft)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    /// Training-sufficiency-corrected score used for ranking.
    pub score: f64,
    /// Raw chi-squared statistic, used for the significance gate.
    pub chi2: f64,
    pub soft_variance: f64,
}

/// How well `center` fits a client's local data.
pub fn compute_feedback(mlp: &Mlp, center: &ParamVector, data: &LocalDataset) -> Result<Feedback> {
    let dist = mlp.infer_distributions(center, data)?;
    let observed = data.label_histogram();
    let chi2 = chi_squared(&dist.hard, &observed);
    let soft_variance = dist.soft_variance();
    Ok(Feedback {
        score: chi2 * soft_variance,
        chi2,
        soft_variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackReport {
    pub client: ClientId,
    pub cluster: ClusterId,
    pub score: f64,
    pub chi2: f64,
    pub computed_at: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_histograms_score_zero() {
        assert_eq!(feedback_score(&[3, 7], &[3, 7], &[0.1, 0.9]), 0.0);
    }

    #[test]
    fn uniform_soft_labels_score_zero() {
        assert_eq!(feedback_score(&[10, 0], &[0, 10], &[0.5, 0.5]), 0.0);
    }

    #[test]
    fn worked_example() {
        // chi2 = (2^2 + 2^2) / 10 = 0.8; two-class soft labels 0.5 +- sqrt(0.02)
        let soft = [0.5 + 0.02f64.sqrt(), 0.5 - 0.02f64.sqrt()];
        assert!((population_variance(&soft) - 0.02).abs() < 1e-15);
        let g = feedback_score(&[12, 8], &[10, 10], &soft);
        assert!((g - 0.016).abs() < 1e-12, "{g}");
    }

    #[test]
    fn absent_class_uses_smoothing() {
        assert_eq!(chi_squared(&[1, 9], &[0, 10]), 1.0 / 0.5 + 1.0 / 10.0);
    }
}
