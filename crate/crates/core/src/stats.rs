use serde::{Deserialize, Serialize};

/// z-value for a two-sided 95% normal interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Mean, sample variance and normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample variance (n − 1 denominator); 0 for a single sample.
    pub variance: f64,
    /// `None` with fewer than two samples.
    pub ci95_half_width: Option<f64>,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Self {
        let count = samples.len();
        if count == 0 {
            return Self { count, mean: f64::NAN, variance: 0.0, ci95_half_width: None };
        }
        let mean = samples.iter().sum::<f64>() / count as f64;
        if count == 1 {
            return Self { count, mean, variance: 0.0, ci95_half_width: None };
        }
        let variance = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        let half = Z95 * (variance / count as f64).sqrt();
        Self { count, mean, variance, ci95_half_width: Some(half) }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci95_half_width.unwrap_or(f64::INFINITY)
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95_half_width.unwrap_or(f64::INFINITY)
    }

    /// This interval lies strictly below `other`.
    pub fn strictly_below(&self, other: &Summary) -> bool {
        self.upper() < other.lower()
    }
}
