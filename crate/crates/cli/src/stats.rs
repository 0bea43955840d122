/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`); the error is 0 for fewer than two values.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

pub fn mean_sem(values: &[f64]) -> MeanSem {
    let n = values.len();
    if n == 0 {
        return MeanSem { mean: f64::NAN, sem: f64::NAN, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sem = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    MeanSem { mean, sem, n }
}
