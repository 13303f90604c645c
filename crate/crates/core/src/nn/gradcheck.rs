use super::ParamSet;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct ArrayCheck {
    pub name: String,
    /// `‖analytic − numeric‖₂ / (‖analytic‖₂ + ‖numeric‖₂)`.
    pub relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub arrays: Vec<ArrayCheck>,
    pub max_relative_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failing(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().filter(|a| !a.passed).map(|a| a.name.as_str())
    }
}

/// Compares the analytic gradient returned by `f` with central differences
/// of its value at step `h`, per named array.
pub fn grad_check<F>(f: F, params: &ParamSet, h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(f64, ParamSet)>,
{
    let (_, analytic) = f(params)?;
    let mut probe = params.clone();
    let mut arrays = Vec::new();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let Some(a) = analytic.get(&name) else { continue };
        let n = a.len();
        let mut numeric = Vec::with_capacity(n);
        for k in 0..n {
            let original = probe.get(&name).expect("present").data()[k];
            probe.get_mut(&name).expect("present").data_mut()[k] = original + h;
            let (up, _) = f(&probe)?;
            probe.get_mut(&name).expect("present").data_mut()[k] = original - h;
            let (down, _) = f(&probe)?;
            probe.get_mut(&name).expect("present").data_mut()[k] = original;
            numeric.push((up - down) / (2.0 * h));
        }
        let diff: f64 = a
            .data()
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = a.data().iter().map(|x| x * x).sum::<f64>().sqrt()
            + numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let relative_error = if scale < 1e-12 { diff } else { diff / scale };
        arrays.push(ArrayCheck {
            name,
            relative_error,
            passed: relative_error < tolerance,
        });
    }
    let max_relative_error = arrays.iter().map(|a| a.relative_error).fold(0.0, f64::max);
    let passed = arrays.iter().all(|a| a.passed);
    Ok(GradCheckReport {
        arrays,
        max_relative_error,
        passed,
    })
}
