use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
}

impl ChiSquaredTest {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value >= significance
    }
}

/// Goodness of fit of `values` to the discrete uniform distribution on
/// `0..=max`, using `bins` equal-width bins.
pub fn chi_squared_uniformity(values: &[u32], max: u32, bins: usize) -> ChiSquaredTest {
    assert!(bins >= 2 && !values.is_empty());
    let span = u64::from(max) + 1;
    let bins = bins.min(span as usize);
    let mut observed = vec![0u64; bins];
    for &v in values {
        observed[(u64::from(v) * bins as u64 / span) as usize] += 1;
    }
    let n = values.len() as f64;
    let statistic = observed
        .iter()
        .enumerate()
        .map(|(i, &o)| {
            // Integer bin widths differ by at most one value.
            let lo = (i as u64 * span).div_ceil(bins as u64);
            let hi = ((i as u64 + 1) * span).div_ceil(bins as u64);
            let expected = n * (hi - lo) as f64 / span as f64;
            (o as f64 - expected).powi(2) / expected
        })
        .sum();
    let dof = (bins - 1) as f64;
    let p_value = ChiSquared::new(dof).expect("positive dof").sf(statistic);
    ChiSquaredTest {
        statistic,
        degrees_of_freedom: dof,
        p_value,
    }
}

/// Mean and relative standard deviation.
pub fn mean_and_rel_spread(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 || mean == 0.0 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt() / mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfectly_uniform_passes() {
        let values: Vec<u32> = (0..10_000).map(|i| i % 100).collect();
        let t = chi_squared_uniformity(&values, 99, 20);
        assert_eq!(t.statistic, 0.0);
        assert!(t.passes(0.01));
    }

    #[test]
    fn skewed_fails() {
        let values: Vec<u32> = (0..10_000).map(|i| (i % 100) / 2).collect();
        assert!(!chi_squared_uniformity(&values, 99, 20).passes(0.01));
    }

    #[test]
    fn spread() {
        let (m, r) = mean_and_rel_spread(&[9.0, 10.0, 11.0]);
        assert_eq!(m, 10.0);
        assert!((r - 0.1).abs() < 1e-12);
    }
}
