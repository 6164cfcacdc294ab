//! Equal-frequency binning shared by the complexity and KQI labelers.

/// Upper edges of the first `n_classes - 1` equal-frequency groups of
/// `values`. Group `k` ends at sorted rank `ceil((k+1)·n / n_classes) − 1`.
pub(crate) fn quantile_thresholds(values: &[f64], n_classes: usize) -> Vec<f64> {
    assert!(n_classes >= 2);
    if values.is_empty() {
        return vec![f64::INFINITY; n_classes - 1];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (1..n_classes)
        .map(|k| {
            let rank = (k * n).div_ceil(n_classes).max(1) - 1;
            sorted[rank]
        })
        .collect()
}

/// Number of thresholds strictly below `value`; a value equal to a
/// threshold lands in the lower class.
pub(crate) fn bin(value: f64, thresholds: &[f64]) -> usize {
    thresholds.iter().filter(|&&t| t < value).count()
}
