use crate::error::{FwiError, Result};
use crate::fields::ScalarField;

/// Nodewise gradient magnitude of a field and the mean of the values above
/// a threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Sharpness {
    pub norm: ScalarField,
    /// 0 when no node exceeds the threshold.
    pub mean_above: f64,
    pub count_above: usize,
}

impl Sharpness {
    pub fn is_empty(&self) -> bool {
        self.count_above == 0
    }

    pub fn peak(&self) -> f64 {
        self.norm.max_abs()
    }
}

/// `sqrt(Σ_d (∂_d γ)²)` with central differences inside and one-sided ones
/// on the boundary.
pub fn gradient_norm(field: &ScalarField) -> ScalarField {
    let grid = field.grid();
    let u = field.values();
    let mut sq = vec![0.0; u.len()];
    for axis in 0..grid.ndim() {
        let s = grid.strides()[axis];
        let n = grid.dims()[axis];
        let h = grid.spacing()[axis];
        for (i, acc) in sq.iter_mut().enumerate() {
            let c = (i / s) % n;
            let d = if c == 0 {
                (u[i + s] - u[i]) / h
            } else if c == n - 1 {
                (u[i] - u[i - s]) / h
            } else {
                (u[i + s] - u[i - s]) / (2.0 * h)
            };
            *acc += d * d;
        }
    }
    let values = sq.into_iter().map(f64::sqrt).collect();
    ScalarField::new(grid.clone(), values).expect("same grid")
}

pub fn sharpness_metric(field: &ScalarField, threshold: f64) -> Result<Sharpness> {
    if !(threshold > 0.0) {
        return Err(FwiError::param("threshold", format!("must be positive, got {threshold}")));
    }
    let norm = gradient_norm(field);
    let above: Vec<f64> = norm.values().iter().copied().filter(|&v| v > threshold).collect();
    let mean_above = if above.is_empty() {
        0.0
    } else {
        above.iter().sum::<f64>() / above.len() as f64
    };
    Ok(Sharpness {
        norm,
        mean_above,
        count_above: above.len(),
    })
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // ties share the mean rank
        let mean = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            r[k] = mean;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation.
pub fn rank_correlation(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
