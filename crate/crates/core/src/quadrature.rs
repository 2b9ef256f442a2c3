//! Small numerical helpers: Gauss-Legendre panels and compensated sums.

/// 4-point Gauss-Legendre nodes on [-1, 1].
const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_85,
    0.652_145_154_862_546_2,
    0.652_145_154_862_546_2,
    0.347_854_845_137_453_85,
];

/// Integral of `g` over `[a, b]` with one 4-point Gauss-Legendre panel.
#[inline]
pub fn gauss_legendre4(g: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for k in 0..4 {
        acc += GL4_WEIGHTS[k] * g(mid + half * GL4_NODES[k]);
    }
    acc * half
}

/// Integral over `[a, b]` split into geometric panels of ratio at most `ratio`
/// (both endpoints positive), each integrated with [`gauss_legendre4`].
pub fn geometric_panels(g: impl Fn(f64) -> f64, a: f64, b: f64, ratio: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0 && ratio > 1.0);
    if a == b {
        return 0.0;
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let panels = ((hi / lo).ln() / ratio.ln()).ceil().max(1.0) as usize;
    let q = (hi / lo).powf(1.0 / panels as f64);
    let mut acc = 0.0;
    let mut left = lo;
    for k in 0..panels {
        let right = if k + 1 == panels { hi } else { left * q };
        acc += gauss_legendre4(&g, left, right);
        left = right;
    }
    sign * acc
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `ln(sum(exp(v)))`, ignoring `-inf` entries.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s = compensated_sum(values.iter().map(|v| (v - max).exp()));
    max + s.ln()
}
