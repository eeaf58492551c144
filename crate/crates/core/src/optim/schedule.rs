use crate::scalar::Scalar;

/// Cosine decay from `start` at `t = 0` to `end` at `t = total`.
pub fn cosine_alpha<T: Scalar>(t: usize, total: usize, start: T, end: T) -> T {
    let total = total.max(1);
    let frac = T::lit(t.min(total) as f64 / total as f64);
    end + (start - end) * (T::one() + (T::PI() * frac).cos()) / T::lit(2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(cosine_alpha(0, 100, 0.4, 0.08), 0.4);
        assert!((cosine_alpha(100, 100, 0.4f64, 0.08) - 0.08).abs() < 1e-15);
        assert!((cosine_alpha(50, 100, 0.4f64, 0.08) - 0.24).abs() < 1e-15);
    }

    #[test]
    fn monotone_decreasing() {
        let a: Vec<f64> = (0..=40).map(|t| cosine_alpha(t, 40, 0.4, 0.08)).collect();
        assert!(a.windows(2).all(|w| w[1] <= w[0]));
    }
}
