//! Shared combinatorics: composition enumeration and log-multinomials.

/// Natural-log factorials 0..=n, built by compensated summation so the table
/// stays accurate enough for probability masses compared at 1e-12.
pub(crate) struct LnFactorials {
    table: Vec<f64>,
}

impl LnFactorials {
    pub(crate) fn up_to(n: usize) -> Self {
        let mut table = Vec::with_capacity(n + 1);
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        table.push(0.0);
        for k in 1..=n {
            let term = (k as f64).ln() - comp;
            let next = sum + term;
            comp = (next - sum) - term;
            sum = next;
            table.push(sum);
        }
        LnFactorials { table }
    }

    /// ln of the multinomial coefficient n! / prod(counts!).
    pub(crate) fn ln_multinomial(&self, n: usize, counts: &[usize]) -> f64 {
        debug_assert_eq!(counts.iter().sum::<usize>(), n);
        let mut v = self.table[n];
        for &c in counts {
            v -= self.table[c];
        }
        v
    }
}

/// Visits every vector of `parts` non-negative counts summing to `total`,
/// in lexicographically decreasing order of the leading coordinates.
pub(crate) fn for_each_composition(total: usize, parts: usize, mut f: impl FnMut(&[usize])) {
    assert!(parts >= 1);
    let mut counts = vec![0usize; parts];
    fill(&mut counts, 0, total, &mut f);
}

fn fill(counts: &mut [usize], idx: usize, remaining: usize, f: &mut impl FnMut(&[usize])) {
    if idx == counts.len() - 1 {
        counts[idx] = remaining;
        f(counts);
        return;
    }
    for c in (0..=remaining).rev() {
        counts[idx] = c;
        fill(counts, idx + 1, remaining - c, f);
    }
}

/// Number of compositions of `total` into `parts` parts, saturating.
pub(crate) fn composition_count(total: usize, parts: usize) -> u128 {
    // C(total + parts - 1, parts - 1)
    let k = (parts - 1) as u128;
    let n = total as u128 + k;
    let mut num: u128 = 1;
    for i in 0..k {
        num = match num.checked_mul(n - i) {
            Some(v) => v,
            None => return u128::MAX,
        };
        num /= i + 1;
    }
    num
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_factorial_small_values() {
        let t = LnFactorials::up_to(10);
        assert!((t.ln_multinomial(5, &[5]) - 0.0).abs() < 1e-15);
        assert!((t.ln_multinomial(5, &[0, 5]) - 0.0).abs() < 1e-15);
        assert!((t.ln_multinomial(10, &[1; 10]) - 3628800f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn multinomial_matches_binomial() {
        let t = LnFactorials::up_to(50);
        // C(50, 20)
        let got = t.ln_multinomial(50, &[20, 30]).exp();
        let expect = 47129212243960f64;
        assert!((got - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn compositions_enumerate_all() {
        let mut seen = Vec::new();
        for_each_composition(3, 2, |c| seen.push(c.to_vec()));
        assert_eq!(
            seen,
            vec![vec![3, 0], vec![2, 1], vec![1, 2], vec![0, 3]]
        );
        let mut count = 0usize;
        for_each_composition(5, 3, |_| count += 1);
        assert_eq!(count as u128, composition_count(5, 3));
        assert_eq!(composition_count(5, 3), 21);
    }
}
