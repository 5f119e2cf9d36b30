use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("n must be a positive odd integer, got {0}")]
    EvenOrZero(usize),
    #[error("q must lie in [0, 1], got {0}")]
    Probability(f64),
}

/// Probability that a strict majority of `n` independent views is correct
/// when each is correct with probability `q`:
/// Σ_{j=⌈n/2⌉}^{n} C(n,j) q^j (1−q)^{n−j}.
///
/// Evaluated in exact rational arithmetic (on the exact binary value of `q`)
/// and rounded once at the end.
pub fn binomial_majority_oracle(q: f64, n: usize) -> Result<f64, OracleError> {
    if n == 0 || n.is_multiple_of(2) {
        return Err(OracleError::EvenOrZero(n));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(OracleError::Probability(q));
    }
    let p = BigRational::from_float(q).ok_or(OracleError::Probability(q))?;
    let miss = BigRational::one() - &p;
    let mut total = BigRational::zero();
    let mut binom = BigInt::one(); // C(n, 0)
    for j in 0..=n {
        if j > n / 2 {
            total += BigRational::from_integer(binom.clone()) * pow(&p, j) * pow(&miss, n - j);
        }
        binom = binom * BigInt::from(n - j) / BigInt::from(j + 1);
    }
    Ok(total.to_f64().expect("finite probability"))
}

fn pow(base: &BigRational, exp: usize) -> BigRational {
    (0..exp).fold(BigRational::one(), |acc, _| acc * base)
}
