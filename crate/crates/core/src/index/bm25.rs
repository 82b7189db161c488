//! BM25 weighting.
//!
//! score(t, d) = idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5)), never negative.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25<F> {
    pub k1: F,
    pub b: F,
}

impl<F: Scalar> Default for Bm25<F> {
    fn default() -> Self {
        Self {
            k1: F::lit(1.2),
            b: F::lit(0.75),
        }
    }
}

impl<F: Scalar> Bm25<F> {
    pub fn idf(&self, doc_count: usize, doc_freq: usize) -> F {
        let n = F::from_count(doc_count);
        let df = F::from_count(doc_freq);
        let half = F::lit(0.5);
        let idf = (F::one() + (n - df + half) / (df + half)).ln();
        idf.max(F::zero())
    }

    /// Saturated, length-normalized term frequency.
    pub fn tf_weight(&self, tf: F, doc_len: F, avg_len: F) -> F {
        let norm = if avg_len > F::zero() {
            F::one() - self.b + self.b * doc_len / avg_len
        } else {
            F::one()
        };
        tf * (self.k1 + F::one()) / (tf + self.k1 * norm)
    }

    pub fn score(&self, idf: F, tf: F, doc_len: F, avg_len: F) -> F {
        idf * self.tf_weight(tf, doc_len, avg_len)
    }
}
