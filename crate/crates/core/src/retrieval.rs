//! Diversity-aware k-MIPS over two embedding spaces.
//!
//! Relevance is measured in one space (`p_i` against the query `q`) and
//! redundancy in another (`p̂_i` against `p̂_j`). For a result set `S` of size
//! `k` the objective is
//!
//! ```text
//! f(S) = (λ/k) Σ_i <p_i, q>  -  (2μ(1-λ) / (k(k-1))) Σ_{i<j} <p̂_i, p̂_j>
//! ```
//!
//! with each unordered pair counted once. Greedy selection adds, at every
//! step, the candidate with the largest marginal gain in `f`, using the final
//! `k` in both normalizing constants.

use serde::{Deserialize, Serialize};

use crate::embedding::{self, BiasEmbedding};
use crate::encoder::Vector;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA_RETRIEVAL: f64 = 0.5;
/// Upper bound on subsets the exhaustive search will visit.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Vector in the diversity space.
#[derive(Debug, Clone, PartialEq)]
pub enum DiversityVector {
    Dense(Vector),
    Sparse(BiasEmbedding),
}

impl DiversityVector {
    pub fn inner(&self, other: &DiversityVector) -> Result<f64> {
        match (self, other) {
            (DiversityVector::Dense(a), DiversityVector::Dense(b)) => a.dot(b),
            (DiversityVector::Sparse(a), DiversityVector::Sparse(b)) => embedding::dot(a, b),
            _ => Err(Error::invalid("mixed dense and sparse diversity vectors")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSpaceItem {
    pub id: String,
    pub rel_vec: Vector,
    pub div_vec: DiversityVector,
    /// Ground-truth rating, used only by the Div metric.
    pub rating: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub lambda_retrieval: f64,
    pub mu: f64,
}

impl RetrievalConfig {
    pub fn new(k: usize, mu: f64) -> Self {
        RetrievalConfig {
            k,
            lambda_retrieval: DEFAULT_LAMBDA_RETRIEVAL,
            mu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda_retrieval) {
            return Err(Error::invalid(format!("lambda = {} outside [0, 1]", self.lambda_retrieval)));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::invalid(format!("mu = {} outside (0, 1)", self.mu)));
        }
        Ok(())
    }

    fn relevance_weight(&self) -> f64 {
        self.lambda_retrieval / self.k as f64
    }

    /// Coefficient on the unordered-pair sum; zero when `k = 1` (no pairs).
    fn diversity_weight(&self) -> f64 {
        if self.k < 2 {
            return 0.0;
        }
        let k = self.k as f64;
        2.0 * self.mu * (1.0 - self.lambda_retrieval) / (k * (k - 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    /// Pool positions in selection order.
    pub selected: Vec<usize>,
    pub ids: Vec<String>,
    /// Marginal gain of each pick (greedy only; empty for exhaustive search).
    pub gains: Vec<f64>,
    pub sim: f64,
    /// Mean pairwise rating difference; `None` when `k = 1`.
    pub div: Option<f64>,
    pub objective: f64,
}

/// Mean inner product of the set with the query: `(1/k) Σ <p_i, q>`.
pub fn sim(set: &[&DualSpaceItem], q: &Vector) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("sim of an empty set"));
    }
    let mut total = 0.0;
    for item in set {
        total += item.rel_vec.dot(q)?;
    }
    Ok(total / set.len() as f64)
}

/// Mean absolute rating difference over unordered pairs.
pub fn div(set: &[&DualSpaceItem]) -> Result<f64> {
    let k = set.len();
    if k < 2 {
        return Err(Error::invalid("div needs at least two items"));
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += (set[i].rating - set[j].rating).abs() as f64;
        }
    }
    Ok(2.0 * total / (k * (k - 1)) as f64)
}

/// Dual-space objective of a complete result set (`|S| = k`).
pub fn objective_f(set: &[&DualSpaceItem], q: &Vector, config: &RetrievalConfig) -> Result<f64> {
    config.validate()?;
    if set.len() != config.k {
        return Err(Error::invalid(format!("set has {} items, k = {}", set.len(), config.k)));
    }
    let mut relevance = 0.0;
    for item in set {
        relevance += item.rel_vec.dot(q)?;
    }
    let mut redundancy = 0.0;
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            redundancy += set[i].div_vec.inner(&set[j].div_vec)?;
        }
    }
    Ok(config.relevance_weight() * relevance - config.diversity_weight() * redundancy)
}

fn finish(pool: &[DualSpaceItem], q: &Vector, config: &RetrievalConfig, selected: Vec<usize>, gains: Vec<f64>) -> Result<RetrievalResult> {
    // score the set in pool order so equal sets get bit-identical values
    let mut canonical = selected.clone();
    canonical.sort_unstable();
    let set: Vec<&DualSpaceItem> = canonical.iter().map(|&i| &pool[i]).collect();
    let objective = objective_f(&set, q, config)?;
    let sim = sim(&set, q)?;
    let div = if set.len() >= 2 { Some(div(&set)?) } else { None };
    Ok(RetrievalResult {
        ids: selected.iter().map(|&i| pool[i].id.clone()).collect(),
        selected,
        gains,
        sim,
        div,
        objective,
    })
}

fn check_pool(pool: &[DualSpaceItem], q: &Vector, config: &RetrievalConfig) -> Result<()> {
    config.validate()?;
    if pool.len() < config.k {
        return Err(Error::invalid(format!("pool of {} items is smaller than k = {}", pool.len(), config.k)));
    }
    for item in pool {
        if item.rel_vec.dim() != q.dim() {
            return Err(Error::DimensionMismatch {
                expected: q.dim(),
                got: item.rel_vec.dim(),
            });
        }
    }
    Ok(())
}

/// Greedy maximization of [`objective_f`]. Ties go to the earlier pool item.
pub fn greedy_dkmips(pool: &[DualSpaceItem], q: &Vector, config: &RetrievalConfig) -> Result<RetrievalResult> {
    check_pool(pool, q, config)?;
    let rel_w = config.relevance_weight();
    let div_w = config.diversity_weight();
    let relevance: Vec<f64> = pool.iter().map(|p| p.rel_vec.dot(q)).collect::<Result<_>>()?;
    let mut redundancy = vec![0.0; pool.len()];
    let mut taken = vec![false; pool.len()];
    let mut selected = Vec::with_capacity(config.k);
    let mut gains = Vec::with_capacity(config.k);

    for _ in 0..config.k {
        let mut best: Option<(usize, f64)> = None;
        for (i, (&rel, &red)) in relevance.iter().zip(&redundancy).enumerate() {
            if taken[i] {
                continue;
            }
            let gain = rel_w * rel - div_w * red;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let (pick, gain) = best.expect("pool has at least k items");
        taken[pick] = true;
        selected.push(pick);
        gains.push(gain);
        if div_w != 0.0 {
            for i in 0..pool.len() {
                if !taken[i] {
                    redundancy[i] += pool[i].div_vec.inner(&pool[pick].div_vec)?;
                }
            }
        }
    }
    finish(pool, q, config, selected, gains)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > BRUTE_FORCE_LIMIT * 1000 {
            return c;
        }
    }
    c
}

/// Exhaustive maximization of [`objective_f`] over all k-subsets.
///
/// Among subsets with equal objective, the one whose sorted id list is
/// lexicographically smallest wins.
pub fn brute_force_dkmips(pool: &[DualSpaceItem], q: &Vector, config: &RetrievalConfig) -> Result<RetrievalResult> {
    check_pool(pool, q, config)?;
    let n = pool.len();
    let k = config.k;
    let count = binomial(n, k);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::invalid(format!(
            "C({n}, {k}) = {count} subsets exceeds {BRUTE_FORCE_LIMIT}; use a smaller instance"
        )));
    }

    let mut combo: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, Vec<&str>, Vec<usize>)> = None;
    loop {
        let set: Vec<&DualSpaceItem> = combo.iter().map(|&i| &pool[i]).collect();
        let f = objective_f(&set, q, config)?;
        let better = match &best {
            None => true,
            Some((bf, bids, _)) => {
                f > *bf || (f == *bf && {
                    let mut ids: Vec<&str> = set.iter().map(|p| p.id.as_str()).collect();
                    ids.sort_unstable();
                    ids < *bids
                })
            }
        };
        if better {
            let mut ids: Vec<&str> = set.iter().map(|p| p.id.as_str()).collect();
            ids.sort_unstable();
            best = Some((f, ids, combo.clone()));
        }

        // next combination in lexicographic order
        let mut i = k;
        while i > 0 && combo[i - 1] == n - k + (i - 1) {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        combo[i - 1] += 1;
        for j in i..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
    let (_, _, selected) = best.expect("at least one subset");
    finish(pool, q, config, selected, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, rel: Vec<f64>, div: Vec<f64>, rating: i64) -> DualSpaceItem {
        DualSpaceItem {
            id: id.into(),
            rel_vec: Vector::new(rel),
            div_vec: DiversityVector::Dense(Vector::new(div)),
            rating,
        }
    }

    #[test]
    fn sim_examples() {
        let q = Vector::new(vec![1.0, 0.0]);
        let a = item("a", vec![0.6, 0.3], vec![0.0], 0);
        let b = item("b", vec![0.4, -0.1], vec![0.0], 0);
        assert!((sim(&[&a, &b], &q).unwrap() - 0.5).abs() < 1e-15);
        let c = item("c", vec![0.7, 0.0], vec![0.0], 0);
        assert!((sim(&[&c, &c, &c], &q).unwrap() - 0.7).abs() < 1e-15);
        let o = item("o", vec![0.0, 1.0], vec![0.0], 0);
        assert_eq!(sim(&[&o], &q).unwrap(), 0.0);
        assert!(sim(&[], &q).is_err());
    }

    #[test]
    fn div_examples() {
        let r = |x| item("x", vec![0.0], vec![0.0], x);
        let (a, b) = (r(1), r(1));
        assert_eq!(div(&[&a, &b]).unwrap(), 0.0);
        let (a, b) = (r(-1), r(1));
        assert_eq!(div(&[&a, &b]).unwrap(), 2.0);
        let (a, b, c) = (r(-2), r(0), r(2));
        assert!((div(&[&a, &b, &c]).unwrap() - 8.0 / 3.0).abs() < 1e-15);
        assert!(div(&[&a]).is_err());
    }

    #[test]
    fn objective_example() {
        let q = Vector::new(vec![1.0]);
        let a = item("a", vec![1.0], vec![1.0], 0);
        let b = item("b", vec![1.0], vec![1.0], 0);
        let cfg = RetrievalConfig {
            k: 2,
            lambda_retrieval: 0.5,
            mu: 0.5,
        };
        assert!((objective_f(&[&a, &b], &q, &cfg).unwrap() - 0.25).abs() < 1e-15);
        assert!(objective_f(&[&a], &q, &cfg).is_err());
    }

    #[test]
    fn config_bounds() {
        assert!(RetrievalConfig::new(2, 0.0).validate().is_err());
        assert!(RetrievalConfig::new(2, 1.0).validate().is_err());
        assert!(RetrievalConfig::new(0, 0.5).validate().is_err());
        assert!(RetrievalConfig::new(1, 0.5).validate().is_ok());
    }

    #[test]
    fn k_one_is_plain_argmax() {
        let q = Vector::new(vec![1.0]);
        let pool = vec![
            item("a", vec![0.2], vec![1.0], 0),
            item("b", vec![0.9], vec![1.0], 1),
            item("c", vec![0.9], vec![1.0], 2),
        ];
        let r = greedy_dkmips(&pool, &q, &RetrievalConfig::new(1, 0.5)).unwrap();
        assert_eq!(r.ids, vec!["b"]);
        assert_eq!(r.div, None);
    }

    #[test]
    fn pool_too_small() {
        let q = Vector::new(vec![1.0]);
        let pool = vec![item("a", vec![0.2], vec![1.0], 0)];
        assert!(greedy_dkmips(&pool, &q, &RetrievalConfig::new(2, 0.5)).is_err());
        assert!(brute_force_dkmips(&pool, &q, &RetrievalConfig::new(2, 0.5)).is_err());
    }

    #[test]
    fn whole_pool_when_k_equals_size() {
        let q = Vector::new(vec![1.0]);
        let pool: Vec<_> = (0..4).map(|i| item(&format!("i{i}"), vec![i as f64], vec![1.0], 0)).collect();
        let r = brute_force_dkmips(&pool, &q, &RetrievalConfig::new(4, 0.5)).unwrap();
        assert_eq!(r.selected, vec![0, 1, 2, 3]);
    }

    #[test]
    fn combinatorial_guard() {
        let q = Vector::new(vec![1.0]);
        let pool: Vec<_> = (0..60).map(|i| item(&format!("i{i}"), vec![1.0], vec![1.0], 0)).collect();
        assert!(brute_force_dkmips(&pool, &q, &RetrievalConfig::new(10, 0.5)).is_err());
    }

    #[test]
    fn dominant_orthogonal_item_is_chosen() {
        // "star" has top relevance and is orthogonal to everything in div space,
        // so swapping it into any set raises relevance without adding redundancy.
        let q = Vector::new(vec![1.0]);
        let mut pool = vec![item("star", vec![1.0], vec![0.0, 0.0, 1.0], 0)];
        for i in 0..5 {
            pool.push(item(&format!("x{i}"), vec![0.5 - 0.05 * i as f64], vec![1.0, 0.1 * i as f64, 0.0], 0));
        }
        let r = brute_force_dkmips(&pool, &q, &RetrievalConfig::new(3, 0.6)).unwrap();
        assert!(r.ids.contains(&"star".to_string()));
    }
}
