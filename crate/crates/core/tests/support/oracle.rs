//! Brute-force reference implementations, written from the formulas alone.
//! Everything here works on flat vectors and linear scans.

#![allow(dead_code)]

use std::collections::HashSet;

#[derive(Debug, Clone)]
pub struct Claim {
    pub source: String,
    pub value: u64,
    pub xi: f64,
    pub r: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Round {
    /// (source, value, IS) with IS > 0 after pruning.
    pub is: Vec<(String, u64, f64)>,
    /// (value, D)
    pub d: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct Reference {
    pub p: Vec<(u64, f64)>,
    pub history: Vec<Round>,
    pub estimate: Option<u64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn lookup<K: PartialEq>(pairs: &[(K, f64)], key: &K) -> Option<f64> {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
}

pub fn reliability(history: &[Round], source: &str) -> f64 {
    let mut outputs: Vec<u64> = Vec::new();
    for round in history {
        for (i, k, _) in &round.is {
            if i == source && !outputs.contains(k) {
                outputs.push(*k);
            }
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for round in history {
        if !round.is.iter().any(|(i, _, _)| i == source) {
            continue;
        }
        for k in &outputs {
            let is = round
                .is
                .iter()
                .find(|(i, v, _)| i == source && v == k)
                .map(|t| t.2)
                .unwrap_or(0.0);
            let d = lookup(&round.d, k).unwrap_or(0.5);
            if is > 0.0 {
                num += d;
            } else {
                num += 1.0 - d;
            }
            den += is.abs();
        }
    }
    (num / (den + 1e-6)).clamp(0.0, 1.0)
}

impl Reference {
    pub fn step(&mut self, claims: &[Claim]) {
        if claims.is_empty() {
            return;
        }
        // IS per (source, value)
        let mut is: Vec<(String, u64, f64)> = Vec::new();
        for c in claims {
            let x = c.xi * c.r * c.rho;
            match is.iter_mut().find(|(i, k, _)| *i == c.source && *k == c.value) {
                Some(e) => e.2 += x,
                None => is.push((c.source.clone(), c.value, x)),
            }
        }
        let max = is.iter().map(|e| e.2).fold(0.0, f64::max);
        let nis = |x: f64| if max > 0.0 { x / max } else { 0.0 };

        // bounds from the previous distribution
        let bound = |k: u64| -> Option<f64> {
            if self.p.is_empty() {
                None
            } else {
                Some(self.p.iter().filter(|(j, _)| *j <= k).map(|(_, p)| *p).fold(0.0, f64::max))
            }
        };
        let kept: Vec<(String, u64, f64)> = is
            .into_iter()
            .filter(|(_, k, x)| *x > 0.0 && bound(*k).is_none_or(|b| b > 0.0))
            .collect();

        let mut values: Vec<u64> = kept.iter().map(|e| e.1).collect();
        values.sort();
        values.dedup();
        let d: Vec<(u64, f64)> = values
            .iter()
            .map(|k| (*k, sigmoid(kept.iter().filter(|e| e.1 == *k).map(|e| e.2).sum())))
            .collect();

        let first = self.history.is_empty();
        if !kept.is_empty() {
            self.history.push(Round { is: kept.clone(), d });
        }

        let mut raw: Vec<(u64, f64)> = Vec::new();
        for k in &values {
            let mut total = 0.0;
            for (i, v, x) in &kept {
                if v == k {
                    let s = if first { 1.0 } else { reliability(&self.history, i) };
                    total += s * nis(*x);
                }
            }
            if total > 0.0 {
                raw.push((*k, total));
            }
        }
        let sum: f64 = raw.iter().map(|e| e.1).sum();
        if sum <= 0.0 {
            return;
        }
        let bounds: Vec<f64> = raw.iter().map(|(k, _)| bound(*k).unwrap_or(f64::INFINITY)).collect();
        let p: Vec<(u64, f64)> = raw
            .iter()
            .map(|e| e.0)
            .zip(capped_scaling(&raw.iter().map(|e| e.1 / sum).collect::<Vec<_>>(), &bounds))
            .collect();
        let mut best: Option<(u64, f64)> = None;
        for (k, v) in &p {
            match best {
                Some((bk, bv)) if *v < bv || (*v == bv && *k < bk) => {}
                _ => best = Some((*k, *v)),
            }
        }
        self.estimate = best.map(|b| b.0);
        self.p = p;
    }
}

/// Finds λ with Σ min(λ·w_k, b_k) = 1 by bisection and returns the capped
/// weights; with Σ b < 1 there is no such λ and the bounds are rescaled.
pub fn capped_scaling(w: &[f64], b: &[f64]) -> Vec<f64> {
    let total_bound: f64 = b.iter().sum();
    if total_bound < 1.0 {
        return b.iter().map(|x| x / total_bound).collect();
    }
    let mass = |lambda: f64| -> f64 { w.iter().zip(b).map(|(w, b)| (lambda * w).min(*b)).sum() };
    let (mut lo, mut hi) = (0.0, 1.0);
    while mass(hi) < 1.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Exact proportional fill of the uncapped entries at the located λ.
    let capped: Vec<bool> = w.iter().zip(b).map(|(w, b)| hi * w >= *b).collect();
    let rest = 1.0 - b.iter().zip(&capped).filter(|(_, c)| **c).map(|(b, _)| b).sum::<f64>();
    let free: f64 = w.iter().zip(&capped).filter(|(_, c)| !**c).map(|(w, _)| w).sum();
    w.iter()
        .zip(b)
        .zip(&capped)
        .map(|((w, b), c)| if *c { *b } else { w / free * rest })
        .collect()
}

/// Character 3-gram Jaccard, computed over sorted, deduplicated vectors.
pub fn jaccard_3gram(a: &str, b: &str) -> f64 {
    fn grams(s: &str) -> Vec<String> {
        let chars: Vec<char> = s.chars().collect();
        let mut out: Vec<String> = if chars.len() < 3 {
            if chars.is_empty() { vec![] } else { vec![chars.iter().collect()] }
        } else {
            chars.windows(3).map(|w| w.iter().collect()).collect()
        };
        out.sort();
        out.dedup();
        out
    }
    let ga = grams(a);
    let gb = grams(b);
    let inter = ga.iter().filter(|g| gb.binary_search(g).is_ok()).count();
    let union = ga.len() + gb.len() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

pub fn distinct<T: std::hash::Hash + Eq + Clone>(xs: &[T]) -> usize {
    xs.iter().cloned().collect::<HashSet<_>>().len()
}

/// Trapezoid integral of a Gaussian density in log10 N over [lo, hi],
/// restricted to the support [a, b] and renormalised over it.
pub fn gaussian_bin_mass(mean: f64, sd: f64, a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    let f = |x: f64| (-0.5 * ((x - mean) / sd).powi(2)).exp();
    let integrate = |lo: f64, hi: f64| {
        if hi <= lo {
            return 0.0;
        }
        let steps = 20_000;
        let h = (hi - lo) / steps as f64;
        let mut s = 0.5 * (f(lo) + f(hi));
        for i in 1..steps {
            s += f(lo + h * i as f64);
        }
        s * h
    };
    integrate(lo.max(a), hi.min(b)) / integrate(a, b)
}

/// Weighted quantile: sort (x, w) by x, walk the cumulative mass.
pub fn weighted_quantile(points: &[(f64, f64)], q: f64) -> f64 {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = sorted.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (x, w) in &sorted {
        acc += w / total;
        if acc >= q - 1e-12 {
            return *x;
        }
    }
    sorted.last().unwrap().0
}
