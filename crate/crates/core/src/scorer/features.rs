//! Segment-aware hashed n-gram features.
//!
//! Every n-gram is hashed together with the role of the segment it came from
//! (`[T1]`, `[T2]`, `[E1]`, `[E2]` or none), so a linear model can tell "marker
//! in the first explanation" from "marker in the second". Hashing is FNV-1a over
//! UTF-8 bytes, which is stable across runs and platforms.

use super::assemble::{E1_MARKER, E2_MARKER, SEPARATOR, T1_MARKER, T2_MARKER};
use super::TrainConfig;

/// Sparse vector as `(index, value)` pairs sorted by index, without duplicates.
pub type SparseVector = Vec<(u32, f64)>;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        // separator byte between parts
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Plain,
    T1,
    T2,
    E1,
    E2,
}

impl Role {
    fn tag(self) -> &'static [u8] {
        match self {
            Role::Plain => b"_",
            Role::T1 => b"t1",
            Role::T2 => b"t2",
            Role::E1 => b"e1",
            Role::E2 => b"e2",
        }
    }
}

fn segments(text: &str) -> Vec<(Role, &str)> {
    let sep = format!(" {SEPARATOR} ");
    text.split(sep.as_str())
        .map(|seg| {
            for (marker, role) in [(T1_MARKER, Role::T1), (T2_MARKER, Role::T2), (E1_MARKER, Role::E1), (E2_MARKER, Role::E2)] {
                if let Some(rest) = seg.strip_prefix(marker) {
                    return (role, rest.strip_prefix(' ').unwrap_or(rest));
                }
            }
            (Role::Plain, seg)
        })
        .collect()
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn add(counts: &mut Vec<(u32, f64)>, hash: u64, dim_mask: u64) {
    let idx = (hash & dim_mask) as u32;
    let sign = if hash >> 63 == 1 { -1.0 } else { 1.0 };
    counts.push((idx, sign));
}

/// Hashed bag of word and character n-grams, L2-normalized. Empty input gives the zero vector.
pub fn featurize(text: &str, config: &TrainConfig) -> SparseVector {
    let mask = (config.feature_dim as u64) - 1;
    let mut raw: Vec<(u32, f64)> = Vec::new();
    for (role, seg) in segments(text) {
        let tokens = tokenize(seg);
        for &n in &config.ngram_orders {
            if n == 0 || tokens.len() < n {
                continue;
            }
            for window in tokens.windows(n) {
                let gram = window.join(" ");
                add(&mut raw, fnv1a(&[role.tag(), b"w", gram.as_bytes()]), mask);
            }
        }
        let normalized: Vec<char> = tokens.join(" ").chars().collect();
        for &n in &config.char_ngram_orders {
            if n == 0 || normalized.len() < n {
                continue;
            }
            for window in normalized.windows(n) {
                let gram: String = window.iter().collect();
                add(&mut raw, fnv1a(&[role.tag(), b"c", gram.as_bytes()]), mask);
            }
        }
    }
    raw.sort_by_key(|&(i, _)| i);
    let mut merged: SparseVector = Vec::with_capacity(raw.len());
    for (i, v) in raw {
        match merged.last_mut() {
            Some((j, acc)) if *j == i => *acc += v,
            _ => merged.push((i, v)),
        }
    }
    merged.retain(|&(_, v)| v != 0.0);
    let norm = merged.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in merged.iter_mut() {
            *v /= norm;
        }
    }
    merged
}

pub fn dot(weights: &[f64], x: &SparseVector) -> f64 {
    x.iter().map(|&(i, v)| weights[i as usize] * v).sum()
}
