//! Pixel-wise voting: half-line intersections and robust point estimation
//! with graduated non-convexity on a truncated least-squares cost.

use std::io::{Read, Write};

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::heatmap::read_u32;
use super::ConformalError;

const PKVF_MAGIC: &[u8; 8] = b"PKVF0001";
/// Upper bound on the number of ray pairs intersected per field.
pub const MAX_VOTE_PAIRS: usize = 20_000;
const PARALLEL_TOL: f64 = 1e-9;
const GNC_FACTOR: f64 = 1.4;
const GNC_MAX_ITERS: usize = 100;
const GNC_WEIGHT_TOL: f64 = 1e-6;

/// Votes `(p_i, v_i)` for one keypoint: a pixel and a unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteField {
    votes: Vec<(Vector2<f64>, Vector2<f64>)>,
}

impl VoteField {
    /// Directions are normalized; zero or non-finite entries are rejected.
    pub fn new(votes: Vec<(Vector2<f64>, Vector2<f64>)>) -> Result<Self, ConformalError> {
        if votes.len() < 2 {
            return Err(ConformalError::InvalidVoteField(format!(
                "need at least 2 votes, got {}",
                votes.len()
            )));
        }
        let mut out = Vec::with_capacity(votes.len());
        for (i, (p, v)) in votes.into_iter().enumerate() {
            let n = v.norm();
            if !(n > 0.0 && n.is_finite()) || !p.iter().all(|x| x.is_finite()) {
                return Err(ConformalError::InvalidVoteField(format!("vote {i} is invalid")));
            }
            out.push((p, v / n));
        }
        Ok(Self { votes: out })
    }

    pub fn votes(&self) -> &[(Vector2<f64>, Vector2<f64>)] {
        &self.votes
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    /// Reads the `PKVF0001` binary format (one field per keypoint).
    pub fn read_pkvf(mut r: impl Read) -> Result<Vec<Self>, ConformalError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != PKVF_MAGIC {
            return Err(ConformalError::InvalidVoteField("bad magic".into()));
        }
        let k = read_u32(&mut r)?;
        let mut fields = Vec::with_capacity(k as usize);
        for _ in 0..k {
            let t = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; t * 16];
            r.read_exact(&mut buf)?;
            let f: Vec<f64> = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            let votes = f
                .chunks_exact(4)
                .map(|c| (Vector2::new(c[0], c[1]), Vector2::new(c[2], c[3])))
                .collect();
            fields.push(Self::new(votes)?);
        }
        Ok(fields)
    }

    pub fn write_pkvf(fields: &[Self], mut w: impl Write) -> Result<(), ConformalError> {
        w.write_all(PKVF_MAGIC)?;
        w.write_all(&(fields.len() as u32).to_le_bytes())?;
        for f in fields {
            w.write_all(&(f.votes.len() as u32).to_le_bytes())?;
            for (p, v) in &f.votes {
                for x in [p.x, p.y, v.x, v.y] {
                    w.write_all(&(x as f32).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }
}

/// Intersections of all pairs of half-lines `p_i + τ v_i`, `τ ≥ 0`.
/// Parallel pairs and pairs meeting behind either origin are skipped. Above
/// [`MAX_VOTE_PAIRS`] pairs, a fixed pseudo-random subset of pairs is used.
pub fn vote_candidates(field: &VoteField) -> Vec<Vector2<f64>> {
    let t = field.votes.len();
    let total = t * t.saturating_sub(1) / 2;
    let mut out = Vec::new();
    let mut visit = |i: usize, j: usize| {
        if let Some(q) = intersect(&field.votes[i], &field.votes[j]) {
            out.push(q);
        }
    };
    if total <= MAX_VOTE_PAIRS {
        for i in 0..t {
            for j in i + 1..t {
                visit(i, j);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
        let mut picks = rand::seq::index::sample(&mut rng, total, MAX_VOTE_PAIRS).into_vec();
        picks.sort_unstable();
        for p in picks {
            let (i, j) = unrank_pair(p, t);
            visit(i, j);
        }
    }
    out
}

/// Inverse of the row-major enumeration of pairs `i < j`.
fn unrank_pair(mut p: usize, t: usize) -> (usize, usize) {
    let mut i = 0;
    while p >= t - 1 - i {
        p -= t - 1 - i;
        i += 1;
    }
    (i, i + 1 + p)
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn intersect(
    (pi, vi): &(Vector2<f64>, Vector2<f64>),
    (pj, vj): &(Vector2<f64>, Vector2<f64>),
) -> Option<Vector2<f64>> {
    let c = cross(vi, vj);
    if c.abs() < PARALLEL_TOL {
        return None;
    }
    let d = pj - pi;
    let ti = cross(&d, vj) / c;
    let tj = cross(&d, vi) / c;
    (ti >= 0.0 && tj >= 0.0).then(|| pi + vi * ti)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GncResult {
    pub point: Vector2<f64>,
    /// Indices into the candidate list with `‖q* − q_k‖ ≤ β`.
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

/// Robust 2D location: a local minimizer of `Σ min(‖q − q_k‖²/β², 1)`.
pub fn gnc_tls_point(candidates: &[Vector2<f64>], beta: f64) -> Result<GncResult, ConformalError> {
    if candidates.len() < 2 {
        return Err(ConformalError::TooFewCandidates(candidates.len()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(ConformalError::InvalidConfig("beta must be positive".into()));
    }
    let b2 = beta * beta;
    let r2 = |q: &Vector2<f64>| -> Vec<f64> {
        candidates.iter().map(|c| (c - q).norm_squared() / b2).collect()
    };

    let mut q = median(candidates);
    let res = r2(&q);
    // μ here is the convexity level: large μ is close to least squares
    let mut mu = res.iter().cloned().fold(0.0, f64::max).max(1.0);
    let mut weights = vec![1.0; candidates.len()];
    let mut iterations = 0;
    for it in 0..GNC_MAX_ITERS {
        iterations = it + 1;
        let res = r2(&q);
        let m = 1.0 / mu;
        let new_w: Vec<f64> = res.iter().map(|&r| tls_weight(r, m)).collect();
        let change = new_w
            .iter()
            .zip(&weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        weights = new_w;
        if let Some(p) = weighted_mean(candidates, &weights) {
            q = p;
        }
        let binary = weights.iter().all(|&w| w == 0.0 || w == 1.0);
        if it > 0 && change < GNC_WEIGHT_TOL && binary {
            break;
        }
        mu /= GNC_FACTOR;
    }

    // plain TLS alternation to a local minimum
    let mut inliers = inlier_set(candidates, &q, b2);
    for _ in 0..GNC_MAX_ITERS {
        if inliers.is_empty() {
            break;
        }
        let sel: Vec<Vector2<f64>> = inliers.iter().map(|&i| candidates[i]).collect();
        let next_q = sel.iter().sum::<Vector2<f64>>() / sel.len() as f64;
        let next = inlier_set(candidates, &next_q, b2);
        let cost_now = tls_cost(candidates, &q, b2);
        let cost_next = tls_cost(candidates, &next_q, b2);
        if cost_next > cost_now {
            break;
        }
        q = next_q;
        if next == inliers {
            break;
        }
        inliers = next;
    }
    let inliers = inlier_set(candidates, &q, b2);
    Ok(GncResult {
        point: q,
        inliers,
        iterations,
    })
}

/// Weight of the GNC surrogate of the unit-threshold TLS cost at squared
/// residual `r2` and surrogate parameter `m` (`m → ∞` recovers TLS).
fn tls_weight(r2: f64, m: f64) -> f64 {
    if r2 <= m / (m + 1.0) {
        1.0
    } else if r2 >= (m + 1.0) / m {
        0.0
    } else {
        ((m * (m + 1.0)).sqrt() / r2.sqrt() - m).clamp(0.0, 1.0)
    }
}

fn tls_cost(c: &[Vector2<f64>], q: &Vector2<f64>, b2: f64) -> f64 {
    c.iter().map(|p| ((p - q).norm_squared() / b2).min(1.0)).sum()
}

fn inlier_set(c: &[Vector2<f64>], q: &Vector2<f64>, b2: f64) -> Vec<usize> {
    (0..c.len())
        .filter(|&i| (c[i] - q).norm_squared() / b2 <= 1.0)
        .collect()
}

fn weighted_mean(c: &[Vector2<f64>], w: &[f64]) -> Option<Vector2<f64>> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    Some(c.iter().zip(w).map(|(p, w)| p * *w).sum::<Vector2<f64>>() / total)
}

fn median(c: &[Vector2<f64>]) -> Vector2<f64> {
    let med = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    Vector2::new(
        med(c.iter().map(|p| p.x).collect()),
        med(c.iter().map(|p| p.y).collect()),
    )
}
