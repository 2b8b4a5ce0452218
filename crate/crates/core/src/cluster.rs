//! Cross-play similarity and self-tuning spectral clustering.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pool::{rollout, PartnerPool};
use crate::seed;
use crate::{Result, TbsError};

pub const SIMILARITY_EPSILON: f64 = 1e-4;
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationSearch {
    pub learning_rate: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for RotationSearch {
    fn default() -> Self {
        RotationSearch {
            learning_rate: 0.05,
            iterations: 500,
            restarts: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPlayMatrix {
    /// `x[a][b] = J(pi_a^1, pi_b^2)`.
    pub x: Vec<Vec<f64>>,
    pub episode_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub s: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.s[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    /// Minimal alignment cost per candidate k.
    pub cost_curve: Vec<(usize, f64)>,
    /// Row-major `k x k` rotation at the chosen k.
    pub rotation: Vec<Vec<f64>>,
    /// Whether every rotation search at the chosen k met the gradient tolerance.
    pub converged: bool,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == cluster)
            .collect()
    }

    pub fn single(n: usize) -> ClusterAssignment {
        ClusterAssignment {
            k: 1,
            labels: vec![0; n],
            cost_curve: vec![(1, n as f64)],
            rotation: vec![vec![1.0]],
            converged: true,
        }
    }
}

/// Evaluates every seat-1/seat-2 pairing of the pool by greedy rollout.
///
/// Episode seeds depend on the pairs' provenance seeds rather than their
/// positions, so reordering the pool reorders the matrix and nothing else.
pub fn crossplay_matrix(pool: &PartnerPool, episodes: usize, seed: u64) -> Result<CrossPlayMatrix> {
    let n = pool.len();
    if n == 0 {
        return Err(TbsError::TooFew {
            what: "pool pairs",
            needed: 1,
            got: 0,
        });
    }
    let cells = (0..n * n)
        .into_par_iter()
        .map(|c| {
            let (a, b) = (c / n, c % n);
            let pa = &pool.pairs[a];
            let pb = &pool.pairs[b];
            let s = seed::derive(
                seed::derive(seed, "xp", pa.provenance.seed),
                "xp",
                pb.provenance.seed,
            );
            rollout(&pa.seat1, &pb.seat2, &pool.env_spec, episodes, s, false).map(|r| r.mean_return)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CrossPlayMatrix {
        x: cells.chunks(n).map(|r| r.to_vec()).collect(),
        episode_count: episodes,
        seed,
    })
}

/// `s(A,B) = (X[A][B] + X[B][A]) / (X[A][A] + X[B][B])`, clamped to `[0,1]`
/// (0/0 counts as 1), then shifted by epsilon.
pub fn similarity_matrix(xp: &CrossPlayMatrix) -> Result<SimilarityMatrix> {
    let x = &xp.x;
    let n = x.len();
    if x.iter().any(|r| r.len() != n) {
        return Err(TbsError::InvalidArgument(
            "cross-play matrix must be square".into(),
        ));
    }
    let mut warned = false;
    let mut s = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a..n {
            let num = x[a][b] + x[b][a];
            let den = x[a][a] + x[b][b];
            if !warned && (num < 0.0 || den < 0.0) {
                log::warn!("negative returns in cross-play matrix; similarity ratio clamped");
                warned = true;
            }
            let raw = if num == 0.0 && den == 0.0 {
                1.0
            } else {
                num / den
            };
            let v = if raw.is_nan() {
                0.0
            } else {
                raw.clamp(0.0, 1.0)
            } + SIMILARITY_EPSILON;
            s[a][b] = v;
            s[b][a] = v;
        }
    }
    Ok(SimilarityMatrix {
        s,
        epsilon: SIMILARITY_EPSILON,
    })
}

/// `D^{-1/2} S D^{-1/2}` with `D` the row-sum degrees.
pub fn laplacian(s: &SimilarityMatrix) -> DMatrix<f64> {
    let m = s.to_dmatrix();
    let inv_sqrt: Vec<f64> = (0..m.nrows())
        .map(|i| 1.0 / m.row(i).sum().sqrt())
        .collect();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        inv_sqrt[i] * m[(i, j)] * inv_sqrt[j]
    })
}

/// Eigenvectors of the `k` largest eigenvalues as columns, largest first.
pub fn top_eigenvectors(l: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(l.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    DMatrix::from_fn(l.nrows(), k, |i, j| eig.eigenvectors[(i, order[j])])
}

pub fn check_orthogonal(r: &DMatrix<f64>) -> Result<()> {
    let k = r.nrows();
    let dev = (r.transpose() * r - DMatrix::<f64>::identity(k, k))
        .abs()
        .max();
    if r.ncols() != k || dev > ORTHOGONALITY_TOL {
        return Err(TbsError::NotOrthogonal(dev));
    }
    Ok(())
}

fn row_cost(z: &DMatrix<f64>) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..z.nrows() {
        let row = z.row(i);
        let max_sq = row.iter().map(|v| v * v).fold(0.0, f64::max);
        if max_sq == 0.0 {
            return Err(TbsError::DegenerateEmbedding(i));
        }
        total += row.iter().map(|v| v * v).sum::<f64>() / max_sq;
    }
    Ok(total)
}

/// `J = sum_i sum_j (XR)_ij^2 / max_j (XR)_ij^2`.
pub fn alignment_cost(x: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<f64> {
    check_orthogonal(r)?;
    row_cost(&(x * r))
}

/// Angle pairs `(p, q)`, `p < q`, in lexicographic order.
pub fn givens_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .flat_map(|p| (p + 1..k).map(move |q| (p, q)))
        .collect()
}

fn givens(k: usize, p: usize, q: usize, theta: f64) -> DMatrix<f64> {
    let mut g = DMatrix::identity(k, k);
    let (s, c) = theta.sin_cos();
    g[(p, p)] = c;
    g[(p, q)] = -s;
    g[(q, p)] = s;
    g[(q, q)] = c;
    g
}

fn givens_derivative(k: usize, p: usize, q: usize, theta: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(k, k);
    let (s, c) = theta.sin_cos();
    g[(p, p)] = -s;
    g[(p, q)] = -c;
    g[(q, p)] = c;
    g[(q, q)] = -s;
    g
}

/// Product of Givens rotations over `givens_pairs(k)`.
pub fn rotation_from_angles(k: usize, angles: &[f64]) -> DMatrix<f64> {
    givens_pairs(k)
        .iter()
        .zip(angles)
        .fold(DMatrix::identity(k, k), |acc, (&(p, q), &t)| {
            acc * givens(k, p, q, t)
        })
}

/// Alignment cost and its gradient with respect to the Givens angles.
pub fn cost_and_gradient(x: &DMatrix<f64>, angles: &[f64]) -> Result<(f64, Vec<f64>)> {
    let k = x.ncols();
    let pairs = givens_pairs(k);
    let gs: Vec<DMatrix<f64>> = pairs
        .iter()
        .zip(angles)
        .map(|(&(p, q), &t)| givens(k, p, q, t))
        .collect();
    let mut prefix = vec![DMatrix::identity(k, k)];
    for g in &gs {
        let next = prefix.last().unwrap() * g;
        prefix.push(next);
    }
    let mut suffix = vec![DMatrix::identity(k, k); gs.len() + 1];
    for i in (0..gs.len()).rev() {
        suffix[i] = &gs[i] * &suffix[i + 1];
    }
    let z = x * &prefix[gs.len()];
    let cost = row_cost(&z)?;

    let mut dz = DMatrix::zeros(z.nrows(), k);
    for i in 0..z.nrows() {
        let m = (0..k)
            .max_by(|&a, &b| {
                (z[(i, a)] * z[(i, a)])
                    .total_cmp(&(z[(i, b)] * z[(i, b)]))
                    .then(b.cmp(&a))
            })
            .unwrap();
        let zm = z[(i, m)];
        let mut acc = 0.0;
        for j in 0..k {
            if j != m {
                dz[(i, j)] = 2.0 * z[(i, j)] / (zm * zm);
                acc += z[(i, j)] * z[(i, j)];
            }
        }
        dz[(i, m)] = -2.0 * acc / (zm * zm * zm);
    }
    let grad = pairs
        .iter()
        .enumerate()
        .map(|(g, &(p, q))| {
            let dr = &prefix[g] * givens_derivative(k, p, q, angles[g]) * &suffix[g + 1];
            dz.dot(&(x * dr))
        })
        .collect();
    Ok((cost, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationResult {
    pub rotation: DMatrix<f64>,
    pub angles: Vec<f64>,
    pub cost: f64,
    pub converged: bool,
}

fn descend(
    x: &DMatrix<f64>,
    mut angles: Vec<f64>,
    search: &RotationSearch,
) -> Result<(Vec<f64>, f64, bool)> {
    let (mut cost, mut grad) = cost_and_gradient(x, &angles)?;
    let mut step = search.learning_rate;
    for _ in 0..search.iterations {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Ok((angles, cost, true));
        }
        let mut accepted = false;
        while step > 1e-12 {
            let trial: Vec<f64> = angles
                .iter()
                .zip(&grad)
                .map(|(a, g)| a - step * g)
                .collect();
            let (c, g) = cost_and_gradient(x, &trial)?;
            if c < cost {
                angles = trial;
                cost = c;
                grad = g;
                step *= 1.5;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok((angles, cost, true));
        }
    }
    Ok((angles, cost, false))
}

/// Minimizes the alignment cost over rotations by gradient descent on Givens
/// angles from one identity start and `restarts - 1` random starts.
pub fn minimize_rotation(x: &DMatrix<f64>, search: &RotationSearch) -> Result<RotationResult> {
    let k = x.ncols();
    if k <= 1 {
        return Ok(RotationResult {
            rotation: DMatrix::identity(k.max(1), k.max(1)),
            angles: Vec::new(),
            cost: x.nrows() as f64,
            converged: true,
        });
    }
    let dim = k * (k - 1) / 2;
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut all_converged = true;
    for start in 0..search.restarts.max(1) {
        let init = if start == 0 {
            vec![0.0; dim]
        } else {
            let mut rng = seed::rng(seed::derive(search.seed, "rotation", start as u64));
            (0..dim).map(|_| rng.random_range(-PI..PI)).collect()
        };
        let (angles, cost, converged) = descend(x, init, search)?;
        all_converged &= converged;
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((angles, cost, converged));
        }
    }
    let (angles, cost, _) = best.unwrap();
    Ok(RotationResult {
        rotation: rotation_from_angles(k, &angles),
        angles,
        cost,
        converged: all_converged,
    })
}

/// Candidate k range: `[2, min(8, n-1)]`, or just k = 1 below three agents.
pub fn default_k_range(n: usize) -> (usize, usize) {
    if n < 3 {
        (1, 1)
    } else {
        (2, 8.min(n - 1))
    }
}

fn labels_from(z: &DMatrix<f64>) -> Vec<usize> {
    (0..z.nrows())
        .map(|i| {
            (0..z.ncols())
                .max_by(|&a, &b| {
                    (z[(i, a)] * z[(i, a)])
                        .total_cmp(&(z[(i, b)] * z[(i, b)]))
                        .then(b.cmp(&a))
                })
                .unwrap()
        })
        .collect()
}

/// Renumbers labels by first appearance; returns `None` if fewer than `k` classes appear.
fn canonical(labels: &[usize], k: usize) -> Option<Vec<usize>> {
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    let out = labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect();
    (next == k).then_some(out)
}

const COST_TIE_TOL: f64 = 1e-9;

/// `gaps[k] = λ_k - λ_{k+1}` over eigenvalues sorted descending (1-based, λ_{n+1} = 0).
fn eigengaps(l: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(l.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.push(0.0);
    let mut gaps = vec![0.0];
    gaps.extend(ev.windows(2).map(|w| w[0] - w[1]));
    gaps
}

/// Self-tuning spectral clustering: picks the k in `[k_min, k_max]` with the
/// lowest minimized alignment cost. Among costs within 1e-9 of the minimum the
/// k with the largest eigengap `λ_k - λ_{k+1}` wins, then the smaller k.
pub fn select_k(
    s: &SimilarityMatrix,
    k_min: usize,
    k_max: usize,
    search: &RotationSearch,
) -> Result<ClusterAssignment> {
    let n = s.len();
    if !(1 <= k_min && k_min <= k_max && k_max <= n) {
        return Err(TbsError::InvalidArgument(format!(
            "invalid k range [{k_min}, {k_max}] for {n} agents"
        )));
    }
    let l = laplacian(s);
    let results = (k_min..=k_max)
        .into_par_iter()
        .map(|k| {
            let x = top_eigenvectors(&l, k);
            let r = minimize_rotation(&x, search)?;
            let labels = labels_from(&(&x * &r.rotation));
            Ok((k, r, labels))
        })
        .collect::<Result<Vec<_>>>()?;
    let cost_curve: Vec<(usize, f64)> = results.iter().map(|(k, r, _)| (*k, r.cost)).collect();

    let gaps = eigengaps(&l);
    let best = cost_curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let tied = |i: usize| results[i].1.cost - best <= COST_TIE_TOL;
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (results[a].0, results[b].0);
        match (tied(a), tied(b)) {
            (true, true) => gaps[kb].total_cmp(&gaps[ka]).then(ka.cmp(&kb)),
            (true, false) => std::cmp::Ordering::Less,
            (false, true) => std::cmp::Ordering::Greater,
            (false, false) => results[a]
                .1
                .cost
                .total_cmp(&results[b].1.cost)
                .then(ka.cmp(&kb)),
        }
    });
    for idx in order {
        let (k, r, labels) = &results[idx];
        if *k == 1 {
            return Ok(ClusterAssignment {
                cost_curve,
                ..ClusterAssignment::single(n)
            });
        }
        match canonical(labels, *k) {
            Some(labels) => {
                return Ok(ClusterAssignment {
                    k: *k,
                    labels,
                    cost_curve,
                    rotation: r
                        .rotation
                        .row_iter()
                        .map(|row| row.iter().copied().collect())
                        .collect(),
                    converged: r.converged,
                })
            }
            None => log::info!("k={k} leaves an empty cluster; trying the next-best k"),
        }
    }
    log::warn!("no candidate k produced nonempty clusters; using a single cluster");
    Ok(ClusterAssignment {
        cost_curve,
        ..ClusterAssignment::single(n)
    })
}

/// Plain spectral clustering at a fixed k: row-normalized top-k eigenvectors
/// grouped by seeded k-means++ (best of several restarts).
pub fn spectral_fixed_k(s: &SimilarityMatrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = s.len();
    if k == 0 || k > n {
        return Err(TbsError::InvalidArgument(format!(
            "cannot form {k} clusters from {n} agents"
        )));
    }
    if k == 1 {
        return Ok(ClusterAssignment::single(n));
    }
    let mut x = top_eigenvectors(&laplacian(s), k);
    for mut row in x.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let points: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..10 {
        let mut rng = seed::rng(seed::derive(seed, "kmeans", restart));
        let (inertia, labels) = kmeans(&points, k, &mut rng);
        if best.as_ref().is_none_or(|b| inertia < b.0 - 1e-12) {
            best = Some((inertia, labels));
        }
    }
    let (_, labels) = best.unwrap();
    let labels = canonical(&labels, k).ok_or_else(|| {
        TbsError::InvalidArgument(format!("k-means left an empty cluster at k={k}"))
    })?;
    Ok(ClusterAssignment {
        k,
        labels,
        cost_curve: Vec::new(),
        rotation: DMatrix::<f64>::identity(k, k)
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
        converged: true,
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut seed::Rng) -> (f64, Vec<usize>) {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &di) in d.iter().enumerate() {
                if u < di {
                    idx = i;
                    break;
                }
                u -= di;
            }
            idx
        };
        centers.push(points[pick].clone());
    }
    let mut labels = vec![0; n];
    for _ in 0..100 {
        let new: Vec<usize> = points
            .iter()
            .map(|p| {
                (0..k)
                    .min_by(|&a, &b| {
                        dist2(p, &centers[a])
                            .total_cmp(&dist2(p, &centers[b]))
                            .then(a.cmp(&b))
                    })
                    .unwrap()
            })
            .collect();
        let changed = new != labels;
        labels = new;
        let spread: Vec<f64> = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| dist2(p, &centers[l]))
            .collect();
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                // reseed an empty cluster at the worst-fit point
                let far = (0..n)
                    .max_by(|&a, &b| spread[a].total_cmp(&spread[b]))
                    .unwrap();
                *center = points[far].clone();
                continue;
            }
            for (d, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| dist2(p, &centers[l]))
        .sum();
    (inertia, labels)
}

/// CSV with a header row of pair indices and one row per pair.
pub fn matrix_to_csv(m: &[Vec<f64>]) -> String {
    let mut out = String::from("index");
    for j in 0..m.len() {
        write!(out, ",{j}").unwrap();
    }
    out.push('\n');
    for (i, row) in m.iter().enumerate() {
        write!(out, "{i}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let bad = |m: String| TbsError::InvalidArgument(format!("matrix csv: {m}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let n = header.split(',').count() - 1;
    let rows = lines
        .map(|l| {
            l.split(',')
                .skip(1)
                .map(|v| v.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(bad(format!("expected a {n}x{n} matrix")));
    }
    Ok(rows)
}
