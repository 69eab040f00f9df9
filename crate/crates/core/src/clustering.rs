//! Seeded k-means (k-means++ seeding, Lloyd iterations) shared by the skill
//! taxonomy and the expert partition.

use std::path::Path;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical::sig9;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Pcg64};
use crate::sections::{parse_floats, Section};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidModel {
    pub k: usize,
    pub dims: usize,
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    pub iterations_run: usize,
    pub inertia: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterAssignment {
    pub point_index: usize,
    pub cluster: usize,
    pub distance_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Assign points on the rayon pool. Results are identical to the
    /// sequential path: only the per-point argmin is parallel.
    pub parallel_assign: bool,
    /// Best-of-n by inertia; run `i` uses `derive_seed(seed, i)`, run 0 the seed itself.
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-6,
            parallel_assign: false,
            restarts: 1,
        }
    }
}

/// Full record of a fit, for callers that need the training labels.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: CentroidModel,
    pub labels: Vec<usize>,
    /// Inertia after the seeding assignment and after every Lloyd step.
    pub inertia_trace: Vec<f64>,
    pub converged: bool,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exhaustive argmin, ties to the lowest centroid index.
fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, point);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let dims = points.first().map(|p| p.as_ref().len()).unwrap_or(0);
    for p in points {
        if p.as_ref().len() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: p.as_ref().len(),
            });
        }
    }
    Ok(dims)
}

fn kmeans_plus_plus<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut Pcg64) -> Vec<Vec<f64>> {
    let n = points.len();
    let first = rng.random_range(0..n);
    let mut centroids = vec![points[first].as_ref().to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave `target` above the final partial sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(squared_distance(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign_all<P: AsRef<[f64]> + Sync>(
    points: &[P],
    centroids: &[Vec<f64>],
    parallel: bool,
) -> Vec<(usize, f64)> {
    if parallel {
        points
            .par_iter()
            .map(|p| nearest(centroids, p.as_ref()))
            .collect()
    } else {
        points
            .iter()
            .map(|p| nearest(centroids, p.as_ref()))
            .collect()
    }
}

fn means<P: AsRef<[f64]>>(
    points: &[P],
    labels: &[usize],
    k: usize,
    dims: usize,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dims]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p.as_ref()) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    (sums, counts)
}

/// Fills empty clusters with the point farthest from its own centroid
/// (taken from clusters with more than one member, ties to lowest index).
fn repair_empty<P: AsRef<[f64]>>(
    points: &[P],
    labels: &mut [usize],
    centroids: &mut [Vec<f64>],
    counts: &mut [usize],
) {
    let dims = centroids.first().map(Vec::len).unwrap_or(0);
    for j in 0..centroids.len() {
        if counts[j] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] <= 1 {
                continue;
            }
            let d = squared_distance(p.as_ref(), &centroids[labels[i]]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let Some((i, _)) = best else { break };
        let donor = labels[i];
        labels[i] = j;
        counts[donor] -= 1;
        counts[j] = 1;
        centroids[j] = points[i].as_ref().to_vec();
        let mut sum = vec![0.0; dims];
        for (p, &l) in points.iter().zip(labels.iter()) {
            if l == donor {
                for (s, x) in sum.iter_mut().zip(p.as_ref()) {
                    *s += x;
                }
            }
        }
        sum.iter_mut().for_each(|x| *x /= counts[donor] as f64);
        centroids[donor] = sum;
    }
}

fn fit_once<P: AsRef<[f64]> + Sync>(
    points: &[P],
    k: usize,
    dims: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> KMeansFit {
    let mut rng = seeded(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let assigned = assign_all(points, &centroids, opts.parallel_assign);
    let mut labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
    let mut inertia: f64 = assigned.iter().map(|a| a.1).sum();
    let mut trace = vec![inertia];
    let mut iterations_run = 0;
    let mut converged = false;

    while iterations_run < opts.max_iterations {
        iterations_run += 1;
        let (mut next, mut counts) = means(points, &labels, k, dims);
        repair_empty(points, &mut labels, &mut next, &mut counts);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        let assigned = assign_all(points, &centroids, opts.parallel_assign);
        let changed = assigned.iter().zip(&labels).any(|(a, &l)| a.0 != l);
        labels = assigned.iter().map(|a| a.0).collect();
        let next_inertia: f64 = assigned.iter().map(|a| a.1).sum();
        debug_assert!(
            next_inertia <= inertia + 1e-9 * inertia.max(1.0),
            "inertia increased: {inertia} -> {next_inertia}"
        );
        inertia = next_inertia;
        trace.push(inertia);
        if shift < opts.tolerance && !changed {
            converged = true;
            break;
        }
    }

    KMeansFit {
        model: CentroidModel {
            k,
            dims,
            centroids,
            seed,
            iterations_run,
            inertia,
        },
        labels,
        inertia_trace: trace,
        converged,
    }
}

/// Fits k-means and returns the full record including training labels.
pub fn fit_kmeans_detailed<P: AsRef<[f64]> + Sync>(
    points: &[P],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of points ({})",
            points.len()
        )));
    }
    let dims = check_points(points)?;
    let mut best: Option<KMeansFit> = None;
    for run in 0..opts.restarts.max(1) {
        let run_seed = if run == 0 {
            seed
        } else {
            derive_seed(seed, run as u64)
        };
        let fit = fit_once(points, k, dims, run_seed, opts);
        if best
            .as_ref()
            .is_none_or(|b| fit.model.inertia < b.model.inertia)
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one run"))
}

pub fn fit_kmeans<P: AsRef<[f64]> + Sync>(
    points: &[P],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<CentroidModel> {
    fit_kmeans_detailed(points, k, seed, opts).map(|f| f.model)
}

impl CentroidModel {
    pub fn assign(&self, point: &[f64]) -> Result<ClusterAssignment> {
        self.assign_indexed(0, point)
    }

    pub fn assign_indexed(&self, point_index: usize, point: &[f64]) -> Result<ClusterAssignment> {
        if point.len() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                found: point.len(),
            });
        }
        let (cluster, distance_sq) = nearest(&self.centroids, point);
        Ok(ClusterAssignment {
            point_index,
            cluster,
            distance_sq,
        })
    }

    /// Σ_i min_j ‖x_i − c_j‖²
    pub fn inertia_of<P: AsRef<[f64]>>(&self, points: &[P]) -> Result<f64> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| self.assign_indexed(i, p.as_ref()).map(|a| a.distance_sq))
            .sum()
    }

    /// Canonical text body (without a section header): header fields, then
    /// one `c` row per centroid, all floats to 9 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "k {}\ndims {}\nseed {}\ninertia {}\niterations_run {}\n",
            self.k,
            self.dims,
            self.seed,
            sig9(self.inertia),
            self.iterations_run
        );
        for c in &self.centroids {
            out.push('c');
            for x in c {
                out.push(' ');
                out.push_str(&sig9(*x));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_section(section: &Section<'_>, path: &Path) -> Result<Self> {
        let mut k = None;
        let mut dims = None;
        let mut seed = None;
        let mut inertia = None;
        let mut iterations_run = None;
        let mut centroids = Vec::new();
        for &(line, content) in &section.lines {
            let (key, rest) = content.split_once(' ').unwrap_or((content, ""));
            let int = |s: &str| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::format(path, line, format!("bad integer for {key}")))
            };
            match key {
                "k" => k = Some(int(rest)? as usize),
                "dims" => dims = Some(int(rest)? as usize),
                "seed" => seed = Some(int(rest)?),
                "iterations_run" => iterations_run = Some(int(rest)? as usize),
                "inertia" => {
                    inertia = parse_floats(rest, path, line)?.first().copied();
                }
                "c" => centroids.push(parse_floats(rest, path, line)?),
                _ => return Err(Error::format(path, line, format!("unknown key {key:?}"))),
            }
        }
        let missing = |what: &str| Error::format(path, 0, format!("centroid model lacks `{what}`"));
        let model = CentroidModel {
            k: k.ok_or_else(|| missing("k"))?,
            dims: dims.ok_or_else(|| missing("dims"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            inertia: inertia.ok_or_else(|| missing("inertia"))?,
            iterations_run: iterations_run.ok_or_else(|| missing("iterations_run"))?,
            centroids,
        };
        if model.centroids.len() != model.k || model.centroids.iter().any(|c| c.len() != model.dims)
        {
            return Err(Error::format(
                path,
                0,
                format!(
                    "expected {} centroid rows of {} values",
                    model.k, model.dims
                ),
            ));
        }
        Ok(model)
    }
}

pub fn assign(model: &CentroidModel, point: &[f64]) -> Result<ClusterAssignment> {
    model.assign(point)
}

pub fn inertia_of<P: AsRef<[f64]>>(model: &CentroidModel, points: &[P]) -> Result<f64> {
    model.inertia_of(points)
}
