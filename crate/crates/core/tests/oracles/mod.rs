//! Reference implementations written without looking at the library code
//! paths they check. Shared by the core integration tests and the
//! acceptance runner.
#![allow(dead_code)]

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Linear scan; a later centroid wins only when strictly closer.
pub fn nearest_centroid(centroids: &[Vec<f64>], q: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = sq_dist(&centroids[0], q);
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(c, q);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

pub fn mean_of(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dims = points[0].len();
    let mut m = vec![0.0; dims];
    for &i in members {
        for d in 0..dims {
            m[d] += points[i][d];
        }
    }
    for v in &mut m {
        *v /= members.len() as f64;
    }
    m
}

/// Minimum k-means objective over every labelling with no empty cluster.
pub fn brute_force_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let groups: Vec<Vec<usize>> = (0..k)
            .map(|c| (0..n).filter(|&i| labels[i] == c).collect())
            .collect();
        if groups.iter().all(|g| !g.is_empty()) {
            let mut total = 0.0;
            for g in &groups {
                let m = mean_of(points, g);
                total += g.iter().map(|&i| sq_dist(&points[i], &m)).sum::<f64>();
            }
            best = best.min(total);
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Repeated selection of the maximum; equal scores resolve to the smaller index.
pub fn top_k_cosine(q: &[f64], centroids: &[Vec<f64>], k: usize) -> Vec<usize> {
    let scores: Vec<f64> = centroids.iter().map(|c| cosine(q, c)).collect();
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

/// Signed feature hashing of lowercased alphanumeric tokens with 64-bit
/// FNV-1a, then L2 normalisation.
pub fn hash_embedding(text: &str, dims: usize) -> Vec<f64> {
    let mut v = vec![0.0; dims];
    let lower = text.to_lowercase();
    let mut token = String::new();
    let flush = |token: &mut String, v: &mut Vec<f64>| {
        if token.is_empty() {
            return;
        }
        let mut h: u64 = 14695981039346656037;
        for b in token.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(1099511628211);
        }
        let sign = if h & (1 << 63) != 0 { -1.0 } else { 1.0 };
        v[(h % dims as u64) as usize] += sign;
        token.clear();
    };
    for ch in lower.chars() {
        if ch.is_alphanumeric() {
            token.push(ch);
        } else {
            flush(&mut token, &mut v);
        }
    }
    flush(&mut token, &mut v);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Toy objective evaluated straight from the weight matrices:
/// mean answer NLL + lambda * mean per-position CoT NLL.
pub struct ToyLossOracle<'a> {
    pub answer_w: Vec<Vec<f64>>,
    pub cot_w: Vec<Vec<f64>>,
    pub cot_vocab: usize,
    pub lambda: f64,
    pub features: &'a [Vec<f64>],
    pub answers: &'a [usize],
    pub cot_targets: &'a [Vec<usize>],
}

fn log_softmax_at(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits[y] - lse
}

fn matvec(w: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

impl ToyLossOracle<'_> {
    pub fn loss(&self) -> f64 {
        let n = self.features.len() as f64;
        let mut ans = 0.0;
        let mut cot = 0.0;
        for (i, x) in self.features.iter().enumerate() {
            ans -= log_softmax_at(&matvec(&self.answer_w, x), self.answers[i]);
            let z = matvec(&self.cot_w, x);
            let t_len = self.cot_targets[i].len();
            let mut c = 0.0;
            for (t, &y) in self.cot_targets[i].iter().enumerate() {
                c -= log_softmax_at(&z[t * self.cot_vocab..(t + 1) * self.cot_vocab], y);
            }
            cot += c / t_len as f64;
        }
        ans / n + self.lambda * cot / n
    }
}

/// Dense product of row-major matrices.
pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|c| (0..inner).map(|k| row[k] * b[k][c]).sum())
                .collect()
        })
        .collect()
}

pub fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

/// Constructed skill-phrase fixtures that break the word-count rule.
pub const WORD_COUNT_VIOLATIONS: &[&str] = &[
    "",
    "Track",
    "Count objects",
    "Estimate distance between two objects",
    "Estimate the distance between the two objects using many visual cues seen in frames",
    "Follow every single person as they walk across the whole crowded street scene today",
];

/// Constructed fixtures that lean on audio cues.
pub const AUDIO_VIOLATIONS: &[&str] = &[
    "Identify background music mood from the soundtrack",
    "Recognize speech content spoken by the main character",
    "Detect sounds of footsteps approaching from behind the camera",
    "Localize the voice of the narrator in the scene",
    "Judge audio volume changes over the course of the clip",
    "Use acoustic echoes to estimate room size and shape",
    "Identify Musical instruments playing during the opening credits",
];

/// Phrases that satisfy every rule, including both word-count boundaries.
pub const VALID_PHRASES: &[&str] = &[
    "Estimate distance between two objects using cues",
    "Count repeated object instances across frames of the scene",
    "Track the order in which people enter and leave the busy kitchen",
];
