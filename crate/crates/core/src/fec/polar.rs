//! Polar codes in natural order, `x = u · F^{⊗n}` with `F = [[1, 0], [1, 1]]`.
//!
//! Construction uses the Gaussian approximation of the bit-channel LLR means.
//! Decoding is min-sum successive cancellation list decoding with the
//! LLR-based path metric.

/// Applies `F^{⊗n}` in place (butterfly form).
pub fn transform(u: &mut [u8]) {
    let n = u.len();
    debug_assert!(n.is_power_of_two());
    let mut half = 1;
    while half < n {
        for block in (0..n).step_by(2 * half) {
            for i in block..block + half {
                u[i] ^= u[i + half];
            }
        }
        half *= 2;
    }
}

/// `ln φ(m)` for the Gaussian-approximation function φ (Chung's fit).
fn ln_phi(m: f64) -> f64 {
    if m <= 0.0 {
        0.0
    } else if m < 10.0 {
        -0.4527 * m.powf(0.86) + 0.0218
    } else {
        0.5 * (std::f64::consts::PI / m).ln() - m / 4.0 + (1.0 - 10.0 / (7.0 * m)).ln()
    }
}

/// Inverse of `ln φ` by bisection; `ln φ` is decreasing in `m`.
fn inv_ln_phi(target: f64) -> f64 {
    if target >= 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while ln_phi(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ln_phi(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Mean LLR of every bit channel for a BPSK/AWGN channel at `design_snr_db`
/// (Es/N0), in natural bit order. Larger means are more reliable.
pub fn ga_means(mother_len: usize, design_snr_db: f64) -> Vec<f64> {
    assert!(mother_len.is_power_of_two());
    let es_n0 = 10f64.powf(design_snr_db / 10.0);
    let mut means = vec![4.0 * es_n0];
    while means.len() < mother_len {
        let mut next = Vec::with_capacity(means.len() * 2);
        for &m in &means {
            let lp = ln_phi(m);
            // 1 - (1 - φ)^2 = φ (2 - φ)
            let check = inv_ln_phi(lp + (2.0 - lp.exp()).ln());
            next.push(check);
            next.push(2.0 * m);
        }
        means = next;
    }
    means
}

/// Frozen set for a mother code with `info_total` unfrozen positions. The last
/// `shortened` positions are always frozen so the matching coded bits are zero.
pub fn frozen_set(mother_len: usize, info_total: usize, shortened: usize, design_snr_db: f64) -> Vec<usize> {
    assert!(info_total + shortened <= mother_len);
    let means = ga_means(mother_len, design_snr_db);
    let mut candidates: Vec<usize> = (0..mother_len - shortened).collect();
    candidates.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let mut frozen: Vec<usize> = candidates[..candidates.len() - info_total].to_vec();
    frozen.extend(mother_len - shortened..mother_len);
    frozen.sort_unstable();
    frozen
}

/// Encodes the unfrozen-position payload `data` (length `N - |frozen|`) and
/// returns the full mother codeword.
pub fn encode(mother_len: usize, info_positions: &[usize], data: &[u8]) -> Vec<u8> {
    debug_assert_eq!(info_positions.len(), data.len());
    let mut u = vec![0u8; mother_len];
    for (&pos, &b) in info_positions.iter().zip(data) {
        u[pos] = b;
    }
    transform(&mut u);
    u
}

#[inline]
fn f_minsum(a: f64, b: f64) -> f64 {
    let m = a.abs().min(b.abs());
    if (a < 0.0) ^ (b < 0.0) {
        -m
    } else {
        m
    }
}

#[inline]
fn g_combine(a: f64, b: f64, left: u8) -> f64 {
    if left == 0 {
        b + a
    } else {
        b - a
    }
}

#[derive(Clone)]
struct Path {
    /// `llr[d]` holds the node LLRs at depth `d` (length `N >> d`).
    llr: Vec<Vec<f64>>,
    /// `left[d]` holds the re-encoded bits of the last finished left child at depth `d`.
    left: Vec<Vec<u8>>,
    u: Vec<u8>,
    metric: f64,
}

impl Path {
    fn new(channel: &[f64], depth: usize) -> Self {
        let n = channel.len();
        let mut llr = Vec::with_capacity(depth + 1);
        let mut left = Vec::with_capacity(depth + 1);
        for d in 0..=depth {
            llr.push(vec![0.0; n >> d]);
            left.push(vec![0u8; n >> d]);
        }
        llr[0].copy_from_slice(channel);
        Self { llr, left, u: Vec::with_capacity(n), metric: 0.0 }
    }

    /// Computes the leaf LLR for bit `i`, reusing nodes shared with bit `i - 1`.
    fn leaf_llr(&mut self, i: usize, depth: usize) -> f64 {
        let start = if i == 0 { 1 } else { depth - i.trailing_zeros() as usize };
        for d in start..=depth {
            let size = self.llr[d].len();
            let (upper, lower) = self.llr.split_at_mut(d);
            let parent = &upper[d - 1];
            let node = &mut lower[0];
            if (i >> (depth - d)) & 1 == 0 {
                for t in 0..size {
                    node[t] = f_minsum(parent[t], parent[t + size]);
                }
            } else {
                let partial = &self.left[d];
                for t in 0..size {
                    node[t] = g_combine(parent[t], parent[t + size], partial[t]);
                }
            }
        }
        self.llr[depth][0]
    }

    /// Records bit `i = b` and folds finished right children into their parents.
    fn commit(&mut self, i: usize, b: u8, depth: usize) {
        self.u.push(b);
        let mut cur = vec![b];
        let mut d = depth;
        while d >= 1 && (i >> (depth - d)) & 1 == 1 {
            let left = &self.left[d];
            let mut merged = Vec::with_capacity(cur.len() * 2);
            merged.extend(left.iter().zip(&cur).map(|(l, r)| l ^ r));
            merged.extend_from_slice(&cur);
            cur = merged;
            d -= 1;
        }
        if d >= 1 {
            self.left[d].copy_from_slice(&cur);
        }
    }
}

#[inline]
fn penalty(llr: f64, b: u8) -> f64 {
    let hard = u8::from(llr < 0.0);
    if hard == b {
        0.0
    } else {
        llr.abs()
    }
}

/// One surviving list candidate: decided `u` vector and its path metric.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub u: Vec<u8>,
    pub metric: f64,
}

/// SCL decoding. `frozen[i]` marks frozen positions (decided as zero).
/// Candidates are returned best (lowest metric) first.
pub fn scl_decode(channel: &[f64], frozen: &[bool], list_size: usize) -> Vec<Candidate> {
    let n = channel.len();
    assert!(n.is_power_of_two() && frozen.len() == n && list_size >= 1);
    let depth = n.trailing_zeros() as usize;
    let mut paths = vec![Path::new(channel, depth)];
    for i in 0..n {
        let leaves: Vec<f64> = paths.iter_mut().map(|p| p.leaf_llr(i, depth)).collect();
        if frozen[i] {
            for (p, &l) in paths.iter_mut().zip(&leaves) {
                p.metric += penalty(l, 0);
                p.commit(i, 0, depth);
            }
            continue;
        }
        let mut forks: Vec<(f64, usize, u8)> = Vec::with_capacity(paths.len() * 2);
        for (k, (p, &l)) in paths.iter().zip(&leaves).enumerate() {
            forks.push((p.metric + penalty(l, 0), k, 0));
            forks.push((p.metric + penalty(l, 1), k, 1));
        }
        forks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        forks.truncate(list_size);
        let mut uses = vec![0usize; paths.len()];
        for &(_, k, _) in &forks {
            uses[k] += 1;
        }
        let mut old: Vec<Option<Path>> = paths.into_iter().map(Some).collect();
        let mut next = Vec::with_capacity(forks.len());
        for &(metric, k, b) in &forks {
            uses[k] -= 1;
            let mut p = if uses[k] == 0 {
                old[k].take().expect("path consumed twice")
            } else {
                old[k].as_ref().expect("path consumed early").clone()
            };
            p.metric = metric;
            p.commit(i, b, depth);
            next.push(p);
        }
        paths = next;
    }
    let mut out: Vec<Candidate> = paths
        .into_iter()
        .map(|p| Candidate { u: p.u, metric: p.metric })
        .collect();
    out.sort_by(|a, b| a.metric.total_cmp(&b.metric));
    out
}
