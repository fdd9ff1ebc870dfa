use crate::error::{Error, Result};

/// Counts inversions of `v` (strict `>` pairs) by merge sort.
fn inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = inversions(&mut v[..mid], buf) + inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            count += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    count
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Kendall's tau-a, with tied pairs counted as neither concordant nor
/// discordant, in O(n log n).
pub fn kendall_tau(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!("length mismatch: {} vs {}", u.len(), v.len())));
    }
    let n = u.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two pairs".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(v[a].total_cmp(&v[b])));
    let su: Vec<f64> = idx.iter().map(|&i| u[i]).collect();
    let mut sv: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
    let n1 = tied_pairs(&su);
    // Pairs tied in both coordinates.
    let mut n3 = 0u64;
    let mut run = 1u64;
    for k in 1..n {
        if su[k] == su[k - 1] && sv[k] == sv[k - 1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;
    let mut buf = Vec::with_capacity(n);
    let swaps = inversions(&mut sv, &mut buf);
    let n2 = tied_pairs(&sv);
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let diff = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    Ok(diff / n0 as f64)
}
