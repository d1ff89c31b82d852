//! Textbook formulations written with plain loops: prediction vectors are
//! materialized for every (child, parent) pair and nothing is vectorized.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squash(c: &[f64]) -> Vec<f64> {
    let n2 = dot(c, c);
    if n2 == 0.0 {
        return vec![0.0; c.len()];
    }
    let n = n2.sqrt();
    c.iter().map(|x| n2 / (1.0 + n2) * x / n).collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn mat_vec(w: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    w.iter().map(|row| dot(row, x)).collect()
}

/// Generic dynamic routing over explicit predictions `uhat[i][j]`.
pub fn dynamic_routing(uhat: &[Vec<Vec<f64>>], iterations: usize) -> Vec<Vec<f64>> {
    let b = uhat.len();
    let a = uhat[0].len();
    let d = uhat[0][0].len();
    let mut logits = vec![vec![0.0; a]; b];
    let mut v = vec![vec![0.0; d]; a];
    for _ in 0..iterations {
        let coupling: Vec<Vec<f64>> = logits.iter().map(|row| softmax(row)).collect();
        for j in 0..a {
            let mut s = vec![0.0; d];
            for i in 0..b {
                for k in 0..d {
                    s[k] += coupling[i][j] * uhat[i][j][k];
                }
            }
            v[j] = squash(&s);
        }
        for i in 0..b {
            for j in 0..a {
                logits[i][j] += dot(&uhat[i][j], &v[j]);
            }
        }
    }
    v
}

/// `w[j]` is the `D_sc x D_pvc` matrix of parent `j`.
pub fn drsw(u: &[Vec<f64>], w: &[Vec<Vec<f64>>], iterations: usize) -> Vec<Vec<f64>> {
    let uhat: Vec<Vec<Vec<f64>>> = u
        .iter()
        .map(|ui| w.iter().map(|wj| mat_vec(wj, ui)).collect())
        .collect();
    dynamic_routing(&uhat, iterations)
}

/// `w[i][j]` is the `D_cc x D_sc` matrix of the pair (i, j).
pub fn cc(x: &[Vec<f64>], w: &[Vec<Vec<Vec<f64>>>], iterations: usize) -> Vec<Vec<f64>> {
    let uhat: Vec<Vec<Vec<f64>>> = x
        .iter()
        .zip(w)
        .map(|(xi, wi)| wi.iter().map(|wij| mat_vec(wij, xi)).collect())
        .collect();
    dynamic_routing(&uhat, iterations)
}

/// Variable-to-static routing with zero padding when `b < a`.
pub fn vts(u: &[Vec<f64>], iterations: usize, a: usize) -> Vec<Vec<f64>> {
    let d = u.first().map_or(0, |r| r.len());
    let mut idx: Vec<usize> = (0..u.len()).collect();
    // selection sort: descending norm, lower index first on ties
    for p in 0..idx.len() {
        let mut best = p;
        for q in p + 1..idx.len() {
            let (nq, nb) = (dot(&u[idx[q]], &u[idx[q]]), dot(&u[idx[best]], &u[idx[best]]));
            if nq > nb || (nq == nb && idx[q] < idx[best]) {
                best = q;
            }
        }
        idx.swap(p, best);
    }
    let live = a.min(u.len());
    let mut v: Vec<Vec<f64>> = idx[..live].iter().map(|&i| u[i].clone()).collect();
    let mut logits = vec![vec![0.0; live]; u.len()];
    for _ in 0..iterations {
        for (i, ui) in u.iter().enumerate() {
            for j in 0..live {
                logits[i][j] += dot(ui, &v[j]);
            }
        }
        let coupling: Vec<Vec<f64>> = logits.iter().map(|row| softmax(row)).collect();
        for j in 0..live {
            let mut s = vec![0.0; d];
            for (i, ui) in u.iter().enumerate() {
                for k in 0..d {
                    s[k] += coupling[i][j] * ui[k];
                }
            }
            v[j] = squash(&s);
        }
    }
    v.resize(a, vec![0.0; d]);
    v
}

/// One depth-2 window convolution evaluated node by node, with the
/// interpolation weights computed inline.
pub fn conv(
    children: &[Vec<usize>],
    x: &[Vec<f64>],
    w_top: &[Vec<f64>],
    w_left: &[Vec<f64>],
    w_right: &[Vec<f64>],
    bias: &[f64],
) -> Vec<Vec<f64>> {
    let d = bias.len();
    children
        .iter()
        .enumerate()
        .map(|(v, kids)| {
            let mut z = bias.to_vec();
            let top = mat_vec(w_top, &x[v]);
            for k in 0..d {
                z[k] += top[k];
            }
            let n = kids.len();
            for (p, &c) in kids.iter().enumerate() {
                let er = if n == 1 { 0.5 } else { p as f64 / (n - 1) as f64 };
                let el = 1.0 - er;
                let l = mat_vec(w_left, &x[c]);
                let r = mat_vec(w_right, &x[c]);
                for k in 0..d {
                    z[k] += el * l[k] + er * r[k];
                }
            }
            z.iter().map(|s| s.tanh()).collect()
        })
        .collect()
}
