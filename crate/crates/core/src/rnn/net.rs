//! Forward and backward passes.
//!
//! GRU cell, gate blocks in the order update `z`, reset `r`, candidate `n`:
//!
//! ```text
//! a = U x + b            g = W h_prev
//! z = sigmoid(a_z + g_z)  r = sigmoid(a_r + g_r)
//! n = tanh(a_n + r * g_n)
//! h = (1 - z) * h_prev + z * n
//! ```
//!
//! Keeping the reset gate outside the recurrent product means `W h_prev`
//! is computed once per bin and shared by all of its arcs.

use super::{Layout, Pooling, Real, RnnError, RnnLmParams, Sequence};
use crate::text::TokenId;

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// `y += alpha * x`
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `y = M x` for row-major `M` with `y.len()` rows.
fn matvec<T: Real>(m: &[T], x: &[T], y: &mut [T]) {
    let cols = x.len();
    for (yi, row) in y.iter_mut().zip(m.chunks_exact(cols)) {
        *yi = dot(row, x);
    }
}

/// `y += M^T v`
fn matvec_t_acc<T: Real>(m: &[T], v: &[T], y: &mut [T]) {
    for (&vi, row) in v.iter().zip(m.chunks_exact(y.len())) {
        if vi != T::zero() {
            axpy(vi, row, y);
        }
    }
}

/// `M += a b^T`
fn outer_acc<T: Real>(m: &mut [T], a: &[T], b: &[T]) {
    for (&ai, row) in a.iter().zip(m.chunks_exact_mut(b.len())) {
        if ai != T::zero() {
            axpy(ai, b, row);
        }
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = logits.iter().fold(T::zero(), |s, &x| s + (x - max).exp());
    let lse = max + sum.ln();
    logits.iter().map(|&x| x - lse).collect()
}

/// Tolerance on the total mass of a target distribution.
const MASS_TOLERANCE: f64 = 1e-6;

/// `KL(p || q) = sum_j p_j (ln p_j - ln q_j)` for a sparse `p`.
pub fn kl_loss<T: Real>(p: &[(TokenId, f64)], log_q: &[T]) -> Result<T, RnnError> {
    let sum: f64 = p.iter().map(|&(_, pj)| pj).sum();
    if (sum - 1.0).abs() > MASS_TOLERANCE || p.iter().any(|&(_, pj)| !(pj >= 0.0)) {
        return Err(RnnError::NotNormalized { step: 0, sum });
    }
    if let Some(&(j, _)) = p.iter().find(|&&(j, _)| j as usize >= log_q.len()) {
        return Err(RnnError::BadTokenId(j));
    }
    Ok(p.iter()
        .filter(|&&(_, pj)| pj > 0.0)
        .fold(T::zero(), |s, &(j, pj)| {
            s + T::of(pj) * (T::of(pj.ln()) - log_q[j as usize])
        }))
}

/// One GRU transition. `u` and `w` are `3d x d`, `b` is `3d`.
pub fn gru_cell<T: Real>(u: &[T], w: &[T], b: &[T], h_prev: &[T], x: &[T]) -> Result<Vec<T>, RnnError> {
    let d = h_prev.len();
    assert_eq!(x.len(), d, "input and state sizes differ");
    if h_prev.iter().chain(x).any(|v| !v.is_finite()) {
        return Err(RnnError::NonFinite("GRU input".into()));
    }
    let mut g = vec![T::zero(); 3 * d];
    matvec(w, h_prev, &mut g);
    let arc = arc_forward(u, b, &g, h_prev, x, 0, T::one());
    if arc.h.iter().any(|v| !v.is_finite()) {
        return Err(RnnError::NonFinite("GRU state".into()));
    }
    Ok(arc.h)
}

#[derive(Debug, Clone)]
struct ArcState<T> {
    token: usize,
    weight: T,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
    h: Vec<T>,
}

fn arc_forward<T: Real>(u: &[T], b: &[T], g: &[T], h_prev: &[T], x: &[T], token: usize, weight: T) -> ArcState<T> {
    let d = h_prev.len();
    let mut a = b.to_vec();
    for (ai, row) in a.iter_mut().zip(u.chunks_exact(d)) {
        *ai = *ai + dot(row, x);
    }
    let z: Vec<T> = (0..d).map(|k| sigmoid(a[k] + g[k])).collect();
    let r: Vec<T> = (0..d).map(|k| sigmoid(a[d + k] + g[d + k])).collect();
    let n: Vec<T> = (0..d).map(|k| (a[2 * d + k] + r[k] * g[2 * d + k]).tanh()).collect();
    let h = (0..d)
        .map(|k| (T::one() - z[k]) * h_prev[k] + z[k] * n[k])
        .collect();
    ArcState {
        token,
        weight,
        z,
        r,
        n,
        h,
    }
}

/// Everything the forward pass computed for one step.
#[derive(Debug, Clone)]
pub struct PooledStep<T> {
    /// State entering the step.
    pub h_prev: Vec<T>,
    /// Pooled state leaving the step.
    pub h: Vec<T>,
    /// Log-probabilities of the next token.
    pub log_q: Vec<T>,
    g: Vec<T>,
    arcs: Vec<ArcState<T>>,
    /// Max pooling: arc supplying each component.
    argmax: Vec<usize>,
}

impl<T: Real> PooledStep<T> {
    /// State after each input arc, before pooling.
    pub fn arc_states(&self) -> impl Iterator<Item = &[T]> {
        self.arcs.iter().map(|a| a.h.as_slice())
    }

    /// Normalized pooling weights of the arcs.
    pub fn weights(&self) -> impl Iterator<Item = T> + '_ {
        self.arcs.iter().map(|a| a.weight)
    }
}

fn forward<T: Real>(p: &RnnLmParams<T>, seq: &Sequence, pooling: Pooling) -> Result<Vec<PooledStep<T>>, RnnError> {
    let Layout { vocab, dim: d } = p.layout();
    let (emb, u, w, b) = (p.embedding(), p.input_weights(), p.recurrent_weights(), p.bias());
    let mut h = vec![T::zero(); d];
    let mut out = Vec::with_capacity(seq.len());
    for (t, step) in seq.steps.iter().enumerate() {
        if step.arcs.is_empty() {
            return Err(RnnError::EmptyBin(t));
        }
        let mut g = vec![T::zero(); 3 * d];
        matvec(w, &h, &mut g);
        let total: f64 = step.arcs.iter().map(|&(_, s)| s).sum();
        if pooling == Pooling::WeightedMean && !(total > 0.0) {
            return Err(RnnError::NotNormalized { step: t, sum: total });
        }
        let mut arcs = Vec::with_capacity(step.arcs.len());
        for &(tok, score) in &step.arcs {
            let tok = tok as usize;
            if tok >= vocab {
                return Err(RnnError::BadTokenId(tok as TokenId));
            }
            let weight = match pooling {
                Pooling::WeightedMean => T::of(score / total),
                Pooling::Mean | Pooling::Max => T::of(1.0 / step.arcs.len() as f64),
            };
            let x = &emb[tok * d..(tok + 1) * d];
            arcs.push(arc_forward(u, b, &g, &h, x, tok, weight));
        }
        let mut pooled = vec![T::zero(); d];
        let mut argmax = Vec::new();
        match pooling {
            Pooling::WeightedMean | Pooling::Mean => {
                for a in &arcs {
                    axpy(a.weight, &a.h, &mut pooled);
                }
            }
            Pooling::Max => {
                argmax = vec![0; d];
                for k in 0..d {
                    let mut best = 0;
                    for (i, a) in arcs.iter().enumerate().skip(1) {
                        if a.h[k] > arcs[best].h[k] {
                            best = i;
                        }
                    }
                    argmax[k] = best;
                    pooled[k] = arcs[best].h[k];
                }
            }
        }
        let mut logits = vec![T::zero(); vocab];
        matvec(emb, &pooled, &mut logits);
        let log_q = log_softmax(&logits);
        if log_q.iter().any(|v| v.is_nan()) {
            return Err(RnnError::NonFinite(format!("output distribution at step {t}")));
        }
        for &(j, _) in &step.target {
            if j as usize >= vocab {
                return Err(RnnError::BadTokenId(j));
            }
        }
        out.push(PooledStep {
            h_prev: std::mem::replace(&mut h, pooled.clone()),
            h: pooled,
            log_q,
            g,
            arcs,
            argmax,
        });
    }
    Ok(out)
}

/// Runs a sentence (token ids, without `<s>`/`</s>`) through the network.
pub fn forward_text<T: Real>(p: &RnnLmParams<T>, ids: &[TokenId]) -> Result<Vec<PooledStep<T>>, RnnError> {
    forward(p, &Sequence::from_text(ids), Pooling::WeightedMean)
}

/// Runs a network-derived sequence through the network, pooling each bin's
/// arc states.
pub fn forward_cn<T: Real>(p: &RnnLmParams<T>, seq: &Sequence, pooling: Pooling) -> Result<Vec<PooledStep<T>>, RnnError> {
    forward(p, seq, pooling)
}

/// Summed KL loss of `seq`; its gradient is added to `grad` (laid out like
/// the flat parameter buffer).
pub fn loss_and_grad<T: Real>(p: &RnnLmParams<T>, seq: &Sequence, pooling: Pooling, grad: &mut [T]) -> Result<T, RnnError> {
    let layout = p.layout();
    assert_eq!(grad.len(), layout.total(), "gradient buffer size");
    let steps = forward(p, seq, pooling)?;
    let d = layout.dim;
    let (emb, u, w) = (p.embedding(), p.input_weights(), p.recurrent_weights());
    let (g_emb, rest) = grad.split_at_mut(layout.input().start);
    let (g_u, rest) = rest.split_at_mut(3 * d * d);
    let (g_w, g_b) = rest.split_at_mut(3 * d * d);

    let mut loss = T::zero();
    let mut dh_next = vec![T::zero(); d];
    let mut dlogits = vec![T::zero(); layout.vocab];
    for (t, (st, step)) in steps.iter().zip(&seq.steps).enumerate().rev() {
        loss = loss
            + kl_loss(&step.target, &st.log_q).map_err(|e| match e {
                RnnError::NotNormalized { sum, .. } => RnnError::NotNormalized { step: t, sum },
                e => e,
            })?;

        for (dl, &lq) in dlogits.iter_mut().zip(&st.log_q) {
            *dl = lq.exp();
        }
        for &(j, pj) in &step.target {
            dlogits[j as usize] = dlogits[j as usize] - T::of(pj);
        }
        let mut dh = dh_next;
        matvec_t_acc(emb, &dlogits, &mut dh);
        outer_acc(g_emb, &dlogits, &st.h);

        let mut dg = vec![T::zero(); 3 * d];
        let mut dh_prev = vec![T::zero(); d];
        let mut dhi = vec![T::zero(); d];
        let mut da = vec![T::zero(); 3 * d];
        for (i, arc) in st.arcs.iter().enumerate() {
            match pooling {
                Pooling::WeightedMean | Pooling::Mean => {
                    for k in 0..d {
                        dhi[k] = arc.weight * dh[k];
                    }
                }
                Pooling::Max => {
                    for k in 0..d {
                        dhi[k] = if st.argmax[k] == i { dh[k] } else { T::zero() };
                    }
                }
            }
            let one = T::one();
            for k in 0..d {
                let (z, r, n) = (arc.z[k], arc.r[k], arc.n[k]);
                let dz = dhi[k] * (n - st.h_prev[k]);
                let dn_pre = dhi[k] * z * (one - n * n);
                dh_prev[k] = dh_prev[k] + dhi[k] * (one - z);
                let dz_pre = dz * z * (one - z);
                let dr_pre = dn_pre * st.g[2 * d + k] * r * (one - r);
                da[k] = dz_pre;
                da[d + k] = dr_pre;
                da[2 * d + k] = dn_pre;
                dg[k] = dg[k] + dz_pre;
                dg[d + k] = dg[d + k] + dr_pre;
                dg[2 * d + k] = dg[2 * d + k] + dn_pre * r;
            }
            let x = &emb[arc.token * d..(arc.token + 1) * d];
            outer_acc(g_u, &da, x);
            axpy(T::one(), &da, g_b);
            matvec_t_acc(u, &da, &mut g_emb[arc.token * d..(arc.token + 1) * d]);
        }
        outer_acc(g_w, &dg, &st.h_prev);
        matvec_t_acc(w, &dg, &mut dh_prev);
        dh_next = dh_prev;
    }
    if !loss.is_finite() {
        return Err(RnnError::NonFinite("loss".into()));
    }
    Ok(loss)
}

/// Largest relative difference between the analytic gradient of the summed
/// loss over `seqs` and central finite differences, over the parameters
/// listed in `indices` (all parameters when `None`).
pub fn gradient_check(
    p: &RnnLmParams<f64>,
    seqs: &[Sequence],
    pooling: Pooling,
    eps: f64,
    indices: Option<&[usize]>,
) -> Result<f64, RnnError> {
    let total = p.as_slice().len();
    let mut grad = vec![0.0; total];
    for s in seqs {
        loss_and_grad(p, s, pooling, &mut grad)?;
    }
    let loss = |q: &RnnLmParams<f64>| -> Result<f64, RnnError> {
        let mut scratch = vec![0.0; total];
        seqs.iter().map(|s| loss_and_grad(q, s, pooling, &mut scratch)).sum()
    };
    let all: Vec<usize> = (0..total).collect();
    let mut q = p.clone();
    let mut worst = 0.0f64;
    for &i in indices.unwrap_or(&all) {
        let orig = q.as_slice()[i];
        q.as_mut_slice()[i] = orig + eps;
        let up = loss(&q)?;
        q.as_mut_slice()[i] = orig - eps;
        let down = loss(&q)?;
        q.as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grad[i];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
