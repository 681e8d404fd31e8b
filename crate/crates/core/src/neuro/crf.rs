#![allow(clippy::needless_range_loop)]

use super::{log_sum_exp, shape_error, Init, NeuroError, ParamId, ParamStore, Tensor};

/// Linear-chain CRF potentials. Disallowed transitions hold `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Crf {
    pub tags: usize,
    /// `trans[from * tags + to]`
    pub trans: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl Crf {
    pub fn new(
        tags: usize,
        trans: Vec<f64>,
        start: Vec<f64>,
        stop: Vec<f64>,
    ) -> Result<Self, NeuroError> {
        if trans.len() != tags * tags {
            return Err(shape_error(
                "crf transitions",
                &[tags, tags],
                &[trans.len()],
            ));
        }
        if start.len() != tags || stop.len() != tags {
            return Err(shape_error(
                "crf start/stop",
                &[tags],
                &[start.len().min(stop.len())],
            ));
        }
        Ok(Crf {
            tags,
            trans,
            start,
            stop,
        })
    }

    pub fn zeros(tags: usize) -> Self {
        Crf {
            tags,
            trans: vec![0.0; tags * tags],
            start: vec![0.0; tags],
            stop: vec![0.0; tags],
        }
    }

    fn check(&self, emissions: &Tensor) -> Result<usize, NeuroError> {
        let shape = emissions.shape();
        if shape.len() != 2 || shape[1] != self.tags || shape[0] == 0 {
            return Err(shape_error(
                "crf emissions",
                &[shape.first().copied().unwrap_or(0).max(1), self.tags],
                shape,
            ));
        }
        Ok(shape[0])
    }

    #[inline]
    fn t(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.tags + to]
    }

    pub fn path_score(&self, emissions: &Tensor, path: &[usize]) -> f64 {
        let mut s = self.start[path[0]] + self.stop[path[path.len() - 1]];
        for (i, &y) in path.iter().enumerate() {
            s += emissions.get2(i, y);
            if i > 0 {
                s += self.t(path[i - 1], y);
            }
        }
        s
    }

    fn alphas(&self, emissions: &Tensor, len: usize) -> Vec<Vec<f64>> {
        let n = self.tags;
        let mut alpha = Vec::with_capacity(len);
        alpha.push(
            (0..n)
                .map(|y| self.start[y] + emissions.get2(0, y))
                .collect::<Vec<_>>(),
        );
        let mut buf = vec![0.0; n];
        for i in 1..len {
            let prev = &alpha[i - 1];
            let cur: Vec<f64> = (0..n)
                .map(|y| {
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b = prev[k] + self.t(k, y);
                    }
                    log_sum_exp(&buf) + emissions.get2(i, y)
                })
                .collect();
            alpha.push(cur);
        }
        alpha
    }

    fn betas(&self, emissions: &Tensor, len: usize) -> Vec<Vec<f64>> {
        let n = self.tags;
        let mut beta = vec![Vec::new(); len];
        beta[len - 1] = self.stop.clone();
        let mut buf = vec![0.0; n];
        for i in (0..len - 1).rev() {
            let next = &beta[i + 1];
            beta[i] = (0..n)
                .map(|y| {
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b = self.t(y, k) + emissions.get2(i + 1, k) + next[k];
                    }
                    log_sum_exp(&buf)
                })
                .collect();
        }
        beta
    }

    /// `log Σ_paths exp(score)` by the forward algorithm in log space.
    pub fn log_partition(&self, emissions: &Tensor) -> Result<f64, NeuroError> {
        let len = self.check(emissions)?;
        let alpha = self.alphas(emissions, len);
        let last: Vec<f64> = alpha[len - 1]
            .iter()
            .zip(&self.stop)
            .map(|(a, s)| a + s)
            .collect();
        Ok(log_sum_exp(&last))
    }

    /// Highest-scoring path. Ties go to the lowest tag at the latest
    /// position where tied paths differ.
    pub fn viterbi(&self, emissions: &Tensor) -> Result<(Vec<usize>, f64), NeuroError> {
        let len = self.check(emissions)?;
        let n = self.tags;
        let mut delta: Vec<f64> = (0..n)
            .map(|y| self.start[y] + emissions.get2(0, y))
            .collect();
        let mut back = vec![vec![0usize; n]; len];
        for i in 1..len {
            let mut next = vec![f64::NEG_INFINITY; n];
            for y in 0..n {
                let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
                for (k, d) in delta.iter().enumerate() {
                    let v = d + self.t(k, y);
                    if v > best {
                        best = v;
                        arg = k;
                    }
                }
                next[y] = best + emissions.get2(i, y);
                back[i][y] = arg;
            }
            delta = next;
        }
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
        for y in 0..n {
            let v = delta[y] + self.stop[y];
            if v > best {
                best = v;
                arg = y;
            }
        }
        let mut path = vec![arg; len];
        for i in (1..len).rev() {
            path[i - 1] = back[i][path[i]];
        }
        Ok((path, best))
    }

    /// Negative log-likelihood of `gold` with gradients on emissions,
    /// transitions, start and stop (in that order).
    pub fn nll(&self, emissions: &Tensor, gold: &[usize]) -> Result<(f64, NllGrad), NeuroError> {
        let len = self.check(emissions)?;
        if gold.len() != len {
            return Err(shape_error("crf gold path", &[len], &[gold.len()]));
        }
        let n = self.tags;
        let alpha = self.alphas(emissions, len);
        let beta = self.betas(emissions, len);
        let z = log_sum_exp(
            &alpha[len - 1]
                .iter()
                .zip(&self.stop)
                .map(|(a, s)| a + s)
                .collect::<Vec<_>>(),
        );
        let loss = z - self.path_score(emissions, gold);
        let mut g = NllGrad {
            emissions: Tensor::zeros(&[len, n]),
            trans: vec![0.0; n * n],
            start: vec![0.0; n],
            stop: vec![0.0; n],
        };
        for i in 0..len {
            for y in 0..n {
                let p = (alpha[i][y] + beta[i][y] - z).exp();
                g.emissions.row_mut(i)[y] = p;
                if i == 0 {
                    g.start[y] = p;
                }
                if i == len - 1 {
                    g.stop[y] = p;
                }
            }
            if i + 1 < len {
                for a in 0..n {
                    if alpha[i][a] == f64::NEG_INFINITY {
                        continue;
                    }
                    for b in 0..n {
                        let t = self.t(a, b);
                        if t == f64::NEG_INFINITY {
                            continue;
                        }
                        g.trans[a * n + b] +=
                            (alpha[i][a] + t + emissions.get2(i + 1, b) + beta[i + 1][b] - z).exp();
                    }
                }
            }
        }
        for (i, &y) in gold.iter().enumerate() {
            g.emissions.row_mut(i)[y] -= 1.0;
            if i > 0 {
                g.trans[gold[i - 1] * n + y] -= 1.0;
            }
        }
        g.start[gold[0]] -= 1.0;
        g.stop[gold[len - 1]] -= 1.0;
        Ok((loss, g))
    }
}

pub struct NllGrad {
    pub emissions: Tensor,
    pub trans: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

/// Allowed transitions for BIO tags laid out as `O, B-0, I-0, B-1, I-1, …`:
/// `I-t` may only follow `B-t` or `I-t` and may not start a sequence.
/// Returns `(transition mask, start mask)`.
pub fn bio_mask(types: usize) -> (Vec<bool>, Vec<bool>) {
    let n = 1 + 2 * types;
    let is_inside = |tag: usize| tag > 0 && tag.is_multiple_of(2);
    let type_of = |tag: usize| (tag - 1) / 2;
    let mut trans = vec![true; n * n];
    for from in 0..n {
        for to in 0..n {
            if is_inside(to) && (from == 0 || type_of(from) != type_of(to)) {
                trans[from * n + to] = false;
            }
        }
    }
    let start = (0..n).map(|t| !is_inside(t)).collect();
    (trans, start)
}

/// Trainable CRF with a fixed structural mask.
#[derive(Debug, Clone)]
pub struct CrfLayer {
    pub trans: ParamId,
    pub start: ParamId,
    pub stop: ParamId,
    pub tags: usize,
    trans_mask: Vec<bool>,
    start_mask: Vec<bool>,
}

impl CrfLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        tags: usize,
        trans_mask: Vec<bool>,
        start_mask: Vec<bool>,
    ) -> Result<Self, NeuroError> {
        if trans_mask.len() != tags * tags || start_mask.len() != tags {
            return Err(shape_error("crf mask", &[tags, tags], &[trans_mask.len()]));
        }
        Ok(CrfLayer {
            trans: store.add(&format!("{name}.trans"), &[tags, tags], Init::Zeros)?,
            start: store.add(&format!("{name}.start"), &[tags], Init::Zeros)?,
            stop: store.add(&format!("{name}.stop"), &[tags], Init::Zeros)?,
            tags,
            trans_mask,
            start_mask,
        })
    }

    pub fn potentials(&self, store: &ParamStore) -> Crf {
        let mask = |v: &[f64], m: &[bool]| -> Vec<f64> {
            v.iter()
                .zip(m)
                .map(|(&x, &ok)| if ok { x } else { f64::NEG_INFINITY })
                .collect()
        };
        Crf {
            tags: self.tags,
            trans: mask(store.value(self.trans).data(), &self.trans_mask),
            start: mask(store.value(self.start).data(), &self.start_mask),
            stop: store.value(self.stop).data().to_vec(),
        }
    }

    /// Loss and `dL/d emissions`; accumulates gradients on the CRF parameters.
    pub fn nll(
        &self,
        store: &mut ParamStore,
        emissions: &Tensor,
        gold: &[usize],
    ) -> Result<(f64, Tensor), NeuroError> {
        let (loss, g) = self.potentials(store).nll(emissions, gold)?;
        if !loss.is_finite() {
            return Err(NeuroError::NonFinite(
                "crf loss (gold path violates the mask?)".into(),
            ));
        }
        for (dst, src) in [
            (self.trans, &g.trans),
            (self.start, &g.start),
            (self.stop, &g.stop),
        ] {
            for (a, b) in store.grad_mut(dst).data_mut().iter_mut().zip(src) {
                *a += b;
            }
        }
        Ok((loss, g.emissions))
    }

    pub fn decode(&self, store: &ParamStore, emissions: &Tensor) -> Result<Vec<usize>, NeuroError> {
        Ok(self.potentials(store).viterbi(emissions)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_potentials() {
        let crf = Crf::zeros(2);
        let e1 = Tensor::zeros(&[1, 2]);
        assert!((crf.log_partition(&e1).unwrap() - 2f64.ln()).abs() < 1e-15);
        let e2 = Tensor::zeros(&[2, 2]);
        assert!((crf.log_partition(&e2).unwrap() - 4f64.ln()).abs() < 1e-15);
        let (path, score) = Crf::zeros(3).viterbi(&Tensor::zeros(&[4, 3])).unwrap();
        assert_eq!((path, score), (vec![0; 4], 0.0));
    }

    #[test]
    fn zero_transitions_decode_per_position() {
        let e =
            Tensor::from_vec(&[3, 3], vec![0.1, 0.9, 0.2, 1.0, -1.0, 0.0, 0.0, 0.3, 0.7]).unwrap();
        assert_eq!(Crf::zeros(3).viterbi(&e).unwrap().0, vec![1, 0, 2]);
    }

    #[test]
    fn empty_emissions_rejected() {
        assert!(Crf::zeros(2)
            .log_partition(&Tensor::zeros(&[0, 2]))
            .is_err());
        assert!(Crf::zeros(2).viterbi(&Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    #[allow(clippy::identity_op, clippy::erasing_op)]
    fn bio_mask_layout() {
        let (t, s) = bio_mask(2);
        // O, B0, I0, B1, I1
        assert_eq!(s, vec![true, true, false, true, false]);
        assert!(t[1 * 5 + 2] && t[2 * 5 + 2]);
        assert!(!t[0 * 5 + 2] && !t[3 * 5 + 2] && !t[2 * 5 + 4]);
    }
}
