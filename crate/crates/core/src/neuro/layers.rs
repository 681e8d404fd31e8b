use super::{
    matvec_add, matvec_t_add, outer_add, shape_error, Init, NeuroError, ParamId, ParamStore,
};

/// Lookup table. Rows are initialised uniformly in ±1/√dim.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rows: usize,
        dim: usize,
    ) -> Result<Self, NeuroError> {
        let table = store.add(name, &[rows, dim], Init::Uniform { fan_in: dim })?;
        Ok(Embedding { table, rows, dim })
    }

    pub fn lookup<'s>(&self, store: &'s ParamStore, row: usize) -> &'s [f64] {
        store.value(self.table).row(row)
    }

    pub fn accumulate(&self, store: &mut ParamStore, row: usize, grad: &[f64]) {
        let g = store.grad_mut(self.table).row_mut(row);
        for (a, b) in g.iter_mut().zip(grad) {
            *a += b;
        }
    }
}

/// Affine map `y = W x + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
    ) -> Result<Self, NeuroError> {
        let w = store.add(
            &format!("{name}.w"),
            &[output, input],
            Init::Uniform { fan_in: input },
        )?;
        let b = store.add(&format!("{name}.b"), &[output], Init::Zeros)?;
        Ok(Linear {
            w,
            b,
            input,
            output,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>, NeuroError> {
        if x.len() != self.input {
            return Err(shape_error("linear input", &[self.input], &[x.len()]));
        }
        let mut y = store.value(self.b).data().to_vec();
        matvec_add(store.value(self.w).data(), self.input, x, &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, store: &mut ParamStore, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.input];
        {
            let (w, gw) = store.value_and_grad(self.w);
            matvec_t_add(w.data(), self.input, dy, &mut dx);
            outer_add(gw.data_mut(), self.input, dy, x);
        }
        for (g, d) in store.grad_mut(self.b).data_mut().iter_mut().zip(dy) {
            *g += d;
        }
        dx
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Negative log-likelihood of `target` under `softmax(logits)` and its
/// gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(logits);
    let loss = -p[target].max(f64::MIN_POSITIVE).ln();
    p[target] -= 1.0;
    (loss, p)
}
