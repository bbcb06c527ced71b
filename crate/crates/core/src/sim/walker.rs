use crate::stream::{MatrixSampler, PathRng};

/// State `(X_k, S_k)` of the Markov walk, advanced in place.
#[derive(Debug, Clone)]
pub(crate) struct Walker {
    pub x: Vec<f64>,
    next: Vec<f64>,
    pub s: f64,
}

impl Walker {
    pub fn new(x: &[f64], a: f64) -> Self {
        Self {
            x: x.to_vec(),
            next: vec![0.0; x.len()],
            s: a,
        }
    }

    pub fn reset(&mut self, x: &[f64], a: f64) {
        self.x.copy_from_slice(x);
        self.s = a;
    }

    /// Draws `g` and moves to `(g.X, S + rho(g, X))`; returns the increment.
    #[inline]
    pub fn step<L: MatrixSampler + ?Sized>(&mut self, law: &L, rng: &mut PathRng) -> f64 {
        let g = law.sample(rng);
        let rho = g.act_into(&self.x, &mut self.next);
        std::mem::swap(&mut self.x, &mut self.next);
        self.s += rho;
        rho
    }
}
