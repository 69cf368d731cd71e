//! Scalar reverse-mode tape for small expressions outside the layer stack.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
struct Node {
    value: f64,
    /// `(parent, ∂self/∂parent)` pairs.
    parents: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: f64, parents: Vec<(usize, f64)>) -> Var {
        self.nodes.push(Node { value, parents });
        Var(self.nodes.len() - 1)
    }

    /// Leaf (input or constant).
    pub fn var(&mut self, value: f64) -> Var {
        self.push(value, Vec::new())
    }

    pub fn value(&self, v: Var) -> f64 {
        self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(self.value(a) + self.value(b), vec![(a.0, 1.0), (b.0, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(self.value(a) - self.value(b), vec![(a.0, 1.0), (b.0, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x * y, vec![(a.0, y), (b.0, x)])
    }

    /// `k·a + c`.
    pub fn affine(&mut self, a: Var, k: f64, c: f64) -> Var {
        self.push(k * self.value(a) + c, vec![(a.0, k)])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let e = self.value(a).exp();
        self.push(e, vec![(a.0, e)])
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let v = xs.iter().map(|&x| self.value(x)).sum();
        self.push(v, xs.iter().map(|x| (x.0, 1.0)).collect())
    }

    /// `Σ_i w_i·x_i` with constant weights.
    pub fn weighted_sum(&mut self, xs: &[Var], w: &[f64]) -> Var {
        let v = xs.iter().zip(w).map(|(&x, &w)| w * self.value(x)).sum();
        self.push(v, xs.iter().zip(w).map(|(x, &w)| (x.0, w)).collect())
    }

    /// Stable `log Σ exp(x_i)`.
    pub fn logsumexp(&mut self, xs: &[Var]) -> Var {
        let vals: Vec<f64> = xs.iter().map(|&x| self.value(x)).collect();
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = vals.iter().map(|v| (v - m).exp()).sum();
        let out = m + s.ln();
        let parents = xs
            .iter()
            .zip(&vals)
            .map(|(x, v)| (x.0, (v - out).exp()))
            .collect();
        self.push(out, parents)
    }

    /// Gradients of the seeded outputs wrt every node, seeds given as `(var, ∂L/∂var)`.
    pub fn backward(&self, seeds: &[(Var, f64)]) -> Vec<f64> {
        let mut grad = vec![0.0; self.nodes.len()];
        for &(v, g) in seeds {
            grad[v.0] += g;
        }
        for i in (0..self.nodes.len()).rev() {
            let g = grad[i];
            if g == 0.0 {
                continue;
            }
            for &(p, d) in &self.nodes[i].parents {
                grad[p] += g * d;
            }
        }
        grad
    }

    pub fn grad_of(grads: &[f64], v: Var) -> f64 {
        grads[v.0]
    }
}
