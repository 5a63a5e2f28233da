use super::{AutodiffError, Graph, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors, kept in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, value));
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn index_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|id| &mut self.entries[id.0].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Places every parameter on the graph as a leaf; the returned handles are
    /// indexed by `ParamId`.
    pub fn attach(&self, graph: &mut Graph) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| graph.leaf(t.clone())).collect()
    }

    pub(crate) fn push_raw(&mut self, name: String, value: Tensor) {
        self.entries.push((name, value));
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to the i-th registered parameter.
    ///
    /// Gradients are checked for finiteness before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<(), AutodiffError> {
        if grads.len() != params.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adamw",
                detail: format!("{} gradients for {} parameters", grads.len(), params.len()),
            });
        }
        for (id, g) in params.ids().zip(grads) {
            if g.len() != params.get(id).len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adamw",
                    detail: format!("gradient {:?} for parameter {}", g.shape(), params.name(id)),
                });
            }
            if !g.all_finite() {
                return Err(AutodiffError::NonFiniteGradient {
                    param: params.name(id).to_string(),
                });
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let theta = params.get_mut(id).data_mut();
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            for (j, &g) in grads[i].data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                theta[j] = theta[j] * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
