use std::cell::RefCell;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numcore::{Checkpoint, Graph, RngStream, Scalar, Tensor, Var};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named model parameters in creation order.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    decay: Vec<bool>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            decay: Vec::new(),
        }
    }
}

/// Builds parameters in a fixed order from one init stream.
pub(crate) struct Init<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    pub rng: RngStream,
}

impl<T: Scalar> Init<'_, T> {
    fn add(&mut self, name: String, tensor: Tensor<T>, decay: bool) -> ParamId {
        debug_assert!(!self.store.names.contains(&name), "duplicate parameter {name}");
        self.store.names.push(name);
        self.store.tensors.push(tensor);
        self.store.decay.push(decay);
        ParamId(self.store.names.len() - 1)
    }

    pub fn normal(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.normal_std(name, shape, INIT_STD)
    }

    pub fn normal_std(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64_lossy(self.rng.truncated_normal(std))).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("valid parameter shape");
        self.add(name, t, true)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape), false)
    }

    pub fn ones(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::ones(shape), false)
    }

    pub fn constant(&mut self, name: String, value: f64, decay: bool) -> ParamId {
        self.add(name, Tensor::from_f64(&[1], &[value]).expect("scalar"), decay)
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Whether weight decay applies (false for biases, norms and the temperature).
    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            ck.push(name, t);
        }
        ck
    }

    /// Replaces every parameter from `ck`.
    ///
    /// Names and shapes must match exactly; the error lists every difference.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        let mut diff = Vec::new();
        let expected: BTreeSet<&str> = self.names.iter().map(String::as_str).collect();
        for e in &ck.entries {
            if !expected.contains(e.name.as_str()) {
                diff.push(format!("unexpected tensor '{}' {:?}", e.name, e.shape));
            }
        }
        for (name, t) in self.names.iter().zip(&self.tensors) {
            match ck.get(name) {
                None => diff.push(format!("missing tensor '{name}' {:?}", t.shape())),
                Some(e) if e.shape != t.shape() => {
                    diff.push(format!("shape of '{name}': checkpoint {:?}, model {:?}", e.shape, t.shape()))
                }
                Some(_) => {}
            }
        }
        if !diff.is_empty() {
            return Err(Error::CheckpointMismatch(diff.join("\n")));
        }
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            *t = ck.tensor::<T>(name)?;
        }
        Ok(())
    }

    /// Same names and shapes, values converted to `U`.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            decay: self.decay.clone(),
        }
    }

    /// Attaches the store to a graph; parameters become leaves on first use.
    pub fn bind<'s>(&'s self, graph: &Graph<T>) -> Bound<'s, T> {
        Bound {
            store: self,
            graph: graph.clone(),
            vars: RefCell::new(vec![None; self.len()]),
            trainable: true,
        }
    }

    /// Like [`bind`](Self::bind) but parameters enter as constants.
    pub fn bind_frozen<'s>(&'s self, graph: &Graph<T>) -> Bound<'s, T> {
        Bound {
            trainable: false,
            ..self.bind(graph)
        }
    }
}

/// A [`ParamStore`] attached to one graph.
pub struct Bound<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    graph: Graph<T>,
    vars: RefCell<Vec<Option<Var<T>>>>,
    trainable: bool,
}

impl<T: Scalar> Bound<'_, T> {
    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn var(&self, id: ParamId) -> Var<T> {
        let mut vars = self.vars.borrow_mut();
        vars[id.0]
            .get_or_insert_with(|| {
                let t = self.store.get(id);
                if self.trainable {
                    self.graph.param(t)
                } else {
                    self.graph.constant(t)
                }
            })
            .clone()
    }

    /// Parameters touched so far.
    pub fn used(&self) -> Vec<ParamId> {
        self.vars
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.as_ref().map(|_| ParamId(i)))
            .collect()
    }

    /// Gradient per parameter after `backward`; untouched parameters get zeros.
    pub fn grads(&self) -> Vec<Tensor<T>> {
        let vars = self.vars.borrow();
        vars.iter()
            .zip(self.store.tensors())
            .map(|(v, t)| {
                v.as_ref()
                    .and_then(Var::grad)
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::site;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::default();
        let mut init = Init {
            store: &mut s,
            rng: RngStream::for_site(1, site::INIT, 0),
        };
        init.normal("a.weight".into(), &[2, 3]);
        init.zeros("a.bias".into(), &[3]);
        s
    }

    #[test]
    fn init_is_truncated_and_biases_zero() {
        let s = store();
        assert!(s.tensors()[0].data().iter().all(|v| v.abs() <= 0.04));
        assert!(s.tensors()[1].data().iter().all(|&v| v == 0.0));
        assert!(s.decays(ParamId(0)) && !s.decays(ParamId(1)));
    }

    #[test]
    fn checkpoint_roundtrip_and_diff() {
        let s = store();
        let ck = s.to_checkpoint();
        let mut other = store();
        other.tensors_mut()[0].data_mut()[0] = 9.0;
        other.load_checkpoint(&ck).unwrap();
        assert_eq!(other.tensors()[0], s.tensors()[0]);

        let mut bad = Checkpoint::new();
        bad.push("a.weight", &Tensor::<f64>::zeros(&[3, 2]));
        bad.push("z", &Tensor::<f64>::zeros(&[1]));
        let err = other.load_checkpoint(&bad).unwrap_err().to_string();
        assert!(err.contains("shape of 'a.weight'"), "{err}");
        assert!(err.contains("missing tensor 'a.bias'"), "{err}");
        assert!(err.contains("unexpected tensor 'z'"), "{err}");
    }

    #[test]
    fn lazy_binding_only_creates_used_leaves() {
        let s = store();
        let g = Graph::new();
        let b = s.bind(&g);
        let w = b.var(ParamId(0));
        let _ = b.var(ParamId(0));
        assert_eq!(g.len(), 1);
        assert_eq!(b.used(), vec![ParamId(0)]);
        w.sum().unwrap().backward().unwrap();
        let grads = b.grads();
        assert!(grads[0].data().iter().all(|&v| v == 1.0));
        assert!(grads[1].data().iter().all(|&v| v == 0.0));
    }
}
