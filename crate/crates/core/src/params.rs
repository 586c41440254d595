//! Named parameter registry. Modules register their tensors under
//! dotted-path names; optimizers, checkpoints, and the gradient checker all
//! iterate the same registry, so insertion order is stable and names are
//! guaranteed unique.

use std::collections::HashMap;

use crate::tensor::{Scalar, Tensor};

pub struct ParamSet<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    /// Register a parameter. Names must be unique; a collision is a wiring
    /// bug in the module tree, so it panics rather than returning an error.
    pub fn push(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor.clone());
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn set_requires_grad(&self, value: bool) {
        for t in &self.tensors {
            t.set_requires_grad(value);
        }
    }

    pub fn zero_grads(&self) {
        for t in &self.tensors {
            t.zero_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_insertion_order_and_lookup() {
        let mut ps = ParamSet::<f64>::new();
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4]);
        ps.push("cnn.stem.weight", &a);
        ps.push("vit.stage1.pos", &b);
        assert_eq!(ps.len(), 2);
        assert_eq!(ps.total_elements(), 10);
        let names: Vec<&str> = ps.names().collect();
        assert_eq!(names, vec!["cnn.stem.weight", "vit.stage1.pos"]);
        assert_eq!(ps.get("vit.stage1.pos").unwrap().shape(), &[4]);
        assert!(ps.get("missing").is_none());
    }

    #[test]
    fn registry_shares_storage_with_module_tensors() {
        let mut ps = ParamSet::<f64>::new();
        let a = Tensor::zeros(vec![3]);
        ps.push("w", &a);
        ps.get("w").unwrap().data_mut()[1] = 5.0;
        assert_eq!(a.to_vec(), vec![0.0, 5.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut ps = ParamSet::<f64>::new();
        let a = Tensor::zeros(vec![1]);
        ps.push("w", &a);
        ps.push("w", &a);
    }
}
