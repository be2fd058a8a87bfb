use serde::{Deserialize, Serialize};

use super::{AutodiffError, DenseMatrix};

/// Which part of the bias-aware model a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Feature extractor of the main model.
    Backbone,
    /// Classification layer shared by the main and bias branches.
    Head,
    /// Projection of bias embeddings into the feature space.
    Projection,
}

impl Partition {
    /// Whether the parameter belongs to the main classifier (backbone + head).
    pub fn is_main(self) -> bool {
        matches!(self, Partition::Backbone | Partition::Head)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub partition: Partition,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
}

/// Flat collection of named parameters, each paired with a gradient buffer
/// of the same shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        partition: Partition,
        value: DenseMatrix,
    ) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(AutodiffError::Contract(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        let grad = DenseMatrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name,
            partition,
            value,
            grad,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Euclidean norm of the gradient restricted to parameters matching `filter`.
    pub fn grad_norm(&self, filter: impl Fn(Partition) -> bool) -> f64 {
        self.params
            .iter()
            .filter(|p| filter(p.partition))
            .flat_map(|p| p.grad.as_slice())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Concatenated parameter values in store order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.as_slice().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.grad.as_slice().iter().copied())
            .collect()
    }
}
