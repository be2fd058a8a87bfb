use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{AutodiffError, DenseMatrix, NodeId, ParamId, ParameterStore, Partition, Tape};

/// How a dense layer's weights are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `N(0, 2 / fan_in)`, for layers followed by a ReLU.
    He,
    /// `N(0, 1 / fan_in)`, for linear outputs.
    LeCun,
    Zeros,
}

/// Fully connected layer `y = x·Wᵀ + b` with `W: out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        partition: Partition,
        in_dim: usize,
        out_dim: usize,
        with_bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let std = match init {
            Init::He => (2.0 / in_dim as f64).sqrt(),
            Init::LeCun => (1.0 / in_dim as f64).sqrt(),
            Init::Zeros => 0.0,
        };
        let values: Vec<f64> = if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect()
        } else {
            vec![0.0; in_dim * out_dim]
        };
        let weight = store.add(
            format!("{name}.weight"),
            partition,
            DenseMatrix::from_vec(out_dim, in_dim, values)?,
        )?;
        let bias = if with_bias {
            Some(store.add(
                format!("{name}.bias"),
                partition,
                DenseMatrix::zeros(1, out_dim),
            )?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        input: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let w = tape.param(store, self.weight);
        let y = tape.linear(input, w)?;
        match self.bias {
            Some(b) => {
                let bn = tape.param(store, b);
                tape.add_row(y, bn)
            }
            None => Ok(y),
        }
    }

    /// Applies only the weight matrix, skipping the bias.
    pub fn forward_weight_only(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        input: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let w = tape.param(store, self.weight);
        tape.linear(input, w)
    }
}

/// Stack of dense layers with ReLU between consecutive layers. When
/// `relu_after_last` is set the final layer is followed by a ReLU too, which
/// is how a feature extractor ends; a classifier output stays linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub relu_after_last: bool,
}

impl Mlp {
    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.in_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.out_dim)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        input: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let mut h = input;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let got = tape.value(h).cols();
            if got != layer.in_dim {
                return Err(AutodiffError::Shape(format!(
                    "layer {i}: expected {} inputs, got {got}",
                    layer.in_dim
                )));
            }
            h = layer.forward(tape, store, h)?;
            if i + 1 < n || self.relu_after_last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Builds an MLP over `dims = [in, h1, ..., out]` with He initialization.
pub fn build_mlp<R: Rng + ?Sized>(
    store: &mut ParameterStore,
    prefix: &str,
    partition: Partition,
    dims: &[usize],
    relu_after_last: bool,
    rng: &mut R,
) -> Result<Mlp, AutodiffError> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(AutodiffError::Shape(format!(
            "mlp needs at least two positive dims, got {dims:?}"
        )));
    }
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            Dense::new(
                store,
                &format!("{prefix}.{i}"),
                partition,
                w[0],
                w[1],
                true,
                Init::He,
                rng,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Mlp {
        layers,
        relu_after_last,
    })
}

/// Forward pass of `mlp` on a batch of rows without keeping the tape.
pub fn mlp_forward(
    mlp: &Mlp,
    store: &ParameterStore,
    x: &DenseMatrix,
) -> Result<DenseMatrix, AutodiffError> {
    let mut tape = Tape::new();
    let input = tape.constant(x.clone());
    let out = mlp.forward(&mut tape, store, input)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_gives_zero_output() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l0 = Dense::new(
            &mut store,
            "a",
            Partition::Backbone,
            3,
            4,
            true,
            Init::Zeros,
            &mut rng,
        )
        .unwrap();
        let l1 = Dense::new(
            &mut store,
            "b",
            Partition::Backbone,
            4,
            2,
            true,
            Init::Zeros,
            &mut rng,
        )
        .unwrap();
        let mlp = Mlp {
            layers: vec![l0, l1],
            relu_after_last: false,
        };
        let x = DenseMatrix::row_vector(&[1.0, -2.0, 3.0]).unwrap();
        let y = mlp_forward(&mlp, &store, &x).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Dense::new(
            &mut store,
            "id",
            Partition::Backbone,
            3,
            3,
            true,
            Init::Zeros,
            &mut rng,
        )
        .unwrap();
        let w = &mut store.get_mut(l.weight).value;
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        let mlp = Mlp {
            layers: vec![l],
            relu_after_last: false,
        };
        let x = DenseMatrix::row_vector(&[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(mlp_forward(&mlp, &store, &x).unwrap(), x);
    }

    #[test]
    fn shape_mismatch_reports_layer_index() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = build_mlp(
            &mut store,
            "m",
            Partition::Backbone,
            &[2, 4, 1],
            false,
            &mut rng,
        )
        .unwrap();
        let x = DenseMatrix::row_vector(&[1.0, 2.0, 3.0]).unwrap();
        let err = mlp_forward(&mlp, &store, &x).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }
}
