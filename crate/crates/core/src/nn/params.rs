use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Kaiming-uniform for leaky-ReLU(0.1) fan-in, multiplied by `scale`.
    Kaiming {
        scale: f64,
    },
    Zero,
    /// Identity map; only for square `[c, c, 1, 1]` weights.
    Identity,
}

pub const LEAKY_SLOPE: f64 = 0.1;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(!self.entries.contains_key(name), "duplicate parameter {name}");
        let (idx, _) = self
            .entries
            .insert_full(name.to_string(), Param { value, trainable: true });
        ParamId(idx)
    }

    pub fn add_init(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut impl Rng) -> ParamId {
        let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
        let t = match init {
            Init::Zero => Tensor::zeros(shape),
            Init::Identity => {
                assert!(shape.len() == 4 && shape[0] == shape[1] && shape[2] == 1 && shape[3] == 1);
                let mut t = Tensor::zeros(shape);
                for i in 0..shape[0] {
                    t.data_mut()[i * shape[0] + i] = 1.0;
                }
                t
            }
            Init::Kaiming { scale } => {
                let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
                let bound = scale * gain * (3.0 / fan_in as f64).sqrt();
                let n = shape.iter().product();
                Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect())
            }
        };
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).expect("valid id").0
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Param)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, p))| (ParamId(i), n.as_str(), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Set the trainable flag of every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn count_scalars(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    /// Overwrite values from another store; names and shapes must match.
    pub fn load_from(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, p) in self.entries.iter_mut() {
            if !name.starts_with(prefix) {
                continue;
            }
            let src = other
                .entries
                .get(name)
                .ok_or_else(|| Error::Manifest(format!("parameter {name} missing")))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::Manifest(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.value.clone();
            n += 1;
        }
        Ok(n)
    }
}
