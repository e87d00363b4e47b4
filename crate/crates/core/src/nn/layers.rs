use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Init, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    /// Registers `{name}.w` (and `{name}.b` when `bias`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        bias: bool,
        init: Init,
    ) -> Self {
        let weight = store.add_init(&format!("{name}.w"), &[cout, cin, k, k], init, rng);
        let bias = bias.then(|| store.add_init(&format!("{name}.b"), &[cout], Init::Zero, rng));
        Conv2d { weight, bias }
    }

    pub fn forward(&self, g: &Graph, x: &Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, &w, b.as_ref())
    }
}

/// `x + conv(lrelu(conv(x)))` with 3×3 kernels.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c: usize) -> Self {
        ResBlock {
            conv1: Conv2d::new(
                store,
                rng,
                &format!("{name}.conv1"),
                c,
                c,
                3,
                true,
                Init::Kaiming { scale: 1.0 },
            ),
            conv2: Conv2d::new(
                store,
                rng,
                &format!("{name}.conv2"),
                c,
                c,
                3,
                true,
                Init::Kaiming { scale: 0.1 },
            ),
        }
    }

    pub fn forward(&self, g: &Graph, x: &Var) -> Var {
        let h = g.leaky_relu(&self.conv1.forward(g, x));
        g.add(x, &self.conv2.forward(g, &h))
    }
}

pub fn run_blocks(blocks: &[ResBlock], g: &Graph, x: Var) -> Var {
    blocks.iter().fold(x, |h, b| b.forward(g, &h))
}
