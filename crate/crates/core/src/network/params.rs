use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CONTEXT_HIDDEN, EMBED_DIM, FEATURE_DIM, INPUT_DIM, NUM_CLASSES};

/// Point-wise affine map `y = W x + b`, weight stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn uniform(inputs: usize, outputs: usize, limit: f64, rng: &mut impl Rng) -> Self {
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || rng.gen_range(-limit..limit));
        Dense {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Dense::zeros(self.inputs(), self.outputs())
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// The two shared per-context-point layers of the context pooling branch.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextLayers {
    pub layer1: Dense,
    pub layer2: Dense,
}

/// All trainable weights. The same layout doubles as a gradient buffer and
/// as ADAM moment storage.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    /// Present exactly when the network uses multi-view context pooling.
    pub context: Option<ContextLayers>,
    pub trunk: Dense,
    pub embed: Dense,
    pub classify: Dense,
}

pub type Gradients = NetworkParams;

impl NetworkParams {
    /// Random initialisation: He-uniform for ReLU layers, Glorot-uniform for
    /// the linear heads, zero biases.
    pub fn init(use_mcp: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let context = use_mcp.then(|| ContextLayers {
            layer1: Dense::uniform(INPUT_DIM, CONTEXT_HIDDEN, he(INPUT_DIM), &mut rng),
            layer2: Dense::uniform(CONTEXT_HIDDEN, FEATURE_DIM, he(CONTEXT_HIDDEN), &mut rng),
        });
        let trunk_in = trunk_input_dim(use_mcp);
        NetworkParams {
            context,
            trunk: Dense::uniform(trunk_in, FEATURE_DIM, he(trunk_in), &mut rng),
            embed: Dense::uniform(
                FEATURE_DIM,
                EMBED_DIM,
                glorot(FEATURE_DIM, EMBED_DIM),
                &mut rng,
            ),
            classify: Dense::uniform(
                EMBED_DIM + FEATURE_DIM,
                NUM_CLASSES,
                glorot(EMBED_DIM + FEATURE_DIM, NUM_CLASSES),
                &mut rng,
            ),
        }
    }

    /// All-zero parameters of the standard shapes.
    pub fn zeros(use_mcp: bool) -> Self {
        NetworkParams {
            context: use_mcp.then(|| ContextLayers {
                layer1: Dense::zeros(INPUT_DIM, CONTEXT_HIDDEN),
                layer2: Dense::zeros(CONTEXT_HIDDEN, FEATURE_DIM),
            }),
            trunk: Dense::zeros(trunk_input_dim(use_mcp), FEATURE_DIM),
            embed: Dense::zeros(FEATURE_DIM, EMBED_DIM),
            classify: Dense::zeros(EMBED_DIM + FEATURE_DIM, NUM_CLASSES),
        }
    }

    pub fn use_mcp(&self) -> bool {
        self.context.is_some()
    }

    pub fn zeros_like(&self) -> Self {
        NetworkParams {
            context: self.context.as_ref().map(|c| ContextLayers {
                layer1: c.layer1.zeros_like(),
                layer2: c.layer2.zeros_like(),
            }),
            trunk: self.trunk.zeros_like(),
            embed: self.embed.zeros_like(),
            classify: self.classify.zeros_like(),
        }
    }

    /// Layers with stable names, in checkpoint order.
    pub fn layers(&self) -> Vec<(&'static str, &Dense)> {
        let mut out = Vec::with_capacity(5);
        if let Some(c) = &self.context {
            out.push(("context1", &c.layer1));
            out.push(("context2", &c.layer2));
        }
        out.push(("trunk", &self.trunk));
        out.push(("embed", &self.embed));
        out.push(("classify", &self.classify));
        out
    }

    pub fn layers_mut(&mut self) -> Vec<(&'static str, &mut Dense)> {
        let mut out = Vec::with_capacity(5);
        if let Some(c) = &mut self.context {
            out.push(("context1", &mut c.layer1));
            out.push(("context2", &mut c.layer2));
        }
        out.push(("trunk", &mut self.trunk));
        out.push(("embed", &mut self.embed));
        out.push(("classify", &mut self.classify));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.layers()
            .iter()
            .map(|(_, d)| d.weight.len() + d.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|(_, d)| d.is_finite())
    }

    /// Checks that every layer has the standard shape for this variant.
    pub fn has_standard_shapes(&self) -> bool {
        let mut shapes = Vec::with_capacity(5);
        if self.use_mcp() {
            shapes.push((INPUT_DIM, CONTEXT_HIDDEN));
            shapes.push((CONTEXT_HIDDEN, FEATURE_DIM));
        }
        shapes.push((trunk_input_dim(self.use_mcp()), FEATURE_DIM));
        shapes.push((FEATURE_DIM, EMBED_DIM));
        shapes.push((EMBED_DIM + FEATURE_DIM, NUM_CLASSES));
        let layers = self.layers();
        layers.len() == shapes.len()
            && layers
                .iter()
                .zip(shapes)
                .all(|((_, d), (i, o))| d.inputs() == i && d.outputs() == o && d.bias.len() == o)
    }
}

pub fn trunk_input_dim(use_mcp: bool) -> usize {
    if use_mcp {
        INPUT_DIM + FEATURE_DIM
    } else {
        INPUT_DIM
    }
}
