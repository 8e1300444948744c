//! The six parameter sets of the model: shared encoder, classifier head,
//! one generator per domain and one semantic discriminator per domain.
//!
//! All of them are dense multilayer networks. Generators and discriminators
//! come in pairs with identical architecture but separate storage.

mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Array, Graph, Var};
use crate::error::{Error, Result};

pub use io::{
    decode_entries, encode_entries, load_entries, load_model, load_parameter_set, save_entries,
    save_model, save_parameter_set, FORMAT_VERSION, MAGIC,
};

/// Leaky-rectifier slope used by generator and discriminator hidden layers.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Linear,
    Tanh,
    LeakyRelu(f64),
    Softmax,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Tanh => g.tanh(x),
            Activation::LeakyRelu(slope) => g.leaky_relu(x, slope),
            Activation::Softmax => g.softmax_rows(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl NetConfig {
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden_dims.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::Config(format!(
                "network dimensions must be >= 1: {:?}",
                self.dims()
            )));
        }
        Ok(())
    }
}

/// One dense layer: `y = x · weight + bias`, weight is `[in × out]`, bias `[1 × out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub weight: Array,
    pub bias: Array,
}

/// Ordered trainable arrays of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub name: String,
    pub layers: Vec<Layer>,
}

impl ParameterSet {
    /// Glorot-uniform weights, zero biases; deterministic in `seed`.
    pub fn init(name: &str, cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = cfg.dims();
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-s..s))
                    .collect();
                Layer {
                    name: format!("l{i}"),
                    weight: Array::matrix(fan_in, fan_out, data).expect("weight shape"),
                    bias: Array::zeros(&[1, fan_out]),
                }
            })
            .collect();
        Ok(Self {
            name: name.to_string(),
            layers,
        })
    }

    /// Layer widths implied by the stored weights.
    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.weight.rows()).collect();
        if let Some(last) = self.layers.last() {
            d.push(last.weight.cols());
        }
        d
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Flattened `[w0, b0, w1, b1, ...]`.
    pub fn arrays(&self) -> Vec<Array> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    /// Inverse of [`ParameterSet::arrays`] against this set's layout.
    pub fn with_arrays(&self, arrays: &[Array]) -> Result<Self> {
        if arrays.len() != 2 * self.layers.len() {
            return Err(Error::shape(
                "with_arrays",
                &[2 * self.layers.len()],
                &[arrays.len()],
            ));
        }
        let mut out = self.clone();
        for (layer, pair) in out.layers.iter_mut().zip(arrays.chunks(2)) {
            if layer.weight.shape() != pair[0].shape() || layer.bias.shape() != pair[1].shape() {
                return Err(Error::shape(
                    "with_arrays",
                    layer.weight.shape(),
                    pair[0].shape(),
                ));
            }
            layer.weight = pair[0].clone();
            layer.bias = pair[1].clone();
        }
        Ok(out)
    }

    /// Registers every weight and bias on `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let leaf = |g: &mut Graph, a: &Array| {
            if trainable {
                g.param(a.clone())
            } else {
                g.constant(a.clone())
            }
        };
        BoundParams {
            layers: self
                .layers
                .iter()
                .map(|l| (leaf(g, &l.weight), leaf(g, &l.bias)))
                .collect(),
        }
    }

    /// Plain gradient descent: `w ← w − lr · ∂L/∂w` for every bound array.
    pub fn sgd_step(&mut self, bound: &BoundParams, grads: &crate::diffcore::Gradients, lr: f64) {
        for (layer, &(w, b)) in self.layers.iter_mut().zip(&bound.layers) {
            for (param, var) in [(&mut layer.weight, w), (&mut layer.bias, b)] {
                if let Some(gr) = grads.get_ref(var) {
                    for (p, d) in param.data_mut().iter_mut().zip(gr.data()) {
                        *p -= lr * d;
                    }
                }
            }
        }
    }
}

/// Graph handles for a [`ParameterSet`], one `(weight, bias)` pair per layer.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub layers: Vec<(Var, Var)>,
}

impl BoundParams {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Which of the six networks a parameter set belongs to. Fixes activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Encoder,
    Classifier,
    SourceGenerator,
    TargetGenerator,
    SourceDiscriminator,
    TargetDiscriminator,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Encoder,
        Role::Classifier,
        Role::SourceGenerator,
        Role::TargetGenerator,
        Role::SourceDiscriminator,
        Role::TargetDiscriminator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Encoder => "encoder",
            Role::Classifier => "classifier",
            Role::SourceGenerator => "gen_source",
            Role::TargetGenerator => "gen_target",
            Role::SourceDiscriminator => "disc_source",
            Role::TargetDiscriminator => "disc_target",
        }
    }

    pub fn from_name(name: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.name() == name)
    }

    pub fn activations(self) -> (Activation, Activation) {
        match self {
            Role::Encoder => (Activation::Tanh, Activation::Tanh),
            Role::Classifier => (Activation::Linear, Activation::Softmax),
            Role::SourceGenerator | Role::TargetGenerator => {
                (Activation::LeakyRelu(LEAKY_SLOPE), Activation::Linear)
            }
            Role::SourceDiscriminator | Role::TargetDiscriminator => {
                (Activation::LeakyRelu(LEAKY_SLOPE), Activation::Softmax)
            }
        }
    }

    pub fn config(self, dims: &[usize]) -> Result<NetConfig> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "{} needs at least two widths",
                self.name()
            )));
        }
        let (hidden_activation, output_activation) = self.activations();
        let cfg = NetConfig {
            input_dim: dims[0],
            hidden_dims: dims[1..dims.len() - 1].to_vec(),
            output_dim: dims[dims.len() - 1],
            hidden_activation,
            output_activation,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A parameter set together with the configuration that interprets it.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub role: Role,
    pub config: NetConfig,
    pub params: ParameterSet,
}

impl Network {
    pub fn init(role: Role, config: NetConfig, seed: u64) -> Result<Self> {
        let params = ParameterSet::init(role.name(), &config, seed)?;
        Ok(Self {
            role,
            config,
            params,
        })
    }

    /// Rebuilds a network from stored parameters; widths come from the weights.
    pub fn from_params(role: Role, params: ParameterSet) -> Result<Self> {
        let config = role.config(&params.dims())?;
        Ok(Self {
            role,
            config,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        self.params.bind(g, trainable)
    }

    /// Forward pass of an `[n × input_dim]` node.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, x: Var) -> Result<Var> {
        let width = g.value(x).cols();
        if g.value(x).shape().len() != 2 || width != self.config.input_dim {
            return Err(Error::shape(
                self.role.name(),
                g.value(x).shape(),
                &[self.config.input_dim],
            ));
        }
        let last = bound.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in bound.layers.iter().enumerate() {
            let z = g.matmul(h, w)?;
            let z = g.add_bias(z, b)?;
            let act = if i == last {
                self.config.output_activation
            } else {
                self.config.hidden_activation
            };
            h = act.apply(g, z);
        }
        Ok(h)
    }

    /// Forward pass on plain arrays, no gradient bookkeeping.
    pub fn predict(&self, x: &Array) -> Result<Array> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &bound, xv)?;
        Ok(g.value(out).clone())
    }
}

/// Layer widths of all six networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hash_bits: usize,
    pub num_classes: usize,
    pub encoder_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
}

impl ModelDims {
    pub fn new(input_dim: usize, hash_bits: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hash_bits,
            num_classes,
            encoder_hidden: vec![128, 64],
            generator_hidden: vec![64, 128],
            discriminator_hidden: vec![128, 64],
        }
    }

    pub fn config(&self, role: Role) -> Result<NetConfig> {
        let mut dims = Vec::new();
        match role {
            Role::Encoder => {
                dims.push(self.input_dim);
                dims.extend(&self.encoder_hidden);
                dims.push(self.hash_bits);
            }
            Role::Classifier => dims.extend([self.hash_bits, self.num_classes]),
            Role::SourceGenerator | Role::TargetGenerator => {
                dims.push(self.hash_bits);
                dims.extend(&self.generator_hidden);
                dims.push(self.input_dim);
            }
            Role::SourceDiscriminator | Role::TargetDiscriminator => {
                dims.push(self.input_dim);
                dims.extend(&self.discriminator_hidden);
                dims.push(self.num_classes + 1);
            }
        }
        role.config(&dims)
    }
}

/// Seed for one network derived from a run seed; distinct per role and stage.
pub fn role_seed(seed: u64, role: Role, stage: u64) -> u64 {
    let r = Role::ALL.iter().position(|&x| x == role).unwrap_or(0) as u64;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stage.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(r + 1)
}

/// All six networks of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Network,
    pub classifier: Network,
    pub gen_source: Network,
    pub gen_target: Network,
    pub disc_source: Network,
    pub disc_target: Network,
}

impl Model {
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        if dims.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        let net = |role| Network::init(role, dims.config(role)?, role_seed(seed, role, 0));
        Ok(Self {
            encoder: net(Role::Encoder)?,
            classifier: net(Role::Classifier)?,
            gen_source: net(Role::SourceGenerator)?,
            gen_target: net(Role::TargetGenerator)?,
            disc_source: net(Role::SourceDiscriminator)?,
            disc_target: net(Role::TargetDiscriminator)?,
        })
    }

    pub fn network(&self, role: Role) -> &Network {
        match role {
            Role::Encoder => &self.encoder,
            Role::Classifier => &self.classifier,
            Role::SourceGenerator => &self.gen_source,
            Role::TargetGenerator => &self.gen_target,
            Role::SourceDiscriminator => &self.disc_source,
            Role::TargetDiscriminator => &self.disc_target,
        }
    }

    pub fn network_mut(&mut self, role: Role) -> &mut Network {
        match role {
            Role::Encoder => &mut self.encoder,
            Role::Classifier => &mut self.classifier,
            Role::SourceGenerator => &mut self.gen_source,
            Role::TargetGenerator => &mut self.gen_target,
            Role::SourceDiscriminator => &mut self.disc_source,
            Role::TargetDiscriminator => &mut self.disc_target,
        }
    }

    pub fn dims(&self) -> ModelDims {
        let hidden = |n: &Network| n.config.hidden_dims.clone();
        ModelDims {
            input_dim: self.encoder.input_dim(),
            hash_bits: self.encoder.output_dim(),
            num_classes: self.classifier.output_dim(),
            encoder_hidden: hidden(&self.encoder),
            generator_hidden: hidden(&self.gen_source),
            discriminator_hidden: hidden(&self.disc_source),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn hash_bits(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Fresh generators and discriminators for a new training stage; the
    /// encoder and classifier are kept.
    pub fn reinit_adversarial(&mut self, seed: u64, stage: u64) -> Result<()> {
        let dims = self.dims();
        for role in [
            Role::SourceGenerator,
            Role::TargetGenerator,
            Role::SourceDiscriminator,
            Role::TargetDiscriminator,
        ] {
            *self.network_mut(role) =
                Network::init(role, dims.config(role)?, role_seed(seed, role, stage))?;
        }
        Ok(())
    }

    /// Checks that the six networks fit together.
    pub fn validate(&self) -> Result<()> {
        let d = self.hash_bits();
        let f = self.encoder.input_dim();
        let n = self.num_classes();
        let checks = [
            ("classifier input", self.classifier.input_dim(), d),
            ("gen_source input", self.gen_source.input_dim(), d),
            ("gen_target input", self.gen_target.input_dim(), d),
            ("gen_source output", self.gen_source.output_dim(), f),
            ("gen_target output", self.gen_target.output_dim(), f),
            ("disc_source input", self.disc_source.input_dim(), f),
            ("disc_target input", self.disc_target.input_dim(), f),
            ("disc_source output", self.disc_source.output_dim(), n + 1),
            ("disc_target output", self.disc_target.output_dim(), n + 1),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::Format(format!(
                    "{what}: width {got}, expected {want}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        Role::ALL
            .iter()
            .all(|&r| self.network(r).params.is_finite())
    }

    /// Common-space embedding `u = E(x)`, entries in (-1, 1).
    pub fn encode(&self, x: &Array) -> Result<Array> {
        self.encoder.predict(x)
    }

    /// Class probabilities `C(u)`.
    pub fn classify(&self, u: &Array) -> Result<Array> {
        self.classifier.predict(u)
    }

    /// `C(E(x))`.
    pub fn predict_proba(&self, x: &Array) -> Result<Array> {
        self.classify(&self.encode(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims() -> ModelDims {
        ModelDims {
            input_dim: 5,
            hash_bits: 6,
            num_classes: 3,
            encoder_hidden: vec![7],
            generator_hidden: vec![4],
            discriminator_hidden: vec![4],
        }
    }

    #[test]
    fn init_is_seed_deterministic_with_zero_bias() {
        let cfg = small_dims().config(Role::Encoder).unwrap();
        let a = ParameterSet::init("e", &cfg, 7).unwrap();
        let b = ParameterSet::init("e", &cfg, 7).unwrap();
        let c = ParameterSet::init("e", &cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in &a.layers {
            assert!(l.bias.data().iter().all(|&v| v == 0.0));
            let s = (6.0 / (l.weight.rows() + l.weight.cols()) as f64).sqrt();
            assert!(l.weight.data().iter().all(|v| v.abs() < s));
        }
    }

    #[test]
    fn encoder_shapes_and_zero_final_layer() {
        let mut m = Model::init(&small_dims(), 1).unwrap();
        let x = Array::matrix(4, 5, (0..20).map(|v| f64::from(v) * 0.1).collect()).unwrap();
        let u = m.encode(&x).unwrap();
        assert_eq!(u.shape(), &[4, 6]);
        assert!(u.data().iter().all(|v| v.abs() < 1.0));

        let last = m.encoder.params.layers.last_mut().unwrap();
        last.weight = Array::zeros(last.weight.shape());
        let u = m.encode(&x).unwrap();
        assert!(u.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_encode_identically() {
        let m = Model::init(&small_dims(), 2).unwrap();
        let x = Array::matrix(
            2,
            5,
            vec![0.3, -1.0, 2.0, 0.0, 0.5, 0.3, -1.0, 2.0, 0.0, 0.5],
        )
        .unwrap();
        let u = m.encode(&x).unwrap();
        assert_eq!(u.row(0), u.row(1));
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let m = Model::init(&small_dims(), 3).unwrap();
        assert!(matches!(
            m.encode(&Array::zeros(&[2, 4])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_weight_heads_are_uniform() {
        let mut m = Model::init(&small_dims(), 4).unwrap();
        for role in [Role::Classifier, Role::SourceDiscriminator] {
            for l in &mut m.network_mut(role).params.layers {
                l.weight = Array::zeros(l.weight.shape());
            }
        }
        let p = m.classify(&Array::filled(&[2, 6], 0.4)).unwrap();
        assert!(p.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        let d = m
            .disc_source
            .predict(&Array::filled(&[2, 5], -0.7))
            .unwrap();
        assert_eq!(d.cols(), 4);
        assert!(d.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn discriminator_has_n_plus_one_outputs() {
        let dims = ModelDims::new(784, 64, 10);
        assert_eq!(
            dims.config(Role::TargetDiscriminator).unwrap().output_dim,
            11
        );
    }

    #[test]
    fn classifier_argmax_is_shift_invariant() {
        let m = Model::init(&small_dims(), 5).unwrap();
        let u =
            Array::matrix(3, 6, (0..18).map(|v| (f64::from(v) * 0.37).sin()).collect()).unwrap();
        let p = m.classify(&u).unwrap();
        let mut shifted = m.clone();
        let b = &mut shifted.classifier.params.layers[0].bias;
        *b = b.map(|v| v + 5.0);
        let q = shifted.classify(&u).unwrap();
        assert_eq!(p.argmax_rows(), q.argmax_rows());
        for i in 0..3 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_serves_both_embedding_sources() {
        let m = Model::init(&small_dims(), 6).unwrap();
        let mut g = Graph::new();
        let bound = m.gen_source.bind(&mut g, true);
        let us = g.constant(Array::filled(&[2, 6], 0.1));
        let ut = g.constant(Array::filled(&[3, 6], -0.2));
        let xs = m.gen_source.forward(&mut g, &bound, us).unwrap();
        let xts = m.gen_source.forward(&mut g, &bound, ut).unwrap();
        assert_eq!(g.value(xs).shape(), &[2, 5]);
        assert_eq!(g.value(xts).shape(), &[3, 5]);
        let a = g.sum(xs);
        let b = g.sum(xts);
        let f = g.add(a, b).unwrap();
        let grads = g.backward(f).unwrap();
        // one set of leaves collects both paths
        assert!(grads.get_ref(bound.layers[0].0).is_some());
    }

    #[test]
    fn generators_and_discriminators_do_not_share_storage() {
        let mut m = Model::init(&small_dims(), 7).unwrap();
        assert_ne!(m.gen_source.params.layers, m.gen_target.params.layers);
        assert_ne!(m.disc_source.params.layers, m.disc_target.params.layers);
        let before = m.gen_target.clone();
        m.gen_source.params.layers[0].weight.data_mut()[0] += 1.0;
        assert_eq!(m.gen_target, before);
    }

    #[test]
    fn reinit_keeps_encoder_and_classifier() {
        let mut m = Model::init(&small_dims(), 8).unwrap();
        let before = m.clone();
        m.reinit_adversarial(8, 1).unwrap();
        assert_eq!(m.encoder, before.encoder);
        assert_eq!(m.classifier, before.classifier);
        assert_ne!(m.gen_source, before.gen_source);
        assert_ne!(m.disc_target, before.disc_target);
    }
}
