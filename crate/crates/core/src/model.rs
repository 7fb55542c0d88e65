//! Parameter storage for the full hybrid model and its binding onto a tape.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DecoderConfig, EncoderConfig};
use crate::error::{Error, Result};
use crate::numerics::{Checkpoint, Tape, Tensor, TensorKind, Var};

pub const DEFAULT_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Subword units `K`; CTC sees `K + 1` classes and the decoder `K + 2`.
    pub num_units: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn encoder_dim(&self) -> usize {
        2 * self.encoder.cells_per_direction
    }

    pub fn ctc_classes(&self) -> usize {
        self.num_units + 1
    }

    pub fn decoder_classes(&self) -> usize {
        self.num_units + 2
    }

    /// Decoder class index of `<sos>`.
    pub fn sos_class(&self) -> usize {
        self.num_units
    }

    /// Decoder class index of `<eos>`.
    pub fn eos_class(&self) -> usize {
        self.num_units + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_units == 0 {
            return Err(Error::Config("model needs a positive input_dim and num_units".into()));
        }
        self.encoder.validate()?;
        self.decoder.validate()
    }
}

/// Trainable parameters plus running batch-norm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

pub(crate) fn lstm_names(prefix: &str) -> [String; 3] {
    [format!("{prefix}.w_x"), format!("{prefix}.w_h"), format!("{prefix}.b")]
}

impl Model {
    /// Every weight uniform in `[-init_scale, init_scale]` from a seeded
    /// generator; batch-norm scales start at 1 and shifts at 0.
    pub fn init(config: ModelConfig, seed: u64, init_scale: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        let mut add = |name: String, shape: &[usize], rng: &mut ChaCha8Rng| {
            params.insert(name, Tensor::uniform(shape, init_scale, rng));
        };
        let c = config.encoder.cells_per_direction;
        let mut d_in = config.input_dim;
        for layer in 0..config.encoder.num_layers {
            for dir in ["fwd", "bwd"] {
                let [wx, wh, b] = lstm_names(&format!("enc.{layer}.{dir}"));
                add(wx, &[d_in, 4 * c], &mut rng);
                add(wh, &[c, 4 * c], &mut rng);
                add(b, &[1, 4 * c], &mut rng);
            }
            d_in = 2 * c;
        }
        let d_h = config.encoder_dim();
        add("ctc.w".into(), &[d_h, config.ctc_classes()], &mut rng);
        add("ctc.b".into(), &[1, config.ctc_classes()], &mut rng);

        let dec = &config.decoder;
        add("att.omega".into(), &[dec.attention_dim, 1], &mut rng);
        add("att.w".into(), &[dec.cells, dec.attention_dim], &mut rng);
        add("att.v".into(), &[d_h, dec.attention_dim], &mut rng);
        add("att.m".into(), &[dec.conv_filters, dec.attention_dim], &mut rng);
        add("att.b".into(), &[1, dec.attention_dim], &mut rng);
        add("att.filters".into(), &[dec.conv_filters, dec.conv_width], &mut rng);

        add("dec.embed".into(), &[config.decoder_classes(), dec.embedding_dim], &mut rng);
        let [wx, wh, b] = lstm_names("dec.lstm");
        add(wx, &[dec.embedding_dim + d_h, 4 * dec.cells], &mut rng);
        add(wh, &[dec.cells, 4 * dec.cells], &mut rng);
        add(b, &[1, 4 * dec.cells], &mut rng);
        add("dec.out.w".into(), &[dec.cells + d_h, config.decoder_classes()], &mut rng);
        add("dec.out.b".into(), &[1, config.decoder_classes()], &mut rng);

        if config.encoder.batch_norm {
            for layer in 0..config.encoder.num_layers {
                params.insert(format!("enc.{layer}.bn.gamma"), Tensor::full(&[1, 2 * c], 1.0));
                params.insert(format!("enc.{layer}.bn.beta"), Tensor::zeros(&[1, 2 * c]));
                buffers.insert(format!("enc.{layer}.bn.running_mean"), Tensor::zeros(&[1, 2 * c]));
                buffers.insert(format!("enc.{layer}.bn.running_var"), Tensor::full(&[1, 2 * c], 1.0));
            }
        }
        Ok(Self { config, params, buffers })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub(crate) fn buffer(&self, name: &str) -> &Tensor {
        self.buffers
            .get(name)
            .unwrap_or_else(|| panic!("model has no buffer {name}"))
    }

    /// Registers every parameter on `tape` by reference.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> ModelVars {
        let vars: BTreeMap<String, Var> = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf_ref(t, requires_grad)))
            .collect();
        ModelVars::new(&self.config, vars)
    }

    /// Registers only the attention and decoder parameters.
    pub fn bind_decoder<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> DecoderVars {
        let mut vars = BTreeMap::new();
        for (name, t) in self.params.range("att.".to_string().."att/".to_string()) {
            vars.insert(name.clone(), tape.leaf_ref(t, requires_grad));
        }
        for (name, t) in self.params.range("dec.".to_string().."dec/".to_string()) {
            vars.insert(name.clone(), tape.leaf_ref(t, requires_grad));
        }
        DecoderVars::new(&vars)
    }

    pub fn to_checkpoint(&self, mut metadata: BTreeMap<String, String>) -> Checkpoint {
        metadata.insert(
            "model_config".into(),
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        metadata.insert("num_units".into(), self.config.num_units.to_string());
        let mut tensors: Vec<_> = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), TensorKind::Param, t.clone()))
            .collect();
        tensors.extend(self.buffers.iter().map(|(n, t)| (n.clone(), TensorKind::Buffer, t.clone())));
        Checkpoint { metadata, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg_json = ckpt
            .metadata
            .get("model_config")
            .ok_or_else(|| Error::Incompatible("checkpoint has no model_config metadata".into()))?;
        let config: ModelConfig =
            serde_json::from_str(cfg_json).map_err(|e| Error::Incompatible(format!("model_config: {e}")))?;
        let reference = Self::init(config.clone(), 0, 0.0)?;
        let mut model = Self {
            config,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        };
        for (name, kind, t) in &ckpt.tensors {
            let (expected, dest) = match kind {
                TensorKind::Param => (reference.params.get(name), &mut model.params),
                TensorKind::Buffer => (reference.buffers.get(name), &mut model.buffers),
            };
            match expected {
                Some(e) if e.shape() == t.shape() => {
                    dest.insert(name.clone(), t.clone());
                }
                Some(e) => {
                    return Err(Error::Incompatible(format!(
                        "{name} has shape {:?}, config implies {:?}",
                        t.shape(),
                        e.shape()
                    )))
                }
                None => return Err(Error::Incompatible(format!("unexpected tensor {name}"))),
            }
        }
        if model.params.len() != reference.params.len() || model.buffers.len() != reference.buffers.len() {
            return Err(Error::Incompatible("checkpoint is missing tensors".into()));
        }
        Ok(model)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

impl LstmVars {
    fn lookup(vars: &BTreeMap<String, Var>, prefix: &str) -> Self {
        let [wx, wh, b] = lstm_names(prefix);
        Self {
            w_x: vars[&wx],
            w_h: vars[&wh],
            b: vars[&b],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNormVars {
    pub gamma: Var,
    pub beta: Var,
}

#[derive(Clone, Debug)]
pub struct EncoderLayerVars {
    pub fwd: LstmVars,
    pub bwd: LstmVars,
    pub bn: Option<BatchNormVars>,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub omega: Var,
    pub w: Var,
    pub v: Var,
    pub m: Var,
    pub b: Var,
    pub filters: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderVars {
    pub att: AttentionVars,
    pub embed: Var,
    pub lstm: LstmVars,
    pub out_w: Var,
    pub out_b: Var,
}

impl DecoderVars {
    fn new(vars: &BTreeMap<String, Var>) -> Self {
        Self {
            att: AttentionVars {
                omega: vars["att.omega"],
                w: vars["att.w"],
                v: vars["att.v"],
                m: vars["att.m"],
                b: vars["att.b"],
                filters: vars["att.filters"],
            },
            embed: vars["dec.embed"],
            lstm: LstmVars::lookup(vars, "dec.lstm"),
            out_w: vars["dec.out.w"],
            out_b: vars["dec.out.b"],
        }
    }
}

/// Tape handles for every model parameter.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub layers: Vec<EncoderLayerVars>,
    pub ctc_w: Var,
    pub ctc_b: Var,
    pub decoder: DecoderVars,
    pub by_name: BTreeMap<String, Var>,
}

impl ModelVars {
    fn new(config: &ModelConfig, vars: BTreeMap<String, Var>) -> Self {
        let layers = (0..config.encoder.num_layers)
            .map(|l| EncoderLayerVars {
                fwd: LstmVars::lookup(&vars, &format!("enc.{l}.fwd")),
                bwd: LstmVars::lookup(&vars, &format!("enc.{l}.bwd")),
                bn: config.encoder.batch_norm.then(|| BatchNormVars {
                    gamma: vars[&format!("enc.{l}.bn.gamma")],
                    beta: vars[&format!("enc.{l}.bn.beta")],
                }),
            })
            .collect();
        Self {
            layers,
            ctc_w: vars["ctc.w"],
            ctc_b: vars["ctc.b"],
            decoder: DecoderVars::new(&vars),
            by_name: vars,
        }
    }
}
